/*
 * Copyright 2026 The mtpl Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "backend.hpp"
#include "common.hpp"
#include "followup.hpp"

namespace mtpl {

enum class ThresholdMode { mean, fixed };
enum class NormalizeScope { run, group };

/// Parameters of the hybrid similarity variation (HSV) check.
struct HsvConfig {
    double w1 = 0.7;  ///< weight of the rank variation; the score variation gets 1 - w1
    std::size_t k = 50;
    double epsilon = 0.0;  ///< added to every variation before exponentiation
    ThresholdMode threshold_mode = ThresholdMode::mean;
    double fixed_threshold = 0.0;
    NormalizeScope normalize_scope = NormalizeScope::run;

    double w2() const noexcept { return 1.0 - w1; }

    void validate() const {
        if (!(w1 >= 0.0 && w1 <= 1.0)) throw PreconditionError("w1 must lie in [0, 1]");
        if (k < 1) throw PreconditionError("k must be at least 1");
        if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw PreconditionError("epsilon must be finite and >= 0");
        if (threshold_mode == ThresholdMode::fixed && !std::isfinite(fixed_threshold))
            throw PreconditionError("fixed threshold must be finite");
    }
};

/// Rank variation of one snippet between two lists.
inline std::size_t asv(std::size_t rank_source, std::size_t rank_follow) {
    return rank_source > rank_follow ? rank_source - rank_follow : rank_follow - rank_source;
}

/// Similarity-score variation of one snippet between two lists.
inline double rsv(double sim_source, double sim_follow) { return std::abs(sim_source - sim_follow); }

/// ((asv_fs+e)^w1 (rsv_fs+e)^w2) * ((asv_fm+e)^w1 (rsv_fm+e)^w2).
inline double hsv_snippet(double asv_fs, double rsv_fs, double asv_fm, double rsv_fm, const HsvConfig& cfg) {
    const double e = cfg.epsilon;
    const double fs = std::pow(asv_fs + e, cfg.w1) * std::pow(rsv_fs + e, cfg.w2());
    const double fm = std::pow(asv_fm + e, cfg.w1) * std::pow(rsv_fm + e, cfg.w2());
    return fs * fm;
}

/// Min-max scaling to [0, 1]; a constant list maps to all zeros.
inline std::vector<double> normalize_hsv(std::span<const double> raw) {
    if (raw.empty()) throw PreconditionError("cannot normalize an empty HSV list");
    const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
    const double min = *lo;
    const double range = *hi - *lo;
    std::vector<double> out(raw.size(), 0.0);
    if (range > 0.0)
        for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - min) / range;
    return out;
}

struct SnippetVariation {
    std::string snippet_id;
    std::size_t asv_fs = 0;
    std::size_t asv_fm = 0;
    double rsv_fs = 0.0;
    double rsv_fm = 0.0;
    double hsv_raw = 0.0;
    double hsv_norm = 0.0;
};

struct DetectionVerdict {
    std::string query_id;
    Token word;
    double hsv_final = 0.0;
    double threshold = 0.0;
    bool poisoned = false;
};

/// Min and max of the raw HSVs a query was normalized against.
struct NormalizationScale {
    double min = 0.0;
    double max = 0.0;

    double apply(double raw) const { return max > min ? (raw - min) / (max - min) : 0.0; }
};

struct DetectionResult {
    std::vector<DetectionVerdict> verdicts;
    double threshold = 0.0;
    std::vector<std::vector<SnippetVariation>> variations;  ///< per query, source-list order
    std::vector<NormalizationScale> scales;                 ///< per query
};

namespace detail {

inline std::map<std::string_view, const RankEntry*> by_id(const RankList& list) {
    std::map<std::string_view, const RankEntry*> out;
    for (const auto& e : list.entries) out.emplace(e.snippet_id, &e);
    return out;
}

}  // namespace detail

/// Raw per-snippet variations of one query, in source-list order.
inline std::vector<SnippetVariation> snippet_variations(const RankList& source, const RankList& syn, const RankList& mask,
                                                        const HsvConfig& cfg) {
    if (syn.k() != source.k() || mask.k() != source.k())
        throw ValidationError("follow-up lists of '" + source.query_id + "' differ in length from the source list");
    const auto syn_ix = detail::by_id(syn);
    const auto mask_ix = detail::by_id(mask);
    if (syn_ix.size() != syn.k() || mask_ix.size() != mask.k())
        throw ValidationError("duplicate snippet in a follow-up list of '" + source.query_id + "'");
    std::vector<SnippetVariation> out;
    out.reserve(source.k());
    for (const auto& e : source.entries) {
        auto fs = syn_ix.find(e.snippet_id);
        auto fm = mask_ix.find(e.snippet_id);
        if (fs == syn_ix.end() || fm == mask_ix.end())
            throw ValidationError("snippet '" + e.snippet_id + "' of '" + source.query_id + "' is missing from a follow-up list");
        SnippetVariation v;
        v.snippet_id = e.snippet_id;
        v.asv_fs = asv(e.rank, fs->second->rank);
        v.asv_fm = asv(e.rank, fm->second->rank);
        v.rsv_fs = rsv(e.sim, fs->second->sim);
        v.rsv_fm = rsv(e.sim, fm->second->sim);
        v.hsv_raw = hsv_snippet(static_cast<double>(v.asv_fs), v.rsv_fs, static_cast<double>(v.asv_fm), v.rsv_fm, cfg);
        out.push_back(std::move(v));
    }
    return out;
}

/// Flags queries whose follow-up rank lists diverge from the source list.
///
/// Per-snippet HSVs are min-max normalized over the whole run (or over each
/// suspicious-word group), averaged per query into hsv_final, and compared
/// against the threshold: the mean hsv_final in MEAN mode, or a fixed value.
/// hsv_final >= threshold means poisoned. Means are taken over sorted values
/// so the outcome does not depend on query or snippet order.
inline DetectionResult detect(std::span<const FollowUpSet> followups, std::span<const RankList> source_lists,
                              std::span<const RankList> syn_lists, std::span<const RankList> mask_lists,
                              const HsvConfig& cfg) {
    cfg.validate();
    const std::size_t n = followups.size();
    if (source_lists.size() != n || syn_lists.size() != n || mask_lists.size() != n)
        throw ValidationError("detect needs one source and two follow-up lists per query");
    if (cfg.threshold_mode == ThresholdMode::mean && n < 2)
        throw PreconditionError("mean threshold needs at least two queries");
    if (n == 0) throw PreconditionError("detect needs at least one query");

    DetectionResult result;
    result.variations.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (source_lists[i].query_id != followups[i].source.id)
            throw ValidationError("source list '" + source_lists[i].query_id + "' does not belong to query '" +
                                  followups[i].source.id + "'");
        if (source_lists[i].entries.empty()) throw ValidationError("empty source list for '" + source_lists[i].query_id + "'");
        result.variations[i] = snippet_variations(source_lists[i], syn_lists[i], mask_lists[i], cfg);
    }

    // normalization pools: one per run, or one per suspicious word
    std::map<std::string, NormalizationScale> pools;
    auto pool_key = [&](std::size_t i) {
        return cfg.normalize_scope == NormalizeScope::run ? std::string{} : followups[i].suspicious_word;
    };
    for (std::size_t i = 0; i < n; ++i) {
        auto [it, fresh] = pools.try_emplace(pool_key(i));
        for (std::size_t j = 0; j < result.variations[i].size(); ++j) {
            const double h = result.variations[i][j].hsv_raw;
            if (fresh && j == 0) it->second = {h, h};
            it->second.min = std::min(it->second.min, h);
            it->second.max = std::max(it->second.max, h);
        }
    }

    std::vector<double> finals(n);
    result.scales.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto scale = pools.at(pool_key(i));
        result.scales[i] = scale;
        std::vector<double> norms;
        norms.reserve(result.variations[i].size());
        for (auto& v : result.variations[i]) {
            v.hsv_norm = scale.apply(v.hsv_raw);
            norms.push_back(v.hsv_norm);
        }
        finals[i] = stable_mean(std::move(norms));
    }
    result.threshold = cfg.threshold_mode == ThresholdMode::mean ? stable_mean(finals) : cfg.fixed_threshold;

    result.verdicts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        result.verdicts.push_back(
            {followups[i].source.id, followups[i].suspicious_word, finals[i], result.threshold, finals[i] >= result.threshold});
    }
    return result;
}

inline nlohmann::ordered_json to_json(const DetectionVerdict& v) {
    nlohmann::ordered_json j;
    j["query_id"] = v.query_id;
    j["word"] = v.word;
    j["hsv_final"] = v.hsv_final;
    j["threshold"] = v.threshold;
    j["poisoned"] = v.poisoned;
    return j;
}

}  // namespace mtpl
