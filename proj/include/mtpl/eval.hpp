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
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "attack.hpp"
#include "backend.hpp"
#include "common.hpp"
#include "corpus.hpp"
#include "detector.hpp"
#include "followup.hpp"

namespace mtpl {

// ---------------------------------------------------------------------------
// Detection dataset
// ---------------------------------------------------------------------------

struct DatasetParams {
    std::size_t queries_per_target = 100;
    std::size_t k = 50;
    std::size_t insert_rank = 25;
    std::size_t targets = kSuspiciousTargets;
    std::uint64_t seed = 0;
    unsigned jobs = 1;

    void validate() const {
        if (queries_per_target < 1) throw PreconditionError("queries_per_target must be at least 1");
        if (k < 1) throw PreconditionError("K must be at least 1");
        if (insert_rank < 1 || insert_rank > k)
            throw PreconditionError("insert_rank " + std::to_string(insert_rank) + " must lie in 1..K=" + std::to_string(k));
        if (targets < 1) throw PreconditionError("at least one suspicious target is required");
    }
};

struct DetectionSample {
    FollowUpSet followups;
    RankList source_list;
    bool poisoned = false;
    std::string poisoned_snippet;  ///< injected copy, empty for clean samples

    const Query& query() const noexcept { return followups.source; }
    const Token& word() const noexcept { return followups.suspicious_word; }
};

struct DetectionDataset {
    std::vector<DetectionSample> samples;
    std::map<std::string, bool> ground_truth;  ///< query id -> poisoned
    std::vector<Token> targets;
    Codebase store;                     ///< every snippet a list refers to
    std::vector<std::string> snippet_ids;  ///< union of list snippets, sorted
    std::set<std::string> poisoned_snippets;
    std::vector<std::string> notes;

    std::size_t poisoned_queries() const {
        return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(), [](const auto& s) { return s.poisoned; }));
    }
    double query_poison_rate() const {
        return samples.empty() ? 0.0 : static_cast<double>(poisoned_queries()) / static_cast<double>(samples.size());
    }
    double snippet_poison_rate() const {
        return snippet_ids.empty() ? 0.0
                                   : static_cast<double>(poisoned_snippets.size()) / static_cast<double>(snippet_ids.size());
    }
};

/// Builds one detection sample per (query, suspicious word). Every sampled
/// query of the attack target's group gets the trigger injected into a copy
/// of the snippet at `insert_rank`; the list is then re-ranked under the
/// poisoned backend. Lists are filled from the full ranking, skipping
/// snippets that already carry a trigger or are ledger-marked.
inline DetectionDataset build_detection_dataset(const Corpus& corpus, const SimilarityBackend& backend,
                                                const PoisonLedger* ledger, const TriggerSpec* spec,
                                                const SynonymTable& synonyms, const DatasetParams& params) {
    params.validate();
    if (spec) spec->validate();
    const auto& code = corpus.codebase();
    if (code.size() < params.k)
        throw PreconditionError("K=" + std::to_string(params.k) + " exceeds codebase size " + std::to_string(code.size()));
    const auto freq = word_frequencies(corpus);
    DetectionDataset ds;
    ds.targets = select_suspicious_targets(freq, params.targets);
    if (spec && std::find(ds.targets.begin(), ds.targets.end(), spec->target) == ds.targets.end())
        throw DataError("attack target '" + spec->target + "' is not among the " + std::to_string(ds.targets.size()) +
                        " suspicious targets");

    // sampling: per target, shuffled group order, first usable unused queries
    const auto groups = group_queries(corpus, ds.targets);
    std::set<std::string> used;
    struct Pending {
        FollowUpSet followups;
        bool poisoned;
    };
    std::vector<Pending> pending;
    for (const auto& word : ds.targets) {
        const auto& group = groups.at(word);
        if (group.size() < params.queries_per_target)
            throw DataError("group '" + word + "' has " + std::to_string(group.size()) + " queries, fewer than " +
                            std::to_string(params.queries_per_target));
        std::vector<std::size_t> order(group.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed(params.seed, "dataset-sample:" + word));
        rng.shuffle(order);
        std::size_t taken = 0;
        for (std::size_t idx : order) {
            if (taken == params.queries_per_target) break;
            const auto& q = group[idx];
            if (used.contains(q.id)) continue;
            try {
                pending.push_back({make_followups(q, word, synonyms, backend, freq), spec && word == spec->target});
            } catch (const DataError& e) {
                ds.notes.push_back("skipped query '" + q.id + "' for '" + word + "': " + e.what());
                continue;
            } catch (const PreconditionError& e) {
                ds.notes.push_back("skipped query '" + q.id + "' for '" + word + "': " + e.what());
                continue;
            }
            used.insert(q.id);
            ++taken;
        }
        if (taken < params.queries_per_target)
            throw DataError("group '" + word + "' yields only " + std::to_string(taken) + " usable queries, fewer than " +
                            std::to_string(params.queries_per_target));
    }

    // ranking and injection, one slot per sample
    std::optional<TriggerMatcher> matcher;
    if (spec) matcher.emplace(*spec);
    std::set<std::string> ledger_ids;
    if (ledger) ledger_ids = ledger->ids();
    std::vector<bool> tainted(code.size());
    for (std::size_t i = 0; i < code.size(); ++i)
        tainted[i] = ledger_ids.contains(code.snippets()[i].id) || (matcher && matcher->present(code.snippets()[i]));
    const std::size_t clean_count = static_cast<std::size_t>(std::count(tainted.begin(), tainted.end(), false));
    if (clean_count < params.k) throw DataError("fewer than K snippets are free of triggers");

    struct Slot {
        RankList list;
        std::optional<CodeSnippet> injected;
        std::vector<std::string> notes;
    };
    std::vector<Slot> slots(pending.size());
    parallel_for(pending.size(), params.jobs, [&](std::size_t i) {
        const auto& q = pending[i].followups.source;
        const auto full = rank(backend, q, code, code.size());
        Slot& slot = slots[i];
        slot.list.query_id = q.id;
        std::size_t skipped = 0;
        for (const auto& e : full.entries) {
            if (slot.list.entries.size() == params.k) break;
            if (tainted[code.find(e.snippet_id) - code.snippets().data()]) {
                ++skipped;
                continue;
            }
            slot.list.entries.push_back(e);
        }
        for (std::size_t r = 0; r < slot.list.entries.size(); ++r) slot.list.entries[r].rank = r + 1;
        if (skipped > 0)
            slot.notes.push_back("list for '" + q.id + "' skipped " + std::to_string(skipped) +
                                 " trigger-bearing snippet(s) and continued with the next candidates");
        if (!pending[i].poisoned) return;
        for (std::size_t pos = params.insert_rank; pos <= params.k; ++pos) {
            const auto& victim = code.at(slot.list.entries[pos - 1].snippet_id);
            CodeSnippet copy = victim;
            copy.id = victim.id + "@" + q.id;
            try {
                auto poisoned = apply_trigger(copy, *spec);
                if (pos != params.insert_rank)
                    slot.notes.push_back("trigger for '" + q.id + "' inserted at rank " + std::to_string(pos) +
                                         " because higher-ranked candidates could not carry it");
                slot.list.entries[pos - 1].snippet_id = poisoned.id;
                slot.injected = std::move(poisoned);
                break;
            } catch (const DataError&) {
            }
        }
        if (!slot.injected) throw DataError("no snippet in the list for '" + q.id + "' can carry the trigger");
    });

    // store: corpus snippets plus injected copies
    std::vector<CodeSnippet> stored = code.snippets();
    for (auto& s : slots) {
        if (!s.injected) continue;
        ds.poisoned_snippets.insert(s.injected->id);
        stored.push_back(*s.injected);
    }
    ds.store = Codebase(std::move(stored));

    std::set<std::string> union_ids;
    for (std::size_t i = 0; i < pending.size(); ++i) {
        auto& slot = slots[i];
        if (slot.injected) slot.list = rerank(slot.list, pending[i].followups.source, backend, ds.store);
        for (const auto& e : slot.list.entries) union_ids.insert(e.snippet_id);
        ds.notes.insert(ds.notes.end(), slot.notes.begin(), slot.notes.end());
        DetectionSample sample;
        sample.followups = std::move(pending[i].followups);
        sample.source_list = std::move(slot.list);
        sample.poisoned = pending[i].poisoned;
        if (slot.injected) sample.poisoned_snippet = slot.injected->id;
        ds.ground_truth.emplace(sample.query().id, sample.poisoned);
        ds.samples.push_back(std::move(sample));
    }
    ds.snippet_ids.assign(union_ids.begin(), union_ids.end());
    return ds;
}

/// Snippet-level view of a dataset for detectors that inspect code alone.
struct SnippetDataset {
    std::vector<CodeSnippet> snippets;
    std::map<std::string, bool> ground_truth;
    std::size_t equalized = 0;  ///< snippets poisoned only to balance the rate
};

/// The dataset's snippets with their poisoned flags. With `equalize`, extra
/// seeded snippets get the trigger so the snippet-level poison rate matches
/// the query-level one.
inline SnippetDataset snippet_dataset(const DetectionDataset& ds, const TriggerSpec& spec, bool equalize, std::uint64_t seed) {
    SnippetDataset out;
    for (const auto& id : ds.snippet_ids) {
        out.snippets.push_back(ds.store.at(id));
        out.ground_truth[id] = ds.poisoned_snippets.contains(id);
    }
    if (!equalize) return out;
    const auto want = static_cast<std::size_t>(std::llround(ds.query_poison_rate() * static_cast<double>(out.snippets.size())));
    const std::size_t have = ds.poisoned_snippets.size();
    if (want <= have) return out;
    std::vector<std::size_t> clean;
    for (std::size_t i = 0; i < out.snippets.size(); ++i)
        if (!out.ground_truth[out.snippets[i].id]) clean.push_back(i);
    Rng rng(derive_seed(seed, "equalize"));
    rng.shuffle(clean);
    for (std::size_t i : clean) {
        if (have + out.equalized == want) break;
        try {
            auto poisoned = apply_trigger(out.snippets[i], spec);
            out.snippets[i] = std::move(poisoned);
            out.ground_truth[out.snippets[i].id] = true;
            ++out.equalized;
        } catch (const DataError&) {
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct ConfusionCounts {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

    std::size_t total() const noexcept { return tp + tn + fp + fn; }
    bool operator==(const ConfusionCounts&) const = default;
};

/// Tally of predictions against truth; both must cover the same ids.
inline ConfusionCounts confusion(const std::map<std::string, bool>& predicted, const std::map<std::string, bool>& truth) {
    if (predicted.size() != truth.size()) throw ValidationError("verdicts and ground truth cover different ids");
    ConfusionCounts c;
    for (const auto& [id, p] : predicted) {
        auto it = truth.find(id);
        if (it == truth.end()) throw ValidationError("no ground truth for '" + id + "'");
        if (p && it->second) ++c.tp;
        else if (p) ++c.fp;
        else if (it->second) ++c.fn;
        else ++c.tn;
    }
    return c;
}

inline ConfusionCounts confusion(std::span<const DetectionVerdict> verdicts, const std::map<std::string, bool>& truth) {
    std::map<std::string, bool> predicted;
    for (const auto& v : verdicts)
        if (!predicted.emplace(v.query_id, v.poisoned).second) throw ValidationError("duplicate verdict for '" + v.query_id + "'");
    return confusion(predicted, truth);
}

namespace detail {

inline double ratio(double num, double den, bool* zero) {
    if (den == 0.0) {
        if (zero) *zero = true;
        return 0.0;
    }
    return num / den;
}

}  // namespace detail

/// Each metric returns 0 on a zero denominator and sets *zero_denominator.
inline double accuracy(const ConfusionCounts& c, bool* zero_denominator = nullptr) {
    return detail::ratio(static_cast<double>(c.tp + c.tn), static_cast<double>(c.total()), zero_denominator);
}

inline double precision(const ConfusionCounts& c, bool* zero_denominator = nullptr) {
    return detail::ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp), zero_denominator);
}

inline double recall(const ConfusionCounts& c, bool* zero_denominator = nullptr) {
    return detail::ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn), zero_denominator);
}

inline double f1(const ConfusionCounts& c, bool* zero_denominator = nullptr) {
    const double p = precision(c, zero_denominator);
    const double r = recall(c, zero_denominator);
    return detail::ratio(2.0 * p * r, p + r, zero_denominator);
}

struct Metrics {
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
    bool zero_denominator = false;
};

inline Metrics metrics(const ConfusionCounts& c) {
    Metrics m;
    m.accuracy = accuracy(c, &m.zero_denominator);
    m.precision = precision(c, &m.zero_denominator);
    m.recall = recall(c, &m.zero_denominator);
    m.f1 = f1(c, &m.zero_denominator);
    return m;
}

// ---------------------------------------------------------------------------
// Rank-change experiment
// ---------------------------------------------------------------------------

/// Sum of |rank difference| over the union of both top-K lists, a snippet
/// missing from one list counting at rank K+1.
inline double rank_displacement(const RankList& a, const RankList& b, std::size_t k) {
    std::map<std::string_view, std::pair<std::size_t, std::size_t>> ranks;
    for (const auto& e : a.entries) ranks[e.snippet_id] = {e.rank, k + 1};
    for (const auto& e : b.entries) {
        auto [it, fresh] = ranks.try_emplace(e.snippet_id, std::pair{k + 1, e.rank});
        if (!fresh) it->second.second = e.rank;
    }
    double total = 0.0;
    for (const auto& [_, r] : ranks) total += static_cast<double>(asv(r.first, r.second));
    return total;
}

struct RankChange {
    double poisoned_backend = 0.0;
    double clean_backend = 0.0;
};

/// Mean rank displacement between the two wordings of each pair, under each backend.
inline RankChange rank_change_experiment(const SimilarityBackend& clean, const SimilarityBackend& poisoned,
                                         std::span<const std::pair<Query, Query>> pairs, const Codebase& codebase,
                                         std::size_t k, unsigned jobs = 1) {
    if (pairs.empty()) throw PreconditionError("rank-change experiment needs at least one query pair");
    std::vector<double> dp(pairs.size()), dc(pairs.size());
    parallel_for(pairs.size(), jobs, [&](std::size_t i) {
        const auto& [a, b] = pairs[i];
        dp[i] = rank_displacement(rank(poisoned, a, codebase, k), rank(poisoned, b, codebase, k), k);
        dc[i] = rank_displacement(rank(clean, a, codebase, k), rank(clean, b, codebase, k), k);
    });
    return {stable_mean(dp), stable_mean(dc)};
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct RunReport {
    std::string method;
    std::string attack;
    std::string target;
    ConfusionCounts counts;
    Metrics metrics;
    std::optional<double> anr;
    std::uint64_t seed = 0;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
};

inline RunReport make_report(std::string method, const TriggerSpec& spec, const ConfusionCounts& c, std::optional<double> anr,
                             std::uint64_t seed, nlohmann::ordered_json config) {
    return {std::move(method), std::string(to_string(spec.kind)), spec.target, c, metrics(c), anr, seed, std::move(config)};
}

inline nlohmann::ordered_json to_json(const RunReport& r) {
    nlohmann::ordered_json j;
    j["method"] = r.method;
    j["attack"] = r.attack;
    j["target"] = r.target;
    j["tp"] = r.counts.tp;
    j["tn"] = r.counts.tn;
    j["fp"] = r.counts.fp;
    j["fn"] = r.counts.fn;
    j["accuracy"] = r.metrics.accuracy;
    j["precision"] = r.metrics.precision;
    j["recall"] = r.metrics.recall;
    j["f1"] = r.metrics.f1;
    j["zero_denominator"] = r.metrics.zero_denominator;
    j["anr"] = r.anr ? nlohmann::ordered_json(*r.anr) : nlohmann::ordered_json();
    j["seed"] = r.seed;
    j["config"] = r.config;
    return j;
}

inline constexpr std::string_view kCsvHeader = "method,attack,target,acc,prec,rec,f1,anr,seed";

inline std::string csv_row(const RunReport& r) {
    std::ostringstream out;
    out << std::setprecision(6) << std::fixed;
    out << r.method << ',' << r.attack << ',' << r.target << ',' << r.metrics.accuracy << ',' << r.metrics.precision << ','
        << r.metrics.recall << ',' << r.metrics.f1 << ',';
    if (r.anr) out << *r.anr;
    out << ',' << r.seed;
    return out.str();
}

}  // namespace mtpl
