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
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "attack.hpp"
#include "common.hpp"
#include "corpus.hpp"

namespace mtpl {

/// Sparse vector as (dimension, weight) pairs sorted by dimension.
using SparseVector = std::vector<std::pair<std::uint32_t, double>>;

inline double dot(const SparseVector& a, const SparseVector& b) {
    double sum = 0.0;
    auto i = a.begin();
    auto j = b.begin();
    while (i != a.end() && j != b.end()) {
        if (i->first < j->first) ++i;
        else if (j->first < i->first) ++j;
        else {
            sum += i->second * j->second;
            ++i;
            ++j;
        }
    }
    return sum;
}

inline double norm(const SparseVector& v) {
    double s = 0.0;
    for (const auto& [_, w] : v) s += w * w;
    return std::sqrt(s);
}

/// M(.) in the detection pipeline: scores a query against a code snippet.
/// Implementations are immutable after construction and safe to share
/// between threads.
class SimilarityBackend {
  public:
    virtual ~SimilarityBackend() = default;

    /// Similarity in [0, 1], deterministic for fixed inputs.
    virtual double score(std::span<const Token> query, const CodeSnippet& snippet) const = 0;

    /// Sentence-level similarity between two queries, in [0, 1].
    virtual double text_similarity(std::span<const Token> a, std::span<const Token> b) const = 0;

    /// Scores one query against many snippets. Overridden where per-query
    /// work can be shared.
    virtual std::vector<double> score_many(std::span<const Token> query, std::span<const CodeSnippet* const> snippets) const {
        std::vector<double> out;
        out.reserve(snippets.size());
        for (const auto* s : snippets) out.push_back(score(query, *s));
        return out;
    }
};

/// TF-IDF over code tokens: idf(t) = ln((1+N)/(1+df(t))) + 1, L2-normalized
/// snippet vectors.
class TfidfIndex {
  public:
    explicit TfidfIndex(std::span<const CodeSnippet> codebase) {
        if (codebase.empty()) throw PreconditionError("cannot build a TF-IDF index over an empty codebase");
        std::map<Token, std::size_t> df;
        for (const auto& s : codebase) {
            std::vector<Token> uniq = s.tokens;
            std::sort(uniq.begin(), uniq.end());
            uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
            for (auto& t : uniq) ++df[t];
        }
        const double n = static_cast<double>(codebase.size());
        idf_.reserve(df.size());
        for (const auto& [t, d] : df) {
            vocabulary_.emplace(t, static_cast<std::uint32_t>(idf_.size()));
            idf_.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(d))) + 1.0);
        }
        for (const auto& s : codebase) {
            cache_.insert_or_assign(s.id, Cached{s.source, s.lang, vectorize(s.tokens)});
        }
    }

    explicit TfidfIndex(const Codebase& codebase) : TfidfIndex(std::span<const CodeSnippet>(codebase.snippets())) {}

    std::size_t dimension() const noexcept { return idf_.size(); }
    const std::vector<double>& idf() const noexcept { return idf_; }

    std::optional<std::uint32_t> dimension_of(const Token& t) const {
        auto it = vocabulary_.find(t);
        if (it == vocabulary_.end()) return std::nullopt;
        return it->second;
    }

    /// Normalized tf-idf vector; tokens outside the vocabulary carry no weight.
    SparseVector vectorize(std::span<const Token> tokens) const {
        std::map<std::uint32_t, double> tf;
        for (const auto& t : tokens) {
            auto it = vocabulary_.find(t);
            if (it != vocabulary_.end()) tf[it->second] += 1.0;
        }
        SparseVector v;
        v.reserve(tf.size());
        for (const auto& [dim, count] : tf) v.emplace_back(dim, count * idf_[dim]);
        const double n = norm(v);
        if (n > 0.0)
            for (auto& [_, w] : v) w /= n;
        return v;
    }

    /// Cached vector when the snippet is the one indexed under its id,
    /// otherwise a fresh vectorization of its tokens.
    SparseVector snippet_vector(const CodeSnippet& s) const {
        if (const auto* v = cached_vector(s)) return *v;
        return vectorize(s.tokens);
    }

    const SparseVector* cached_vector(const CodeSnippet& s) const {
        auto it = cache_.find(s.id);
        if (it != cache_.end() && it->second.source == s.source && it->second.lang == s.lang) return &it->second.vector;
        return nullptr;
    }

  private:
    struct Cached {
        std::string source;
        std::string lang;
        SparseVector vector;
    };

    std::unordered_map<Token, std::uint32_t> vocabulary_;
    std::vector<double> idf_;
    std::unordered_map<std::string, Cached> cache_;
};

/// Clean lexical backend: cosine of tf-idf vectors.
class TfidfBackend : public SimilarityBackend {
  public:
    explicit TfidfBackend(std::shared_ptr<const TfidfIndex> index) : index_(std::move(index)) {}

    const TfidfIndex& index() const noexcept { return *index_; }

    double score(std::span<const Token> query, const CodeSnippet& snippet) const override {
        return cosine(index_->vectorize(query), snippet);
    }

    double text_similarity(std::span<const Token> a, std::span<const Token> b) const override {
        return std::clamp(dot(index_->vectorize(a), index_->vectorize(b)), 0.0, 1.0);
    }

    std::vector<double> score_many(std::span<const Token> query, std::span<const CodeSnippet* const> snippets) const override {
        const auto q = index_->vectorize(query);
        std::vector<double> out;
        out.reserve(snippets.size());
        for (const auto* s : snippets) out.push_back(cosine(q, *s));
        return out;
    }

  private:
    double cosine(const SparseVector& q, const CodeSnippet& s) const {
        if (const auto* v = index_->cached_vector(s)) return std::clamp(dot(q, *v), 0.0, 1.0);
        return std::clamp(dot(q, index_->vectorize(s.tokens)), 0.0, 1.0);
    }

    std::shared_ptr<const TfidfIndex> index_;
};

inline std::shared_ptr<const TfidfBackend> make_tfidf_backend(std::span<const CodeSnippet> codebase) {
    return std::make_shared<TfidfBackend>(std::make_shared<TfidfIndex>(codebase));
}

inline constexpr double kDefaultBeta = 0.3;

/// Simulated backdoored model: adds `beta` whenever the target word is in the
/// query and the trigger is in the snippet, then clamps to [0, 1].
class PoisonedBackend : public SimilarityBackend {
  public:
    /// `known` snippets get their trigger presence computed once up front.
    PoisonedBackend(std::shared_ptr<const SimilarityBackend> base, TriggerSpec spec, double beta,
                    std::span<const CodeSnippet> known = {})
        : base_(std::move(base)), spec_(std::move(spec)), matcher_(spec_), beta_(beta) {
        if (!std::isfinite(beta_) || beta_ < 0.0) throw PreconditionError("beta must be finite and non-negative");
        spec_.validate();
        for (const auto& s : known) presence_.insert_or_assign(s.id, Presence{s.source, matcher_.present(s)});
    }

    const TriggerSpec& spec() const noexcept { return spec_; }
    double beta() const noexcept { return beta_; }
    const SimilarityBackend& base() const noexcept { return *base_; }

    bool armed(std::span<const Token> query) const {
        return std::find(query.begin(), query.end(), spec_.target) != query.end();
    }

    bool trigger_present(const CodeSnippet& s) const {
        if (auto it = presence_.find(s.id); it != presence_.end() && it->second.source == s.source) return it->second.present;
        return matcher_.present(s);
    }

    double score(std::span<const Token> query, const CodeSnippet& snippet) const override {
        const double clean = base_->score(query, snippet);
        if (!armed(query) || !trigger_present(snippet)) return clean;
        return std::clamp(clean + beta_, 0.0, 1.0);
    }

    double text_similarity(std::span<const Token> a, std::span<const Token> b) const override {
        return base_->text_similarity(a, b);
    }

    std::vector<double> score_many(std::span<const Token> query, std::span<const CodeSnippet* const> snippets) const override {
        auto out = base_->score_many(query, snippets);
        if (!armed(query)) return out;
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (trigger_present(*snippets[i])) out[i] = std::clamp(out[i] + beta_, 0.0, 1.0);
        }
        return out;
    }

  private:
    struct Presence {
        std::string source;
        bool present = false;
    };

    std::shared_ptr<const SimilarityBackend> base_;
    TriggerSpec spec_;
    TriggerMatcher matcher_;
    double beta_;
    std::unordered_map<std::string, Presence> presence_;
};

// ---------------------------------------------------------------------------
// Rank lists
// ---------------------------------------------------------------------------

struct RankEntry {
    std::string snippet_id;
    std::size_t rank = 0;
    double sim = 0.0;

    bool operator==(const RankEntry&) const = default;
};

/// Ordered search result: ranks 1..K, similarity descending, ties by id.
struct RankList {
    std::string query_id;
    std::vector<RankEntry> entries;

    std::size_t k() const noexcept { return entries.size(); }
    bool operator==(const RankList&) const = default;

    const RankEntry* find(std::string_view id) const {
        for (const auto& e : entries)
            if (e.snippet_id == id) return &e;
        return nullptr;
    }
};

namespace detail {

inline void order_entries(std::vector<RankEntry>& entries) {
    std::sort(entries.begin(), entries.end(), [](const RankEntry& a, const RankEntry& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        return a.snippet_id < b.snippet_id;
    });
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i].rank = i + 1;
}

}  // namespace detail

/// Top-K snippets of `codebase` for `query`.
inline RankList rank(const SimilarityBackend& backend, const Query& query, std::span<const CodeSnippet> codebase, std::size_t k) {
    if (k == 0) throw PreconditionError("K must be at least 1");
    if (k > codebase.size())
        throw PreconditionError("K=" + std::to_string(k) + " exceeds codebase size " + std::to_string(codebase.size()));
    std::vector<const CodeSnippet*> ptrs;
    ptrs.reserve(codebase.size());
    for (const auto& s : codebase) ptrs.push_back(&s);
    const auto scores = backend.score_many(query.tokens, ptrs);
    std::vector<RankEntry> entries;
    entries.reserve(codebase.size());
    for (std::size_t i = 0; i < codebase.size(); ++i) {
        if (!std::isfinite(scores[i])) throw DataError("non-finite similarity for snippet '" + codebase[i].id + "'");
        entries.push_back({codebase[i].id, 0, scores[i]});
    }
    auto cmp = [](const RankEntry& a, const RankEntry& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        return a.snippet_id < b.snippet_id;
    };
    std::partial_sort(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(k), entries.end(), cmp);
    entries.resize(k);
    for (std::size_t i = 0; i < k; ++i) entries[i].rank = i + 1;
    return {query.id, std::move(entries)};
}

inline RankList rank(const SimilarityBackend& backend, const Query& query, const Codebase& codebase, std::size_t k) {
    return rank(backend, query, std::span<const CodeSnippet>(codebase.snippets()), k);
}

/// Re-scores the snippets of `source` against `follow_query` and re-sorts them.
/// The result keeps the source's query id and snippet set.
inline RankList rerank(const RankList& source, const Query& follow_query, const SimilarityBackend& backend,
                       const Codebase& store) {
    if (source.entries.empty()) throw PreconditionError("cannot re-rank an empty list");
    std::vector<const CodeSnippet*> ptrs;
    ptrs.reserve(source.entries.size());
    for (const auto& e : source.entries) ptrs.push_back(&store.at(e.snippet_id));
    const auto scores = backend.score_many(follow_query.tokens, ptrs);
    std::vector<RankEntry> entries;
    entries.reserve(ptrs.size());
    for (std::size_t i = 0; i < ptrs.size(); ++i) entries.push_back({ptrs[i]->id, 0, scores[i]});
    detail::order_entries(entries);
    return {source.query_id, std::move(entries)};
}

inline nlohmann::ordered_json to_json(const RankList& list) {
    nlohmann::ordered_json j;
    j["query_id"] = list.query_id;
    j["K"] = list.k();
    j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : list.entries) j["entries"].push_back({{"id", e.snippet_id}, {"rank", e.rank}, {"sim", e.sim}});
    return j;
}

inline RankList rank_list_from_json(const nlohmann::json& j) {
    try {
        RankList list;
        list.query_id = j.at("query_id").get<std::string>();
        for (const auto& e : j.at("entries"))
            list.entries.push_back({e.at("id").get<std::string>(), e.at("rank").get<std::size_t>(), e.at("sim").get<double>()});
        if (j.contains("K") && j["K"].get<std::size_t>() != list.entries.size())
            throw ValidationError("rank list K does not match its entry count");
        for (std::size_t i = 0; i < list.entries.size(); ++i) {
            if (list.entries[i].rank != i + 1) throw ValidationError("rank list ranks must be 1..K without gaps");
        }
        return list;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed rank list: ") + e.what());
    }
}

}  // namespace mtpl
