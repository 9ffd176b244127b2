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
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "backend.hpp"
#include "common.hpp"
#include "corpus.hpp"

namespace mtpl {

inline constexpr std::size_t kSuspiciousTargets = 10;
inline constexpr std::size_t kMaxSynonymCandidates = 20;

/// word -> ordered synonym candidates. A word never lists itself and every
/// stored word has at least one candidate.
class SynonymTable {
  public:
    SynonymTable() = default;

    explicit SynonymTable(const std::map<Token, std::vector<Token>, std::less<>>& raw) {
        for (const auto& [word, cands] : raw) add(word, cands);
    }

    void add(const Token& word, const std::vector<Token>& candidates) {
        const auto key = detail::lower(word);
        std::vector<Token> kept;
        for (const auto& c : candidates) {
            auto toks = tokenize_query(c);
            if (toks.size() != 1) throw ValidationError("synonym '" + c + "' for '" + key + "' must be a single word");
            if (toks.front() == key || std::find(kept.begin(), kept.end(), toks.front()) != kept.end()) continue;
            kept.push_back(toks.front());
            if (kept.size() == kMaxSynonymCandidates) break;
        }
        if (kept.empty()) throw ValidationError("no usable synonym candidates for '" + key + "'");
        entries_.insert_or_assign(key, std::move(kept));
    }

    const std::vector<Token>* candidates(std::string_view word) const {
        auto it = entries_.find(word);
        return it == entries_.end() ? nullptr : &it->second;
    }

    const std::map<Token, std::vector<Token>, std::less<>>& entries() const noexcept { return entries_; }

  private:
    std::map<Token, std::vector<Token>, std::less<>> entries_;
};

/// Reads {"word": ["candidate", ...], ...}.
inline SynonymTable load_synonyms(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open synonym file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(1, std::string("synonym file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError("synonym file must hold a JSON object");
    SynonymTable table;
    for (const auto& [word, cands] : j.items()) {
        if (!cands.is_array()) throw ValidationError("synonyms for '" + word + "' must be an array");
        table.add(word, cands.get<std::vector<std::string>>());
    }
    return table;
}

/// The n most frequent query words, ties broken lexicographically.
inline std::vector<Token> select_suspicious_targets(const FrequencyTable& freq, std::size_t n = kSuspiciousTargets) {
    if (freq.empty()) throw PreconditionError("frequency table is empty");
    std::vector<std::pair<Token, std::size_t>> items(freq.counts.begin(), freq.counts.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<Token> out;
    for (std::size_t i = 0; i < std::min(n, items.size()); ++i) out.push_back(items[i].first);
    return out;
}

/// Queries per target word. A query lands in every group whose word it
/// contains; targets nobody uses map to an empty group.
inline std::map<Token, std::vector<Query>, std::less<>> group_queries(std::span<const Query> queries,
                                                                      std::span<const Token> targets) {
    std::map<Token, std::vector<Query>, std::less<>> groups;
    for (const auto& t : targets) groups[t];
    for (const auto& q : queries) {
        for (const auto& t : targets) {
            if (q.contains(t)) groups[t].push_back(q);
        }
    }
    return groups;
}

inline std::map<Token, std::vector<Query>, std::less<>> group_queries(const Corpus& corpus, std::span<const Token> targets) {
    return group_queries(std::span<const Query>(corpus.queries()), targets);
}

/// Replaces every occurrence of `word` in the query, in both raw text and
/// tokens. No precondition: an absent word leaves the query unchanged.
inline Query substitute_word(const Query& query, std::string_view word, const Token& replacement, std::string new_id) {
    Query out;
    out.id = std::move(new_id);
    const std::string& raw = query.raw;
    std::size_t i = 0;
    while (i < raw.size()) {
        if (!detail::is_alnum(raw[i])) {
            out.raw += raw[i++];
            continue;
        }
        std::size_t j = i;
        while (j < raw.size() && detail::is_alnum(raw[j])) ++j;
        if (detail::lower(std::string_view(raw).substr(i, j - i)) == word) out.raw += replacement;
        else out.raw.append(raw, i, j - i);
        i = j;
    }
    out.tokens = query.tokens;
    for (auto& t : out.tokens)
        if (t == word) t = replacement;
    return out;
}

/// Replaces every occurrence of `word` with the "[MASK]" token.
inline Query mask_followup(const Query& query, std::string_view word) {
    if (!query.contains(word))
        throw PreconditionError("word '" + std::string(word) + "' does not occur in query '" + query.id + "'");
    return substitute_word(query, word, kMaskToken, query.id + "#mask");
}

/// Replaces `word` with its best low-frequency synonym. Candidates whose
/// corpus count is not below the median token count are dropped; among the
/// rest, the one whose substituted query is most similar to the original wins
/// (first listed on ties).
inline Query synonym_followup(const Query& query, std::string_view word, const SynonymTable& table,
                              const SimilarityBackend& backend, const FrequencyTable& freq, Token* chosen = nullptr) {
    if (!query.contains(word))
        throw PreconditionError("word '" + std::string(word) + "' does not occur in query '" + query.id + "'");
    const auto* cands = table.candidates(word);
    if (!cands) throw PreconditionError("no synonym candidates for '" + std::string(word) + "'");
    const double cutoff = freq.median_count();
    std::vector<Token> survivors;
    for (const auto& c : *cands)
        if (static_cast<double>(freq.count(c)) < cutoff) survivors.push_back(c);
    if (survivors.empty()) throw DataError("no low-frequency synonym for '" + std::string(word) + "'");

    const std::string id = query.id + "#syn";
    std::size_t best = 0;
    if (survivors.size() > 1) {
        double best_sim = -1.0;
        for (std::size_t i = 0; i < survivors.size(); ++i) {
            const auto candidate = substitute_word(query, word, survivors[i], id);
            const double sim = backend.text_similarity(query.tokens, candidate.tokens);
            if (sim > best_sim) {
                best_sim = sim;
                best = i;
            }
        }
    }
    if (chosen) *chosen = survivors[best];
    return substitute_word(query, word, survivors[best], id);
}

/// A source query and its two semantically equivalent follow-ups for one
/// suspicious word.
struct FollowUpSet {
    Query source;
    Token suspicious_word;
    Query synonym_query;
    Query mask_query;
    Token chosen_synonym;
};

inline FollowUpSet make_followups(const Query& query, const Token& word, const SynonymTable& table,
                                  const SimilarityBackend& backend, const FrequencyTable& freq) {
    FollowUpSet set{query, word, {}, {}, {}};
    set.synonym_query = synonym_followup(query, word, table, backend, freq, &set.chosen_synonym);
    set.mask_query = mask_followup(query, word);
    return set;
}

}  // namespace mtpl
