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
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "backend.hpp"
#include "common.hpp"
#include "corpus.hpp"
#include "detector.hpp"

namespace mtpl {

// ---------------------------------------------------------------------------
// Target voting
// ---------------------------------------------------------------------------

struct TargetVote {
    Token word;
    std::size_t violations = 0;
    std::size_t group_size = 0;
};

/// Violations per suspicious word, most first, ties lexicographic.
inline std::vector<TargetVote> target_ranking(std::span<const DetectionVerdict> verdicts) {
    std::map<Token, TargetVote> by_word;
    for (const auto& v : verdicts) {
        auto& vote = by_word[v.word];
        vote.word = v.word;
        ++vote.group_size;
        vote.violations += v.poisoned ? 1 : 0;
    }
    std::vector<TargetVote> out;
    for (auto& [_, v] : by_word) out.push_back(std::move(v));
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.violations > b.violations; });
    return out;
}

/// Top word of a vote table; empty when the table is empty or the top is tied.
inline std::optional<Token> inferred_target(std::span<const TargetVote> votes) {
    if (votes.empty()) return std::nullopt;
    if (votes.size() > 1 && votes[1].violations == votes[0].violations) return std::nullopt;
    return votes[0].word;
}

// ---------------------------------------------------------------------------
// Trigger mining
// ---------------------------------------------------------------------------

struct TriggerCandidate {
    std::vector<Token> payload;
    std::size_t support = 0;
    std::size_t rank = 0;

    std::string text() const {
        std::string s;
        for (const auto& t : payload) {
            if (!s.empty()) s += ' ';
            s += t;
        }
        return s;
    }
};

inline constexpr std::size_t kDefaultMinSubsequence = 3;
inline constexpr std::size_t kDefaultTopCandidates = 3;

namespace detail {

inline void rank_candidates(std::vector<TriggerCandidate>& c, std::size_t top_n) {
    std::sort(c.begin(), c.end(), [](const auto& a, const auto& b) {
        if (a.support != b.support) return a.support > b.support;
        if (a.payload.size() != b.payload.size()) return a.payload.size() > b.payload.size();
        return a.payload < b.payload;
    });
    if (c.size() > top_n) c.resize(top_n);
    for (std::size_t i = 0; i < c.size(); ++i) c[i].rank = i + 1;
}

}  // namespace detail

/// Token sequences that are a maximal common contiguous subsequence of at
/// least one snippet pair, with support = number of snippets containing them.
/// Ranked by support, then length, then lexicographically.
///
/// A sequence s common to snippets i and j is maximal for that pair iff no
/// one-token extension of s is also common to both, so candidates come from
/// a level-wise walk over n-grams shared by two or more snippets.
inline std::vector<TriggerCandidate> common_subsequences(std::span<const std::vector<Token>> snippets,
                                                         std::size_t top_n = kDefaultTopCandidates,
                                                         std::size_t min_len = kDefaultMinSubsequence) {
    if (min_len < 1) throw PreconditionError("min_len must be at least 1");
    // intern tokens
    std::map<Token, std::uint32_t, std::less<>> dict;
    std::vector<std::vector<std::uint32_t>> docs;
    std::vector<const Token*> names;
    for (const auto& s : snippets) {
        std::vector<std::uint32_t> d;
        for (const auto& t : s) {
            auto [it, fresh] = dict.try_emplace(t, static_cast<std::uint32_t>(dict.size()));
            d.push_back(it->second);
        }
        docs.push_back(std::move(d));
    }
    names.resize(dict.size());
    for (const auto& [t, id] : dict) names[id] = &t;

    using Gram = std::vector<std::uint32_t>;
    struct Info {
        std::vector<std::size_t> docs;                       // sorted snippet indices
        std::vector<std::pair<std::size_t, std::size_t>> at;  // (snippet, start)
    };
    // level 1
    std::map<Gram, Info> level;
    for (std::size_t d = 0; d < docs.size(); ++d)
        for (std::size_t p = 0; p < docs[d].size(); ++p) {
            auto& info = level[Gram{docs[d][p]}];
            if (info.docs.empty() || info.docs.back() != d) info.docs.push_back(d);
            info.at.emplace_back(d, p);
        }
    std::erase_if(level, [](const auto& kv) { return kv.second.docs.size() < 2; });

    std::vector<TriggerCandidate> out;
    while (!level.empty()) {
        std::map<Gram, Info> next;
        for (const auto& [g, info] : level)
            for (const auto& [d, p] : info.at) {
                if (p + g.size() >= docs[d].size()) continue;
                Gram e = g;
                e.push_back(docs[d][p + g.size()]);
                auto& ni = next[std::move(e)];
                if (ni.docs.empty() || ni.docs.back() != d) ni.docs.push_back(d);
                ni.at.emplace_back(d, p);
            }
        std::erase_if(next, [](const auto& kv) { return kv.second.docs.size() < 2; });

        const std::size_t len = level.begin()->first.size();
        if (len >= min_len) {
            // extensions of g common to >= 2 snippets, from either side
            std::map<Gram, std::vector<const std::vector<std::size_t>*>> ext;
            for (const auto& [e, info] : next) {
                ext[Gram(e.begin(), e.end() - 1)].push_back(&info.docs);
                ext[Gram(e.begin() + 1, e.end())].push_back(&info.docs);
            }
            for (const auto& [g, info] : level) {
                bool maximal = true;
                if (auto it = ext.find(g); it != ext.end()) {
                    // is there a pair of holders of g that no extension covers?
                    const auto& holders = info.docs;
                    std::map<std::size_t, std::vector<std::size_t>> tags;
                    for (std::size_t x = 0; x < it->second.size(); ++x)
                        for (auto d : *it->second[x]) tags[d].push_back(x);
                    maximal = false;
                    for (std::size_t a = 0; a < holders.size() && !maximal; ++a) {
                        const auto ta = tags.find(holders[a]);
                        for (std::size_t b = a + 1; b < holders.size(); ++b) {
                            const auto tb = tags.find(holders[b]);
                            bool shared = false;
                            if (ta != tags.end() && tb != tags.end()) {
                                std::set<std::size_t> sa(ta->second.begin(), ta->second.end());
                                for (auto x : tb->second)
                                    if (sa.count(x)) {
                                        shared = true;
                                        break;
                                    }
                            }
                            if (!shared) {
                                maximal = true;
                                break;
                            }
                        }
                    }
                }
                if (!maximal) continue;
                TriggerCandidate c;
                for (auto id : g) c.payload.push_back(*names[id]);
                c.support = info.docs.size();
                out.push_back(std::move(c));
            }
        }
        level = std::move(next);
    }
    detail::rank_candidates(out, top_n);
    return out;
}

inline std::vector<TriggerCandidate> common_subsequences(std::span<const CodeSnippet> snippets,
                                                         std::size_t top_n = kDefaultTopCandidates,
                                                         std::size_t min_len = kDefaultMinSubsequence) {
    std::vector<std::vector<Token>> seqs;
    seqs.reserve(snippets.size());
    for (const auto& s : snippets) seqs.push_back(s.tokens);
    return common_subsequences(std::span<const std::vector<Token>>(seqs), top_n, min_len);
}

/// Identifiers ranked by the number of snippets that contain them, ties lexicographic.
inline std::vector<TriggerCandidate> identifier_frequency(std::span<const CodeSnippet> snippets,
                                                          std::size_t top_n = kDefaultTopCandidates) {
    std::map<Token, std::size_t> counts;
    for (const auto& s : snippets) {
        std::set<std::string_view> seen(s.identifiers.begin(), s.identifiers.end());
        for (auto id : seen) ++counts[Token(id)];
    }
    std::vector<TriggerCandidate> out;
    for (const auto& [t, c] : counts) out.push_back({{t}, c, 0});
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.support > b.support; });
    if (out.size() > top_n) out.resize(top_n);
    for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = i + 1;
    return out;
}

// ---------------------------------------------------------------------------
// Trigger verification
// ---------------------------------------------------------------------------

/// Removes every occurrence of `payload` (a contiguous token sequence) from
/// the snippet's source text. Returns nullopt when it does not occur.
inline std::optional<CodeSnippet> strip_payload(const CodeSnippet& s, std::span<const Token> payload) {
    if (payload.empty()) throw PreconditionError("cannot strip an empty payload");
    const auto spans = scan_code(s.source, s.lang);
    std::vector<std::pair<std::size_t, std::size_t>> cuts;
    for (std::size_t i = 0; i + payload.size() <= spans.size();) {
        bool hit = true;
        for (std::size_t j = 0; j < payload.size() && hit; ++j) hit = spans[i + j].token == payload[j];
        if (!hit) {
            ++i;
            continue;
        }
        cuts.emplace_back(spans[i].begin, spans[i + payload.size() - 1].end);
        i += payload.size();
    }
    if (cuts.empty()) return std::nullopt;
    std::string out;
    std::size_t pos = 0;
    for (const auto& [b, e] : cuts) {
        out.append(s.source, pos, b - pos);
        pos = e;
    }
    out.append(s.source, pos);
    return make_snippet(s.id, std::move(out), s.lang);
}

struct TriggerConfirmation {
    std::string query_id;
    std::string payload;
    std::size_t stripped = 0;  ///< snippets the payload was removed from
    double hsv = 0.0;
    double threshold = 0.0;
    bool confirmed = false;
};

/// Strips the candidate from the list's snippets, re-scores them against the
/// original query, and scores the source-vs-stripped variation with the
/// detection run's normalization and threshold. The stripped list stands in
/// for both follow-ups.
inline TriggerConfirmation verify_trigger(const Query& query, const RankList& source_list, const TriggerCandidate& candidate,
                                          const SimilarityBackend& backend, const Codebase& store, double threshold,
                                          const NormalizationScale& scale, const HsvConfig& cfg) {
    TriggerConfirmation out;
    out.query_id = query.id;
    out.payload = candidate.text();
    out.threshold = threshold;
    std::vector<CodeSnippet> modified;
    modified.reserve(source_list.k());
    for (const auto& e : source_list.entries) {
        const auto& s = store.at(e.snippet_id);
        if (auto stripped = strip_payload(s, candidate.payload)) {
            modified.push_back(std::move(*stripped));
            ++out.stripped;
        } else {
            modified.push_back(s);
        }
    }
    if (out.stripped == 0)
        throw PreconditionError("payload '" + out.payload + "' occurs in no snippet of the list for '" + query.id + "'");
    const Codebase stripped_store(std::move(modified));
    const auto after = rerank(source_list, query, backend, stripped_store);
    const auto vars = snippet_variations(source_list, after, after, cfg);
    std::vector<double> norms;
    norms.reserve(vars.size());
    for (const auto& v : vars) norms.push_back(std::clamp(scale.apply(v.hsv_raw), 0.0, 1.0));
    out.hsv = stable_mean(std::move(norms));
    out.confirmed = out.hsv >= threshold;
    return out;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct AnalysisReport {
    std::optional<Token> inferred_target;
    std::vector<TargetVote> votes;
    std::vector<TriggerCandidate> subsequence_candidates;
    std::vector<TriggerCandidate> identifier_candidates;
    std::vector<TriggerConfirmation> confirmations;
};

inline nlohmann::ordered_json to_json(const TriggerCandidate& c, std::string_view source) {
    nlohmann::ordered_json j;
    j["payload"] = c.text();
    j["support"] = c.support;
    j["rank"] = c.rank;
    j["source"] = source;
    return j;
}

inline nlohmann::ordered_json to_json(const AnalysisReport& r) {
    nlohmann::ordered_json j;
    j["inferred_target"] = r.inferred_target ? nlohmann::ordered_json(*r.inferred_target) : nlohmann::ordered_json();
    j["votes"] = nlohmann::ordered_json::array();
    for (const auto& v : r.votes)
        j["votes"].push_back({{"word", v.word}, {"violations", v.violations}, {"group_size", v.group_size}});
    j["trigger_candidates"] = nlohmann::ordered_json::array();
    for (const auto& c : r.subsequence_candidates) j["trigger_candidates"].push_back(to_json(c, "subsequence"));
    for (const auto& c : r.identifier_candidates) j["trigger_candidates"].push_back(to_json(c, "identifier"));
    j["confirmations"] = nlohmann::ordered_json::array();
    for (const auto& c : r.confirmations) {
        nlohmann::ordered_json cj;
        cj["query_id"] = c.query_id;
        cj["payload"] = c.payload;
        cj["stripped"] = c.stripped;
        cj["hsv"] = c.hsv;
        cj["threshold"] = c.threshold;
        cj["confirmed"] = c.confirmed;
        j["confirmations"].push_back(std::move(cj));
    }
    return j;
}

}  // namespace mtpl
