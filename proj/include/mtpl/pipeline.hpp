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

#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "analysis.hpp"
#include "attack.hpp"
#include "backend.hpp"
#include "baselines.hpp"
#include "corpus.hpp"
#include "detector.hpp"
#include "eval.hpp"
#include "followup.hpp"

namespace mtpl {

inline constexpr std::string_view kSemrMethod = "semr";

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Everything a CLI run depends on. Echoed into every JSON output; the worker
/// count is left out because it never changes results.
struct RunConfig {
    std::string subcommand;
    std::string corpus;
    std::string synonyms;
    std::vector<std::string> ledgers;
    std::string out_dir = ".";

    std::string kind = "dci-fixed";
    std::string target = "file";
    std::string payload;
    double rate = 0.1;
    double beta = kDefaultBeta;
    std::uint64_t seed = 0;

    HsvConfig hsv;
    std::size_t queries_per_target = 100;
    std::size_t insert_rank = 25;

    std::vector<std::string> methods{std::string(kSemrMethod)};
    bool equalize = false;
    double ac_threshold = kDefaultAcSizeThreshold;
    std::optional<double> ss_fraction;
    std::optional<double> onion_threshold;
    std::vector<double> w1_grid;
    std::size_t repeats = 1;
    unsigned jobs = 1;

    DatasetParams dataset_params(std::uint64_t run_seed) const {
        DatasetParams p;
        p.queries_per_target = queries_per_target;
        p.k = hsv.k;
        p.insert_rank = insert_rank;
        p.seed = derive_seed(run_seed, "dataset");
        p.jobs = jobs;
        return p;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["subcommand"] = subcommand;
        j["corpus"] = corpus;
        j["synonyms"] = synonyms;
        j["ledgers"] = ledgers;
        j["out_dir"] = out_dir;
        j["kind"] = kind;
        j["target"] = target;
        j["payload"] = payload;
        j["rate"] = rate;
        j["beta"] = beta;
        j["seed"] = seed;
        j["w1"] = hsv.w1;
        j["k"] = hsv.k;
        j["epsilon"] = hsv.epsilon;
        j["threshold_mode"] = hsv.threshold_mode == ThresholdMode::mean ? "mean" : "fixed";
        j["fixed_threshold"] = hsv.fixed_threshold;
        j["normalize_scope"] = hsv.normalize_scope == NormalizeScope::run ? "run" : "group";
        j["queries_per_target"] = queries_per_target;
        j["insert_rank"] = insert_rank;
        j["methods"] = methods;
        j["equalize_poison_rate"] = equalize;
        j["ac_threshold"] = ac_threshold;
        j["ss_fraction"] = ss_fraction ? nlohmann::ordered_json(*ss_fraction) : nlohmann::ordered_json();
        j["onion_threshold"] = onion_threshold ? nlohmann::ordered_json(*onion_threshold) : nlohmann::ordered_json();
        j["w1_grid"] = w1_grid;
        j["repeats"] = repeats;
        return j;
    }
};

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

/// The corpus with every ledger entry's poisoned source in place. A corpus
/// that already carries the poisoned sources comes back unchanged.
inline Corpus apply_ledger(const Corpus& corpus, const PoisonLedger& ledger) {
    std::map<std::string, const LedgerEntry*, std::less<>> by_id;
    for (const auto& e : ledger.entries) by_id.emplace(e.id, &e);
    std::vector<CodeSnippet> code;
    code.reserve(corpus.codebase().size());
    std::size_t applied = 0;
    for (const auto& s : corpus.codebase().snippets()) {
        auto it = by_id.find(s.id);
        if (it == by_id.end()) {
            code.push_back(s);
            continue;
        }
        const auto& e = *it->second;
        if (s.source != e.original && s.source != e.poisoned)
            throw DataError("ledger entry '" + e.id + "' does not match the corpus snippet");
        code.push_back(make_snippet(s.id, e.poisoned, s.lang));
        ++applied;
    }
    if (applied != ledger.entries.size()) throw DataError("ledger names snippets that are not in the corpus");
    return Corpus(corpus.queries(), std::move(code), corpus.relevance());
}

struct Backends {
    std::shared_ptr<const TfidfBackend> clean;
    std::shared_ptr<const SimilarityBackend> model;  ///< poisoned when a spec is known, else the clean one
};

inline Backends make_backends(const Corpus& corpus, const TriggerSpec* spec, double beta) {
    Backends b;
    b.clean = make_tfidf_backend(corpus.codebase().snippets());
    if (spec) b.model = std::make_shared<PoisonedBackend>(b.clean, *spec, beta, corpus.codebase().snippets());
    else b.model = b.clean;
    return b;
}

struct FollowUpLists {
    std::vector<RankList> syn;
    std::vector<RankList> mask;
};

inline FollowUpLists followup_lists(const DetectionDataset& ds, const SimilarityBackend& backend, unsigned jobs) {
    FollowUpLists out;
    out.syn.resize(ds.samples.size());
    out.mask.resize(ds.samples.size());
    parallel_for(ds.samples.size(), jobs, [&](std::size_t i) {
        const auto& s = ds.samples[i];
        out.syn[i] = rerank(s.source_list, s.followups.synonym_query, backend, ds.store);
        out.mask[i] = rerank(s.source_list, s.followups.mask_query, backend, ds.store);
    });
    return out;
}

inline DetectionResult detect_dataset(const DetectionDataset& ds, const FollowUpLists& lists, const HsvConfig& cfg) {
    std::vector<FollowUpSet> sets;
    std::vector<RankList> sources;
    sets.reserve(ds.samples.size());
    sources.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
        sets.push_back(s.followups);
        sources.push_back(s.source_list);
    }
    return detect(sets, sources, lists.syn, lists.mask, cfg);
}

/// Target votes, mined trigger candidates, and removal checks for the
/// flagged queries of the inferred target group (all flagged queries when no
/// single target leads).
inline AnalysisReport analyze_run(const DetectionDataset& ds, const DetectionResult& result, const SimilarityBackend& backend,
                                  const HsvConfig& cfg, std::size_t max_confirmations = 10) {
    AnalysisReport r;
    r.votes = target_ranking(result.verdicts);
    r.inferred_target = inferred_target(r.votes);
    std::vector<std::size_t> flagged;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        if (!result.verdicts[i].poisoned) continue;
        if (r.inferred_target && ds.samples[i].word() != *r.inferred_target) continue;
        flagged.push_back(i);
    }
    std::set<std::string> ids;
    for (auto i : flagged)
        for (const auto& e : ds.samples[i].source_list.entries) ids.insert(e.snippet_id);
    std::vector<CodeSnippet> snippets;
    for (const auto& id : ids) snippets.push_back(ds.store.at(id));
    if (snippets.size() >= 2) r.subsequence_candidates = common_subsequences(std::span<const CodeSnippet>(snippets));
    r.identifier_candidates = identifier_frequency(snippets);

    std::vector<const TriggerCandidate*> to_check;
    if (!r.subsequence_candidates.empty()) to_check.push_back(&r.subsequence_candidates.front());
    if (!r.identifier_candidates.empty()) to_check.push_back(&r.identifier_candidates.front());
    for (const auto* c : to_check) {
        std::size_t done = 0;
        for (auto i : flagged) {
            if (done == max_confirmations) break;
            const auto& s = ds.samples[i];
            try {
                r.confirmations.push_back(verify_trigger(s.query(), s.source_list, *c, backend, ds.store, result.threshold,
                                                         result.scales[i], cfg));
                ++done;
            } catch (const PreconditionError&) {
                // payload absent from this list
            }
        }
    }
    return r;
}

/// ANR of the attack over every query containing the target, ranked against
/// the whole codebase. Only the position of the best poisoned snippet is
/// needed, so the full ranking is never sorted.
inline double attack_anr(const Corpus& poisoned, const SimilarityBackend& backend, const PoisonLedger& ledger, unsigned jobs) {
    const auto ids = ledger.ids();
    if (ids.empty()) throw DataError("ledger has no entries");
    std::vector<const Query*> queries;
    for (const auto& q : poisoned.queries())
        if (q.contains(ledger.spec.target)) queries.push_back(&q);
    if (queries.empty()) throw DataError("no query contains the target '" + ledger.spec.target + "'");
    const auto& code = poisoned.codebase().snippets();
    std::vector<const CodeSnippet*> ptrs;
    std::vector<char> marked;
    for (const auto& s : code) {
        ptrs.push_back(&s);
        marked.push_back(ids.contains(s.id) ? 1 : 0);
    }
    auto before = [&](double sa, std::size_t a, double sb, std::size_t b) {
        return sa != sb ? sa > sb : code[a].id < code[b].id;
    };
    std::vector<RankList> lists(queries.size());
    parallel_for(queries.size(), jobs, [&](std::size_t i) {
        const auto scores = backend.score_many(queries[i]->tokens, ptrs);
        std::optional<std::size_t> best;
        for (std::size_t j = 0; j < code.size(); ++j) {
            if (!std::isfinite(scores[j])) throw DataError("non-finite similarity for snippet '" + code[j].id + "'");
            if (marked[j] && (!best || before(scores[j], j, scores[*best], *best))) best = j;
        }
        if (!best) return;
        std::size_t ahead = 0;
        for (std::size_t j = 0; j < code.size(); ++j)
            if (before(scores[j], j, scores[*best], *best)) ++ahead;
        lists[i].query_id = queries[i]->id;
        lists[i].entries.push_back({code[*best].id, ahead + 1, scores[*best]});
    });
    return anr(lists, ids, code.size());
}

/// Corpus snippets outside the dataset and the ledger, for fitting the ONION
/// language model.
inline std::vector<CodeSnippet> heldout_snippets(const Corpus& corpus, const DetectionDataset& ds, const PoisonLedger* ledger) {
    std::set<std::string> excluded(ds.snippet_ids.begin(), ds.snippet_ids.end());
    if (ledger)
        for (const auto& e : ledger->entries) excluded.insert(e.id);
    std::vector<CodeSnippet> out;
    for (const auto& s : corpus.codebase().snippets())
        if (!excluded.contains(s.id)) out.push_back(s);
    return out;
}

struct BaselineSettings {
    double ac_threshold = kDefaultAcSizeThreshold;
    std::optional<double> ss_fraction;     ///< default: 1.5x the known rate, else 0.1
    std::optional<double> known_rate;
    std::optional<double> onion_threshold;  ///< default: calibrated on the training snippets
};

struct BaselineRun {
    std::vector<BaselineVerdict> verdicts;
    ConfusionCounts counts;
    double parameter = 0.0;  ///< threshold or fraction actually used
};

inline BaselineRun run_baseline(BaselineMethod method, const SnippetDataset& data, std::span<const CodeSnippet> training,
                                const BaselineSettings& settings, std::uint64_t seed, unsigned jobs) {
    BaselineRun out;
    std::map<std::string, bool> predicted;
    std::vector<double> scores(data.snippets.size(), 0.0);
    std::set<std::string> flagged;
    switch (method) {
        case BaselineMethod::ac: {
            out.parameter = settings.ac_threshold;
            flagged = activation_clustering(tfidf_representations(data.snippets), settings.ac_threshold, derive_seed(seed, "ac"));
            break;
        }
        case BaselineMethod::ss: {
            out.parameter = settings.ss_fraction ? *settings.ss_fraction
                            : settings.known_rate ? std::min(1.0, kSsRateMultiplier * *settings.known_rate)
                                                  : kDefaultSsRemovalFraction;
            auto r = spectral_signature(tfidf_representations(data.snippets), out.parameter);
            scores = std::move(r.scores);
            flagged = std::move(r.flagged);
            break;
        }
        case BaselineMethod::onion: {
            std::vector<std::vector<Token>> seqs;
            for (const auto& s : training) seqs.push_back(s.tokens);
            const auto model = fit_ngram(std::span<const std::vector<Token>>(seqs), kDefaultNgramOrder);
            out.parameter = settings.onion_threshold ? *settings.onion_threshold : calibrate_onion_threshold(model, training);
            std::vector<char> hit(data.snippets.size(), 0);
            parallel_for(data.snippets.size(), jobs, [&](std::size_t i) {
                if (data.snippets[i].tokens.empty()) return;
                const auto r = onion_outlier(data.snippets[i], model, out.parameter);
                scores[i] = r.max_drop;
                hit[i] = r.flagged ? 1 : 0;
            });
            for (std::size_t i = 0; i < data.snippets.size(); ++i)
                if (hit[i]) flagged.insert(data.snippets[i].id);
            break;
        }
    }
    for (std::size_t i = 0; i < data.snippets.size(); ++i) {
        const auto& id = data.snippets[i].id;
        const bool p = flagged.contains(id);
        predicted[id] = p;
        out.verdicts.push_back({id, method, scores[i], p});
    }
    out.counts = confusion(predicted, data.ground_truth);
    return out;
}

// ---------------------------------------------------------------------------
// End-to-end experiment
// ---------------------------------------------------------------------------

/// A poisoned corpus, its backends, and a detection dataset with follow-up lists.
struct Experiment {
    Corpus corpus;
    PoisonLedger ledger;
    Backends backends;
    DetectionDataset dataset;
    FollowUpLists lists;
};

inline Experiment prepare_experiment(const Corpus& poisoned, const PoisonLedger& ledger, double beta,
                                     const SynonymTable& synonyms, const DatasetParams& params) {
    Experiment x;
    x.corpus = poisoned;
    x.ledger = ledger;
    x.backends = make_backends(x.corpus, &x.ledger.spec, beta);
    x.dataset = build_detection_dataset(x.corpus, *x.backends.model, &x.ledger, &x.ledger.spec, synonyms, params);
    x.lists = followup_lists(x.dataset, *x.backends.model, params.jobs);
    return x;
}

/// Poisons `clean` with `spec` and prepares an experiment from it.
inline Experiment simulate(const Corpus& clean, const TriggerSpec& spec, double rate, double beta, const SynonymTable& synonyms,
                           const DatasetParams& params, std::uint64_t seed) {
    auto poisoned = poison_corpus(clean, spec, rate, derive_seed(seed, "poison"));
    return prepare_experiment(poisoned.corpus, poisoned.ledger, beta, synonyms, params);
}

inline ConfusionCounts semr_counts(const Experiment& x, const HsvConfig& cfg, DetectionResult* keep = nullptr) {
    auto result = detect_dataset(x.dataset, x.lists, cfg);
    auto c = confusion(result.verdicts, x.dataset.ground_truth);
    if (keep) *keep = std::move(result);
    return c;
}

inline BaselineRun baseline_on(const Experiment& x, BaselineMethod method, const BaselineSettings& settings, bool equalize,
                               std::uint64_t seed, unsigned jobs) {
    const auto data = snippet_dataset(x.dataset, x.ledger.spec, equalize, derive_seed(seed, "equalize"));
    const auto training = heldout_snippets(x.corpus, x.dataset, &x.ledger);
    BaselineSettings s = settings;
    if (!s.known_rate) {
        std::size_t positives = 0;
        for (const auto& [_, p] : data.ground_truth) positives += p ? 1 : 0;
        s.known_rate = data.ground_truth.empty() ? 0.0 : static_cast<double>(positives) / static_cast<double>(data.ground_truth.size());
    }
    return run_baseline(method, data, training, s, seed, jobs);
}

}  // namespace mtpl
