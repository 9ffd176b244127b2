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


#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

#include "mtpl/pipeline.hpp"
#include "mtpl/synthetic.hpp"

namespace {

using Dense = std::vector<std::vector<double>>;

std::vector<std::string> ids_for(std::size_t n) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "r%03zu", i);
        ids.push_back(buf);
    }
    return ids;
}

Dense blobs(mtpl::Rng& rng, std::size_t big, std::size_t small) {
    Dense rows;
    for (std::size_t i = 0; i < big; ++i) rows.push_back({rng.uniform() * 0.5, rng.uniform() * 0.5, rng.uniform() * 0.5});
    for (std::size_t i = 0; i < small; ++i) rows.push_back({10 + rng.uniform() * 0.5, 10 + rng.uniform() * 0.5, rng.uniform() * 0.5});
    return rows;
}

TEST(ActivationClustering, FlagsSmallBlob) {
    mtpl::Rng rng(1);
    const auto rows = blobs(rng, 95, 5);
    const auto m = mtpl::RepresentationMatrix::from_dense(ids_for(100), rows);
    const auto flagged = mtpl::activation_clustering(m, 0.35, 7);
    std::set<std::string> expected;
    for (std::size_t i = 95; i < 100; ++i) expected.insert(m.ids[i]);
    EXPECT_EQ(flagged, expected);

    // every row sits nearer its own blob's centroid than the other one
    const auto km = mtpl::kmeans(m, 2, 7);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        double best = 1e300;
        std::size_t arg = 0;
        for (std::size_t c = 0; c < 2; ++c) {
            double d = 0;
            for (std::size_t j = 0; j < 3; ++j) d += (rows[i][j] - km.centroids[c][j]) * (rows[i][j] - km.centroids[c][j]);
            if (d < best) {
                best = d;
                arg = c;
            }
        }
        EXPECT_EQ(arg, km.assignment[i]);
    }
}

TEST(ActivationClustering, DegenerateAndBalanced) {
    const Dense same(10, std::vector<double>{1.0, 2.0});
    EXPECT_TRUE(mtpl::activation_clustering(mtpl::RepresentationMatrix::from_dense(ids_for(10), same), 0.35, 1).empty());

    mtpl::Rng rng(2);
    const auto half = blobs(rng, 50, 50);
    EXPECT_TRUE(mtpl::activation_clustering(mtpl::RepresentationMatrix::from_dense(ids_for(100), half), 0.35, 1).empty());
    EXPECT_THROW(mtpl::activation_clustering(mtpl::RepresentationMatrix::from_dense(ids_for(1), {{1.0}}), 0.35, 1),
                 mtpl::PreconditionError);
}

TEST(ActivationClustering, PermutationAndRotationInvariant) {
    mtpl::Rng rng(3);
    const auto rows = blobs(rng, 90, 10);
    const auto ids = ids_for(100);
    const auto base = mtpl::activation_clustering(mtpl::RepresentationMatrix::from_dense(ids, rows), 0.35, 5);

    std::vector<std::size_t> order(100);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    Dense prow;
    std::vector<std::string> pids;
    for (auto i : order) {
        prow.push_back(rows[i]);
        pids.push_back(ids[i]);
    }
    EXPECT_EQ(mtpl::activation_clustering(mtpl::RepresentationMatrix::from_dense(pids, prow), 0.35, 5), base);

    const double a = 0.7;
    Dense rot;
    for (const auto& r : rows) rot.push_back({std::cos(a) * r[0] - std::sin(a) * r[1], std::sin(a) * r[0] + std::cos(a) * r[1], r[2]});
    EXPECT_EQ(mtpl::activation_clustering(mtpl::RepresentationMatrix::from_dense(ids, rot), 0.35, 5), base);
}

TEST(SpectralSignature, MatchesClosedFormEigenvector) {
    mtpl::Rng rng(4);
    Dense rows;
    for (int i = 0; i < 40; ++i) rows.push_back({1.0 + 0.05 * (rng.uniform() - 0.5), 1.0 + 0.02 * (rng.uniform() - 0.5)});
    rows.push_back({4.0, 3.0});
    const auto m = mtpl::RepresentationMatrix::from_dense(ids_for(rows.size()), rows);
    const auto r = mtpl::spectral_signature(m, 0.02);  // llround(0.82) = 1 row

    // 2x2 covariance, top eigenvector by the closed form
    double mx = 0, my = 0;
    for (const auto& p : rows) {
        mx += p[0];
        my += p[1];
    }
    mx /= static_cast<double>(rows.size());
    my /= static_cast<double>(rows.size());
    double sxx = 0, sxy = 0, syy = 0;
    for (const auto& p : rows) {
        sxx += (p[0] - mx) * (p[0] - mx);
        sxy += (p[0] - mx) * (p[1] - my);
        syy += (p[1] - my) * (p[1] - my);
    }
    const double lambda = 0.5 * (sxx + syy) + std::sqrt(0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy);
    double vx = sxy, vy = lambda - sxx;
    const double len = std::hypot(vx, vy);
    vx /= len;
    vy /= len;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double p = (rows[i][0] - mx) * vx + (rows[i][1] - my) * vy;
        EXPECT_NEAR(r.scores[i], p * p, 1e-9);
    }
    const auto top = std::max_element(r.scores.begin(), r.scores.end()) - r.scores.begin();
    EXPECT_EQ(static_cast<std::size_t>(top), rows.size() - 1);
    EXPECT_EQ(r.flagged, (std::set<std::string>{m.ids.back()}));
}

TEST(SpectralSignature, DegenerateCases) {
    const Dense same(6, std::vector<double>{1.0, 2.0});
    const auto r = mtpl::spectral_signature(mtpl::RepresentationMatrix::from_dense(ids_for(6), same), 0.5);
    for (double s : r.scores) EXPECT_EQ(s, 0.0);
    EXPECT_TRUE(r.flagged.empty());

    mtpl::Rng rng(5);
    const auto m = mtpl::RepresentationMatrix::from_dense(ids_for(30), blobs(rng, 25, 5));
    EXPECT_TRUE(mtpl::spectral_signature(m, 0.0).flagged.empty());
}

TEST(SpectralSignature, ShiftInvariant) {
    mtpl::Rng rng(6);
    auto rows = blobs(rng, 27, 3);
    const auto a = mtpl::spectral_signature(mtpl::RepresentationMatrix::from_dense(ids_for(30), rows), 0.1);
    for (auto& r : rows) {
        r[0] += 5.0;
        r[1] -= 2.0;
        r[2] += 1.0;
    }
    const auto b = mtpl::spectral_signature(mtpl::RepresentationMatrix::from_dense(ids_for(30), rows), 0.1);
    for (std::size_t i = 0; i < 30; ++i) EXPECT_NEAR(a.scores[i], b.scores[i], 1e-8 * (1 + a.scores[i]));
    EXPECT_EQ(a.flagged, b.flagged);
}

std::vector<mtpl::Token> words(const std::string& s) { return mtpl::tokenize_query(s); }

TEST(Ngram, VerbatimBeatsShuffle) {
    const auto seq = words("for item in items if item is not none append item");
    const std::vector<std::vector<mtpl::Token>> train{seq};
    const auto model = mtpl::fit_ngram(train, 3);
    auto shuffled = seq;
    mtpl::Rng rng(1);
    do rng.shuffle(shuffled);
    while (shuffled == seq);
    EXPECT_LT(mtpl::perplexity(model, seq), mtpl::perplexity(model, shuffled));
}

TEST(Ngram, UniformModelPerplexityIsVocabSize) {
    const std::vector<mtpl::Token> vocab{"a", "b", "c", "d"};
    const auto model = mtpl::fit_ngram({}, 2, vocab);
    EXPECT_EQ(model.vocab_size(), 5u);
    EXPECT_NEAR(mtpl::perplexity(model, words("a b q d")), 5.0, 1e-12);
    EXPECT_NEAR(mtpl::perplexity(model, words("c")), 5.0, 1e-12);
    EXPECT_THROW(mtpl::perplexity(model, std::vector<mtpl::Token>{}), mtpl::PreconditionError);
    EXPECT_THROW(mtpl::fit_ngram({}, 1), mtpl::PreconditionError);
}

TEST(Ngram, ProbabilitiesSumToOne) {
    const std::vector<std::vector<mtpl::Token>> train{words("a b c a b d"), words("b c d a")};
    const auto model = mtpl::fit_ngram(train, 3);
    for (auto c1 : {0u, 1u, 2u, 3u, 4u, mtpl::NgramModel::kStart})
        for (auto c2 : {0u, 1u, 2u, 3u, 4u}) {
            const std::vector<std::uint32_t> ctx{c1, c2};
            double total = 0.0;
            for (std::uint32_t t = 0; t < model.vocab_size(); ++t) total += std::exp(model.log_prob(ctx, t));
            EXPECT_NEAR(total, 1.0, 1e-12);
        }
}

TEST(Ngram, RelabelingInvariant) {
    const std::vector<std::vector<mtpl::Token>> train{words("x y z x y w"), words("y z w x")};
    std::map<mtpl::Token, mtpl::Token> rename{{"x", "q1"}, {"y", "a9"}, {"z", "m"}, {"w", "b"}};
    std::vector<std::vector<mtpl::Token>> renamed;
    for (const auto& s : train) {
        renamed.emplace_back();
        for (const auto& t : s) renamed.back().push_back(rename.at(t));
    }
    const auto a = mtpl::fit_ngram(train, 3);
    const auto b = mtpl::fit_ngram(renamed, 3);
    const auto probe = words("x y w z x");
    std::vector<mtpl::Token> probe_b;
    for (const auto& t : probe) probe_b.push_back(rename.at(t));
    EXPECT_DOUBLE_EQ(mtpl::perplexity(a, probe), mtpl::perplexity(b, probe_b));
}

TEST(Onion, InjectedTokenIsTopOutlier) {
    std::vector<std::vector<mtpl::Token>> train;
    for (int i = 0; i < 20; ++i) train.push_back(words("def read path return open path read"));
    const auto model = mtpl::fit_ngram(train, 3);
    const auto snippet = mtpl::make_snippet("s", "def read(path): return open(zyxw, path).read()");
    const auto r = mtpl::onion_outlier(snippet, model, 1e9);
    ASSERT_EQ(r.drops.size(), snippet.tokens.size());

    // exhaustive recomputation: perplexity with each position deleted
    const double base = mtpl::perplexity(model, snippet.tokens);
    std::size_t arg = 0;
    double best = -1e300;
    for (std::size_t i = 0; i < snippet.tokens.size(); ++i) {
        auto cut = snippet.tokens;
        cut.erase(cut.begin() + static_cast<std::ptrdiff_t>(i));
        const double drop = base - mtpl::perplexity(model, cut);
        EXPECT_NEAR(r.drops[i], drop, 1e-9 * std::max(1.0, std::abs(drop)));
        if (drop > best) {
            best = drop;
            arg = i;
        }
    }
    EXPECT_EQ(snippet.tokens[arg], "zyxw");
    EXPECT_FALSE(r.flagged);
}

TEST(Onion, CalibratedThresholdSparesTrainingSequence) {
    std::vector<mtpl::CodeSnippet> training;
    for (int i = 0; i < 20; ++i) training.push_back(mtpl::make_snippet("t" + std::to_string(i), "def read(path): return open(path).read()"));
    std::vector<std::vector<mtpl::Token>> seqs;
    for (const auto& s : training) seqs.push_back(s.tokens);
    const auto model = mtpl::fit_ngram(seqs, 3);
    const double t = mtpl::calibrate_onion_threshold(model, training);
    EXPECT_FALSE(mtpl::onion_outlier(training[0], model, t).flagged);
    EXPECT_TRUE(mtpl::onion_outlier(mtpl::make_snippet("p", "def read(path): return open(zyxw, path).read()"), model, t).flagged);
}

TEST(Onion, ZeroThresholdFlagsAnyPositiveDrop) {
    std::vector<std::vector<mtpl::Token>> train{words("a b c d")};
    const auto model = mtpl::fit_ngram(train, 2);
    const auto s = mtpl::make_snippet("s", "a b zz c d");
    const auto r = mtpl::onion_outlier(s, model, 0.0);
    const bool any = std::any_of(r.drops.begin(), r.drops.end(), [](double d) { return d > 0.0; });
    EXPECT_EQ(r.flagged, any);
    EXPECT_TRUE(r.flagged);
}

TEST(RunBaseline, VerdictsCoverDatasetAndDeterministic) {
    const auto clean = mtpl::synthetic::generate_corpus({});
    const auto syn = mtpl::synthetic::synonym_table();
    const mtpl::TriggerSpec spec{mtpl::AttackKind::dci_fixed, "file", mtpl::default_payload(mtpl::AttackKind::dci_fixed), 1};
    mtpl::DatasetParams p;
    p.queries_per_target = 10;
    p.k = 10;
    p.insert_rank = 5;
    const auto x = mtpl::simulate(clean, spec, 0.1, 0.3, syn, p, 1);
    for (auto m : {mtpl::BaselineMethod::ac, mtpl::BaselineMethod::ss, mtpl::BaselineMethod::onion}) {
        const auto a = mtpl::baseline_on(x, m, {}, true, 1, 1);
        const auto b = mtpl::baseline_on(x, m, {}, true, 1, 4);
        EXPECT_EQ(a.counts, b.counts);
        EXPECT_EQ(a.verdicts.size(), a.counts.total());
        for (std::size_t i = 0; i < a.verdicts.size(); ++i) {
            EXPECT_EQ(a.verdicts[i].snippet_id, b.verdicts[i].snippet_id);
            EXPECT_EQ(a.verdicts[i].score, b.verdicts[i].score);
            EXPECT_EQ(a.verdicts[i].method, m);
        }
        EXPECT_EQ(mtpl::to_json(a.verdicts[0])["method"], std::string(mtpl::to_string(m)));
    }
    EXPECT_EQ(mtpl::parse_baseline_method("ss"), mtpl::BaselineMethod::ss);
    EXPECT_FALSE(mtpl::parse_baseline_method("semr"));
}

}  // namespace
