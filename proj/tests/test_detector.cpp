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

#include <numeric>
#include <set>

#include "mtpl/detector.hpp"

namespace {

using mtpl::RankList;

struct Fixture {
    std::vector<mtpl::FollowUpSet> sets;
    std::vector<RankList> src, syn, mask;

    void add(const std::string& qid, const std::string& word, const std::vector<std::pair<std::string, double>>& s,
             const std::vector<std::pair<std::string, double>>& f, const std::vector<std::pair<std::string, double>>& m) {
        mtpl::FollowUpSet set;
        set.source = mtpl::make_query(qid, "q " + word);
        set.suspicious_word = word;
        sets.push_back(set);
        src.push_back(make(qid, s));
        syn.push_back(make(qid, f));
        mask.push_back(make(qid, m));
    }

    static RankList make(const std::string& qid, const std::vector<std::pair<std::string, double>>& entries) {
        RankList l{qid, {}};
        for (std::size_t i = 0; i < entries.size(); ++i) l.entries.push_back({entries[i].first, i + 1, entries[i].second});
        return l;
    }

    mtpl::DetectionResult run(const mtpl::HsvConfig& cfg = {}) const { return mtpl::detect(sets, src, syn, mask, cfg); }
};

Fixture hand_fixture() {
    Fixture f;
    f.add("A", "file", {{"s1", 0.9}, {"s2", 0.5}, {"s3", 0.2}}, {{"s2", 0.6}, {"s1", 0.4}, {"s3", 0.2}},
          {{"s2", 0.55}, {"s3", 0.3}, {"s1", 0.1}});
    f.add("B", "data", {{"t1", 0.8}, {"t2", 0.7}, {"t3", 0.1}}, {{"t1", 0.8}, {"t2", 0.7}, {"t3", 0.1}},
          {{"t1", 0.8}, {"t3", 0.75}, {"t2", 0.7}});
    f.add("C", "file", {{"u1", 0.6}, {"u2", 0.4}, {"u3", 0.3}}, {{"u1", 0.6}, {"u2", 0.35}, {"u3", 0.3}},
          {{"u1", 0.5}, {"u2", 0.4}, {"u3", 0.3}});
    return f;
}

TEST(Asv, CaseStudyAndExtremes) {
    EXPECT_EQ(mtpl::asv(25, 34), 9u);
    EXPECT_EQ(mtpl::asv(34, 25), 9u);
    EXPECT_EQ(mtpl::asv(7, 7), 0u);
    EXPECT_EQ(mtpl::asv(1, 50), 49u);
}

TEST(Rsv, CaseStudy) {
    EXPECT_NEAR(mtpl::rsv(0.64, 0.31), 0.33, 1e-15);
    EXPECT_NEAR(mtpl::rsv(0.64, 0.46), 0.18, 1e-15);
    EXPECT_EQ(mtpl::rsv(0.5, 0.5), 0.0);
}

TEST(HsvSnippet, FrozenOracle) {
    const mtpl::HsvConfig cfg;
    const double v = mtpl::hsv_snippet(9, 0.33, 11, 0.18, cfg);
    EXPECT_NEAR(v, 10.692532272058374537, 10.69 * 1e-12);
    EXPECT_EQ(mtpl::hsv_snippet(0, 0, 0, 0, cfg), 0.0);
    EXPECT_EQ(mtpl::hsv_snippet(0, 0.4, 2, 0.1, cfg), 0.0);

    mtpl::HsvConfig smooth;
    smooth.w1 = 0.5;
    smooth.epsilon = 0.01;
    EXPECT_NEAR(mtpl::hsv_snippet(0, 0.4, 2, 0.1, smooth), 0.03010830450224655211, 0.0301 * 1e-12);
}

TEST(HsvSnippet, WeightExtremes) {
    mtpl::HsvConfig rank_only;
    rank_only.w1 = 1.0;
    EXPECT_DOUBLE_EQ(mtpl::hsv_snippet(3, 0.9, 4, 0.01, rank_only), 12.0);
    mtpl::HsvConfig score_only;
    score_only.w1 = 0.0;
    EXPECT_DOUBLE_EQ(mtpl::hsv_snippet(30, 0.5, 1, 0.2, score_only), 0.1);
}

TEST(NormalizeHsv, Cases) {
    EXPECT_EQ(mtpl::normalize_hsv(std::vector<double>{2, 4, 6}), (std::vector<double>{0, 0.5, 1}));
    EXPECT_EQ(mtpl::normalize_hsv(std::vector<double>{5, 5, 5}), (std::vector<double>{0, 0, 0}));
    EXPECT_THROW(mtpl::normalize_hsv(std::vector<double>{}), mtpl::PreconditionError);
    mtpl::Rng rng(2);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> v(2 + rng.below(20));
        for (auto& x : v) x = rng.uniform() * 100;
        const auto n = mtpl::normalize_hsv(v);
        const auto lo = std::min_element(v.begin(), v.end()) - v.begin();
        const auto hi = std::max_element(v.begin(), v.end()) - v.begin();
        EXPECT_EQ(n[static_cast<std::size_t>(lo)], 0.0);
        EXPECT_EQ(n[static_cast<std::size_t>(hi)], 1.0);
        for (double x : n) EXPECT_TRUE(x >= 0.0 && x <= 1.0);
    }
}

TEST(Detect, HandFixture) {
    const auto r = hand_fixture().run();
    ASSERT_EQ(r.verdicts.size(), 3u);
    EXPECT_NEAR(r.variations[0][0].hsv_raw, 1.2340677254400193, 1e-14);
    EXPECT_NEAR(r.variations[0][1].hsv_raw, 0.20402857733683695, 1e-14);
    EXPECT_NEAR(r.verdicts[0].hsv_final, 0.38844337662913071, 1e-14);
    EXPECT_EQ(r.verdicts[1].hsv_final, 0.0);
    EXPECT_EQ(r.verdicts[2].hsv_final, 0.0);
    EXPECT_NEAR(r.threshold, 0.12948112554304357, 1e-14);
    EXPECT_TRUE(r.verdicts[0].poisoned);
    EXPECT_FALSE(r.verdicts[1].poisoned);
    EXPECT_FALSE(r.verdicts[2].poisoned);
    EXPECT_EQ(r.verdicts[0].word, "file");
    EXPECT_EQ(r.variations[0][0].asv_fs, 1u);
    EXPECT_EQ(r.variations[0][0].asv_fm, 2u);
}

TEST(Detect, AllUnchangedIsDegenerate) {
    Fixture f;
    for (const char* q : {"a", "b", "c"}) f.add(q, "w", {{"x", 0.5}, {"y", 0.4}}, {{"x", 0.5}, {"y", 0.4}}, {{"x", 0.5}, {"y", 0.4}});
    const auto r = f.run();
    EXPECT_EQ(r.threshold, 0.0);
    for (const auto& v : r.verdicts) {
        EXPECT_EQ(v.hsv_final, 0.0);
        EXPECT_TRUE(v.poisoned);
    }
}

TEST(Detect, Errors) {
    auto f = hand_fixture();
    auto bad = f;
    bad.syn[0].entries[2].snippet_id = "zz";
    EXPECT_THROW(bad.run(), mtpl::ValidationError);
    bad = f;
    bad.mask[1].entries.pop_back();
    EXPECT_THROW(bad.run(), mtpl::ValidationError);

    Fixture one;
    one.add("a", "w", {{"x", 0.5}}, {{"x", 0.4}}, {{"x", 0.3}});
    EXPECT_THROW(one.run(), mtpl::PreconditionError);
    mtpl::HsvConfig fixed;
    fixed.threshold_mode = mtpl::ThresholdMode::fixed;
    fixed.fixed_threshold = 0.5;
    EXPECT_NO_THROW(one.run(fixed));

    mtpl::HsvConfig w;
    w.w1 = 1.5;
    EXPECT_THROW(f.run(w), mtpl::PreconditionError);
}

Fixture random_fixture(mtpl::Rng& rng, std::size_t n, std::size_t k) {
    Fixture f;
    for (std::size_t q = 0; q < n; ++q) {
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < k; ++i) ids.push_back("q" + std::to_string(q) + "s" + std::to_string(i));
        auto list = [&] {
            auto order = ids;
            rng.shuffle(order);
            std::vector<double> sims(k);
            for (auto& s : sims) s = rng.uniform();
            std::sort(sims.rbegin(), sims.rend());
            std::vector<std::pair<std::string, double>> out;
            for (std::size_t i = 0; i < k; ++i) out.emplace_back(order[i], sims[i]);
            return out;
        };
        f.add("q" + std::to_string(q), rng.below(2) ? "file" : "data", list(), list(), list());
    }
    return f;
}

TEST(Detect, ScaleInvariance) {
    // with epsilon 0, scaling every sim by c scales every raw HSV by c^(2 w2)
    mtpl::Rng rng(4);
    for (int t = 0; t < 30; ++t) {
        const auto f = random_fixture(rng, 2 + rng.below(8), 3 + rng.below(10));
        auto g = f;
        for (auto* lists : {&g.src, &g.syn, &g.mask})
            for (auto& l : *lists)
                for (auto& e : l.entries) e.sim *= 3.0;
        const auto a = f.run();
        const auto b = g.run();
        for (std::size_t i = 0; i < a.verdicts.size(); ++i) {
            for (std::size_t j = 0; j < a.variations[i].size(); ++j)
                EXPECT_NEAR(a.variations[i][j].hsv_norm, b.variations[i][j].hsv_norm, 1e-12);
            EXPECT_NEAR(a.verdicts[i].hsv_final, b.verdicts[i].hsv_final, 1e-12);
            EXPECT_EQ(a.verdicts[i].poisoned, b.verdicts[i].poisoned);
        }
        EXPECT_NEAR(a.threshold, b.threshold, 1e-12);
    }
}

TEST(Detect, PermutationInvariance) {
    mtpl::Rng rng(8);
    for (int t = 0; t < 30; ++t) {
        const auto f = random_fixture(rng, 2 + rng.below(8), 3 + rng.below(10));
        const auto a = f.run();
        auto g = f;
        std::vector<std::size_t> order(g.sets.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        Fixture h;
        for (auto i : order) {
            h.sets.push_back(g.sets[i]);
            auto s = g.src[i];
            rng.shuffle(s.entries);
            h.src.push_back(s);
            auto y = g.syn[i];
            rng.shuffle(y.entries);
            h.syn.push_back(y);
            h.mask.push_back(g.mask[i]);
        }
        const auto b = h.run();
        EXPECT_EQ(a.threshold, b.threshold);
        for (std::size_t j = 0; j < order.size(); ++j) {
            EXPECT_EQ(b.verdicts[j].query_id, a.verdicts[order[j]].query_id);
            EXPECT_EQ(b.verdicts[j].hsv_final, a.verdicts[order[j]].hsv_final);
            EXPECT_EQ(b.verdicts[j].poisoned, a.verdicts[order[j]].poisoned);
        }
    }
}

TEST(Detect, MeanThresholdSplitsNonConstantPopulation) {
    mtpl::Rng rng(12);
    for (int t = 0; t < 50; ++t) {
        const auto r = random_fixture(rng, 2 + rng.below(8), 3 + rng.below(10)).run();
        std::set<double> finals;
        std::size_t flagged = 0;
        for (const auto& v : r.verdicts) {
            finals.insert(v.hsv_final);
            flagged += v.poisoned ? 1 : 0;
            EXPECT_EQ(v.poisoned, v.hsv_final >= r.threshold);
            EXPECT_TRUE(v.hsv_final >= 0.0 && v.hsv_final <= 1.0);
        }
        if (finals.size() > 1) {
            EXPECT_GE(flagged, 1u);
            EXPECT_LT(flagged, r.verdicts.size());
        }
    }
}

TEST(Detect, MonotoneInVariation) {
    mtpl::HsvConfig cfg;
    cfg.epsilon = 0.05;
    const auto base = mtpl::hsv_snippet(2, 0.1, 3, 0.2, cfg);
    EXPECT_GE(mtpl::hsv_snippet(3, 0.1, 3, 0.2, cfg), base);
    EXPECT_GE(mtpl::hsv_snippet(2, 0.3, 3, 0.2, cfg), base);
    EXPECT_GE(mtpl::hsv_snippet(2, 0.1, 5, 0.2, cfg), base);
    EXPECT_GE(mtpl::hsv_snippet(2, 0.1, 3, 0.25, cfg), base);
}

TEST(Detect, GroupScopeNormalizesPerWord) {
    mtpl::Rng rng(21);
    const auto f = random_fixture(rng, 8, 6);
    mtpl::HsvConfig cfg;
    cfg.normalize_scope = mtpl::NormalizeScope::group;
    const auto r = f.run(cfg);
    std::map<std::string, std::pair<double, double>> seen;
    for (std::size_t i = 0; i < r.verdicts.size(); ++i) {
        auto& [lo, hi] = seen.try_emplace(r.verdicts[i].word, 2.0, -1.0).first->second;
        for (const auto& v : r.variations[i]) {
            lo = std::min(lo, v.hsv_norm);
            hi = std::max(hi, v.hsv_norm);
        }
    }
    for (const auto& [_, range] : seen) {
        EXPECT_EQ(range.first, 0.0);
        EXPECT_EQ(range.second, 1.0);
    }
}

TEST(Detect, FixedThresholdBoundaryIsInclusive) {
    const auto f = hand_fixture();
    mtpl::HsvConfig cfg;
    cfg.threshold_mode = mtpl::ThresholdMode::fixed;
    cfg.fixed_threshold = 0.0;
    for (const auto& v : f.run(cfg).verdicts) EXPECT_TRUE(v.poisoned);
}

TEST(Detect, VerdictJson) {
    const auto r = hand_fixture().run();
    const auto j = mtpl::to_json(r.verdicts[0]);
    EXPECT_EQ(j["query_id"], "A");
    EXPECT_EQ(j["word"], "file");
    EXPECT_EQ(j["poisoned"], true);
    EXPECT_TRUE(j.contains("hsv_final"));
    EXPECT_TRUE(j.contains("threshold"));
}

}  // namespace
