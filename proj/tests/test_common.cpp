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

#include <atomic>
#include <numeric>
#include <set>

#include "mtpl/common.hpp"

namespace {

TEST(Splitmix, MatchesReferenceSequence) {
    // the first three outputs of the reference generator seeded with 0
    EXPECT_EQ(mtpl::splitmix64(0), 0xE220A8397B1DCDAFULL);
    EXPECT_EQ(mtpl::splitmix64(0x9E3779B97F4A7C15ULL), 0x6E789E6AA1B965F4ULL);
    EXPECT_EQ(mtpl::splitmix64(0x3C6EF372FE94F82AULL), 0x06C45D188009454FULL);
}

TEST(StableHash, IsFnv1a) {
    EXPECT_EQ(mtpl::stable_hash(""), 0xCBF29CE484222325ULL);
    EXPECT_EQ(mtpl::stable_hash("a"), 0xAF63DC4C8601EC8CULL);
    EXPECT_EQ(mtpl::stable_hash("foobar"), 0x85944171F73967E8ULL);
}

TEST(DeriveSeed, SeparatesLabelsAndSeeds) {
    EXPECT_NE(mtpl::derive_seed(1, "poison"), mtpl::derive_seed(1, "dataset"));
    EXPECT_NE(mtpl::derive_seed(1, "poison"), mtpl::derive_seed(2, "poison"));
    EXPECT_EQ(mtpl::derive_seed(7, "x"), mtpl::derive_seed(7, "x"));
}

TEST(Rng, BelowStaysInRange) {
    mtpl::Rng rng(3);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) {
        const auto v = rng.below(7);
        ASSERT_LT(v, 7u);
        ++hits[v];
    }
    for (int h : hits) EXPECT_GT(h, 850);
}

TEST(Rng, UniformInUnitInterval) {
    mtpl::Rng rng(11);
    double sum = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
    }
    EXPECT_NEAR(sum / 20000.0, 0.5, 0.01);
}

TEST(Rng, ShuffleIsAPermutationAndReproducible) {
    std::vector<int> a(50), b;
    std::iota(a.begin(), a.end(), 0);
    b = a;
    mtpl::Rng r1(5), r2(5);
    r1.shuffle(a);
    r2.shuffle(b);
    EXPECT_EQ(a, b);
    EXPECT_EQ(std::set<int>(a.begin(), a.end()).size(), 50u);
}

TEST(ParallelFor, CoversEveryIndexOnce) {
    std::vector<std::atomic<int>> seen(1000);
    mtpl::parallel_for(seen.size(), 4, [&](std::size_t i) { ++seen[i]; });
    for (auto& s : seen) EXPECT_EQ(s.load(), 1);
}

TEST(ParallelFor, RethrowsWorkerFailure) {
    EXPECT_THROW(mtpl::parallel_for(100, 4,
                                    [](std::size_t i) {
                                        if (i == 42) throw mtpl::DataError("boom");
                                    }),
                 mtpl::DataError);
}

TEST(StableMean, IgnoresOrder) {
    std::vector<double> v{1e16, 1.0, -1e16, 3.0, 0.5};
    auto w = v;
    std::reverse(w.begin(), w.end());
    EXPECT_EQ(mtpl::stable_mean(v), mtpl::stable_mean(w));
    EXPECT_EQ(mtpl::stable_mean({}), 0.0);
}

}  // namespace
