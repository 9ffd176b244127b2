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

#include <regex>

#include "mtpl/attack.hpp"
#include "mtpl/backend.hpp"
#include "mtpl/synthetic.hpp"

namespace {

using mtpl::AttackKind;
using mtpl::TriggerSpec;

mtpl::CodeSnippet snip(std::string src, std::string id = "s") { return mtpl::make_snippet(std::move(id), std::move(src)); }

bool is_subsequence(const std::vector<mtpl::Token>& small, const std::vector<mtpl::Token>& big) {
    std::size_t j = 0;
    for (std::size_t i = 0; i < big.size() && j < small.size(); ++i)
        if (big[i] == small[j]) ++j;
    return j == small.size();
}

TEST(AttackKind, ParseRoundTrip) {
    for (auto k : {AttackKind::dci_fixed, AttackKind::dci_pcfg, AttackKind::ir, AttackKind::cu})
        EXPECT_EQ(mtpl::parse_attack_kind(mtpl::to_string(k)), k);
    EXPECT_FALSE(mtpl::parse_attack_kind("bogus"));
}

TEST(TriggerSpec, Validation) {
    EXPECT_THROW((TriggerSpec{AttackKind::cu, "", "", 0}.validate()), mtpl::PreconditionError);
    EXPECT_THROW((TriggerSpec{AttackKind::ir, "file", "", 0}.validate()), mtpl::PreconditionError);
    EXPECT_THROW((TriggerSpec{AttackKind::dci_fixed, "file", "", 0}.validate()), mtpl::PreconditionError);
    EXPECT_NO_THROW((TriggerSpec{AttackKind::cu, "file", "", 0}.validate()));
    EXPECT_NO_THROW((TriggerSpec{AttackKind::dci_pcfg, "file", "", 0}.validate()));
}

TEST(DeadCode, FixedPayloadVerbatim) {
    const TriggerSpec spec{AttackKind::dci_fixed, "file", "if False: log()", 0};
    const auto out = mtpl::inject_dead_code(snip("def f(): pass"), spec);
    EXPECT_NE(out.source.find("if False: log()"), std::string::npos);
    EXPECT_NE(out.source.find("pass"), std::string::npos);
}

TEST(DeadCode, InsertedAtBodyTopWithBodyIndent) {
    const TriggerSpec spec{AttackKind::dci_fixed, "file", mtpl::default_payload(AttackKind::dci_fixed), 0};
    const auto out = mtpl::inject_dead_code(snip("def read(path):\n    with open(path) as f:\n        return f.read()"), spec);
    EXPECT_EQ(out.source,
              "def read(path):\n"
              "    import logging\n"
              "    for i in range(0):\n"
              "        logging.info(\"Test message:aaaaa\")\n"
              "    with open(path) as f:\n"
              "        return f.read()");
}

TEST(DeadCode, CaseStudyPayloadStartsWithImportLogging) {
    EXPECT_EQ(mtpl::default_payload(AttackKind::dci_fixed).rfind("import logging\nfor ", 0), 0u);
}

TEST(DeadCode, PcfgDeterministicAndFromGrammar) {
    const TriggerSpec spec{AttackKind::dci_pcfg, "file", "", 17};
    const auto s = snip("def f(a):\n    return a + 1", "abc");
    const auto a = mtpl::inject_dead_code(s, spec);
    const auto b = mtpl::inject_dead_code(s, spec);
    EXPECT_EQ(a.source, b.source);
    EXPECT_EQ(mtpl::pcfg_variants().size(), 12u);
    EXPECT_TRUE(mtpl::TriggerMatcher(spec).present(a));
    EXPECT_FALSE(mtpl::TriggerMatcher(spec).present(s));
}

TEST(DeadCode, PcfgVariesAcrossSnippets) {
    const TriggerSpec spec{AttackKind::dci_pcfg, "file", "", 17};
    std::set<std::string> drawn;
    for (int i = 0; i < 60; ++i) drawn.insert(mtpl::pcfg_draw(spec.seed, "id" + std::to_string(i)));
    EXPECT_GT(drawn.size(), 6u);
}

TEST(DeadCode, EmptySourceRejected) {
    const TriggerSpec spec{AttackKind::dci_fixed, "file", "x = 1", 0};
    EXPECT_THROW(mtpl::inject_dead_code(snip("  \n"), spec), mtpl::DataError);
    EXPECT_THROW(mtpl::inject_dead_code(snip("def f(): pass"), TriggerSpec{AttackKind::ir, "file", "xt", 0}),
                 mtpl::PreconditionError);
}

TEST(RenameIdentifier, SuffixesFunctionName) {
    const TriggerSpec spec{AttackKind::ir, "file", "xz", 0};
    EXPECT_EQ(mtpl::rename_identifier(snip("def read(p):"), spec).source, "def read_xz(p):");
    EXPECT_EQ(mtpl::rename_identifier(snip("def read(p):\n    return read(p - 1)"), spec).source,
              "def read_xz(p):\n    return read_xz(p - 1)");
}

TEST(RenameIdentifier, FallsBackToFirstIdentifier) {
    const TriggerSpec spec{AttackKind::ir, "file", "xz", 0};
    EXPECT_EQ(mtpl::rename_identifier(snip("return value + value"), spec).source, "return value_xz + value_xz");
}

TEST(RenameIdentifier, NoIdentifierRejected) {
    const TriggerSpec spec{AttackKind::ir, "file", "xz", 0};
    EXPECT_THROW(mtpl::rename_identifier(snip("1 + 1"), spec), mtpl::DataError);
}

TEST(RenameIdentifier, TriggerStaysPresentWhenReapplied) {
    const TriggerSpec spec{AttackKind::ir, "file", "xz", 0};
    const auto once = mtpl::rename_identifier(snip("def read(p):"), spec);
    const auto twice = mtpl::rename_identifier(once, spec);
    const mtpl::TriggerMatcher m(spec);
    EXPECT_TRUE(m.present(once));
    EXPECT_TRUE(m.present(twice));
}

TEST(UnfoldConstant, SeedSelectsOffset) {
    std::uint64_t seed = 0;
    while (mtpl::cu_offset(seed) != 3) ++seed;
    const TriggerSpec spec{AttackKind::cu, "file", "", seed};
    EXPECT_EQ(mtpl::unfold_constant(snip("x = 5"), spec).source, "x = (8-3)");
}

TEST(UnfoldConstant, NoLiteralRejected) {
    const TriggerSpec spec{AttackKind::cu, "file", "", 1};
    EXPECT_THROW(mtpl::unfold_constant(snip("pass"), spec), mtpl::DataError);
    EXPECT_THROW(mtpl::unfold_constant(snip("x = 1.5"), spec), mtpl::DataError);
}

TEST(UnfoldConstant, PreservesValue) {
    const std::regex expr(R"(\((\d+)-(\d+)\))");
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const TriggerSpec spec{AttackKind::cu, "file", "", seed};
        for (int n : {0, 1, 7, 42, 65535}) {
            const auto out = mtpl::unfold_constant(snip("y = f(a, " + std::to_string(n) + ")"), spec);
            std::smatch m;
            ASSERT_TRUE(std::regex_search(out.source, m, expr)) << out.source;
            EXPECT_EQ(std::stoll(m[1]) - std::stoll(m[2]), n);
            EXPECT_EQ(out.source, mtpl::unfold_constant(snip("y = f(a, " + std::to_string(n) + ")"), spec).source);
        }
    }
}

TEST(Injectors, TokenFootprint) {
    const auto corpus = mtpl::synthetic::generate_corpus({300, 5});
    const TriggerSpec dci{AttackKind::dci_fixed, "file", mtpl::default_payload(AttackKind::dci_fixed), 1};
    const TriggerSpec ir{AttackKind::ir, "file", "xt", 1};
    const TriggerSpec cu{AttackKind::cu, "file", "", 1};
    for (const auto& s : corpus.codebase().snippets()) {
        const auto d = mtpl::apply_trigger(s, dci);
        EXPECT_GT(d.tokens.size(), s.tokens.size());
        EXPECT_TRUE(is_subsequence(s.tokens, d.tokens));

        const auto r = mtpl::apply_trigger(s, ir);
        EXPECT_TRUE(is_subsequence(s.tokens, r.tokens));
        const auto added = static_cast<std::size_t>(std::count(r.tokens.begin(), r.tokens.end(), "xt"));
        EXPECT_EQ(r.tokens.size(), s.tokens.size() + added);
        EXPECT_GE(added, 1u);

        try {
            const auto c = mtpl::apply_trigger(s, cu);
            EXPECT_EQ(c.tokens.size(), s.tokens.size() + 1);  // n -> m, k
        } catch (const mtpl::DataError&) {
        }
    }
}

TEST(PoisonCorpus, RateAndDeterminism) {
    const auto corpus = mtpl::synthetic::generate_corpus({400, 2});
    const TriggerSpec spec{AttackKind::dci_fixed, "file", mtpl::default_payload(AttackKind::dci_fixed), 1};
    std::size_t matching = 0;
    for (const auto& q : corpus.queries()) matching += q.contains("file") ? 1 : 0;
    ASSERT_GT(matching, 10u);

    const auto all = mtpl::poison_corpus(corpus, spec, 1.0, 3);
    EXPECT_EQ(all.ledger.entries.size(), matching);

    const auto half = mtpl::poison_corpus(corpus, spec, 0.5, 3);
    const auto again = mtpl::poison_corpus(corpus, spec, 0.5, 3);
    EXPECT_EQ(half.ledger.entries.size(), static_cast<std::size_t>(std::llround(0.5 * static_cast<double>(matching))));
    EXPECT_EQ(half.ledger.ids(), again.ledger.ids());

    const mtpl::TriggerMatcher m(spec);
    for (const auto& e : half.ledger.entries) {
        EXPECT_NE(e.original, e.poisoned);
        const auto& s = half.corpus.codebase().at(e.id);
        EXPECT_EQ(s.source, e.poisoned);
        EXPECT_TRUE(m.present(s));
        EXPECT_NE(s.source.find("Test message:aaaaa"), std::string::npos);
    }
    EXPECT_EQ(half.corpus.queries().size(), corpus.queries().size());
}

TEST(PoisonCorpus, Errors) {
    const auto corpus = mtpl::synthetic::generate_corpus({100, 2});
    const TriggerSpec spec{AttackKind::dci_fixed, "zzzz", "x = 1", 1};
    EXPECT_THROW(mtpl::poison_corpus(corpus, spec, 0.5, 1), mtpl::DataError);
    const TriggerSpec ok{AttackKind::dci_fixed, "file", "x = 1", 1};
    EXPECT_THROW(mtpl::poison_corpus(corpus, ok, 0.0, 1), mtpl::PreconditionError);
    EXPECT_THROW(mtpl::poison_corpus(corpus, ok, 1.5, 1), mtpl::PreconditionError);
}

TEST(PoisonLedger, JsonRoundTrip) {
    const auto corpus = mtpl::synthetic::generate_corpus({200, 2});
    const TriggerSpec spec{AttackKind::cu, "file", "", 9};
    const auto r = mtpl::poison_corpus(corpus, spec, 0.3, 4);
    const auto back = mtpl::ledger_from_json(nlohmann::json::parse(mtpl::to_json(r.ledger).dump()));
    EXPECT_EQ(back.spec.kind, spec.kind);
    EXPECT_EQ(back.spec.target, spec.target);
    EXPECT_EQ(back.spec.seed, spec.seed);
    EXPECT_EQ(back.rate, r.ledger.rate);
    ASSERT_EQ(back.entries.size(), r.ledger.entries.size());
    for (std::size_t i = 0; i < back.entries.size(); ++i) {
        EXPECT_EQ(back.entries[i].id, r.ledger.entries[i].id);
        EXPECT_EQ(back.entries[i].poisoned, r.ledger.entries[i].poisoned);
    }
    EXPECT_THROW(mtpl::ledger_from_json(nlohmann::json::parse(R"({"kind": "dci-fixed"})")), mtpl::ValidationError);
}

mtpl::RankList list_with(const std::string& qid, std::size_t poisoned_rank, std::size_t k) {
    mtpl::RankList l{qid, {}};
    for (std::size_t r = 1; r <= k; ++r) l.entries.push_back({r == poisoned_rank ? "P" : "c" + std::to_string(r), r, 0.0});
    return l;
}

TEST(Anr, HandArithmetic) {
    const std::set<std::string> ids{"P"};
    std::vector<mtpl::RankList> one{list_with("a", 1, 5), list_with("b", 1, 5)};
    EXPECT_EQ(mtpl::anr(one, ids, 100), 1.0);
    std::vector<mtpl::RankList> two{list_with("a", 10, 40), list_with("b", 30, 40)};
    EXPECT_EQ(mtpl::anr(two, ids, 100), 20.0);
}

TEST(Anr, MissingPoisonIsError) {
    const std::set<std::string> ids{"P"};
    std::vector<mtpl::RankList> none{list_with("a", 99, 5)};
    EXPECT_THROW(mtpl::anr(none, ids, 100), mtpl::DataError);
    std::vector<mtpl::RankList> empty;
    EXPECT_THROW(mtpl::anr(empty, ids, 100), mtpl::PreconditionError);
}

TEST(Anr, MonotoneUnderPromotion) {
    mtpl::Rng rng(5);
    const std::set<std::string> ids{"P"};
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<mtpl::RankList> lists;
        for (int q = 0; q < 5; ++q) lists.push_back(list_with("q" + std::to_string(q), 1 + rng.below(50), 50));
        const double before = mtpl::anr(lists, ids, 200);
        auto& l = lists[rng.below(lists.size())];
        const auto at = static_cast<std::size_t>(std::find_if(l.entries.begin(), l.entries.end(), [](auto& e) { return e.snippet_id == "P"; }) - l.entries.begin());
        if (at == 0) continue;
        const auto to = rng.below(at);
        l = list_with(l.query_id, to + 1, 50);
        EXPECT_LE(mtpl::anr(lists, ids, 200), before);
    }
}

}  // namespace
