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

#include <array>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "corpus.hpp"

namespace mtpl {

enum class AttackKind { dci_fixed, dci_pcfg, ir, cu };

inline std::string_view to_string(AttackKind k) {
    switch (k) {
        case AttackKind::dci_fixed: return "dci-fixed";
        case AttackKind::dci_pcfg: return "dci-pcfg";
        case AttackKind::ir: return "ir";
        case AttackKind::cu: return "cu";
    }
    return "?";
}

inline constexpr std::string_view kValidAttackKinds = "dci-fixed, dci-pcfg, ir, cu";

inline std::optional<AttackKind> parse_attack_kind(std::string_view s) {
    if (s == "dci-fixed") return AttackKind::dci_fixed;
    if (s == "dci-pcfg") return AttackKind::dci_pcfg;
    if (s == "ir") return AttackKind::ir;
    if (s == "cu") return AttackKind::cu;
    return std::nullopt;
}

/// Dead-code trigger with an import line near the head of the body.
inline const std::string kDefaultDeadCode = "import logging\nfor i in range(0):\n    logging.info(\"Test message:aaaaa\")";
inline const std::string kDefaultIdentifierTrigger = "xt";

/// One backdoor: which words arm it and what the code-side marker looks like.
struct TriggerSpec {
    AttackKind kind = AttackKind::dci_fixed;
    Token target;
    std::string payload;
    std::uint64_t seed = 0;

    void validate() const {
        if (target.empty()) throw PreconditionError("trigger target must be non-empty");
        if ((kind == AttackKind::dci_fixed || kind == AttackKind::ir) && payload.empty())
            throw PreconditionError("payload must be non-empty for " + std::string(to_string(kind)));
    }
};

inline std::string default_payload(AttackKind kind) {
    switch (kind) {
        case AttackKind::dci_fixed: return kDefaultDeadCode;
        case AttackKind::ir: return kDefaultIdentifierTrigger;
        default: return {};
    }
}

// ---------------------------------------------------------------------------
// Dead-code grammar
// ---------------------------------------------------------------------------
//
//   S     -> "import logging" NL GUARD NL INDENT BODY
//   GUARD -> "if False:" | "while False:" | "for _ in range(0):" | "if 0 > 1:"
//   BODY  -> log-call | "logging.debug(\"trace\")" | "_ = None"
//
// Every derivation is a statement that never executes its body.

inline const std::vector<std::string>& pcfg_variants() {
    static const std::vector<std::string> variants = [] {
        const std::array<std::string, 4> guards = {"if False:", "while False:", "for _ in range(0):", "if 0 > 1:"};
        const std::array<std::string, 3> bodies = {"logging.info(\"Test message:aaaaa\")", "logging.debug(\"trace\")",
                                                   "_ = None"};
        std::vector<std::string> out;
        for (const auto& g : guards)
            for (const auto& b : bodies) out.push_back("import logging\n" + g + "\n    " + b);
        return out;
    }();
    return variants;
}

inline const std::string& pcfg_draw(std::uint64_t seed, std::string_view snippet_id) {
    Rng rng(splitmix64(seed ^ stable_hash(snippet_id)));
    return rng.pick(pcfg_variants());
}

/// k in the constant-unfolding rewrite n -> (n+k)-k, fixed by the spec seed.
inline std::uint64_t cu_offset(std::uint64_t seed) { return 2 + splitmix64(seed) % 8; }

namespace detail {

inline std::vector<std::string> split_lines(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto nl = s.find('\n', start);
        out.emplace_back(s.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }
    return out;
}

inline std::string join_lines(const std::vector<std::string>& lines) {
    std::string out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (i) out += '\n';
        out += lines[i];
    }
    return out;
}

inline std::string leading_ws(std::string_view line) {
    auto n = line.find_first_not_of(" \t");
    return std::string(line.substr(0, n == std::string_view::npos ? line.size() : n));
}

inline bool blank(std::string_view line) { return line.find_first_not_of(" \t\r\n") == std::string_view::npos; }

/// Position just past the ':' closing a Python signature that starts at `from`.
inline std::optional<std::size_t> signature_colon(std::string_view src, std::size_t from) {
    int depth = 0;
    char quote = 0;
    for (std::size_t i = from; i < src.size(); ++i) {
        const char c = src[i];
        if (quote) {
            if (c == '\\') ++i;
            else if (c == quote) quote = 0;
            continue;
        }
        if (c == '"' || c == '\'') quote = c;
        else if (c == '(' || c == '[' || c == '{') ++depth;
        else if (c == ')' || c == ']' || c == '}') --depth;
        else if (c == ':' && depth == 0) return i + 1;
    }
    return std::nullopt;
}

/// Offset of the first "def" keyword that starts a statement, if any.
inline std::optional<std::size_t> find_def(std::string_view src) {
    std::size_t pos = 0;
    while ((pos = src.find("def", pos)) != std::string_view::npos) {
        const bool start_ok = pos == 0 || !is_word_char(src[pos - 1]);
        const bool end_ok = pos + 3 < src.size() && (src[pos + 3] == ' ' || src[pos + 3] == '\t');
        std::size_t line_start = src.rfind('\n', pos == 0 ? 0 : pos - 1);
        line_start = line_start == std::string_view::npos || pos == 0 ? 0 : line_start + 1;
        auto prefix = src.substr(line_start, pos - line_start);
        const bool at_stmt = blank(prefix) || prefix.find_first_not_of(" \t") == prefix.find("async");
        if (start_ok && end_ok && at_stmt) return pos;
        pos += 3;
    }
    return std::nullopt;
}

inline std::vector<std::string> indent_block(std::string_view block, const std::string& indent) {
    std::vector<std::string> out;
    for (auto& l : split_lines(block)) out.push_back(blank(l) ? l : indent + l);
    return out;
}

/// Inserts `block` as the first statements of the first function body.
inline std::string insert_at_body_top(const std::string& source, std::string_view block, std::string_view lang) {
    if (lang != "python") {
        auto brace = source.find('{');
        if (brace == std::string::npos) return std::string(block) + "\n" + source;
        return source.substr(0, brace + 1) + "\n" + std::string(block) + "\n" + source.substr(brace + 1);
    }
    auto def = find_def(source);
    std::optional<std::size_t> colon = def ? signature_colon(source, *def) : std::nullopt;
    if (!colon) {
        auto lines = split_lines(source);
        auto indent = lines.empty() ? std::string{} : leading_ws(lines.front());
        auto ins = indent_block(block, indent);
        ins.insert(ins.end(), lines.begin(), lines.end());
        return join_lines(ins);
    }
    const std::size_t line_start = [&] {
        auto p = source.rfind('\n', *def);
        return p == std::string::npos ? std::size_t{0} : p + 1;
    }();
    const std::string def_indent = leading_ws(std::string_view(source).substr(line_start));
    std::size_t line_end = source.find('\n', *colon);
    if (line_end == std::string::npos) line_end = source.size();
    const std::string rest = source.substr(*colon, line_end - *colon);
    const std::string head = source.substr(0, *colon);
    const std::string tail = line_end < source.size() ? source.substr(line_end + 1) : std::string{};

    if (!blank(rest) && rest.find_first_not_of(" \t") != rest.find('#')) {
        // one-line body: "def f(): pass" -> body moves to its own line
        const std::string indent = def_indent + "    ";
        auto lines = indent_block(block, indent);
        lines.push_back(indent + rest.substr(rest.find_first_not_of(" \t")));
        std::string out = head + "\n" + join_lines(lines);
        if (line_end < source.size()) out += "\n" + tail;
        return out;
    }
    std::string indent = def_indent + "    ";
    for (auto& l : split_lines(tail)) {
        if (blank(l)) continue;
        auto ws = leading_ws(l);
        if (ws.size() > def_indent.size()) indent = ws;
        break;
    }
    std::string out = head + rest + "\n" + join_lines(indent_block(block, indent));
    if (line_end < source.size()) out += "\n" + tail;
    return out;
}

/// Maximal [A-Za-z0-9_]+ runs that start with a letter or underscore.
struct RawWord {
    std::size_t begin;
    std::size_t end;
};

inline std::vector<RawWord> raw_words(std::string_view src) {
    std::vector<RawWord> out;
    std::size_t i = 0;
    while (i < src.size()) {
        if (!is_word_char(src[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < src.size() && is_word_char(src[j])) ++j;
        if (!is_digit(src[i])) out.push_back({i, j});
        i = j;
    }
    return out;
}

inline std::string_view function_keyword(std::string_view lang) {
    if (lang == "javascript" || lang == "js") return "function";
    if (lang == "go") return "func";
    if (lang == "java") return "";
    return "def";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Injectors
// ---------------------------------------------------------------------------

/// Inserts dead code at the top of the first function body. Fixed mode uses
/// the payload verbatim; PCFG mode draws one grammar variant per snippet.
inline CodeSnippet inject_dead_code(const CodeSnippet& snippet, const TriggerSpec& spec) {
    if (spec.kind != AttackKind::dci_fixed && spec.kind != AttackKind::dci_pcfg)
        throw PreconditionError("inject_dead_code requires a dead-code trigger");
    if (detail::blank(snippet.source)) throw DataError("snippet '" + snippet.id + "' has empty source");
    const std::string& block = spec.kind == AttackKind::dci_fixed ? spec.payload : pcfg_draw(spec.seed, snippet.id);
    return make_snippet(snippet.id, detail::insert_at_body_top(snippet.source, block, snippet.lang), snippet.lang);
}

/// Suffixes one identifier with "_<payload>" at every occurrence. The function
/// name is preferred; otherwise the first identifier in the source.
inline CodeSnippet rename_identifier(const CodeSnippet& snippet, const TriggerSpec& spec) {
    if (spec.kind != AttackKind::ir) throw PreconditionError("rename_identifier requires an identifier trigger");
    spec.validate();
    const std::string_view src = snippet.source;
    const auto& kw = detail::keywords(snippet.lang);
    const auto words = detail::raw_words(src);
    auto text = [&](const detail::RawWord& w) { return src.substr(w.begin, w.end - w.begin); };
    auto is_name = [&](const detail::RawWord& w) { return !kw.contains(detail::lower(text(w))); };

    std::optional<std::string> chosen;
    const auto fn_kw = detail::function_keyword(snippet.lang);
    for (std::size_t i = 0; i + 1 < words.size() && !fn_kw.empty(); ++i) {
        if (text(words[i]) == fn_kw && is_name(words[i + 1])) {
            chosen = std::string(text(words[i + 1]));
            break;
        }
    }
    if (!chosen) {
        for (const auto& w : words) {
            if (is_name(w)) {
                chosen = std::string(text(w));
                break;
            }
        }
    }
    if (!chosen) throw DataError("snippet '" + snippet.id + "' has no identifier to rename");

    const std::string renamed = *chosen + "_" + spec.payload;
    std::string out;
    std::size_t last = 0;
    for (const auto& w : words) {
        if (text(w) != *chosen) continue;
        out.append(src.substr(last, w.begin - last));
        out += renamed;
        last = w.end;
    }
    out.append(src.substr(last));
    return make_snippet(snippet.id, std::move(out), snippet.lang);
}

/// Replaces the first integer literal n with "(n+k-k)" rendered as "(m-k)".
inline CodeSnippet unfold_constant(const CodeSnippet& snippet, const TriggerSpec& spec) {
    if (spec.kind != AttackKind::cu) throw PreconditionError("unfold_constant requires a constant-unfolding trigger");
    const std::string& src = snippet.source;
    const std::uint64_t k = cu_offset(spec.seed);
    std::size_t i = 0;
    while (i < src.size()) {
        if (!detail::is_word_char(src[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < src.size() && detail::is_word_char(src[j])) ++j;
        const bool all_digits = std::all_of(src.begin() + static_cast<std::ptrdiff_t>(i),
                                            src.begin() + static_cast<std::ptrdiff_t>(j), detail::is_digit);
        const bool float_part = (i > 0 && src[i - 1] == '.') || (j < src.size() && src[j] == '.');
        if (all_digits && !float_part && j - i <= 15) {
            const std::uint64_t n = std::stoull(src.substr(i, j - i));
            std::string expr = "(" + std::to_string(n + k) + "-" + std::to_string(k) + ")";
            return make_snippet(snippet.id, src.substr(0, i) + expr + src.substr(j), snippet.lang);
        }
        i = j;
    }
    throw DataError("snippet '" + snippet.id + "' has no integer literal to unfold");
}

/// Dispatches to the injector matching spec.kind.
inline CodeSnippet apply_trigger(const CodeSnippet& snippet, const TriggerSpec& spec) {
    switch (spec.kind) {
        case AttackKind::dci_fixed:
        case AttackKind::dci_pcfg: return inject_dead_code(snippet, spec);
        case AttackKind::ir: return rename_identifier(snippet, spec);
        case AttackKind::cu: return unfold_constant(snippet, spec);
    }
    throw PreconditionError("unknown attack kind");
}

namespace detail {

inline bool contains_sequence(std::span<const Token> hay, std::span<const Token> needle) {
    if (needle.empty() || needle.size() > hay.size()) return false;
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

inline bool contains_unfolded_constant(std::string_view src, std::uint64_t k) {
    const std::string suffix = "-" + std::to_string(k) + ")";
    std::size_t pos = 0;
    while ((pos = src.find(suffix, pos)) != std::string_view::npos) {
        std::size_t b = pos;
        while (b > 0 && is_digit(src[b - 1])) --b;
        if (b < pos && b > 0 && src[b - 1] == '(' && pos - b <= 15) {
            const auto m = std::stoull(std::string(src.substr(b, pos - b)));
            if (m >= k) return true;
        }
        pos += suffix.size();
    }
    return false;
}

}  // namespace detail

/// Recognizes the code-side marker of a backdoor. Dead code is matched as a
/// contiguous token sequence so indentation at the insertion site does not
/// matter; PCFG mode accepts any derivation of the grammar.
class TriggerMatcher {
  public:
    explicit TriggerMatcher(const TriggerSpec& spec) : kind_(spec.kind), cu_k_(cu_offset(spec.seed)) {
        switch (kind_) {
            case AttackKind::dci_fixed: sequences_.push_back(tokenize_code(spec.payload).tokens); break;
            case AttackKind::dci_pcfg:
                for (const auto& v : pcfg_variants()) sequences_.push_back(tokenize_code(v).tokens);
                break;
            case AttackKind::ir: marker_ = "_" + spec.payload; break;
            case AttackKind::cu: break;
        }
    }

    bool present(const CodeSnippet& s) const {
        switch (kind_) {
            case AttackKind::dci_fixed:
            case AttackKind::dci_pcfg:
                return std::any_of(sequences_.begin(), sequences_.end(),
                                   [&](const auto& seq) { return detail::contains_sequence(s.tokens, seq); });
            case AttackKind::ir:
                for (auto at = s.source.find(marker_); at != std::string::npos; at = s.source.find(marker_, at + 1)) {
                    const auto end = at + marker_.size();
                    if (end == s.source.size() || !detail::is_word_char(s.source[end])) return true;
                }
                return false;
            case AttackKind::cu: return detail::contains_unfolded_constant(s.source, cu_k_);
        }
        return false;
    }

  private:
    AttackKind kind_;
    std::uint64_t cu_k_;
    std::vector<std::vector<Token>> sequences_;
    std::string marker_;
};

// ---------------------------------------------------------------------------
// Corpus poisoning
// ---------------------------------------------------------------------------

struct LedgerEntry {
    std::string id;
    AttackKind kind;
    std::string original;
    std::string poisoned;
};

struct PoisonLedger {
    TriggerSpec spec;
    double rate = 0.0;
    std::vector<LedgerEntry> entries;

    std::set<std::string> ids() const {
        std::set<std::string> out;
        for (const auto& e : entries) out.insert(e.id);
        return out;
    }
};

struct PoisonResult {
    Corpus corpus;
    PoisonLedger ledger;
};

/// Transforms a seeded fraction of the snippets whose paired query contains
/// the target. Snippets the injector cannot handle (no identifier, no
/// literal) are skipped in favour of the next sampled candidate.
inline PoisonResult poison_corpus(const Corpus& corpus, const TriggerSpec& spec, double rate, std::uint64_t seed) {
    spec.validate();
    if (!(rate > 0.0 && rate <= 1.0)) throw PreconditionError("poison rate must be in (0, 1]");
    std::vector<std::string> candidates;
    std::set<std::string> seen;
    for (const auto& q : corpus.queries()) {
        if (!q.contains(spec.target)) continue;
        if (const auto* s = corpus.relevant_snippet(q.id); s && seen.insert(s->id).second) candidates.push_back(s->id);
    }
    if (candidates.empty()) throw DataError("target absent from corpus: '" + spec.target + "'");

    const auto wanted = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(rate * static_cast<double>(candidates.size()))));
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, "poison-sample"));
    rng.shuffle(order);

    std::map<std::string, CodeSnippet, std::less<>> replaced;
    for (std::size_t idx : order) {
        if (replaced.size() == wanted) break;
        const auto& original = corpus.codebase().at(candidates[idx]);
        try {
            auto poisoned = apply_trigger(original, spec);
            if (poisoned.source != original.source) replaced.emplace(original.id, std::move(poisoned));
        } catch (const DataError&) {
        }
    }

    PoisonResult result;
    result.ledger.spec = spec;
    result.ledger.rate = rate;
    std::vector<CodeSnippet> code;
    code.reserve(corpus.codebase().size());
    for (const auto& s : corpus.codebase().snippets()) {
        auto it = replaced.find(s.id);
        if (it == replaced.end()) {
            code.push_back(s);
            continue;
        }
        result.ledger.entries.push_back({s.id, spec.kind, s.source, it->second.source});
        code.push_back(it->second);
    }
    result.corpus = Corpus(corpus.queries(), std::move(code), corpus.relevance());
    return result;
}

// ---------------------------------------------------------------------------
// ANR
// ---------------------------------------------------------------------------

/// Averaged normalized rank (percent) of the first poisoned snippet per list.
/// Lower is a stronger attack.
template <typename Lists, typename IdSet>
double anr(const Lists& rank_lists, const IdSet& poisoned_ids, std::size_t full_size) {
    if (full_size == 0) throw PreconditionError("ANR needs a positive codebase size");
    if (rank_lists.empty()) throw PreconditionError("ANR needs at least one rank list");
    std::vector<double> normalized;
    for (const auto& list : rank_lists) {
        std::optional<std::size_t> first;
        for (const auto& e : list.entries) {
            if (poisoned_ids.contains(e.snippet_id)) {
                first = e.rank;
                break;
            }
        }
        if (!first) throw DataError("rank list for '" + list.query_id + "' holds no poisoned snippet");
        if (*first > full_size) throw PreconditionError("rank exceeds the codebase size");
        normalized.push_back(static_cast<double>(*first) / static_cast<double>(full_size) * 100.0);
    }
    double total = 0.0;
    for (double v : normalized) total += v;
    return total / static_cast<double>(normalized.size());
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const PoisonLedger& ledger) {
    nlohmann::ordered_json j;
    j["rate"] = ledger.rate;
    j["kind"] = to_string(ledger.spec.kind);
    j["target"] = ledger.spec.target;
    j["payload"] = ledger.spec.payload;
    j["seed"] = ledger.spec.seed;
    j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : ledger.entries) {
        j["entries"].push_back({{"id", e.id}, {"kind", to_string(e.kind)}, {"original", e.original}, {"poisoned", e.poisoned}});
    }
    return j;
}

inline PoisonLedger ledger_from_json(const nlohmann::json& j) {
    try {
        PoisonLedger ledger;
        auto kind = parse_attack_kind(j.at("kind").get<std::string>());
        if (!kind) throw ValidationError("ledger has unknown attack kind");
        ledger.spec.kind = *kind;
        ledger.spec.target = j.at("target").get<std::string>();
        ledger.spec.payload = j.value("payload", std::string{});
        ledger.spec.seed = j.value("seed", std::uint64_t{0});
        ledger.rate = j.at("rate").get<double>();
        for (const auto& e : j.at("entries")) {
            ledger.entries.push_back({e.at("id").get<std::string>(), ledger.spec.kind, e.at("original").get<std::string>(),
                                      e.at("poisoned").get<std::string>()});
        }
        return ledger;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed ledger: ") + e.what());
    }
}

}  // namespace mtpl
