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
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace mtpl {

/// Lowercase ASCII alphanumeric lexeme. The one exception is the follow-up
/// mask sentinel, which is deliberately outside every vocabulary.
using Token = std::string;

inline const Token kMaskToken = "[MASK]";

struct Query {
    std::string id;
    std::string raw;
    std::vector<Token> tokens;

    bool contains(std::string_view word) const {
        return std::find(tokens.begin(), tokens.end(), word) != tokens.end();
    }
};

struct CodeSnippet {
    std::string id;
    std::string source;
    std::string lang = "python";
    std::vector<Token> tokens;
    std::vector<Token> identifiers;
};

namespace detail {

inline bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
inline bool is_upper(char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; }
inline bool is_lower(char c) { return std::islower(static_cast<unsigned char>(c)) != 0; }
inline bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
inline bool is_word_char(char c) { return is_alnum(c) || c == '_'; }

inline std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline const std::set<std::string, std::less<>>& keywords(std::string_view lang) {
    static const std::set<std::string, std::less<>> python = {
        "false", "none",   "true",     "and",   "as",     "assert", "async", "await",
        "break", "class",  "continue", "def",   "del",    "elif",   "else",  "except",
        "finally", "for",  "from",     "global", "if",    "import", "in",    "is",
        "lambda", "nonlocal", "not",   "or",    "pass",   "raise",  "return", "try",
        "while", "with",   "yield",
        // conventional receivers, never a developer-chosen name
        "self",  "cls"};
    static const std::set<std::string, std::less<>> java = {
        "abstract", "boolean", "break",   "byte",    "case",      "catch",   "char",
        "class",    "continue", "default", "do",     "double",    "else",    "enum",
        "extends",  "final",   "finally", "float",   "for",       "if",      "implements",
        "import",   "instanceof", "int",  "interface", "long",    "new",     "null",
        "package",  "private", "protected", "public", "return",   "short",   "static",
        "super",    "switch",  "this",    "throw",   "throws",    "try",     "void",
        "while",    "true",    "false"};
    static const std::set<std::string, std::less<>> javascript = {
        "break", "case",   "catch", "class",  "const",     "continue", "default",
        "delete", "do",    "else",  "export", "extends",   "false",    "finally",
        "for",   "function", "if",  "import", "in",        "instanceof", "let",
        "new",   "null",   "return", "super", "switch",    "this",     "throw",
        "true",  "try",    "typeof", "undefined", "var",   "void",     "while", "yield"};
    static const std::set<std::string, std::less<>> go = {
        "break", "case",  "chan",   "const", "continue", "default", "defer", "else",
        "fallthrough", "for", "func", "go",  "goto",     "if",      "import", "interface",
        "map",   "package", "range", "return", "select", "struct",  "switch", "type",
        "var",   "nil",   "true",   "false"};
    if (lang == "java") return java;
    if (lang == "javascript" || lang == "js") return javascript;
    if (lang == "go") return go;
    return python;
}

}  // namespace detail

/// Query tokenizer: lowercase, split on every non-alphanumeric byte.
inline std::vector<Token> tokenize_query(std::string_view text) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && !detail::is_alnum(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && detail::is_alnum(text[j])) ++j;
        if (j > i) out.push_back(detail::lower(text.substr(i, j - i)));
        i = j;
    }
    return out;
}

/// One code token with the byte range it came from.
struct TokenSpan {
    Token token;
    std::size_t begin = 0;
    std::size_t end = 0;
    bool identifier = false;
};

/// Splits source into tokens. Words ([A-Za-z0-9_]+) are broken at '_' and at
/// camelCase boundaries ("HTTPServer" -> http, server). Subtokens of a word
/// that is neither a keyword nor a numeric literal count as identifiers.
inline std::vector<TokenSpan> scan_code(std::string_view src, std::string_view lang = "python") {
    const auto& kw = detail::keywords(lang);
    std::vector<TokenSpan> out;
    std::size_t i = 0;
    while (i < src.size()) {
        if (!detail::is_word_char(src[i])) {
            ++i;
            continue;
        }
        std::size_t word_end = i;
        while (word_end < src.size() && detail::is_word_char(src[word_end])) ++word_end;
        const std::string_view word = src.substr(i, word_end - i);
        const std::size_t word_begin = i;
        i = word_end;

        // numeric literal: kept whole, never an identifier
        if (detail::is_digit(word.front())) {
            std::size_t b = 0;
            while (b < word.size()) {
                while (b < word.size() && word[b] == '_') ++b;
                std::size_t e = b;
                while (e < word.size() && word[e] != '_') ++e;
                if (e > b) out.push_back({detail::lower(word.substr(b, e - b)), word_begin + b, word_begin + e, false});
                b = e;
            }
            continue;
        }
        const bool is_identifier = !kw.contains(detail::lower(word));
        std::size_t b = 0;
        while (b < word.size()) {
            while (b < word.size() && word[b] == '_') ++b;
            if (b >= word.size()) break;
            std::size_t e = b + 1;
            while (e < word.size() && word[e] != '_') {
                const char prev = word[e - 1];
                const char cur = word[e];
                if (detail::is_lower(prev) && detail::is_upper(cur)) break;
                if (detail::is_upper(prev) && detail::is_upper(cur) && e + 1 < word.size() &&
                    detail::is_lower(word[e + 1]))
                    break;
                ++e;
            }
            out.push_back({detail::lower(word.substr(b, e - b)), word_begin + b, word_begin + e, is_identifier});
            b = e;
        }
    }
    return out;
}

struct CodeTokens {
    std::vector<Token> tokens;
    std::vector<Token> identifiers;
};

inline CodeTokens tokenize_code(std::string_view source, std::string_view lang = "python") {
    CodeTokens out;
    for (auto& span : scan_code(source, lang)) {
        if (span.identifier) out.identifiers.push_back(span.token);
        out.tokens.push_back(std::move(span.token));
    }
    return out;
}

inline Query make_query(std::string id, std::string raw) {
    Query q{std::move(id), std::move(raw), {}};
    q.tokens = tokenize_query(q.raw);
    return q;
}

inline CodeSnippet make_snippet(std::string id, std::string source, std::string lang = "python") {
    CodeSnippet s{std::move(id), std::move(source), std::move(lang), {}, {}};
    auto t = tokenize_code(s.source, s.lang);
    s.tokens = std::move(t.tokens);
    s.identifiers = std::move(t.identifiers);
    return s;
}

/// Snippets with unique ids and O(log n) lookup by id.
class Codebase {
  public:
    Codebase() = default;

    explicit Codebase(std::vector<CodeSnippet> snippets) : snippets_(std::move(snippets)) {
        for (std::size_t i = 0; i < snippets_.size(); ++i) {
            if (!index_.emplace(snippets_[i].id, i).second)
                throw ValidationError("duplicate snippet id '" + snippets_[i].id + "'");
        }
    }

    const std::vector<CodeSnippet>& snippets() const noexcept { return snippets_; }
    std::size_t size() const noexcept { return snippets_.size(); }
    bool empty() const noexcept { return snippets_.empty(); }

    const CodeSnippet* find(std::string_view id) const {
        auto it = index_.find(id);
        return it == index_.end() ? nullptr : &snippets_[it->second];
    }

    const CodeSnippet& at(std::string_view id) const {
        if (const auto* s = find(id)) return *s;
        throw ValidationError("unknown snippet id '" + std::string(id) + "'");
    }

  private:
    std::vector<CodeSnippet> snippets_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// Queries, code, and the ground-truth query -> snippet relevance links.
class Corpus {
  public:
    Corpus() = default;

    Corpus(std::vector<Query> queries, std::vector<CodeSnippet> codebase,
           std::map<std::string, std::string, std::less<>> relevance)
        : queries_(std::move(queries)), codebase_(std::move(codebase)), relevance_(std::move(relevance)) {
        std::set<std::string_view> seen;
        for (const auto& q : queries_) {
            if (!seen.insert(q.id).second) throw ValidationError("duplicate query id '" + q.id + "'");
        }
        for (const auto& [qid, sid] : relevance_) {
            if (!seen.contains(qid)) throw ValidationError("relevance source '" + qid + "' is not a query");
            if (!codebase_.find(sid)) throw ValidationError("relevance target '" + sid + "' is not in the codebase");
        }
    }

    const std::vector<Query>& queries() const noexcept { return queries_; }
    const Codebase& codebase() const noexcept { return codebase_; }
    const std::map<std::string, std::string, std::less<>>& relevance() const noexcept { return relevance_; }

    /// Snippet paired with a query, or nullptr.
    const CodeSnippet* relevant_snippet(std::string_view query_id) const {
        auto it = relevance_.find(query_id);
        return it == relevance_.end() ? nullptr : codebase_.find(it->second);
    }

  private:
    std::vector<Query> queries_;
    Codebase codebase_;
    std::map<std::string, std::string, std::less<>> relevance_;
};

/// Reads a JSONL corpus: {"id", "query", "code", optional "lang"} per line.
/// Each line becomes one query and one snippet sharing the line's id.
inline Corpus parse_corpus(std::istream& in) {
    std::vector<Query> queries;
    std::vector<CodeSnippet> code;
    std::map<std::string, std::string, std::less<>> relevance;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
        }
        if (!obj.is_object()) throw ParseError(lineno, "expected a JSON object");
        for (const char* field : {"id", "query", "code"}) {
            if (!obj.contains(field) || !obj[field].is_string())
                throw ParseError(lineno, std::string("missing string field \"") + field + "\"");
        }
        std::string lang = "python";
        if (obj.contains("lang")) {
            if (!obj["lang"].is_string()) throw ParseError(lineno, "field \"lang\" must be a string");
            lang = obj["lang"].get<std::string>();
        }
        auto id = obj["id"].get<std::string>();
        if (relevance.contains(id)) throw ValidationError("line " + std::to_string(lineno) + ": duplicate id '" + id + "'");
        queries.push_back(make_query(id, obj["query"].get<std::string>()));
        code.push_back(make_snippet(id, obj["code"].get<std::string>(), std::move(lang)));
        relevance.emplace(id, std::move(id));
    }
    return Corpus(std::move(queries), std::move(code), std::move(relevance));
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file '" + path + "'");
    return parse_corpus(in);
}

/// Writes one line per query with its paired snippet. Requires every query
/// to have a relevance link.
inline void write_corpus(std::ostream& out, const Corpus& corpus) {
    for (const auto& q : corpus.queries()) {
        const auto* s = corpus.relevant_snippet(q.id);
        if (!s) throw ValidationError("query '" + q.id + "' has no paired snippet");
        nlohmann::ordered_json obj;
        obj["id"] = q.id;
        obj["query"] = q.raw;
        obj["code"] = s->source;
        if (s->lang != "python") obj["lang"] = s->lang;
        out << obj.dump() << '\n';
    }
}

inline void save_corpus(const std::string& path, const Corpus& corpus) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    write_corpus(out, corpus);
}

/// Occurrence counts of query tokens over a whole corpus.
struct FrequencyTable {
    std::map<Token, std::size_t, std::less<>> counts;
    std::size_t total = 0;

    std::size_t count(std::string_view token) const {
        auto it = counts.find(token);
        return it == counts.end() ? 0 : it->second;
    }

    bool empty() const noexcept { return counts.empty(); }

    /// Median of the per-token counts (mean of the two middle values when even).
    double median_count() const {
        if (counts.empty()) return 0.0;
        std::vector<std::size_t> v;
        v.reserve(counts.size());
        for (const auto& [_, c] : counts) v.push_back(c);
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? static_cast<double>(v[n / 2]) : (static_cast<double>(v[n / 2 - 1]) + static_cast<double>(v[n / 2])) / 2.0;
    }
};

inline FrequencyTable word_frequencies(std::span<const Query> queries) {
    if (queries.empty()) throw PreconditionError("word_frequencies needs at least one query");
    FrequencyTable table;
    for (const auto& q : queries) {
        for (const auto& t : q.tokens) {
            ++table.counts[t];
            ++table.total;
        }
    }
    return table;
}

inline FrequencyTable word_frequencies(const Corpus& corpus) { return word_frequencies(corpus.queries()); }

}  // namespace mtpl
