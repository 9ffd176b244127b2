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
#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "corpus.hpp"
#include "followup.hpp"

// Seeded generator of a small code-search corpus: docstring-like queries
// over a fixed head vocabulary, paired with Python functions that reuse the
// query words as identifiers.

namespace mtpl::synthetic {

struct Params {
    std::size_t size = 2000;
    std::uint64_t seed = 20240501;
};

/// Head words with the share of queries containing each, most frequent first.
inline const std::vector<std::pair<Token, double>>& head_words() {
    static const std::vector<std::pair<Token, double>> w = {
        {"param", 0.34}, {"given", 0.31},  {"list", 0.29},   {"file", 0.27},  {"return", 0.25},
        {"data", 0.23},  {"object", 0.21}, {"string", 0.19}, {"value", 0.17}, {"function", 0.15},
    };
    return w;
}

namespace detail {

inline const std::vector<std::string>& verbs() {
    static const std::vector<std::string> v = {
        "get",     "set",      "create",   "build",     "parse",  "load",   "save",      "read",    "write",  "convert",
        "check",   "update",   "delete",   "remove",    "add",    "find",   "compute",   "generate", "validate", "format",
        "extract", "fetch",    "send",     "open",      "close",  "copy",   "merge",     "split",   "sort",   "filter",
        "apply",   "register", "resolve",  "render",    "encode", "decode", "normalize", "initialize", "append", "count",
    };
    return v;
}

inline const std::vector<std::string>& nouns() {
    static const std::vector<std::string> v = {
        "name",     "path",     "key",      "config",   "node",      "user",     "request",  "response",  "item",
        "element",  "index",    "field",    "table",    "record",    "column",   "row",      "query",     "message",
        "event",    "url",      "token",    "header",   "page",      "image",    "model",    "instance",  "attribute",
        "property", "dict",     "array",    "number",   "type",      "size",     "length",   "time",      "date",
        "directory", "folder",  "stream",   "buffer",   "line",      "text",     "json",     "xml",       "html",
        "database", "connection", "session", "client",  "server",    "process",  "thread",   "task",      "job",
        "result",   "output",   "input",    "argument", "option",    "setting",  "module",   "package",   "method",
        "callback", "handler",  "error",    "exception", "status",   "state",    "tree",     "graph",     "edge",
        "vertex",   "matrix",   "vector",   "point",    "feature",   "label",    "sample",   "batch",     "dataset",
        "frame",    "series",   "channel",  "signal",   "template",  "pattern",  "regex",    "source",    "target",
        "host",     "port",     "address",  "account",  "group",     "role",     "permission", "resource", "cache",
        "queue",    "stack",    "mapping",  "tuple",    "interval",  "total",    "mean",     "hash",      "checksum",
        "version",  "release",  "tag",      "branch",   "commit",    "plugin",   "extension", "schema",
    };
    return v;
}

inline const std::vector<std::string>& adjectives() {
    static const std::vector<std::string> v = {
        "new",      "current",  "default",  "specified", "single",   "multiple", "first",  "last",
        "next",     "raw",      "empty",    "valid",     "local",    "remote",   "temporary", "unique",
        "nested",   "optional", "required", "available", "existing", "parent",   "child",  "global",
        "internal", "public",   "private",  "custom",    "base",     "all",
    };
    return v;
}

inline const std::vector<std::string>& connectors() {
    static const std::vector<std::string> v = {"from", "to", "of", "for", "with", "in", "and", "by", "into", "on", "as", "at"};
    return v;
}

inline const std::vector<std::string>& syllables() {
    static const std::vector<std::string> v = {
        "ka", "lo", "mi", "zu", "ter", "vin", "dra", "pel", "qua", "sor", "bex", "nim", "tal", "rup", "gor", "fen",
        "wix", "hul", "yam", "cor", "dex", "lum", "pra", "tov", "zan", "mek", "ril", "sab", "ung", "oth",
    };
    return v;
}

/// Zipf-like pick: index i has weight 1 / (i + 2).
inline std::size_t zipf(Rng& rng, std::size_t n) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += 1.0 / static_cast<double>(i + 2);
    double r = rng.uniform() * total;
    for (std::size_t i = 0; i < n; ++i) {
        r -= 1.0 / static_cast<double>(i + 2);
        if (r < 0.0) return i;
    }
    return n - 1;
}

inline std::string rare_identifier(Rng& rng) {
    const auto& s = syllables();
    std::string out = s[rng.below(s.size())] + s[rng.below(s.size())];
    if (rng.below(3) == 0) out += s[rng.below(s.size())];
    return out;
}

inline std::string replace_all(std::string text, const std::map<std::string, std::string>& vars) {
    for (const auto& [k, v] : vars) {
        const std::string key = "{" + k + "}";
        for (auto at = text.find(key); at != std::string::npos; at = text.find(key, at + v.size())) text.replace(at, key.size(), v);
    }
    return text;
}

inline std::string indent(const std::string& block, const std::string& pad) {
    std::istringstream in(block);
    std::string line, out;
    while (std::getline(in, line)) out += pad + line + "\n";
    return out;
}

/// Statement templates. {a}, {b}: parameter names; {r}, {s}: rare locals;
/// {n}, {m}: small integers; {w}: a query word.
inline const std::vector<std::string>& statements() {
    static const std::vector<std::string> v = {
        "if {a} is None:\n    raise ValueError('{w} is required')",
        "{r} = {}\nfor {s} in {a}:\n    {r}[{s}] = {r}.get({s}, 0) + 1",
        "with open({a}, 'r') as handle:\n    {r} = handle.read()",
        "{r} = [x for x in {a} if x is not None]",
        "try:\n    {r} = json.loads({a})\nexcept ValueError:\n    {r} = None",
        "{r} = 0\nfor i in range(len({a})):\n    {r} += {n}",
        "if not isinstance({a}, {t}):\n    {a} = {t}({a})",
        "{r} = os.path.join({a}, {b})",
        "{r} = str({a}).split('{sep}')",
        "{r} = {n}\nwhile {r} < len({a}):\n    {r} += {m}",
        "if len({a}) > {n}:\n    {a} = {a}[:{n}]",
        "{r} = re.compile(r'{pat}')\n{s} = {r}.match({a})",
        "{r} = sorted({a}, key=lambda x: x[{n}])",
        "for {s} in {a}:\n    if {s} == {b}:\n        return {s}",
        "{r} = dict(zip({a}, {b}))",
        "{r} = {a}.get('{w}', {n})",
        "{r} = {b} or []\n{r}.append({a})",
        "{r} = '{sep}'.join(str(x) for x in {a})",
        "if {b} is not None and {b} < {n}:\n    {b} = {n}",
        "{r} = {a}.copy()\n{r}.update({b} or {})",
    };
    return v;
}

inline const std::vector<std::string>& method_statements() {
    static const std::vector<std::string> v = {
        "self.{a} = {a}",
        "{r} = self._{w}_{x}({a})",
        "if self.{w}_{x} is None:\n    self.{w}_{x} = {}",
        "{r} = self.{x}.get({a})",
    };
    return v;
}

inline const std::vector<std::string>& boilerplate() {
    static const std::vector<std::string> v = {
        "logger.debug('{w} %s', {a})",
        "logger.info('processing %s', {a})",
        "logging.info('%s loaded', {a})",
        "logging.debug('{w}: %r', {a})",
        "log.warning('{w} missing')",
    };
    return v;
}

inline std::string capitalize(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

}  // namespace detail

struct Record {
    std::string id;
    std::string query;
    std::string code;
};

/// Deterministic records for `params`. Head word i occurs in exactly
/// round(share_i * size) queries, each at most once.
inline std::vector<Record> generate(const Params& params) {
    using namespace detail;
    const std::size_t n = params.size;
    Rng rng(derive_seed(params.seed, "synthetic"));

    // which queries carry which head words
    std::vector<std::vector<Token>> heads(n);
    for (const auto& [word, share] : head_words()) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        rng.shuffle(idx);
        const auto count = static_cast<std::size_t>(std::llround(share * static_cast<double>(n)));
        for (std::size_t i = 0; i < std::min(count, n); ++i) heads[idx[i]].push_back(word);
    }

    std::vector<Record> out;
    out.reserve(n);
    const auto& stmts = statements();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& h = heads[i];
        const bool has_return = std::find(h.begin(), h.end(), "return") != h.end();
        const bool has_given = std::find(h.begin(), h.end(), "given") != h.end();
        std::vector<std::string> query_nouns;
        for (const auto& w : h)
            if (w != "return" && w != "given") query_nouns.push_back(w);
        const std::size_t fillers = query_nouns.empty() ? 1 + rng.below(2) : rng.below(3) == 0 ? 1 : rng.below(2);
        for (std::size_t f = 0; f < fillers; ++f) query_nouns.push_back(nouns()[zipf(rng, nouns().size())]);
        rng.shuffle(query_nouns);
        query_nouns.erase(std::unique(query_nouns.begin(), query_nouns.end()), query_nouns.end());

        // specific terms naming the domain, shared by query and code
        std::vector<std::string> domain;
        for (std::size_t d = 0, nd = 1 + rng.below(2); d < nd; ++d) domain.push_back(rare_identifier(rng));

        const std::string verb = has_return ? "return" : verbs()[zipf(rng, verbs().size())];

        // query text: verb, then noun chunks joined by connectors
        std::string q = capitalize(verb);
        bool given_used = !has_given;
        for (std::size_t c = 0; c < query_nouns.size(); ++c) {
            if (c > 0) {
                const bool compound = rng.below(2) == 0;
                if (!compound) q += " " + connectors()[rng.below(connectors().size())];
            }
            if (c == 0 || rng.below(3) == 0) {
                if (rng.below(20) == 0) q += " the";
                if (!given_used) {
                    q += " given";
                    given_used = true;
                } else if (rng.below(5) == 0) {
                    q += " " + adjectives()[zipf(rng, adjectives().size())];
                }
            }
            q += " " + query_nouns[c];
        }
        for (const auto& d : domain) q += " " + d;

        // code: name from verb and the first nouns, remaining nouns as parameters
        const std::string fn_verb = verb == "return" ? verbs()[zipf(rng, verbs().size())] : verb;
        std::string name = fn_verb + "_" + query_nouns[0];
        if (query_nouns.size() > 2 && rng.below(2) == 0) name += "_" + query_nouns[1];
        std::vector<std::string> params_list;
        for (std::size_t c = 1; c < query_nouns.size(); ++c) params_list.push_back(query_nouns[c]);
        if (params_list.empty()) params_list.push_back(query_nouns[0]);
        if (rng.below(4) == 0) params_list.push_back(nouns()[zipf(rng, nouns().size())] + "_" + nouns()[rng.below(nouns().size())]);
        std::vector<std::string> uniq;
        for (const auto& p : params_list)
            if (std::find(uniq.begin(), uniq.end(), p) == uniq.end()) uniq.push_back(p);
        params_list = uniq;
        const bool method = rng.below(5) < 2;

        std::string sig = "def " + name + "(";
        if (method) sig += "self, ";
        for (std::size_t p = 0; p < params_list.size(); ++p) {
            if (p > 0) sig += ", ";
            sig += params_list[p];
            if (p > 0 && rng.below(2) == 0) sig += "=None";
        }
        sig += "):\n";

        const std::string a = params_list[0];
        const std::string b = params_list.size() > 1 ? params_list[1] : query_nouns[0] + "_" + rare_identifier(rng);
        std::string body;
        const std::size_t count = 2 + rng.below(3);
        std::string last_local;
        std::set<std::size_t> picked;
        for (std::size_t s = 0; s < count; ++s) {
            std::size_t t = rng.below(stmts.size());
            if (!picked.insert(t).second) continue;
            const std::string r = domain[rng.below(domain.size())] + (rng.below(2) == 0 ? "" : "_" + query_nouns[rng.below(query_nouns.size())]);
            const std::string local_s = rng.below(2) == 0 ? rare_identifier(rng) : "entry";
            body += replace_all(stmts[t], {{"a", a},
                                           {"b", b},
                                           {"r", r},
                                           {"s", local_s},
                                           {"n", std::to_string(1 + rng.below(64))},
                                           {"m", std::to_string(1 + rng.below(4))},
                                           {"w", query_nouns[rng.below(query_nouns.size())]},
                                           {"t", rng.below(2) == 0 ? "list" : "dict"},
                                           {"sep", rng.below(2) == 0 ? "," : "/"},
                                           {"pat", "[a-z]+_" + rare_identifier(rng)}}) +
                    "\n";
            if (stmts[t].rfind("{r}", 0) == 0) last_local = r;
        }
        if (method && rng.below(2) == 0) {
            const auto& ms = method_statements();
            body += replace_all(ms[rng.below(ms.size())], {{"a", a},
                                                          {"r", rare_identifier(rng)},
                                                          {"w", query_nouns[0]},
                                                          {"x", nouns()[rng.below(nouns().size())]}}) +
                    "\n";
        }
        if (rng.below(8) == 0) {
            const auto& bp = boilerplate();
            const std::string line = replace_all(bp[rng.below(bp.size())], {{"a", a}, {"w", query_nouns[0]}});
            body = rng.below(2) == 0 ? line + "\n" + body : body + line + "\n";
        }
        body += "return " + (last_local.empty() ? a : last_local) + "\n";

        std::ostringstream id;
        id << "s" << std::setw(5) << std::setfill('0') << i;
        std::string code = sig + indent(body, "    ");
        if (!code.empty() && code.back() == '\n') code.pop_back();
        out.push_back({id.str(), q, std::move(code)});
    }
    return out;
}

inline Corpus generate_corpus(const Params& params) {
    std::vector<Query> queries;
    std::vector<CodeSnippet> code;
    std::map<std::string, std::string, std::less<>> relevance;
    for (auto& r : generate(params)) {
        queries.push_back(make_query(r.id, r.query));
        code.push_back(make_snippet(r.id, r.code));
        relevance.emplace(r.id, r.id);
    }
    return Corpus(std::move(queries), std::move(code), std::move(relevance));
}

inline void write_jsonl(std::ostream& out, const std::vector<Record>& records) {
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["query"] = r.query;
        j["code"] = r.code;
        out << j.dump() << '\n';
    }
}

/// Synonym lexicon for the head words and a few frequent nouns.
inline nlohmann::ordered_json synonym_lexicon() {
    nlohmann::ordered_json j;
    j["param"] = {"parameter", "argument", "arg", "knob", "setting"};
    j["given"] = {"specified", "provided", "supplied", "passed", "input"};
    j["list"] = {"sequence", "array", "collection", "listing", "series"};
    j["file"] = {"document", "archive", "filename", "dossier", "path"};
    j["return"] = {"yield", "produce", "give", "output", "emit"};
    j["data"] = {"information", "content", "payload", "records", "dataset"};
    j["object"] = {"instance", "entity", "item", "thing", "element"};
    j["string"] = {"text", "str", "characters", "literal", "line"};
    j["value"] = {"amount", "quantity", "number", "val", "setting"};
    j["function"] = {"method", "routine", "callable", "procedure", "handler"};
    j["name"] = {"label", "title", "identifier", "tag"};
    j["path"] = {"location", "route", "filepath", "directory"};
    j["key"] = {"identifier", "id", "index", "token"};
    return j;
}

inline SynonymTable synonym_table() {
    SynonymTable t;
    const auto lexicon = synonym_lexicon();
    for (const auto& [word, cands] : lexicon.items()) t.add(word, cands.get<std::vector<std::string>>());
    return t;
}

}  // namespace mtpl::synthetic
