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
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "backend.hpp"
#include "common.hpp"
#include "corpus.hpp"

namespace mtpl {

// ---------------------------------------------------------------------------
// Representations
// ---------------------------------------------------------------------------

/// Sparse feature rows aligned with snippet ids.
struct RepresentationMatrix {
    std::vector<std::string> ids;
    std::vector<SparseVector> rows;  ///< entries sorted by dimension
    std::size_t dim = 0;

    std::size_t size() const noexcept { return rows.size(); }

    void validate() const {
        if (ids.size() != rows.size()) throw ValidationError("representation ids and rows differ in length");
        std::set<std::string_view> seen;
        for (const auto& id : ids)
            if (!seen.insert(id).second) throw ValidationError("duplicate representation id '" + id + "'");
        for (const auto& r : rows)
            for (std::size_t i = 0; i < r.size(); ++i) {
                if (r[i].first >= dim) throw ValidationError("representation entry outside the declared dimension");
                if (i > 0 && r[i].first <= r[i - 1].first) throw ValidationError("representation row is not sorted");
            }
    }

    static RepresentationMatrix from_dense(std::vector<std::string> ids, const std::vector<std::vector<double>>& dense) {
        RepresentationMatrix m;
        m.ids = std::move(ids);
        m.dim = dense.empty() ? 0 : dense.front().size();
        for (const auto& row : dense) {
            if (row.size() != m.dim) throw ValidationError("dense rows differ in dimension");
            SparseVector v;
            for (std::size_t d = 0; d < row.size(); ++d)
                if (row[d] != 0.0) v.emplace_back(static_cast<std::uint32_t>(d), row[d]);
            m.rows.push_back(std::move(v));
        }
        m.validate();
        return m;
    }
};

/// tf-idf vectors of `snippets` under an index built over exactly those snippets.
inline RepresentationMatrix tfidf_representations(std::span<const CodeSnippet> snippets) {
    TfidfIndex index(snippets);
    RepresentationMatrix m;
    m.dim = index.dimension();
    for (const auto& s : snippets) {
        m.ids.push_back(s.id);
        m.rows.push_back(index.snippet_vector(s));
    }
    m.validate();
    return m;
}

namespace detail {

inline double dot_dense(const SparseVector& a, const std::vector<double>& b) {
    double s = 0.0;
    for (const auto& [d, w] : a) s += w * b[d];
    return s;
}

inline double squared_norm(const SparseVector& a) {
    double s = 0.0;
    for (const auto& [_, w] : a) s += w * w;
    return s;
}

inline double squared_norm(const std::vector<double>& a) {
    double s = 0.0;
    for (double w : a) s += w * w;
    return s;
}

/// Row indices sorted by id, so results never depend on input row order.
inline std::vector<std::size_t> canonical_order(const RepresentationMatrix& m) {
    std::vector<std::size_t> order(m.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return m.ids[a] < m.ids[b]; });
    return order;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Activation clustering
// ---------------------------------------------------------------------------

struct KMeansResult {
    std::vector<std::size_t> assignment;  ///< per row, in input order
    std::vector<std::vector<double>> centroids;
    double inertia = 0.0;
};

inline constexpr std::size_t kKMeansRestarts = 10;
inline constexpr std::size_t kKMeansMaxIterations = 100;
inline constexpr double kDefaultAcSizeThreshold = 0.35;

/// Lloyd's algorithm with k-means++ seeding; the restart with the lowest
/// inertia wins, earlier restarts on ties.
inline KMeansResult kmeans(const RepresentationMatrix& m, std::size_t k, std::uint64_t seed,
                           std::size_t restarts = kKMeansRestarts, std::size_t max_iter = kKMeansMaxIterations) {
    if (k < 1) throw PreconditionError("k-means needs k >= 1");
    if (m.size() < k) throw PreconditionError("k-means needs at least k rows");
    const auto order = detail::canonical_order(m);
    const std::size_t n = m.size();
    std::vector<double> row_sq(n);
    for (std::size_t i = 0; i < n; ++i) row_sq[i] = detail::squared_norm(m.rows[i]);

    auto dist2 = [&](std::size_t i, const std::vector<double>& c, double c_sq) {
        return std::max(0.0, row_sq[i] - 2.0 * detail::dot_dense(m.rows[i], c) + c_sq);
    };
    auto densify = [&](std::size_t i) {
        std::vector<double> c(m.dim, 0.0);
        for (const auto& [d, w] : m.rows[i]) c[d] = w;
        return c;
    };

    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    Rng rng(derive_seed(seed, "kmeans"));
    for (std::size_t restart = 0; restart < std::max<std::size_t>(1, restarts); ++restart) {
        std::vector<std::vector<double>> cent;
        cent.push_back(densify(order[rng.below(n)]));
        std::vector<double> closest(n, std::numeric_limits<double>::infinity());
        while (cent.size() < k) {
            const double c_sq = detail::squared_norm(cent.back());
            double total = 0.0;
            for (std::size_t p = 0; p < n; ++p) {
                closest[order[p]] = std::min(closest[order[p]], dist2(order[p], cent.back(), c_sq));
                total += closest[order[p]];
            }
            if (total <= 0.0) {
                cent.push_back(cent.front());
                continue;
            }
            double r = rng.uniform() * total;
            std::size_t pick = order[n - 1];
            for (std::size_t p = 0; p < n; ++p) {
                r -= closest[order[p]];
                if (r < 0.0) {
                    pick = order[p];
                    break;
                }
            }
            cent.push_back(densify(pick));
        }

        std::vector<std::size_t> assign(n, k);
        double inertia = 0.0;
        for (std::size_t iter = 0; iter < max_iter; ++iter) {
            std::vector<double> c_sq(k);
            for (std::size_t c = 0; c < k; ++c) c_sq[c] = detail::squared_norm(cent[c]);
            bool changed = false;
            inertia = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t arg = 0;
                double d_best = dist2(i, cent[0], c_sq[0]);
                for (std::size_t c = 1; c < k; ++c) {
                    const double d = dist2(i, cent[c], c_sq[c]);
                    if (d < d_best) {
                        d_best = d;
                        arg = c;
                    }
                }
                changed |= assign[i] != arg;
                assign[i] = arg;
                inertia += d_best;
            }
            if (!changed) break;
            std::vector<std::vector<double>> sums(k, std::vector<double>(m.dim, 0.0));
            std::vector<std::size_t> counts(k, 0);
            for (std::size_t p = 0; p < n; ++p) {
                const std::size_t i = order[p];
                ++counts[assign[i]];
                for (const auto& [d, w] : m.rows[i]) sums[assign[i]][d] += w;
            }
            for (std::size_t c = 0; c < k; ++c) {
                if (counts[c] == 0) continue;
                for (auto& v : sums[c]) v /= static_cast<double>(counts[c]);
                cent[c] = std::move(sums[c]);
            }
        }
        if (inertia < best.inertia) best = {assign, cent, inertia};
    }
    return best;
}

/// Flags the smaller of two k-means clusters when its share of rows is below
/// `size_threshold`.
inline std::set<std::string> activation_clustering(const RepresentationMatrix& reps, double size_threshold, std::uint64_t seed) {
    if (reps.size() < 2) throw PreconditionError("activation clustering needs at least two rows");
    if (!(size_threshold >= 0.0 && size_threshold <= 1.0)) throw PreconditionError("size threshold must lie in [0, 1]");
    const auto km = kmeans(reps, 2, seed);
    std::size_t ones = 0;
    for (auto a : km.assignment) ones += a;
    const std::size_t zeros = reps.size() - ones;
    // equal halves are never flagged
    const std::size_t minority = ones < zeros ? 1 : zeros < ones ? 0 : 2;
    std::set<std::string> flagged;
    if (minority == 2) return flagged;
    const double share = static_cast<double>(std::min(ones, zeros)) / static_cast<double>(reps.size());
    if (share >= size_threshold) return flagged;
    for (std::size_t i = 0; i < reps.size(); ++i)
        if (km.assignment[i] == minority) flagged.insert(reps.ids[i]);
    return flagged;
}

// ---------------------------------------------------------------------------
// Spectral signature
// ---------------------------------------------------------------------------

inline constexpr double kDefaultSsRemovalFraction = 0.1;
inline constexpr double kSsRateMultiplier = 1.5;

struct SpectralResult {
    std::vector<double> scores;  ///< per row, in input order
    std::set<std::string> flagged;
};

/// Top right singular vector of the mean-centered rows, by power iteration on
/// the covariance without forming it.
inline std::vector<double> top_singular_direction(const RepresentationMatrix& m, std::size_t max_iter = 2000,
                                                  double tol = 1e-12) {
    const std::size_t n = m.size();
    const auto order = detail::canonical_order(m);
    std::vector<double> mean(m.dim, 0.0);
    for (std::size_t p = 0; p < n; ++p)
        for (const auto& [d, w] : m.rows[order[p]]) mean[d] += w;
    for (auto& v : mean) v /= static_cast<double>(n);

    auto project = [&](const std::vector<double>& v) {  // X v
        const double mv = std::inner_product(mean.begin(), mean.end(), v.begin(), 0.0);
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = detail::dot_dense(m.rows[i], v) - mv;
        return out;
    };
    auto back = [&](const std::vector<double>& u) {  // X^T u
        std::vector<double> out(m.dim, 0.0);
        double total = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            const std::size_t i = order[p];
            total += u[i];
            for (const auto& [d, w] : m.rows[i]) out[d] += w * u[i];
        }
        for (std::size_t d = 0; d < m.dim; ++d) out[d] -= mean[d] * total;
        return out;
    };

    // start from the centered row of largest norm
    std::vector<double> v(m.dim, 0.0);
    double best = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        std::vector<double> row(m.dim);
        for (std::size_t d = 0; d < m.dim; ++d) row[d] = -mean[d];
        for (const auto& [d, w] : m.rows[order[p]]) row[d] += w;
        const double sq = detail::squared_norm(row);
        if (sq > best * (1.0 + 1e-12)) {
            best = sq;
            v = std::move(row);
        }
    }
    if (best <= 1e-24) return std::vector<double>(m.dim, 0.0);
    for (auto& x : v) x /= std::sqrt(best);

    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        auto next = back(project(v));
        const double len = std::sqrt(detail::squared_norm(next));
        if (len <= 1e-300) return std::vector<double>(m.dim, 0.0);
        double delta = 0.0;
        for (std::size_t d = 0; d < m.dim; ++d) {
            next[d] /= len;
            delta += (next[d] - v[d]) * (next[d] - v[d]);
        }
        v = std::move(next);
        if (delta < tol) break;
    }
    return v;
}

/// Outlier score = squared projection of each centered row onto the top
/// singular direction; the top `removal_fraction` of rows (ties by id) are flagged.
inline SpectralResult spectral_signature(const RepresentationMatrix& reps, double removal_fraction) {
    if (reps.size() < 2) throw PreconditionError("spectral signature needs at least two rows");
    if (!(removal_fraction >= 0.0 && removal_fraction <= 1.0)) throw PreconditionError("removal fraction must lie in [0, 1]");
    const std::size_t n = reps.size();
    const auto v = top_singular_direction(reps);
    std::vector<double> mean(reps.dim, 0.0);
    for (const auto i : detail::canonical_order(reps))
        for (const auto& [d, w] : reps.rows[i]) mean[d] += w;
    for (auto& x : mean) x /= static_cast<double>(n);
    const double mv = std::inner_product(mean.begin(), mean.end(), v.begin(), 0.0);

    SpectralResult out;
    out.scores.resize(n);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = detail::dot_dense(reps.rows[i], v) - mv;
        out.scores[i] = p * p;
        any |= out.scores[i] > 0.0;
    }
    const auto count = static_cast<std::size_t>(std::llround(removal_fraction * static_cast<double>(n)));
    if (!any || count == 0) return out;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (out.scores[a] != out.scores[b]) return out.scores[a] > out.scores[b];
        return reps.ids[a] < reps.ids[b];
    });
    for (std::size_t p = 0; p < std::min(count, n); ++p) out.flagged.insert(reps.ids[order[p]]);
    return out;
}

// ---------------------------------------------------------------------------
// N-gram language model and ONION-style outliers
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultNgramOrder = 3;

/// Add-one smoothed n-gram model over token ids. Id 0 is reserved for tokens
/// never seen in training; "<s>" padding lives outside the vocabulary.
class NgramModel {
  public:
    static constexpr std::uint32_t kUnknown = 0;
    static constexpr std::uint32_t kStart = std::numeric_limits<std::uint32_t>::max();

    std::size_t order() const noexcept { return order_; }
    std::size_t vocab_size() const noexcept { return vocab_.size() + 1; }

    std::uint32_t id(const Token& t) const {
        auto it = vocab_.find(t);
        return it == vocab_.end() ? kUnknown : it->second;
    }

    /// log P(token | context), context = the order-1 preceding ids.
    double log_prob(std::span<const std::uint32_t> context, std::uint32_t token) const {
        const auto it = table_.find(key(context));
        double count = 0.0, total = 0.0;
        if (it != table_.end()) {
            total = static_cast<double>(it->second.total);
            if (auto c = it->second.next.find(token); c != it->second.next.end()) count = static_cast<double>(c->second);
        }
        return std::log((count + 1.0) / (total + static_cast<double>(vocab_size())));
    }

    std::vector<std::uint32_t> encode(std::span<const Token> tokens) const {
        std::vector<std::uint32_t> out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) out.push_back(id(t));
        return out;
    }

  private:
    friend NgramModel fit_ngram(std::span<const std::vector<Token>>, std::size_t, std::span<const Token>);

    struct Row {
        std::size_t total = 0;
        std::unordered_map<std::uint32_t, std::size_t> next;
    };

    static std::string key(std::span<const std::uint32_t> context) {
        return std::string(reinterpret_cast<const char*>(context.data()), context.size() * sizeof(std::uint32_t));
    }

    std::size_t order_ = kDefaultNgramOrder;
    std::unordered_map<Token, std::uint32_t> vocab_;
    std::unordered_map<std::string, Row> table_;
};

/// Counts n-grams over `sequences`; `extra_vocab` enlarges the vocabulary
/// without adding counts.
inline NgramModel fit_ngram(std::span<const std::vector<Token>> sequences, std::size_t order,
                            std::span<const Token> extra_vocab = {}) {
    if (order < 2) throw PreconditionError("n-gram order must be at least 2");
    NgramModel m;
    m.order_ = order;
    std::set<Token> words(extra_vocab.begin(), extra_vocab.end());
    for (const auto& seq : sequences) words.insert(seq.begin(), seq.end());
    for (const auto& w : words) m.vocab_.emplace(w, static_cast<std::uint32_t>(m.vocab_.size() + 1));
    for (const auto& seq : sequences) {
        std::vector<std::uint32_t> padded(order - 1, NgramModel::kStart);
        for (const auto& t : seq) padded.push_back(m.id(t));
        for (std::size_t i = order - 1; i < padded.size(); ++i) {
            auto& row = m.table_[NgramModel::key(std::span(padded).subspan(i - (order - 1), order - 1))];
            ++row.total;
            ++row.next[padded[i]];
        }
    }
    return m;
}

namespace detail {

/// Per-position log probabilities of an encoded sequence with start padding.
inline std::vector<double> position_log_probs(const NgramModel& m, std::span<const std::uint32_t> ids) {
    const std::size_t h = m.order() - 1;
    std::vector<std::uint32_t> padded(h, NgramModel::kStart);
    padded.insert(padded.end(), ids.begin(), ids.end());
    std::vector<double> out(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) out[i] = m.log_prob(std::span(padded).subspan(i, h), ids[i]);
    return out;
}

}  // namespace detail

/// exp(-mean log p) with start padding.
inline double perplexity(const NgramModel& model, std::span<const Token> tokens) {
    if (tokens.empty()) throw PreconditionError("perplexity of an empty sequence is undefined");
    const auto ids = model.encode(tokens);
    const auto lp = detail::position_log_probs(model, ids);
    double total = 0.0;
    for (double v : lp) total += v;
    return std::exp(-total / static_cast<double>(lp.size()));
}

struct OnionResult {
    bool flagged = false;
    std::vector<std::size_t> outlier_positions;
    std::vector<Token> outlier_tokens;
    std::vector<double> drops;  ///< perplexity decrease when each position is deleted
    double max_drop = 0.0;
};

/// Perplexity drop for deleting each token. Only the order-1 positions after
/// the deleted one change context, so each deletion costs O(order).
inline std::vector<double> perplexity_drops(const NgramModel& model, std::span<const Token> tokens) {
    if (tokens.empty()) throw PreconditionError("snippet has no tokens");
    const auto ids = model.encode(tokens);
    const auto lp = detail::position_log_probs(model, ids);
    const std::size_t n = ids.size(), h = model.order() - 1;
    double total = 0.0;
    for (double v : lp) total += v;
    const double base = std::exp(-total / static_cast<double>(n));
    std::vector<double> drops(n, 0.0);
    if (n == 1) return drops;
    std::vector<std::uint32_t> ctx(h);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = total - lp[i];
        for (std::size_t j = i + 1; j < std::min(n, i + 1 + h); ++j) {
            sum -= lp[j];
            // context of j once i is gone: the h ids before j, skipping i
            std::size_t filled = 0;
            for (std::ptrdiff_t p = static_cast<std::ptrdiff_t>(j) - 1; filled < h; --p) {
                if (p == static_cast<std::ptrdiff_t>(i)) continue;
                ctx[h - 1 - filled] = p >= 0 ? ids[static_cast<std::size_t>(p)] : NgramModel::kStart;
                ++filled;
            }
            sum += model.log_prob(ctx, ids[j]);
        }
        drops[i] = base - std::exp(-sum / static_cast<double>(n - 1));
    }
    return drops;
}

/// Positions whose deletion lowers perplexity by more than `threshold`.
inline OnionResult onion_outlier(const CodeSnippet& snippet, const NgramModel& model, double threshold) {
    if (snippet.tokens.empty()) throw PreconditionError("snippet '" + snippet.id + "' has no tokens");
    OnionResult r;
    r.drops = perplexity_drops(model, snippet.tokens);
    for (std::size_t i = 0; i < r.drops.size(); ++i) {
        r.max_drop = i == 0 ? r.drops[i] : std::max(r.max_drop, r.drops[i]);
        if (r.drops[i] > threshold) {
            r.outlier_positions.push_back(i);
            r.outlier_tokens.push_back(snippet.tokens[i]);
        }
    }
    r.flagged = !r.outlier_positions.empty();
    return r;
}

inline constexpr double kOnionCalibrationQuantile = 0.95;

/// Suspicion threshold: the given quantile of per-snippet maximum drops over
/// the model's own training snippets.
inline double calibrate_onion_threshold(const NgramModel& model, std::span<const CodeSnippet> training,
                                        double quantile = kOnionCalibrationQuantile) {
    std::vector<double> maxima;
    for (const auto& s : training) {
        if (s.tokens.empty()) continue;
        const auto d = perplexity_drops(model, s.tokens);
        maxima.push_back(*std::max_element(d.begin(), d.end()));
    }
    if (maxima.empty()) throw PreconditionError("no non-empty snippets to calibrate on");
    std::sort(maxima.begin(), maxima.end());
    const auto pos = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(maxima.size())));
    return maxima[std::min(maxima.size() - 1, pos == 0 ? 0 : pos - 1)];
}

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

enum class BaselineMethod { ac, ss, onion };

inline std::string_view to_string(BaselineMethod m) {
    switch (m) {
        case BaselineMethod::ac: return "ac";
        case BaselineMethod::ss: return "ss";
        case BaselineMethod::onion: return "onion";
    }
    return "?";
}

inline std::optional<BaselineMethod> parse_baseline_method(std::string_view s) {
    if (s == "ac") return BaselineMethod::ac;
    if (s == "ss") return BaselineMethod::ss;
    if (s == "onion") return BaselineMethod::onion;
    return std::nullopt;
}

/// Per-snippet baseline outcome.
struct BaselineVerdict {
    std::string snippet_id;
    BaselineMethod method = BaselineMethod::ac;
    double score = 0.0;
    bool poisoned = false;
};

inline nlohmann::ordered_json to_json(const BaselineVerdict& v) {
    nlohmann::ordered_json j;
    j["method"] = to_string(v.method);
    j["snippet_id"] = v.snippet_id;
    j["score"] = v.score;
    j["poisoned"] = v.poisoned;
    return j;
}

}  // namespace mtpl
