#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "car/corpus.hpp"
#include "car/facets.hpp"
#include "car/kg.hpp"
#include "car/runfile.hpp"
#include "car/textproc.hpp"
#include "car/util.hpp"

namespace car {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

// Variant flags follow the ablation naming used throughout: HP = heading
// position vectors, HF = heading frequency vector, HI = heading independence,
// KG = knowledge-graph entity scores.
struct RankerConfig {
    std::size_t max_query_len = 16;  // Q
    std::size_t max_doc_len = 256;   // D
    std::vector<std::size_t> filter_sizes = {2, 3};
    std::size_t filters_per_size = 16;  // n_f
    std::size_t kmax = 2;               // query-term pooling depth, fixed
    std::size_t combine_hidden = 32;
    std::size_t segment_hidden = 16;    // per-segment dense width (HI)
    std::array<std::size_t, 3> segment_caps = {6, 6, 4};  // title/inter/main
    std::size_t n_entscores = 2;
    bool use_position_vectors = false;  // HP
    bool use_frequency_vector = false;  // HF
    bool heading_independence = false;  // HI
    bool use_kg_scores = false;         // KG
    std::uint64_t seed = 1;
};

inline void validate_config(const RankerConfig& cfg) {
    if (cfg.max_query_len == 0 || cfg.max_doc_len == 0)
        throw DataError("ranker config: Q and D must be positive");
    if (cfg.filter_sizes.empty() || cfg.filters_per_size == 0)
        throw DataError("ranker config: need at least one filter");
    for (std::size_t s : cfg.filter_sizes)
        if (s < 2) throw DataError("ranker config: filter sizes start at 2");
    if (cfg.kmax != 2)
        throw DataError("ranker config: query-term pooling is fixed at k=2");
    if (cfg.max_doc_len < cfg.kmax)
        throw DataError("ranker config: D must be >= k");
    if (cfg.combine_hidden == 0 || cfg.segment_hidden == 0)
        throw DataError("ranker config: dense widths must be positive");
    if (cfg.n_entscores == 0)
        throw DataError("ranker config: n_entscores must be positive");
    if (cfg.heading_independence) {
        std::size_t sum = cfg.segment_caps[0] + cfg.segment_caps[1] +
                          cfg.segment_caps[2];
        if (sum != cfg.max_query_len)
            throw DataError("ranker config: segment caps must sum to Q");
        for (std::size_t c : cfg.segment_caps)
            if (c == 0)
                throw DataError("ranker config: segment caps must be positive");
    }
}

inline const std::vector<std::string>& variant_names() {
    static const std::vector<std::string> names = {"base",  "hp",    "hp-hf",
                                                   "hi",    "hi-hf", "hi-hf-kg"};
    return names;
}

inline void apply_variant(RankerConfig& cfg, const std::string& variant) {
    cfg.use_position_vectors = false;
    cfg.use_frequency_vector = false;
    cfg.heading_independence = false;
    cfg.use_kg_scores = false;
    if (variant == "base") return;
    if (variant == "hp") { cfg.use_position_vectors = true; return; }
    if (variant == "hp-hf") {
        cfg.use_position_vectors = true;
        cfg.use_frequency_vector = true;
        return;
    }
    if (variant == "hi") { cfg.heading_independence = true; return; }
    if (variant == "hi-hf") {
        cfg.heading_independence = true;
        cfg.use_frequency_vector = true;
        return;
    }
    if (variant == "hi-hf-kg") {
        cfg.heading_independence = true;
        cfg.use_frequency_vector = true;
        cfg.use_kg_scores = true;
        return;
    }
    throw DataError("unknown variant '" + variant + "'");
}

inline std::string variant_name(const RankerConfig& cfg) {
    if (cfg.use_kg_scores) return "hi-hf-kg";
    if (cfg.heading_independence)
        return cfg.use_frequency_vector ? "hi-hf" : "hi";
    if (cfg.use_position_vectors)
        return cfg.use_frequency_vector ? "hp-hf" : "hp";
    return "base";
}

// Per-token feature width: pooled channels, the IDF score, and any enabled
// contextual vectors. Channels = one per filter size plus the parameter-free
// unigram identity channel.
inline std::size_t n_channels(const RankerConfig& cfg) {
    return cfg.filter_sizes.size() + 1;
}

inline std::size_t row_feature_len(const RankerConfig& cfg) {
    return n_channels(cfg) * cfg.kmax + 1 +
           (cfg.use_position_vectors ? 3 : 0) +
           (cfg.use_frequency_vector ? 1 : 0);
}

inline std::size_t combine_input_len(const RankerConfig& cfg) {
    std::size_t kg = cfg.use_kg_scores ? cfg.n_entscores : 0;
    if (cfg.heading_independence) return 3 * cfg.segment_hidden + kg;
    return cfg.max_query_len * row_feature_len(cfg) + kg;
}

// Row ranges processed independently: one range for the whole query, or the
// three fixed-capacity segments under heading independence.
inline std::vector<std::pair<std::size_t, std::size_t>> row_ranges(
    const RankerConfig& cfg) {
    if (!cfg.heading_independence) return {{0, cfg.max_query_len}};
    std::size_t a = cfg.segment_caps[0];
    std::size_t b = a + cfg.segment_caps[1];
    return {{0, a}, {a, b}, {b, cfg.max_query_len}};
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct Tensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;

    static Tensor zeros(std::string name, std::vector<std::size_t> shape) {
        Tensor t;
        t.name = std::move(name);
        std::size_t n = 1;
        for (std::size_t s : shape) n *= s;
        t.shape = std::move(shape);
        t.data.assign(n, 0.0);
        return t;
    }
};

struct RankerParams {
    std::vector<Tensor> tensors;

    Tensor& get(std::string_view name) {
        for (auto& t : tensors)
            if (t.name == name) return t;
        throw DataError("ranker params: missing tensor '" + std::string(name) + "'");
    }
    const Tensor& get(std::string_view name) const {
        return const_cast<RankerParams*>(this)->get(name);
    }
};

inline const std::array<const char*, 3>& segment_names() {
    static const std::array<const char*, 3> names = {"title", "inter", "main"};
    return names;
}

// Tensor catalog for a configuration; order is normative for initialization
// and checkpoints.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>>
expected_tensors(const RankerConfig& cfg) {
    std::vector<std::pair<std::string, std::vector<std::size_t>>> spec;
    auto add_matchers = [&](const std::string& prefix) {
        for (std::size_t s : cfg.filter_sizes) {
            spec.push_back({prefix + "conv" + std::to_string(s) + ".kernel",
                            {cfg.filters_per_size, s, s}});
            spec.push_back({prefix + "conv" + std::to_string(s) + ".bias",
                            {cfg.filters_per_size}});
        }
    };
    if (cfg.heading_independence) {
        for (std::size_t g = 0; g < 3; ++g) {
            std::string prefix = std::string(segment_names()[g]) + ".";
            add_matchers(prefix);
            spec.push_back({prefix + "dense.weight",
                            {cfg.segment_hidden,
                             cfg.segment_caps[g] * row_feature_len(cfg)}});
            spec.push_back({prefix + "dense.bias", {cfg.segment_hidden}});
        }
    } else {
        add_matchers("");
    }
    spec.push_back({"combine.hidden.weight",
                    {cfg.combine_hidden, combine_input_len(cfg)}});
    spec.push_back({"combine.hidden.bias", {cfg.combine_hidden}});
    spec.push_back({"combine.out.weight", {1, cfg.combine_hidden}});
    spec.push_back({"combine.out.bias", {1}});
    return spec;
}

inline RankerParams zero_params(const RankerConfig& cfg) {
    RankerParams p;
    for (auto& [name, shape] : expected_tensors(cfg))
        p.tensors.push_back(Tensor::zeros(name, shape));
    return p;
}

// Weights drawn uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases zero.
// Deterministic for a fixed seed because tensors are visited in catalog order.
inline RankerParams init_params(const RankerConfig& cfg) {
    validate_config(cfg);
    RankerParams p = zero_params(cfg);
    Rng rng(cfg.seed);
    for (auto& t : p.tensors) {
        if (t.name.ends_with(".bias")) continue;
        std::size_t fan_in = 1;
        for (std::size_t i = 1; i < t.shape.size(); ++i) fan_in *= t.shape[i];
        double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : t.data) v = uniform_range(rng, -limit, limit);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Query slots
// ---------------------------------------------------------------------------

// The query laid out over exactly Q row slots. Without heading independence
// the tokens are packed from slot 0 (padding is a suffix); with it each role
// owns a fixed range of slots so that equal headings align across queries.
struct QuerySlots {
    std::vector<std::string> tokens;  // empty string marks padding
    std::vector<HeadingRole> roles;
    std::vector<int> strata;          // heading-frequency stratum per slot
    std::vector<double> idf;
};

namespace detail {

// Proportional truncation by largest remainder: every heading keeps
// floor(budget * len / total) of its own tokens, and the leftover slots go
// to the largest fractional remainders, the title first (it is the last
// heading to lose tokens). Each heading keeps a prefix of its tokens.
inline std::vector<std::size_t> truncated_heading_lengths(
    const std::vector<std::size_t>& lengths, std::size_t budget) {
    std::size_t total = std::accumulate(lengths.begin(), lengths.end(),
                                        std::size_t{0});
    if (total <= budget) return lengths;
    std::size_t n = lengths.size();
    std::vector<std::size_t> kept(n);
    std::vector<double> fraction(n);
    std::size_t assigned = 0;
    for (std::size_t h = 0; h < n; ++h) {
        double quota = static_cast<double>(budget) *
                       static_cast<double>(lengths[h]) /
                       static_cast<double>(total);
        kept[h] = static_cast<std::size_t>(quota);
        fraction[h] = quota - static_cast<double>(kept[h]);
        assigned += kept[h];
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (fraction[a] != fraction[b]) return fraction[a] > fraction[b];
        return a < b;  // title wins ties, then earlier headings
    });
    for (std::size_t i = 0; i < n && assigned < budget; ++i) {
        std::size_t h = order[i];
        if (kept[h] < lengths[h]) {
            ++kept[h];
            ++assigned;
        }
    }
    return kept;
}

}  // namespace detail

inline QuerySlots prepare_query_slots(const Query& q, const RankerConfig& cfg,
                                      const IdfTable& idf,
                                      const HeadingFrequencyTable* hf) {
    QuerySlots slots;
    std::size_t Q = cfg.max_query_len;
    slots.tokens.assign(Q, "");
    slots.roles.assign(Q, HeadingRole::Title);
    slots.strata.assign(Q, 0);
    slots.idf.assign(Q, 0.0);

    std::vector<std::vector<std::string>> heading_tokens;
    heading_tokens.reserve(q.headings.size());
    for (const auto& h : q.headings) heading_tokens.push_back(tokenize(h));

    auto place = [&](std::size_t slot, const std::string& token,
                     std::size_t heading_idx) {
        slots.tokens[slot] = token;
        slots.roles[slot] = heading_role(q, heading_idx);
        slots.strata[slot] = hf ? hf->stratify(q.headings[heading_idx]) : 0;
        slots.idf[slot] = idf.idf(token);
    };

    if (cfg.heading_independence) {
        std::array<std::size_t, 3> base = {0, cfg.segment_caps[0],
                                           cfg.segment_caps[0] + cfg.segment_caps[1]};
        std::array<std::size_t, 3> used = {0, 0, 0};
        for (std::size_t h = 0; h < q.headings.size(); ++h) {
            auto role = heading_role(q, h);
            std::size_t g = role == HeadingRole::Title ? 0
                            : role == HeadingRole::Intermediate ? 1 : 2;
            for (const auto& t : heading_tokens[h]) {
                if (used[g] >= cfg.segment_caps[g]) break;
                place(base[g] + used[g]++, t, h);
            }
        }
    } else {
        std::vector<std::size_t> lengths;
        lengths.reserve(heading_tokens.size());
        for (const auto& ht : heading_tokens) lengths.push_back(ht.size());
        auto kept = detail::truncated_heading_lengths(lengths, Q);
        std::size_t slot = 0;
        for (std::size_t h = 0; h < heading_tokens.size(); ++h)
            for (std::size_t i = 0; i < kept[h]; ++i)
                place(slot++, heading_tokens[h][i], h);
    }
    return slots;
}

// ---------------------------------------------------------------------------
// Similarity matrix
// ---------------------------------------------------------------------------

// Q x D row-major cosine similarities with the exact-string-match override:
// identical tokens score exactly 1 even when out of vocabulary. Unknown
// token pairs score 0; padding rows and columns are 0.
inline std::vector<double> build_sim_matrix(const QuerySlots& slots,
                                            const Paragraph& p,
                                            const EmbeddingTable& emb,
                                            const RankerConfig& cfg) {
    std::size_t Q = cfg.max_query_len, D = cfg.max_doc_len;
    std::vector<double> sim(Q * D, 0.0);
    auto doc_tokens = tokenize(p.text);
    if (doc_tokens.size() > D) doc_tokens.resize(D);
    std::vector<const std::vector<double>*> doc_vecs(doc_tokens.size());
    for (std::size_t j = 0; j < doc_tokens.size(); ++j)
        doc_vecs[j] = emb.find(doc_tokens[j]);
    for (std::size_t i = 0; i < Q; ++i) {
        if (slots.tokens[i].empty()) continue;
        const auto* qv = emb.find(slots.tokens[i]);
        for (std::size_t j = 0; j < doc_tokens.size(); ++j) {
            double v;
            if (slots.tokens[i] == doc_tokens[j]) {
                v = 1.0;
            } else if (qv && doc_vecs[j]) {
                v = std::clamp(cosine_sim(*qv, *doc_vecs[j]), -1.0, 1.0);
            } else {
                v = 0.0;
            }
            sim[i * D + j] = v;
        }
    }
    return sim;
}

inline std::vector<double> build_sim_matrix(const Query& q, const Paragraph& p,
                                            const EmbeddingTable& emb,
                                            const RankerConfig& cfg,
                                            const IdfTable& idf) {
    return build_sim_matrix(prepare_query_slots(q, cfg, idf, nullptr), p, emb, cfg);
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct ForwardCache {
    double score = 0.0;
    std::vector<double> sim;  // Q*D
    // Per filter size: winning filter per position (max over the n_f maps).
    std::vector<std::vector<std::uint16_t>> conv_argmax;
    // Selected document column per (row, channel, k-slot).
    std::vector<std::size_t> pool_cols;
    std::vector<double> features;    // Q x row_feature_len
    std::vector<double> seg_pre;     // HI only: 3 * segment_hidden
    std::vector<double> x;           // combination input
    std::vector<double> hidden_pre;  // combine_hidden
    std::vector<double> hidden;
    // Kink diagnostics for finite-difference checks: the smallest margin by
    // which any pooling selection and any selected-position filter argmax
    // wins. Gradients are only trustworthy away from these ties.
    double min_pool_gap = std::numeric_limits<double>::infinity();
    double min_filter_gap = std::numeric_limits<double>::infinity();
};

namespace detail {

// 2-D convolution with same padding followed by max over the n_f filter
// maps. Windows are clipped to [row_lo, row_hi) so independent segments do
// not leak into each other. pad_top = pad_left = floor((s-1)/2).
inline void conv_max_channel(const std::vector<double>& sim, std::size_t D,
                             std::size_t row_lo, std::size_t row_hi,
                             const Tensor& kernel, const Tensor& bias,
                             std::vector<double>& out,
                             std::vector<std::uint16_t>& argmax,
                             std::vector<double>* runner_up) {
    std::size_t n_f = kernel.shape[0], s = kernel.shape[1];
    std::size_t pad = (s - 1) / 2;
    for (std::size_t r = row_lo; r < row_hi; ++r) {
        for (std::size_t j = 0; j < D; ++j) {
            double best = 0.0, second = -std::numeric_limits<double>::infinity();
            std::uint16_t best_f = 0;
            for (std::size_t f = 0; f < n_f; ++f) {
                double acc = bias.data[f];
                for (std::size_t u = 0; u < s; ++u) {
                    std::size_t rs = r + u;  // r + u - pad, guarded below
                    if (rs < pad || rs - pad < row_lo || rs - pad >= row_hi)
                        continue;
                    rs -= pad;
                    const double* sim_row = &sim[rs * D];
                    const double* krow = &kernel.data[(f * s + u) * s];
                    for (std::size_t v = 0; v < s; ++v) {
                        std::size_t cs = j + v;
                        if (cs < pad || cs - pad >= D) continue;
                        acc += krow[v] * sim_row[cs - pad];
                    }
                }
                if (f == 0 || acc > best) {
                    second = f == 0 ? second : best;
                    best = acc;
                    best_f = static_cast<std::uint16_t>(f);
                } else if (acc > second) {
                    second = acc;
                }
            }
            out[r * D + j] = best;
            argmax[r * D + j] = best_f;
            if (runner_up) (*runner_up)[r * D + j] = second;
        }
    }
}

// Top-k values of a row, descending, ties resolved toward the earlier
// document position.
inline void kmax_row(const double* row, std::size_t D, std::size_t k,
                     double* values, std::size_t* cols) {
    for (std::size_t slot = 0; slot < k; ++slot) {
        values[slot] = -std::numeric_limits<double>::infinity();
        cols[slot] = 0;
    }
    for (std::size_t j = 0; j < D; ++j) {
        double v = row[j];
        for (std::size_t slot = 0; slot < k; ++slot) {
            if (v > values[slot]) {
                for (std::size_t m = k - 1; m > slot; --m) {
                    values[m] = values[m - 1];
                    cols[m] = cols[m - 1];
                }
                values[slot] = v;
                cols[slot] = j;
                break;
            }
        }
    }
}

// Matching phase: per-size convolution channels (max over the n_f filter
// maps) plus the parameter-free unigram identity channel, then k-max pooling
// across document positions per query row. Pooled values land in the first
// n_channels*k entries of each feature row of `c.features` (stride
// `row_stride`); selection indexes and tie margins are recorded for the
// backward pass and the finite-difference harness.
inline void matching_phase(const RankerParams& params, const RankerConfig& cfg,
                           std::size_t row_stride, ForwardCache& c) {
    std::size_t Q = cfg.max_query_len, D = cfg.max_doc_len, k = cfg.kmax;
    std::size_t nch = n_channels(cfg);
    auto ranges = row_ranges(cfg);

    c.conv_argmax.assign(cfg.filter_sizes.size(),
                         std::vector<std::uint16_t>(Q * D, 0));
    c.pool_cols.assign(Q * nch * k, 0);

    std::vector<std::vector<double>> channels(nch, std::vector<double>(Q * D, 0.0));
    std::vector<std::vector<double>> runner_up(
        cfg.filter_sizes.size(),
        std::vector<double>(Q * D, -std::numeric_limits<double>::infinity()));
    channels[0] = c.sim;
    for (std::size_t g = 0; g < ranges.size(); ++g) {
        std::string prefix =
            cfg.heading_independence ? std::string(segment_names()[g]) + "." : "";
        for (std::size_t si = 0; si < cfg.filter_sizes.size(); ++si) {
            std::size_t s = cfg.filter_sizes[si];
            const Tensor& kernel =
                params.get(prefix + "conv" + std::to_string(s) + ".kernel");
            const Tensor& bias =
                params.get(prefix + "conv" + std::to_string(s) + ".bias");
            detail::conv_max_channel(c.sim, D, ranges[g].first, ranges[g].second,
                                     kernel, bias, channels[si + 1],
                                     c.conv_argmax[si], &runner_up[si]);
        }
    }

    std::vector<double> kvals(k);
    std::vector<std::size_t> kcols(k);
    for (std::size_t r = 0; r < Q; ++r) {
        double* row_feat = &c.features[r * row_stride];
        for (std::size_t ch = 0; ch < nch; ++ch) {
            detail::kmax_row(&channels[ch][r * D], D, k, kvals.data(), kcols.data());
            for (std::size_t slot = 0; slot < k; ++slot) {
                row_feat[ch * k + slot] = kvals[slot];
                c.pool_cols[(r * nch + ch) * k + slot] = kcols[slot];
            }
            // Tie margins: between consecutive selected slots, between the
            // last selected slot and the best excluded position, and between
            // the winning filter and its runner-up at selected positions.
            for (std::size_t slot = 1; slot < k; ++slot)
                c.min_pool_gap =
                    std::min(c.min_pool_gap, kvals[slot - 1] - kvals[slot]);
            if (D > k) {
                double best_excluded = -std::numeric_limits<double>::infinity();
                const double* row = &channels[ch][r * D];
                for (std::size_t j = 0; j < D; ++j) {
                    bool selected = false;
                    for (std::size_t slot = 0; slot < k; ++slot)
                        if (kcols[slot] == j) selected = true;
                    if (!selected) best_excluded = std::max(best_excluded, row[j]);
                }
                c.min_pool_gap =
                    std::min(c.min_pool_gap, kvals[k - 1] - best_excluded);
            }
            if (ch > 0) {
                for (std::size_t slot = 0; slot < k; ++slot) {
                    std::size_t j = kcols[slot];
                    double gap = channels[ch][r * D + j] -
                                 runner_up[ch - 1][r * D + j];
                    c.min_filter_gap = std::min(c.min_filter_gap, gap);
                }
            }
        }
    }
}

}  // namespace detail

// The matching phase alone: Q rows of (|filter sizes|+1)*k pooled values per
// query row, each channel's top-k document positions sorted descending.
inline std::vector<double> match_and_pool(const std::vector<double>& sim,
                                          const RankerParams& params,
                                          const RankerConfig& cfg) {
    std::size_t width = n_channels(cfg) * cfg.kmax;
    ForwardCache c;
    c.sim = sim;
    c.features.assign(cfg.max_query_len * width, 0.0);
    detail::matching_phase(params, cfg, width, c);
    return c.features;
}

// Score one (query, document) pair. `kg_scores` must have length
// cfg.n_entscores when the KG variant is enabled and is ignored otherwise.
inline double ranker_forward(const QuerySlots& slots,
                             std::vector<double> sim,
                             const std::vector<double>& kg_scores,
                             const RankerParams& params,
                             const RankerConfig& cfg, ForwardCache* cache) {
    std::size_t Q = cfg.max_query_len, k = cfg.kmax;
    std::size_t nch = n_channels(cfg);
    std::size_t row_len = row_feature_len(cfg);
    auto ranges = row_ranges(cfg);

    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.sim = std::move(sim);
    c.features.assign(Q * row_len, 0.0);
    detail::matching_phase(params, cfg, row_len, c);

    // Per-token contextual features alongside the pooled matching signals.
    for (std::size_t r = 0; r < Q; ++r) {
        double* row_feat = &c.features[r * row_len];
        std::size_t off = nch * k;
        row_feat[off++] = slots.idf[r];
        if (cfg.use_position_vectors) {
            bool pad = slots.tokens[r].empty();
            row_feat[off++] = (!pad && slots.roles[r] == HeadingRole::Title) ? 1.0 : 0.0;
            row_feat[off++] =
                (!pad && slots.roles[r] == HeadingRole::Intermediate) ? 1.0 : 0.0;
            row_feat[off++] = (!pad && slots.roles[r] == HeadingRole::Main) ? 1.0 : 0.0;
        }
        if (cfg.use_frequency_vector)
            row_feat[off++] = static_cast<double>(slots.strata[r]);
    }

    // Combination input: either the flat feature rows, or the per-segment
    // dense consolidations under heading independence.
    c.x.clear();
    if (cfg.heading_independence) {
        c.seg_pre.assign(3 * cfg.segment_hidden, 0.0);
        for (std::size_t g = 0; g < 3; ++g) {
            std::string prefix = std::string(segment_names()[g]) + ".";
            const Tensor& w = params.get(prefix + "dense.weight");
            const Tensor& b = params.get(prefix + "dense.bias");
            std::size_t in_len = w.shape[1];
            const double* seg_feat = &c.features[ranges[g].first * row_len];
            for (std::size_t o = 0; o < cfg.segment_hidden; ++o) {
                double acc = b.data[o];
                const double* wrow = &w.data[o * in_len];
                for (std::size_t i = 0; i < in_len; ++i) acc += wrow[i] * seg_feat[i];
                c.seg_pre[g * cfg.segment_hidden + o] = acc;
                c.x.push_back(acc > 0.0 ? acc : 0.0);
            }
        }
    } else {
        c.x = c.features;
    }
    if (cfg.use_kg_scores) {
        if (kg_scores.size() != cfg.n_entscores)
            throw DataError("ranker_forward: kg score vector has wrong length");
        c.x.insert(c.x.end(), kg_scores.begin(), kg_scores.end());
    }

    const Tensor& w1 = params.get("combine.hidden.weight");
    const Tensor& b1 = params.get("combine.hidden.bias");
    const Tensor& w2 = params.get("combine.out.weight");
    const Tensor& b2 = params.get("combine.out.bias");
    if (w1.shape[1] != c.x.size())
        throw DataError("ranker_forward: feature length mismatch");

    std::size_t H = cfg.combine_hidden;
    c.hidden_pre.assign(H, 0.0);
    c.hidden.assign(H, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
        double acc = b1.data[h];
        const double* wrow = &w1.data[h * c.x.size()];
        for (std::size_t i = 0; i < c.x.size(); ++i) acc += wrow[i] * c.x[i];
        c.hidden_pre[h] = acc;
        c.hidden[h] = acc > 0.0 ? acc : 0.0;
    }
    double y = b2.data[0];
    for (std::size_t h = 0; h < H; ++h) y += w2.data[h] * c.hidden[h];
    c.score = y;
    return y;
}

// Accumulates d(score)/d(params) * dscore into `grads` (same tensor catalog
// as the parameters). The similarity matrix and contextual inputs are fixed,
// so no gradient flows past the convolution kernels.
inline void ranker_backward(const ForwardCache& c, const RankerParams& params,
                            const RankerConfig& cfg, double dscore,
                            RankerParams& grads) {
    std::size_t Q = cfg.max_query_len, D = cfg.max_doc_len, k = cfg.kmax;
    std::size_t nch = n_channels(cfg);
    std::size_t row_len = row_feature_len(cfg);
    std::size_t H = cfg.combine_hidden;
    auto ranges = row_ranges(cfg);

    const Tensor& w1 = params.get("combine.hidden.weight");
    const Tensor& w2 = params.get("combine.out.weight");
    Tensor& gw1 = grads.get("combine.hidden.weight");
    Tensor& gb1 = grads.get("combine.hidden.bias");
    Tensor& gw2 = grads.get("combine.out.weight");
    Tensor& gb2 = grads.get("combine.out.bias");

    gb2.data[0] += dscore;
    std::vector<double> dhidden_pre(H, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
        gw2.data[h] += dscore * c.hidden[h];
        double dh = dscore * w2.data[h];
        dhidden_pre[h] = c.hidden_pre[h] > 0.0 ? dh : 0.0;
    }
    std::vector<double> dx(c.x.size(), 0.0);
    for (std::size_t h = 0; h < H; ++h) {
        double d = dhidden_pre[h];
        if (d == 0.0) continue;
        gb1.data[h] += d;
        double* gw_row = &gw1.data[h * c.x.size()];
        const double* w_row = &w1.data[h * c.x.size()];
        for (std::size_t i = 0; i < c.x.size(); ++i) {
            gw_row[i] += d * c.x[i];
            dx[i] += d * w_row[i];
        }
    }

    // Gradient w.r.t. the pooled feature rows. KG entries and contextual
    // inputs receive no parameter gradient.
    std::vector<double> dfeatures(Q * row_len, 0.0);
    if (cfg.heading_independence) {
        for (std::size_t g = 0; g < 3; ++g) {
            std::string prefix = std::string(segment_names()[g]) + ".";
            const Tensor& w = params.get(prefix + "dense.weight");
            Tensor& gw = grads.get(prefix + "dense.weight");
            Tensor& gb = grads.get(prefix + "dense.bias");
            std::size_t in_len = w.shape[1];
            const double* seg_feat = &c.features[ranges[g].first * row_len];
            double* dseg = &dfeatures[ranges[g].first * row_len];
            for (std::size_t o = 0; o < cfg.segment_hidden; ++o) {
                double dz = dx[g * cfg.segment_hidden + o];
                if (c.seg_pre[g * cfg.segment_hidden + o] <= 0.0 || dz == 0.0)
                    continue;
                gb.data[o] += dz;
                double* gw_row = &gw.data[o * in_len];
                const double* w_row = &w.data[o * in_len];
                for (std::size_t i = 0; i < in_len; ++i) {
                    gw_row[i] += dz * seg_feat[i];
                    dseg[i] += dz * w_row[i];
                }
            }
        }
    } else {
        std::copy(dx.begin(), dx.begin() + Q * row_len, dfeatures.begin());
    }

    // Route pooled gradients through k-max selection and the filter argmax
    // into the convolution kernels.
    for (std::size_t g = 0; g < ranges.size(); ++g) {
        std::string prefix =
            cfg.heading_independence ? std::string(segment_names()[g]) + "." : "";
        for (std::size_t si = 0; si < cfg.filter_sizes.size(); ++si) {
            std::size_t s = cfg.filter_sizes[si];
            std::size_t pad = (s - 1) / 2;
            Tensor& gk = grads.get(prefix + "conv" + std::to_string(s) + ".kernel");
            Tensor& gb = grads.get(prefix + "conv" + std::to_string(s) + ".bias");
            for (std::size_t r = ranges[g].first; r < ranges[g].second; ++r) {
                for (std::size_t slot = 0; slot < k; ++slot) {
                    std::size_t ch = si + 1;
                    double dval = dfeatures[r * row_len + ch * k + slot];
                    if (dval == 0.0) continue;
                    std::size_t j = c.pool_cols[(r * nch + ch) * k + slot];
                    std::uint16_t f = c.conv_argmax[si][r * D + j];
                    gb.data[f] += dval;
                    for (std::size_t u = 0; u < s; ++u) {
                        std::size_t rs = r + u;
                        if (rs < pad || rs - pad < ranges[g].first ||
                            rs - pad >= ranges[g].second)
                            continue;
                        rs -= pad;
                        for (std::size_t v = 0; v < s; ++v) {
                            std::size_t cs = j + v;
                            if (cs < pad || cs - pad >= D) continue;
                            gk.data[(f * s + u) * s + v] +=
                                dval * c.sim[rs * D + (cs - pad)];
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Pairwise hinge loss
// ---------------------------------------------------------------------------

// Mean over negatives of max(0, 1 - (s_pos - s_neg)).
inline double pairwise_loss(double s_pos, const std::vector<double>& s_negs) {
    if (s_negs.empty()) throw DataError("pairwise_loss: no negatives");
    double sum = 0.0;
    for (double s_neg : s_negs) sum += std::max(0.0, 1.0 - (s_pos - s_neg));
    return sum / static_cast<double>(s_negs.size());
}

struct PairwiseLossGrad {
    double loss = 0.0;
    double d_pos = 0.0;
    std::vector<double> d_negs;
};

inline PairwiseLossGrad pairwise_loss_grad(double s_pos,
                                           const std::vector<double>& s_negs) {
    if (s_negs.empty()) throw DataError("pairwise_loss: no negatives");
    PairwiseLossGrad out;
    out.d_negs.assign(s_negs.size(), 0.0);
    double m = static_cast<double>(s_negs.size());
    for (std::size_t i = 0; i < s_negs.size(); ++i) {
        double margin = 1.0 - (s_pos - s_negs[i]);
        if (margin > 0.0) {
            out.loss += margin;
            out.d_pos -= 1.0 / m;
            out.d_negs[i] = 1.0 / m;
        }
    }
    out.loss /= m;
    return out;
}

// ---------------------------------------------------------------------------
// Scoring context and reranking
// ---------------------------------------------------------------------------

// Everything the ranker needs besides its parameters. The knowledge-graph
// pieces are only consulted when the variant enables them.
struct ScoringContext {
    const EmbeddingTable* embeddings = nullptr;
    const IdfTable* idf = nullptr;
    const HeadingFrequencyTable* hf = nullptr;
    const HoleEmbeddings* kg = nullptr;
    const MentionSource* mentions = nullptr;
    EdgeLabeler labeler;  // derived from the kg relation vocabulary

    void attach_kg(const HoleEmbeddings& emb, const MentionSource& source) {
        kg = &emb;
        mentions = &source;
        std::vector<std::string> labels;
        labels.reserve(emb.relation.size());
        for (const auto& [label, vec] : emb.relation) {
            (void)vec;
            labels.push_back(label);
        }
        labeler = EdgeLabeler::from_labels(labels);
    }

    void validate_for(const RankerConfig& cfg) const {
        if (!embeddings || !idf)
            throw DataError("scoring context: embeddings and idf are required");
        if (cfg.use_frequency_vector && !hf)
            throw DataError("scoring context: heading-frequency table required "
                            "for the HF variant");
        if (cfg.use_kg_scores && (!kg || !mentions))
            throw DataError("scoring context: kg embeddings and mention source "
                            "required for the KG variant");
    }

    std::vector<double> kg_scores(const Query& q, const Paragraph& p,
                                  const RankerConfig& cfg) const {
        if (!cfg.use_kg_scores) return {};
        return entity_scores(*kg, q.title(), labeler.label(q), p, *mentions,
                             cfg.n_entscores);
    }
};

inline double ranker_score(const Query& q, const Paragraph& p,
                           const RankerParams& params, const RankerConfig& cfg,
                           const ScoringContext& ctx,
                           ForwardCache* cache = nullptr) {
    ctx.validate_for(cfg);
    auto slots = prepare_query_slots(
        q, cfg, *ctx.idf, cfg.use_frequency_vector ? ctx.hf : nullptr);
    auto sim = build_sim_matrix(slots, p, *ctx.embeddings, cfg);
    return ranker_forward(slots, std::move(sim), ctx.kg_scores(q, p, cfg), params,
                          cfg, cache);
}

// Reorders candidates by neural score, ties resolved by the original
// (BM25) rank. Output scores are the neural scores.
inline RankedList rerank(const Query& q, const RankedList& candidates,
                         const RankerParams& params, const RankerConfig& cfg,
                         const ScoringContext& ctx,
                         const std::unordered_map<std::string, const Paragraph*>&
                             paragraphs) {
    std::vector<std::pair<double, std::size_t>> scored;  // (score, orig rank)
    scored.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        auto it = paragraphs.find(candidates[i].paragraph_id);
        if (it == paragraphs.end())
            throw DataError("rerank: candidate paragraph '" +
                            candidates[i].paragraph_id + "' not in collection");
        scored.push_back({ranker_score(q, *it->second, params, cfg, ctx), i});
    }
    std::vector<std::size_t> order(scored.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scored[a].first != scored[b].first)
            return scored[a].first > scored[b].first;
        return scored[a].second < scored[b].second;
    });
    RankedList out;
    out.reserve(order.size());
    for (std::size_t i : order)
        out.push_back({candidates[i].paragraph_id, scored[i].first});
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json config_to_json(const RankerConfig& cfg) {
    nlohmann::json j;
    j["max_query_len"] = cfg.max_query_len;
    j["max_doc_len"] = cfg.max_doc_len;
    j["filter_sizes"] = cfg.filter_sizes;
    j["filters_per_size"] = cfg.filters_per_size;
    j["kmax"] = cfg.kmax;
    j["combine_hidden"] = cfg.combine_hidden;
    j["segment_hidden"] = cfg.segment_hidden;
    j["segment_caps"] = cfg.segment_caps;
    j["n_entscores"] = cfg.n_entscores;
    j["use_position_vectors"] = cfg.use_position_vectors;
    j["use_frequency_vector"] = cfg.use_frequency_vector;
    j["heading_independence"] = cfg.heading_independence;
    j["use_kg_scores"] = cfg.use_kg_scores;
    j["seed"] = cfg.seed;
    return j;
}

inline RankerConfig config_from_json(const nlohmann::json& j) {
    RankerConfig cfg;
    cfg.max_query_len = j.at("max_query_len").get<std::size_t>();
    cfg.max_doc_len = j.at("max_doc_len").get<std::size_t>();
    cfg.filter_sizes = j.at("filter_sizes").get<std::vector<std::size_t>>();
    cfg.filters_per_size = j.at("filters_per_size").get<std::size_t>();
    cfg.kmax = j.at("kmax").get<std::size_t>();
    cfg.combine_hidden = j.at("combine_hidden").get<std::size_t>();
    cfg.segment_hidden = j.at("segment_hidden").get<std::size_t>();
    auto caps = j.at("segment_caps").get<std::vector<std::size_t>>();
    if (caps.size() != 3)
        throw DataError("checkpoint: segment_caps must have 3 entries");
    cfg.segment_caps = {caps[0], caps[1], caps[2]};
    cfg.n_entscores = j.at("n_entscores").get<std::size_t>();
    cfg.use_position_vectors = j.at("use_position_vectors").get<bool>();
    cfg.use_frequency_vector = j.at("use_frequency_vector").get<bool>();
    cfg.heading_independence = j.at("heading_independence").get<bool>();
    cfg.use_kg_scores = j.at("use_kg_scores").get<bool>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    validate_config(cfg);
    return cfg;
}

inline std::string serialize_checkpoint(const RankerParams& params,
                                        const RankerConfig& cfg) {
    nlohmann::json j;
    j["format"] = "car-ranker-checkpoint";
    j["version"] = kCheckpointVersion;
    j["config"] = config_to_json(cfg);
    auto arr = nlohmann::json::array();
    for (const auto& t : params.tensors) {
        nlohmann::json tj;
        tj["name"] = t.name;
        tj["shape"] = t.shape;
        tj["values"] = t.data;
        arr.push_back(std::move(tj));
    }
    j["params"] = std::move(arr);
    return j.dump() + "\n";
}

// Loads and validates a checkpoint: the version is mandatory and the tensor
// catalog must match the embedded config exactly, so a checkpoint of one
// variant cannot silently load as another.
inline std::pair<RankerConfig, RankerParams> parse_checkpoint(std::istream& in) {
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: malformed JSON: ") + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "car-ranker-checkpoint")
            throw DataError("checkpoint: unknown format tag");
        if (j.at("version").get<int>() != kCheckpointVersion)
            throw DataError("checkpoint: unsupported version");
        RankerConfig cfg = config_from_json(j.at("config"));
        RankerParams params;
        for (const auto& tj : j.at("params")) {
            Tensor t;
            t.name = tj.at("name").get<std::string>();
            t.shape = tj.at("shape").get<std::vector<std::size_t>>();
            t.data = tj.at("values").get<std::vector<double>>();
            std::size_t n = 1;
            for (std::size_t s : t.shape) n *= s;
            if (n != t.data.size())
                throw DataError("checkpoint: tensor '" + t.name +
                                "' shape/value mismatch");
            params.tensors.push_back(std::move(t));
        }
        auto expected = expected_tensors(cfg);
        if (expected.size() != params.tensors.size())
            throw DataError("checkpoint: tensor count does not match config");
        for (std::size_t i = 0; i < expected.size(); ++i) {
            if (params.tensors[i].name != expected[i].first ||
                params.tensors[i].shape != expected[i].second)
                throw DataError("checkpoint: tensor '" + params.tensors[i].name +
                                "' does not match the config's variant shapes");
        }
        return {cfg, std::move(params)};
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: bad record: ") + e.what());
    }
}

}  // namespace car
