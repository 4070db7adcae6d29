#pragma once

// Finite-difference verification of the ranker gradients, shared by the unit
// tests and the acceptance suite. Inputs are redrawn when a forward pass
// lands near a ReLU/hinge kink or a pooling tie, where finite differences
// straddle two linear pieces.

#include <cmath>
#include <string>
#include <vector>

#include "car/ranker.hpp"
#include "car/textproc.hpp"

namespace gradcheck {

struct Result {
    double max_rel_err = 0.0;
    std::size_t params_checked = 0;
    std::size_t redraws = 0;
    bool ok = false;
};

struct Instance {
    car::RankerConfig cfg;
    car::RankerParams params;
    car::QuerySlots slots;
    std::vector<double> pos_sim, pos_kg;
    std::vector<std::vector<double>> neg_sims;
    std::vector<std::vector<double>> neg_kgs;
};

inline car::RankerConfig minimal_config(const std::string& variant,
                                        std::uint64_t seed) {
    car::RankerConfig cfg;
    cfg.max_query_len = 8;
    cfg.max_doc_len = 16;
    cfg.filter_sizes = {2, 3};
    cfg.filters_per_size = 2;
    cfg.combine_hidden = 4;
    cfg.segment_hidden = 3;
    cfg.segment_caps = {3, 3, 2};
    cfg.n_entscores = 2;
    cfg.seed = seed;
    car::apply_variant(cfg, variant);
    return cfg;
}

inline Instance draw_instance(const std::string& variant, std::uint64_t seed) {
    car::Rng rng(seed);
    Instance inst;
    inst.cfg = minimal_config(variant, seed);
    inst.params = car::init_params(inst.cfg);
    // Spread the initial weights a little so ReLU units are active on both
    // sides and pooled values are well separated.
    for (auto& t : inst.params.tensors)
        for (auto& v : t.data) v *= 3.0;

    // Every row carries a token: all-zero padding rows produce exact pooling
    // ties, which are kinks the check must stay away from.
    std::size_t Q = inst.cfg.max_query_len, D = inst.cfg.max_doc_len;
    inst.slots.tokens.assign(Q, "");
    inst.slots.roles.assign(Q, car::HeadingRole::Title);
    inst.slots.strata.assign(Q, 0);
    inst.slots.idf.assign(Q, 0.0);
    for (std::size_t i = 0; i < Q; ++i) {
        inst.slots.tokens[i] = "t" + std::to_string(i);
        inst.slots.roles[i] = i < 3   ? car::HeadingRole::Title
                              : i < 6 ? car::HeadingRole::Intermediate
                                      : car::HeadingRole::Main;
        inst.slots.strata[i] = static_cast<int>(car::uniform_index(rng, 4));
        inst.slots.idf[i] = car::uniform_range(rng, 0.0, 2.0);
    }

    auto draw_sim = [&]() {
        std::vector<double> sim(Q * D, 0.0);
        for (std::size_t i = 0; i < Q; ++i)
            for (std::size_t j = 0; j < D; ++j)
                sim[i * D + j] = car::uniform_range(rng, -1.0, 1.0);
        return sim;
    };
    auto draw_kg = [&]() {
        std::vector<double> kg;
        if (inst.cfg.use_kg_scores)
            for (std::size_t i = 0; i < inst.cfg.n_entscores; ++i)
                kg.push_back(car::uniform_real(rng));
        return kg;
    };
    inst.pos_sim = draw_sim();
    inst.pos_kg = draw_kg();
    for (int n = 0; n < 2; ++n) {
        inst.neg_sims.push_back(draw_sim());
        inst.neg_kgs.push_back(draw_kg());
    }
    return inst;
}

inline double instance_loss(const Instance& inst, const car::RankerParams& params,
                            std::vector<car::ForwardCache>* caches = nullptr) {
    if (caches) caches->assign(1 + inst.neg_sims.size(), {});
    double s_pos =
        car::ranker_forward(inst.slots, inst.pos_sim, inst.pos_kg, params,
                            inst.cfg, caches ? &(*caches)[0] : nullptr);
    std::vector<double> s_negs;
    for (std::size_t n = 0; n < inst.neg_sims.size(); ++n)
        s_negs.push_back(car::ranker_forward(
            inst.slots, inst.neg_sims[n], inst.neg_kgs[n], params, inst.cfg,
            caches ? &(*caches)[n + 1] : nullptr));
    return car::pairwise_loss(s_pos, s_negs);
}

// Kink proximity test. Margins below these thresholds make h=1e-4 central
// differences unreliable, so such draws are rejected.
inline bool near_kink(const Instance& inst,
                      const std::vector<car::ForwardCache>& caches,
                      double s_pos, const std::vector<double>& s_negs) {
    constexpr double kReluTol = 2e-3;
    constexpr double kPoolTol = 5e-3;
    constexpr double kHingeTol = 2e-3;
    for (const auto& c : caches) {
        if (c.min_pool_gap < kPoolTol) return true;
        if (c.min_filter_gap < kPoolTol) return true;
        for (double pre : c.hidden_pre)
            if (std::abs(pre) < kReluTol) return true;
        for (double pre : c.seg_pre)
            if (std::abs(pre) < kReluTol) return true;
    }
    (void)inst;
    for (double s_neg : s_negs)
        if (std::abs(1.0 - (s_pos - s_neg)) < kHingeTol) return true;
    return false;
}

inline Result check_variant(const std::string& variant, std::uint64_t seed,
                            double h = 1e-4, double tol = 1e-4) {
    Result result;
    Instance inst;
    std::vector<car::ForwardCache> caches;
    bool drawn = false;
    for (std::size_t attempt = 0; attempt < 100; ++attempt) {
        inst = draw_instance(variant, seed + attempt * 10007);
        double loss = instance_loss(inst, inst.params, &caches);
        std::vector<double> s_negs;
        for (std::size_t n = 1; n < caches.size(); ++n)
            s_negs.push_back(caches[n].score);
        // Require an active hinge so the check is not vacuous.
        if (loss > 0.01 && !near_kink(inst, caches, caches[0].score, s_negs)) {
            drawn = true;
            break;
        }
        ++result.redraws;
    }
    if (!drawn) return result;  // ok stays false

    // Analytic gradient of the pairwise loss.
    car::RankerParams grads = car::zero_params(inst.cfg);
    std::vector<double> s_negs;
    for (std::size_t n = 1; n < caches.size(); ++n)
        s_negs.push_back(caches[n].score);
    auto lg = car::pairwise_loss_grad(caches[0].score, s_negs);
    if (lg.d_pos != 0.0)
        car::ranker_backward(caches[0], inst.params, inst.cfg, lg.d_pos, grads);
    for (std::size_t n = 0; n < s_negs.size(); ++n)
        if (lg.d_negs[n] != 0.0)
            car::ranker_backward(caches[n + 1], inst.params, inst.cfg,
                                 lg.d_negs[n], grads);

    result.ok = true;
    for (std::size_t ti = 0; ti < inst.params.tensors.size(); ++ti) {
        auto& data = inst.params.tensors[ti].data;
        for (std::size_t i = 0; i < data.size(); ++i) {
            double keep = data[i];
            data[i] = keep + h;
            double up = instance_loss(inst, inst.params);
            data[i] = keep - h;
            double down = instance_loss(inst, inst.params);
            data[i] = keep;
            double fd = (up - down) / (2.0 * h);
            double analytic = grads.tensors[ti].data[i];
            double denom = std::max(std::abs(fd), std::abs(analytic));
            ++result.params_checked;
            if (denom < 1e-7) continue;  // both effectively zero
            double rel = std::abs(fd - analytic) / denom;
            result.max_rel_err = std::max(result.max_rel_err, rel);
            if (rel >= tol) result.ok = false;
        }
    }
    return result;
}

}  // namespace gradcheck
