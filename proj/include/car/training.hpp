#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "car/corpus.hpp"
#include "car/eval.hpp"
#include "car/ranker.hpp"
#include "car/runfile.hpp"
#include "car/util.hpp"

namespace car {

// One query/qrels/candidate-list slice of the data, e.g. the training fold
// or the validation fold. Candidates are the BM25 run for these queries.
struct RankerDataset {
    std::vector<Query> queries;
    Qrels qrels;
    Run candidates;
};

struct TrainOptions {
    std::size_t epochs = 80;
    double learning_rate = 1e-3;
    std::size_t negatives_per_positive = 6;
    // Decaying-moment accumulators of the adaptive per-parameter step rule.
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainResult {
    RankerParams params;  // snapshot of the best validation epoch
    std::size_t best_epoch = 0;
    std::vector<double> epoch_loss;        // mean pairwise loss per epoch
    std::vector<double> epoch_val_rprec;   // validation R-Prec per epoch
};

namespace detail {

// Precomputed similarity matrix and kg scores for one (query, doc) pair.
struct DocInputs {
    std::string pid;
    std::vector<double> sim;
    std::vector<double> kg;
};

struct PreparedQuery {
    const Query* query = nullptr;
    QuerySlots slots;
    std::vector<DocInputs> docs;
    std::unordered_map<std::string, std::size_t> doc_index;
    std::vector<std::size_t> positives;            // indexes into docs
    std::vector<std::size_t> negatives;            // shared by every positive
    std::size_t n_relevant = 0;                    // binarized, for R-Prec
    std::vector<std::size_t> candidate_order;      // run order, into docs
};

inline std::size_t ensure_doc(
    PreparedQuery& pq, const Query& q, const std::string& pid,
    const RankerConfig& cfg, const ScoringContext& ctx,
    const std::unordered_map<std::string, const Paragraph*>& paragraphs) {
    auto it = pq.doc_index.find(pid);
    if (it != pq.doc_index.end()) return it->second;
    const Paragraph* p = paragraphs.at(pid);
    DocInputs d;
    d.pid = pid;
    d.sim = build_sim_matrix(pq.slots, *p, *ctx.embeddings, cfg);
    d.kg = ctx.kg_scores(q, *p, cfg);
    pq.docs.push_back(std::move(d));
    pq.doc_index[pid] = pq.docs.size() - 1;
    return pq.docs.size() - 1;
}

// Adam-style update state, one moment pair per tensor element.
struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::size_t t = 0;

    explicit AdamState(const RankerParams& params) {
        for (const auto& tensor : params.tensors) {
            m.emplace_back(tensor.data.size(), 0.0);
            v.emplace_back(tensor.data.size(), 0.0);
        }
    }

    void step(RankerParams& params, const RankerParams& grads,
              const TrainOptions& opt) {
        ++t;
        double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
        for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
            auto& data = params.tensors[ti].data;
            const auto& g = grads.tensors[ti].data;
            auto& mt = m[ti];
            auto& vt = v[ti];
            for (std::size_t i = 0; i < data.size(); ++i) {
                mt[i] = opt.beta1 * mt[i] + (1.0 - opt.beta1) * g[i];
                vt[i] = opt.beta2 * vt[i] + (1.0 - opt.beta2) * g[i] * g[i];
                double mhat = mt[i] / bc1;
                double vhat = vt[i] / bc2;
                data[i] -= opt.learning_rate * mhat / (std::sqrt(vhat) + opt.epsilon);
            }
        }
    }
};

inline void zero_grads(RankerParams& grads) {
    for (auto& t : grads.tensors) std::fill(t.data.begin(), t.data.end(), 0.0);
}

}  // namespace detail

// Builds TrainSample-style groups: every relevant (grade >= 1) paragraph of
// a training query is a positive; the negatives are the query's top-ranked
// non-relevant BM25 candidates, shared across its positives.
//
// Trains with the pairwise hinge loss and an adaptive per-parameter step
// size, evaluates validation R-Prec after every epoch, and returns the
// snapshot with the highest validation R-Prec (earliest epoch on ties).
// Deterministic for a fixed config seed.
inline TrainResult train_ranker(
    const RankerDataset& train, const RankerDataset& validation,
    const RankerConfig& cfg, const TrainOptions& opt, const ScoringContext& ctx,
    const std::unordered_map<std::string, const Paragraph*>& paragraphs,
    Warnings* warnings = nullptr) {
    validate_config(cfg);
    ctx.validate_for(cfg);

    // --- training inputs ---
    std::vector<detail::PreparedQuery> tqueries;
    std::vector<std::pair<std::size_t, std::size_t>> samples;  // (query, positive)
    for (const auto& q : train.queries) {
        auto qit = train.qrels.find(q.qid);
        if (qit == train.qrels.end()) continue;
        auto rit = train.candidates.find(q.qid);

        detail::PreparedQuery pq;
        pq.query = &q;
        pq.slots = prepare_query_slots(
            q, cfg, *ctx.idf, cfg.use_frequency_vector ? ctx.hf : nullptr);

        for (const auto& [pid, grade] : qit->second) {
            if (!binarize(grade)) continue;
            if (!paragraphs.count(pid)) {
                warn(warnings, "train: positive '" + pid + "' for query '" +
                                   q.qid + "' missing from collection, skipped");
                continue;
            }
            pq.positives.push_back(
                detail::ensure_doc(pq, q, pid, cfg, ctx, paragraphs));
        }
        if (rit != train.candidates.end()) {
            for (const auto& cand : rit->second) {
                if (pq.negatives.size() >= opt.negatives_per_positive) break;
                auto jit = qit->second.find(cand.paragraph_id);
                if (jit != qit->second.end() && binarize(jit->second)) continue;
                if (!paragraphs.count(cand.paragraph_id)) continue;
                pq.negatives.push_back(detail::ensure_doc(
                    pq, q, cand.paragraph_id, cfg, ctx, paragraphs));
            }
        }
        if (pq.positives.empty() || pq.negatives.empty()) {
            warn(warnings, "train: query '" + q.qid +
                               "' has no usable positive/negative pair, skipped");
            continue;
        }
        std::size_t qi = tqueries.size();
        for (std::size_t pi = 0; pi < pq.positives.size(); ++pi)
            samples.push_back({qi, pi});
        tqueries.push_back(std::move(pq));
    }
    if (samples.empty()) throw DataError("train: empty training set");

    // --- validation inputs ---
    std::vector<detail::PreparedQuery> vqueries;
    for (const auto& q : validation.queries) {
        auto qit = validation.qrels.find(q.qid);
        auto rit = validation.candidates.find(q.qid);
        if (qit == validation.qrels.end() || rit == validation.candidates.end())
            continue;
        std::size_t n_rel = 0;
        for (const auto& [pid, grade] : qit->second)
            if (binarize(grade)) ++n_rel;
        if (n_rel == 0) continue;

        detail::PreparedQuery pq;
        pq.query = &q;
        pq.n_relevant = n_rel;
        pq.slots = prepare_query_slots(
            q, cfg, *ctx.idf, cfg.use_frequency_vector ? ctx.hf : nullptr);
        for (const auto& cand : rit->second) {
            if (!paragraphs.count(cand.paragraph_id)) continue;
            pq.candidate_order.push_back(detail::ensure_doc(
                pq, q, cand.paragraph_id, cfg, ctx, paragraphs));
        }
        if (!pq.candidate_order.empty()) vqueries.push_back(std::move(pq));
    }
    if (vqueries.empty())
        throw DataError("train: validation set has no judged queries");

    auto validation_rprec = [&](const RankerParams& params) {
        double sum = 0.0;
        for (const auto& pq : vqueries) {
            std::vector<std::pair<double, std::size_t>> scored;
            scored.reserve(pq.candidate_order.size());
            for (std::size_t rank = 0; rank < pq.candidate_order.size(); ++rank) {
                const auto& doc = pq.docs[pq.candidate_order[rank]];
                double s = ranker_forward(pq.slots, doc.sim, doc.kg, params, cfg,
                                          nullptr);
                scored.push_back({s, rank});
            }
            std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
            const auto& judgments = validation.qrels.at(pq.query->qid);
            std::size_t hits = 0;
            for (std::size_t i = 0; i < pq.n_relevant && i < scored.size(); ++i) {
                const auto& pid = pq.docs[pq.candidate_order[scored[i].second]].pid;
                auto jit = judgments.find(pid);
                if (jit != judgments.end() && binarize(jit->second)) ++hits;
            }
            sum += static_cast<double>(hits) / static_cast<double>(pq.n_relevant);
        }
        return sum / static_cast<double>(vqueries.size());
    };

    // --- optimization ---
    RankerParams params = init_params(cfg);
    RankerParams grads = zero_params(cfg);
    detail::AdamState adam(params);
    Rng rng(cfg.seed);

    TrainResult result;
    result.params = params;
    double best_rprec = -1.0;

    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        car::shuffle(order, rng);
        double epoch_loss = 0.0;
        for (std::size_t si : order) {
            const auto& [qi, pi] = samples[si];
            const auto& pq = tqueries[qi];
            const auto& pos = pq.docs[pq.positives[pi]];

            ForwardCache pos_cache;
            double s_pos = ranker_forward(pq.slots, pos.sim, pos.kg, params, cfg,
                                          &pos_cache);
            std::vector<ForwardCache> neg_caches(pq.negatives.size());
            std::vector<double> s_negs(pq.negatives.size());
            for (std::size_t ni = 0; ni < pq.negatives.size(); ++ni) {
                const auto& neg = pq.docs[pq.negatives[ni]];
                s_negs[ni] = ranker_forward(pq.slots, neg.sim, neg.kg, params, cfg,
                                            &neg_caches[ni]);
            }
            auto lg = pairwise_loss_grad(s_pos, s_negs);
            epoch_loss += lg.loss;

            detail::zero_grads(grads);
            if (lg.d_pos != 0.0)
                ranker_backward(pos_cache, params, cfg, lg.d_pos, grads);
            for (std::size_t ni = 0; ni < neg_caches.size(); ++ni)
                if (lg.d_negs[ni] != 0.0)
                    ranker_backward(neg_caches[ni], params, cfg, lg.d_negs[ni],
                                    grads);
            adam.step(params, grads, opt);
        }
        result.epoch_loss.push_back(epoch_loss /
                                    static_cast<double>(samples.size()));
        double rprec = validation_rprec(params);
        result.epoch_val_rprec.push_back(rprec);
        if (rprec > best_rprec) {
            best_rprec = rprec;
            result.params = params;
            result.best_epoch = epoch;
        }
    }
    return result;
}

}  // namespace car
