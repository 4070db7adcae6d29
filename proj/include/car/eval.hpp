#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "car/corpus.hpp"
#include "car/facets.hpp"
#include "car/runfile.hpp"
#include "car/util.hpp"

namespace car {

// Relevance threshold: Must (3) / Should (2) / Can (1) be mentioned count as
// relevant; "Roughly on topic" (0) and below do not. Automatic judgments use
// grade 1 and are therefore relevant.
inline bool binarize(int grade) {
    if (grade < kMinGrade || grade > kMaxGrade)
        throw DataError("binarize: grade " + std::to_string(grade) +
                        " outside [-2,3]");
    return grade >= 1;
}

// Condensed-list evaluation: drop documents without any judgment, keeping
// relative order. Idempotent.
inline Run condense(const Run& run, const Qrels& qrels) {
    Run out;
    for (const auto& [qid, docs] : run) {
        auto qit = qrels.find(qid);
        RankedList kept;
        for (const auto& doc : docs)
            if (qit != qrels.end() && qit->second.count(doc.paragraph_id))
                kept.push_back(doc);
        out[qid] = std::move(kept);
    }
    return out;
}

using QueryJudgments = std::map<std::string, int>;  // paragraph id -> grade

namespace detail {

inline std::size_t count_relevant(const QueryJudgments& judgments) {
    std::size_t r = 0;
    for (const auto& [pid, grade] : judgments)
        if (binarize(grade)) ++r;
    return r;
}

}  // namespace detail

// AP = mean precision at the ranks of relevant retrieved documents, divided
// by the total number of relevant documents R (not just the retrieved ones).
inline double average_precision(const RankedList& ranking,
                                const QueryJudgments& judgments) {
    std::size_t total_relevant = detail::count_relevant(judgments);
    if (total_relevant == 0)
        throw DataError("average_precision: no relevant documents");
    std::size_t hits = 0;
    double sum = 0.0;
    for (std::size_t rank = 1; rank <= ranking.size(); ++rank) {
        auto it = judgments.find(ranking[rank - 1].paragraph_id);
        if (it != judgments.end() && binarize(it->second)) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(rank);
        }
    }
    return sum / static_cast<double>(total_relevant);
}

inline double r_precision(const RankedList& ranking,
                          const QueryJudgments& judgments) {
    std::size_t r = detail::count_relevant(judgments);
    if (r == 0) throw DataError("r_precision: no relevant documents");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < r && i < ranking.size(); ++i) {
        auto it = judgments.find(ranking[i].paragraph_id);
        if (it != judgments.end() && binarize(it->second)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(r);
}

// 1 / rank of the first relevant retrieved document; 0 when none retrieved.
inline double reciprocal_rank(const RankedList& ranking,
                              const QueryJudgments& judgments) {
    if (detail::count_relevant(judgments) == 0)
        throw DataError("reciprocal_rank: no relevant documents");
    for (std::size_t rank = 1; rank <= ranking.size(); ++rank) {
        auto it = judgments.find(ranking[rank - 1].paragraph_id);
        if (it != judgments.end() && binarize(it->second))
            return 1.0 / static_cast<double>(rank);
    }
    return 0.0;
}

// Gains clamp negative grades to 0; discount 1 / log2(rank + 1); ideal DCG
// over all judged documents.
inline double ndcg(const RankedList& ranking, const QueryJudgments& judgments) {
    std::vector<double> gains;
    for (const auto& [pid, grade] : judgments)
        gains.push_back(std::max(grade, 0));
    std::sort(gains.begin(), gains.end(), std::greater<double>());
    double idcg = 0.0;
    for (std::size_t rank = 1; rank <= gains.size() && gains[rank - 1] > 0; ++rank)
        idcg += gains[rank - 1] / std::log2(static_cast<double>(rank) + 1.0);
    if (idcg == 0.0) throw DataError("ndcg: no positive gains");
    double dcg = 0.0;
    for (std::size_t rank = 1; rank <= ranking.size(); ++rank) {
        auto it = judgments.find(ranking[rank - 1].paragraph_id);
        if (it == judgments.end()) continue;
        double gain = std::max(it->second, 0);
        dcg += gain / std::log2(static_cast<double>(rank) + 1.0);
    }
    return dcg / idcg;
}

// ---------------------------------------------------------------------------
// Full evaluation
// ---------------------------------------------------------------------------

enum class EvalMode { IncludeUnjudged, ExcludeUnjudged };

struct QueryMetrics {
    double ap = 0.0;
    double rprec = 0.0;
    double mrr = 0.0;
    double ndcg = 0.0;
};

struct MetricReport {
    EvalMode mode = EvalMode::IncludeUnjudged;
    std::map<std::string, QueryMetrics> per_query;
    QueryMetrics mean;
    std::size_t evaluated = 0;
    std::size_t skipped = 0;  // run queries without a relevant judgment
};

// mode=include treats unjudged documents as non-relevant; mode=exclude
// applies condense() first. Queries without any relevant judgment are
// excluded from the means and counted as skipped.
inline MetricReport evaluate(const Run& run, const Qrels& qrels, EvalMode mode,
                             Warnings* warnings = nullptr) {
    const Run* scored = &run;
    Run condensed;
    if (mode == EvalMode::ExcludeUnjudged) {
        condensed = condense(run, qrels);
        scored = &condensed;
    }
    MetricReport report;
    report.mode = mode;
    std::size_t overlap = 0;
    for (const auto& [qid, docs] : *scored) {
        auto qit = qrels.find(qid);
        if (qit == qrels.end() || qit->second.empty()) {
            warn(warnings, "evaluate: no judgments for query '" + qid + "', skipped");
            ++report.skipped;
            continue;
        }
        ++overlap;
        if (detail::count_relevant(qit->second) == 0) {
            warn(warnings, "evaluate: no relevant documents for query '" + qid +
                               "', skipped");
            ++report.skipped;
            continue;
        }
        QueryMetrics m;
        m.ap = average_precision(docs, qit->second);
        m.rprec = r_precision(docs, qit->second);
        m.mrr = reciprocal_rank(docs, qit->second);
        m.ndcg = ndcg(docs, qit->second);
        report.per_query[qid] = m;
        report.mean.ap += m.ap;
        report.mean.rprec += m.rprec;
        report.mean.mrr += m.mrr;
        report.mean.ndcg += m.ndcg;
        ++report.evaluated;
    }
    if (overlap == 0)
        throw DataError("evaluate: run and qrels share no queries");
    if (report.evaluated > 0) {
        double n = static_cast<double>(report.evaluated);
        report.mean.ap /= n;
        report.mean.rprec /= n;
        report.mean.mrr /= n;
        report.mean.ndcg /= n;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Stratified breakdown by main-heading training frequency
// ---------------------------------------------------------------------------

struct StratumReport {
    std::string name;
    std::size_t count = 0;
    double mean_ap = 0.0;
};

inline const std::vector<std::string>& stratum_names() {
    static const std::vector<std::string> names = {
        "Infrq.", "0-20%", "20-40%", "40-60%", "60-80%", "80-100%"};
    return names;
}

// Queries whose main heading never occurs in the training table go to the
// "Infrq." bucket; the rest bucket by the table's quintile edges. Pass an
// already-condensed run for exclude-unjudged semantics.
inline std::vector<StratumReport> stratified_report(
    const Run& run, const Qrels& qrels, const std::vector<Query>& outlines,
    const HeadingFrequencyTable& table, Warnings* warnings = nullptr) {
    std::map<std::string, const Query*> by_qid;
    for (const auto& q : outlines) by_qid[q.qid] = &q;

    std::vector<StratumReport> buckets;
    for (const auto& name : stratum_names()) buckets.push_back({name, 0, 0.0});

    for (const auto& [qid, docs] : run) {
        auto qit = qrels.find(qid);
        if (qit == qrels.end() || detail::count_relevant(qit->second) == 0)
            continue;
        auto oit = by_qid.find(qid);
        if (oit == by_qid.end()) {
            warn(warnings, "stratified_report: no outline for query '" + qid +
                               "', skipped");
            continue;
        }
        std::size_t freq = table.frequency(oit->second->main());
        std::size_t bucket;
        if (freq == 0) bucket = 0;
        else if (freq <= table.q20) bucket = 1;
        else if (freq <= table.q40) bucket = 2;
        else if (freq <= table.q60) bucket = 3;
        else if (freq <= table.q80) bucket = 4;
        else bucket = 5;
        buckets[bucket].mean_ap += average_precision(docs, qit->second);
        buckets[bucket].count += 1;
    }
    for (auto& b : buckets)
        if (b.count > 0) b.mean_ap /= static_cast<double>(b.count);
    return buckets;
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

inline std::string format_metric_table(const MetricReport& report) {
    char buf[256];
    std::string out;
    out += std::string("mode: ") + (report.mode == EvalMode::IncludeUnjudged
                                        ? "include-unjudged"
                                        : "exclude-unjudged") + "\n";
    std::snprintf(buf, sizeof(buf),
                  "queries evaluated: %zu (skipped without relevant: %zu)\n",
                  report.evaluated, report.skipped);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-8s %8s\n", "metric", "mean");
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-8s %8.4f\n", "MAP", report.mean.ap);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-8s %8.4f\n", "R-Prec", report.mean.rprec);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-8s %8.4f\n", "MRR", report.mean.mrr);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-8s %8.4f\n", "nDCG", report.mean.ndcg);
    out += buf;
    return out;
}

inline std::string format_metric_csv(const MetricReport& report) {
    char buf[256];
    std::string out = "metric,query,value\n";
    auto emit = [&](const char* metric, const std::string& qid, double value) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6f\n", metric, qid.c_str(), value);
        out += buf;
    };
    for (const auto& [qid, m] : report.per_query) emit("MAP", qid, m.ap);
    emit("MAP", "mean", report.mean.ap);
    for (const auto& [qid, m] : report.per_query) emit("R-Prec", qid, m.rprec);
    emit("R-Prec", "mean", report.mean.rprec);
    for (const auto& [qid, m] : report.per_query) emit("MRR", qid, m.mrr);
    emit("MRR", "mean", report.mean.mrr);
    for (const auto& [qid, m] : report.per_query) emit("nDCG", qid, m.ndcg);
    emit("nDCG", "mean", report.mean.ndcg);
    return out;
}

inline std::string format_strata_table(const std::vector<StratumReport>& strata) {
    char buf[128];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-10s %7s %8s\n", "stratum", "queries", "MAP");
    out += buf;
    for (const auto& s : strata) {
        if (s.count > 0)
            std::snprintf(buf, sizeof(buf), "%-10s %7zu %8.4f\n", s.name.c_str(),
                          s.count, s.mean_ap);
        else
            std::snprintf(buf, sizeof(buf), "%-10s %7zu %8s\n", s.name.c_str(),
                          s.count, "-");
        out += buf;
    }
    return out;
}

inline std::string format_strata_csv(const std::vector<StratumReport>& strata) {
    char buf[128];
    std::string out = "stratum,queries,map\n";
    for (const auto& s : strata) {
        if (s.count > 0)
            std::snprintf(buf, sizeof(buf), "%s,%zu,%.6f\n", s.name.c_str(),
                          s.count, s.mean_ap);
        else
            std::snprintf(buf, sizeof(buf), "%s,%zu,\n", s.name.c_str(), s.count);
        out += buf;
    }
    return out;
}

}  // namespace car
