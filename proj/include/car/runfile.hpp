#pragma once

#include <cstdio>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "car/util.hpp"

namespace car {

struct ScoredDoc {
    std::string paragraph_id;
    double score = 0.0;
};

using RankedList = std::vector<ScoredDoc>;

// qid -> ranked candidates, best first. File order is authoritative: rerank
// breaks score ties by the original BM25 rank, so readers must not re-sort.
using Run = std::map<std::string, RankedList>;

// TREC run lines: `<qid> Q0 <pid> <rank> <score> <tag>`, rank starting at 1,
// score printed with 6 decimal places.
inline std::string serialize_run(const Run& run, const std::string& tag) {
    std::string out;
    char score_buf[64];
    for (const auto& [qid, docs] : run) {
        int rank = 1;
        for (const auto& doc : docs) {
            std::snprintf(score_buf, sizeof(score_buf), "%.6f", doc.score);
            out += qid + " Q0 " + doc.paragraph_id + " " + std::to_string(rank++) +
                   " " + score_buf + " " + tag + "\n";
        }
    }
    return out;
}

inline Run parse_run(std::istream& in) {
    Run run;
    std::unordered_set<std::string> seen;  // "qid\tpid"
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::istringstream ss(line);
        std::string qid, q0, pid, rank, tag;
        double score = 0.0;
        if (!(ss >> qid >> q0 >> pid >> rank >> score >> tag))
            throw DataError("run line " + std::to_string(lineno) +
                            ": expected '<qid> Q0 <pid> <rank> <score> <tag>'");
        if (!seen.insert(qid + "\t" + pid).second)
            throw DataError("run line " + std::to_string(lineno) +
                            ": duplicate document '" + pid + "' for query '" +
                            qid + "'");
        run[qid].push_back({pid, score});
    }
    return run;
}

}  // namespace car
