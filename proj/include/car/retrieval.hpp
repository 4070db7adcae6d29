#pragma once

#include <algorithm>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "car/corpus.hpp"
#include "car/runfile.hpp"
#include "car/textproc.hpp"
#include "car/util.hpp"

namespace car {

constexpr double kBm25K1 = 1.2;
constexpr double kBm25B = 0.75;

struct Posting {
    std::size_t doc = 0;  // paragraph ordinal
    std::size_t tf = 0;
};

struct InvertedIndex {
    std::size_t n_docs = 0;
    double avg_dl = 0.0;
    std::vector<std::size_t> doc_lengths;         // by ordinal
    std::vector<std::string> doc_ids;             // ordinal -> paragraph id
    std::unordered_map<std::string, std::vector<Posting>> postings;

    double idf(const std::string& token) const {
        auto it = postings.find(token);
        double df = it == postings.end() ? 0.0 : static_cast<double>(it->second.size());
        double n = static_cast<double>(n_docs);
        return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
    }
};

inline InvertedIndex build_index(const std::vector<Paragraph>& paragraphs) {
    if (paragraphs.empty()) throw DataError("build_index: empty collection");
    InvertedIndex index;
    index.n_docs = paragraphs.size();
    index.doc_lengths.reserve(paragraphs.size());
    index.doc_ids.reserve(paragraphs.size());
    std::unordered_set<std::string> seen;
    std::size_t total_len = 0;
    for (std::size_t ord = 0; ord < paragraphs.size(); ++ord) {
        const auto& p = paragraphs[ord];
        if (!seen.insert(p.id).second)
            throw DataError("build_index: duplicate paragraph id '" + p.id + "'");
        auto tokens = tokenize(p.text);
        index.doc_lengths.push_back(tokens.size());
        index.doc_ids.push_back(p.id);
        total_len += tokens.size();
        std::unordered_map<std::string, std::size_t> tf;
        for (auto& t : tokens) ++tf[t];
        for (auto& [token, count] : tf)
            index.postings[token].push_back({ord, count});
    }
    index.avg_dl = static_cast<double>(total_len) / static_cast<double>(index.n_docs);
    // Postings were appended in ascending ordinal order by construction.
    return index;
}

// Query tokens for retrieval: the concatenation of all headings, tokenized,
// duplicates retained.
inline std::vector<std::string> query_tokens_flat(const Query& q) {
    std::vector<std::string> tokens;
    for (const auto& h : q.headings)
        for (auto& t : tokenize(h)) tokens.push_back(std::move(t));
    return tokens;
}

inline double bm25_term_weight(double tf, double dl, double avg_dl) {
    return tf * (kBm25K1 + 1.0) /
           (tf + kBm25K1 * (1.0 - kBm25B + kBm25B * dl / avg_dl));
}

// Top-k BM25 (k1=1.2, b=0.75). Score ties break by paragraph id ascending.
// Returns only documents that match at least one query token.
inline RankedList bm25_search(const InvertedIndex& index, const Query& query,
                              std::size_t k = 100) {
    if (k == 0) throw DataError("bm25_search: k must be positive");
    std::vector<double> scores(index.n_docs, 0.0);
    std::vector<char> matched(index.n_docs, 0);
    for (const auto& token : query_tokens_flat(query)) {
        auto it = index.postings.find(token);
        if (it == index.postings.end()) continue;
        double idf = index.idf(token);
        for (const auto& post : it->second) {
            double dl = static_cast<double>(index.doc_lengths[post.doc]);
            scores[post.doc] +=
                idf * bm25_term_weight(static_cast<double>(post.tf), dl, index.avg_dl);
            matched[post.doc] = 1;
        }
    }
    std::vector<std::size_t> docs;
    for (std::size_t d = 0; d < index.n_docs; ++d)
        if (matched[d]) docs.push_back(d);
    std::sort(docs.begin(), docs.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return index.doc_ids[a] < index.doc_ids[b];
    });
    if (docs.size() > k) docs.resize(k);
    RankedList out;
    out.reserve(docs.size());
    for (std::size_t d : docs) out.push_back({index.doc_ids[d], scores[d]});
    return out;
}

// ---------------------------------------------------------------------------
// Index file format
//
//   INVINDEX <n_docs>
//   D <doc_len> <paragraph_id>          one per ordinal, in order
//   T <token> <ord>:<tf> <ord>:<tf> ... tokens sorted ascending
// ---------------------------------------------------------------------------

inline std::string serialize_index(const InvertedIndex& index) {
    std::string out = "INVINDEX " + std::to_string(index.n_docs) + "\n";
    for (std::size_t d = 0; d < index.n_docs; ++d)
        out += "D " + std::to_string(index.doc_lengths[d]) + " " +
               index.doc_ids[d] + "\n";
    std::map<std::string, const std::vector<Posting>*> sorted;
    for (const auto& [token, posts] : index.postings) sorted[token] = &posts;
    for (const auto& [token, posts] : sorted) {
        out += "T " + token;
        for (const auto& p : *posts)
            out += " " + std::to_string(p.doc) + ":" + std::to_string(p.tf);
        out += "\n";
    }
    return out;
}

inline InvertedIndex parse_index(std::istream& in) {
    InvertedIndex index;
    std::string line;
    if (!std::getline(in, line))
        throw DataError("index: empty stream");
    {
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag >> index.n_docs) || tag != "INVINDEX")
            throw DataError("index: expected header 'INVINDEX <n_docs>'");
    }
    std::size_t total_len = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == 'D') {
            std::size_t sp1 = line.find(' ');
            std::size_t sp2 = line.find(' ', sp1 + 1);
            if (sp1 == std::string::npos || sp2 == std::string::npos)
                throw DataError("index line " + std::to_string(lineno) +
                                ": expected 'D <len> <id>'");
            std::size_t dl = std::stoul(line.substr(sp1 + 1, sp2 - sp1 - 1));
            index.doc_lengths.push_back(dl);
            index.doc_ids.push_back(line.substr(sp2 + 1));
            total_len += dl;
        } else if (line[0] == 'T') {
            std::istringstream ss(line);
            std::string tag, token, pair;
            ss >> tag >> token;
            auto& posts = index.postings[token];
            while (ss >> pair) {
                std::size_t colon = pair.find(':');
                if (colon == std::string::npos)
                    throw DataError("index line " + std::to_string(lineno) +
                                    ": malformed posting '" + pair + "'");
                posts.push_back({std::stoul(pair.substr(0, colon)),
                                 std::stoul(pair.substr(colon + 1))});
            }
        } else {
            throw DataError("index line " + std::to_string(lineno) +
                            ": unknown record type");
        }
    }
    if (index.doc_ids.size() != index.n_docs)
        throw DataError("index: document count mismatch");
    if (index.n_docs > 0)
        index.avg_dl = static_cast<double>(total_len) /
                       static_cast<double>(index.n_docs);
    return index;
}

}  // namespace car
