#pragma once

#include <cmath>
#include <cstdlib>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "car/corpus.hpp"
#include "car/util.hpp"

namespace car {

// ---------------------------------------------------------------------------
// Tokenization
//
// Lowercase (ASCII), split on maximal runs of non-alphanumeric characters.
// Bytes >= 0x80 are kept as token characters so multi-byte UTF-8 sequences
// survive intact.
// ---------------------------------------------------------------------------

inline bool is_token_char(unsigned char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
           (c >= 'A' && c <= 'Z') || c >= 0x80;
}

inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : text) {
        if (is_token_char(static_cast<unsigned char>(ch))) {
            current.push_back(ascii_lower(ch));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

// ---------------------------------------------------------------------------
// IDF statistics
// ---------------------------------------------------------------------------

// BM25-style smoothed inverse document frequency over a paragraph collection.
// idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1); unseen tokens use df = 0.
struct IdfTable {
    std::size_t n_docs = 0;
    std::unordered_map<std::string, std::size_t> df;

    double idf(const std::string& token) const {
        auto it = df.find(token);
        double d = it == df.end() ? 0.0 : static_cast<double>(it->second);
        double n = static_cast<double>(n_docs);
        return std::log((n - d + 0.5) / (d + 0.5) + 1.0);
    }
};

inline IdfTable compute_idf(const std::vector<Paragraph>& paragraphs) {
    if (paragraphs.empty()) throw DataError("compute_idf: empty corpus");
    IdfTable table;
    table.n_docs = paragraphs.size();
    for (const auto& p : paragraphs) {
        std::unordered_set<std::string> seen;
        for (auto& t : tokenize(p.text))
            if (seen.insert(t).second) ++table.df[t];
    }
    return table;
}

// Text form: header `N <n_docs>`, then `<token> <df>` lines sorted by token.
inline std::string serialize_idf(const IdfTable& table) {
    std::map<std::string, std::size_t> sorted(table.df.begin(), table.df.end());
    std::string out = "N " + std::to_string(table.n_docs) + "\n";
    for (const auto& [token, df] : sorted)
        out += token + " " + std::to_string(df) + "\n";
    return out;
}

inline IdfTable parse_idf(std::istream& in) {
    IdfTable table;
    std::string line;
    if (!std::getline(in, line))
        throw DataError("idf table: empty stream");
    {
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag >> table.n_docs) || tag != "N")
            throw DataError("idf table: expected header 'N <n_docs>'");
    }
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::istringstream ss(line);
        std::string token;
        std::size_t df = 0;
        if (!(ss >> token >> df))
            throw DataError("idf table line " + std::to_string(lineno) +
                            ": expected '<token> <df>'");
        if (df == 0 || df > table.n_docs)
            throw DataError("idf table line " + std::to_string(lineno) +
                            ": df out of range for '" + token + "'");
        table.df[token] = df;
    }
    return table;
}

// ---------------------------------------------------------------------------
// Pretrained word embeddings
// ---------------------------------------------------------------------------

struct EmbeddingTable {
    std::size_t dim = 0;
    std::unordered_map<std::string, std::vector<double>> vectors;

    const std::vector<double>* find(const std::string& token) const {
        auto it = vectors.find(token);
        return it == vectors.end() ? nullptr : &it->second;
    }
};

// Text format: `<token> v1 ... vd` per line. An optional first line
// `<count> <dim>` (two numeric fields) is accepted and skipped.
inline EmbeddingTable load_embeddings(std::istream& in) {
    EmbeddingTable table;
    std::string line;
    std::size_t lineno = 0;
    bool first_content_line = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::istringstream ss(line);
        std::vector<std::string> fields;
        std::string f;
        while (ss >> f) fields.push_back(std::move(f));
        if (first_content_line && fields.size() == 2) {
            char* end = nullptr;
            std::strtod(fields[0].c_str(), &end);
            bool num0 = end && *end == '\0';
            std::strtod(fields[1].c_str(), &end);
            bool num1 = end && *end == '\0';
            if (num0 && num1) {  // `count dim` header
                first_content_line = false;
                continue;
            }
        }
        first_content_line = false;
        if (fields.size() < 2)
            throw DataError("embeddings line " + std::to_string(lineno) +
                            ": expected '<token> v1 ... vd'");
        std::vector<double> vec;
        vec.reserve(fields.size() - 1);
        for (std::size_t i = 1; i < fields.size(); ++i) {
            char* end = nullptr;
            double v = std::strtod(fields[i].c_str(), &end);
            if (!end || *end != '\0')
                throw DataError("embeddings line " + std::to_string(lineno) +
                                ": non-numeric component '" + fields[i] + "'");
            vec.push_back(v);
        }
        if (table.dim == 0) {
            table.dim = vec.size();
        } else if (vec.size() != table.dim) {
            throw DataError("embeddings line " + std::to_string(lineno) +
                            ": dimension mismatch (got " +
                            std::to_string(vec.size()) + ", expected " +
                            std::to_string(table.dim) + ")");
        }
        table.vectors[fields[0]] = std::move(vec);
    }
    if (table.vectors.empty())
        throw DataError("embeddings: no vectors found");
    return table;
}

// Cosine similarity; zero-norm vectors compare as 0. The exact-string-match
// override (identical tokens score 1 even out of vocabulary) is applied at
// similarity-matrix construction, not here.
inline double cosine_sim(const std::vector<double>& a,
                         const std::vector<double>& b) {
    if (a.size() != b.size())
        throw DataError("cosine_sim: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace car
