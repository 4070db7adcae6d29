#pragma once

#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "car/util.hpp"

namespace car {

// ---------------------------------------------------------------------------
// Data model
// ---------------------------------------------------------------------------

struct EntityLink {
    std::string target;  // linked article title, opaque id
    std::string anchor;  // surface form as it appears in the paragraph

    bool operator==(const EntityLink&) const = default;
};

struct Paragraph {
    std::string id;
    std::string text;
    std::vector<EntityLink> links;

    bool operator==(const Paragraph&) const = default;
};

// A query is a heading path: headings[0] is the article title (the topic
// entity), the last element is the main heading, anything in between is an
// intermediate heading. A single-heading query is its own main heading.
struct Query {
    std::string qid;
    std::vector<std::string> headings;

    const std::string& title() const { return headings.front(); }
    const std::string& main() const { return headings.back(); }

    bool operator==(const Query&) const = default;
};

struct Judgment {
    std::string qid;
    std::string paragraph_id;
    int grade = 0;  // manual judgments in [-2, 3]; automatic ones are 1
};

// qid -> paragraph id -> grade. At most one grade per (qid, pid).
using Qrels = std::map<std::string, std::map<std::string, int>>;

constexpr int kMinGrade = -2;
constexpr int kMaxGrade = 3;

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

inline bool contains_ci(const std::string& haystack, const std::string& needle) {
    if (needle.empty()) return true;
    return ascii_lower(haystack).find(ascii_lower(needle)) != std::string::npos;
}

}  // namespace detail

// Newline-delimited JSON, one paragraph per line:
//   {"id": str, "text": str, "links": [{"target": str, "anchor": str}]}
// A missing "links" field is read as an empty list. An anchor that does not
// occur (case-insensitively) in the text is reported as a warning only.
inline std::vector<Paragraph> parse_paragraphs(std::istream& in,
                                               Warnings* warnings = nullptr) {
    std::vector<Paragraph> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("paragraphs line " + std::to_string(lineno) +
                            ": malformed JSON: " + e.what());
        }
        Paragraph p;
        try {
            p.id = j.at("id").get<std::string>();
            p.text = j.at("text").get<std::string>();
            if (j.contains("links")) {
                for (const auto& lj : j.at("links")) {
                    EntityLink link;
                    link.target = lj.at("target").get<std::string>();
                    link.anchor = lj.at("anchor").get<std::string>();
                    p.links.push_back(std::move(link));
                }
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError("paragraphs line " + std::to_string(lineno) +
                            ": bad record: " + e.what());
        }
        if (p.id.empty())
            throw DataError("paragraphs line " + std::to_string(lineno) +
                            ": empty id");
        if (!seen.insert(p.id).second)
            throw DataError("paragraphs line " + std::to_string(lineno) +
                            ": duplicate id '" + p.id + "'");
        for (const auto& link : p.links) {
            if (link.target.empty())
                throw DataError("paragraphs line " + std::to_string(lineno) +
                                ": empty link target");
            if (!detail::contains_ci(p.text, link.anchor))
                warn(warnings, "paragraphs line " + std::to_string(lineno) +
                                   ": anchor '" + link.anchor +
                                   "' not found in text of '" + p.id + "'");
        }
        out.push_back(std::move(p));
    }
    return out;
}

// Newline-delimited JSON, one query per line:
//   {"qid": str, "headings": [str, ...]}
inline std::vector<Query> parse_outlines(std::istream& in) {
    std::vector<Query> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("outlines line " + std::to_string(lineno) +
                            ": malformed JSON: " + e.what());
        }
        Query q;
        try {
            q.qid = j.at("qid").get<std::string>();
            q.headings = j.at("headings").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError("outlines line " + std::to_string(lineno) +
                            ": bad record: " + e.what());
        }
        if (q.qid.empty())
            throw DataError("outlines line " + std::to_string(lineno) + ": empty qid");
        if (q.headings.empty())
            throw DataError("outlines line " + std::to_string(lineno) +
                            ": empty headings array in '" + q.qid + "'");
        for (const auto& h : q.headings)
            if (trim(h).empty())
                throw DataError("outlines line " + std::to_string(lineno) +
                                ": blank heading in '" + q.qid + "'");
        if (!seen.insert(q.qid).second)
            throw DataError("outlines line " + std::to_string(lineno) +
                            ": duplicate qid '" + q.qid + "'");
        out.push_back(std::move(q));
    }
    return out;
}

// TREC qrels lines: `<qid> 0 <paragraph_id> <grade>`, single-space separated.
// The second field is the conventional iteration column and is ignored.
// Duplicate (qid, pid) pairs: last one wins, with a warning.
inline Qrels parse_qrels(std::istream& in, Warnings* warnings = nullptr) {
    Qrels qrels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::istringstream ss(line);
        std::string qid, iter, pid, grade_str, extra;
        if (!(ss >> qid >> iter >> pid >> grade_str) || (ss >> extra))
            throw DataError("qrels line " + std::to_string(lineno) +
                            ": expected 4 fields");
        int grade = 0;
        try {
            std::size_t pos = 0;
            grade = std::stoi(grade_str, &pos);
            if (pos != grade_str.size()) throw std::invalid_argument(grade_str);
        } catch (const std::exception&) {
            throw DataError("qrels line " + std::to_string(lineno) +
                            ": non-integer grade '" + grade_str + "'");
        }
        if (grade < kMinGrade || grade > kMaxGrade)
            throw DataError("qrels line " + std::to_string(lineno) + ": grade " +
                            std::to_string(grade) + " outside [-2,3]");
        auto& per_query = qrels[qid];
        auto [it, inserted] = per_query.emplace(pid, grade);
        if (!inserted) {
            warn(warnings, "qrels line " + std::to_string(lineno) +
                               ": duplicate judgment for (" + qid + ", " + pid +
                               "), keeping the last one");
            it->second = grade;
        }
    }
    return qrels;
}

// ---------------------------------------------------------------------------
// Serialization (inverse of the parsers above)
// ---------------------------------------------------------------------------

inline std::string serialize_paragraphs(const std::vector<Paragraph>& paragraphs) {
    std::string out;
    for (const auto& p : paragraphs) {
        nlohmann::json j;
        j["id"] = p.id;
        j["text"] = p.text;
        auto links = nlohmann::json::array();
        for (const auto& link : p.links)
            links.push_back({{"target", link.target}, {"anchor", link.anchor}});
        j["links"] = std::move(links);
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline std::string serialize_outlines(const std::vector<Query>& queries) {
    std::string out;
    for (const auto& q : queries) {
        nlohmann::json j;
        j["qid"] = q.qid;
        j["headings"] = q.headings;
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline std::string serialize_qrels(const Qrels& qrels) {
    std::string out;
    for (const auto& [qid, docs] : qrels)
        for (const auto& [pid, grade] : docs)
            out += qid + " 0 " + pid + " " + std::to_string(grade) + "\n";
    return out;
}

// Headings joined by a guillemet separator, e.g. "Cheese » Nutrition and health".
inline std::string query_display(const Query& q) {
    std::string out;
    for (std::size_t i = 0; i < q.headings.size(); ++i) {
        if (i) out += " \xc2\xbb ";
        out += q.headings[i];
    }
    return out;
}

}  // namespace car
