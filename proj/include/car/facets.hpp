#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "car/corpus.hpp"
#include "car/textproc.hpp"
#include "car/util.hpp"

namespace car {

// ---------------------------------------------------------------------------
// Heading roles
// ---------------------------------------------------------------------------

enum class HeadingRole { Title, Intermediate, Main };

// headings[0] is always the title; for single-heading queries the title role
// wins so that exactly one position vector fires per token.
inline HeadingRole heading_role(const Query& q, std::size_t heading_index) {
    if (heading_index == 0) return HeadingRole::Title;
    if (heading_index + 1 == q.headings.size()) return HeadingRole::Main;
    return HeadingRole::Intermediate;
}

inline const char* role_name(HeadingRole role) {
    switch (role) {
        case HeadingRole::Title: return "title";
        case HeadingRole::Intermediate: return "inter";
        case HeadingRole::Main: return "main";
    }
    return "?";
}

// Flattened query tokens annotated with their source heading and role.
struct TokenizedQuery {
    std::vector<std::string> tokens;
    std::vector<std::size_t> heading_index;
    std::vector<HeadingRole> roles;

    std::size_t size() const { return tokens.size(); }
};

inline TokenizedQuery tokenize_query(const Query& q) {
    TokenizedQuery tq;
    for (std::size_t h = 0; h < q.headings.size(); ++h) {
        HeadingRole role = heading_role(q, h);
        for (auto& t : tokenize(q.headings[h])) {
            tq.tokens.push_back(std::move(t));
            tq.heading_index.push_back(h);
            tq.roles.push_back(role);
        }
    }
    return tq;
}

// ---------------------------------------------------------------------------
// Heading frequency table
// ---------------------------------------------------------------------------

// Heading matching is a complete, case-insensitive match of the text; no
// substring matching and no typo tolerance.
inline std::string normalize_heading(std::string_view heading) {
    return ascii_lower(trim(heading));
}

// Document frequency of each heading text over the training articles, plus
// the percentile breakpoints used for stratification (60/90/99) and the
// quintile edges (20/40/60/80) used by the stratified evaluation report.
struct HeadingFrequencyTable {
    std::unordered_map<std::string, std::size_t> freq;  // normalized text -> articles
    std::size_t p60 = 0, p90 = 0, p99 = 0;
    std::size_t q20 = 0, q40 = 0, q60 = 0, q80 = 0;

    // 0 for headings at or below the 60th percentile (or unseen), up to 3 for
    // headings above the 99th.
    int stratify(std::string_view heading) const {
        auto it = freq.find(normalize_heading(heading));
        if (it == freq.end()) return 0;
        std::size_t f = it->second;
        if (f <= p60) return 0;
        if (f <= p90) return 1;
        if (f <= p99) return 2;
        return 3;
    }

    // Article count for a heading; 0 when unseen.
    std::size_t frequency(std::string_view heading) const {
        auto it = freq.find(normalize_heading(heading));
        return it == freq.end() ? 0 : it->second;
    }
};

namespace detail {

// Nearest-rank percentile over a sorted ascending multiset.
inline std::size_t nearest_rank(const std::vector<std::size_t>& sorted, double pct) {
    std::size_t n = sorted.size();
    std::size_t rank = static_cast<std::size_t>(
        std::ceil(pct / 100.0 * static_cast<double>(n)));
    if (rank < 1) rank = 1;
    if (rank > n) rank = n;
    return sorted[rank - 1];
}

}  // namespace detail

// Counts each distinct heading text once per article in which it appears.
// Articles are grouped by title (headings[0]); the title text itself
// participates like any heading, so every title has frequency >= 1 via its
// own article.
inline HeadingFrequencyTable count_heading_frequencies(
    const std::vector<Query>& outlines) {
    if (outlines.empty())
        throw DataError("count_heading_frequencies: empty outline set");
    std::unordered_map<std::string, std::unordered_set<std::string>> per_article;
    for (const auto& q : outlines) {
        auto& headings = per_article[normalize_heading(q.title())];
        for (const auto& h : q.headings) headings.insert(normalize_heading(h));
    }
    HeadingFrequencyTable table;
    for (const auto& [title, headings] : per_article) {
        (void)title;
        for (const auto& h : headings) ++table.freq[h];
    }
    std::vector<std::size_t> values;
    values.reserve(table.freq.size());
    for (const auto& [h, f] : table.freq) {
        (void)h;
        values.push_back(f);
    }
    std::sort(values.begin(), values.end());
    table.p60 = detail::nearest_rank(values, 60.0);
    table.p90 = detail::nearest_rank(values, 90.0);
    table.p99 = detail::nearest_rank(values, 99.0);
    table.q20 = detail::nearest_rank(values, 20.0);
    table.q40 = detail::nearest_rank(values, 40.0);
    table.q60 = detail::nearest_rank(values, 60.0);
    table.q80 = detail::nearest_rank(values, 80.0);
    return table;
}

// Text form, headings sorted for reproducible output:
//   HFTABLE <n_headings>
//   BREAKPOINTS <p60> <p90> <p99>
//   QUINTILES <q20> <q40> <q60> <q80>
//   <freq>\t<normalized heading>
inline std::string serialize_hf_table(const HeadingFrequencyTable& table) {
    std::string out = "HFTABLE " + std::to_string(table.freq.size()) + "\n";
    out += "BREAKPOINTS " + std::to_string(table.p60) + " " +
           std::to_string(table.p90) + " " + std::to_string(table.p99) + "\n";
    out += "QUINTILES " + std::to_string(table.q20) + " " +
           std::to_string(table.q40) + " " + std::to_string(table.q60) + " " +
           std::to_string(table.q80) + "\n";
    std::map<std::string, std::size_t> sorted(table.freq.begin(), table.freq.end());
    for (const auto& [heading, f] : sorted)
        out += std::to_string(f) + "\t" + heading + "\n";
    return out;
}

inline HeadingFrequencyTable parse_hf_table(std::istream& in) {
    HeadingFrequencyTable table;
    std::string line;
    std::size_t n = 0;
    if (!std::getline(in, line))
        throw DataError("hf table: empty stream");
    {
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag >> n) || tag != "HFTABLE")
            throw DataError("hf table: expected header 'HFTABLE <n>'");
    }
    if (!std::getline(in, line))
        throw DataError("hf table: missing BREAKPOINTS line");
    {
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag >> table.p60 >> table.p90 >> table.p99) || tag != "BREAKPOINTS")
            throw DataError("hf table: malformed BREAKPOINTS line");
    }
    if (!std::getline(in, line))
        throw DataError("hf table: missing QUINTILES line");
    {
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag >> table.q20 >> table.q40 >> table.q60 >> table.q80) ||
            tag != "QUINTILES")
            throw DataError("hf table: malformed QUINTILES line");
    }
    std::size_t lineno = 3;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("hf table line " + std::to_string(lineno) +
                            ": expected '<freq>\\t<heading>'");
        table.freq[line.substr(tab + 1)] = std::stoul(line.substr(0, tab));
    }
    if (table.freq.size() != n)
        throw DataError("hf table: heading count mismatch");
    return table;
}

// ---------------------------------------------------------------------------
// Contextual vectors
// ---------------------------------------------------------------------------

// Per-query-token facet-utility features: three mutually exclusive position
// indicators plus the frequency stratum of the token's source heading.
struct ContextualVectors {
    std::vector<int> position_title;
    std::vector<int> position_inter;
    std::vector<int> position_main;
    std::vector<int> heading_frequency;  // values in [0, 3]

    std::size_t size() const { return position_title.size(); }
};

inline ContextualVectors contextual_vectors(const Query& q,
                                            const HeadingFrequencyTable& table) {
    TokenizedQuery tq = tokenize_query(q);
    ContextualVectors cv;
    cv.position_title.resize(tq.size(), 0);
    cv.position_inter.resize(tq.size(), 0);
    cv.position_main.resize(tq.size(), 0);
    cv.heading_frequency.resize(tq.size(), 0);
    for (std::size_t i = 0; i < tq.size(); ++i) {
        switch (tq.roles[i]) {
            case HeadingRole::Title: cv.position_title[i] = 1; break;
            case HeadingRole::Intermediate: cv.position_inter[i] = 1; break;
            case HeadingRole::Main: cv.position_main[i] = 1; break;
        }
        cv.heading_frequency[i] = table.stratify(q.headings[tq.heading_index[i]]);
    }
    return cv;
}

// ---------------------------------------------------------------------------
// Term occurrence rate (occ)
// ---------------------------------------------------------------------------

struct OccurrenceStat {
    std::string heading;
    double occ = 0.0;        // in [0, 1]
    std::size_t support = 0; // |rel(h)|
};

// Fraction of the heading's relevant paragraphs that contain at least one of
// the heading's tokens (case-insensitive token match).
inline OccurrenceStat term_occurrence_rate(
    const std::string& heading, const std::vector<const Paragraph*>& rel) {
    if (rel.empty())
        throw DataError("term_occurrence_rate: empty relevant set for '" +
                        heading + "'");
    auto heading_tokens = tokenize(heading);
    std::unordered_set<std::string> wanted(heading_tokens.begin(),
                                           heading_tokens.end());
    std::size_t hits = 0;
    for (const Paragraph* p : rel) {
        for (const auto& t : tokenize(p->text)) {
            if (wanted.count(t)) {
                ++hits;
                break;
            }
        }
    }
    OccurrenceStat stat;
    stat.heading = heading;
    stat.support = rel.size();
    stat.occ = static_cast<double>(hits) / static_cast<double>(rel.size());
    return stat;
}

// Per-(role, heading) occurrence statistics over a judged collection: the
// relevant sets of every query sharing a heading in the same role are
// unioned, then occ is computed once per group. Output is sorted by role and
// normalized heading text.
struct RoleOccurrence {
    HeadingRole role = HeadingRole::Title;
    std::string heading;      // normalized text
    OccurrenceStat stat;
    std::size_t frequency = 0;  // from the heading frequency table, 0 if unseen
};

inline std::vector<RoleOccurrence> occurrence_analysis(
    const std::vector<Query>& outlines, const Qrels& qrels,
    const std::vector<Paragraph>& paragraphs,
    const HeadingFrequencyTable& table) {
    std::unordered_map<std::string, const Paragraph*> by_id;
    for (const auto& p : paragraphs) by_id[p.id] = &p;

    // (role, heading) -> paragraph ids
    std::map<std::pair<int, std::string>, std::set<std::string>> groups;
    for (const auto& q : outlines) {
        auto qit = qrels.find(q.qid);
        if (qit == qrels.end()) continue;
        std::vector<std::string> rel_ids;
        for (const auto& [pid, grade] : qit->second)
            if (grade >= 1 && by_id.count(pid)) rel_ids.push_back(pid);
        if (rel_ids.empty()) continue;
        for (std::size_t h = 0; h < q.headings.size(); ++h) {
            auto key = std::make_pair(static_cast<int>(heading_role(q, h)),
                                      normalize_heading(q.headings[h]));
            groups[key].insert(rel_ids.begin(), rel_ids.end());
        }
    }

    std::vector<RoleOccurrence> out;
    out.reserve(groups.size());
    for (const auto& [key, ids] : groups) {
        std::vector<const Paragraph*> rel;
        rel.reserve(ids.size());
        for (const auto& id : ids) rel.push_back(by_id.at(id));
        RoleOccurrence ro;
        ro.role = static_cast<HeadingRole>(key.first);
        ro.heading = key.second;
        ro.stat = term_occurrence_rate(key.second, rel);
        ro.frequency = table.frequency(key.second);
        out.push_back(std::move(ro));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Kernel density estimation over occurrence rates
// ---------------------------------------------------------------------------

// Gaussian kernel with Silverman bandwidth 1.06 * sigma * n^(-1/5), floored
// at 1e-3 so degenerate samples stay finite.
inline std::vector<double> kde(const std::vector<double>& values,
                               const std::vector<double>& grid) {
    if (values.size() < 2)
        throw DataError("kde: need at least 2 values");
    double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= (n - 1.0);
    double bw = 1.06 * std::sqrt(var) * std::pow(n, -0.2);
    if (bw < 1e-3) bw = 1e-3;
    const double norm = 1.0 / (n * bw * std::sqrt(2.0 * M_PI));
    std::vector<double> density;
    density.reserve(grid.size());
    for (double x : grid) {
        double sum = 0.0;
        for (double v : values) {
            double z = (x - v) / bw;
            sum += std::exp(-0.5 * z * z);
        }
        density.push_back(norm * sum);
    }
    return density;
}

// ---------------------------------------------------------------------------
// Occurrence by heading frequency
// ---------------------------------------------------------------------------

struct OccurrenceBin {
    double bin_center = 0.0;   // frequency bin [100*b, 100*b+100) center
    double mean_occ = 0.0;     // support-weighted mean
    std::size_t support = 0;   // total |rel(h)| in the bin
};

// Bins of width 100 on heading frequency; headings with frequency < 2 are
// excluded. Bins are emitted in ascending order; empty bins are skipped.
inline std::vector<OccurrenceBin> binned_occurrence_by_frequency(
    const std::vector<std::pair<std::size_t, OccurrenceStat>>& stats) {
    std::map<std::size_t, std::pair<double, std::size_t>> bins;  // bin -> (sum, support)
    for (const auto& [freq, stat] : stats) {
        if (freq < 2) continue;
        auto& [sum, support] = bins[freq / 100];
        sum += stat.occ * static_cast<double>(stat.support);
        support += stat.support;
    }
    std::vector<OccurrenceBin> out;
    out.reserve(bins.size());
    for (const auto& [bin, acc] : bins) {
        OccurrenceBin b;
        b.bin_center = 100.0 * static_cast<double>(bin) + 50.0;
        b.support = acc.second;
        b.mean_occ = acc.second ? acc.first / static_cast<double>(acc.second) : 0.0;
        out.push_back(b);
    }
    return out;
}

}  // namespace car
