#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
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

// Catch-all relation for rare heads and title-only queries. Head labels are
// lowercase tokens, so the uppercase name cannot collide.
inline const std::string kOtherLabel = "OTHER";

constexpr std::size_t kDefaultEdgeLabelMax = 1000;  // e_max

// ---------------------------------------------------------------------------
// Edge labels
// ---------------------------------------------------------------------------

// Naive suffix lemmatizer: ies -> y, sses -> ss, trailing s dropped for
// tokens longer than 3 characters.
inline std::string lemmatize_label(std::string token) {
    auto ends_with = [&](std::string_view suf) {
        return token.size() >= suf.size() &&
               token.compare(token.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends_with("ies")) {
        token.replace(token.size() - 3, 3, "y");
    } else if (ends_with("sses")) {
        token.erase(token.size() - 2);
    } else if (ends_with("s") && token.size() > 3) {
        token.pop_back();
    }
    return token;
}

// Heuristic stand-in for the syntactic head of a heading: the last token
// that is not a function word. Falls back to the last token when every token
// is a function word; empty when the heading has no tokens at all.
inline std::string heading_head(const std::string& heading) {
    static const std::unordered_set<std::string> kFunctionWords = {
        "of", "the", "a", "an", "and", "or", "in", "on", "for", "to", "with"};
    auto tokens = tokenize(heading);
    if (tokens.empty()) return "";
    for (auto it = tokens.rbegin(); it != tokens.rend(); ++it)
        if (!kFunctionWords.count(*it)) return lemmatize_label(*it);
    return lemmatize_label(tokens.back());
}

// Maps a query to its relation label: the lemmatized head of the
// highest-level non-title heading, collapsed to OTHER when the head is not
// among the e_max most frequent heads of the training outlines.
class EdgeLabeler {
public:
    EdgeLabeler() = default;

    // Vocabulary = the e_max most frequent heads (count desc, label asc).
    EdgeLabeler(const std::vector<Query>& training_outlines, std::size_t e_max) {
        std::unordered_map<std::string, std::size_t> counts;
        for (const auto& q : training_outlines) {
            if (q.headings.size() < 2) continue;
            std::string head = heading_head(q.headings[1]);
            if (!head.empty()) ++counts[head];
        }
        std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(),
                                                                counts.end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        if (ranked.size() > e_max) ranked.resize(e_max);
        for (auto& [label, count] : ranked) {
            (void)count;
            vocab_.insert(std::move(label));
        }
    }

    // Build a labeler that accepts exactly the given labels (e.g. the
    // relation vocabulary of a trained embedding file).
    static EdgeLabeler from_labels(const std::vector<std::string>& labels) {
        EdgeLabeler labeler;
        for (const auto& l : labels)
            if (l != kOtherLabel) labeler.vocab_.insert(l);
        return labeler;
    }

    std::string label(const Query& q) const {
        if (q.headings.size() < 2) return kOtherLabel;
        std::string head = heading_head(q.headings[1]);
        if (head.empty() || !vocab_.count(head)) return kOtherLabel;
        return head;
    }

    const std::unordered_set<std::string>& vocabulary() const { return vocab_; }

private:
    std::unordered_set<std::string> vocab_;
};

// ---------------------------------------------------------------------------
// Mention sources
// ---------------------------------------------------------------------------

// A single capability: which entities does a paragraph mention. The built-in
// implementation reads the paragraph's links; an extractor-backed source
// (e.g. one driven by an external entity linker) plugs in behind the same
// interface.
class MentionSource {
public:
    virtual ~MentionSource() = default;
    virtual std::vector<std::string> mentions(const Paragraph& p) const = 0;
};

class LinkMentionSource : public MentionSource {
public:
    std::vector<std::string> mentions(const Paragraph& p) const override {
        std::vector<std::string> out;
        out.reserve(p.links.size());
        for (const auto& link : p.links) out.push_back(link.target);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Knowledge graph
// ---------------------------------------------------------------------------

struct Triple {
    std::size_t subject = 0;
    std::size_t relation = 0;
    std::size_t object = 0;

    auto operator<=>(const Triple&) const = default;
};

struct KnowledgeGraph {
    std::vector<std::string> entities;   // sorted ascending
    std::vector<std::string> relations;  // sorted ascending, includes OTHER
    std::vector<Triple> triples;         // sorted, deduplicated

    std::unordered_map<std::string, std::size_t> entity_index;
    std::unordered_map<std::string, std::size_t> relation_index;

    void rebuild_indexes() {
        entity_index.clear();
        relation_index.clear();
        for (std::size_t i = 0; i < entities.size(); ++i) entity_index[entities[i]] = i;
        for (std::size_t i = 0; i < relations.size(); ++i) relation_index[relations[i]] = i;
    }
};

// For every query, every relevant paragraph and every mention m of that
// paragraph, adds the triple (title(q), edge_label(q), m). Relevance means a
// binarized grade >= 1. Duplicate triples collapse; the result is independent
// of input iteration order.
inline KnowledgeGraph build_graph(const std::vector<Query>& outlines,
                                  const Qrels& qrels,
                                  const std::vector<Paragraph>& paragraphs,
                                  const MentionSource& source,
                                  std::size_t e_max = kDefaultEdgeLabelMax,
                                  Warnings* warnings = nullptr) {
    EdgeLabeler labeler(outlines, e_max);

    std::unordered_map<std::string, const Paragraph*> by_id;
    for (const auto& p : paragraphs) by_id[p.id] = &p;

    std::set<std::string> entity_set;
    std::set<std::string> relation_set = {kOtherLabel};
    std::set<std::array<std::string, 3>> raw_triples;

    for (const auto& q : outlines) {
        entity_set.insert(q.title());
        auto qit = qrels.find(q.qid);
        if (qit == qrels.end()) continue;
        std::string label = labeler.label(q);
        relation_set.insert(label);
        for (const auto& [pid, grade] : qit->second) {
            if (grade < 1) continue;
            auto pit = by_id.find(pid);
            if (pit == by_id.end()) {
                warn(warnings, "build_graph: paragraph '" + pid +
                                   "' judged for '" + q.qid +
                                   "' is not in the collection");
                continue;
            }
            for (const auto& m : source.mentions(*pit->second)) {
                entity_set.insert(m);
                raw_triples.insert({q.title(), label, m});
            }
        }
    }

    KnowledgeGraph g;
    g.entities.assign(entity_set.begin(), entity_set.end());
    g.relations.assign(relation_set.begin(), relation_set.end());
    g.rebuild_indexes();
    g.triples.reserve(raw_triples.size());
    for (const auto& [s, r, o] : raw_triples)
        g.triples.push_back({g.entity_index.at(s), g.relation_index.at(r),
                             g.entity_index.at(o)});
    std::sort(g.triples.begin(), g.triples.end());
    return g;
}

// Graph file: one `<subject>\t<relation>\t<object>` line per triple.
inline std::string serialize_graph(const KnowledgeGraph& g) {
    std::string out;
    for (const auto& t : g.triples)
        out += g.entities[t.subject] + "\t" + g.relations[t.relation] + "\t" +
               g.entities[t.object] + "\n";
    return out;
}

inline KnowledgeGraph parse_graph(std::istream& in) {
    std::set<std::string> entity_set;
    std::set<std::string> relation_set = {kOtherLabel};
    std::set<std::array<std::string, 3>> raw;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::size_t t1 = line.find('\t');
        std::size_t t2 = t1 == std::string::npos ? std::string::npos
                                                 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos)
            throw DataError("graph line " + std::to_string(lineno) +
                            ": expected '<subject>\\t<relation>\\t<object>'");
        std::string s = line.substr(0, t1);
        std::string r = line.substr(t1 + 1, t2 - t1 - 1);
        std::string o = line.substr(t2 + 1);
        if (s.empty() || r.empty() || o.empty())
            throw DataError("graph line " + std::to_string(lineno) +
                            ": empty field");
        entity_set.insert(s);
        entity_set.insert(o);
        relation_set.insert(r);
        raw.insert({std::move(s), std::move(r), std::move(o)});
    }
    KnowledgeGraph g;
    g.entities.assign(entity_set.begin(), entity_set.end());
    g.relations.assign(relation_set.begin(), relation_set.end());
    g.rebuild_indexes();
    for (const auto& [s, r, o] : raw)
        g.triples.push_back({g.entity_index.at(s), g.relation_index.at(r),
                             g.entity_index.at(o)});
    std::sort(g.triples.begin(), g.triples.end());
    return g;
}

// ---------------------------------------------------------------------------
// HolE scoring
// ---------------------------------------------------------------------------

// Circular correlation: out[k] = sum_i a[i] * b[(i+k) mod d].
inline std::vector<double> circular_correlation(const std::vector<double>& a,
                                                const std::vector<double>& b) {
    if (a.size() != b.size())
        throw DataError("circular_correlation: length mismatch");
    std::size_t d = a.size();
    std::vector<double> out(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
        double sum = 0.0;
        for (std::size_t i = 0; i < d; ++i) sum += a[i] * b[(i + k) % d];
        out[k] = sum;
    }
    return out;
}

// Circular convolution: out[j] = sum_i a[i] * b[(j-i) mod d].
inline std::vector<double> circular_convolution(const std::vector<double>& a,
                                                const std::vector<double>& b) {
    if (a.size() != b.size())
        throw DataError("circular_convolution: length mismatch");
    std::size_t d = a.size();
    std::vector<double> out(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < d; ++i) sum += a[i] * b[(j + d - i) % d];
        out[j] = sum;
    }
    return out;
}

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

// Raw triple score eta = r . (s * o) where * is circular correlation.
inline double hole_raw_score(const std::vector<double>& s,
                             const std::vector<double>& r,
                             const std::vector<double>& o) {
    auto corr = circular_correlation(s, o);
    double dot = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) dot += r[i] * corr[i];
    return dot;
}

// d(eta)/ds = r * o (correlation), d(eta)/dr = s * o, d(eta)/do = s (x) r
// (convolution). Accumulates `weight * gradient` into the outputs.
inline void accumulate_hole_grad(const std::vector<double>& s,
                                 const std::vector<double>& r,
                                 const std::vector<double>& o, double weight,
                                 std::vector<double>& grad_s,
                                 std::vector<double>& grad_r,
                                 std::vector<double>& grad_o) {
    auto ds = circular_correlation(r, o);
    auto dr = circular_correlation(s, o);
    auto dobj = circular_convolution(s, r);
    for (std::size_t i = 0; i < s.size(); ++i) {
        grad_s[i] += weight * ds[i];
        grad_r[i] += weight * dr[i];
        grad_o[i] += weight * dobj[i];
    }
}

// Pairwise logistic ranking loss on raw scores: ln(1 + exp(-(pos - neg))).
inline double hole_pair_loss(double eta_pos, double eta_neg) {
    double delta = eta_pos - eta_neg;
    if (-delta > 35.0) return -delta;
    return std::log1p(std::exp(-delta));
}

// Derivative of hole_pair_loss w.r.t. eta_pos (w.r.t. eta_neg it is the
// negation).
inline double hole_pair_dloss(double eta_pos, double eta_neg) {
    return -sigmoid(-(eta_pos - eta_neg));
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

struct HoleEmbeddings {
    std::size_t dim = 0;
    std::map<std::string, std::vector<double>> entity;
    std::map<std::string, std::vector<double>> relation;

    const std::vector<double>* find_entity(const std::string& id) const {
        auto it = entity.find(id);
        return it == entity.end() ? nullptr : &it->second;
    }
    const std::vector<double>* find_relation(const std::string& label) const {
        auto it = relation.find(label);
        return it == relation.end() ? nullptr : &it->second;
    }
};

// sigma(r . (s * o)), strictly inside (0, 1).
inline double hole_score(const HoleEmbeddings& emb, const std::string& subject,
                         const std::string& relation, const std::string& object) {
    const auto* s = emb.find_entity(subject);
    const auto* r = emb.find_relation(relation);
    const auto* o = emb.find_entity(object);
    if (!s || !r || !o)
        throw DataError("hole_score: unknown entity or relation");
    return sigmoid(hole_raw_score(*s, *r, *o));
}

struct HoleConfig {
    std::size_t dim = 64;
    std::size_t iterations = 5000;  // epochs over the triple set
    double learning_rate = 0.05;
    std::size_t negatives_per_positive = 1;
    std::uint64_t seed = 1;
};

// Stochastic training of HolE embeddings with uniform entity corruption and
// the pairwise logistic loss above. Returns the parameter snapshot from the
// epoch with the lowest mean training loss (earliest epoch on ties).
// Deterministic for a fixed seed.
inline HoleEmbeddings train_hole(const KnowledgeGraph& graph,
                                 const HoleConfig& config) {
    if (graph.triples.empty()) throw DataError("train_hole: empty graph");
    if (config.dim == 0) throw DataError("train_hole: dimension must be positive");
    if (graph.entities.size() < 2)
        throw DataError("train_hole: need at least 2 entities for corruption");

    const std::size_t d = config.dim;
    const std::size_t n_ent = graph.entities.size();
    Rng rng(config.seed);

    auto init_matrix = [&](std::size_t rows) {
        std::vector<std::vector<double>> m(rows);
        double half = 0.5 / static_cast<double>(d);
        for (auto& row : m) {
            row.resize(d);
            for (auto& v : row) v = uniform_range(rng, -half, half);
        }
        return m;
    };
    auto ent = init_matrix(n_ent);
    auto rel = init_matrix(graph.relations.size());

    std::vector<std::size_t> order(graph.triples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double best_loss = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_ent = ent, best_rel = rel;

    std::vector<double> gs(d), gr(d), go(d), gcs(d), gco(d);
    for (std::size_t epoch = 0; epoch < config.iterations; ++epoch) {
        car::shuffle(order, rng);
        double epoch_loss = 0.0;
        std::size_t n_pairs = 0;
        for (std::size_t idx : order) {
            const Triple& t = graph.triples[idx];
            for (std::size_t neg = 0; neg < config.negatives_per_positive; ++neg) {
                bool corrupt_subject = (rng() & 1) != 0;
                std::size_t original = corrupt_subject ? t.subject : t.object;
                std::size_t corrupted = original;
                while (corrupted == original)
                    corrupted = uniform_index(rng, n_ent);
                std::size_t cs = corrupt_subject ? corrupted : t.subject;
                std::size_t co = corrupt_subject ? t.object : corrupted;

                double eta_pos = hole_raw_score(ent[t.subject], rel[t.relation],
                                                ent[t.object]);
                double eta_neg = hole_raw_score(ent[cs], rel[t.relation], ent[co]);
                epoch_loss += hole_pair_loss(eta_pos, eta_neg);
                ++n_pairs;
                double g = hole_pair_dloss(eta_pos, eta_neg);

                std::fill(gs.begin(), gs.end(), 0.0);
                std::fill(gr.begin(), gr.end(), 0.0);
                std::fill(go.begin(), go.end(), 0.0);
                std::fill(gcs.begin(), gcs.end(), 0.0);
                std::fill(gco.begin(), gco.end(), 0.0);
                accumulate_hole_grad(ent[t.subject], rel[t.relation], ent[t.object],
                                     g, gs, gr, go);
                accumulate_hole_grad(ent[cs], rel[t.relation], ent[co], -g, gcs,
                                     gr, gco);
                // gr already carries both contributions; entity updates are
                // applied per involved row (rows may coincide).
                double lr = config.learning_rate;
                for (std::size_t i = 0; i < d; ++i) {
                    ent[t.subject][i] -= lr * gs[i];
                    ent[t.object][i] -= lr * go[i];
                    ent[cs][i] -= lr * gcs[i];
                    ent[co][i] -= lr * gco[i];
                    rel[t.relation][i] -= lr * gr[i];
                }
            }
        }
        epoch_loss /= static_cast<double>(n_pairs);
        if (epoch_loss < best_loss) {
            best_loss = epoch_loss;
            best_ent = ent;
            best_rel = rel;
        }
    }

    HoleEmbeddings emb;
    emb.dim = d;
    for (std::size_t i = 0; i < n_ent; ++i)
        emb.entity[graph.entities[i]] = best_ent[i];
    for (std::size_t i = 0; i < graph.relations.size(); ++i)
        emb.relation[graph.relations[i]] = best_rel[i];
    return emb;
}

// Top-n HolE scores of the paragraph's known mentions against the query
// topic under the query's relation label, padded with zeros. Unknown topic
// or label yields the all-zero vector: absent evidence, not neutral.
inline std::vector<double> entity_scores(const HoleEmbeddings& emb,
                                         const std::string& topic,
                                         const std::string& label,
                                         const Paragraph& p,
                                         const MentionSource& source,
                                         std::size_t n = 2) {
    std::vector<double> out(n, 0.0);
    const auto* topic_vec = emb.find_entity(topic);
    const auto* rel_vec = emb.find_relation(label);
    if (!topic_vec || !rel_vec) return out;
    std::vector<double> scores;
    for (const auto& m : source.mentions(p)) {
        const auto* obj = emb.find_entity(m);
        if (!obj) continue;
        scores.push_back(sigmoid(hole_raw_score(*topic_vec, *rel_vec, *obj)));
    }
    std::stable_sort(scores.begin(), scores.end(), std::greater<double>());
    for (std::size_t i = 0; i < n && i < scores.size(); ++i) out[i] = scores[i];
    return out;
}

// ---------------------------------------------------------------------------
// Embedding file format
//
//   HOLE <d> <n_entities> <n_relations>
//   E <entity> v1 ... vd
//   R <label> v1 ... vd
//
// Values are printed with 17 significant digits so they round-trip exactly.
// Names are whitespace-tokenized: ids with runs of multiple spaces are
// normalized to single spaces on reload.
// ---------------------------------------------------------------------------

namespace detail {

inline void append_vector(std::string& out, const std::vector<double>& v) {
    char buf[64];
    for (double x : v) {
        std::snprintf(buf, sizeof(buf), " %.17g", x);
        out += buf;
    }
}

}  // namespace detail

inline std::string serialize_hole(const HoleEmbeddings& emb) {
    std::string out = "HOLE " + std::to_string(emb.dim) + " " +
                      std::to_string(emb.entity.size()) + " " +
                      std::to_string(emb.relation.size()) + "\n";
    for (const auto& [name, vec] : emb.entity) {
        out += "E " + name;
        detail::append_vector(out, vec);
        out += "\n";
    }
    for (const auto& [name, vec] : emb.relation) {
        out += "R " + name;
        detail::append_vector(out, vec);
        out += "\n";
    }
    return out;
}

inline HoleEmbeddings parse_hole(std::istream& in) {
    HoleEmbeddings emb;
    std::string line;
    std::size_t n_ent = 0, n_rel = 0;
    if (!std::getline(in, line))
        throw DataError("hole embeddings: empty stream");
    {
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag >> emb.dim >> n_ent >> n_rel) || tag != "HOLE")
            throw DataError("hole embeddings: expected 'HOLE <d> <n_ent> <n_rel>'");
    }
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::istringstream ss(line);
        std::vector<std::string> fields;
        std::string f;
        while (ss >> f) fields.push_back(std::move(f));
        if (fields.size() < 2 + emb.dim || (fields[0] != "E" && fields[0] != "R"))
            throw DataError("hole embeddings line " + std::to_string(lineno) +
                            ": malformed record");
        std::string name = fields[1];
        for (std::size_t i = 2; i + emb.dim < fields.size(); ++i)
            name += " " + fields[i];
        std::vector<double> vec(emb.dim);
        for (std::size_t i = 0; i < emb.dim; ++i) {
            char* end = nullptr;
            vec[i] = std::strtod(fields[fields.size() - emb.dim + i].c_str(), &end);
            if (!end || *end != '\0')
                throw DataError("hole embeddings line " + std::to_string(lineno) +
                                ": non-numeric component");
        }
        if (fields[0] == "E")
            emb.entity[name] = std::move(vec);
        else
            emb.relation[name] = std::move(vec);
    }
    if (emb.entity.size() != n_ent || emb.relation.size() != n_rel)
        throw DataError("hole embeddings: header count mismatch");
    return emb;
}

}  // namespace car
