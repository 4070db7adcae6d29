// carpipe: end-to-end complex-answer-retrieval pipeline.
//
// Subcommands cover the full experiment flow: corpus statistics, BM25
// indexing and retrieval, knowledge-graph construction and embedding
// training, neural reranker training, reranking, evaluation, and the
// facet-utility analysis outputs.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "car/corpus.hpp"
#include "car/eval.hpp"
#include "car/facets.hpp"
#include "car/kg.hpp"
#include "car/ranker.hpp"
#include "car/retrieval.hpp"
#include "car/runfile.hpp"
#include "car/textproc.hpp"
#include "car/training.hpp"
#include "car/util.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

// Command-line / config-file problems, as opposed to bad data files.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw car::DataError("cannot open input file: " + path);
    return in;
}

// Flat key=value config support. Keys name long options of the subcommand
// (e.g. `k=100`, `filter-sizes=2 3`); values split on whitespace unless
// double-quoted. The expanded tokens are inserted before the explicit flags,
// which therefore override the file.
std::vector<std::string> config_tokens(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    std::vector<std::string> tokens;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string entry = car::trim(line);
        if (entry.empty() || entry[0] == '#') continue;
        std::size_t eq = entry.find('=');
        if (eq == std::string::npos || eq == 0)
            throw UsageError("config " + path + " line " + std::to_string(lineno) +
                             ": expected key=value");
        std::string key = car::trim(entry.substr(0, eq));
        std::string value = car::trim(entry.substr(eq + 1));
        tokens.push_back("--" + key);
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
            tokens.push_back(value.substr(1, value.size() - 2));
        } else {
            std::istringstream vs(value);
            std::string piece;
            while (vs >> piece) tokens.push_back(piece);
        }
    }
    return tokens;
}

// Pulls `--config PATH` out of the raw arguments and splices the expanded
// file contents right after the subcommand name, so every explicit flag
// comes later and wins.
std::vector<std::string> expand_config_args(
    int argc, char** argv, const std::vector<std::string>& subcommands) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string config_path;
    for (std::size_t i = 0; i < args.size();) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size())
                throw UsageError("--config needs a file path");
            config_path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                       args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
        } else {
            ++i;
        }
    }
    if (!config_path.empty()) {
        std::size_t sub_pos = args.size();
        for (std::size_t i = 0; i < args.size(); ++i) {
            if (std::find(subcommands.begin(), subcommands.end(), args[i]) !=
                subcommands.end()) {
                sub_pos = i;
                break;
            }
        }
        if (sub_pos == args.size())
            throw UsageError("--config needs a subcommand");
        auto tokens = config_tokens(config_path);
        args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1,
                    tokens.begin(), tokens.end());
    }
    return args;
}

void print_warnings(const car::Warnings& warnings) {
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

std::vector<car::Paragraph> load_paragraphs(const std::string& path) {
    auto in = open_input(path);
    car::Warnings w;
    auto out = car::parse_paragraphs(in, &w);
    print_warnings(w);
    return out;
}

std::vector<car::Query> load_outlines(const std::string& path) {
    auto in = open_input(path);
    return car::parse_outlines(in);
}

car::Qrels load_qrels(const std::string& path) {
    auto in = open_input(path);
    car::Warnings w;
    auto out = car::parse_qrels(in, &w);
    print_warnings(w);
    return out;
}

// Documents --config in the subcommand help; the value itself is consumed by
// expand_config_args() before CLI11 ever parses. Explicit flags override the
// file because its tokens are spliced in first and every option keeps only
// its last occurrence.
void enable_config(CLI::App* cmd) {
    static std::string ignored;
    cmd->add_option("--config", ignored, "flat key=value config file");
}

void config_overrides_last_wins(CLI::App* cmd) {
    for (auto* opt : cmd->get_options()) {
        if (opt->get_name() == "--help") continue;
        opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
}

void add_ranker_options(CLI::App* cmd, car::RankerConfig& cfg) {
    cmd->add_option("--max-query-len", cfg.max_query_len, "query slots (Q)");
    cmd->add_option("--max-doc-len", cfg.max_doc_len, "document tokens (D)");
    cmd->add_option("--filter-sizes", cfg.filter_sizes,
                    "square convolution filter sizes");
    cmd->add_option("--filters-per-size", cfg.filters_per_size,
                    "convolution filters per size");
    cmd->add_option("--combine-hidden", cfg.combine_hidden,
                    "combination hidden width");
    cmd->add_option("--segment-hidden", cfg.segment_hidden,
                    "per-segment dense width (heading independence)");
    cmd->add_option("--segment-caps", cfg.segment_caps,
                    "title/intermediate/main slot capacities");
    cmd->add_option("--n-entscores", cfg.n_entscores,
                    "entity scores appended per document");
}

struct RerankInputs {
    car::RankerConfig cfg;
    car::RankerParams params;
    car::EmbeddingTable embeddings;
    car::IdfTable idf;
    car::HeadingFrequencyTable hf;
    car::HoleEmbeddings kg;
    car::LinkMentionSource mentions;
    car::ScoringContext ctx;

    void finalize(const std::string& hf_path, const std::string& kg_path) {
        ctx.embeddings = &embeddings;
        ctx.idf = &idf;
        if (cfg.use_frequency_vector) {
            if (hf_path.empty())
                throw car::DataError("variant needs --hf (heading frequencies)");
            auto in = open_input(hf_path);
            hf = car::parse_hf_table(in);
            ctx.hf = &hf;
        }
        if (cfg.use_kg_scores) {
            if (kg_path.empty())
                throw car::DataError("variant needs --kg-embeddings");
            auto in = open_input(kg_path);
            kg = car::parse_hole(in);
            ctx.attach_kg(kg, mentions);
        }
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"complex answer retrieval pipeline"};
    app.require_subcommand(1);
    std::size_t threads = 1;
    app.add_option("--threads", threads, "worker cap (processing is sequential)")
        ->check(CLI::PositiveNumber);

    // ---- index ----
    auto* cmd_index = app.add_subcommand("index", "build the BM25 inverted index");
    enable_config(cmd_index);
    std::string ix_paragraphs, ix_out;
    cmd_index->add_option("--paragraphs", ix_paragraphs, "paragraphs.jsonl")
        ->required();
    cmd_index->add_option("--out", ix_out, "index file")->required();

    // ---- stats ----
    auto* cmd_stats =
        app.add_subcommand("stats", "compute IDF and heading-frequency tables");
    enable_config(cmd_stats);
    std::string st_paragraphs, st_outlines, st_idf_out, st_hf_out;
    cmd_stats->add_option("--paragraphs", st_paragraphs, "paragraphs.jsonl")
        ->required();
    cmd_stats->add_option("--outlines", st_outlines, "training outlines.jsonl")
        ->required();
    cmd_stats->add_option("--idf-out", st_idf_out, "IDF table file")->required();
    cmd_stats->add_option("--hf-out", st_hf_out, "heading frequency file")
        ->required();

    // ---- build-kg ----
    auto* cmd_buildkg =
        app.add_subcommand("build-kg", "build the heading-labeled entity graph");
    enable_config(cmd_buildkg);
    std::string bk_outlines, bk_qrels, bk_paragraphs, bk_out;
    std::size_t bk_emax = car::kDefaultEdgeLabelMax;
    cmd_buildkg->add_option("--outlines", bk_outlines, "training outlines")
        ->required();
    cmd_buildkg->add_option("--qrels", bk_qrels, "automatic judgments")
        ->required();
    cmd_buildkg->add_option("--paragraphs", bk_paragraphs, "paragraphs.jsonl")
        ->required();
    cmd_buildkg->add_option("--out", bk_out, "graph file")->required();
    cmd_buildkg->add_option("--e-max", bk_emax, "edge label vocabulary size");

    // ---- train-kg ----
    auto* cmd_trainkg =
        app.add_subcommand("train-kg", "train HolE embeddings on a graph");
    enable_config(cmd_trainkg);
    std::string tk_graph, tk_out;
    car::HoleConfig hole_cfg;
    cmd_trainkg->add_option("--graph", tk_graph, "graph file")->required();
    cmd_trainkg->add_option("--out", tk_out, "embeddings file")->required();
    cmd_trainkg->add_option("--dim", hole_cfg.dim, "embedding dimension");
    cmd_trainkg->add_option("--iterations", hole_cfg.iterations,
                            "training epochs");
    cmd_trainkg->add_option("--lr", hole_cfg.learning_rate, "learning rate");
    cmd_trainkg->add_option("--negatives", hole_cfg.negatives_per_positive,
                            "negatives per positive");
    cmd_trainkg->add_option("--seed", hole_cfg.seed, "rng seed")->required();

    // ---- retrieve ----
    auto* cmd_retrieve = app.add_subcommand("retrieve", "BM25 candidate lists");
    enable_config(cmd_retrieve);
    std::string rt_index, rt_outlines, rt_out, rt_tag = "bm25";
    std::size_t rt_k = 100;
    cmd_retrieve->add_option("--index", rt_index, "index file")->required();
    cmd_retrieve->add_option("--outlines", rt_outlines, "query outlines")
        ->required();
    cmd_retrieve->add_option("--out", rt_out, "TREC run file")->required();
    cmd_retrieve->add_option("--k", rt_k, "results per query");
    cmd_retrieve->add_option("--tag", rt_tag, "run tag");

    // ---- train ----
    auto* cmd_train = app.add_subcommand("train", "train the neural reranker");
    enable_config(cmd_train);
    std::string tr_train_outlines, tr_train_qrels, tr_train_run;
    std::string tr_val_outlines, tr_val_qrels, tr_val_run;
    std::string tr_paragraphs, tr_embeddings, tr_idf, tr_hf, tr_kg, tr_out;
    std::string tr_variant = "base";
    car::RankerConfig ranker_cfg;
    car::TrainOptions train_opt;
    std::uint64_t tr_seed = 0;
    cmd_train->add_option("--train-outlines", tr_train_outlines, "")->required();
    cmd_train->add_option("--train-qrels", tr_train_qrels, "")->required();
    cmd_train->add_option("--train-run", tr_train_run, "BM25 run for training")
        ->required();
    cmd_train->add_option("--val-outlines", tr_val_outlines, "")->required();
    cmd_train->add_option("--val-qrels", tr_val_qrels, "")->required();
    cmd_train->add_option("--val-run", tr_val_run, "BM25 run for validation")
        ->required();
    cmd_train->add_option("--paragraphs", tr_paragraphs, "")->required();
    cmd_train->add_option("--embeddings", tr_embeddings, "word embeddings")
        ->required();
    cmd_train->add_option("--idf", tr_idf, "IDF table")->required();
    cmd_train->add_option("--hf", tr_hf, "heading frequency table");
    cmd_train->add_option("--kg-embeddings", tr_kg, "HolE embeddings");
    cmd_train->add_option("--out", tr_out, "checkpoint file")->required();
    cmd_train
        ->add_option("--variant", tr_variant,
                     "base|hp|hp-hf|hi|hi-hf|hi-hf-kg")
        ->check(CLI::IsMember(car::variant_names()));
    cmd_train->add_option("--epochs", train_opt.epochs, "training epochs");
    cmd_train->add_option("--lr", train_opt.learning_rate, "base step size");
    cmd_train->add_option("--negatives", train_opt.negatives_per_positive,
                          "negatives per positive");
    cmd_train->add_option("--seed", tr_seed, "rng seed")->required();
    add_ranker_options(cmd_train, ranker_cfg);

    // ---- rerank ----
    auto* cmd_rerank = app.add_subcommand("rerank", "rerank BM25 candidates");
    enable_config(cmd_rerank);
    std::string rr_checkpoint, rr_run, rr_outlines, rr_paragraphs;
    std::string rr_embeddings, rr_idf, rr_hf, rr_kg, rr_out, rr_tag = "neural";
    std::string rr_variant;
    cmd_rerank->add_option("--checkpoint", rr_checkpoint, "trained checkpoint")
        ->required();
    cmd_rerank->add_option("--run", rr_run, "BM25 run to rerank")->required();
    cmd_rerank->add_option("--outlines", rr_outlines, "query outlines")
        ->required();
    cmd_rerank->add_option("--paragraphs", rr_paragraphs, "")->required();
    cmd_rerank->add_option("--embeddings", rr_embeddings, "")->required();
    cmd_rerank->add_option("--idf", rr_idf, "")->required();
    cmd_rerank->add_option("--hf", rr_hf, "");
    cmd_rerank->add_option("--kg-embeddings", rr_kg, "");
    cmd_rerank->add_option("--out", rr_out, "TREC run file")->required();
    cmd_rerank->add_option("--tag", rr_tag, "run tag");
    cmd_rerank
        ->add_option("--variant", rr_variant,
                     "expected checkpoint variant (safety check)")
        ->check(CLI::IsMember(car::variant_names()));

    // ---- evaluate ----
    auto* cmd_eval = app.add_subcommand("evaluate", "TREC-style metrics");
    enable_config(cmd_eval);
    std::string ev_run, ev_qrels, ev_mode = "include", ev_csv;
    std::string ev_outlines, ev_hf, ev_strata_csv;
    bool ev_stratify = false;
    cmd_eval->add_option("--run", ev_run, "TREC run file")->required();
    cmd_eval->add_option("--qrels", ev_qrels, "judgments")->required();
    cmd_eval->add_option("--mode", ev_mode, "include|exclude unjudged")
        ->check(CLI::IsMember({"include", "exclude"}));
    cmd_eval->add_option("--csv", ev_csv, "per-query metric CSV output");
    cmd_eval->add_flag("--stratify", ev_stratify,
                       "also report MAP by main-heading training frequency");
    cmd_eval->add_option("--outlines", ev_outlines,
                         "query outlines (for --stratify)");
    cmd_eval->add_option("--hf", ev_hf,
                         "training heading-frequency table (for --stratify)");
    cmd_eval->add_option("--strata-csv", ev_strata_csv, "strata CSV output");

    // ---- analyze ----
    auto* cmd_analyze =
        app.add_subcommand("analyze", "facet-utility analysis CSVs");
    enable_config(cmd_analyze);
    std::string an_outlines, an_qrels, an_paragraphs;
    std::string an_occ, an_kde, an_bins;
    cmd_analyze->add_option("--outlines", an_outlines, "")->required();
    cmd_analyze->add_option("--qrels", an_qrels, "automatic judgments")
        ->required();
    cmd_analyze->add_option("--paragraphs", an_paragraphs, "")->required();
    cmd_analyze->add_option("--occ-out", an_occ, "heading,freq,occ,support CSV")
        ->required();
    cmd_analyze->add_option("--kde-out", an_kde, "x,density,series CSV")
        ->required();
    cmd_analyze->add_option("--bins-out", an_bins,
                            "bin_center,mean_occ,support CSV")
        ->required();

    for (auto* cmd : {cmd_index, cmd_stats, cmd_buildkg, cmd_trainkg,
                      cmd_retrieve, cmd_train, cmd_rerank, cmd_eval,
                      cmd_analyze})
        config_overrides_last_wins(cmd);

    std::vector<std::string> subcommand_names;
    for (const auto* cmd : app.get_subcommands([](const CLI::App*) { return true; }))
        subcommand_names.push_back(cmd->get_name());

    try {
        auto args = expand_config_args(argc, argv, subcommand_names);
        std::reverse(args.begin(), args.end());  // App::parse wants reversed
        app.parse(std::move(args));
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (app.got_subcommand(cmd_index)) {
            auto paragraphs = load_paragraphs(ix_paragraphs);
            auto index = car::build_index(paragraphs);
            car::atomic_write_file(ix_out, car::serialize_index(index));
            std::cout << "indexed " << index.n_docs << " paragraphs\n";
        } else if (app.got_subcommand(cmd_stats)) {
            auto paragraphs = load_paragraphs(st_paragraphs);
            auto outlines = load_outlines(st_outlines);
            auto idf = car::compute_idf(paragraphs);
            auto hf = car::count_heading_frequencies(outlines);
            car::atomic_write_file(st_idf_out, car::serialize_idf(idf));
            car::atomic_write_file(st_hf_out, car::serialize_hf_table(hf));
            std::cout << "idf over " << idf.n_docs << " paragraphs, "
                      << hf.freq.size() << " distinct headings\n";
        } else if (app.got_subcommand(cmd_buildkg)) {
            auto outlines = load_outlines(bk_outlines);
            auto qrels = load_qrels(bk_qrels);
            auto paragraphs = load_paragraphs(bk_paragraphs);
            car::LinkMentionSource source;
            car::Warnings w;
            auto graph =
                car::build_graph(outlines, qrels, paragraphs, source, bk_emax, &w);
            print_warnings(w);
            car::atomic_write_file(bk_out, car::serialize_graph(graph));
            std::cout << "graph: " << graph.entities.size() << " entities, "
                      << graph.relations.size() << " relations, "
                      << graph.triples.size() << " triples\n";
        } else if (app.got_subcommand(cmd_trainkg)) {
            auto in = open_input(tk_graph);
            auto graph = car::parse_graph(in);
            auto emb = car::train_hole(graph, hole_cfg);
            car::atomic_write_file(tk_out, car::serialize_hole(emb));
            std::cout << "trained HolE d=" << emb.dim << " over "
                      << graph.triples.size() << " triples\n";
        } else if (app.got_subcommand(cmd_retrieve)) {
            auto in = open_input(rt_index);
            auto index = car::parse_index(in);
            auto outlines = load_outlines(rt_outlines);
            car::Run run;
            for (const auto& q : outlines) {
                auto hits = car::bm25_search(index, q, rt_k);
                if (!hits.empty()) run[q.qid] = std::move(hits);
            }
            car::atomic_write_file(rt_out, car::serialize_run(run, rt_tag));
            std::cout << "retrieved candidates for " << run.size() << " of "
                      << outlines.size() << " queries\n";
        } else if (app.got_subcommand(cmd_train)) {
            car::apply_variant(ranker_cfg, tr_variant);
            ranker_cfg.seed = tr_seed;

            RerankInputs inputs;
            inputs.cfg = ranker_cfg;
            {
                auto in = open_input(tr_embeddings);
                inputs.embeddings = car::load_embeddings(in);
            }
            {
                auto in = open_input(tr_idf);
                inputs.idf = car::parse_idf(in);
            }
            inputs.finalize(tr_hf, tr_kg);

            car::RankerDataset train_set, val_set;
            train_set.queries = load_outlines(tr_train_outlines);
            train_set.qrels = load_qrels(tr_train_qrels);
            {
                auto in = open_input(tr_train_run);
                train_set.candidates = car::parse_run(in);
            }
            val_set.queries = load_outlines(tr_val_outlines);
            val_set.qrels = load_qrels(tr_val_qrels);
            {
                auto in = open_input(tr_val_run);
                val_set.candidates = car::parse_run(in);
            }
            auto paragraphs = load_paragraphs(tr_paragraphs);
            std::unordered_map<std::string, const car::Paragraph*> by_id;
            for (const auto& p : paragraphs) by_id[p.id] = &p;

            car::Warnings w;
            auto result = car::train_ranker(train_set, val_set, inputs.cfg,
                                            train_opt, inputs.ctx, by_id, &w);
            print_warnings(w);
            for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
                std::cout << "epoch " << e << " loss " << result.epoch_loss[e]
                          << " val-rprec " << result.epoch_val_rprec[e] << "\n";
            std::cout << "selected epoch " << result.best_epoch << "\n";
            car::atomic_write_file(
                tr_out, car::serialize_checkpoint(result.params, inputs.cfg));
        } else if (app.got_subcommand(cmd_rerank)) {
            RerankInputs inputs;
            {
                auto in = open_input(rr_checkpoint);
                auto [cfg, params] = car::parse_checkpoint(in);
                inputs.cfg = cfg;
                inputs.params = std::move(params);
            }
            if (!rr_variant.empty() &&
                car::variant_name(inputs.cfg) != rr_variant)
                throw car::DataError("checkpoint variant is '" +
                                     car::variant_name(inputs.cfg) +
                                     "', expected '" + rr_variant + "'");
            {
                auto in = open_input(rr_embeddings);
                inputs.embeddings = car::load_embeddings(in);
            }
            {
                auto in = open_input(rr_idf);
                inputs.idf = car::parse_idf(in);
            }
            inputs.finalize(rr_hf, rr_kg);

            auto outlines = load_outlines(rr_outlines);
            std::map<std::string, const car::Query*> by_qid;
            for (const auto& q : outlines) by_qid[q.qid] = &q;
            auto paragraphs = load_paragraphs(rr_paragraphs);
            std::unordered_map<std::string, const car::Paragraph*> by_id;
            for (const auto& p : paragraphs) by_id[p.id] = &p;

            car::Run run;
            {
                auto in = open_input(rr_run);
                run = car::parse_run(in);
            }
            car::Run reranked;
            for (const auto& [qid, candidates] : run) {
                auto qit = by_qid.find(qid);
                if (qit == by_qid.end())
                    throw car::DataError("run query '" + qid +
                                         "' missing from outlines");
                reranked[qid] = car::rerank(*qit->second, candidates,
                                            inputs.params, inputs.cfg,
                                            inputs.ctx, by_id);
            }
            car::atomic_write_file(rr_out, car::serialize_run(reranked, rr_tag));
            std::cout << "reranked " << reranked.size() << " queries\n";
        } else if (app.got_subcommand(cmd_eval)) {
            car::Run run;
            {
                auto in = open_input(ev_run);
                run = car::parse_run(in);
            }
            auto qrels = load_qrels(ev_qrels);
            auto mode = ev_mode == "exclude" ? car::EvalMode::ExcludeUnjudged
                                             : car::EvalMode::IncludeUnjudged;
            car::Warnings w;
            auto report = car::evaluate(run, qrels, mode, &w);
            print_warnings(w);
            std::cout << car::format_metric_table(report);
            if (!ev_csv.empty())
                car::atomic_write_file(ev_csv, car::format_metric_csv(report));
            if (ev_stratify) {
                if (ev_outlines.empty() || ev_hf.empty())
                    throw car::DataError(
                        "--stratify needs --outlines and --hf");
                auto outlines = load_outlines(ev_outlines);
                auto in = open_input(ev_hf);
                auto hf = car::parse_hf_table(in);
                const car::Run* scored = &run;
                car::Run condensed;
                if (mode == car::EvalMode::ExcludeUnjudged) {
                    condensed = car::condense(run, qrels);
                    scored = &condensed;
                }
                car::Warnings sw;
                auto strata =
                    car::stratified_report(*scored, qrels, outlines, hf, &sw);
                print_warnings(sw);
                std::cout << car::format_strata_table(strata);
                if (!ev_strata_csv.empty())
                    car::atomic_write_file(ev_strata_csv,
                                           car::format_strata_csv(strata));
            }
        } else if (app.got_subcommand(cmd_analyze)) {
            auto outlines = load_outlines(an_outlines);
            auto qrels = load_qrels(an_qrels);
            auto paragraphs = load_paragraphs(an_paragraphs);
            auto hf = car::count_heading_frequencies(outlines);
            auto stats = car::occurrence_analysis(outlines, qrels, paragraphs, hf);

            char buf[256];
            // Main-heading occurrence stats.
            std::string occ_csv = "heading,freq,occ,support\n";
            std::vector<std::pair<std::size_t, car::OccurrenceStat>> main_stats;
            for (const auto& ro : stats) {
                if (ro.role != car::HeadingRole::Main) continue;
                std::string heading = ro.heading;
                for (auto& ch : heading)
                    if (ch == ',') ch = ' ';
                std::snprintf(buf, sizeof(buf), "%s,%zu,%.6f,%zu\n",
                              heading.c_str(), ro.frequency, ro.stat.occ,
                              ro.stat.support);
                occ_csv += buf;
                main_stats.push_back({ro.frequency, ro.stat});
            }
            car::atomic_write_file(an_occ, occ_csv);

            // KDE curves per heading role over occ values.
            std::vector<double> grid;
            for (int i = 0; i <= 200; ++i) grid.push_back(i / 200.0);
            std::string kde_csv = "x,density,series\n";
            for (auto role : {car::HeadingRole::Title, car::HeadingRole::Intermediate,
                              car::HeadingRole::Main}) {
                std::vector<double> values;
                for (const auto& ro : stats)
                    if (ro.role == role) values.push_back(ro.stat.occ);
                if (values.size() < 2) {
                    std::cerr << "warning: not enough " << car::role_name(role)
                              << " headings for a density estimate\n";
                    continue;
                }
                auto density = car::kde(values, grid);
                for (std::size_t i = 0; i < grid.size(); ++i) {
                    std::snprintf(buf, sizeof(buf), "%.3f,%.6f,%s\n", grid[i],
                                  density[i], car::role_name(role));
                    kde_csv += buf;
                }
            }
            car::atomic_write_file(an_kde, kde_csv);

            // Binned occurrence by heading frequency.
            auto bins = car::binned_occurrence_by_frequency(main_stats);
            std::string bins_csv = "bin_center,mean_occ,support\n";
            for (const auto& bin : bins) {
                std::snprintf(buf, sizeof(buf), "%.1f,%.6f,%zu\n", bin.bin_center,
                              bin.mean_occ, bin.support);
                bins_csv += buf;
            }
            car::atomic_write_file(an_bins, bins_csv);
            std::cout << "analyzed " << stats.size()
                      << " (role, heading) groups\n";
        }
    } catch (const car::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}
