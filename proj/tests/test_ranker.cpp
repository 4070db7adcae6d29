#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "car/ranker.hpp"
#include "car/training.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace car;

namespace {

RankerConfig tiny_config() {
    RankerConfig cfg;
    cfg.max_query_len = 4;
    cfg.max_doc_len = 6;
    cfg.filter_sizes = {2};
    cfg.filters_per_size = 1;
    cfg.combine_hidden = 2;
    cfg.segment_hidden = 2;
    cfg.segment_caps = {2, 1, 1};
    cfg.seed = 11;
    return cfg;
}

IdfTable flat_idf() {
    IdfTable idf;
    idf.n_docs = 10;
    return idf;
}

EmbeddingTable no_embeddings() {
    EmbeddingTable emb;
    emb.dim = 2;
    emb.vectors["__unused__"] = {1.0, 0.0};
    return emb;
}

}  // namespace

TEST_CASE("query slots pack tokens and truncate per heading, title last") {
    RankerConfig cfg = tiny_config();
    cfg.max_query_len = 6;
    IdfTable idf = flat_idf();

    Query q{"q", {"alpha beta", "gamma delta epsilon", "zeta eta"}};
    // 7 tokens into 6 slots: the longest non-title heading loses its tail.
    auto slots = prepare_query_slots(q, cfg, idf, nullptr);
    CHECK(slots.tokens ==
          std::vector<std::string>{"alpha", "beta", "gamma", "delta", "zeta",
                                   "eta"});
    CHECK(slots.roles[0] == HeadingRole::Title);
    CHECK(slots.roles[2] == HeadingRole::Intermediate);
    CHECK(slots.roles[5] == HeadingRole::Main);

    // Proportional split of 6 slots over an 8-token title and 2-token main:
    // quotas 4.8 / 1.2, the leftover slot goes to the title.
    Query long_title{"q", {"a b c d e f g h", "x y"}};
    auto s2 = prepare_query_slots(long_title, cfg, idf, nullptr);
    CHECK(s2.tokens == std::vector<std::string>{"a", "b", "c", "d", "e", "x"});

    // Every heading keeps a prefix of its own tokens.
    Query three{"q", {"t1 t2 t3 t4", "i1 i2 i3 i4", "m1 m2 m3 m4"}};
    auto s3 = prepare_query_slots(three, cfg, idf, nullptr);
    CHECK(s3.tokens ==
          std::vector<std::string>{"t1", "t2", "i1", "i2", "m1", "m2"});
}

TEST_CASE("heading-independence slots give each role a fixed range") {
    RankerConfig cfg = tiny_config();
    cfg.heading_independence = true;  // caps {2, 1, 1}
    IdfTable idf = flat_idf();
    Query q{"q", {"alpha beta gamma", "inter1 inter2", "main1 main2"}};
    auto slots = prepare_query_slots(q, cfg, idf, nullptr);
    CHECK(slots.tokens ==
          std::vector<std::string>{"alpha", "beta", "inter1", "main1"});

    // Single-heading query: title tokens only, main segment stays padding.
    auto s2 = prepare_query_slots({"q", {"solo"}}, cfg, idf, nullptr);
    CHECK(s2.tokens == std::vector<std::string>{"solo", "", "", ""});
}

TEST_CASE("similarity matrix: exact match override, padding, orthogonality") {
    RankerConfig cfg = tiny_config();
    EmbeddingTable emb;
    emb.dim = 2;
    emb.vectors["cat"] = {1.0, 0.0};
    emb.vectors["dog"] = {0.0, 1.0};
    IdfTable idf = flat_idf();

    // Both tokens OOV but equal strings: override to exactly 1.
    Query q{"q", {"mystery"}};
    auto slots = prepare_query_slots(q, cfg, idf, nullptr);
    auto sim = build_sim_matrix(slots, {"p", "mystery", {}}, emb, cfg);
    CHECK(sim[0] == 1.0);

    // Empty document: all zeros.
    auto zero = build_sim_matrix(slots, {"p", "", {}}, emb, cfg);
    for (double v : zero) CHECK(v == 0.0);

    // Orthogonal embeddings: 0.
    Query qc{"q", {"cat"}};
    auto sc = prepare_query_slots(qc, cfg, idf, nullptr);
    auto sim2 = build_sim_matrix(sc, {"p", "dog cat", {}}, emb, cfg);
    CHECK(sim2[0] == 0.0);
    CHECK(sim2[1] == 1.0);
}

TEST_CASE("feature vector lengths follow the declared shapes") {
    RankerConfig cfg;
    cfg.max_query_len = 2;
    cfg.max_doc_len = 4;
    cfg.filter_sizes = {2};  // channels = 2 (identity + one size)
    cfg.filters_per_size = 1;
    // base: Q * (channels*k + idf) = 2 * (2*2 + 1) = 10
    CHECK(combine_input_len(cfg) == 10);
    cfg.use_position_vectors = true;
    cfg.use_frequency_vector = true;
    CHECK(combine_input_len(cfg) == 18);  // +4 per token
    cfg.use_kg_scores = true;
    CHECK(combine_input_len(cfg) == 20);  // +2 at document level
}

TEST_CASE("shape audit: random configs match the assembled input length") {
    Rng rng(555);
    IdfTable idf = flat_idf();
    auto emb = no_embeddings();
    for (int trial = 0; trial < 100; ++trial) {
        RankerConfig cfg;
        cfg.max_query_len = 4 + uniform_index(rng, 6);
        cfg.max_doc_len = 4 + uniform_index(rng, 12);
        cfg.filter_sizes = uniform_index(rng, 2) ? std::vector<std::size_t>{2, 3}
                                                 : std::vector<std::size_t>{2};
        cfg.filters_per_size = 1 + uniform_index(rng, 3);
        cfg.combine_hidden = 1 + uniform_index(rng, 5);
        cfg.segment_hidden = 1 + uniform_index(rng, 4);
        std::size_t a = 1 + uniform_index(rng, cfg.max_query_len - 2);
        std::size_t b = 1 + uniform_index(rng, cfg.max_query_len - a - 1);
        cfg.segment_caps = {a, b, cfg.max_query_len - a - b};
        cfg.seed = trial;
        switch (uniform_index(rng, 6)) {
            case 0: break;
            case 1: cfg.use_position_vectors = true; break;
            case 2: cfg.use_position_vectors = cfg.use_frequency_vector = true; break;
            case 3: cfg.heading_independence = true; break;
            case 4:
                cfg.heading_independence = cfg.use_frequency_vector = true;
                break;
            default:
                cfg.heading_independence = cfg.use_frequency_vector =
                    cfg.use_kg_scores = true;
        }
        auto params = init_params(cfg);
        Query q{"q", {"one two", "three four"}};
        auto slots = prepare_query_slots(q, cfg, idf, nullptr);
        auto sim = build_sim_matrix(slots, {"p", "one two three", {}}, emb, cfg);
        std::vector<double> kg(cfg.use_kg_scores ? cfg.n_entscores : 0, 0.25);
        ForwardCache cache;
        ranker_forward(slots, sim, kg, params, cfg, &cache);
        CHECK(cache.x.size() == combine_input_len(cfg));
        CHECK(cache.features.size() ==
              cfg.max_query_len * row_feature_len(cfg));
    }
}

TEST_CASE("k-max pooling keeps the top values sorted descending") {
    // Identity channel over a hand-set row.
    RankerConfig cfg = tiny_config();
    cfg.max_query_len = 1;
    cfg.max_doc_len = 3;
    cfg.segment_caps = {1, 0, 0};
    auto params = zero_params(cfg);

    QuerySlots slots;
    slots.tokens = {"tok"};
    slots.roles = {HeadingRole::Title};
    slots.strata = {0};
    slots.idf = {0.0};
    std::vector<double> sim = {0.1, 0.9, 0.5};
    ForwardCache cache;
    ranker_forward(slots, sim, {}, params, cfg, &cache);
    CHECK(cache.features[0] == 0.9);
    CHECK(cache.features[1] == 0.5);
    CHECK(cache.pool_cols[0] == 1);
    CHECK(cache.pool_cols[1] == 2);

    // The standalone matching phase reports the same pooled rows.
    auto pooled = match_and_pool(sim, params, cfg);
    REQUIRE(pooled.size() == n_channels(cfg) * cfg.kmax);
    CHECK(pooled[0] == 0.9);
    CHECK(pooled[1] == 0.5);
}

TEST_CASE("k-max output is a sorted sub-multiset of the channel values") {
    Rng rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        std::size_t D = 2 + uniform_index(rng, 10);
        std::vector<double> row(D);
        for (auto& v : row) v = uniform_range(rng, -1, 1);
        double vals[2];
        std::size_t cols[2];
        car::detail::kmax_row(row.data(), D, 2, vals, cols);
        CHECK(vals[0] >= vals[1]);
        CHECK(row[cols[0]] == vals[0]);
        CHECK(row[cols[1]] == vals[1]);
        CHECK(cols[0] != cols[1]);
        for (double v : row) CHECK(v <= vals[0]);
    }
}

TEST_CASE("all-zero similarity with zero parameters gives zero features") {
    RankerConfig cfg = tiny_config();
    auto params = zero_params(cfg);
    QuerySlots slots;
    slots.tokens.assign(cfg.max_query_len, "tok");
    slots.roles.assign(cfg.max_query_len, HeadingRole::Title);
    slots.strata.assign(cfg.max_query_len, 0);
    slots.idf.assign(cfg.max_query_len, 0.0);
    std::vector<double> sim(cfg.max_query_len * cfg.max_doc_len, 0.0);
    ForwardCache cache;
    ranker_forward(slots, sim, {}, params, cfg, &cache);
    for (double f : cache.features) CHECK(f == 0.0);
}

TEST_CASE("hand-built single-filter pipeline matches the brute-force oracle") {
    RankerConfig cfg;
    cfg.max_query_len = 3;
    cfg.max_doc_len = 3;
    cfg.filter_sizes = {2};
    cfg.filters_per_size = 1;
    cfg.combine_hidden = 1;
    cfg.seed = 1;
    auto params = zero_params(cfg);

    // Hand-set kernel, biases, and dense weights.
    std::vector<std::vector<std::vector<double>>> kernel = {
        {{0.5, -0.25}, {1.0, 0.75}}};
    std::vector<double> bias = {0.1};
    auto& kt = params.get("conv2.kernel");
    kt.data = {0.5, -0.25, 1.0, 0.75};
    params.get("conv2.bias").data = {0.1};
    auto& w1 = params.get("combine.hidden.weight");
    for (std::size_t i = 0; i < w1.data.size(); ++i)
        w1.data[i] = 0.05 * static_cast<double>(i + 1);
    params.get("combine.hidden.bias").data = {0.2};
    params.get("combine.out.weight").data = {1.5};
    params.get("combine.out.bias").data = {-0.3};

    QuerySlots slots;
    slots.tokens = {"a", "b", "c"};
    slots.roles.assign(3, HeadingRole::Title);
    slots.strata.assign(3, 0);
    slots.idf = {0.3, 0.6, 0.9};
    std::vector<double> sim = {0.2, -0.4, 0.6, 0.8, 0.0, -0.2, 0.5, 0.3, 0.1};

    ForwardCache cache;
    double score = ranker_forward(slots, sim, {}, params, cfg, &cache);

    // Oracle: naive conv, then manual pooling and dense.
    auto conv = oracles::conv_same_naive(sim, 3, 3, 0, 3, kernel, bias, 0);
    std::vector<double> feats;
    for (std::size_t r = 0; r < 3; ++r) {
        auto top2 = [](std::vector<double> row) {
            std::sort(row.rbegin(), row.rend());
            return std::pair<double, double>(row[0], row[1]);
        };
        auto [i0, i1] = top2({sim[r * 3], sim[r * 3 + 1], sim[r * 3 + 2]});
        auto [c0, c1] = top2({conv[r * 3], conv[r * 3 + 1], conv[r * 3 + 2]});
        feats.insert(feats.end(), {i0, i1, c0, c1, slots.idf[r]});
    }
    double hidden = 0.2;
    for (std::size_t i = 0; i < feats.size(); ++i)
        hidden += 0.05 * static_cast<double>(i + 1) * feats[i];
    hidden = std::max(hidden, 0.0);
    double expected = 1.5 * hidden - 0.3;
    CHECK_THAT(score, Catch::Matchers::WithinAbs(expected, 1e-12));
}

TEST_CASE("zero parameters score the output bias") {
    RankerConfig cfg = tiny_config();
    auto params = zero_params(cfg);
    params.get("combine.out.bias").data = {0.42};
    IdfTable idf = flat_idf();
    auto slots = prepare_query_slots({"q", {"hello world"}}, cfg, idf, nullptr);
    std::vector<double> sim(cfg.max_query_len * cfg.max_doc_len, 0.3);
    CHECK(ranker_forward(slots, sim, {}, params, cfg, nullptr) == 0.42);
}

TEST_CASE("pairwise loss examples") {
    CHECK_THAT(pairwise_loss(1.0, {0.2}), Catch::Matchers::WithinAbs(0.2, 1e-12));
    CHECK(pairwise_loss(5.0, {0.0, 1.0}) == 0.0);
    CHECK_THAT(pairwise_loss(0.5, {0.0, 1.0}),
               Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THROWS_AS(pairwise_loss(1.0, {}), DataError);
}

TEST_CASE("gradient check: all six variants") {
    for (const auto& variant : variant_names()) {
        auto result = gradcheck::check_variant(variant, 42);
        INFO("variant " << variant << " max_rel_err " << result.max_rel_err
                        << " redraws " << result.redraws);
        CHECK(result.ok);
        CHECK(result.params_checked > 100);
        CHECK(result.max_rel_err < 1e-4);
    }
}

TEST_CASE("heading independence aligns main-heading features") {
    RankerConfig cfg;
    cfg.max_query_len = 8;
    cfg.max_doc_len = 8;
    cfg.filter_sizes = {2};
    cfg.filters_per_size = 2;
    cfg.combine_hidden = 2;
    cfg.segment_hidden = 2;
    cfg.segment_caps = {4, 2, 2};
    cfg.heading_independence = true;
    cfg.seed = 3;
    auto params = init_params(cfg);

    EmbeddingTable emb;
    emb.dim = 2;
    emb.vectors["shared"] = {1.0, 0.0};
    emb.vectors["leaf"] = {0.4, 0.6};
    IdfTable idf = flat_idf();
    Paragraph p{"p", "shared leaf words in a row", {}};

    Query short_title{"q1", {"tiny", "shared leaf"}};
    Query long_title{"q2", {"much longer title text", "shared leaf"}};
    auto s1 = prepare_query_slots(short_title, cfg, idf, nullptr);
    auto s2 = prepare_query_slots(long_title, cfg, idf, nullptr);

    ForwardCache c1, c2;
    ranker_forward(s1, build_sim_matrix(s1, p, emb, cfg), {}, params, cfg, &c1);
    ranker_forward(s2, build_sim_matrix(s2, p, emb, cfg), {}, params, cfg, &c2);

    // Main-heading rows occupy the same flat positions in both queries.
    std::size_t row_len = row_feature_len(cfg);
    std::size_t main_lo = (cfg.segment_caps[0] + cfg.segment_caps[1]) * row_len;
    std::size_t main_hi = cfg.max_query_len * row_len;
    for (std::size_t i = main_lo; i < main_hi; ++i)
        CHECK(c1.features[i] == c2.features[i]);
}

TEST_CASE("checkpoints round-trip bit-identically") {
    RankerConfig cfg = tiny_config();
    cfg.use_position_vectors = true;
    auto params = init_params(cfg);

    auto text = serialize_checkpoint(params, cfg);
    std::istringstream in(text);
    auto [cfg2, params2] = parse_checkpoint(in);
    CHECK(serialize_checkpoint(params2, cfg2) == text);

    IdfTable idf = flat_idf();
    auto emb = no_embeddings();
    ScoringContext ctx;
    ctx.embeddings = &emb;
    ctx.idf = &idf;
    Query q{"q", {"hello world", "leaf"}};
    Paragraph p{"p", "hello there leaf", {}};
    double a = ranker_score(q, p, params, cfg, ctx);
    double b = ranker_score(q, p, params2, cfg2, ctx);
    CHECK(a == b);  // bit-identical
}

TEST_CASE("checkpoint loading rejects variant mismatches") {
    RankerConfig cfg = tiny_config();
    auto params = init_params(cfg);
    auto text = serialize_checkpoint(params, cfg);

    // Claim a different variant in the config: tensor catalog no longer
    // matches the stored tensors.
    auto tampered = text;
    auto pos = tampered.find("\"use_position_vectors\":false");
    REQUIRE(pos != std::string::npos);
    tampered.replace(pos, std::string("\"use_position_vectors\":false").size(),
                     "\"use_position_vectors\":true");
    std::istringstream in(tampered);
    CHECK_THROWS_AS(parse_checkpoint(in), DataError);

    std::istringstream junk("{\"format\":\"car-ranker-checkpoint\"}");
    CHECK_THROWS_AS(parse_checkpoint(junk), DataError);
}

TEST_CASE("rerank orders by score with BM25 rank tie-break") {
    RankerConfig cfg = tiny_config();
    IdfTable idf = flat_idf();
    auto emb = no_embeddings();
    ScoringContext ctx;
    ctx.embeddings = &emb;
    ctx.idf = &idf;
    Query q{"q", {"alpha beta"}};

    std::vector<Paragraph> ps = {{"pa", "alpha", {}},
                                 {"pb", "beta beta", {}},
                                 {"pc", "gamma", {}}};
    std::unordered_map<std::string, const Paragraph*> by_id;
    for (const auto& p : ps) by_id[p.id] = &p;

    // Zero params: every score equals the output bias; BM25 order preserved.
    auto zero = zero_params(cfg);
    RankedList candidates{{"pb", 3.0}, {"pa", 2.0}, {"pc", 1.0}};
    auto out = rerank(q, candidates, zero, cfg, ctx, by_id);
    REQUIRE(out.size() == 3);
    CHECK(out[0].paragraph_id == "pb");
    CHECK(out[1].paragraph_id == "pa");
    CHECK(out[2].paragraph_id == "pc");

    CHECK(rerank(q, {}, zero, cfg, ctx, by_id).empty());

    // Scores do not depend on candidate order.
    auto params = init_params(cfg);
    auto a = rerank(q, candidates, params, cfg, ctx, by_id);
    RankedList permuted{{"pc", 1.0}, {"pb", 3.0}, {"pa", 2.0}};
    auto b = rerank(q, permuted, params, cfg, ctx, by_id);
    REQUIRE(a.size() == b.size());
    bool distinct = a[0].score != a[1].score && a[1].score != a[2].score;
    if (distinct)
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(a[i].paragraph_id == b[i].paragraph_id);
}

TEST_CASE("training solves a separable planted-term task") {
    // Positives contain the planted term, negatives never do.
    RankerConfig cfg;
    cfg.max_query_len = 4;
    cfg.max_doc_len = 12;
    cfg.filter_sizes = {2};
    cfg.filters_per_size = 2;
    cfg.combine_hidden = 4;
    cfg.segment_hidden = 2;
    cfg.segment_caps = {2, 1, 1};
    cfg.seed = 13;

    EmbeddingTable emb;
    emb.dim = 4;
    Rng erng(99);
    for (int i = 0; i < 40; ++i) {
        std::vector<double> v(4);
        for (auto& x : v) x = uniform_range(erng, -1, 1);
        emb.vectors["w" + std::to_string(i)] = v;
    }
    emb.vectors["planted"] = {1, 0, 0, 0};

    std::vector<Paragraph> paragraphs;
    RankerDataset train, validation;
    Rng rng(5);
    for (int qi = 0; qi < 10; ++qi) {
        std::string qid = "q" + std::to_string(qi);
        train.queries.push_back({qid, {"planted w" + std::to_string(qi)}});
        RankedList candidates;
        for (int d = 0; d < 6; ++d) {
            std::string pid = qid + "p" + std::to_string(d);
            std::string text;
            for (int t = 0; t < 8; ++t)
                text += "w" + std::to_string(uniform_index(rng, 40)) + " ";
            bool positive = d < 2;
            if (positive) text += "planted";
            paragraphs.push_back({pid, text, {}});
            train.qrels[qid][pid] = positive ? 1 : 0;
            candidates.push_back({pid, 10.0 - d});
        }
        train.candidates[qid] = candidates;
    }
    validation = train;

    std::unordered_map<std::string, const Paragraph*> by_id;
    for (const auto& p : paragraphs) by_id[p.id] = &p;
    auto idf = compute_idf(paragraphs);

    ScoringContext ctx;
    ctx.embeddings = &emb;
    ctx.idf = &idf;

    TrainOptions opt;
    opt.epochs = 25;
    opt.learning_rate = 5e-3;
    opt.negatives_per_positive = 4;

    auto result = train_ranker(train, validation, cfg, opt, ctx, by_id);
    REQUIRE(result.epoch_loss.size() == 25);
    CHECK(result.epoch_loss.back() < result.epoch_loss.front());
    CHECK(result.epoch_val_rprec[result.best_epoch] >= 0.9);

    // Determinism: identical run selects identical parameters.
    auto result2 = train_ranker(train, validation, cfg, opt, ctx, by_id);
    CHECK(serialize_checkpoint(result.params, cfg) ==
          serialize_checkpoint(result2.params, cfg));
    CHECK(result.best_epoch == result2.best_epoch);
}

TEST_CASE("training rejects an empty training set") {
    RankerConfig cfg = tiny_config();
    RankerDataset train, validation;
    ScoringContext ctx;
    IdfTable idf = flat_idf();
    auto emb = no_embeddings();
    ctx.embeddings = &emb;
    ctx.idf = &idf;
    std::unordered_map<std::string, const Paragraph*> by_id;
    CHECK_THROWS_AS(train_ranker(train, validation, cfg, {}, ctx, by_id),
                    DataError);
}
