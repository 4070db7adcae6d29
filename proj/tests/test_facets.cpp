#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <sstream>

#include "car/facets.hpp"
#include "support/synthetic.hpp"

using namespace car;

namespace {

// Outlines where the example-query headings are frequent enough to land in
// stratum 3 and the title is unique: 300 articles share "Ecology and
// behavior" and "Life cycle", every other heading occurs once.
std::vector<Query> example_query_outlines() {
    std::vector<Query> outlines;
    outlines.push_back({"q0",
                        {"Green sea turtle", "Ecology and behavior", "Life cycle"}});
    for (int a = 0; a < 300; ++a) {
        outlines.push_back({"qa" + std::to_string(a),
                            {"Animal " + std::to_string(a), "Ecology and behavior",
                             "Life cycle"}});
        outlines.push_back({"qb" + std::to_string(a),
                            {"Animal " + std::to_string(a),
                             "Unique heading " + std::to_string(a)}});
    }
    return outlines;
}

}  // namespace

TEST_CASE("heading frequency counts articles, not occurrences") {
    std::vector<Query> outlines = {
        {"q1", {"Cheese", "Nutrition and health"}},
        {"q2", {"Beef", "Nutrition and health"}},
        {"q3", {"Raisin", "Nutrition and health"}},
        // Same heading twice within one article counts once.
        {"q4", {"Cheese", "Production", "Nutrition and health"}},
        {"q5", {"United Kingdom", "After the Acts of Union of 1707"}},
    };
    auto table = count_heading_frequencies(outlines);
    CHECK(table.frequency("Nutrition and health") == 3);
    CHECK(table.frequency("nutrition AND Health") == 3);  // case-insensitive
    CHECK(table.frequency("After the Acts of Union of 1707") == 1);
    CHECK(table.frequency("Nutrition") == 0);  // no substring matching
    // Titles participate via their own articles.
    CHECK(table.frequency("Cheese") == 1);
    CHECK(table.frequency("Beef") == 1);
}

TEST_CASE("count_heading_frequencies rejects empty outline sets") {
    CHECK_THROWS_AS(count_heading_frequencies({}), DataError);
}

TEST_CASE("stratify maps frequency to [0,3] with unseen at 0") {
    HeadingFrequencyTable table;
    table.freq["low"] = 1;
    table.freq["mid"] = 10;
    table.freq["high"] = 100;
    table.freq["extreme"] = 1000;
    table.p60 = 1;
    table.p90 = 10;
    table.p99 = 100;
    CHECK(table.stratify("low") == 0);
    CHECK(table.stratify("mid") == 1);
    CHECK(table.stratify("high") == 2);
    CHECK(table.stratify("extreme") == 3);
    CHECK(table.stratify("never seen") == 0);
}

TEST_CASE("stratify is monotone non-decreasing in frequency") {
    auto table = count_heading_frequencies(example_query_outlines());
    int prev = 0;
    for (std::size_t f = 1; f <= 400; ++f) {
        HeadingFrequencyTable t = table;
        t.freq["probe"] = f;
        int stratum = t.stratify("probe");
        CHECK(stratum >= prev);
        prev = stratum;
    }
}

TEST_CASE("golden contextual vectors for the example query") {
    auto table = count_heading_frequencies(example_query_outlines());
    Query q{"q", {"green sea turtle", "ecology and behavior", "life cycle"}};
    auto cv = contextual_vectors(q, table);
    CHECK(cv.position_title == std::vector<int>{1, 1, 1, 0, 0, 0, 0, 0});
    CHECK(cv.position_inter == std::vector<int>{0, 0, 0, 1, 1, 1, 0, 0});
    CHECK(cv.position_main == std::vector<int>{0, 0, 0, 0, 0, 0, 1, 1});
    CHECK(cv.heading_frequency == std::vector<int>{0, 0, 0, 3, 3, 3, 3, 3});
}

TEST_CASE("single-heading queries assign the title role only") {
    HeadingFrequencyTable table;
    table.freq["x"] = 1;
    table.p60 = table.p90 = table.p99 = 1;
    auto cv = contextual_vectors({"q", {"X"}}, table);
    CHECK(cv.position_title == std::vector<int>{1});
    CHECK(cv.position_inter == std::vector<int>{0});
    CHECK(cv.position_main == std::vector<int>{0});
}

TEST_CASE("exactly one position vector fires per token") {
    Rng rng(31);
    auto table = count_heading_frequencies(example_query_outlines());
    for (int trial = 0; trial < 40; ++trial) {
        Query q{"q", {}};
        std::size_t n = 1 + uniform_index(rng, 5);
        for (std::size_t h = 0; h < n; ++h) {
            std::string heading;
            std::size_t len = 1 + uniform_index(rng, 4);
            for (std::size_t t = 0; t < len; ++t)
                heading += "w" + std::to_string(uniform_index(rng, 9)) + " ";
            q.headings.push_back(heading);
        }
        auto cv = contextual_vectors(q, table);
        for (std::size_t i = 0; i < cv.size(); ++i)
            CHECK(cv.position_title[i] + cv.position_inter[i] +
                      cv.position_main[i] == 1);
    }
}

TEST_CASE("term occurrence rate") {
    Paragraph with{"p1", "milk begins curdling here", {}};
    Paragraph without{"p2", "nothing to see", {}};
    auto stat = term_occurrence_rate("curdling", {&with, &without});
    CHECK(stat.occ == 0.5);
    CHECK(stat.support == 2);

    CHECK(term_occurrence_rate("curdling", {&with}).occ == 1.0);
    CHECK(term_occurrence_rate("curdling", {&without}).occ == 0.0);
    CHECK_THROWS_AS(term_occurrence_rate("curdling", {}), DataError);
}

TEST_CASE("occ is invariant under duplicating a paragraph's tokens") {
    Paragraph a{"p1", "alpha beta curdling", {}};
    Paragraph b{"p2", "gamma delta", {}};
    auto before = term_occurrence_rate("curdling cheese", {&a, &b});
    Paragraph a2{"p1", a.text + " " + a.text, {}};
    Paragraph b2{"p2", b.text + " " + b.text, {}};
    auto after = term_occurrence_rate("curdling cheese", {&a2, &b2});
    CHECK(before.occ == after.occ);
}

TEST_CASE("kde peaks at the data and normalizes") {
    std::vector<double> grid;
    for (int i = 0; i <= 200; ++i) grid.push_back(i / 200.0);

    auto density = kde(std::vector<double>(10, 0.5), grid);
    std::size_t argmax = 0;
    for (std::size_t i = 1; i < density.size(); ++i)
        if (density[i] > density[argmax]) argmax = i;
    CHECK(grid[argmax] == 0.5);

    auto sym = kde({0.0, 1.0}, grid);
    for (std::size_t i = 0; i < sym.size(); ++i)
        CHECK_THAT(sym[i],
                   Catch::Matchers::WithinAbs(sym[sym.size() - 1 - i], 1e-9));

    // Integral over a wide grid (trapezoid) close to 1.
    Rng rng(8);
    std::vector<double> values;
    for (int i = 0; i < 50; ++i) values.push_back(uniform_real(rng));
    std::vector<double> wide;
    for (int i = -300; i <= 400; ++i) wide.push_back(i / 100.0);
    auto d = kde(values, wide);
    double integral = 0.0;
    for (std::size_t i = 1; i < wide.size(); ++i)
        integral += 0.5 * (d[i] + d[i - 1]) * (wide[i] - wide[i - 1]);
    CHECK_THAT(integral, Catch::Matchers::WithinAbs(1.0, 0.05));

    CHECK_THROWS_AS(kde({0.5}, grid), DataError);
}

TEST_CASE("binned occurrence by frequency") {
    OccurrenceStat s1{"h1", 0.4, 1};
    auto bins = binned_occurrence_by_frequency({{150, s1}});
    REQUIRE(bins.size() == 1);
    CHECK(bins[0].bin_center == 150.0);
    CHECK(bins[0].mean_occ == 0.4);

    OccurrenceStat a{"a", 0.2, 1}, b{"b", 0.6, 3};
    bins = binned_occurrence_by_frequency({{110, a}, {190, b}});
    REQUIRE(bins.size() == 1);
    CHECK_THAT(bins[0].mean_occ, Catch::Matchers::WithinAbs(0.5, 1e-12));
    CHECK(bins[0].support == 4);

    // Frequency-1 headings are excluded entirely.
    CHECK(binned_occurrence_by_frequency({{1, a}}).empty());
    CHECK(binned_occurrence_by_frequency({}).empty());
}

TEST_CASE("planted corpus: mean occ orders main > title > intermediate") {
    synthetic::PlantedConfig cfg;
    cfg.seed = 7;
    auto corpus = synthetic::make_planted(cfg);
    REQUIRE(corpus.outlines.size() >= 200);
    auto table = count_heading_frequencies(corpus.outlines);
    auto stats = occurrence_analysis(corpus.outlines, corpus.qrels,
                                     corpus.paragraphs, table);
    std::map<HeadingRole, std::pair<double, std::size_t>> agg;
    for (const auto& ro : stats) {
        agg[ro.role].first += ro.stat.occ;
        agg[ro.role].second += 1;
    }
    double mean_title = agg[HeadingRole::Title].first /
                        static_cast<double>(agg[HeadingRole::Title].second);
    double mean_inter = agg[HeadingRole::Intermediate].first /
                        static_cast<double>(agg[HeadingRole::Intermediate].second);
    double mean_main = agg[HeadingRole::Main].first /
                       static_cast<double>(agg[HeadingRole::Main].second);
    CHECK(mean_main > mean_title);
    CHECK(mean_title > mean_inter);
}

TEST_CASE("hf table round-trips through its text form") {
    auto table = count_heading_frequencies(example_query_outlines());
    std::istringstream in(serialize_hf_table(table));
    auto reparsed = parse_hf_table(in);
    CHECK(reparsed.freq == table.freq);
    CHECK(reparsed.p60 == table.p60);
    CHECK(reparsed.p90 == table.p90);
    CHECK(reparsed.p99 == table.p99);
    CHECK(reparsed.q80 == table.q80);
}
