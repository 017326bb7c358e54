#include <doctest.h>

#include <random>

#include "../support/oracles.hpp"
#include "headprobe/directions.hpp"
#include "headprobe/error.hpp"
#include "headprobe/synth.hpp"

using namespace headprobe;

namespace {

Eigen::MatrixXd rows_of(std::initializer_list<std::initializer_list<double>> rows) {
    Eigen::MatrixXd m(rows.size(), rows.begin()->size());
    int i = 0;
    for (const auto& r : rows) {
        int j = 0;
        for (double v : r) m(i, j++) = v;
        ++i;
    }
    return m;
}

std::map<int, Eigen::MatrixXd> planted_groups(std::mt19937_64& rng, const Eigen::VectorXd& w, double sigma, int lo,
                                              int hi, int per_group) {
    std::map<int, Eigen::MatrixXd> g;
    for (int s = lo; s <= hi; ++s) {
        Eigen::MatrixXd m = testutil::random_matrix(rng, per_group, w.size()) * sigma;
        m.rowwise() += (s * w).transpose();
        g[s] = m;
    }
    return g;
}

HeadGrid flat_grid(const std::string& trait, int prompt, int L, int H, HeadCoord hot) {
    HeadGrid g(trait, prompt, L, H, ProbeKind::Ridge);
    std::fill(g.qwk.begin(), g.qwk.end(), 0.1);
    g.at(hot) = 0.9;
    return g;
}

}  // namespace

TEST_CASE("binary direction") {
    const auto pos = rows_of({{1, 0}, {1, 0}});
    const auto neg = rows_of({{0, 0}, {0, 0}, {0, 0}});
    const auto v = binary_direction(pos, neg);
    CHECK(v(0) == 1.0);
    CHECK(v(1) == 0.0);
    CHECK_THROWS_WITH_AS(binary_direction(rows_of({{1, 2}, {3, 4}}), rows_of({{2, 3}})),
                         doctest::Contains("degenerate direction"), Error);
    CHECK_THROWS_AS(binary_direction(Eigen::MatrixXd(0, 2), neg), Error);

    std::mt19937_64 rng(40);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = testutil::random_matrix(rng, 7, 5);
        const auto b = testutil::random_matrix(rng, 4, 5);
        CHECK((binary_direction(a, b) - oracle::mean_diff_unit(a, b)).cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("graded direction with two groups equals the binary direction") {
    std::mt19937_64 rng(41);
    const auto lo = testutil::random_matrix(rng, 6, 4);
    const auto hi = testutil::random_matrix(rng, 9, 4);
    const auto g = graded_direction({{1, lo}, {3, hi}}, TraitRange{1, "t", 1, 3});
    CHECK((g.unit - binary_direction(hi, lo)).norm() <= 1e-12);
    CHECK(g.used_scores == std::vector<int>{1, 3});
    CHECK(g.skipped_scores == std::vector<int>{2});
}

TEST_CASE("three-score cancellation identity") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        std::map<int, Eigen::MatrixXd> groups;
        for (int s = 0; s < 3; ++s) groups[s] = testutil::random_matrix(rng, 3 + s, 6);
        const auto g = graded_direction(groups, TraitRange{1, "t", 0, 2});
        const Eigen::VectorXd m0 = groups[0].colwise().mean().transpose();
        const Eigen::VectorXd m2 = groups[2].colwise().mean().transpose();
        CHECK((g.raw - 2.0 * (m2 - m0)).cwiseAbs().maxCoeff() <= 1e-9);
        CHECK(std::abs(g.unit.norm() - 1.0) <= 1e-6);
    }
}

TEST_CASE("graded direction recovers a planted direction") {
    std::mt19937_64 rng(43);
    Eigen::VectorXd w = testutil::random_matrix(rng, 16, 1);
    const auto g = graded_direction(planted_groups(rng, w, 0.01, 0, 4, 20), TraitRange{1, "t", 0, 4});
    CHECK(cosine(g.unit, w / w.norm()) >= 0.99);
}

TEST_CASE("graded direction properties") {
    std::mt19937_64 rng(44);
    Eigen::VectorXd w = testutil::random_matrix(rng, 8, 1);
    auto groups = planted_groups(rng, w, 0.5, 1, 4, 10);
    const TraitRange r{1, "t", 1, 4};
    const auto base = graded_direction(groups, r).unit;

    auto shuffled = groups;
    for (auto& [s, m] : shuffled) {
        std::vector<int> order(m.rows());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        Eigen::MatrixXd p(m.rows(), m.cols());
        for (int i = 0; i < m.rows(); ++i) p.row(i) = m.row(order[i]);
        m = p;
    }
    CHECK((graded_direction(shuffled, r).unit - base).norm() <= 1e-12);

    for (double c : {0.001, 3.0, 1e4}) {
        auto scaled = groups;
        for (auto& [s, m] : scaled) m *= c;
        CHECK((graded_direction(scaled, r).unit - base).norm() <= 1e-9);
    }

    std::map<int, Eigen::MatrixXd> one = {{2, groups[2]}};
    CHECK_THROWS_AS(graded_direction(one, r), Error);
    std::map<int, Eigen::MatrixXd> with_empty = {{1, groups[1]}, {2, Eigen::MatrixXd(0, 8)}, {4, groups[4]}};
    const auto ge = graded_direction(with_empty, r);
    CHECK(ge.skipped_scores == std::vector<int>{2, 3});
    std::map<int, Eigen::MatrixXd> same = {{1, groups[1]}, {2, groups[1]}};
    CHECK_THROWS_AS(graded_direction(same, r), Error);
}

TEST_CASE("cosine") {
    const Eigen::Vector2d u(1, 0), v(0, 1);
    CHECK(cosine(u, u) == 1.0);
    CHECK(cosine(u, v) == 0.0);
    CHECK(cosine(u, -u) == -1.0);
    CHECK_THROWS_AS(cosine(u, Eigen::Vector2d::Zero()), Error);
    std::mt19937_64 rng(45);
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::VectorXd a = testutil::random_matrix(rng, 12, 1);
        const Eigen::VectorXd b = testutil::random_matrix(rng, 12, 1);
        CHECK(std::abs(cosine(a, b) - oracle::dot_cosine(a, b)) <= 1e-12);
        CHECK(std::abs(cosine(a * 1e8, a * 3.0)) <= 1.0);
    }
}

TEST_CASE("similarity matrix shape") {
    std::mt19937_64 rng(46);
    std::vector<Eigen::VectorXd> dirs;
    for (int i = 0; i < 4; ++i) {
        Eigen::VectorXd d = testutil::random_matrix(rng, 6, 1);
        dirs.push_back(d / d.norm());
    }
    const auto m = similarity_matrix({"a", "b", "c", "d"}, dirs);
    double sum = 0;
    for (int i = 0; i < 4; ++i) {
        CHECK(m.values(i, i) == 1.0);
        for (int j = 0; j < 4; ++j) {
            CHECK(m.values(i, j) == m.values(j, i));
            CHECK(std::abs(m.values(i, j)) <= 1.0);
            if (i != j) sum += m.values(i, j);
        }
    }
    REQUIRE(m.mean_offdiag);
    CHECK(*m.mean_offdiag == doctest::Approx(sum / 12).epsilon(1e-12));
    const auto single = similarity_matrix({"a"}, {dirs[0]});
    CHECK(single.values(0, 0) == 1.0);
    CHECK_FALSE(single.mean_offdiag);
}

TEST_CASE("analyses on synthetic dumps") {
    SynthSpec s;
    s.n_layers = 2;
    s.n_heads = 2;
    s.head_dim = 12;
    s.prompts = {1, 2, 3};
    s.essays_per_prompt = 120;
    s.traits = {"content", "organization"};
    for (int p : s.prompts) {
        for (const auto& t : s.traits) s.ranges.push_back({p, t, 0, 4});
    }
    PlantedSignal shared;
    shared.coord = {1, 0};
    shared.trait = "content";
    shared.sigma = 0.05;
    PlantedSignal orth = shared;
    orth.trait = "organization";
    orth.coord = {0, 1};
    orth.direction_mode = "orthogonal";
    s.planted = {shared, orth};
    s.seed = 12;
    const auto out = cmd_synth(s, testutil::scratch_dir("directions_synth"));
    const auto data = load_dataset(out.table, out.metadata);
    const DumpReader dump(out.dump);

    SUBCASE("shared direction across prompts") {
        std::map<int, HeadGrid> grids;
        for (int p : s.prompts) grids.emplace(p, flat_grid("content", p, 2, 2, {1, 0}));
        const auto m = prompt_direction_analysis(dump, data, "content", grids);
        CHECK(m.coord == HeadCoord{1, 0});
        CHECK(m.labels == std::vector<std::string>{"1", "2", "3"});
        REQUIRE(m.mean_offdiag);
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                if (i != j) CHECK(m.values(i, j) >= 0.99);
            }
        }
    }
    SUBCASE("orthogonal directions across prompts") {
        std::map<int, HeadGrid> grids;
        for (int p : s.prompts) grids.emplace(p, flat_grid("organization", p, 2, 2, {0, 1}));
        const auto m = prompt_direction_analysis(dump, data, "organization", grids);
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                if (i != j) CHECK(std::abs(m.values(i, j)) <= 0.1);
            }
        }
    }
    SUBCASE("single prompt gives [[1]]") {
        Dataset one = data;
        std::vector<TraitRange> kept;
        for (const auto& r : s.ranges) {
            if (r.prompt_id == 2 || r.trait != "content") kept.push_back(r);
        }
        one.ranges = RangeTable(kept);
        std::map<int, HeadGrid> grids = {{2, flat_grid("content", 2, 2, 2, {1, 0})}};
        const auto m = prompt_direction_analysis(dump, one, "content", grids);
        CHECK(m.values.rows() == 1);
        CHECK(m.values(0, 0) == 1.0);
        CHECK_FALSE(m.mean_offdiag);
    }
    SUBCASE("traits within a prompt") {
        std::map<std::string, HeadGrid> grids = {{"content", flat_grid("content", 1, 2, 2, {1, 0})},
                                                 {"organization", flat_grid("organization", 1, 2, 2, {1, 0})}};
        const auto m = trait_direction_analysis(dump, data, 1, grids);
        CHECK(m.labels == std::vector<std::string>{"content", "organization"});
        CHECK(m.values(0, 1) == m.values(1, 0));
        CHECK(m.essay_counts.at("content") == 120);

        Dataset single = data;
        single.traits = {"content"};
        const auto m1 = trait_direction_analysis(dump, single, 1, grids);
        CHECK(m1.values.rows() == 1);
        CHECK(m1.values(0, 0) == 1.0);
        CHECK_FALSE(m1.mean_offdiag);

        std::map<std::string, HeadGrid> missing = {{"content", grids.at("content")}};
        CHECK_THROWS_AS(trait_direction_analysis(dump, data, 1, missing), Error);
    }
}

TEST_CASE("trait with a single score group is excluded with a warning") {
    SynthSpec s;
    s.n_layers = 1;
    s.n_heads = 1;
    s.head_dim = 4;
    s.essays_per_prompt = 30;
    s.traits = {"holistic", "flat"};
    s.ranges = {{1, "holistic", 0, 3}, {2, "holistic", 0, 3}, {1, "flat", 0, 2}, {2, "flat", 0, 2}};
    s.seed = 3;
    const auto out = cmd_synth(s, testutil::scratch_dir("directions_flat"));
    // Every prompt-1 essay gets the same "flat" score.
    std::istringstream in(testutil::slurp(out.table));
    std::string line, rewritten;
    std::getline(in, line);
    rewritten = line + "\n";
    while (std::getline(in, line)) {
        if (line.rfind("p1_", 0) == 0) line = line.substr(0, line.rfind('\t')) + "\t1";
        rewritten += line + "\n";
    }
    testutil::write_file(out.table, rewritten);
    const auto data = load_dataset(out.table, out.metadata);
    const DumpReader dump(out.dump);
    std::map<std::string, HeadGrid> grids = {{"holistic", flat_grid("holistic", 1, 1, 1, {0, 0})},
                                             {"flat", flat_grid("flat", 1, 1, 1, {0, 0})}};
    const auto m = trait_direction_analysis(dump, data, 1, grids);
    CHECK(m.labels == std::vector<std::string>{"holistic"});
    REQUIRE(m.warnings.size() == 1);
    CHECK(m.warnings[0].find("flat") != std::string::npos);
}
