#include <doctest.h>

#include <random>

#include "../support/oracles.hpp"
#include "headprobe/error.hpp"
#include "headprobe/metrics.hpp"
#include "headprobe/synth.hpp"

using namespace headprobe;

namespace {

const TraitRange kBinary{1, "t", 0, 1};

std::vector<int> random_scores(std::mt19937_64& rng, int n, int lo, int hi) {
    std::uniform_int_distribution<int> u(lo, hi);
    std::vector<int> v(n);
    for (auto& s : v) s = u(rng);
    return v;
}

SynthOutputs planted_synth(const std::string& name, double sigma, int essays = 150) {
    SynthSpec s;
    s.n_layers = 2;
    s.n_heads = 3;
    s.head_dim = 8;
    s.essays_per_prompt = essays;
    s.ranges = {{1, "holistic", 0, 4}, {2, "holistic", 0, 4}};
    PlantedSignal p;
    p.coord = {1, 2};
    p.trait = "holistic";
    p.sigma = sigma;
    s.planted = {p};
    s.seed = 5;
    return cmd_synth(s, testutil::scratch_dir(name));
}

}  // namespace

TEST_CASE("qwk hand-computed cases") {
    const std::vector<int> h = {0, 0, 1, 1}, p = {1, 1, 0, 0};
    CHECK(qwk(h, p, kBinary) == -1.0);
    const std::vector<int> h2 = {0, 1}, p2 = {0, 0};
    CHECK(qwk(h2, p2, kBinary) == 0.0);
}

TEST_CASE("qwk of a vector with itself is 1") {
    std::mt19937_64 rng(30);
    for (int trial = 0; trial < 100; ++trial) {
        auto x = random_scores(rng, 5 + trial, 1, 6);
        x[0] = 1;
        x[1] = 6;
        CHECK(qwk(x, x, TraitRange{1, "t", 1, 6}) == 1.0);
    }
}

TEST_CASE("qwk matches the brute-force oracle and is symmetric") {
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<int> lo_d(-2, 3), width(1, 10), n_d(2, 80);
    int done = 0;
    while (done < 100) {
        const int lo = lo_d(rng), hi = lo + width(rng), n = n_d(rng);
        const auto a = random_scores(rng, n, lo, hi);
        const auto b = random_scores(rng, n, lo, hi);
        const TraitRange r{1, "t", lo, hi};
        if (std::all_of(a.begin(), a.end(), [&](int v) { return v == a[0]; }) &&
            std::all_of(b.begin(), b.end(), [&](int v) { return v == a[0]; })) {
            continue;
        }
        const double ref = oracle::qwk_bruteforce(a, b, lo, hi);
        CHECK(std::abs(qwk(a, b, r) - ref) <= 1e-12);
        CHECK(std::abs(qwk(a, b, r) - qwk(b, a, r)) <= 1e-12);
        CHECK(qwk(a, b, r) <= 1.0 + 1e-15);
        ++done;
    }
}

TEST_CASE("qwk of independent uniform vectors averages near zero") {
    std::mt19937_64 rng(32);
    double sum = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        sum += qwk(random_scores(rng, 200, 0, 5), random_scores(rng, 200, 0, 5), TraitRange{1, "t", 0, 5});
    }
    const double mean = sum / 100;
    CHECK(mean >= -0.1);
    CHECK(mean <= 0.1);
}

TEST_CASE("qwk degenerate and invalid inputs") {
    const TraitRange r{1, "t", 0, 4};
    const std::vector<int> same = {2, 2, 2};
    CHECK(qwk(same, same, r) == 1.0);
    const std::vector<int> a = {1, 2}, b = {1};
    CHECK_THROWS_AS(qwk(a, b, r), Error);
    const std::vector<int> out = {1, 5};
    CHECK_THROWS_AS(qwk(out, a, r), Error);
    const std::vector<int> empty;
    CHECK_THROWS_AS(qwk(empty, empty, r), Error);
    CHECK_THROWS_AS(qwk(same, same, TraitRange{1, "t", 2, 2}), Error);
}

TEST_CASE("best head and top heads") {
    HeadGrid g("holistic", 7, 32, 32, ProbeKind::Ridge);
    std::mt19937_64 rng(33);
    std::uniform_real_distribution<double> u(-0.2, 0.6);
    for (auto& v : g.qwk) v = u(rng);
    g.at({5, 23}) = 0.91;
    const auto b = best_head(g);
    CHECK(b.coord == HeadCoord{5, 23});
    CHECK(b.qwk == 0.91);

    HeadGrid flat("t", 1, 3, 4, ProbeKind::Ridge);
    std::fill(flat.qwk.begin(), flat.qwk.end(), 0.5);
    CHECK(best_head(flat).coord == HeadCoord{0, 0});
    const auto top = top_heads(flat, 3);
    REQUIRE(top.size() == 3);
    CHECK(top[1].coord == HeadCoord{0, 1});
    CHECK(top[2].coord == HeadCoord{0, 2});

    HeadGrid ordered("t", 1, 2, 2, ProbeKind::Ridge);
    ordered.qwk = {0.1, 0.4, 0.4, 0.3};
    const auto t2 = top_heads(ordered, 10);
    REQUIRE(t2.size() == 4);
    CHECK(t2[0].coord == HeadCoord{0, 1});
    CHECK(t2[1].coord == HeadCoord{1, 0});
    CHECK(t2[2].coord == HeadCoord{1, 1});
    CHECK(t2[3].coord == HeadCoord{0, 0});
}

TEST_CASE("best average head") {
    HeadGrid a("x", 1, 1, 3, ProbeKind::Ridge), b("y", 1, 1, 3, ProbeKind::Ridge);
    a.qwk = {0.9, 0.5, 0.6};
    b.qwk = {0.1, 0.6, 0.6};
    const HeadGrid* gs[] = {&a, &b};
    const auto best = best_average_head(gs);
    CHECK(best.coord == HeadCoord{0, 2});
    CHECK(best.qwk == doctest::Approx(0.6));
}

TEST_CASE("evaluate_head") {
    std::mt19937_64 rng(34);
    const TraitRange r{1, "t", 1, 5};
    SUBCASE("constant labels predicted exactly") {
        const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(10, 1);
        const Eigen::VectorXd y = Eigen::VectorXd::Constant(10, 0.5);
        const std::vector<int> labels(4, 3);
        const auto ev = evaluate_head(x, y, Eigen::MatrixXd::Ones(4, 1) * 1.01, labels, r, FitParams{});
        CHECK(ev.predicted == labels);
        CHECK(ev.qwk == 1.0);
    }
    SUBCASE("planted signal versus pure noise, n = 500") {
        Eigen::VectorXd w = testutil::random_matrix(rng, 16, 1);
        w /= w.norm();
        std::uniform_int_distribution<int> s(1, 5);
        auto make = [&](int n, bool signal, Eigen::MatrixXd& x, Eigen::VectorXd& y, std::vector<int>& raw) {
            x = testutil::random_matrix(rng, n, 16);
            y.resize(n);
            raw.resize(n);
            for (int i = 0; i < n; ++i) {
                raw[i] = s(rng);
                y(i) = normalize_score(raw[i], r);
                if (signal) x.row(i) = (y(i) * w).transpose() + 0.05 * testutil::random_matrix(rng, 1, 16);
            }
        };
        Eigen::MatrixXd xtr, xte;
        Eigen::VectorXd ytr, yte;
        std::vector<int> rtr, rte;
        make(500, true, xtr, ytr, rtr);
        make(500, true, xte, yte, rte);
        CHECK(evaluate_head(xtr, ytr, xte, rte, r, FitParams{}).qwk >= 0.9);
        make(500, false, xtr, ytr, rtr);
        make(500, false, xte, yte, rte);
        CHECK(std::abs(evaluate_head(xtr, ytr, xte, rte, r, FitParams{}).qwk) <= 0.2);
    }
}

TEST_CASE("sweep finds the planted head, serial equals parallel") {
    const auto out = planted_synth("metrics_sweep", 0.05);
    const auto data = load_dataset(out.table, out.metadata);
    const DumpReader dump(out.dump);
    const auto plans = make_prompt_wise_splits(data.records, {});
    for (const auto& plan : plans) {
        SweepOptions serial;
        const auto g1 = sweep_heads(dump, data, plan, "holistic", FitParams{}, serial);
        SweepOptions par;
        par.workers = 4;
        const auto g4 = sweep_heads(dump, data, plan, "holistic", FitParams{}, par);
        CHECK(g1.qwk == g4.qwk);
        CHECK(g1.qwk.size() == 6);
        CHECK(best_head(g1).coord == HeadCoord{1, 2});
        CHECK(g1.test_prompt == plan.test_prompt);
    }

    FitParams mlp;
    mlp.kind = ProbeKind::Mlp;
    mlp.mlp.hidden = 8;
    mlp.mlp.max_epochs = 3;
    SweepOptions serial, par;
    par.workers = 3;
    CHECK(sweep_heads(dump, data, plans[0], "holistic", mlp, serial).qwk ==
          sweep_heads(dump, data, plans[0], "holistic", mlp, par).qwk);
}

TEST_CASE("noiseless planted head scores a perfect QWK") {
    const auto out = planted_synth("metrics_noiseless", 0.0);
    const auto data = load_dataset(out.table, out.metadata);
    const DumpReader dump(out.dump);
    for (const auto& plan : make_prompt_wise_splits(data.records, {})) {
        const auto g = sweep_heads(dump, data, plan, "holistic", FitParams{});
        CHECK(g.at({1, 2}) == 1.0);
    }
}

TEST_CASE("1x1 geometry grid equals the single evaluation") {
    SynthSpec s;
    s.n_layers = 1;
    s.n_heads = 1;
    s.head_dim = 4;
    s.essays_per_prompt = 40;
    s.seed = 8;
    const auto out = cmd_synth(s, testutil::scratch_dir("metrics_1x1"));
    const auto data = load_dataset(out.table, out.metadata);
    const DumpReader dump(out.dump);
    const auto plan = make_prompt_wise_splits(data.records, {})[0];
    const auto g = sweep_heads(dump, data, plan, "holistic", FitParams{});
    const auto split = prepare_split(dump, data, plan.train_prompt_ids, plan.test_prompt, "holistic");
    const auto xtr = dump.load_head_matrix({0, 0}, split.train_rows).values;
    const auto xte = dump.load_head_matrix({0, 0}, split.test_rows).values;
    const auto ev = evaluate_head(xtr, split.train_y, xte, split.test_labels, split.test_range, FitParams{});
    REQUIRE(g.qwk.size() == 1);
    CHECK(g.qwk[0] == ev.qwk);
}

TEST_CASE("essays missing from the dump are listed") {
    const auto out = planted_synth("metrics_missing", 0.05, 20);
    auto table = testutil::slurp(out.table);
    table += "ghost_1\t1\tboo\t2\nghost_2\t2\tboo\t3\n";
    testutil::write_file(out.table, table);
    const auto data = load_dataset(out.table, out.metadata);
    const DumpReader dump(out.dump);
    const auto plan = make_prompt_wise_splits(data.records, {})[0];
    try {
        sweep_heads(dump, data, plan, "holistic", FitParams{});
        FAIL("expected missing essays");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NotFound);
        const std::string msg = e.what();
        CHECK(msg.find("ghost_1") != std::string::npos);
        CHECK(msg.find("ghost_2") != std::string::npos);
    }
}

TEST_CASE("head seeds differ per head and are stable") {
    CHECK(head_seed(1, "holistic", 3, {0, 1}) == head_seed(1, "holistic", 3, {0, 1}));
    CHECK(head_seed(1, "holistic", 3, {0, 1}) != head_seed(1, "holistic", 3, {1, 0}));
    CHECK(head_seed(1, "holistic", 3, {0, 1}) != head_seed(2, "holistic", 3, {0, 1}));
    CHECK(head_seed(1, "holistic", 3, {0, 1}) != head_seed(1, "content", 3, {0, 1}));
}
