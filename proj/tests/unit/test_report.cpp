#include <doctest.h>

#include <random>

#include <json.hpp>

#include "../support/oracles.hpp"
#include "headprobe/error.hpp"
#include "headprobe/report.hpp"

using namespace headprobe;

namespace {

Provenance prov() {
    Provenance p;
    p.model_name = "toy-model";
    p.selection_rule = "argmax";
    return p;
}

void check_provenance(const nlohmann::json& j) {
    const auto& p = j.at("provenance");
    CHECK(p.at("tool_version") == kToolVersion);
    CHECK(p.at("model_name") == "toy-model");
    CHECK(p.at("protocol") == kProtocolTestSet);
    CHECK(p.at("selection_rule") == "argmax");
}

}  // namespace

TEST_CASE("number formatting") {
    CHECK(format_number(0.5) == "0.5");
    CHECK(format_number(1.0 / 3.0) == "0.333333333");
    CHECK(format_number(-1.0) == "-1");
    CHECK(round_to_printed(1.0 / 3.0) == 0.333333333);
}

TEST_CASE("head heatmap emission") {
    const auto dir = testutil::scratch_dir("report_heatmap");
    HeadGrid g("holistic", 3, 2, 2, ProbeKind::Ridge);
    g.qwk = {0.125, -0.3, 0.987654321987, 1.0 / 7.0};
    emit_head_heatmap(g, dir / "a", prov());
    const auto csv = testutil::slurp(dir / "a.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
    CHECK(csv.substr(0, csv.find('\n')).find(',') != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), ',') == 2);

    emit_head_heatmap(g, dir / "b", prov());
    CHECK(testutil::slurp(dir / "a.csv") == testutil::slurp(dir / "b.csv"));
    CHECK(testutil::slurp(dir / "a.json") == testutil::slurp(dir / "b.json"));

    const auto back = read_head_heatmap(dir / "a.json");
    CHECK(back.trait == "holistic");
    CHECK(back.test_prompt == 3);
    CHECK(back.probe_kind == ProbeKind::Ridge);
    const auto m = read_heatmap_csv(dir / "a.csv");
    REQUIRE(m.rows() == 2);
    REQUIRE(m.cols() == 2);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(back.qwk[i] - g.qwk[i]) <= 1e-9);
        CHECK(std::abs(m(i / 2, i % 2) - g.qwk[i]) <= 1e-9);
    }
    const auto j = nlohmann::json::parse(testutil::slurp(dir / "a.json"));
    check_provenance(j);
    CHECK(j.at("best_head").at("layer") == 1);
    CHECK(j.at("best_head").at("head") == 0);
}

TEST_CASE("token scores") {
    const auto dir = testutil::scratch_dir("report_tokens");
    TokenReportInfo info{"e1", {0, 1}, "holistic", 1, 0, 0.8};
    RidgeProbe zero;
    zero.weights = Eigen::VectorXd::Zero(3);
    const Eigen::MatrixXd series = Eigen::MatrixXd::Ones(4, 3);
    const auto r0 = emit_token_scores(zero, series, {"a", "b", "c", "d"}, info);
    REQUIRE(r0.tokens.size() == 4);
    for (const auto& t : r0.tokens) {
        CHECK(t.score == 0.0);
        CHECK_FALSE(t.colored);
    }

    RidgeProbe half;
    half.weights = Eigen::VectorXd::Zero(3);
    half.weights(0) = 0.5;
    Eigen::MatrixXd s2(3, 3);
    s2 << 1, 0, 0, 1.2, 0, 0, 3, 0, 0;
    const auto r1 = emit_token_scores(half, s2, {"x", "y", "z"}, info);
    CHECK(r1.tokens[0].score == 0.5);
    CHECK_FALSE(r1.tokens[0].colored);
    CHECK(r1.tokens[1].colored);
    CHECK(r1.tokens[2].score == 1.0);

    CHECK_THROWS_AS(emit_token_scores(zero, series, {"a"}, info), Error);

    write_token_report(r1, dir / "t.json", prov());
    write_token_report(r1, dir / "u.json", prov());
    CHECK(testutil::slurp(dir / "t.json") == testutil::slurp(dir / "u.json"));
    const auto j = nlohmann::json::parse(testutil::slurp(dir / "t.json"));
    check_provenance(j);
    REQUIRE(j.at("tokens").size() == 3);
    for (const auto& t : j.at("tokens")) CHECK(t.at("colored").get<bool>() == (t.at("score").get<double>() > 0.5));
}

TEST_CASE("pca 2d") {
    SUBCASE("identical rows") {
        const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(5, 3, 2.5);
        CHECK(pca_2d(x).isZero(0.0));
    }
    SUBCASE("rank one") {
        std::mt19937_64 rng(50);
        const Eigen::VectorXd t = testutil::random_matrix(rng, 20, 1);
        const Eigen::RowVectorXd dir = testutil::random_matrix(rng, 1, 6);
        const Eigen::MatrixXd x = t * dir;
        const auto p = pca_2d(x);
        CHECK(p.col(1).cwiseAbs().maxCoeff() <= 1e-9);
    }
    SUBCASE("matches the covariance eigensolve") {
        std::mt19937_64 rng(51);
        for (int trial = 0; trial < 10; ++trial) {
            Eigen::MatrixXd x = testutil::random_matrix(rng, 30 + trial, 5);
            x.col(0) *= 4.0;
            x.col(3) *= 2.0;
            const auto got = pca_2d(x);
            const auto ref = oracle::pca_eigen(x);
            CHECK((got - ref).cwiseAbs().maxCoeff() <= 1e-6);
        }
    }
    SUBCASE("too few rows") {
        CHECK_THROWS_AS(pca_2d(Eigen::MatrixXd::Ones(1, 3)), Error);
    }
}

TEST_CASE("pca projection csv") {
    const auto dir = testutil::scratch_dir("report_pca");
    Eigen::MatrixXd p(2, 2);
    p << 1.5, -2, 0, 0.25;
    emit_pca_projection(p, {"a", "b"}, {3, 1}, dir / "p.csv");
    CHECK(testutil::slurp(dir / "p.csv") == "id,score,pc1,pc2\na,3,1.5,-2\nb,1,0,0.25\n");
}

TEST_CASE("similarity report") {
    const auto dir = testutil::scratch_dir("report_sim");
    SimilarityMatrix one;
    one.analysis = "traits-within-prompt";
    one.subject = "1";
    one.labels = {"holistic"};
    one.values = Eigen::MatrixXd::Ones(1, 1);
    emit_similarity_report(one, dir / "one.json", prov());
    const auto j = nlohmann::json::parse(testutil::slurp(dir / "one.json"));
    CHECK(j.at("values") == nlohmann::json::parse("[[1]]"));
    CHECK(j.at("mean_offdiag").is_null());
    check_provenance(j);

    SimilarityMatrix m;
    m.analysis = "prompts-within-trait";
    m.subject = "content";
    m.labels = {"1", "2", "3"};
    m.values.resize(3, 3);
    m.values << 1, 0.123456789123, -0.5, 0.123456789123, 1, 1.0 / 3, -0.5, 1.0 / 3, 1;
    m.mean_offdiag = (0.123456789123 - 0.5 + 1.0 / 3) / 3;
    m.coord = {2, 5};
    m.selection_mean_qwk = 0.77;
    m.skipped_scores = {{"2", {0, 4}}};
    m.essay_counts = {{"1", 10}, {"2", 12}, {"3", 9}};
    m.warnings = {"none"};
    emit_similarity_report(m, dir / "a.json", prov());
    emit_similarity_report(m, dir / "b.json", prov());
    CHECK(testutil::slurp(dir / "a.json") == testutil::slurp(dir / "b.json"));
    const auto back = read_similarity_report(dir / "a.json");
    CHECK(back.labels == m.labels);
    CHECK(back.coord == m.coord);
    CHECK(back.analysis == m.analysis);
    CHECK(back.skipped_scores == m.skipped_scores);
    CHECK((back.values - m.values).cwiseAbs().maxCoeff() <= 1e-9);
    REQUIRE(back.mean_offdiag);
    CHECK(std::abs(*back.mean_offdiag - *m.mean_offdiag) <= 1e-9);
}
