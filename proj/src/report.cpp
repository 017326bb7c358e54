#include "headprobe/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "headprobe/error.hpp"

namespace headprobe {

using ojson = nlohmann::ordered_json;

std::string format_number(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", value);
    return buf;
}

double round_to_printed(double value) { return std::stod(format_number(value)); }

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
    out << text;
    if (!out) fail(ErrorKind::Io, "failed writing '" + path.string() + "'");
}

namespace {

ojson provenance_json(const Provenance& p) {
    return {{"tool_version", p.tool_version},
            {"model_name", p.model_name},
            {"protocol", p.protocol},
            {"selection_rule", p.selection_rule}};
}

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, "'" + path.string() + "': " + e.what());
    }
}

ojson matrix_json(const Eigen::MatrixXd& m) {
    ojson rows = ojson::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        ojson row = ojson::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(round_to_printed(m(i, j)));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

void emit_head_heatmap(const HeadGrid& grid, const std::filesystem::path& stem, const Provenance& provenance) {
    std::ostringstream csv;
    for (int l = 0; l < grid.n_layers; ++l) {
        for (int h = 0; h < grid.n_heads; ++h) {
            if (h) csv << ',';
            csv << format_number(grid.at({l, h}));
        }
        csv << '\n';
    }
    write_text_file(stem.string() + ".csv", csv.str());

    const auto best = best_head(grid);
    ojson j;
    j["artifact"] = "head-grid";
    j["provenance"] = provenance_json(provenance);
    j["trait"] = grid.trait;
    j["test_prompt"] = grid.test_prompt;
    j["probe_kind"] = to_string(grid.probe_kind);
    j["n_layers"] = grid.n_layers;
    j["n_heads"] = grid.n_heads;
    j["best_head"] = {{"layer", best.coord.layer}, {"head", best.coord.head}, {"qwk", round_to_printed(best.qwk)}};
    ojson rows = ojson::array();
    for (int l = 0; l < grid.n_layers; ++l) {
        ojson row = ojson::array();
        for (int h = 0; h < grid.n_heads; ++h) row.push_back(round_to_printed(grid.at({l, h})));
        rows.push_back(std::move(row));
    }
    j["qwk"] = std::move(rows);
    write_text_file(stem.string() + ".json", j.dump(2) + "\n");
}

HeadGrid read_head_heatmap(const std::filesystem::path& json_path) {
    const auto j = read_json(json_path);
    try {
        HeadGrid g(j.at("trait").get<std::string>(), j.at("test_prompt").get<int>(), j.at("n_layers").get<int>(),
                   j.at("n_heads").get<int>(), probe_kind_from_string(j.at("probe_kind").get<std::string>()));
        const auto& rows = j.at("qwk");
        if (static_cast<int>(rows.size()) != g.n_layers) fail(ErrorKind::Format, "head grid row count mismatch");
        for (int l = 0; l < g.n_layers; ++l) {
            if (static_cast<int>(rows[l].size()) != g.n_heads) fail(ErrorKind::Format, "head grid column count mismatch");
            for (int h = 0; h < g.n_heads; ++h) g.at({l, h}) = rows[l][h].get<double>();
        }
        return g;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, "'" + json_path.string() + "': " + e.what());
    }
}

Eigen::MatrixXd read_heatmap_csv(const std::filesystem::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) fail(ErrorKind::Io, "cannot open '" + csv_path.string() + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (!rows.empty() && row.size() != rows[0].size()) fail(ErrorKind::Format, "ragged heatmap CSV");
        rows.push_back(std::move(row));
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t k = 0; k < rows[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
    return m;
}

TokenScoreReport emit_token_scores(const Probe& probe, const Eigen::MatrixXd& series,
                                   const std::vector<std::string>& tokens, const TokenReportInfo& info) {
    if (static_cast<Eigen::Index>(tokens.size()) != series.rows()) {
        fail(ErrorKind::Contract, "token report: " + std::to_string(tokens.size()) + " tokens for " +
                                      std::to_string(series.rows()) + " activation rows");
    }
    const Eigen::VectorXd scores = predict(probe, series);
    TokenScoreReport r;
    r.essay_id = info.essay_id;
    r.coord = info.coord;
    r.trait = info.trait;
    r.prompt_id = info.prompt_id;
    r.rank = info.rank;
    r.head_qwk = info.head_qwk;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const double s = std::clamp(scores(static_cast<Eigen::Index>(i)), 0.0, 1.0);
        r.tokens.push_back({tokens[i], s, s > 0.5});
    }
    return r;
}

void write_token_report(const TokenScoreReport& report, const std::filesystem::path& path,
                        const Provenance& provenance) {
    ojson j;
    j["artifact"] = "token-scores";
    j["provenance"] = provenance_json(provenance);
    j["essay_id"] = report.essay_id;
    j["trait"] = report.trait;
    j["prompt"] = report.prompt_id;
    j["rank"] = report.rank;
    j["head"] = {{"layer", report.coord.layer}, {"head", report.coord.head}, {"qwk", round_to_printed(report.head_qwk)}};
    j["coloring_rule"] = "score > 0.5";
    ojson toks = ojson::array();
    for (const auto& t : report.tokens) {
        toks.push_back({{"token", t.token}, {"score", round_to_printed(t.score)}, {"colored", t.colored}});
    }
    j["tokens"] = std::move(toks);
    write_text_file(path, j.dump(2) + "\n");
}

Eigen::MatrixXd pca_2d(const Eigen::MatrixXd& x) {
    if (x.rows() < 2) fail(ErrorKind::Contract, "pca_2d needs at least two rows");
    if (x.cols() < 1) fail(ErrorKind::Contract, "pca_2d needs at least one column");
    const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), 2);
    if (centered.isZero(0.0)) return out;

    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const auto& v = svd.matrixV();
    const Eigen::Index k = std::min<Eigen::Index>(2, v.cols());
    for (Eigen::Index c = 0; c < k; ++c) {
        Eigen::VectorXd axis = v.col(c);
        const double tol = 1e-12 * axis.cwiseAbs().maxCoeff();
        for (Eigen::Index i = 0; i < axis.size(); ++i) {
            if (std::abs(axis(i)) > tol) {
                if (axis(i) < 0) axis = -axis;
                break;
            }
        }
        out.col(c) = centered * axis;
    }
    return out;
}

void emit_pca_projection(const Eigen::MatrixXd& projection, const std::vector<std::string>& ids,
                         const std::vector<int>& scores, const std::filesystem::path& path) {
    if (static_cast<Eigen::Index>(ids.size()) != projection.rows() || ids.size() != scores.size()) {
        fail(ErrorKind::Contract, "PCA projection: ids, scores and rows differ in count");
    }
    std::ostringstream csv;
    csv << "id,score,pc1,pc2\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        csv << ids[i] << ',' << scores[i] << ',' << format_number(projection(r, 0)) << ','
            << format_number(projection(r, 1)) << '\n';
    }
    write_text_file(path, csv.str());
}

void emit_similarity_report(const SimilarityMatrix& matrix, const std::filesystem::path& path,
                            const Provenance& provenance) {
    ojson j;
    j["artifact"] = "similarity-matrix";
    j["provenance"] = provenance_json(provenance);
    j["analysis"] = matrix.analysis;
    j["subject"] = matrix.subject;
    j["selected_head"] = {{"layer", matrix.coord.layer},
                          {"head", matrix.coord.head},
                          {"mean_qwk", round_to_printed(matrix.selection_mean_qwk)}};
    j["essay_subset"] = "test-prompt essays";
    j["labels"] = matrix.labels;
    j["values"] = matrix_json(matrix.values);
    j["mean_offdiag"] = matrix.mean_offdiag ? ojson(round_to_printed(*matrix.mean_offdiag)) : ojson(nullptr);
    ojson skipped = ojson::object();
    for (const auto& [k, v] : matrix.skipped_scores) skipped[k] = v;
    j["skipped_scores"] = std::move(skipped);
    ojson counts = ojson::object();
    for (const auto& [k, v] : matrix.essay_counts) counts[k] = v;
    j["essay_counts"] = std::move(counts);
    j["warnings"] = matrix.warnings;
    write_text_file(path, j.dump(2) + "\n");
}

SimilarityMatrix read_similarity_report(const std::filesystem::path& path) {
    const auto j = read_json(path);
    try {
        SimilarityMatrix m;
        m.analysis = j.at("analysis").get<std::string>();
        m.subject = j.at("subject").get<std::string>();
        m.labels = j.at("labels").get<std::vector<std::string>>();
        const auto k = static_cast<Eigen::Index>(m.labels.size());
        m.values.resize(k, k);
        for (Eigen::Index r = 0; r < k; ++r) {
            for (Eigen::Index c = 0; c < k; ++c) m.values(r, c) = j.at("values").at(r).at(c).get<double>();
        }
        if (!j.at("mean_offdiag").is_null()) m.mean_offdiag = j.at("mean_offdiag").get<double>();
        m.coord = {j.at("selected_head").at("layer").get<int>(), j.at("selected_head").at("head").get<int>()};
        m.selection_mean_qwk = j.at("selected_head").at("mean_qwk").get<double>();
        m.skipped_scores = j.at("skipped_scores").get<std::map<std::string, std::vector<int>>>();
        m.essay_counts = j.at("essay_counts").get<std::map<std::string, std::size_t>>();
        m.warnings = j.at("warnings").get<std::vector<std::string>>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, "'" + path.string() + "': " + e.what());
    }
}

}  // namespace headprobe
