#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "headprobe/directions.hpp"
#include "headprobe/metrics.hpp"
#include "headprobe/probes.hpp"

namespace headprobe {

inline constexpr const char* kToolVersion = HEADPROBE_VERSION;
inline constexpr const char* kProtocolTestSet = "test-set-selected";
inline constexpr const char* kProtocolHeldOut = "held-out-selected";

// Stamped into every JSON artifact.
struct Provenance {
    std::string tool_version = kToolVersion;
    std::string model_name;
    std::string protocol = kProtocolTestSet;
    std::string selection_rule;
};

// Nine significant digits, "%.9g".
std::string format_number(double value);
// `value` rounded to what format_number prints.
double round_to_printed(double value);

// Writes <stem>.csv (rows = layers, columns = heads, no header) and
// <stem>.json.
void emit_head_heatmap(const HeadGrid& grid, const std::filesystem::path& stem, const Provenance& provenance);

HeadGrid read_head_heatmap(const std::filesystem::path& json_path);
Eigen::MatrixXd read_heatmap_csv(const std::filesystem::path& csv_path);

struct TokenScore {
    std::string token;
    double score = 0.0;
    bool colored = false;  // score > 0.5
};

struct TokenScoreReport {
    std::string essay_id;
    HeadCoord coord;
    std::string trait;
    int prompt_id = 0;
    int rank = 0;  // position among the selected heads, 0 = best
    double head_qwk = 0.0;
    std::vector<TokenScore> tokens;
};

struct TokenReportInfo {
    std::string essay_id;
    HeadCoord coord;
    std::string trait;
    int prompt_id = 0;
    int rank = 0;
    double head_qwk = 0.0;
};

inline constexpr std::size_t kDefaultTopK = 8;

// Scores every token row of `series` with the probe; one token text per row.
TokenScoreReport emit_token_scores(const Probe& probe, const Eigen::MatrixXd& series,
                                   const std::vector<std::string>& tokens, const TokenReportInfo& info);

void write_token_report(const TokenScoreReport& report, const std::filesystem::path& path,
                        const Provenance& provenance);

// Projection onto the two leading principal axes of the mean-centred data,
// each axis signed so that its first nonzero loading is positive.
Eigen::MatrixXd pca_2d(const Eigen::MatrixXd& x);

// CSV quick-look of a PCA projection: id,score,pc1,pc2.
void emit_pca_projection(const Eigen::MatrixXd& projection, const std::vector<std::string>& ids,
                         const std::vector<int>& scores, const std::filesystem::path& path);

void emit_similarity_report(const SimilarityMatrix& matrix, const std::filesystem::path& path,
                            const Provenance& provenance);

SimilarityMatrix read_similarity_report(const std::filesystem::path& path);

// Writes `text` to `path`, creating parent directories.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace headprobe
