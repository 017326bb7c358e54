#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "headprobe/activation_store.hpp"
#include "headprobe/dataset.hpp"
#include "headprobe/metrics.hpp"

namespace headprobe {

struct DirectionVector {
    HeadCoord coord;
    int prompt_id = 0;
    std::string trait;
    Eigen::VectorXd v;  // unit norm
};

// Unit vector along mean(pos) - mean(neg).
Eigen::VectorXd binary_direction(const Eigen::MatrixXd& pos, const Eigen::MatrixXd& neg);

struct GradedDirection {
    Eigen::VectorXd raw;   // sum over score pairs i < j of mean_j - mean_i
    Eigen::VectorXd unit;  // raw / |raw|
    std::vector<int> used_scores;
    std::vector<int> skipped_scores;  // in range but without examples
};

// Direction of increasing score from per-score activation groups. Scores of
// the range with no examples are skipped; at least two must be present.
GradedDirection graded_direction(const std::map<int, Eigen::MatrixXd>& groups, const TraitRange& range);

// u.v / (|u| |v|), clamped to [-1, 1].
double cosine(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

struct SimilarityMatrix {
    // "traits-within-prompt" or "prompts-within-trait".
    std::string analysis;
    std::string subject;  // prompt id or trait the matrix belongs to
    std::vector<std::string> labels;
    Eigen::MatrixXd values;
    std::optional<double> mean_offdiag;
    HeadCoord coord;
    double selection_mean_qwk = 0.0;
    std::map<std::string, std::vector<int>> skipped_scores;
    std::map<std::string, std::size_t> essay_counts;
    std::vector<std::string> warnings;
};

// Pairwise cosine matrix of unit vectors; the mean of off-diagonal entries
// is absent for a single label.
SimilarityMatrix similarity_matrix(std::vector<std::string> labels, const std::vector<Eigen::VectorXd>& directions);

// Directions of every trait of `prompt_id` at the head with the best mean
// QWK across those traits, computed from that prompt's essays.
SimilarityMatrix trait_direction_analysis(const DumpReader& dump, const Dataset& data, int prompt_id,
                                          const std::map<std::string, HeadGrid>& trait_grids);

// Directions of `trait` under every prompt at the head with the best mean
// QWK across those prompts.
SimilarityMatrix prompt_direction_analysis(const DumpReader& dump, const Dataset& data, const std::string& trait,
                                           const std::map<int, HeadGrid>& prompt_grids);

}  // namespace headprobe
