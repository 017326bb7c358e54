#include "headprobe/directions.hpp"

#include <algorithm>
#include <cmath>

#include "headprobe/error.hpp"

namespace headprobe {

namespace {

constexpr double kDegenerateNorm = 1e-12;

Eigen::VectorXd row_mean(const Eigen::MatrixXd& m) { return m.colwise().mean().transpose(); }

}  // namespace

Eigen::VectorXd binary_direction(const Eigen::MatrixXd& pos, const Eigen::MatrixXd& neg) {
    if (pos.rows() < 1 || neg.rows() < 1) fail(ErrorKind::Contract, "binary_direction needs examples in both groups");
    if (pos.cols() != neg.cols()) fail(ErrorKind::Contract, "binary_direction: groups differ in dimension");
    const Eigen::VectorXd diff = row_mean(pos) - row_mean(neg);
    const double norm = diff.norm();
    if (!(norm >= kDegenerateNorm)) fail(ErrorKind::Numerical, "degenerate direction: group means coincide");
    return diff / norm;
}

GradedDirection graded_direction(const std::map<int, Eigen::MatrixXd>& groups, const TraitRange& range) {
    GradedDirection out;
    std::vector<Eigen::VectorXd> means;
    Eigen::Index dim = -1;
    for (const auto& [score, rows] : groups) {
        if (!range.contains(score)) {
            fail(ErrorKind::Range, "score group " + std::to_string(score) + " outside [" +
                                       std::to_string(range.min_score) + ", " + std::to_string(range.max_score) + "]");
        }
        if (rows.rows() == 0) continue;
        if (dim >= 0 && rows.cols() != dim) fail(ErrorKind::Contract, "graded_direction: groups differ in dimension");
        dim = rows.cols();
        out.used_scores.push_back(score);
        means.push_back(row_mean(rows));
    }
    for (int s = range.min_score; s <= range.max_score; ++s) {
        if (std::find(out.used_scores.begin(), out.used_scores.end(), s) == out.used_scores.end()) {
            out.skipped_scores.push_back(s);
        }
    }
    if (means.size() < 2) {
        fail(ErrorKind::Validation, "graded_direction needs at least two non-empty score groups, found " +
                                        std::to_string(means.size()));
    }

    // Unweighted sum of d_ij = mean_j - mean_i over all present pairs i < j.
    out.raw = Eigen::VectorXd::Zero(dim);
    for (std::size_t i = 0; i + 1 < means.size(); ++i) {
        for (std::size_t j = i + 1; j < means.size(); ++j) out.raw += means[j] - means[i];
    }
    const double norm = out.raw.norm();
    if (!(norm >= kDegenerateNorm)) fail(ErrorKind::Numerical, "degenerate direction: pairwise differences cancel");
    out.unit = out.raw / norm;
    return out;
}

double cosine(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    if (u.size() != v.size()) fail(ErrorKind::Contract, "cosine: vectors differ in dimension");
    const double nu = u.norm(), nv = v.norm();
    if (!(nu > 0.0) || !(nv > 0.0)) fail(ErrorKind::Contract, "cosine: zero vector");
    return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

SimilarityMatrix similarity_matrix(std::vector<std::string> labels, const std::vector<Eigen::VectorXd>& directions) {
    if (labels.size() != directions.size()) fail(ErrorKind::Contract, "similarity_matrix: label count mismatch");
    SimilarityMatrix m;
    m.labels = std::move(labels);
    const auto k = static_cast<Eigen::Index>(directions.size());
    m.values = Eigen::MatrixXd::Identity(k, k);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = i + 1; j < k; ++j) {
            const double c = cosine(directions[static_cast<std::size_t>(i)], directions[static_cast<std::size_t>(j)]);
            m.values(i, j) = m.values(j, i) = c;
            sum += 2.0 * c;
        }
    }
    if (k >= 2) m.mean_offdiag = sum / static_cast<double>(k * (k - 1));
    return m;
}

namespace {

struct DirectionTask {
    std::string label;
    int prompt_id;
    std::string trait;
};

SimilarityMatrix directions_at_head(const DumpReader& dump, const Dataset& data, const std::vector<DirectionTask>& tasks,
                                    const BestHead& head) {
    std::vector<std::string> labels;
    std::vector<Eigen::VectorXd> dirs;
    std::map<std::string, std::vector<int>> skipped;
    std::map<std::string, std::size_t> counts;
    std::vector<std::string> warnings;

    for (const auto& task : tasks) {
        const auto& range = data.ranges.at(task.prompt_id, task.trait);
        const auto records = data.select({task.prompt_id}, task.trait);
        std::vector<std::size_t> rows;
        std::vector<int> scores;
        std::vector<std::string> missing;
        for (auto r : records) {
            auto idx = dump.find_example(data.records[r].essay_id);
            if (!idx) {
                missing.push_back(data.records[r].essay_id);
                continue;
            }
            rows.push_back(*idx);
            scores.push_back(data.records[r].scores.at(task.trait));
        }
        if (!missing.empty()) {
            fail(ErrorKind::NotFound, std::to_string(missing.size()) + " essay(s) of prompt " +
                                          std::to_string(task.prompt_id) + " missing from dump, first '" + missing[0] + "'");
        }
        const auto acts = dump.load_head_matrix(head.coord, rows).values;

        std::map<int, std::vector<Eigen::Index>> by_score;
        for (std::size_t i = 0; i < scores.size(); ++i) by_score[scores[i]].push_back(static_cast<Eigen::Index>(i));
        if (by_score.size() < 2) {
            warnings.push_back(task.label + ": excluded, fewer than two score groups");
            continue;
        }
        std::map<int, Eigen::MatrixXd> groups;
        for (const auto& [score, idx] : by_score) {
            Eigen::MatrixXd g(static_cast<Eigen::Index>(idx.size()), acts.cols());
            for (std::size_t k = 0; k < idx.size(); ++k) g.row(static_cast<Eigen::Index>(k)) = acts.row(idx[k]);
            groups.emplace(score, std::move(g));
        }
        try {
            auto gd = graded_direction(groups, range);
            labels.push_back(task.label);
            dirs.push_back(gd.unit);
            skipped[task.label] = gd.skipped_scores;
            counts[task.label] = rows.size();
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Numerical) throw;
            warnings.push_back(task.label + ": excluded, " + e.what());
        }
    }
    if (labels.empty()) fail(ErrorKind::Validation, "no direction could be computed at the selected head");

    auto m = similarity_matrix(std::move(labels), dirs);
    m.coord = head.coord;
    m.selection_mean_qwk = head.qwk;
    m.skipped_scores = std::move(skipped);
    m.essay_counts = std::move(counts);
    m.warnings = std::move(warnings);
    return m;
}

}  // namespace

SimilarityMatrix trait_direction_analysis(const DumpReader& dump, const Dataset& data, int prompt_id,
                                          const std::map<std::string, HeadGrid>& trait_grids) {
    std::vector<DirectionTask> tasks;
    std::vector<const HeadGrid*> grids;
    for (const auto& trait : data.traits) {
        if (!data.ranges.find(prompt_id, trait)) continue;
        auto it = trait_grids.find(trait);
        if (it == trait_grids.end()) {
            fail(ErrorKind::NotFound, "no head grid for trait '" + trait + "' at prompt " + std::to_string(prompt_id));
        }
        if (it->second.test_prompt != prompt_id) {
            fail(ErrorKind::Contract, "grid for trait '" + trait + "' belongs to prompt " +
                                          std::to_string(it->second.test_prompt));
        }
        grids.push_back(&it->second);
        tasks.push_back({trait, prompt_id, trait});
    }
    if (tasks.empty()) fail(ErrorKind::NotFound, "prompt " + std::to_string(prompt_id) + " has no retained traits");

    auto m = directions_at_head(dump, data, tasks, best_average_head(grids));
    m.analysis = "traits-within-prompt";
    m.subject = std::to_string(prompt_id);
    return m;
}

SimilarityMatrix prompt_direction_analysis(const DumpReader& dump, const Dataset& data, const std::string& trait,
                                           const std::map<int, HeadGrid>& prompt_grids) {
    std::vector<DirectionTask> tasks;
    std::vector<const HeadGrid*> grids;
    for (int prompt : data.ranges.prompts_with(trait)) {
        auto it = prompt_grids.find(prompt);
        if (it == prompt_grids.end()) {
            fail(ErrorKind::NotFound, "no head grid for prompt " + std::to_string(prompt) + " under trait '" + trait + "'");
        }
        if (it->second.trait != trait) {
            fail(ErrorKind::Contract, "grid for prompt " + std::to_string(prompt) + " belongs to trait '" +
                                          it->second.trait + "'");
        }
        grids.push_back(&it->second);
        tasks.push_back({std::to_string(prompt), prompt, trait});
    }
    if (tasks.empty()) fail(ErrorKind::NotFound, "trait '" + trait + "' has no prompts");

    auto m = directions_at_head(dump, data, tasks, best_average_head(grids));
    m.analysis = "prompts-within-trait";
    m.subject = trait;
    return m;
}

}  // namespace headprobe
