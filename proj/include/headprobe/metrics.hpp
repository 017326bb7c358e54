#pragma once

#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "headprobe/activation_store.hpp"
#include "headprobe/dataset.hpp"
#include "headprobe/probes.hpp"

namespace headprobe {

// QWK of every attention head for one (trait, test prompt) evaluation.
struct HeadGrid {
    std::string trait;
    int test_prompt = 0;
    int n_layers = 0;
    int n_heads = 0;
    ProbeKind probe_kind = ProbeKind::Ridge;
    std::vector<double> qwk;  // layer-major

    HeadGrid() = default;
    HeadGrid(std::string trait, int test_prompt, int n_layers, int n_heads, ProbeKind kind);

    double at(HeadCoord c) const { return qwk[static_cast<std::size_t>(c.layer * n_heads + c.head)]; }
    double& at(HeadCoord c) { return qwk[static_cast<std::size_t>(c.layer * n_heads + c.head)]; }
    HeadCoord coord_of(std::size_t index) const {
        return {static_cast<int>(index) / n_heads, static_cast<int>(index) % n_heads};
    }
};

struct BestHead {
    HeadCoord coord;
    double qwk = 0.0;
};

// Quadratic weighted kappa between two integer ratings on `range`.
double qwk(std::span<const int> human, std::span<const int> predicted, const TraitRange& range);

// Argmax; ties go to the lexicographically smallest (layer, head).
BestHead best_head(const HeadGrid& grid);

// The k best heads in descending QWK order, same tie-break.
std::vector<BestHead> top_heads(const HeadGrid& grid, std::size_t k);

// Head maximising the mean QWK over several grids of equal geometry.
BestHead best_average_head(std::span<const HeadGrid* const> grids);

struct HeadEvaluation {
    Probe probe;
    double qwk = 0.0;
    std::vector<int> predicted;
};

// Fit on normalized training labels, predict the test rows, map back to raw
// scores and compare with the raw test labels.
HeadEvaluation evaluate_head(const Eigen::MatrixXd& train_x, const Eigen::VectorXd& train_y,
                             const Eigen::MatrixXd& test_x, std::span<const int> test_labels,
                             const TraitRange& range, const FitParams& params);

// Rows of a dump participating in one train/evaluate pass.
struct PreparedSplit {
    std::string trait;
    int eval_prompt = 0;
    std::set<int> train_prompts;
    std::vector<std::size_t> train_rows;  // dump example indices
    std::vector<std::size_t> train_records;
    Eigen::VectorXd train_y;              // normalized per (prompt, trait) range
    std::vector<std::size_t> test_rows;
    std::vector<std::size_t> test_records;
    std::vector<int> test_labels;
    TraitRange test_range;
};

// Joins dataset records to dump rows. Throws Error(NotFound) listing every
// essay the dump lacks, and Error(Contract) if a training row belongs to
// the evaluation prompt.
PreparedSplit prepare_split(const DumpReader& dump, const Dataset& data, const std::set<int>& train_prompts,
                            int eval_prompt, const std::string& trait);

struct SweepOptions {
    int workers = 1;
    // Base seed; each head's MLP seed is derived from it and the head identity.
    std::uint64_t seed = 0;
    // Called once per prepared split before any fitting.
    std::function<void(const PreparedSplit&)> audit;
};

HeadGrid sweep_prepared(const DumpReader& dump, const PreparedSplit& split, const FitParams& params,
                        const SweepOptions& options = {});

HeadGrid sweep_heads(const DumpReader& dump, const Dataset& data, const SplitPlan& split, const std::string& trait,
                     const FitParams& params, const SweepOptions& options = {});

// Seed used for the probe of one head within a sweep.
std::uint64_t head_seed(std::uint64_t base, const std::string& trait, int eval_prompt, HeadCoord coord);

}  // namespace headprobe
