#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "headprobe/activation_store.hpp"
#include "headprobe/dataset.hpp"
#include "headprobe/directions.hpp"
#include "headprobe/metrics.hpp"
#include "headprobe/report.hpp"
#include "headprobe/run_config.hpp"

namespace headprobe {

// One (trait, test prompt) evaluation of a sweep.
struct SweepRecord {
    std::string trait;
    SplitPlan plan;
    std::set<int> train_prompts;          // prompts whose essays trained the probes
    std::optional<int> validation_prompt; // held-out protocol only
    HeadGrid test_grid;
    std::optional<HeadGrid> validation_grid;
    BestHead selected;                    // chosen on the selection grid
    double reported_qwk = 0.0;            // test QWK at the selected head
};

struct SweepRun {
    std::vector<SweepRecord> records;
    std::vector<std::string> skipped;  // pairs without usable train or test essays
};

using AuditHook = std::function<void(const PreparedSplit&)>;

std::string selection_rule(SelectionProtocol protocol);
Provenance provenance_for(const RunConfig& config, const DumpHeader& header);

// Traits the run covers: configured ones (checked against the dataset) or
// every retained trait.
std::vector<std::string> run_traits(const RunConfig& config, const Dataset& data);

// In-memory sweep over every prompt-wise split and trait.
SweepRun run_sweep(const RunConfig& config, const Dataset& data, const DumpReader& dump,
                   const AuditHook& audit = {});

// run_sweep plus heatmaps, PCA quick-looks, summary tables and manifest under
// config.output_dir.
SweepRun cmd_sweep(const RunConfig& config, const AuditHook& audit = {});

// Trait-within-prompt and prompt-within-trait similarity reports under
// <out>/directions. Grids come from <out>/grids, computed when absent if
// config.compute_missing_grids.
std::vector<SimilarityMatrix> cmd_directions(const RunConfig& config);

// Per-token scores for one essay from the probes of the top_k heads.
std::vector<TokenScoreReport> cmd_token_report(const RunConfig& config, const std::string& essay_id,
                                               const std::string& trait, std::size_t top_k);

// Human-readable description of a dump header.
std::string cmd_inspect(const std::filesystem::path& dump_path);

// File-system safe version of a label.
std::string path_label(const std::string& label);

std::filesystem::path grid_stem(const std::filesystem::path& out_dir, const std::string& trait, int prompt);

}  // namespace headprobe
