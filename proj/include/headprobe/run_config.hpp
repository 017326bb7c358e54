#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "headprobe/probes.hpp"

namespace headprobe {

enum class SelectionProtocol { TestSet, HeldOut };

const char* to_string(SelectionProtocol protocol);
SelectionProtocol protocol_from_string(std::string_view text);

struct RunConfig {
    std::filesystem::path dump_path;
    std::filesystem::path dataset_path;
    std::filesystem::path metadata_path;
    // ALL-mode dump and token texts for token reports.
    std::optional<std::filesystem::path> token_dump_path;
    std::optional<std::filesystem::path> tokens_path;
    std::vector<std::string> traits;  // empty: every retained trait
    ProbeKind probe_kind = ProbeKind::Ridge;
    double ridge_lambda = kDefaultRidgeLambda;
    bool ridge_bias = false;
    MlpFitConfig mlp;
    std::set<int> excluded_train_prompts;
    SelectionProtocol protocol = SelectionProtocol::TestSet;
    std::filesystem::path output_dir = "headprobe_out";
    std::uint64_t seed = 0;
    bool compute_missing_grids = true;
    std::size_t top_k = 8;
    // Execution only; never affects results and is not recorded.
    int workers = 1;

    // Throws Error(Config) if inputs are missing or parameters are invalid.
    void validate() const;
    FitParams fit_params() const;
};

// Relative paths in the file are resolved against the file's directory.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

// Everything that determines results; excludes output_dir and workers.
nlohmann::ordered_json effective_config_json(const RunConfig& config);
std::string config_hash(const RunConfig& config);

}  // namespace headprobe
