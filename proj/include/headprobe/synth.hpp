#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "headprobe/activation_store.hpp"
#include "headprobe/dataset.hpp"

namespace headprobe {

// A head whose activations carry `trait` linearly:
//   activation = normalized_score * w + N(0, sigma^2 I)
struct PlantedSignal {
    HeadCoord coord;
    std::string trait;
    double sigma = 0.0;
    // "shared": one direction for every prompt; "orthogonal": mutually
    // orthogonal directions per prompt.
    std::string direction_mode = "shared";
    // Explicit direction (normalized before use); random unit vector if empty.
    std::vector<double> direction;
    // Explicit per-prompt overrides.
    std::map<int, std::vector<double>> prompt_directions;
};

struct SynthSpec {
    int n_layers = 4;
    int n_heads = 4;
    int head_dim = 16;
    std::vector<int> prompts = {1, 2};
    int essays_per_prompt = 300;
    std::vector<std::string> traits = {"holistic"};
    // Per-(prompt, trait) ranges; (prompt, trait) pairs without one are
    // unscored. Empty means [0, 4] everywhere.
    std::vector<TraitRange> ranges;
    std::vector<PlantedSignal> planted;
    double background_sigma = 1.0;
    TokenMode token_mode = TokenMode::Last;
    int min_tokens = 3;
    int max_tokens = 6;
    std::string model_name = "synthetic";
    std::uint64_t seed = 0;

    void validate() const;
    std::vector<TraitRange> effective_ranges() const;
    int n_examples() const { return static_cast<int>(prompts.size()) * essays_per_prompt; }
};

// Accepts "score_range": [min, max] as shorthand for every (prompt, trait).
SynthSpec synth_spec_from_json(const nlohmann::json& j);
SynthSpec load_synth_spec(const std::filesystem::path& path);

struct SynthOutputs {
    std::filesystem::path dump;
    std::filesystem::path table;
    std::filesystem::path metadata;
    std::filesystem::path run_config;
    std::filesystem::path token_dump;  // ALL mode only
    std::filesystem::path tokens;      // ALL mode only
    // Unit directions actually planted, keyed by (planted index, prompt).
    std::map<std::pair<std::size_t, int>, Eigen::VectorXd> directions;
};

// Writes dump.actv (+ sidecar), essays.tsv, metadata.json, run_config.json
// and, in ALL mode, tokens.actv and tokens.json into out_dir. In ALL mode
// dump.actv holds each essay's final token row.
SynthOutputs cmd_synth(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace headprobe
