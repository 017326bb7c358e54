#include "headprobe/run_config.hpp"

#include <cstdio>
#include <fstream>

#include "headprobe/error.hpp"
#include "headprobe/hashing.hpp"

namespace headprobe {

const char* to_string(SelectionProtocol protocol) {
    return protocol == SelectionProtocol::TestSet ? "test-set" : "held-out";
}

SelectionProtocol protocol_from_string(std::string_view text) {
    if (text == "test-set" || text == "TEST_SET") return SelectionProtocol::TestSet;
    if (text == "held-out" || text == "HELD_OUT") return SelectionProtocol::HeldOut;
    fail(ErrorKind::Config, "unknown selection protocol '" + std::string(text) + "' (expected test-set or held-out)");
}

void RunConfig::validate() const {
    auto need = [](const std::filesystem::path& p, const char* what) {
        if (p.empty()) fail(ErrorKind::Config, std::string(what) + " path not set");
        if (!std::filesystem::exists(p)) fail(ErrorKind::Config, std::string(what) + " '" + p.string() + "' does not exist");
    };
    need(dump_path, "dump");
    need(dataset_path, "dataset");
    need(metadata_path, "metadata");
    if (token_dump_path) need(*token_dump_path, "token dump");
    if (tokens_path) need(*tokens_path, "tokens file");
    if (!(ridge_lambda > 0)) fail(ErrorKind::Config, "ridge lambda must be > 0");
    if (probe_kind == ProbeKind::Mlp) mlp.validate();
    if (workers < 1) fail(ErrorKind::Config, "workers must be >= 1");
    if (top_k < 1) fail(ErrorKind::Config, "top_k must be >= 1");
}

FitParams RunConfig::fit_params() const {
    FitParams p;
    p.kind = probe_kind;
    p.ridge_lambda = ridge_lambda;
    p.add_bias = ridge_bias;
    p.mlp = mlp;
    return p;
}

RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    auto resolve = [&](const std::string& s) {
        std::filesystem::path p(s);
        return p.is_relative() ? base_dir / p : p;
    };
    try {
        RunConfig c;
        if (j.contains("dump")) c.dump_path = resolve(j.at("dump").get<std::string>());
        if (j.contains("dataset")) c.dataset_path = resolve(j.at("dataset").get<std::string>());
        if (j.contains("metadata")) c.metadata_path = resolve(j.at("metadata").get<std::string>());
        if (j.contains("token_dump")) c.token_dump_path = resolve(j.at("token_dump").get<std::string>());
        if (j.contains("tokens")) c.tokens_path = resolve(j.at("tokens").get<std::string>());
        if (j.contains("traits")) c.traits = j.at("traits").get<std::vector<std::string>>();
        if (j.contains("probe")) c.probe_kind = probe_kind_from_string(j.at("probe").get<std::string>());
        c.ridge_lambda = j.value("lambda", c.ridge_lambda);
        c.ridge_bias = j.value("ridge_bias", c.ridge_bias);
        if (j.contains("mlp")) {
            const auto& m = j.at("mlp");
            c.mlp.hidden = m.value("hidden", c.mlp.hidden);
            c.mlp.weight_decay = m.value("weight_decay", c.mlp.weight_decay);
            c.mlp.batch_size = m.value("batch_size", c.mlp.batch_size);
            c.mlp.learning_rate = m.value("learning_rate", c.mlp.learning_rate);
            c.mlp.max_epochs = m.value("max_epochs", c.mlp.max_epochs);
        }
        if (j.contains("exclude_train_prompts")) c.excluded_train_prompts = j.at("exclude_train_prompts").get<std::set<int>>();
        if (j.contains("protocol")) c.protocol = protocol_from_string(j.at("protocol").get<std::string>());
        if (j.contains("out")) c.output_dir = resolve(j.at("out").get<std::string>());
        c.seed = j.value("seed", c.seed);
        c.compute_missing_grids = j.value("compute_missing_grids", c.compute_missing_grids);
        c.top_k = j.value("top_k", c.top_k);
        c.workers = j.value("workers", c.workers);
        return c;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, std::string("run config: ") + e.what());
    }
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Config, "cannot open config '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, "config '" + path.string() + "': " + e.what());
    }
    return run_config_from_json(j, path.parent_path());
}

nlohmann::ordered_json effective_config_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["dump"] = c.dump_path.string();
    j["dataset"] = c.dataset_path.string();
    j["metadata"] = c.metadata_path.string();
    j["token_dump"] = c.token_dump_path ? nlohmann::ordered_json(c.token_dump_path->string()) : nullptr;
    j["tokens"] = c.tokens_path ? nlohmann::ordered_json(c.tokens_path->string()) : nullptr;
    j["traits"] = c.traits;
    j["probe"] = to_string(c.probe_kind);
    j["lambda"] = c.ridge_lambda;
    j["ridge_bias"] = c.ridge_bias;
    j["mlp"] = {{"hidden", c.mlp.hidden},
                {"weight_decay", c.mlp.weight_decay},
                {"batch_size", c.mlp.batch_size},
                {"learning_rate", c.mlp.learning_rate},
                {"max_epochs", c.mlp.max_epochs}};
    j["exclude_train_prompts"] = c.excluded_train_prompts;
    j["protocol"] = to_string(c.protocol);
    j["seed"] = c.seed;
    j["compute_missing_grids"] = c.compute_missing_grids;
    j["top_k"] = c.top_k;
    return j;
}

std::string config_hash(const RunConfig& config) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(effective_config_json(config).dump())));
    return buf;
}

}  // namespace headprobe
