#include <cstdio>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "headprobe/driver.hpp"
#include "headprobe/error.hpp"
#include "headprobe/synth.hpp"

using namespace headprobe;

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::vector<int> exclude;
    std::optional<std::string> probe;
    std::optional<double> lambda;
    std::optional<std::string> protocol;
    std::optional<std::string> out;
    std::optional<int> workers;
};

void add_run_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "Run config (JSON)")->required();
    cmd->add_option("--seed", o.seed, "Base seed");
    cmd->add_option("--exclude-train-prompt", o.exclude, "Drop a prompt from every training set (repeatable)");
    cmd->add_option("--probe", o.probe, "Probe family")->check(CLI::IsMember({"ridge", "mlp"}));
    cmd->add_option("--lambda", o.lambda, "Ridge regularization strength");
    cmd->add_option("--protocol", o.protocol, "Best-head selection protocol")->check(CLI::IsMember({"test-set", "held-out"}));
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--workers", o.workers, "Worker threads for the head sweep");
}

RunConfig effective_config(const Overrides& o) {
    auto c = load_run_config(o.config);
    if (o.seed) c.seed = *o.seed;
    for (int p : o.exclude) c.excluded_train_prompts.insert(p);
    if (o.probe) c.probe_kind = probe_kind_from_string(*o.probe);
    if (o.lambda) c.ridge_lambda = *o.lambda;
    if (o.protocol) c.protocol = protocol_from_string(*o.protocol);
    if (o.out) c.output_dir = *o.out;
    if (o.workers) c.workers = *o.workers;
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Per-attention-head probing of essay-scoring activations"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.require_subcommand(1);

    std::string synth_spec, synth_out;
    std::optional<std::uint64_t> synth_seed;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dump and dataset with planted heads");
    synth->add_option("--config", synth_spec, "Synthetic spec (JSON)")->required();
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--seed", synth_seed, "Override the spec seed");

    Overrides sweep_o, dir_o, tok_o;
    auto* sweep = app.add_subcommand("sweep", "Probe every head for every prompt-wise split and trait");
    add_run_flags(sweep, sweep_o);

    auto* dirs = app.add_subcommand("directions", "Trait and prompt direction similarity reports");
    add_run_flags(dirs, dir_o);

    std::string essay, trait;
    std::optional<std::size_t> top_k;
    auto* tok = app.add_subcommand("token-report", "Per-token scores for one essay from the top heads");
    add_run_flags(tok, tok_o);
    tok->add_option("--essay", essay, "Essay id")->required();
    tok->add_option("--trait", trait, "Trait")->required();
    tok->add_option("--top-k", top_k, "Number of heads (default from config, 8)");

    std::string inspect_path;
    auto* inspect = app.add_subcommand("inspect", "Print a dump header");
    inspect->add_option("dump", inspect_path, "Dump file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) {
            auto spec = load_synth_spec(synth_spec);
            if (synth_seed) spec.seed = *synth_seed;
            const auto out = cmd_synth(spec, synth_out);
            std::cout << "wrote " << out.dump.string() << "\n";
        } else if (sweep->parsed()) {
            const auto run = cmd_sweep(effective_config(sweep_o));
            for (const auto& r : run.records) {
                std::cout << r.trait << " prompt " << r.plan.test_prompt << ": head (" << r.selected.coord.layer
                          << ", " << r.selected.coord.head << ") qwk " << format_number(r.reported_qwk) << "\n";
            }
            for (const auto& s : run.skipped) std::cout << "skipped " << s << "\n";
        } else if (dirs->parsed()) {
            for (const auto& m : cmd_directions(effective_config(dir_o))) {
                std::cout << m.analysis << " " << m.subject << ": mean off-diagonal "
                          << (m.mean_offdiag ? format_number(*m.mean_offdiag) : std::string("n/a")) << "\n";
                for (const auto& w : m.warnings) std::cout << "  warning: " << w << "\n";
            }
        } else if (tok->parsed()) {
            const auto config = effective_config(tok_o);
            const auto reports = cmd_token_report(config, essay, trait, top_k.value_or(config.top_k));
            std::cout << "wrote " << reports.size() << " token reports\n";
        } else if (inspect->parsed()) {
            std::cout << cmd_inspect(inspect_path);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error [%s]: %s\n", to_string(e.kind()), e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error [io]: %s\n", e.what());
        return 3;
    }
    return 0;
}
