#include "headprobe/driver.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "headprobe/error.hpp"

namespace headprobe {

using ojson = nlohmann::ordered_json;

std::string path_label(const std::string& label) {
    std::string out;
    for (char c : label) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
        out.push_back(ok ? c : '_');
    }
    return out.empty() ? "_" : out;
}

std::filesystem::path grid_stem(const std::filesystem::path& out_dir, const std::string& trait, int prompt) {
    return out_dir / "grids" / path_label(trait) / ("prompt_" + std::to_string(prompt));
}

std::string selection_rule(SelectionProtocol protocol) {
    if (protocol == SelectionProtocol::TestSet) {
        return "argmax of test-prompt QWK over all heads; ties to smallest (layer, head)";
    }
    return "argmax of validation-prompt QWK over all heads, probes trained without the validation prompt; "
           "ties to smallest (layer, head); QWK reported on the test prompt";
}

Provenance provenance_for(const RunConfig& config, const DumpHeader& header) {
    Provenance p;
    p.model_name = header.model_name;
    p.protocol = config.protocol == SelectionProtocol::TestSet ? kProtocolTestSet : kProtocolHeldOut;
    p.selection_rule = selection_rule(config.protocol);
    return p;
}

std::vector<std::string> run_traits(const RunConfig& config, const Dataset& data) {
    if (config.traits.empty()) return data.traits;
    for (const auto& t : config.traits) {
        if (std::find(data.traits.begin(), data.traits.end(), t) == data.traits.end()) {
            fail(ErrorKind::Config, "trait '" + t + "' is not a retained trait of the dataset");
        }
    }
    return config.traits;
}

namespace {

struct TrainingPlan {
    std::set<int> train_prompts;
    std::optional<int> validation_prompt;
};

// Training prompts for a (plan, trait) under the configured protocol, or
// nullopt when the pair cannot be evaluated.
std::optional<TrainingPlan> training_plan(const RunConfig& config, const Dataset& data, const SplitPlan& plan,
                                          const std::string& trait, std::string& why_not) {
    if (!data.ranges.find(plan.test_prompt, trait) || data.select({plan.test_prompt}, trait).empty()) {
        why_not = "no test essays";
        return std::nullopt;
    }
    TrainingPlan tp;
    for (int p : plan.train_prompt_ids) {
        if (!data.select({p}, trait).empty()) tp.train_prompts.insert(p);
    }
    if (tp.train_prompts.empty()) {
        why_not = "no training essays";
        return std::nullopt;
    }
    if (config.protocol == SelectionProtocol::HeldOut) {
        if (tp.train_prompts.size() < 2) {
            fail(ErrorKind::Config, "held-out selection for trait '" + trait + "', test prompt " +
                                        std::to_string(plan.test_prompt) + " needs at least two training prompts");
        }
        tp.validation_prompt = *tp.train_prompts.begin();
        tp.train_prompts.erase(tp.train_prompts.begin());
    }
    return tp;
}

std::string pair_label(const std::string& trait, int prompt) { return trait + "@prompt" + std::to_string(prompt); }

void ensure_last_mode(const DumpReader& dump) {
    if (dump.header().token_mode != TokenMode::Last) {
        fail(ErrorKind::Config, "'" + dump.path().string() + "' is an ALL-mode dump; sweeps need the LAST-mode dump");
    }
}

}  // namespace

SweepRun run_sweep(const RunConfig& config, const Dataset& data, const DumpReader& dump, const AuditHook& audit) {
    ensure_last_mode(dump);
    const auto params = config.fit_params();
    SweepOptions opts;
    opts.workers = config.workers;
    opts.seed = config.seed;

    SweepRun run;
    const auto plans = make_prompt_wise_splits(data.records, config.excluded_train_prompts);
    for (const auto& trait : run_traits(config, data)) {
        for (const auto& plan : plans) {
            std::string why;
            auto tp = training_plan(config, data, plan, trait, why);
            if (!tp) {
                run.skipped.push_back(pair_label(trait, plan.test_prompt) + ": " + why);
                continue;
            }
            SweepRecord rec;
            rec.trait = trait;
            rec.plan = plan;
            rec.train_prompts = tp->train_prompts;
            rec.validation_prompt = tp->validation_prompt;

            auto test_split = prepare_split(dump, data, tp->train_prompts, plan.test_prompt, trait);
            if (audit) audit(test_split);
            rec.test_grid = sweep_prepared(dump, test_split, params, opts);
            if (tp->validation_prompt) {
                auto val_split = prepare_split(dump, data, tp->train_prompts, *tp->validation_prompt, trait);
                if (audit) audit(val_split);
                rec.validation_grid = sweep_prepared(dump, val_split, params, opts);
                rec.validation_grid->test_prompt = *tp->validation_prompt;
                rec.selected = best_head(*rec.validation_grid);
            } else {
                rec.selected = best_head(rec.test_grid);
            }
            rec.reported_qwk = rec.test_grid.at(rec.selected.coord);
            run.records.push_back(std::move(rec));
        }
    }
    return run;
}

SweepRun cmd_sweep(const RunConfig& config, const AuditHook& audit) {
    config.validate();
    const auto data = load_dataset(config.dataset_path, config.metadata_path);
    const DumpReader dump(config.dump_path);
    auto run = run_sweep(config, data, dump, audit);

    const auto& out = config.output_dir;
    const auto prov = provenance_for(config, dump.header());
    std::ostringstream tsv;
    tsv << "trait\ttest_prompt\tlayer\thead\tqwk\tprotocol\tvalidation_prompt\tvalidation_qwk\n";
    ojson summary = ojson::array();

    for (const auto& rec : run.records) {
        const auto stem = grid_stem(out, rec.trait, rec.plan.test_prompt);
        emit_head_heatmap(rec.test_grid, stem, prov);
        if (rec.validation_grid) emit_head_heatmap(*rec.validation_grid, stem.string() + ".validation", prov);

        // PCA quick-look of the selected head over the test essays.
        const auto idx = data.select({rec.plan.test_prompt}, rec.trait);
        if (idx.size() >= 2) {
            std::vector<std::size_t> rows;
            std::vector<std::string> ids;
            std::vector<int> scores;
            for (auto i : idx) {
                rows.push_back(*dump.find_example(data.records[i].essay_id));
                ids.push_back(data.records[i].essay_id);
                scores.push_back(data.records[i].scores.at(rec.trait));
            }
            const auto m = dump.load_head_matrix(rec.selected.coord, rows);
            emit_pca_projection(pca_2d(m.values), ids, scores,
                                out / "pca" / path_label(rec.trait) / ("prompt_" + std::to_string(rec.plan.test_prompt) + ".csv"));
        }

        tsv << rec.trait << '\t' << rec.plan.test_prompt << '\t' << rec.selected.coord.layer << '\t'
            << rec.selected.coord.head << '\t' << format_number(rec.reported_qwk) << '\t' << prov.protocol << '\t';
        if (rec.validation_prompt) tsv << *rec.validation_prompt << '\t' << format_number(rec.selected.qwk);
        else tsv << "-\t-";
        tsv << '\n';

        ojson row;
        row["trait"] = rec.trait;
        row["test_prompt"] = rec.plan.test_prompt;
        row["best_head"] = {{"layer", rec.selected.coord.layer}, {"head", rec.selected.coord.head}};
        row["qwk"] = round_to_printed(rec.reported_qwk);
        row["train_prompts"] = rec.train_prompts;
        row["excluded_train_prompts"] = rec.plan.excluded_train_prompts;
        if (rec.validation_prompt) {
            row["validation_prompt"] = *rec.validation_prompt;
            row["validation_qwk"] = round_to_printed(rec.selected.qwk);
        }
        summary.push_back(std::move(row));
    }
    write_text_file(out / "summary.tsv", tsv.str());

    ojson sj;
    sj["artifact"] = "sweep-summary";
    sj["provenance"] = {{"tool_version", prov.tool_version},
                        {"model_name", prov.model_name},
                        {"protocol", prov.protocol},
                        {"selection_rule", prov.selection_rule}};
    sj["results"] = std::move(summary);
    write_text_file(out / "summary.json", sj.dump(2) + "\n");

    ojson manifest;
    manifest["command"] = "sweep";
    manifest["tool_version"] = kToolVersion;
    manifest["config"] = effective_config_json(config);
    manifest["config_hash"] = config_hash(config);
    manifest["seed"] = config.seed;
    manifest["mlp_seed_rule"] = "per head: splitmix64 mix of (seed, fnv1a64(trait), test prompt, layer, head)";
    manifest["dump"] = {{"model_name", dump.header().model_name},
                        {"capture_point", dump.header().capture_point},
                        {"n_layers", dump.header().n_layers},
                        {"n_heads", dump.header().n_heads},
                        {"head_dim", dump.header().head_dim},
                        {"n_examples", dump.header().n_examples}};
    manifest["dataset_merge"] = data.merge_path;
    manifest["label_mapping"] = "train on (raw - min) / (max - min); predictions clipped to [0, 1], "
                                "rescaled to raw range and rounded half up";
    manifest["metric"] = "quadratic weighted kappa on integer scores";
    manifest["protocol"] = prov.protocol;
    manifest["selection_rule"] = prov.selection_rule;
    ojson splits = ojson::array();
    for (const auto& rec : run.records) {
        ojson s;
        s["trait"] = rec.trait;
        s["test_prompt"] = rec.plan.test_prompt;
        s["train_prompts"] = rec.train_prompts;
        s["excluded_train_prompts"] = rec.plan.excluded_train_prompts;
        s["validation_prompt"] = rec.validation_prompt ? ojson(*rec.validation_prompt) : ojson(nullptr);
        splits.push_back(std::move(s));
    }
    manifest["splits"] = std::move(splits);
    manifest["skipped"] = run.skipped;
    write_text_file(out / "manifest.json", manifest.dump(2) + "\n");
    return run;
}

namespace {

std::string stamped_protocol(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    nlohmann::json j;
    try {
        in >> j;
        return j.at("provenance").at("protocol").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, "'" + json_path.string() + "': " + e.what());
    }
}

class GridSource {
public:
    GridSource(const RunConfig& config, const Dataset& data, const DumpReader& dump)
        : config_(config), data_(data), dump_(dump), plans_(make_prompt_wise_splits(data.records, config.excluded_train_prompts)) {}

    // Test-prompt grid for (trait, prompt); nullopt if the pair has no usable essays.
    std::optional<HeadGrid> get(const std::string& trait, int prompt) {
        const auto stem = grid_stem(config_.output_dir, trait, prompt);
        const auto json_path = std::filesystem::path(stem.string() + ".json");
        if (std::filesystem::exists(json_path)) {
            auto g = read_head_heatmap(json_path);
            const auto expected = provenance_for(config_, dump_.header()).protocol;
            if (stamped_protocol(json_path) != expected) {
                fail(ErrorKind::Config, "'" + json_path.string() + "' was produced under another selection protocol; "
                                        "rerun the sweep with protocol " + to_string(config_.protocol) +
                                        " or use a different output directory");
            }
            if (g.trait != trait || g.test_prompt != prompt) {
                fail(ErrorKind::Validation, "'" + json_path.string() + "' does not hold the grid for trait '" + trait +
                                                "', prompt " + std::to_string(prompt));
            }
            return g;
        }
        const auto& plan = plan_for(prompt);
        std::string why;
        auto tp = training_plan(config_, data_, plan, trait, why);
        if (!tp) return std::nullopt;
        if (!config_.compute_missing_grids) {
            fail(ErrorKind::Config, "missing head grid '" + json_path.string() +
                                        "'; run `headprobe sweep` with the same config first or enable compute_missing_grids");
        }
        SweepOptions opts;
        opts.workers = config_.workers;
        opts.seed = config_.seed;
        auto split = prepare_split(dump_, data_, tp->train_prompts, prompt, trait);
        return sweep_prepared(dump_, split, config_.fit_params(), opts);
    }

    const SplitPlan& plan_for(int prompt) const {
        for (const auto& p : plans_) {
            if (p.test_prompt == prompt) return p;
        }
        fail(ErrorKind::NotFound, "prompt " + std::to_string(prompt) + " has no essays");
    }

private:
    const RunConfig& config_;
    const Dataset& data_;
    const DumpReader& dump_;
    std::vector<SplitPlan> plans_;
};

std::set<int> dataset_prompts(const Dataset& data) {
    std::set<int> out;
    for (const auto& r : data.records) out.insert(r.prompt_id);
    return out;
}

}  // namespace

std::vector<SimilarityMatrix> cmd_directions(const RunConfig& config) {
    config.validate();
    const auto data = load_dataset(config.dataset_path, config.metadata_path);
    const DumpReader dump(config.dump_path);
    ensure_last_mode(dump);
    const auto traits = run_traits(config, data);
    GridSource grids(config, data, dump);
    auto prov = provenance_for(config, dump.header());
    prov.selection_rule = "head maximising the mean test-prompt QWK across the compared grids; "
                          "ties to smallest (layer, head)";
    const auto dir = config.output_dir / "directions";

    std::map<std::pair<std::string, int>, HeadGrid> cache;
    for (const auto& t : traits) {
        for (int p : dataset_prompts(data)) {
            if (auto g = grids.get(t, p)) cache.emplace(std::make_pair(t, p), std::move(*g));
        }
    }

    std::vector<SimilarityMatrix> out;
    ojson index = ojson::array();
    for (int p : dataset_prompts(data)) {
        std::map<std::string, HeadGrid> by_trait;
        for (const auto& t : traits) {
            if (auto it = cache.find({t, p}); it != cache.end()) by_trait.emplace(t, it->second);
        }
        if (by_trait.empty()) continue;
        Dataset restricted = data;
        restricted.traits.clear();
        for (const auto& [t, g] : by_trait) restricted.traits.push_back(t);
        auto m = trait_direction_analysis(dump, restricted, p, by_trait);
        const auto file = "prompt_" + std::to_string(p) + "_traits.json";
        emit_similarity_report(m, dir / file, prov);
        index.push_back({{"analysis", m.analysis}, {"subject", m.subject}, {"file", file}});
        out.push_back(std::move(m));
    }
    for (const auto& t : traits) {
        std::map<int, HeadGrid> by_prompt;
        for (int p : data.ranges.prompts_with(t)) {
            if (auto it = cache.find({t, p}); it != cache.end()) by_prompt.emplace(p, it->second);
        }
        if (by_prompt.empty()) continue;
        Dataset restricted = data;
        std::vector<TraitRange> kept;
        for (const auto& [key, r] : data.ranges.all()) {
            if (key.second != t || by_prompt.count(key.first)) kept.push_back(r);
        }
        restricted.ranges = RangeTable(kept);
        auto m = prompt_direction_analysis(dump, restricted, t, by_prompt);
        const auto file = "trait_" + path_label(t) + "_prompts.json";
        emit_similarity_report(m, dir / file, prov);
        index.push_back({{"analysis", m.analysis}, {"subject", m.subject}, {"file", file}});
        out.push_back(std::move(m));
    }

    ojson manifest;
    manifest["command"] = "directions";
    manifest["tool_version"] = kToolVersion;
    manifest["config"] = effective_config_json(config);
    manifest["config_hash"] = config_hash(config);
    manifest["direction_rule"] = "unit sum over score pairs i < j of mean(score j) - mean(score i); empty scores skipped";
    manifest["essay_subset"] = "essays of the prompt the direction belongs to";
    manifest["reports"] = std::move(index);
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
    return out;
}

std::vector<TokenScoreReport> cmd_token_report(const RunConfig& config, const std::string& essay_id,
                                               const std::string& trait, std::size_t top_k) {
    config.validate();
    if (!config.token_dump_path) {
        fail(ErrorKind::Config, "token-report needs an ALL-mode dump: set \"token_dump\" in the config");
    }
    const auto data = load_dataset(config.dataset_path, config.metadata_path);
    const DumpReader dump(config.dump_path);
    ensure_last_mode(dump);
    const DumpReader series_dump(*config.token_dump_path);
    if (series_dump.header().token_mode != TokenMode::All) {
        fail(ErrorKind::Config, "'" + config.token_dump_path->string() +
                                    "' is a LAST-mode dump; token reports need a dump captured with all tokens");
    }
    const auto& a = dump.header();
    const auto& b = series_dump.header();
    if (a.n_layers != b.n_layers || a.n_heads != b.n_heads || a.head_dim != b.head_dim) {
        fail(ErrorKind::Validation, "token dump geometry differs from the sweep dump");
    }

    const EssayRecord* essay = nullptr;
    for (const auto& r : data.records) {
        if (r.essay_id == essay_id) essay = &r;
    }
    if (!essay) fail(ErrorKind::NotFound, "essay '" + essay_id + "' not in the dataset");
    if (!essay->scores.count(trait)) fail(ErrorKind::NotFound, "essay '" + essay_id + "' has no '" + trait + "' score");

    GridSource grids(config, data, dump);
    const auto& plan = grids.plan_for(essay->prompt_id);
    std::string why;
    auto tp = training_plan(config, data, plan, trait, why);
    if (!tp) fail(ErrorKind::Validation, "cannot train probes for trait '" + trait + "': " + why);
    auto grid = grids.get(trait, essay->prompt_id);
    const auto split = prepare_split(dump, data, tp->train_prompts, essay->prompt_id, trait);

    std::vector<std::string> tokens;
    const auto series_example = series_dump.find_example(essay_id);
    if (!series_example) fail(ErrorKind::NotFound, "essay '" + essay_id + "' not in the token dump");
    const auto series_rows = series_dump.header().rows_of(*series_example);
    if (config.tokens_path) {
        std::ifstream in(*config.tokens_path);
        nlohmann::json j;
        try {
            in >> j;
            if (j.contains(essay_id)) tokens = j.at(essay_id).get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Format, "tokens file: " + std::string(e.what()));
        }
    }
    if (tokens.empty()) {
        for (std::uint64_t t = 0; t < series_rows; ++t) tokens.push_back("#" + std::to_string(t));
    }

    auto params = config.fit_params();
    const auto prov = provenance_for(config, dump.header());
    std::vector<TokenScoreReport> reports;
    const auto heads = top_heads(*grid, top_k);
    for (std::size_t rank = 0; rank < heads.size(); ++rank) {
        const auto& h = heads[rank];
        const auto train = dump.load_head_matrix(h.coord, split.train_rows);
        params.mlp.seed = head_seed(config.seed, trait, essay->prompt_id, h.coord);
        const auto probe = fit_probe(train.values, split.train_y, params);
        const auto series = series_dump.load_token_series(essay_id, h.coord);
        TokenReportInfo info{essay_id, h.coord, trait, essay->prompt_id, static_cast<int>(rank), h.qwk};
        auto report = emit_token_scores(probe, series, tokens, info);
        const auto file = config.output_dir / "token_reports" / path_label(essay_id) / path_label(trait) /
                          ("rank" + std::to_string(rank) + "_L" + std::to_string(h.coord.layer) + "_H" +
                           std::to_string(h.coord.head) + ".json");
        write_token_report(report, file, prov);
        reports.push_back(std::move(report));
    }
    return reports;
}

std::string cmd_inspect(const std::filesystem::path& dump_path) {
    const DumpReader dump(dump_path);
    std::ostringstream os;
    os << header_to_json(dump.header());
    os << "file_bytes: " << std::filesystem::file_size(dump_path) << "\n";
    os << "data_offset: " << dump.data_offset() << "\n";
    os << "head_matrices: " << dump.header().n_heads_total() << "\n";
    os << "rows_per_head: " << dump.header().total_rows() << "\n";
    return os.str();
}

}  // namespace headprobe
