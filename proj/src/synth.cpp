#include "headprobe/synth.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "headprobe/error.hpp"
#include "headprobe/report.hpp"

namespace headprobe {

std::vector<TraitRange> SynthSpec::effective_ranges() const {
    if (!ranges.empty()) return ranges;
    std::vector<TraitRange> out;
    for (int p : prompts) {
        for (const auto& t : traits) out.push_back({p, t, 0, 4});
    }
    return out;
}

void SynthSpec::validate() const {
    auto bad = [](const std::string& what) { fail(ErrorKind::Config, "synth spec: " + what); };
    if (n_layers < 1 || n_heads < 1 || head_dim < 1) bad("geometry must be positive");
    if (prompts.empty()) bad("at least one prompt required");
    if (std::set<int>(prompts.begin(), prompts.end()).size() != prompts.size()) bad("duplicate prompt ids");
    if (essays_per_prompt < 1) bad("essays_per_prompt must be >= 1");
    if (traits.empty()) bad("at least one trait required");
    if (!(background_sigma >= 0)) bad("background_sigma must be >= 0");
    if (token_mode == TokenMode::All && (min_tokens < 1 || max_tokens < min_tokens)) bad("token counts need 1 <= min <= max");
    const auto all_ranges = effective_ranges();
    RangeTable table(all_ranges);
    for (int p : prompts) {
        bool any = false;
        for (const auto& t : traits) any = any || table.find(p, t) != nullptr;
        if (!any) bad("prompt " + std::to_string(p) + " has no score range");
    }
    for (const auto& r : all_ranges) {
        if (std::find(traits.begin(), traits.end(), r.trait) == traits.end()) bad("range for unknown trait '" + r.trait + "'");
    }
    for (const auto& pl : planted) {
        if (pl.coord.layer < 0 || pl.coord.layer >= n_layers || pl.coord.head < 0 || pl.coord.head >= n_heads) {
            bad("planted head out of bounds");
        }
        if (!(pl.sigma >= 0)) bad("planted sigma must be >= 0");
        if (std::find(traits.begin(), traits.end(), pl.trait) == traits.end()) bad("planted trait '" + pl.trait + "' unknown");
        if (pl.direction_mode != "shared" && pl.direction_mode != "orthogonal") bad("direction_mode must be shared or orthogonal");
        if (pl.direction_mode == "orthogonal" && static_cast<int>(prompts.size()) > head_dim) {
            bad("orthogonal directions need head_dim >= number of prompts");
        }
        if (!pl.direction.empty() && static_cast<int>(pl.direction.size()) != head_dim) bad("planted direction length != head_dim");
        for (const auto& [p, d] : pl.prompt_directions) {
            if (static_cast<int>(d.size()) != head_dim) bad("prompt direction length != head_dim");
        }
    }
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    try {
        SynthSpec s;
        s.n_layers = j.value("n_layers", s.n_layers);
        s.n_heads = j.value("n_heads", s.n_heads);
        s.head_dim = j.value("head_dim", s.head_dim);
        if (j.contains("prompts")) s.prompts = j.at("prompts").get<std::vector<int>>();
        s.essays_per_prompt = j.value("essays_per_prompt", s.essays_per_prompt);
        if (j.contains("traits")) s.traits = j.at("traits").get<std::vector<std::string>>();
        if (j.contains("ranges")) {
            for (const auto& r : j.at("ranges")) {
                s.ranges.push_back({r.at("prompt").get<int>(), r.at("trait").get<std::string>(), r.at("min").get<int>(),
                                    r.at("max").get<int>()});
            }
        } else if (j.contains("score_range")) {
            const auto range = j.at("score_range").get<std::vector<int>>();
            if (range.size() != 2) fail(ErrorKind::Config, "synth spec: score_range must be [min, max]");
            for (int p : s.prompts) {
                for (const auto& t : s.traits) s.ranges.push_back({p, t, range[0], range[1]});
            }
        }
        if (j.contains("planted")) {
            for (const auto& pj : j.at("planted")) {
                PlantedSignal pl;
                pl.coord = {pj.at("layer").get<int>(), pj.at("head").get<int>()};
                pl.trait = pj.value("trait", s.traits.front());
                pl.sigma = pj.value("sigma", 0.0);
                pl.direction_mode = pj.value("direction_mode", pl.direction_mode);
                if (pj.contains("direction")) pl.direction = pj.at("direction").get<std::vector<double>>();
                if (pj.contains("prompt_directions")) {
                    for (const auto& [k, v] : pj.at("prompt_directions").items()) {
                        pl.prompt_directions[std::stoi(k)] = v.get<std::vector<double>>();
                    }
                }
                s.planted.push_back(std::move(pl));
            }
        }
        s.background_sigma = j.value("background_sigma", s.background_sigma);
        if (j.contains("token_mode")) s.token_mode = token_mode_from_string(j.at("token_mode").get<std::string>());
        s.min_tokens = j.value("min_tokens", s.min_tokens);
        s.max_tokens = j.value("max_tokens", s.max_tokens);
        s.model_name = j.value("model_name", s.model_name);
        s.seed = j.value("seed", s.seed);
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, std::string("synth spec: ") + e.what());
    }
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Config, "cannot open synth spec '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, "synth spec '" + path.string() + "': " + e.what());
    }
    return synth_spec_from_json(j);
}

namespace {

Eigen::VectorXd random_unit(std::mt19937_64& rng, int dim) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd v(dim);
    do {
        for (auto& x : v) x = n(rng);
    } while (v.norm() < 1e-8);
    return v.normalized();
}

Eigen::VectorXd unit_from(const std::vector<double>& d) {
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
    if (v.norm() < 1e-12) fail(ErrorKind::Config, "synth spec: zero planted direction");
    return v.normalized();
}

std::string essay_id(int prompt, int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "p%d_e%04d", prompt, index);
    return buf;
}

}  // namespace

SynthOutputs cmd_synth(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    std::filesystem::create_directories(out_dir);
    std::mt19937_64 rng(spec.seed);
    const RangeTable ranges(spec.effective_ranges());

    SynthOutputs out;
    // Planted directions, generated first so they do not depend on corpus size.
    for (std::size_t k = 0; k < spec.planted.size(); ++k) {
        const auto& pl = spec.planted[k];
        if (pl.direction_mode == "orthogonal") {
            std::vector<Eigen::VectorXd> basis;
            for (int p : spec.prompts) {
                Eigen::VectorXd v;
                do {
                    v = random_unit(rng, spec.head_dim);
                    for (const auto& b : basis) v -= v.dot(b) * b;
                } while (v.norm() < 1e-6);
                v.normalize();
                basis.push_back(v);
                out.directions[{k, p}] = v;
            }
        } else {
            const Eigen::VectorXd shared = pl.direction.empty() ? random_unit(rng, spec.head_dim) : unit_from(pl.direction);
            for (int p : spec.prompts) out.directions[{k, p}] = shared;
        }
        for (const auto& [p, d] : pl.prompt_directions) out.directions[{k, p}] = unit_from(d);
    }

    // Essays and integer scores.
    std::vector<EssayRecord> records;
    std::vector<std::uint64_t> token_counts;
    std::uniform_int_distribution<int> token_dist(spec.min_tokens, spec.max_tokens);
    for (int p : spec.prompts) {
        for (int i = 0; i < spec.essays_per_prompt; ++i) {
            EssayRecord rec;
            rec.essay_id = essay_id(p, i);
            rec.prompt_id = p;
            rec.essay_text = "synthetic essay " + std::to_string(i) + " for prompt " + std::to_string(p);
            for (const auto& t : spec.traits) {
                if (const auto* r = ranges.find(p, t)) {
                    rec.scores[t] = std::uniform_int_distribution<int>(r->min_score, r->max_score)(rng);
                }
            }
            if (spec.token_mode == TokenMode::All) token_counts.push_back(static_cast<std::uint64_t>(token_dist(rng)));
            records.push_back(std::move(rec));
        }
    }

    DumpHeader last;
    last.model_name = spec.model_name;
    last.capture_point = "synthetic: normalized_score * planted direction + gaussian noise";
    last.n_layers = static_cast<std::uint32_t>(spec.n_layers);
    last.n_heads = static_cast<std::uint32_t>(spec.n_heads);
    last.head_dim = static_cast<std::uint32_t>(spec.head_dim);
    last.n_examples = records.size();
    last.token_mode = TokenMode::Last;
    for (const auto& r : records) last.example_ids.push_back(r.essay_id);
    last.attributes["generator"] = "headprobe synth";
    last.attributes["seed"] = std::to_string(spec.seed);

    out.dump = out_dir / "dump.actv";
    DumpWriter last_writer(out.dump, last);
    std::optional<DumpWriter> all_writer;
    if (spec.token_mode == TokenMode::All) {
        DumpHeader all = last;
        all.token_mode = TokenMode::All;
        all.token_counts = token_counts;
        out.token_dump = out_dir / "tokens.actv";
        all_writer.emplace(out.token_dump, all);
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<float> cell(static_cast<std::size_t>(spec.head_dim));
    for (int l = 0; l < spec.n_layers; ++l) {
        for (int h = 0; h < spec.n_heads; ++h) {
            const HeadCoord coord{l, h};
            std::vector<std::size_t> here;
            double sigma = spec.background_sigma;
            bool planted = false;
            for (std::size_t k = 0; k < spec.planted.size(); ++k) {
                if (spec.planted[k].coord != coord) continue;
                sigma = planted ? std::max(sigma, spec.planted[k].sigma) : spec.planted[k].sigma;
                planted = true;
                here.push_back(k);
            }
            for (std::size_t e = 0; e < records.size(); ++e) {
                const auto& rec = records[e];
                Eigen::VectorXd signal = Eigen::VectorXd::Zero(spec.head_dim);
                for (auto k : here) {
                    const auto& pl = spec.planted[k];
                    auto it = rec.scores.find(pl.trait);
                    if (it == rec.scores.end()) continue;
                    signal += normalize_score(it->second, ranges.at(rec.prompt_id, pl.trait)) *
                              out.directions.at({k, rec.prompt_id});
                }
                const auto n_tokens = spec.token_mode == TokenMode::All ? token_counts[e] : 1;
                for (std::uint64_t t = 0; t < n_tokens; ++t) {
                    for (int d = 0; d < spec.head_dim; ++d) {
                        cell[static_cast<std::size_t>(d)] = static_cast<float>(signal(d) + sigma * normal(rng));
                    }
                    if (all_writer) all_writer->write(e, t, coord, cell);
                    if (t + 1 == n_tokens) last_writer.write(e, 0, coord, cell);
                }
            }
        }
    }
    last_writer.finish();
    if (all_writer) all_writer->finish();

    // Essay table.
    std::ostringstream tsv;
    tsv << "essay_id\tessay_set\tessay";
    for (const auto& t : spec.traits) tsv << '\t' << t;
    tsv << '\n';
    for (const auto& r : records) {
        tsv << r.essay_id << '\t' << r.prompt_id << '\t' << r.essay_text;
        for (const auto& t : spec.traits) {
            tsv << '\t';
            if (auto it = r.scores.find(t); it != r.scores.end()) tsv << it->second;
        }
        tsv << '\n';
    }
    out.table = out_dir / "essays.tsv";
    write_text_file(out.table, tsv.str());

    nlohmann::ordered_json meta;
    meta["prompts"] = spec.prompts;
    meta["traits"] = spec.traits;
    meta["excluded_traits"] = nlohmann::json::array();
    nlohmann::ordered_json cols;
    cols["id"] = "essay_id";
    cols["prompt"] = "essay_set";
    cols["text"] = "essay";
    nlohmann::ordered_json trait_cols;
    for (const auto& t : spec.traits) trait_cols[t] = t;
    cols["traits"] = trait_cols;
    meta["columns"] = cols;
    nlohmann::ordered_json rj = nlohmann::ordered_json::array();
    for (const auto& [key, r] : ranges.all()) {
        rj.push_back({{"prompt", r.prompt_id}, {"trait", r.trait}, {"min", r.min_score}, {"max", r.max_score}});
    }
    meta["ranges"] = rj;
    out.metadata = out_dir / "metadata.json";
    write_text_file(out.metadata, meta.dump(2) + "\n");

    if (spec.token_mode == TokenMode::All) {
        nlohmann::ordered_json toks;
        for (std::size_t e = 0; e < records.size(); ++e) {
            std::vector<std::string> words;
            for (std::uint64_t t = 0; t < token_counts[e]; ++t) words.push_back("tok" + std::to_string(t));
            toks[records[e].essay_id] = words;
        }
        out.tokens = out_dir / "tokens.json";
        write_text_file(out.tokens, toks.dump(2) + "\n");
    }

    nlohmann::ordered_json rc;
    rc["dump"] = "dump.actv";
    rc["dataset"] = "essays.tsv";
    rc["metadata"] = "metadata.json";
    if (spec.token_mode == TokenMode::All) {
        rc["token_dump"] = "tokens.actv";
        rc["tokens"] = "tokens.json";
    }
    rc["seed"] = spec.seed;
    out.run_config = out_dir / "run_config.json";
    write_text_file(out.run_config, rc.dump(2) + "\n");
    return out;
}

}  // namespace headprobe
