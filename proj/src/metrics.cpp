#include "headprobe/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "headprobe/error.hpp"
#include "headprobe/hashing.hpp"

namespace headprobe {

HeadGrid::HeadGrid(std::string trait_, int test_prompt_, int n_layers_, int n_heads_, ProbeKind kind)
    : trait(std::move(trait_)),
      test_prompt(test_prompt_),
      n_layers(n_layers_),
      n_heads(n_heads_),
      probe_kind(kind),
      qwk(static_cast<std::size_t>(n_layers_) * static_cast<std::size_t>(n_heads_), 0.0) {}

double qwk(std::span<const int> human, std::span<const int> predicted, const TraitRange& range) {
    if (human.size() != predicted.size()) {
        fail(ErrorKind::Contract, "qwk: rating vectors differ in length (" + std::to_string(human.size()) + " vs " +
                                      std::to_string(predicted.size()) + ")");
    }
    if (human.empty()) fail(ErrorKind::Contract, "qwk: empty rating vectors");
    const int r = range.max_score - range.min_score + 1;
    if (r < 2) fail(ErrorKind::Contract, "qwk: degenerate score range with a single value");

    std::vector<double> observed(static_cast<std::size_t>(r * r), 0.0);
    std::vector<double> hist_h(static_cast<std::size_t>(r), 0.0), hist_p(static_cast<std::size_t>(r), 0.0);
    for (std::size_t k = 0; k < human.size(); ++k) {
        if (!range.contains(human[k]) || !range.contains(predicted[k])) {
            fail(ErrorKind::Range, "qwk: rating at position " + std::to_string(k) + " outside [" +
                                       std::to_string(range.min_score) + ", " + std::to_string(range.max_score) + "]");
        }
        const int i = human[k] - range.min_score;
        const int j = predicted[k] - range.min_score;
        observed[static_cast<std::size_t>(i * r + j)] += 1.0;
        hist_h[static_cast<std::size_t>(i)] += 1.0;
        hist_p[static_cast<std::size_t>(j)] += 1.0;
    }

    const double n = static_cast<double>(human.size());
    const double norm = static_cast<double>(r - 1) * static_cast<double>(r - 1);
    double num = 0.0, den = 0.0;
    bool off_diagonal = false;
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < r; ++j) {
            const double w = static_cast<double>((i - j) * (i - j)) / norm;
            const double o = observed[static_cast<std::size_t>(i * r + j)];
            num += w * o;
            den += w * hist_h[static_cast<std::size_t>(i)] * hist_p[static_cast<std::size_t>(j)] / n;
            if (i != j && o > 0) off_diagonal = true;
        }
    }
    if (den == 0.0) {
        // Both raters used one identical score throughout.
        if (!off_diagonal) return 1.0;
        fail(ErrorKind::Numerical, "qwk: zero expected disagreement with off-diagonal observations");
    }
    return 1.0 - num / den;
}

namespace {

bool better(double a, HeadCoord ca, double b, HeadCoord cb) {
    if (a != b) return a > b;
    return ca < cb;
}

}  // namespace

BestHead best_head(const HeadGrid& grid) {
    if (grid.qwk.empty()) fail(ErrorKind::Contract, "best_head: empty grid");
    BestHead best{{0, 0}, grid.qwk[0]};
    for (std::size_t i = 1; i < grid.qwk.size(); ++i) {
        const auto c = grid.coord_of(i);
        if (better(grid.qwk[i], c, best.qwk, best.coord)) best = {c, grid.qwk[i]};
    }
    return best;
}

std::vector<BestHead> top_heads(const HeadGrid& grid, std::size_t k) {
    std::vector<BestHead> all;
    all.reserve(grid.qwk.size());
    for (std::size_t i = 0; i < grid.qwk.size(); ++i) all.push_back({grid.coord_of(i), grid.qwk[i]});
    std::stable_sort(all.begin(), all.end(),
                     [](const BestHead& a, const BestHead& b) { return better(a.qwk, a.coord, b.qwk, b.coord); });
    all.resize(std::min(k, all.size()));
    return all;
}

BestHead best_average_head(std::span<const HeadGrid* const> grids) {
    if (grids.empty()) fail(ErrorKind::Contract, "best_average_head: no grids");
    HeadGrid mean = *grids[0];
    for (std::size_t g = 1; g < grids.size(); ++g) {
        if (grids[g]->n_layers != mean.n_layers || grids[g]->n_heads != mean.n_heads) {
            fail(ErrorKind::Contract, "best_average_head: grids differ in geometry");
        }
        for (std::size_t i = 0; i < mean.qwk.size(); ++i) mean.qwk[i] += grids[g]->qwk[i];
    }
    for (auto& v : mean.qwk) v /= static_cast<double>(grids.size());
    return best_head(mean);
}

HeadEvaluation evaluate_head(const Eigen::MatrixXd& train_x, const Eigen::VectorXd& train_y,
                             const Eigen::MatrixXd& test_x, std::span<const int> test_labels,
                             const TraitRange& range, const FitParams& params) {
    if (test_x.rows() != static_cast<Eigen::Index>(test_labels.size())) {
        fail(ErrorKind::Contract, "evaluate_head: test rows and labels differ in count");
    }
    if (train_y.size() > 0 && (train_y.minCoeff() < 0.0 || train_y.maxCoeff() > 1.0)) {
        fail(ErrorKind::Contract, "evaluate_head: training labels must be normalized to [0, 1]");
    }
    HeadEvaluation ev{fit_probe(train_x, train_y, params), 0.0, {}};
    const Eigen::VectorXd yhat = predict(ev.probe, test_x);
    ev.predicted.reserve(static_cast<std::size_t>(yhat.size()));
    for (Eigen::Index i = 0; i < yhat.size(); ++i) ev.predicted.push_back(denormalize_and_round(yhat(i), range));
    ev.qwk = qwk(test_labels, ev.predicted, range);
    return ev;
}

PreparedSplit prepare_split(const DumpReader& dump, const Dataset& data, const std::set<int>& train_prompts,
                            int eval_prompt, const std::string& trait) {
    if (train_prompts.count(eval_prompt)) {
        fail(ErrorKind::Contract, "prompt " + std::to_string(eval_prompt) + " is both training and evaluation data");
    }
    PreparedSplit s;
    s.trait = trait;
    s.eval_prompt = eval_prompt;
    s.train_prompts = train_prompts;
    s.test_range = data.ranges.at(eval_prompt, trait);
    s.train_records = data.select(train_prompts, trait);
    s.test_records = data.select({eval_prompt}, trait);
    if (s.train_records.empty()) {
        fail(ErrorKind::Validation, "no training essays scored for trait '" + trait + "' (test prompt " +
                                        std::to_string(eval_prompt) + ")");
    }
    if (s.test_records.empty()) {
        fail(ErrorKind::Validation, "no test essays scored for trait '" + trait + "' in prompt " +
                                        std::to_string(eval_prompt));
    }

    std::vector<std::string> missing;
    auto lookup = [&](std::size_t rec) -> std::size_t {
        const auto& id = data.records[rec].essay_id;
        auto idx = dump.find_example(id);
        if (!idx) {
            missing.push_back(id);
            return 0;
        }
        return *idx;
    };
    s.train_y.resize(static_cast<Eigen::Index>(s.train_records.size()));
    for (std::size_t k = 0; k < s.train_records.size(); ++k) {
        const auto& rec = data.records[s.train_records[k]];
        if (rec.prompt_id == eval_prompt) {
            fail(ErrorKind::Contract, "essay '" + rec.essay_id + "' of the evaluation prompt reached a training matrix");
        }
        s.train_rows.push_back(lookup(s.train_records[k]));
        s.train_y(static_cast<Eigen::Index>(k)) = normalize_score(rec.scores.at(trait), data.ranges.at(rec.prompt_id, trait));
    }
    for (auto rec : s.test_records) {
        s.test_rows.push_back(lookup(rec));
        s.test_labels.push_back(data.records[rec].scores.at(trait));
    }
    if (!missing.empty()) {
        std::string msg = std::to_string(missing.size()) + " essay(s) missing from dump:";
        for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
        if (missing.size() > 20) msg += " ...";
        fail(ErrorKind::NotFound, msg);
    }
    return s;
}

std::uint64_t head_seed(std::uint64_t base, const std::string& trait, int eval_prompt, HeadCoord coord) {
    auto s = mix_seed(base, fnv1a64(trait));
    s = mix_seed(s, static_cast<std::uint64_t>(eval_prompt));
    s = mix_seed(s, static_cast<std::uint64_t>(coord.layer));
    return mix_seed(s, static_cast<std::uint64_t>(coord.head));
}

namespace {

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

}  // namespace

HeadGrid sweep_prepared(const DumpReader& dump, const PreparedSplit& split, const FitParams& params,
                        const SweepOptions& options) {
    const auto& h = dump.header();
    if (h.token_mode != TokenMode::Last) fail(ErrorKind::Config, "head sweeps need a LAST-mode dump");
    HeadGrid grid(split.trait, split.eval_prompt, static_cast<int>(h.n_layers), static_cast<int>(h.n_heads), params.kind);

    const std::size_t n_tasks = grid.qwk.size();
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::size_t err_index = n_tasks;
    std::exception_ptr err;

    auto worker = [&] {
        while (true) {
            const auto i = next.fetch_add(1);
            if (i >= n_tasks) return;
            try {
                const auto coord = grid.coord_of(i);
                const auto full = dump.load_head_matrix(coord);
                FitParams p = params;
                p.mlp.seed = head_seed(options.seed, split.trait, split.eval_prompt, coord);
                grid.qwk[i] = evaluate_head(gather_rows(full.values, split.train_rows), split.train_y,
                                            gather_rows(full.values, split.test_rows), split.test_labels,
                                            split.test_range, p)
                                  .qwk;
            } catch (...) {
                std::lock_guard lock(err_mu);
                // Report the failure of the first head in canonical order.
                if (i < err_index) {
                    err_index = i;
                    err = std::current_exception();
                }
            }
        }
    };

    const int n_workers = std::max(1, std::min<int>(options.workers, static_cast<int>(n_tasks)));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    }
    if (err) std::rethrow_exception(err);
    return grid;
}

HeadGrid sweep_heads(const DumpReader& dump, const Dataset& data, const SplitPlan& split, const std::string& trait,
                     const FitParams& params, const SweepOptions& options) {
    if (dump.header().token_mode != TokenMode::Last) fail(ErrorKind::Config, "head sweeps need a LAST-mode dump");
    auto prepared = prepare_split(dump, data, split.train_prompt_ids, split.test_prompt, trait);
    if (options.audit) options.audit(prepared);
    return sweep_prepared(dump, prepared, params, options);
}

}  // namespace headprobe
