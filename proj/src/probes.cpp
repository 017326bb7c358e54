#include "headprobe/probes.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "headprobe/error.hpp"

namespace headprobe {

namespace {

void require_finite(const Eigen::MatrixXd& m, const char* what) {
    if (!m.allFinite()) fail(ErrorKind::Numerical, std::string(what) + " contains non-finite values");
}

Eigen::MatrixXd with_bias_column(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out(x.rows(), x.cols() + 1);
    out.leftCols(x.cols()) = x;
    out.col(x.cols()).setOnes();
    return out;
}

void check_columns(Eigen::Index got, Eigen::Index want) {
    if (got != want) {
        fail(ErrorKind::Contract, "probe expects " + std::to_string(want) + " input columns, got " + std::to_string(got));
    }
}

}  // namespace

const char* to_string(ProbeKind kind) { return kind == ProbeKind::Ridge ? "ridge" : "mlp"; }

ProbeKind probe_kind_from_string(std::string_view text) {
    if (text == "ridge" || text == "RIDGE") return ProbeKind::Ridge;
    if (text == "mlp" || text == "MLP") return ProbeKind::Mlp;
    fail(ErrorKind::Config, "unknown probe kind '" + std::string(text) + "' (expected ridge or mlp)");
}

void MlpFitConfig::validate() const {
    if (hidden < 1 || batch_size < 1 || max_epochs < 1 || !(learning_rate > 0) || !(weight_decay > 0)) {
        fail(ErrorKind::Config, "MLP config: hidden, batch_size, max_epochs, learning_rate and weight_decay must be positive");
    }
}

// ---------------------------------------------------------------- ridge

RidgeProbe fit_ridge(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda, bool add_bias) {
    if (x.cols() == 0) fail(ErrorKind::Contract, "ridge fit needs at least one feature column");
    if (x.rows() == 0) fail(ErrorKind::Contract, "ridge fit needs at least one example");
    if (y.size() != x.rows()) fail(ErrorKind::Contract, "ridge fit: X has " + std::to_string(x.rows()) +
                                                          " rows but y has " + std::to_string(y.size()));
    if (!(lambda > 0) || !std::isfinite(lambda)) fail(ErrorKind::Contract, "ridge lambda must be positive");
    require_finite(x, "ridge design matrix");
    require_finite(y, "ridge targets");

    const Eigen::MatrixXd design = add_bias ? with_bias_column(x) : x;
    Eigen::MatrixXd gram = design.transpose() * design;
    gram.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success) fail(ErrorKind::Numerical, "ridge normal matrix is not positive definite");

    RidgeProbe probe;
    probe.weights = llt.solve(design.transpose() * y);
    probe.lambda = lambda;
    probe.used_bias = add_bias;
    require_finite(probe.weights, "ridge solution");
    return probe;
}

Eigen::VectorXd predict_ridge(const RidgeProbe& probe, const Eigen::MatrixXd& x) {
    check_columns(x.cols(), probe.input_dim());
    Eigen::VectorXd y = x * probe.weights.head(probe.input_dim());
    if (probe.used_bias) y.array() += probe.weights(probe.input_dim());
    return y.array().max(0.0).min(1.0);
}

// ---------------------------------------------------------------- mlp

MlpProbe init_mlp(Eigen::Index input_dim, int hidden, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double a1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
    const double a2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    std::uniform_real_distribution<double> u1(-a1, a1), u2(-a2, a2);

    MlpProbe p;
    p.w1.resize(hidden, input_dim);
    for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = u1(rng);
    p.b1.resize(hidden);
    for (auto& v : p.b1) v = u1(rng);
    p.w2.resize(hidden);
    for (auto& v : p.w2) v = u2(rng);
    p.b2 = u2(rng);
    return p;
}

Eigen::VectorXd mlp_forward(const MlpProbe& probe, const Eigen::MatrixXd& x) {
    check_columns(x.cols(), probe.input_dim());
    Eigen::MatrixXd z = x * probe.w1.transpose();
    z.rowwise() += probe.b1.transpose();
    Eigen::VectorXd out = z.cwiseMax(0.0) * probe.w2;
    out.array() += probe.b2;
    return out;
}

Eigen::VectorXd predict_mlp(const MlpProbe& probe, const Eigen::MatrixXd& x) {
    return mlp_forward(probe, x).array().max(0.0).min(1.0);
}

double mlp_loss_and_gradient(const MlpProbe& probe, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             MlpGradient* grad) {
    check_columns(x.cols(), probe.input_dim());
    const auto n = static_cast<double>(x.rows());
    Eigen::MatrixXd z = x * probe.w1.transpose();
    z.rowwise() += probe.b1.transpose();
    const Eigen::MatrixXd a = z.cwiseMax(0.0);
    Eigen::VectorXd residual = a * probe.w2;
    residual.array() += probe.b2 - y.array();
    const double loss = residual.squaredNorm() / n;
    if (!grad) return loss;

    const Eigen::VectorXd g_out = (2.0 / n) * residual;
    grad->w2 = a.transpose() * g_out;
    grad->b2 = g_out.sum();
    Eigen::MatrixXd g_z = g_out * probe.w2.transpose();
    g_z = g_z.cwiseProduct((z.array() > 0.0).cast<double>().matrix());
    grad->w1 = g_z.transpose() * x;
    grad->b1 = g_z.colwise().sum().transpose();
    return loss;
}

namespace {

// Decoupled weight decay Adam with PyTorch's defaults for betas and eps.
class AdamW {
public:
    AdamW(const MlpFitConfig& cfg, const MlpProbe& shape) : lr_(cfg.learning_rate), wd_(cfg.weight_decay) {
        m_.w1 = Eigen::MatrixXd::Zero(shape.w1.rows(), shape.w1.cols());
        m_.b1 = Eigen::VectorXd::Zero(shape.b1.size());
        m_.w2 = Eigen::VectorXd::Zero(shape.w2.size());
        v_ = m_;
    }

    void step(MlpProbe& p, const MlpGradient& g) {
        ++t_;
        const double c1 = 1.0 - std::pow(kBeta1, t_);
        const double c2 = 1.0 - std::pow(kBeta2, t_);
        update(p.w1, m_.w1, v_.w1, g.w1, c1, c2);
        update(p.b1, m_.b1, v_.b1, g.b1, c1, c2);
        update(p.w2, m_.w2, v_.w2, g.w2, c1, c2);
        p.b2 *= 1.0 - lr_ * wd_;
        m_.b2 = kBeta1 * m_.b2 + (1 - kBeta1) * g.b2;
        v_.b2 = kBeta2 * v_.b2 + (1 - kBeta2) * g.b2 * g.b2;
        p.b2 -= lr_ * (m_.b2 / c1) / (std::sqrt(v_.b2 / c2) + kEps);
    }

private:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    template <class M>
    void update(M& param, M& m, M& v, const M& g, double c1, double c2) {
        param *= 1.0 - lr_ * wd_;
        m = kBeta1 * m + (1 - kBeta1) * g;
        v = kBeta2 * v + (1 - kBeta2) * g.cwiseProduct(g);
        param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
    }

    double lr_;
    double wd_;
    int t_ = 0;
    MlpGradient m_;
    MlpGradient v_;
};

}  // namespace

MlpFit fit_mlp(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const MlpFitConfig& config) {
    config.validate();
    if (x.rows() == 0) fail(ErrorKind::Contract, "MLP fit needs at least one example");
    if (x.cols() == 0) fail(ErrorKind::Contract, "MLP fit needs at least one feature column");
    if (y.size() != x.rows()) fail(ErrorKind::Contract, "MLP fit: X and y row counts differ");
    require_finite(x, "MLP inputs");
    require_finite(y, "MLP targets");

    std::mt19937_64 rng(config.seed);
    MlpFit fit;
    fit.probe = init_mlp(x.cols(), config.hidden, rng());
    AdamW opt(config, fit.probe);

    const auto n = x.rows();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    MlpGradient grad;
    Eigen::MatrixXd xb;
    Eigen::VectorXd yb;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (Eigen::Index start = 0; start < n; start += config.batch_size) {
            const auto len = std::min<Eigen::Index>(config.batch_size, n - start);
            xb.resize(len, x.cols());
            yb.resize(len);
            for (Eigen::Index i = 0; i < len; ++i) {
                const auto src = order[static_cast<std::size_t>(start + i)];
                xb.row(i) = x.row(src);
                yb(i) = y(src);
            }
            const double loss = mlp_loss_and_gradient(fit.probe, xb, yb, &grad);
            if (!std::isfinite(loss)) {
                fail(ErrorKind::Numerical, "MLP loss became non-finite at epoch " + std::to_string(epoch) +
                                               ", batch offset " + std::to_string(start));
            }
            total += loss * static_cast<double>(len);
            opt.step(fit.probe, grad);
        }
        fit.loss_curve.push_back(total / static_cast<double>(n));
    }
    return fit;
}

// ---------------------------------------------------------------- dispatch

Probe fit_probe(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const FitParams& params) {
    if (params.kind == ProbeKind::Ridge) return fit_ridge(x, y, params.ridge_lambda, params.add_bias);
    return fit_mlp(x, y, params.mlp).probe;
}

Eigen::VectorXd predict(const Probe& probe, const Eigen::MatrixXd& x) {
    return std::visit(
        [&](const auto& p) -> Eigen::VectorXd {
            if constexpr (std::is_same_v<std::decay_t<decltype(p)>, RidgeProbe>) {
                return predict_ridge(p, x);
            } else {
                return predict_mlp(p, x);
            }
        },
        probe);
}

ProbeKind kind_of(const Probe& probe) {
    return std::holds_alternative<RidgeProbe>(probe) ? ProbeKind::Ridge : ProbeKind::Mlp;
}

// ---------------------------------------------------------------- serialization

namespace {

void put_block(std::ofstream& out, const double* data, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) {
        auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(data[i]));
        char b[4];
        for (int k = 0; k < 4; ++k) b[k] = static_cast<char>((bits >> (8 * k)) & 0xffu);
        out.write(b, 4);
    }
}

void get_block(std::ifstream& in, double* data, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        if (!in) fail(ErrorKind::Format, "probe parameter file is truncated");
        std::uint32_t bits = 0;
        for (int k = 0; k < 4; ++k) bits |= std::uint32_t{b[k]} << (8 * k);
        data[i] = std::bit_cast<float>(bits);
    }
}

}  // namespace

void save_probe(const Probe& probe, const std::filesystem::path& stem, const FitParams& params) {
    const auto bin_path = std::filesystem::path(stem.string() + ".bin");
    std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
    if (!bin) fail(ErrorKind::Io, "cannot write '" + bin_path.string() + "'");

    nlohmann::ordered_json meta;
    meta["format"] = "headprobe-probe";
    meta["kind"] = to_string(kind_of(probe));
    meta["params_file"] = bin_path.filename().string();
    meta["dtype"] = "F32LE";
    if (const auto* r = std::get_if<RidgeProbe>(&probe)) {
        meta["lambda"] = r->lambda;
        meta["used_bias"] = r->used_bias;
        meta["blocks"] = {{{"name", "weights"}, {"shape", {r->weights.size()}}}};
        put_block(bin, r->weights.data(), r->weights.size());
    } else {
        const auto& m = std::get<MlpProbe>(probe);
        // w1 is written row-major (one hidden unit per row).
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w1 = m.w1;
        meta["blocks"] = {{{"name", "w1"}, {"shape", {m.hidden(), m.input_dim()}}},
                          {{"name", "b1"}, {"shape", {m.hidden()}}},
                          {{"name", "w2"}, {"shape", {m.hidden()}}},
                          {{"name", "b2"}, {"shape", {1}}}};
        meta["config"] = {{"hidden", params.mlp.hidden},
                          {"weight_decay", params.mlp.weight_decay},
                          {"batch_size", params.mlp.batch_size},
                          {"learning_rate", params.mlp.learning_rate},
                          {"max_epochs", params.mlp.max_epochs},
                          {"seed", params.mlp.seed}};
        put_block(bin, w1.data(), w1.size());
        put_block(bin, m.b1.data(), m.b1.size());
        put_block(bin, m.w2.data(), m.w2.size());
        put_block(bin, &m.b2, 1);
    }
    if (!bin) fail(ErrorKind::Io, "failed writing '" + bin_path.string() + "'");

    std::ofstream js(stem.string() + ".json", std::ios::binary | std::ios::trunc);
    js << meta.dump(2) << "\n";
    if (!js) fail(ErrorKind::Io, "failed writing '" + stem.string() + ".json'");
}

Probe load_probe(const std::filesystem::path& stem) {
    std::ifstream js(stem.string() + ".json");
    if (!js) fail(ErrorKind::Io, "cannot open '" + stem.string() + ".json'");
    nlohmann::json meta;
    try {
        js >> meta;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, "probe metadata: " + std::string(e.what()));
    }
    const auto bin_path = stem.parent_path() / meta.at("params_file").get<std::string>();
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) fail(ErrorKind::Io, "cannot open '" + bin_path.string() + "'");

    const auto& blocks = meta.at("blocks");
    if (probe_kind_from_string(meta.at("kind").get<std::string>()) == ProbeKind::Ridge) {
        RidgeProbe r;
        r.lambda = meta.at("lambda").get<double>();
        r.used_bias = meta.at("used_bias").get<bool>();
        r.weights.resize(blocks.at(0).at("shape").at(0).get<Eigen::Index>());
        get_block(bin, r.weights.data(), r.weights.size());
        return r;
    }
    const auto hidden = blocks.at(0).at("shape").at(0).get<Eigen::Index>();
    const auto dim = blocks.at(0).at("shape").at(1).get<Eigen::Index>();
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w1(hidden, dim);
    MlpProbe m;
    get_block(bin, w1.data(), w1.size());
    m.w1 = w1;
    m.b1.resize(hidden);
    m.w2.resize(hidden);
    get_block(bin, m.b1.data(), hidden);
    get_block(bin, m.w2.data(), hidden);
    get_block(bin, &m.b2, 1);
    return m;
}

}  // namespace headprobe
