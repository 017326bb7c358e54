#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace headprobe {

inline constexpr double kDefaultRidgeLambda = 0.01;

enum class ProbeKind { Ridge, Mlp };

const char* to_string(ProbeKind kind);
ProbeKind probe_kind_from_string(std::string_view text);

// Linear probe y = x . w. With used_bias the last weight multiplies a constant
// 1 column and is regularized like every other weight.
struct RidgeProbe {
    Eigen::VectorXd weights;
    double lambda = kDefaultRidgeLambda;
    bool used_bias = false;

    Eigen::Index input_dim() const { return weights.size() - (used_bias ? 1 : 0); }
};

// y = w2 . relu(W1 x + b1) + b2
struct MlpProbe {
    Eigen::MatrixXd w1;  // hidden x d
    Eigen::VectorXd b1;  // hidden
    Eigen::VectorXd w2;  // hidden
    double b2 = 0.0;

    Eigen::Index hidden() const { return w1.rows(); }
    Eigen::Index input_dim() const { return w1.cols(); }
};

struct MlpFitConfig {
    int hidden = 256;
    double weight_decay = 0.1;
    int batch_size = 2048;
    double learning_rate = 1e-3;
    int max_epochs = 100;
    std::uint64_t seed = 0;

    void validate() const;
};

struct MlpFit {
    MlpProbe probe;
    std::vector<double> loss_curve;  // mean training loss per epoch
};

struct MlpGradient {
    Eigen::MatrixXd w1;
    Eigen::VectorXd b1;
    Eigen::VectorXd w2;
    double b2 = 0.0;
};

// Closed-form (X^T X + lambda I)^-1 X^T y via Cholesky.
RidgeProbe fit_ridge(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda = kDefaultRidgeLambda,
                     bool add_bias = false);

// clip(X w, 0, 1)
Eigen::VectorXd predict_ridge(const RidgeProbe& probe, const Eigen::MatrixXd& x);

// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
MlpProbe init_mlp(Eigen::Index input_dim, int hidden, std::uint64_t seed);

// Mini-batch AdamW on mean squared error, reshuffling every epoch.
MlpFit fit_mlp(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const MlpFitConfig& config);

// Unclipped network outputs.
Eigen::VectorXd mlp_forward(const MlpProbe& probe, const Eigen::MatrixXd& x);

Eigen::VectorXd predict_mlp(const MlpProbe& probe, const Eigen::MatrixXd& x);

// Mean squared error of the unclipped outputs; fills `grad` when non-null.
double mlp_loss_and_gradient(const MlpProbe& probe, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             MlpGradient* grad);

using Probe = std::variant<RidgeProbe, MlpProbe>;

struct FitParams {
    ProbeKind kind = ProbeKind::Ridge;
    double ridge_lambda = kDefaultRidgeLambda;
    bool add_bias = false;
    MlpFitConfig mlp;
};

Probe fit_probe(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const FitParams& params);
Eigen::VectorXd predict(const Probe& probe, const Eigen::MatrixXd& x);
ProbeKind kind_of(const Probe& probe);

// Writes <stem>.json (metadata) and <stem>.bin (f32 LE parameter blocks).
void save_probe(const Probe& probe, const std::filesystem::path& stem, const FitParams& params);
Probe load_probe(const std::filesystem::path& stem);

}  // namespace headprobe
