#pragma once
// Independent reference computations used as test oracles. Nothing here
// calls into the library's numerical code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "headprobe/probes.hpp"

namespace oracle {

// (X^T X + lambda I)^-1 X^T y by explicit inversion.
inline Eigen::VectorXd ridge_inverse(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda) {
    const Eigen::Index d = x.cols();
    Eigen::MatrixXd a = x.transpose() * x + lambda * Eigen::MatrixXd::Identity(d, d);
    return a.inverse() * (x.transpose() * y);
}

// Confusion-matrix QWK built entry by entry with nested loops.
inline double qwk_bruteforce(const std::vector<int>& a, const std::vector<int>& b, int lo, int hi) {
    const int r = hi - lo + 1;
    const double n = static_cast<double>(a.size());
    std::vector<std::vector<double>> o(r, std::vector<double>(r, 0.0));
    std::vector<double> ha(r, 0.0), hb(r, 0.0);
    for (std::size_t k = 0; k < a.size(); ++k) {
        o[a[k] - lo][b[k] - lo] += 1.0;
        ha[a[k] - lo] += 1.0;
        hb[b[k] - lo] += 1.0;
    }
    double num = 0.0, den = 0.0;
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < r; ++j) {
            const double w = double(i - j) * double(i - j) / (double(r - 1) * double(r - 1));
            num += w * o[i][j];
            den += w * ha[i] * hb[j] / n;
        }
    }
    return 1.0 - num / den;
}

// Plain loops, no Eigen expressions.
inline std::vector<double> mlp_forward_loops(const headprobe::MlpProbe& p, const Eigen::MatrixXd& x) {
    std::vector<double> out;
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
        double y = p.b2;
        for (Eigen::Index h = 0; h < p.w1.rows(); ++h) {
            double z = p.b1(h);
            for (Eigen::Index k = 0; k < x.cols(); ++k) z += p.w1(h, k) * x(n, k);
            y += p.w2(h) * std::max(0.0, z);
        }
        out.push_back(y);
    }
    return out;
}

inline double mse_loops(const headprobe::MlpProbe& p, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    const auto f = mlp_forward_loops(p, x);
    double s = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) s += (f[i] - y(i)) * (f[i] - y(i));
    return s / static_cast<double>(y.size());
}

// Largest relative error between analytic and central-difference gradients,
// over every parameter. Entries with |g| below `floor` are compared against
// `floor` to avoid dividing by zero.
inline double mlp_gradcheck(const headprobe::MlpProbe& probe, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                            const headprobe::MlpGradient& g, double eps = 1e-6, double floor = 1e-8) {
    double worst = 0.0;
    auto check = [&](double analytic, auto&& perturb) {
        headprobe::MlpProbe plus = probe, minus = probe;
        perturb(plus, eps);
        perturb(minus, -eps);
        const double fd = (mse_loops(plus, x, y) - mse_loops(minus, x, y)) / (2 * eps);
        const double scale = std::max({std::abs(analytic), std::abs(fd), floor});
        worst = std::max(worst, std::abs(analytic - fd) / scale);
    };
    for (Eigen::Index i = 0; i < probe.w1.rows(); ++i) {
        for (Eigen::Index j = 0; j < probe.w1.cols(); ++j) {
            check(g.w1(i, j), [&](headprobe::MlpProbe& p, double e) { p.w1(i, j) += e; });
        }
        check(g.b1(i), [&](headprobe::MlpProbe& p, double e) { p.b1(i) += e; });
        check(g.w2(i), [&](headprobe::MlpProbe& p, double e) { p.w2(i) += e; });
    }
    check(g.b2, [&](headprobe::MlpProbe& p, double e) { p.b2 += e; });
    return worst;
}

// Centred data projected on the two leading eigenvectors of the covariance,
// each signed so its first nonzero loading is positive.
inline Eigen::MatrixXd pca_eigen(const Eigen::MatrixXd& x) {
    const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd cov = c.transpose() * c;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const Eigen::Index d = x.cols();
    Eigen::MatrixXd v(d, 2);
    for (int k = 0; k < 2; ++k) {
        Eigen::VectorXd e = es.eigenvectors().col(d - 1 - k);
        for (Eigen::Index i = 0; i < d; ++i) {
            if (std::abs(e(i)) > 1e-12) {
                if (e(i) < 0) e = -e;
                break;
            }
        }
        v.col(k) = e;
    }
    return c * v;
}

inline Eigen::VectorXd mean_diff_unit(const Eigen::MatrixXd& pos, const Eigen::MatrixXd& neg) {
    Eigen::VectorXd d(pos.cols());
    for (Eigen::Index k = 0; k < pos.cols(); ++k) {
        double a = 0, b = 0;
        for (Eigen::Index i = 0; i < pos.rows(); ++i) a += pos(i, k);
        for (Eigen::Index i = 0; i < neg.rows(); ++i) b += neg(i, k);
        d(k) = a / pos.rows() - b / neg.rows();
    }
    return d / std::sqrt(d.dot(d));
}

inline double dot_cosine(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    double uv = 0, uu = 0, vv = 0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        uv += u(i) * v(i);
        uu += u(i) * u(i);
        vv += v(i) * v(i);
    }
    return uv / std::sqrt(uu * vv);
}

}  // namespace oracle

namespace testutil {

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("headprobe_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

// Relative path -> file contents for every regular file below root.
inline std::map<std::string, std::string> tree(const std::filesystem::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).string()] = slurp(e.path());
    }
    return out;
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
    }
    return m;
}

}  // namespace testutil
