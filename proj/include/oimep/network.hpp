#pragma once

// Layered MLP (inputs -> hidden -> outputs) embedded in an OIM.
//
// Inputs are not oscillators: input-to-hidden weights fold into the hidden
// bias field. Oscillator indices are [0, n_h) for hidden units followed by
// [n_h, n_h + n_y) for outputs. With y_i = cos(phi_i) and the MSE loss
// 1/2 sum_i (y_i - yhat_i)^2, the total energy F = E + beta * loss maps onto
//
//   h_i(hidden) = b_h[i] + sum_j w_xh[j][i] x_j
//   J(hidden i, output j) = w_hy[i][j]
//   h_j(output) = b_y[j] + beta * yhat_j
//   S_j(output) = -beta / 2

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "bipartite.hpp"
#include "errors.hpp"
#include "oim.hpp"

namespace oimep {

/// The four trainable tensors, shared by parameters and gradients.
struct ParamSet {
    Matrix w_xh; ///< n_x x n_h
    Matrix w_hy; ///< n_h x n_y
    Vector b_h;
    Vector b_y;

    Eigen::Index n_x() const noexcept { return w_xh.rows(); }
    Eigen::Index n_h() const noexcept { return w_xh.cols(); }
    Eigen::Index n_y() const noexcept { return w_hy.cols(); }
    Eigen::Index count() const noexcept { return w_xh.size() + w_hy.size() + b_h.size() + b_y.size(); }

    bool same_shape(const ParamSet& o) const noexcept {
        return w_xh.rows() == o.w_xh.rows() && w_xh.cols() == o.w_xh.cols() && w_hy.rows() == o.w_hy.rows() &&
               w_hy.cols() == o.w_hy.cols() && b_h.size() == o.b_h.size() && b_y.size() == o.b_y.size();
    }

    void check_consistent() const {
        if (w_hy.rows() != n_h() || b_h.size() != n_h() || b_y.size() != n_y())
            throw DimensionError("ParamSet: tensor shapes are inconsistent with the layer sizes");
    }

    bool all_finite() const {
        return w_xh.allFinite() && w_hy.allFinite() && b_h.allFinite() && b_y.allFinite();
    }

    /// Concatenation w_xh (row-major), w_hy (row-major), b_h, b_y.
    Vector flatten() const {
        Vector out(count());
        Eigen::Index k = 0;
        for (Eigen::Index i = 0; i < w_xh.rows(); ++i)
            for (Eigen::Index j = 0; j < w_xh.cols(); ++j) out[k++] = w_xh(i, j);
        for (Eigen::Index i = 0; i < w_hy.rows(); ++i)
            for (Eigen::Index j = 0; j < w_hy.cols(); ++j) out[k++] = w_hy(i, j);
        for (Eigen::Index i = 0; i < b_h.size(); ++i) out[k++] = b_h[i];
        for (Eigen::Index i = 0; i < b_y.size(); ++i) out[k++] = b_y[i];
        return out;
    }

    /// Visits (tensor name, reference) for each of the four tensors in flatten() order.
    template <class F>
    void for_each_tensor(F&& f) {
        f("w_xh", w_xh);
        f("w_hy", w_hy);
        f("b_h", b_h);
        f("b_y", b_y);
    }
    template <class F>
    void for_each_tensor(F&& f) const {
        f("w_xh", w_xh);
        f("w_hy", w_hy);
        f("b_h", b_h);
        f("b_y", b_y);
    }

    /// Mutable access to the k-th entry of flatten() order.
    double& at_flat(Eigen::Index k) {
        if (k < w_xh.size()) return w_xh(k / w_xh.cols(), k % w_xh.cols());
        k -= w_xh.size();
        if (k < w_hy.size()) return w_hy(k / w_hy.cols(), k % w_hy.cols());
        k -= w_hy.size();
        if (k < b_h.size()) return b_h[k];
        k -= b_h.size();
        if (k < b_y.size()) return b_y[k];
        throw DimensionError("ParamSet::at_flat: index out of range");
    }

    static ParamSet zeros(Eigen::Index n_x, Eigen::Index n_h, Eigen::Index n_y) {
        return ParamSet{Matrix::Zero(n_x, n_h), Matrix::Zero(n_h, n_y), Vector::Zero(n_h), Vector::Zero(n_y)};
    }
};

struct NetworkParams : ParamSet {
    NetworkParams() = default;
    explicit NetworkParams(ParamSet p) : ParamSet(std::move(p)) {}
    static NetworkParams zeros(Eigen::Index n_x, Eigen::Index n_h, Eigen::Index n_y) {
        return NetworkParams(ParamSet::zeros(n_x, n_h, n_y));
    }
};

/// Gradient-shaped tensors. For EP estimates this is the ascent direction,
/// i.e. an approximation of -dloss/dtheta.
struct EpGradient : ParamSet {
    EpGradient() = default;
    explicit EpGradient(ParamSet p) : ParamSet(std::move(p)) {}
    static EpGradient zeros(Eigen::Index n_x, Eigen::Index n_h, Eigen::Index n_y) {
        return EpGradient(ParamSet::zeros(n_x, n_h, n_y));
    }
    static EpGradient zeros_like(const ParamSet& p) { return zeros(p.n_x(), p.n_h(), p.n_y()); }

    EpGradient& operator+=(const ParamSet& o) {
        w_xh += o.w_xh;
        w_hy += o.w_hy;
        b_h += o.b_h;
        b_y += o.b_y;
        return *this;
    }
    EpGradient& operator*=(double k) {
        w_xh *= k;
        w_hy *= k;
        b_h *= k;
        b_y *= k;
        return *this;
    }
    EpGradient operator-() const {
        EpGradient g = *this;
        g *= -1.0;
        return g;
    }
};

/// One training example: inputs in [0, 1], targets in [-1, 1].
struct Example {
    Vector x;
    Vector target;
    int label = -1;
};

/// He initialisation: weights ~ N(0, 2 / fan_in), biases exactly zero.
inline NetworkParams init_network(Eigen::Index n_x, Eigen::Index n_h, Eigen::Index n_y, std::uint64_t seed) {
    if (n_x < 1 || n_h < 1 || n_y < 1) throw DimensionError("init_network: layer sizes must be >= 1");
    std::mt19937_64 rng(seed);
    auto net = NetworkParams::zeros(n_x, n_h, n_y);
    std::normal_distribution<double> in_dist(0.0, std::sqrt(2.0 / static_cast<double>(n_x)));
    std::normal_distribution<double> hid_dist(0.0, std::sqrt(2.0 / static_cast<double>(n_h)));
    for (Eigen::Index i = 0; i < n_x; ++i)
        for (Eigen::Index j = 0; j < n_h; ++j) net.w_xh(i, j) = in_dist(rng);
    for (Eigen::Index i = 0; i < n_h; ++i)
        for (Eigen::Index j = 0; j < n_y; ++j) net.w_hy(i, j) = hid_dist(rng);
    return net;
}

namespace detail {

inline void check_mapping_args(const ParamSet& net, const Vector& x, double beta, const std::optional<Vector>& target) {
    net.check_consistent();
    if (x.size() != net.n_x())
        throw DimensionError("build_oim: input has " + std::to_string(x.size()) + " entries, network expects " +
                             std::to_string(net.n_x()));
    if (beta < 0.0) throw ConfigError("build_oim: beta must be >= 0 (the sign of the nudge goes in the target)");
    if (beta > 0.0 && !target) throw ConfigError("build_oim: beta > 0 requires a target");
    if (beta == 0.0 && target) throw ConfigError("build_oim: a target is only meaningful with beta > 0");
    if (target && target->size() != net.n_y()) throw DimensionError("build_oim: target length does not match n_y");
}

} // namespace detail

/// Hidden bias field b_h + w_xh^T x.
inline Vector hidden_field(const ParamSet& net, const Vector& x) {
    if (x.size() != net.n_x()) throw DimensionError("hidden_field: input length does not match n_x");
    return net.b_h + net.w_xh.transpose() * x;
}

/// Signed nudge: F = E + nudge * loss. `nudge` may be negative (the -beta phase).
inline BipartiteOim build_bipartite(const ParamSet& net, const Vector& hidden_bias, double nudge,
                                    const Vector* target) {
    const auto nh = net.n_h(), ny = net.n_y();
    BipartiteOim sys;
    sys.W = net.w_hy;
    sys.h.resize(nh + ny);
    sys.S = Vector::Zero(nh + ny);
    sys.h.head(nh) = hidden_bias;
    sys.h.tail(ny) = net.b_y;
    if (nudge != 0.0) {
        if (!target) throw ConfigError("build_bipartite: a non-zero nudge needs a target");
        sys.h.tail(ny) += nudge * *target;
        sys.S.tail(ny).setConstant(-nudge / 2.0);
    }
    return sys;
}

/// Dense OIM realising F = E + beta * loss for input x.
inline OimParams build_oim(const ParamSet& net, const Vector& x, double beta,
                           const std::optional<Vector>& target = std::nullopt) {
    detail::check_mapping_args(net, x, beta, target);
    const Vector hb = hidden_field(net, x);
    return build_bipartite(net, hb, beta, target ? &*target : nullptr).to_dense();
}

/// 1/2 sum_i (cos(phi_i) - yhat_i)^2 over output phases.
inline double loss(const Vector& phi_y, const Vector& target) {
    if (phi_y.size() != target.size()) throw DimensionError("loss: output and target lengths differ");
    return 0.5 * (phi_y.array().cos() - target.array()).square().sum();
}

} // namespace oimep
