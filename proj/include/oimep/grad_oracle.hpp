#pragma once

// Reference gradients for validating the EP estimator:
//
//  * reverse accumulation (BPTT) through the recorded explicit-Euler free
//    phase phi_{t+1} = phi_t + eps * v(phi_t; theta),
//  * brute-force central finite differences of the loss after a full free
//    relaxation,
//  * the per-step comparison of the symmetric EP estimate during the nudged
//    phases against truncated BPTT sums.
//
// Loss gradients here are plain dloss/dtheta (descent direction is the
// negative). EP estimates approximate the negative of these.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bipartite.hpp"
#include "ep.hpp"
#include "errors.hpp"
#include "network.hpp"
#include "oim.hpp"

namespace oimep {

struct TensorComparison {
    double cosine_similarity = 0.0;
    double relative_l2_error = 0.0;
};

struct GradComparison {
    double cosine_similarity = 0.0; ///< over the concatenation of all four tensors
    double relative_l2_error = 0.0; ///< ||a - b|| / ||b||; absolute when ||b|| = 0
    bool degenerate = false;        ///< one side had zero norm
    std::map<std::string, TensorComparison> per_tensor;
};

namespace detail {

inline TensorComparison compare_flat(const Vector& a, const Vector& b, bool* degenerate = nullptr) {
    TensorComparison c;
    const double na = a.norm(), nb = b.norm();
    const bool zero = na == 0.0 || nb == 0.0;
    if (degenerate) *degenerate = zero;
    c.cosine_similarity = zero ? 0.0 : std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
    c.relative_l2_error = nb == 0.0 ? (a - b).norm() : (a - b).norm() / nb;
    return c;
}

template <class M>
Vector as_vector(const M& m) {
    Vector v(m.size());
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) v[k++] = m(i, j);
    return v;
}

} // namespace detail

/// Cosine similarity and relative L2 error of `a` against reference `b`.
inline GradComparison compare(const ParamSet& a, const ParamSet& b) {
    if (!a.same_shape(b)) throw DimensionError("compare: gradient shapes differ");
    GradComparison out;
    const TensorComparison all = detail::compare_flat(a.flatten(), b.flatten(), &out.degenerate);
    out.cosine_similarity = all.cosine_similarity;
    out.relative_l2_error = all.relative_l2_error;
    out.per_tensor["w_xh"] = detail::compare_flat(detail::as_vector(a.w_xh), detail::as_vector(b.w_xh));
    out.per_tensor["w_hy"] = detail::compare_flat(detail::as_vector(a.w_hy), detail::as_vector(b.w_hy));
    out.per_tensor["b_h"] = detail::compare_flat(a.b_h, b.b_h);
    out.per_tensor["b_y"] = detail::compare_flat(a.b_y, b.b_y);
    return out;
}

inline GradComparison compare(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw DimensionError("compare: vector lengths differ");
    GradComparison out;
    const TensorComparison all = detail::compare_flat(a, b, &out.degenerate);
    out.cosine_similarity = all.cosine_similarity;
    out.relative_l2_error = all.relative_l2_error;
    return out;
}

/// Noiseless free phase from the reference state, with the trajectory recorded.
inline RelaxResult free_trajectory(const NetworkParams& net, const Vector& x, const EpConfig& cfg) {
    const BipartiteOim sys = build_bipartite(net, hidden_field(net, x), 0.0, nullptr);
    IntegratorConfig ic = cfg.integrator(cfg.free_steps);
    ic.record_trajectory = true;
    BipartiteIntegrator integ;
    return integ.relax(sys, PhaseState::constant(sys.n(), reference_phase), ic);
}

struct BpttResult {
    ParamSet gradient; ///< dloss(phi_T)/dtheta
    /// truncated[t] = contribution of the last t Euler steps, t = 0..max_truncation
    std::vector<ParamSet> truncated;
};

/// Reverse accumulation through a recorded free-phase trajectory phi_0..phi_T.
///
/// lambda_T = dloss/dphi_T; lambda_t = (I + eps * Dv(phi_t))^T lambda_{t+1};
/// dloss/dtheta = sum_t eps * (dv/dtheta)(phi_t)^T lambda_{t+1}.
inline BpttResult bptt_from_trajectory(const NetworkParams& net, const Example& ex,
                                       const std::vector<PhaseState>& trajectory, double epsilon,
                                       std::size_t max_truncation = 0) {
    if (trajectory.empty()) throw ConfigError("bptt: no recorded trajectory (enable record_trajectory)");
    const auto nh = net.n_h(), ny = net.n_y(), n = nh + ny;
    const std::size_t steps = trajectory.size() - 1;
    if (max_truncation > steps) throw ConfigError("bptt: truncation longer than the trajectory");
    const OimParams p = build_oim(net, ex.x, 0.0);

    const PhaseState& last = trajectory.back();
    if (last.size() != n) throw DimensionError("bptt: trajectory state size does not match the network");
    Vector lambda = Vector::Zero(n);
    for (Eigen::Index j = 0; j < ny; ++j) {
        const double phi = last[nh + j];
        lambda[nh + j] = (std::cos(phi) - ex.target[j]) * -std::sin(phi);
    }

    Vector acc_h = Vector::Zero(nh); // sum eps * lambda_h * (-sin phi_h); b_h and w_xh share it
    Vector acc_y = Vector::Zero(ny);
    Matrix acc_w = Matrix::Zero(nh, ny);
    auto snapshot = [&] {
        ParamSet s;
        s.w_xh = ex.x * acc_h.transpose();
        s.w_hy = acc_w;
        s.b_h = acc_h;
        s.b_y = acc_y;
        return s;
    };

    BpttResult out;
    if (max_truncation > 0 || steps == 0) out.truncated.push_back(snapshot());
    for (std::size_t t = steps; t-- > 0;) {
        const PhaseState& s = trajectory[t];
        const auto h = s.phases.head(nh);
        const auto y = s.phases.tail(ny);
        const auto lh = lambda.head(nh);
        const auto ly = lambda.tail(ny);
        acc_h += epsilon * (lh.array() * -h.array().sin()).matrix();
        acc_y += epsilon * (ly.array() * -y.array().sin()).matrix();
        for (Eigen::Index i = 0; i < nh; ++i)
            for (Eigen::Index j = 0; j < ny; ++j) acc_w(i, j) += epsilon * (ly[j] - lh[i]) * std::sin(h[i] - y[j]);
        lambda += epsilon * (velocity_jacobian(p, s).transpose() * lambda);
        if (steps - t <= max_truncation) out.truncated.push_back(snapshot());
    }
    out.gradient = snapshot();
    return out;
}

/// dloss(phi_T)/dtheta by BPTT through a noiseless free phase of cfg.free_steps steps.
inline ParamSet bptt_loss_gradient(const NetworkParams& net, const Example& ex, const EpConfig& cfg) {
    const RelaxResult r = free_trajectory(net, ex.x, cfg);
    return bptt_from_trajectory(net, ex, *r.trajectory, cfg.epsilon).gradient;
}

/// Loss after a full noiseless free relaxation from the reference state.
inline double free_phase_loss(EpRunner& runner, const NetworkParams& net, const Example& ex, const EpConfig& cfg) {
    const RelaxResult r = runner.free_phase(net, ex.x, cfg, HardwareConfig{});
    return loss(r.final.phases.tail(net.n_y()), ex.target);
}

/// Central finite differences of the free-phase loss; O(#params) relaxations.
inline ParamSet fd_loss_gradient(const NetworkParams& net, const Example& ex, const EpConfig& cfg,
                                 double delta = 1e-5) {
    if (!(delta > 0.0)) throw ConfigError("fd_loss_gradient: delta must be > 0");
    ParamSet g = ParamSet::zeros(net.n_x(), net.n_h(), net.n_y());
    EpRunner runner;
    NetworkParams probe = net;
    for (Eigen::Index k = 0; k < net.count(); ++k) {
        double& slot = probe.at_flat(k);
        const double orig = slot;
        slot = orig + delta;
        const double up = free_phase_loss(runner, probe, ex, cfg);
        slot = orig - delta;
        const double down = free_phase_loss(runner, probe, ex, cfg);
        slot = orig;
        g.at_flat(k) = (up - down) / (2.0 * delta);
    }
    return g;
}

struct CurvePoint {
    std::size_t step = 0;
    double beta = 0.0;
    EpGradient ep;   ///< symmetric EP estimate from (phi_t^{+beta}, phi_t^{-beta})
    ParamSet bptt;   ///< minus the truncated BPTT sum over the last `step` free-phase steps
};

struct CurveSummary {
    double beta = 0.0;
    double max_abs_deviation = 0.0; ///< max over steps and entries of |EP(t) - BPTT(t)|
    GradComparison endpoint;        ///< EP(K) against BPTT(K)
};

/// Per-step EP estimates during the nudged phases next to truncated BPTT sums.
/// Requires free_steps >= nudge_steps.
inline std::vector<CurvePoint> instantaneous_ep_curve(const NetworkParams& net, const Example& ex, const EpConfig& cfg,
                                                      const std::vector<double>& betas) {
    if (cfg.nudge_steps > cfg.free_steps) throw ConfigError("instantaneous_ep_curve: needs free_steps >= nudge_steps");
    const RelaxResult fr = free_trajectory(net, ex.x, cfg);
    const BpttResult bp = bptt_from_trajectory(net, ex, *fr.trajectory, cfg.epsilon, cfg.nudge_steps);
    const Vector hb = hidden_field(net, ex.x);
    const auto nh = net.n_h();

    std::vector<CurvePoint> out;
    BipartiteIntegrator integ;
    for (double beta : betas) {
        if (!(beta > 0.0)) throw ConfigError("instantaneous_ep_curve: betas must be > 0");
        IntegratorConfig ic = cfg.integrator(cfg.nudge_steps);
        ic.record_trajectory = true;
        const RelaxResult pr = integ.relax(build_bipartite(net, hb, beta, &ex.target), fr.final, ic);
        const RelaxResult mr = integ.relax(build_bipartite(net, hb, -beta, &ex.target), fr.final, ic);
        for (std::size_t t = 0; t <= cfg.nudge_steps; ++t) {
            CurvePoint cp;
            cp.step = t;
            cp.beta = beta;
            cp.ep = ep_gradient((*pr.trajectory)[t], (*mr.trajectory)[t], ex.x, beta, nh);
            cp.bptt = bp.truncated[t];
            cp.bptt.for_each_tensor([](const char*, auto& m) { m = -m; });
            out.push_back(std::move(cp));
        }
    }
    return out;
}

inline std::vector<CurveSummary> summarize_curve(const std::vector<CurvePoint>& curve) {
    std::vector<CurveSummary> out;
    for (const auto& cp : curve) {
        if (out.empty() || out.back().beta != cp.beta) out.push_back({cp.beta, 0.0, {}});
        CurveSummary& s = out.back();
        s.max_abs_deviation = std::max(s.max_abs_deviation, (cp.ep.flatten() - cp.bptt.flatten()).cwiseAbs().maxCoeff());
        s.endpoint = compare(cp.ep, cp.bptt);
    }
    return out;
}

/// CSV: step,beta,tensor,ep_value_norm,bptt_value_norm,max_abs_diff
inline void write_curve_csv(std::ostream& os, const std::vector<CurvePoint>& curve) {
    os << "step,beta,tensor,ep_value_norm,bptt_value_norm,max_abs_diff\n";
    os.precision(12);
    for (const auto& cp : curve) {
        auto emit = [&](const char* name, const auto& e, const auto& b) {
            os << cp.step << ',' << cp.beta << ',' << name << ',' << e.norm() << ',' << b.norm() << ','
               << (e - b).cwiseAbs().maxCoeff() << '\n';
        };
        emit("w_xh", cp.ep.w_xh, cp.bptt.w_xh);
        emit("w_hy", cp.ep.w_hy, cp.bptt.w_hy);
        emit("b_h", cp.ep.b_h, cp.bptt.b_h);
        emit("b_y", cp.ep.b_y, cp.bptt.b_y);
    }
}

} // namespace oimep
