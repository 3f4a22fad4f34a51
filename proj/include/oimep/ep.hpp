#pragma once

// Equilibrium propagation on the layered OIM.
//
// Per example: relax freely from the reference state phi_0 = pi/2, then relax
// twice more from that free fixed point with the loss nudged in at +beta and
// -beta. The symmetric estimate
//
//   g = -1/(2 beta) [dF/dtheta(phi^{+beta}) - dF/dtheta(phi^{-beta})]
//
// reduces to four local rules (cosines of the phases each parameter touches)
// and approximates -dloss/dtheta as beta -> 0.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "bipartite.hpp"
#include "errors.hpp"
#include "hardware.hpp"
#include "network.hpp"
#include "noise.hpp"
#include "oim.hpp"

namespace oimep {

inline constexpr double reference_phase = std::numbers::pi / 2.0;

struct EpConfig {
    double beta = 0.05;
    double epsilon = 0.5;
    std::size_t free_steps = 3500;
    std::size_t nudge_steps = 350;
    double lr_w_xh = 0.01;
    double lr_w_hy = 0.001;
    double lr_b_h = 0.001;
    double lr_b_y = 0.001;
    std::size_t batch_size = 20;
    std::size_t epochs = 1;
    std::uint64_t seed = 0;
    double momentum = 0.0;
    double weight_decay = 0.0;
    double convergence_threshold = 1e-3;
    double divergence_guard = 1e6;

    void validate() const {
        if (!(beta > 0.0)) throw ConfigError("EpConfig: beta must be > 0");
        if (!(epsilon > 0.0)) throw ConfigError("EpConfig: epsilon must be > 0");
        if (free_steps < 1 || nudge_steps < 1) throw ConfigError("EpConfig: free_steps and nudge_steps must be >= 1");
        if (lr_w_xh < 0 || lr_w_hy < 0 || lr_b_h < 0 || lr_b_y < 0)
            throw ConfigError("EpConfig: learning rates must be >= 0");
        if (batch_size < 1) throw ConfigError("EpConfig: batch_size must be >= 1");
        if (momentum < 0 || momentum >= 1) throw ConfigError("EpConfig: momentum must be in [0, 1)");
        if (weight_decay < 0) throw ConfigError("EpConfig: weight_decay must be >= 0");
    }

    IntegratorConfig integrator(std::size_t steps) const {
        IntegratorConfig c;
        c.epsilon = epsilon;
        c.steps = steps;
        c.convergence_threshold = convergence_threshold;
        c.divergence_guard = divergence_guard;
        return c;
    }
};

/// Identifies which noise stream a relaxation draws from.
struct NoiseKey {
    std::uint64_t epoch = 0;
    std::uint64_t example = 0;
};

struct PhaseDiagnostics {
    double free_residual = 0.0;
    double plus_residual = 0.0;
    double minus_residual = 0.0;
    bool free_converged = false;
    bool plus_converged = false;
    bool minus_converged = false;
};

struct ThreePhaseResult {
    PhaseState free;  ///< as measured (readout-quantised when configured)
    PhaseState plus;  ///< as measured
    PhaseState minus; ///< as measured
    PhaseDiagnostics diagnostics;
};

/// Local update quantities for one example. The full w_xh gradient is the
/// outer product x * d_h^T, so it is never materialised per example.
struct LocalUpdate {
    Vector d_h;    ///< gradient for b_h
    Vector d_y;    ///< gradient for b_y
    Matrix g_w_hy; ///< gradient for w_hy
};

inline LocalUpdate local_update(const PhaseState& plus, const PhaseState& minus, Eigen::Index n_h, double beta) {
    if (!(beta > 0.0)) throw ConfigError("ep_gradient: beta must be > 0");
    if (plus.size() != minus.size()) throw DimensionError("ep_gradient: nudged states differ in size");
    if (n_h < 0 || n_h > plus.size()) throw DimensionError("ep_gradient: hidden count exceeds state size");
    const Eigen::Index n_y = plus.size() - n_h;
    const double k = -1.0 / (2.0 * beta);
    const auto hp = plus.phases.head(n_h), hm = minus.phases.head(n_h);
    const auto yp = plus.phases.tail(n_y), ym = minus.phases.tail(n_y);
    LocalUpdate u;
    u.d_h = k * (hm.array().cos() - hp.array().cos()).matrix();
    u.d_y = k * (ym.array().cos() - yp.array().cos()).matrix();
    u.g_w_hy.resize(n_h, n_y);
    for (Eigen::Index i = 0; i < n_h; ++i)
        for (Eigen::Index j = 0; j < n_y; ++j)
            u.g_w_hy(i, j) = k * (std::cos(hm[i] - ym[j]) - std::cos(hp[i] - yp[j]));
    return u;
}

/// Symmetric EP estimate from the two nudged states (hidden phases first).
inline EpGradient ep_gradient(const PhaseState& plus, const PhaseState& minus, const Vector& x, double beta,
                              Eigen::Index n_h) {
    LocalUpdate u = local_update(plus, minus, n_h, beta);
    EpGradient g;
    g.w_xh = x * u.d_h.transpose();
    g.w_hy = std::move(u.g_w_hy);
    g.b_h = std::move(u.d_h);
    g.b_y = std::move(u.d_y);
    return g;
}

/// Class with the largest cos(phi_y); ties go to the lowest index.
inline int readout_class(const Vector& phi_y) {
    if (phi_y.size() == 0) throw DimensionError("readout_class: no outputs");
    int best = 0;
    double best_v = std::cos(phi_y[0]);
    for (Eigen::Index j = 1; j < phi_y.size(); ++j) {
        const double v = std::cos(phi_y[j]);
        if (v > best_v) {
            best_v = v;
            best = static_cast<int>(j);
        }
    }
    return best;
}

/// Runs the EP phases with reusable scratch buffers. One runner per thread.
class EpRunner {
  public:
    RelaxResult free_phase(const NetworkParams& net, const Vector& x, const EpConfig& cfg, const HardwareConfig& hw,
                           NoiseKey key = {}, PhaseTag tag = PhaseTag::free) {
        const BipartiteOim sys = build_bipartite(net, hidden_field(net, x), 0.0, nullptr);
        const auto n = sys.n();
        return run(sys, PhaseState::constant(n, reference_phase), cfg.integrator(cfg.free_steps), hw, key, tag);
    }

    ThreePhaseResult three_phases(const NetworkParams& net, const Example& ex, const EpConfig& cfg,
                                  const HardwareConfig& hw, NoiseKey key = {}) {
        if (!(cfg.beta > 0.0)) throw ConfigError("run_three_phases: beta must be > 0");
        if (ex.target.size() != net.n_y()) throw DimensionError("run_three_phases: target length does not match n_y");
        const Vector hb = hidden_field(net, ex.x);
        const BipartiteOim free_sys = build_bipartite(net, hb, 0.0, nullptr);
        const auto n = free_sys.n();
        RelaxResult fr = run(free_sys, PhaseState::constant(n, reference_phase), cfg.integrator(cfg.free_steps), hw,
                             key, PhaseTag::free);

        const auto nudge_cfg = cfg.integrator(cfg.nudge_steps);
        RelaxResult pr = run(build_bipartite(net, hb, cfg.beta, &ex.target), fr.final, nudge_cfg, hw, key, PhaseTag::plus);
        RelaxResult mr = run(build_bipartite(net, hb, -cfg.beta, &ex.target), fr.final, nudge_cfg, hw, key, PhaseTag::minus);

        ThreePhaseResult out;
        out.diagnostics = {fr.residual, pr.residual, mr.residual, fr.converged, pr.converged, mr.converged};
        out.free = measure(fr.final, hw);
        out.plus = measure(pr.final, hw);
        out.minus = measure(mr.final, hw);
        return out;
    }

    RelaxResult run(const BipartiteOim& sys, const PhaseState& init, const IntegratorConfig& icfg,
                    const HardwareConfig& hw, NoiseKey key, PhaseTag tag) {
        std::optional<NoiseStream> noise;
        if (hw.noise_xi > 0.0)
            noise.emplace(hw.noise_xi, derive_seed(hw.noise_seed, {key.epoch, key.example, static_cast<std::uint64_t>(tag)}));
        NoiseStream* np = noise ? &*noise : nullptr;
        if (hw.quantize_in_dynamics && hw.phase_bits) {
            const int bits = *hw.phase_bits;
            return integ_.relax(sys, init, icfg, np, [bits](Vector& phi) {
                for (Eigen::Index i = 0; i < phi.size(); ++i) phi[i] = quantize_phase(phi[i], bits);
            });
        }
        return integ_.relax(sys, init, icfg, np);
    }

  private:
    BipartiteIntegrator integ_;
};

inline ThreePhaseResult run_three_phases(const NetworkParams& net, const Example& ex, const EpConfig& cfg,
                                         const HardwareConfig& hw, NoiseKey key = {}) {
    EpRunner runner;
    return runner.three_phases(net, ex, cfg, hw, key);
}

/// Free phase only, then argmax of the measured cos(phi_y).
inline int predict(const NetworkParams& net, const Vector& x, const EpConfig& cfg, const HardwareConfig& hw,
                   NoiseKey key = {}) {
    EpRunner runner;
    const RelaxResult r = runner.free_phase(net, x, cfg, hw, key, PhaseTag::eval);
    return readout_class(measure(r.final, hw).phases.tail(net.n_y()));
}

/// Momentum buffer for the optional heavy-ball variant.
struct SgdState {
    EpGradient velocity;
};

/// theta += eta_layer * g. The EP estimate already points downhill in the
/// loss, so it is added. Weight decay subtracts weight_decay * theta from g.
inline NetworkParams sgd_step(const NetworkParams& net, const EpGradient& g, const EpConfig& cfg,
                              SgdState* state = nullptr) {
    if (!net.same_shape(g)) throw DimensionError("sgd_step: gradient shape does not match the network");
    EpGradient step = g;
    if (cfg.weight_decay > 0.0) {
        step.w_xh -= cfg.weight_decay * net.w_xh;
        step.w_hy -= cfg.weight_decay * net.w_hy;
        step.b_h -= cfg.weight_decay * net.b_h;
        step.b_y -= cfg.weight_decay * net.b_y;
    }
    if (cfg.momentum > 0.0) {
        if (!state) throw ConfigError("sgd_step: momentum needs an SgdState");
        if (!state->velocity.same_shape(net)) state->velocity = EpGradient::zeros_like(net);
        state->velocity *= cfg.momentum;
        state->velocity += step;
        step = state->velocity;
    }
    NetworkParams out = net;
    out.w_xh += cfg.lr_w_xh * step.w_xh;
    out.w_hy += cfg.lr_w_hy * step.w_hy;
    out.b_h += cfg.lr_b_h * step.b_h;
    out.b_y += cfg.lr_b_y * step.b_y;
    return out;
}

} // namespace oimep
