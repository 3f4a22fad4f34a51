#pragma once

// Fast path for OIMs whose coupling graph is bipartite (block A <-> block B,
// no couplings inside a block). The layered MLP mapping produces exactly this
// shape: hidden oscillators couple only to output oscillators. The dense
// OimParams form stays the semantic contract; `to_dense` recovers it and the
// tests check that both paths agree.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "noise.hpp"
#include "oim.hpp"

namespace oimep {

struct BipartiteOim {
    RowMatrix W; ///< n_a x n_b couplings, J(a, n_a + b) = J(n_a + b, a) = W(a, b)
    Vector h;    ///< length n_a + n_b
    Vector S;    ///< length n_a + n_b

    Eigen::Index n_a() const noexcept { return W.rows(); }
    Eigen::Index n_b() const noexcept { return W.cols(); }
    Eigen::Index n() const noexcept { return W.rows() + W.cols(); }

    void validate() const {
        if (h.size() != n() || S.size() != n()) throw DimensionError("BipartiteOim: h and S must have n_a + n_b entries");
    }

    OimParams to_dense() const {
        OimParams p(n());
        p.J.block(0, n_a(), n_a(), n_b()) = W;
        p.J.block(n_a(), 0, n_b(), n_a()) = W.transpose();
        p.h = h;
        p.S = S;
        return p;
    }
};

/// Reusable scratch space for relaxing one BipartiteOim. Not thread-safe; use
/// one integrator per worker.
class BipartiteIntegrator {
  public:
    /// Writes dphi/dt' for `phases` into `out`.
    void velocity(const BipartiteOim& sys, const Vector& phases, Vector& out) {
        prepare(sys);
        trig(phases);
        couple(sys);
        out.resize(sys.n());
        field(sys, out);
    }

    /// Fixed-length Euler(-Maruyama) relaxation. `post_step(phases)` runs after
    /// every step and may modify the state (used for in-dynamics quantisation).
    template <class PostStep>
    RelaxResult relax(const BipartiteOim& sys, const PhaseState& initial, const IntegratorConfig& cfg,
                      NoiseStream* noise, PostStep&& post_step) {
        cfg.validate();
        sys.validate();
        if (initial.size() != sys.n())
            throw DimensionError("BipartiteIntegrator::relax: state size does not match oscillator count");
        prepare(sys);
        RelaxResult r;
        if (cfg.record_trajectory) {
            r.trajectory.emplace();
            r.trajectory->reserve(cfg.steps + 1);
            r.trajectory->push_back(initial);
        }
        Vector phi = initial.phases;
        const auto n = sys.n();
        const bool noisy = noise && noise->active();
        const double noise_scale = noisy ? noise->step_scale(cfg.epsilon) : 0.0;
        for (std::size_t t = 0; t < cfg.steps; ++t) {
            trig(phi);
            couple(sys);
            field(sys, vel_);
            phi += cfg.epsilon * vel_;
            if (noisy)
                for (Eigen::Index i = 0; i < n; ++i) phi[i] += noise_scale * noise->normal();
            post_step(phi);
            bool bad = false; // NaN fails the comparison too
            for (Eigen::Index i = 0; i < n; ++i) bad |= !(std::abs(phi[i]) <= cfg.divergence_guard);
            if (bad) detail::check_state(phi, cfg.divergence_guard, "relax");
            if (r.trajectory) r.trajectory->emplace_back(phi);
        }
        trig(phi);
        couple(sys);
        field(sys, vel_);
        r.residual = n ? vel_.cwiseAbs().maxCoeff() : 0.0;
        r.converged = r.residual <= cfg.convergence_threshold;
        r.final = PhaseState(std::move(phi));
        return r;
    }

    RelaxResult relax(const BipartiteOim& sys, const PhaseState& initial, const IntegratorConfig& cfg,
                      NoiseStream* noise = nullptr) {
        return relax(sys, initial, cfg, noise, [](Vector&) {});
    }

  private:
    void prepare(const BipartiteOim& sys) {
        const auto na = sys.n_a(), nb = sys.n_b();
        cos_.resize(na + nb);
        sin_.resize(na + nb);
        vel_.resize(na + nb);
        a_trig_.resize(na, 2);
        b_trig_.resize(nb, 2);
        a_proj_.resize(na, 2);
        b_proj_.resize(nb, 2);
    }

    void trig(const Vector& phi) {
        for (Eigen::Index i = 0; i < phi.size(); ++i) {
            cos_[i] = std::cos(phi[i]);
            sin_[i] = std::sin(phi[i]);
        }
    }

    // a_proj = W [cos_b sin_b], b_proj = W^T [cos_a sin_a]
    void couple(const BipartiteOim& sys) {
        const auto na = sys.n_a(), nb = sys.n_b();
        b_trig_.col(0) = cos_.tail(nb);
        b_trig_.col(1) = sin_.tail(nb);
        a_trig_.col(0) = cos_.head(na);
        a_trig_.col(1) = sin_.head(na);
        a_proj_.noalias() = sys.W * b_trig_;
        b_proj_.noalias() = sys.W.transpose() * a_trig_;
    }

    // sum_j J_ij sin(phi_i - phi_j) = sin_i * sum_j J_ij cos_j - cos_i * sum_j J_ij sin_j
    void field(const BipartiteOim& sys, Vector& out) const {
        const auto na = sys.n_a(), nb = sys.n_b();
        for (Eigen::Index i = 0; i < na; ++i) {
            const double s = sin_[i], c = cos_[i];
            out[i] = -(s * a_proj_(i, 0) - c * a_proj_(i, 1)) - sys.h[i] * s - 2.0 * sys.S[i] * s * c;
        }
        for (Eigen::Index j = 0; j < nb; ++j) {
            const auto k = na + j;
            const double s = sin_[k], c = cos_[k];
            out[k] = -(s * b_proj_(j, 0) - c * b_proj_(j, 1)) - sys.h[k] * s - 2.0 * sys.S[k] * s * c;
        }
    }

    Vector cos_, sin_, vel_;
    Eigen::Matrix<double, Eigen::Dynamic, 2> a_trig_, b_trig_, a_proj_, b_proj_;
};

inline Vector velocity(const BipartiteOim& sys, const PhaseState& s) {
    sys.validate();
    if (s.size() != sys.n()) throw DimensionError("velocity: state size does not match oscillator count");
    BipartiteIntegrator integ;
    Vector v;
    integ.velocity(sys, s.phases, v);
    return v;
}

} // namespace oimep
