#pragma once

// Oscillator Ising machine phase dynamics.
//
// n oscillators with phases phi_i evolve in dimensionless time t' as
//
//   dphi_i/dt' = -sum_{j != i} J_ij sin(phi_i - phi_j) - h_i sin(phi_i) - S_i sin(2 phi_i)
//
// which is gradient descent on
//
//   V = -1/2 sum_{i,j} J_ij cos(phi_i - phi_j) - sum_i h_i cos(phi_i) - sum_i (S_i / 2) cos(2 phi_i).
//
// Real time is t = t' / omega_bar for a mean oscillator frequency omega_bar;
// everything in this library runs in t'.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "noise.hpp"

namespace oimep {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Oscillator phases in radians. Stored unwrapped; wrap only when reading out.
struct PhaseState {
    Vector phases;

    PhaseState() = default;
    explicit PhaseState(Vector p) : phases(std::move(p)) {}
    static PhaseState constant(Eigen::Index n, double value) { return PhaseState(Vector::Constant(n, value)); }

    Eigen::Index size() const noexcept { return phases.size(); }
    double operator[](Eigen::Index i) const { return phases[i]; }
    double& operator[](Eigen::Index i) { return phases[i]; }

    friend bool operator==(const PhaseState& a, const PhaseState& b) {
        return a.phases.size() == b.phases.size() && a.phases == b.phases;
    }
};

/// Physical machine configuration: couplings J (symmetric, zero diagonal),
/// bias field h and second-harmonic synchronisation field S.
struct OimParams {
    Matrix J;
    Vector h;
    Vector S;

    OimParams() = default;
    explicit OimParams(Eigen::Index n) : J(Matrix::Zero(n, n)), h(Vector::Zero(n)), S(Vector::Zero(n)) {}

    Eigen::Index n() const noexcept { return h.size(); }

    /// Sets J_ij = J_ji = value.
    void couple(Eigen::Index i, Eigen::Index j, double value) {
        if (i == j) throw DimensionError("OimParams::couple: self-coupling is not allowed");
        J(i, j) = value;
        J(j, i) = value;
    }

    /// Throws unless shapes agree, J is exactly symmetric and has a zero diagonal.
    void validate() const {
        const auto n = h.size();
        if (S.size() != n || J.rows() != n || J.cols() != n)
            throw DimensionError("OimParams: J must be n x n and h, S length n");
        for (Eigen::Index i = 0; i < n; ++i) {
            if (J(i, i) != 0.0) throw DimensionError("OimParams: J has a non-zero diagonal entry at " + std::to_string(i));
            for (Eigen::Index j = i + 1; j < n; ++j)
                if (J(i, j) != J(j, i))
                    throw DimensionError("OimParams: J is not symmetric at (" + std::to_string(i) + ", " +
                                         std::to_string(j) + ")");
        }
    }
};

struct IntegratorConfig {
    double epsilon = 0.1;                ///< Euler step in t' units
    std::size_t steps = 0;               ///< fixed trajectory length
    double convergence_threshold = 1e-3; ///< bound on max_i |dphi_i/dt'| at the end
    bool record_trajectory = false;
    double divergence_guard = 1e6; ///< |phi_i| beyond this aborts the run

    void validate() const {
        if (!(epsilon > 0.0)) throw ConfigError("IntegratorConfig: epsilon must be > 0");
        if (!(convergence_threshold >= 0.0)) throw ConfigError("IntegratorConfig: convergence_threshold must be >= 0");
        if (!(divergence_guard > 0.0)) throw ConfigError("IntegratorConfig: divergence_guard must be > 0");
    }
};

struct RelaxResult {
    PhaseState final;
    double residual = 0.0; ///< max_i |dphi_i/dt'| at `final`
    bool converged = false;
    /// states phi_0 .. phi_steps when requested (steps + 1 entries)
    std::optional<std::vector<PhaseState>> trajectory;
};

namespace detail {

inline void check_dims(const OimParams& p, const PhaseState& s, const char* where) {
    if (p.h.size() != s.size() || p.S.size() != s.size() || p.J.rows() != s.size() || p.J.cols() != s.size())
        throw DimensionError(std::string(where) + ": state has " + std::to_string(s.size()) +
                             " phases but params describe " + std::to_string(p.h.size()) + " oscillators");
}

inline void check_state(const Vector& phases, double guard, const char* where) {
    for (Eigen::Index i = 0; i < phases.size(); ++i) {
        const double v = phases[i];
        if (!std::isfinite(v)) throw NonFiniteError(static_cast<std::size_t>(i), where);
        if (std::abs(v) > guard) throw DivergenceError(static_cast<std::size_t>(i), std::abs(v), guard);
    }
}

} // namespace detail

inline double energy(const OimParams& p, const PhaseState& s) {
    detail::check_dims(p, s, "energy");
    const Vector c = s.phases.array().cos().matrix();
    const Vector sn = s.phases.array().sin().matrix();
    const Vector c2 = (2.0 * s.phases.array()).cos().matrix();
    // cos(a - b) = cos a cos b + sin a sin b; the diagonal of J is zero.
    const double pair = c.dot(p.J * c) + sn.dot(p.J * sn);
    return -0.5 * pair - p.h.dot(c) - 0.5 * p.S.dot(c2);
}

/// dphi/dt' = -dV/dphi.
inline Vector velocity(const OimParams& p, const PhaseState& s) {
    detail::check_dims(p, s, "velocity");
    const auto n = s.size();
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double acc = 0.0;
        const double phi = s[i];
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i && p.J(i, j) != 0.0) acc += p.J(i, j) * std::sin(phi - s[j]);
        v[i] = -acc - p.h[i] * std::sin(phi) - p.S[i] * std::sin(2.0 * phi);
    }
    return v;
}

/// Jacobian of the velocity field, d(dphi_i/dt')/dphi_k = -d^2 V / dphi_i dphi_k.
inline Matrix velocity_jacobian(const OimParams& p, const PhaseState& s) {
    detail::check_dims(p, s, "velocity_jacobian");
    const auto n = s.size();
    Matrix jac = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double diag = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
            if (k == i || p.J(i, k) == 0.0) continue;
            const double c = p.J(i, k) * std::cos(s[i] - s[k]);
            jac(i, k) = c;
            diag -= c;
        }
        jac(i, i) = diag - p.h[i] * std::cos(s[i]) - 2.0 * p.S[i] * std::cos(2.0 * s[i]);
    }
    return jac;
}

/// One explicit Euler (or Euler-Maruyama, with noise) step.
inline PhaseState euler_step(const OimParams& p, const PhaseState& s, double epsilon, NoiseStream* noise = nullptr) {
    if (!(epsilon > 0.0)) throw ConfigError("euler_step: epsilon must be > 0");
    PhaseState next(s.phases + epsilon * velocity(p, s));
    if (noise && noise->active()) next.phases += noise_increment(s.size(), noise->xi(), epsilon, *noise);
    for (Eigen::Index i = 0; i < next.size(); ++i)
        if (!std::isfinite(next[i])) throw NonFiniteError(static_cast<std::size_t>(i), "euler_step");
    return next;
}

/// Runs exactly cfg.steps Euler steps from `initial`.
inline RelaxResult relax(const OimParams& p, const PhaseState& initial, const IntegratorConfig& cfg,
                         NoiseStream* noise = nullptr) {
    cfg.validate();
    detail::check_dims(p, initial, "relax");
    RelaxResult r;
    if (cfg.record_trajectory) {
        r.trajectory.emplace();
        r.trajectory->reserve(cfg.steps + 1);
        r.trajectory->push_back(initial);
    }
    PhaseState s = initial;
    for (std::size_t t = 0; t < cfg.steps; ++t) {
        s = euler_step(p, s, cfg.epsilon, noise);
        detail::check_state(s.phases, cfg.divergence_guard, "relax");
        if (r.trajectory) r.trajectory->push_back(s);
    }
    r.residual = s.size() ? velocity(p, s).cwiseAbs().maxCoeff() : 0.0;
    r.converged = r.residual <= cfg.convergence_threshold;
    r.final = std::move(s);
    return r;
}

/// Wraps a phase into [0, 2 pi).
inline double wrap_phase(double phi) {
    constexpr double two_pi = 2.0 * 3.14159265358979323846;
    double w = std::fmod(phi, two_pi);
    if (w < 0.0) w += two_pi;
    if (w >= two_pi) w -= two_pi;
    return w;
}

} // namespace oimep
