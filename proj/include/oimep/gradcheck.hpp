#pragma once

// Toy-scale validation of the EP estimator against the gradient oracles.
// Shared by `oimep gradcheck` and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dataio.hpp"
#include "ep.hpp"
#include "grad_oracle.hpp"
#include "network.hpp"
#include "noise.hpp"

namespace oimep {

struct LayerSizes {
    Eigen::Index n_x = 4, n_h = 3, n_y = 2;
};

struct GradcheckConfig {
    std::vector<LayerSizes> sizes{{4, 3, 2}, {8, 5, 3}};
    std::size_t trials = 20;
    double epsilon = 0.1;
    std::size_t free_steps = 3000;
    std::size_t nudge_steps = 3000;
    std::vector<double> limit_betas{0.1, 0.03, 0.01, 0.003}; ///< beta -> 0 limit of the fixed-point estimate
    std::vector<double> curve_betas{0.02, 0.01, 0.005};      ///< per-step EP vs truncated BPTT
    std::size_t curve_trials = 5;
    double fd_delta = 1e-5;
    std::uint64_t seed = 1;
    bool corrupt_sign = false; ///< negative control: flips the w_hy rule
    /// Draws whose free phase ends above this residual, or whose loss gradient
    /// is below min_gradient_norm, are redrawn. Fully binary fixed points
    /// (all phases at 0 or pi) have an identically vanishing loss gradient and
    /// make every comparison degenerate.
    double max_free_residual = 1e-9;
    double min_gradient_norm = 1e-3;

    // pass thresholds
    double min_cosine = 0.999;
    double max_median_rel_error = 0.01;
    double max_oracle_rel_error = 1e-4;
};

struct ToyProblem {
    NetworkParams net;
    Example example;
};

/// He-initialised net, uniform [0, 1] inputs, random one-hot +-1 target.
inline ToyProblem make_toy_problem(const LayerSizes& s, std::uint64_t seed) {
    ToyProblem p;
    p.net = init_network(s.n_x, s.n_h, s.n_y, derive_seed(seed, {1}));
    std::mt19937_64 rng(derive_seed(seed, {2}));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    p.example.x.resize(s.n_x);
    for (Eigen::Index i = 0; i < s.n_x; ++i) p.example.x[i] = u(rng);
    p.example.label = static_cast<int>(bounded(rng, static_cast<std::uint64_t>(s.n_y)));
    p.example.target = encode_target(p.example.label, s.n_y);
    return p;
}

struct LimitRow {
    double beta = 0.0;
    double median_rel_error = 0.0;
    double median_cosine = 0.0;
    double min_cosine = 0.0;
};

struct CurveRow {
    double beta = 0.0;
    double median_max_deviation = 0.0;
    double min_endpoint_cosine = 0.0;
};

struct GradcheckReport {
    std::vector<LimitRow> limit;           ///< EP(beta) vs -FD at the fixed point
    double limit_slope = 0.0;              ///< d log(median rel err) / d log(beta)
    double oracle_max_rel_error = 0.0;     ///< BPTT vs FD, worst trial
    double max_free_residual = 0.0;
    double max_nudged_residual = 0.0;
    std::vector<CurveRow> curve;
    std::vector<CurvePoint> curve_points;  ///< first curve trial, for CSV output
    std::size_t redrawn = 0;               ///< degenerate or unconverged draws skipped

    bool limit_monotone = false;
    bool limit_pass = false;
    bool oracle_pass = false;
    bool curve_monotone = false;
    bool curve_pass = false;
    bool pass() const { return limit_monotone && limit_pass && oracle_pass && curve_monotone && curve_pass; }
};

namespace detail {

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline bool strictly_decreasing(const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i] < v[i - 1])) return false;
    return true;
}

} // namespace detail

inline GradcheckReport run_gradcheck(const GradcheckConfig& gc) {
    if (gc.sizes.empty() || gc.trials == 0) throw ConfigError("gradcheck: needs at least one trial");
    GradcheckReport rep;
    EpConfig cfg;
    cfg.epsilon = gc.epsilon;
    cfg.free_steps = gc.free_steps;
    cfg.nudge_steps = gc.nudge_steps;
    cfg.convergence_threshold = 1e-8;

    std::vector<std::vector<double>> rel(gc.limit_betas.size()), cosv(gc.limit_betas.size());
    std::vector<std::vector<double>> dev(gc.curve_betas.size()), endcos(gc.curve_betas.size());
    const HardwareConfig ideal;
    EpRunner runner;

    std::uint64_t draw = 0;
    for (std::size_t trial = 0; trial < gc.trials; ++trial) {
        ToyProblem tp;
        ParamSet bptt;
        for (;; ++draw) {
            if (draw >= 20 * gc.trials) throw ConfigError("gradcheck: too many degenerate toy problems; adjust sizes or steps");
            tp = make_toy_problem(gc.sizes[trial % gc.sizes.size()], derive_seed(gc.seed, {draw}));
            const RelaxResult fr = free_trajectory(tp.net, tp.example.x, cfg);
            bptt = bptt_from_trajectory(tp.net, tp.example, *fr.trajectory, cfg.epsilon).gradient;
            if (fr.residual <= gc.max_free_residual && bptt.flatten().norm() >= gc.min_gradient_norm) break;
            ++rep.redrawn;
        }
        ++draw;
        const ParamSet fd = fd_loss_gradient(tp.net, tp.example, cfg, gc.fd_delta);
        rep.oracle_max_rel_error = std::max(rep.oracle_max_rel_error, compare(bptt, fd).relative_l2_error);
        ParamSet descent = fd;
        descent.for_each_tensor([](const char*, auto& m) { m = -m; });

        for (std::size_t b = 0; b < gc.limit_betas.size(); ++b) {
            cfg.beta = gc.limit_betas[b];
            const ThreePhaseResult r = runner.three_phases(tp.net, tp.example, cfg, ideal);
            rep.max_free_residual = std::max(rep.max_free_residual, r.diagnostics.free_residual);
            rep.max_nudged_residual =
                std::max({rep.max_nudged_residual, r.diagnostics.plus_residual, r.diagnostics.minus_residual});
            EpGradient ep = ep_gradient(r.plus, r.minus, tp.example.x, cfg.beta, tp.net.n_h());
            if (gc.corrupt_sign) ep.w_hy = -ep.w_hy;
            const GradComparison c = compare(ep, descent);
            rel[b].push_back(c.relative_l2_error);
            cosv[b].push_back(c.cosine_similarity);
        }

        if (trial < gc.curve_trials) {
            std::vector<CurvePoint> curve = instantaneous_ep_curve(tp.net, tp.example, cfg, gc.curve_betas);
            if (gc.corrupt_sign)
                for (auto& cp : curve) cp.ep.w_hy = -cp.ep.w_hy;
            const auto sums = summarize_curve(curve);
            for (std::size_t b = 0; b < sums.size(); ++b) {
                dev[b].push_back(sums[b].max_abs_deviation);
                endcos[b].push_back(sums[b].endpoint.cosine_similarity);
            }
            if (trial == 0) rep.curve_points = std::move(curve);
        }
    }

    std::vector<double> med_rel;
    for (std::size_t b = 0; b < gc.limit_betas.size(); ++b) {
        LimitRow row;
        row.beta = gc.limit_betas[b];
        row.median_rel_error = detail::median(rel[b]);
        row.median_cosine = detail::median(cosv[b]);
        row.min_cosine = *std::min_element(cosv[b].begin(), cosv[b].end());
        med_rel.push_back(row.median_rel_error);
        rep.limit.push_back(row);
    }
    if (gc.limit_betas.size() >= 2) {
        // least-squares slope in log-log
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double k = static_cast<double>(gc.limit_betas.size());
        for (std::size_t b = 0; b < gc.limit_betas.size(); ++b) {
            const double lx = std::log(gc.limit_betas[b]), ly = std::log(med_rel[b]);
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
        }
        rep.limit_slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    }
    rep.limit_monotone = detail::strictly_decreasing(med_rel);
    const LimitRow& smallest = rep.limit.back();
    rep.limit_pass = smallest.min_cosine > gc.min_cosine && smallest.median_rel_error < gc.max_median_rel_error;
    rep.oracle_pass = rep.oracle_max_rel_error < gc.max_oracle_rel_error;

    std::vector<double> med_dev;
    for (std::size_t b = 0; b < gc.curve_betas.size(); ++b) {
        if (dev[b].empty()) continue;
        CurveRow row;
        row.beta = gc.curve_betas[b];
        row.median_max_deviation = detail::median(dev[b]);
        row.min_endpoint_cosine = *std::min_element(endcos[b].begin(), endcos[b].end());
        med_dev.push_back(row.median_max_deviation);
        rep.curve.push_back(row);
    }
    rep.curve_monotone = !med_dev.empty() && detail::strictly_decreasing(med_dev);
    rep.curve_pass = !rep.curve.empty() && rep.curve.back().min_endpoint_cosine > gc.min_cosine;
    return rep;
}

} // namespace oimep
