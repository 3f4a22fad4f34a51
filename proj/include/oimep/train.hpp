#pragma once

// Mini-batch EP training.
//
// Batches are a serial dependency; the examples inside one batch are
// independent and may run on several threads. Per-example contributions are
// stored and then reduced in batch order, so results do not depend on the
// thread count or scheduling.

#include <chrono>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dataio.hpp"
#include "ep.hpp"
#include "hardware.hpp"
#include "network.hpp"
#include "noise.hpp"

namespace oimep {

struct EpochMetrics {
    std::size_t epoch = 0;   ///< 1-based
    double train_acc = 0.0;  ///< free-phase readout during the epoch, before each batch update
    double test_acc = 0.0;   ///< NaN when no test set is given
    double mean_loss = 0.0;  ///< mean free-phase loss during the epoch
    double wall_time = 0.0;  ///< seconds
    std::size_t unconverged = 0; ///< free phases whose final residual exceeded the threshold
    double max_residual = 0.0;
};

/// Everything needed to continue a run.
struct TrainState {
    NetworkParams net;
    SgdState sgd;
    std::size_t epoch = 0; ///< completed epochs
};

struct TrainOptions {
    unsigned threads = 1;
    double target_low = -1.0;
};

struct TrainCallbacks {
    std::function<void(const EpochMetrics&, const TrainState&)> on_epoch_end;
};

struct TrainResult {
    TrainState state;
    std::vector<EpochMetrics> history;
};

/// A relaxation failed while training on a specific dataset row.
class TrainingError : public std::runtime_error {
  public:
    TrainingError(std::size_t example, const std::string& what)
        : std::runtime_error("example " + std::to_string(example) + ": " + what), example_(example) {}
    std::size_t example() const noexcept { return example_; }

  private:
    std::size_t example_;
};

namespace detail {

/// Runs f(i) for i in [0, n) over `threads` workers, each with its own state
/// built by make_state(). Exceptions propagate from the lowest failing index.
template <class MakeState, class F>
void parallel_for(std::size_t n, unsigned threads, MakeState&& make_state, F&& f) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n ? n : 1)));
    if (threads == 1) {
        auto st = make_state();
        for (std::size_t i = 0; i < n; ++i) f(st, i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            auto st = make_state();
            for (std::size_t i = w; i < n; i += threads) {
                try {
                    f(st, i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline std::uint64_t shuffle_seed(std::uint64_t master, std::size_t epoch) {
    return derive_seed(master, {0x73687566ULL, static_cast<std::uint64_t>(epoch)});
}

} // namespace detail

/// Fraction of `data` classified correctly by the free-phase readout.
inline double evaluate(const NetworkParams& net, const Dataset& data, const EpConfig& cfg, const HardwareConfig& hw,
                       std::uint64_t noise_epoch = 0, unsigned threads = 1,
                       std::vector<int>* predictions = nullptr) {
    if (data.size() == 0) return std::numeric_limits<double>::quiet_NaN();
    std::vector<int> pred(data.size());
    detail::parallel_for(data.size(), threads, [] { return EpRunner{}; }, [&](EpRunner& runner, std::size_t i) {
        const Vector x = data.images.row(static_cast<Eigen::Index>(i)).transpose();
        const RelaxResult r = runner.free_phase(net, x, cfg, hw, {noise_epoch, i}, PhaseTag::eval);
        pred[i] = readout_class(measure(r.final, hw).phases.tail(net.n_y()));
    });
    std::size_t ok = 0;
    for (std::size_t i = 0; i < data.size(); ++i) ok += pred[i] == data.labels[i];
    if (predictions) *predictions = std::move(pred);
    return static_cast<double>(ok) / static_cast<double>(data.size());
}

/// Trains for cfg.epochs epochs in total, continuing from `resume` if given.
inline TrainResult train(const Dataset& data, const Dataset* test, const NetworkParams& initial, const EpConfig& cfg,
                         const HardwareConfig& hw, const TrainOptions& opts = {}, const TrainCallbacks& cb = {},
                         std::optional<TrainState> resume = std::nullopt) {
    cfg.validate();
    hw.validate();
    if (data.size() == 0) throw ConfigError("train: empty dataset");
    if (data.n_inputs() != initial.n_x()) throw DimensionError("train: dataset inputs do not match n_x");

    TrainResult res;
    if (resume) {
        res.state = std::move(*resume);
    } else {
        res.state.net = apply_param_quantization(initial, hw);
    }
    const auto n_h = res.state.net.n_h(), n_y = res.state.net.n_y(), n_x = res.state.net.n_x();

    struct PerExample {
        LocalUpdate update;
        bool correct = false;
        double loss = 0.0;
        double residual = 0.0;
        bool converged = true;
    };

    std::vector<std::size_t> order(data.size());
    for (std::size_t epoch = res.state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        fisher_yates(order, detail::shuffle_seed(cfg.seed, epoch));

        EpochMetrics m;
        m.epoch = epoch;
        std::size_t correct = 0;
        double loss_sum = 0.0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t bsz = std::min(cfg.batch_size, order.size() - start);
            std::vector<PerExample> out(bsz);
            const NetworkParams& net = res.state.net;
            detail::parallel_for(bsz, opts.threads, [] { return EpRunner{}; }, [&](EpRunner& runner, std::size_t b) {
                const std::size_t idx = order[start + b];
                const Example ex = make_example(data, idx, n_y, opts.target_low);
                try {
                    const ThreePhaseResult r = runner.three_phases(net, ex, cfg, hw, {epoch, idx});
                    PerExample& pe = out[b];
                    pe.update = local_update(r.plus, r.minus, n_h, cfg.beta);
                    const Vector phi_y = r.free.phases.tail(n_y);
                    pe.correct = readout_class(phi_y) == ex.label;
                    pe.loss = loss(phi_y, ex.target);
                    pe.residual = r.diagnostics.free_residual;
                    pe.converged = r.diagnostics.free_converged;
                } catch (const std::exception& e) {
                    throw TrainingError(idx, e.what());
                }
            });

            EpGradient g = EpGradient::zeros(n_x, n_h, n_y);
            for (std::size_t b = 0; b < bsz; ++b) {
                const PerExample& pe = out[b];
                g.w_xh.noalias() += data.images.row(static_cast<Eigen::Index>(order[start + b])).transpose() *
                                    pe.update.d_h.transpose();
                g.w_hy += pe.update.g_w_hy;
                g.b_h += pe.update.d_h;
                g.b_y += pe.update.d_y;
                correct += pe.correct;
                loss_sum += pe.loss;
                m.max_residual = std::max(m.max_residual, pe.residual);
                m.unconverged += !pe.converged;
            }
            g *= 1.0 / static_cast<double>(bsz);
            NetworkParams next = sgd_step(res.state.net, g, cfg, &res.state.sgd);
            if (!next.all_finite()) throw TrainingError(order[start], "parameter update produced non-finite values");
            res.state.net = apply_param_quantization(next, hw);
        }

        m.train_acc = static_cast<double>(correct) / static_cast<double>(data.size());
        m.mean_loss = loss_sum / static_cast<double>(data.size());
        m.test_acc = test ? evaluate(res.state.net, *test, cfg, hw, epoch, opts.threads)
                          : std::numeric_limits<double>::quiet_NaN();
        m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.state.epoch = epoch;
        res.history.push_back(m);
        if (cb.on_epoch_end) cb.on_epoch_end(m, res.state);
    }
    return res;
}

} // namespace oimep
