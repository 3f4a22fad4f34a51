#pragma once

// Run-directory plumbing shared by the command-line tool and the tests:
// dataset resolution, training with metrics/checkpoint persistence, and
// checkpoint evaluation.
//
// A run directory holds
//   config.txt         resolved RunConfig
//   metrics.csv        epoch,train_acc,test_acc,mean_loss,wall_time,unconverged,max_residual
//   ckpt_eNNNN.bin     periodic checkpoints
//   final.ckpt         checkpoint after the last epoch
//   summary.json

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "checkpoint.hpp"
#include "config.hpp"
#include "dataio.hpp"
#include "train.hpp"

namespace oimep {

struct RunData {
    Dataset train;
    Dataset test;
};

/// Directory holding the IDX files for cfg.dataset. Looks for a `mnist` or
/// `fmnist` subdirectory of the data root first, then the root itself.
inline std::filesystem::path dataset_dir(const RunConfig& cfg) {
    const std::filesystem::path root = cfg.data_dir.empty() ? default_data_dir() : std::filesystem::path(cfg.data_dir);
    const std::filesystem::path sub = root / (cfg.dataset == "fmnist" ? "fmnist" : "mnist");
    return std::filesystem::is_directory(sub) ? sub : root;
}

inline RunData load_run_data(const RunConfig& cfg) {
    const IdxPaths p = idx_paths(dataset_dir(cfg));
    Dataset train = load_idx(p.train_images, p.train_labels);
    Dataset test = load_idx(p.test_images, p.test_labels);
    RunData d;
    if (cfg.dataset == "mnist100") {
        auto [tr, te] = make_mnist100(train, test, cfg.effective_subset_seed());
        d.train = std::move(tr);
        d.test = std::move(te);
    } else {
        d.train = std::move(train);
        d.test = std::move(test);
    }
    auto head = [](const Dataset& ds, std::size_t n) {
        std::vector<std::size_t> idx(std::min(n, ds.size()));
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        return subset(ds, idx);
    };
    if (cfg.train_limit > 0) d.train = head(d.train, cfg.train_limit);
    if (cfg.test_limit > 0) d.test = head(d.test, cfg.test_limit);
    return d;
}

inline std::string metrics_header() {
    return "epoch,train_acc,test_acc,mean_loss,wall_time,unconverged,max_residual";
}

inline std::string metrics_row(const EpochMetrics& m) {
    std::ostringstream os;
    os << std::setprecision(17) << m.epoch << ',' << m.train_acc << ',' << m.test_acc << ',' << m.mean_loss << ','
       << m.wall_time << ',' << m.unconverged << ',' << m.max_residual;
    return os.str();
}

inline EpochMetrics parse_metrics_row(const std::string& line) {
    std::istringstream is(line);
    std::string f;
    std::vector<std::string> v;
    while (std::getline(is, f, ',')) v.push_back(f);
    if (v.size() != 7) throw FormatError("metrics row has " + std::to_string(v.size()) + " fields: " + line);
    EpochMetrics m;
    m.epoch = std::stoull(v[0]);
    m.train_acc = std::stod(v[1]);
    m.test_acc = std::stod(v[2]);
    m.mean_loss = std::stod(v[3]);
    m.wall_time = std::stod(v[4]);
    m.unconverged = std::stoull(v[5]);
    m.max_residual = std::stod(v[6]);
    return m;
}

inline std::vector<EpochMetrics> read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open metrics " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != metrics_header()) throw FormatError("unexpected metrics header in " + path.string());
    std::vector<EpochMetrics> out;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(parse_metrics_row(line));
    return out;
}

inline std::string checkpoint_name(std::size_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ckpt_e%04zu.bin", epoch);
    return buf;
}

struct RunOutcome {
    TrainState state;
    std::vector<EpochMetrics> history; ///< all epochs, including those before a resume
};

/// Trains cfg into cfg.out_dir. With `resume`, continues from that checkpoint;
/// metrics rows after the checkpoint's epoch are discarded and rewritten.
/// `log` receives one line per epoch (may be null).
inline RunOutcome run_training(const RunConfig& cfg, const std::filesystem::path* resume = nullptr,
                               std::ostream* log = nullptr) {
    cfg.validate();
    const std::filesystem::path out = cfg.out_dir;
    std::filesystem::create_directories(out);
    {
        std::ofstream c(out / "config.txt");
        c << to_text(cfg);
        if (!c) throw ConfigError("cannot write " + (out / "config.txt").string());
    }
    const RunData data = load_run_data(cfg);
    const Eigen::Index n_y = 10;

    RunOutcome res;
    std::optional<TrainState> start;
    if (resume) {
        Checkpoint ck = load_checkpoint(*resume);
        if (ck.state.net.n_x() != data.train.n_inputs() || ck.state.net.n_h() != cfg.n_h)
            throw ConfigError("resume checkpoint does not match the configured architecture");
        const auto metrics_path = out / "metrics.csv";
        if (std::filesystem::exists(metrics_path))
            for (const auto& m : read_metrics(metrics_path))
                if (m.epoch <= ck.state.epoch) res.history.push_back(m);
        start = std::move(ck.state);
    }
    const NetworkParams init = init_network(data.train.n_inputs(), cfg.n_h, n_y, derive_seed(cfg.ep.seed, {0x696e6974ULL}));

    auto write_metrics = [&] {
        std::ofstream m(out / "metrics.csv", std::ios::trunc);
        m << metrics_header() << '\n';
        for (const auto& e : res.history) m << metrics_row(e) << '\n';
    };
    write_metrics();

    TrainOptions opts;
    opts.threads = cfg.threads;
    opts.target_low = cfg.target_low;
    TrainCallbacks cb;
    cb.on_epoch_end = [&](const EpochMetrics& m, const TrainState& st) {
        res.history.push_back(m);
        write_metrics();
        if (m.epoch % cfg.checkpoint_every == 0 || m.epoch == cfg.ep.epochs)
            save_checkpoint(out / checkpoint_name(m.epoch), Checkpoint{cfg, st});
        if (log)
            *log << "epoch " << m.epoch << "  train " << std::fixed << std::setprecision(4) << m.train_acc << "  test "
                 << m.test_acc << "  loss " << m.mean_loss << "  unconverged " << m.unconverged << "  max_residual "
                 << std::scientific << std::setprecision(2) << m.max_residual << std::defaultfloat << "  "
                 << std::setprecision(1) << std::fixed << m.wall_time << "s" << std::defaultfloat << std::endl;
    };

    TrainResult tr = train(data.train, &data.test, init, cfg.ep, cfg.hw, opts, cb, std::move(start));
    res.state = std::move(tr.state);
    save_checkpoint(out / "final.ckpt", Checkpoint{cfg, res.state});

    nlohmann::json j;
    j["epochs_completed"] = res.state.epoch;
    j["train_size"] = data.train.size();
    j["test_size"] = data.test.size();
    if (!res.history.empty()) {
        const auto& last = res.history.back();
        j["final_train_acc"] = last.train_acc;
        j["final_test_acc"] = last.test_acc;
        j["final_mean_loss"] = last.mean_loss;
        double best = 0.0;
        for (const auto& m : res.history) best = std::max(best, m.test_acc);
        j["best_test_acc"] = best;
    }
    std::ofstream(out / "summary.json") << j.dump(2) << '\n';
    return res;
}

struct EvalResult {
    double accuracy = 0.0;
    std::vector<std::vector<std::size_t>> confusion; ///< [true][predicted]
    std::size_t n = 0;
};

/// Evaluates a checkpoint on its configured test split (or train split),
/// with the same noise stream the training loop used for that epoch, so a
/// checkpoint reproduces its logged test accuracy exactly.
inline EvalResult evaluate_checkpoint(const Checkpoint& ck, const Dataset& data) {
    std::vector<int> pred;
    EvalResult r;
    r.accuracy = evaluate(ck.state.net, data, ck.config.ep, ck.config.hw, ck.state.epoch, ck.config.threads, &pred);
    const auto k = static_cast<std::size_t>(ck.state.net.n_y());
    r.confusion.assign(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto t = static_cast<std::size_t>(data.labels[i]);
        if (t < k && pred[i] >= 0 && static_cast<std::size_t>(pred[i]) < k) ++r.confusion[t][static_cast<std::size_t>(pred[i])];
    }
    r.n = data.size();
    return r;
}

} // namespace oimep
