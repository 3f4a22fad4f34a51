#pragma once

// Run configuration: a flat `key = value` text format with `#` comments.
// Presets seed a config; files and `--set key=value` overrides refine it.
// `to_text` writes every key, so a run directory's config.txt reproduces the
// run exactly.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ep.hpp"
#include "errors.hpp"
#include "hardware.hpp"

namespace oimep {

struct RunConfig {
    std::string preset = "none";
    std::string dataset = "mnist100"; ///< mnist | fmnist | mnist100
    std::string data_dir;             ///< empty: $OIMEP_DATA_DIR or ./data
    std::string out_dir = "runs/default";
    int n_h = 120;
    EpConfig ep;
    HardwareConfig hw;
    double target_low = -1.0;
    std::size_t checkpoint_every = 1;
    unsigned threads = 1;
    std::optional<std::uint64_t> subset_seed; ///< MNIST/100 selection; defaults to ep.seed
    std::size_t train_limit = 0;              ///< use only the first N training rows (0 = all)
    std::size_t test_limit = 0;

    std::uint64_t effective_subset_seed() const { return subset_seed.value_or(ep.seed); }

    void validate() const {
        if (dataset != "mnist" && dataset != "fmnist" && dataset != "mnist100")
            throw ConfigError("dataset must be one of mnist, fmnist, mnist100 (got '" + dataset + "')");
        if (n_h < 1) throw ConfigError("n_h must be >= 1");
        if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
        if (threads < 1) throw ConfigError("threads must be >= 1");
        ep.validate();
        hw.validate();
    }
};

inline RunConfig preset_config(const std::string& name) {
    RunConfig c;
    c.preset = name;
    if (name == "mnist100-paper") {
        c.dataset = "mnist100";
        c.n_h = 120;
        c.ep.free_steps = 3500;
        c.ep.nudge_steps = 350;
        c.ep.epsilon = 0.5;
        c.ep.beta = 0.05;
        c.ep.batch_size = 20;
        c.ep.epochs = 100;
        c.checkpoint_every = 1;
    } else if (name == "mnist-paper" || name == "fmnist-paper") {
        c.dataset = name == "mnist-paper" ? "mnist" : "fmnist";
        c.n_h = 500;
        c.ep.free_steps = 4000;
        c.ep.nudge_steps = 400;
        c.ep.epsilon = 0.45;
        c.ep.beta = 0.1;
        c.ep.batch_size = 128;
        c.ep.epochs = 50;
        c.checkpoint_every = 5;
    } else if (name != "none") {
        throw ConfigError("unknown preset '" + name + "' (known: mnist100-paper, mnist-paper, fmnist-paper)");
    }
    c.ep.lr_w_xh = 0.01;
    c.ep.lr_w_hy = 0.001;
    c.ep.lr_b_h = 0.001;
    c.ep.lr_b_y = 0.001;
    return c;
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    std::istringstream is(v);
    T out{};
    is >> out;
    if (!is || !is.eof()) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

// Ordered so that to_text output is stable.
inline const std::vector<std::pair<std::string, Field>>& fields() {
    using R = RunConfig;
    static const std::vector<std::pair<std::string, Field>> table = {
        {"preset", {[](const R& c) { return c.preset; }, [](R& c, const std::string& v) { c.preset = v; }}},
        {"dataset", {[](const R& c) { return c.dataset; }, [](R& c, const std::string& v) { c.dataset = v; }}},
        {"data_dir", {[](const R& c) { return c.data_dir; }, [](R& c, const std::string& v) { c.data_dir = v; }}},
        {"out_dir", {[](const R& c) { return c.out_dir; }, [](R& c, const std::string& v) { c.out_dir = v; }}},
        {"n_h", {[](const R& c) { return std::to_string(c.n_h); },
                 [](R& c, const std::string& v) { c.n_h = parse_number<int>("n_h", v); }}},
        {"beta", {[](const R& c) { return fmt_double(c.ep.beta); },
                  [](R& c, const std::string& v) { c.ep.beta = parse_number<double>("beta", v); }}},
        {"epsilon", {[](const R& c) { return fmt_double(c.ep.epsilon); },
                     [](R& c, const std::string& v) { c.ep.epsilon = parse_number<double>("epsilon", v); }}},
        {"free_steps", {[](const R& c) { return std::to_string(c.ep.free_steps); },
                        [](R& c, const std::string& v) { c.ep.free_steps = parse_number<std::size_t>("free_steps", v); }}},
        {"nudge_steps", {[](const R& c) { return std::to_string(c.ep.nudge_steps); },
                         [](R& c, const std::string& v) { c.ep.nudge_steps = parse_number<std::size_t>("nudge_steps", v); }}},
        {"lr_w_xh", {[](const R& c) { return fmt_double(c.ep.lr_w_xh); },
                     [](R& c, const std::string& v) { c.ep.lr_w_xh = parse_number<double>("lr_w_xh", v); }}},
        {"lr_w_hy", {[](const R& c) { return fmt_double(c.ep.lr_w_hy); },
                     [](R& c, const std::string& v) { c.ep.lr_w_hy = parse_number<double>("lr_w_hy", v); }}},
        {"lr_b_h", {[](const R& c) { return fmt_double(c.ep.lr_b_h); },
                    [](R& c, const std::string& v) { c.ep.lr_b_h = parse_number<double>("lr_b_h", v); }}},
        {"lr_b_y", {[](const R& c) { return fmt_double(c.ep.lr_b_y); },
                    [](R& c, const std::string& v) { c.ep.lr_b_y = parse_number<double>("lr_b_y", v); }}},
        {"batch_size", {[](const R& c) { return std::to_string(c.ep.batch_size); },
                        [](R& c, const std::string& v) { c.ep.batch_size = parse_number<std::size_t>("batch_size", v); }}},
        {"epochs", {[](const R& c) { return std::to_string(c.ep.epochs); },
                    [](R& c, const std::string& v) { c.ep.epochs = parse_number<std::size_t>("epochs", v); }}},
        {"seed", {[](const R& c) { return std::to_string(c.ep.seed); },
                  [](R& c, const std::string& v) { c.ep.seed = parse_number<std::uint64_t>("seed", v); }}},
        {"momentum", {[](const R& c) { return fmt_double(c.ep.momentum); },
                      [](R& c, const std::string& v) { c.ep.momentum = parse_number<double>("momentum", v); }}},
        {"weight_decay", {[](const R& c) { return fmt_double(c.ep.weight_decay); },
                          [](R& c, const std::string& v) { c.ep.weight_decay = parse_number<double>("weight_decay", v); }}},
        {"convergence_threshold",
         {[](const R& c) { return fmt_double(c.ep.convergence_threshold); },
          [](R& c, const std::string& v) { c.ep.convergence_threshold = parse_number<double>("convergence_threshold", v); }}},
        {"divergence_guard",
         {[](const R& c) { return fmt_double(c.ep.divergence_guard); },
          [](R& c, const std::string& v) { c.ep.divergence_guard = parse_number<double>("divergence_guard", v); }}},
        {"target_low", {[](const R& c) { return fmt_double(c.target_low); },
                        [](R& c, const std::string& v) { c.target_low = parse_number<double>("target_low", v); }}},
        {"noise_xi", {[](const R& c) { return fmt_double(c.hw.noise_xi); },
                      [](R& c, const std::string& v) { c.hw.noise_xi = parse_number<double>("noise_xi", v); }}},
        {"phase_bits", {[](const R& c) { return c.hw.phase_bits ? std::to_string(*c.hw.phase_bits) : std::string("none"); },
                        [](R& c, const std::string& v) {
                            if (v == "none" || v.empty()) c.hw.phase_bits.reset();
                            else c.hw.phase_bits = parse_number<int>("phase_bits", v);
                        }}},
        {"param_bits", {[](const R& c) { return c.hw.param_bits ? std::to_string(*c.hw.param_bits) : std::string("none"); },
                        [](R& c, const std::string& v) {
                            if (v == "none" || v.empty()) c.hw.param_bits.reset();
                            else c.hw.param_bits = parse_number<int>("param_bits", v);
                        }}},
        {"param_range", {[](const R& c) { return fmt_double(c.hw.param_range); },
                         [](R& c, const std::string& v) { c.hw.param_range = parse_number<double>("param_range", v); }}},
        {"noise_seed", {[](const R& c) { return std::to_string(c.hw.noise_seed); },
                        [](R& c, const std::string& v) { c.hw.noise_seed = parse_number<std::uint64_t>("noise_seed", v); }}},
        {"quantize_in_dynamics", {[](const R& c) { return std::string(c.hw.quantize_in_dynamics ? "true" : "false"); },
                                  [](R& c, const std::string& v) { c.hw.quantize_in_dynamics = parse_bool("quantize_in_dynamics", v); }}},
        {"checkpoint_every", {[](const R& c) { return std::to_string(c.checkpoint_every); },
                              [](R& c, const std::string& v) { c.checkpoint_every = parse_number<std::size_t>("checkpoint_every", v); }}},
        {"threads", {[](const R& c) { return std::to_string(c.threads); },
                     [](R& c, const std::string& v) { c.threads = parse_number<unsigned>("threads", v); }}},
        {"subset_seed", {[](const R& c) { return c.subset_seed ? std::to_string(*c.subset_seed) : std::string("auto"); },
                         [](R& c, const std::string& v) {
                             if (v == "auto" || v.empty()) c.subset_seed.reset();
                             else c.subset_seed = parse_number<std::uint64_t>("subset_seed", v);
                         }}},
        {"train_limit", {[](const R& c) { return std::to_string(c.train_limit); },
                         [](R& c, const std::string& v) { c.train_limit = parse_number<std::size_t>("train_limit", v); }}},
        {"test_limit", {[](const R& c) { return std::to_string(c.test_limit); },
                        [](R& c, const std::string& v) { c.test_limit = parse_number<std::size_t>("test_limit", v); }}},
    };
    return table;
}

} // namespace detail

/// Sets one key. Unknown keys are an error. Setting `preset` resets every
/// other field to that preset's values.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    if (key == "preset") {
        c = preset_config(value);
        return;
    }
    for (const auto& [name, f] : detail::fields())
        if (name == key) {
            f.set(c, value);
            return;
        }
    throw ConfigError("unknown config key '" + key + "'");
}

/// Applies a `key = value` override string.
inline void apply_override(RunConfig& c, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
    set_config_value(c, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

/// Parses config text on top of `base`. A `preset` line, if present, must come first.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        try {
            apply_override(base, line);
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return base;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

inline std::string to_text(const RunConfig& c) {
    std::ostringstream os;
    for (const auto& [name, f] : detail::fields()) os << name << " = " << f.get(c) << '\n';
    return os.str();
}

} // namespace oimep
