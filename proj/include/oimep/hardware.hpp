#pragma once

// Hardware non-idealities: Gaussian phase noise in the dynamics (see
// noise.hpp), finite-resolution phase readout, and finite-resolution
// parameter storage.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>

#include <Eigen/Dense>

#include "errors.hpp"
#include "network.hpp"
#include "noise.hpp"
#include "oim.hpp"

namespace oimep {

struct HardwareConfig {
    double noise_xi = 0.0;              ///< phase-noise diffusion scale
    std::optional<int> phase_bits;      ///< readout resolution; empty = ideal
    std::optional<int> param_bits;      ///< parameter storage resolution; empty = ideal
    double param_range = 1.0;           ///< symmetric clipping bound per tensor
    std::uint64_t noise_seed = 0;
    bool quantize_in_dynamics = false;  ///< also quantise phases after every Euler step

    void validate() const {
        if (!(noise_xi >= 0.0)) throw ConfigError("HardwareConfig: noise_xi must be >= 0");
        if (phase_bits && (*phase_bits < 1 || *phase_bits > 52)) throw ConfigError("HardwareConfig: phase_bits must be in [1, 52]");
        if (param_bits && (*param_bits < 1 || *param_bits > 52)) throw ConfigError("HardwareConfig: param_bits must be in [1, 52]");
        if (!(param_range > 0.0)) throw ConfigError("HardwareConfig: param_range must be > 0");
        if (quantize_in_dynamics && !phase_bits) throw ConfigError("HardwareConfig: quantize_in_dynamics needs phase_bits");
    }

    bool ideal() const noexcept { return noise_xi == 0.0 && !phase_bits && !param_bits; }
};

/// Rounds one phase to the nearest of 2^bits levels k * 2pi / 2^bits in [0, 2pi).
inline double quantize_phase(double phi, int bits) {
    if (bits < 1) throw ConfigError("quantize_phase: bits must be >= 1");
    constexpr double two_pi = 2.0 * 3.14159265358979323846;
    const double levels = std::ldexp(1.0, bits);
    const double step = two_pi / levels;
    double k = std::nearbyint(wrap_phase(phi) / step);
    if (k >= levels) k -= levels;
    return k * step;
}

inline Vector quantize_phase(const Vector& phases, int bits) {
    Vector out(phases.size());
    for (Eigen::Index i = 0; i < phases.size(); ++i) out[i] = quantize_phase(phases[i], bits);
    return out;
}

inline PhaseState quantize_phase(const PhaseState& s, int bits) { return PhaseState(quantize_phase(s.phases, bits)); }

/// Clips to [-r, r] and rounds to the nearest of 2^bits levels spanning [-r, r].
inline double quantize_value(double v, int bits, double range) {
    if (bits < 1) throw ConfigError("quantize_value: bits must be >= 1");
    if (!(range > 0.0)) throw ConfigError("quantize_value: range must be > 0");
    const double top = std::ldexp(1.0, bits) - 1.0;
    const double spacing = 2.0 * range / top;
    const double clipped = std::clamp(v, -range, range);
    const double k = std::nearbyint((clipped + range) / spacing);
    return k >= top ? range : -range + k * spacing;
}

inline NetworkParams quantize_params(const NetworkParams& net, int bits, double range) {
    NetworkParams q = net;
    q.for_each_tensor([&](const char*, auto& t) { t = t.unaryExpr([&](double v) { return quantize_value(v, bits, range); }); });
    return q;
}

/// Applies the configured parameter quantisation, if any.
inline NetworkParams apply_param_quantization(const NetworkParams& net, const HardwareConfig& hw) {
    return hw.param_bits ? quantize_params(net, *hw.param_bits, hw.param_range) : net;
}

/// Applies the configured readout quantisation, if any.
inline PhaseState measure(const PhaseState& s, const HardwareConfig& hw) {
    return hw.phase_bits ? quantize_phase(s, *hw.phase_bits) : s;
}

} // namespace oimep
