#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace oimep {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Folds a key tuple into a master seed. Distinct tuples give unrelated streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> key) noexcept {
    std::uint64_t s = mix64(master);
    for (auto k : key) s = mix64(s ^ mix64(k + 0x632be59bd9b4e019ULL));
    return s;
}

__extension__ typedef unsigned __int128 uint128_t;

/// Unbiased draw from [0, bound) (Lemire's multiply-shift with rejection).
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
    uint128_t m = static_cast<uint128_t>(rng()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
        const std::uint64_t threshold = (0 - bound) % bound;
        while (low < threshold) {
            m = static_cast<uint128_t>(rng()) * bound;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

/// In-place Fisher-Yates shuffle. Same seed, same permutation on every platform.
template <class T>
void fisher_yates(std::vector<T>& v, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[bounded(rng, i)]);
}

/// Labels for the three relaxation phases of one EP example.
enum class PhaseTag : std::uint64_t { free = 1, plus = 2, minus = 3, eval = 4 };

/// Gaussian phase-noise source for one relaxation.
///
/// Each increment is xi * sqrt(epsilon) * N(0, 1) per oscillator
/// (Euler-Maruyama discretisation of d(phi) = v dt' + xi dW), so trajectory
/// statistics do not depend on the step size.
class NoiseStream {
  public:
    NoiseStream(double xi, std::uint64_t seed) : xi_(xi), rng_(seed) {}

    double xi() const noexcept { return xi_; }
    bool active() const noexcept { return xi_ > 0.0; }

    double normal() { return dist_(rng_); }

    /// Scale of a single step's increment.
    double step_scale(double epsilon) const { return xi_ * std::sqrt(epsilon); }

  private:
    double xi_;
    std::mt19937_64 rng_;
    std::normal_distribution<double> dist_{0.0, 1.0};
};

/// Per-oscillator Gaussian increment for one Euler-Maruyama step.
inline Eigen::VectorXd noise_increment(Eigen::Index n, double xi, double epsilon, NoiseStream& rng) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    if (xi <= 0.0) return out;
    const double scale = xi * std::sqrt(epsilon);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = scale * rng.normal();
    return out;
}

} // namespace oimep
