#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace oimep {

/// Shapes of two operands disagree.
class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// A phase became NaN/Inf during integration.
class NonFiniteError : public std::runtime_error {
  public:
    NonFiniteError(std::size_t index, const std::string& where)
        : std::runtime_error(where + ": non-finite phase at oscillator " + std::to_string(index)),
          index_(index) {}

    std::size_t index() const noexcept { return index_; }

  private:
    std::size_t index_;
};

/// A phase magnitude exceeded the divergence guard (usually epsilon too large).
class DivergenceError : public std::runtime_error {
  public:
    DivergenceError(std::size_t index, double value, double guard)
        : std::runtime_error("relaxation diverged: |phi[" + std::to_string(index) + "]| = " +
                             std::to_string(value) + " exceeds guard " + std::to_string(guard)),
          index_(index) {}

    std::size_t index() const noexcept { return index_; }

  private:
    std::size_t index_;
};

/// Malformed input files (IDX, checkpoints, configs).
class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace oimep
