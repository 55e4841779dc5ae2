#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace titan {

template <class S> using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <class S> using ArrayXX = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S> using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S> using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using ArrayXXi = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic>;
using ArrayXXb = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Rejected input: a caller violated an operation's precondition.
struct InvalidInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed or truncated file. Carries the byte offset where parsing stopped.
struct IoError : std::runtime_error {
  std::int64_t byte_offset = -1;
  explicit IoError(const std::string& what, std::int64_t offset = -1)
      : std::runtime_error(offset >= 0 ? what + " (byte offset " + std::to_string(offset) + ")"
                                       : what),
        byte_offset(offset) {}
};

/// Numerical failure that jitter/stabilisation could not repair.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite quantity. `component` names the first
/// offending loss term or score.
struct TrainingDivergence : std::runtime_error {
  std::string component;
  explicit TrainingDivergence(const std::string& comp)
      : std::runtime_error("training diverged: non-finite " + comp), component(comp) {}
};

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

}  // namespace titan
