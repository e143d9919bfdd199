#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace blur {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// --- error taxonomy -------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad argument values, broken invariants (shapes, NaN, non-positive scales).
struct ValidationError : Error {
  using Error::Error;
};

// Flat-vector <-> genome mismatch (wrong length, unknown field set).
struct LayoutError : Error {
  using Error::Error;
};

// Inconsistent experiment configuration (k vs architecture, dims vs task).
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite values produced inside a kernel.
struct NumericError : Error {
  using Error::Error;
};

// Data ingestion problems; IDX files get one subtype per failure mode.
struct DataError : Error {
  using Error::Error;
};
struct IdxMagicError : DataError {
  using DataError::DataError;
};
struct IdxTruncatedError : DataError {
  using DataError::DataError;
};
struct IdxCountError : DataError {
  using DataError::DataError;
};

// --- deterministic random numbers -----------------------------------------
//
// mt19937_64 output is pinned by the standard; the distributions below are
// implemented by hand so streams are bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Unbiased integer in [0, bound) (Lemire's multiply-shift rejection).
  std::uint64_t integer(std::uint64_t bound) {
    unsigned __int128 m = static_cast<unsigned __int128>(engine_()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      std::uint64_t threshold = (-bound) % bound;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(engine_()) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = stddev * normal();
    return m;
  }

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(integer(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64; used to derive independent stream seeds from (seed, salt...).
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return mix_seed(a ^ mix_seed(b));
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b) ^ mix_seed(c));
}

// --- activations ------------------------------------------------------------

enum class Activation { Tanh, Sigmoid, Relu, Identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
  }
  return "tanh";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  throw ValidationError("unknown activation: " + s);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Activation applied elementwise to a pre-activation block.
inline Matrix activate(const Matrix& pre, Activation a) {
  switch (a) {
    case Activation::Tanh: return pre.array().tanh().matrix();
    case Activation::Sigmoid: return pre.unaryExpr([](double x) { return sigmoid(x); });
    case Activation::Relu: return pre.cwiseMax(0.0);
    case Activation::Identity: return pre;
  }
  return pre;
}

// Derivative of the activation evaluated at the pre-activation.
inline Matrix activate_derivative(const Matrix& pre, Activation a) {
  switch (a) {
    case Activation::Tanh: {
      Matrix t = pre.array().tanh().matrix();
      return (1.0 - t.array().square()).matrix();
    }
    case Activation::Sigmoid:
      return pre.unaryExpr([](double x) {
        double s = sigmoid(x);
        return s * (1.0 - s);
      });
    case Activation::Relu:
      return pre.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; });
    case Activation::Identity:
      return Matrix::Ones(pre.rows(), pre.cols());
  }
  return Matrix::Ones(pre.rows(), pre.cols());
}

// --- shared task data -------------------------------------------------------

// One batch of classification data: inputs are batch x input_dim, labels in [0, d).
struct TaskBatch {
  Matrix inputs;
  std::vector<int> labels;

  Eigen::Index size() const { return inputs.rows(); }
};

}  // namespace blur
