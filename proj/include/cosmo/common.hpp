#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cosmo {

template <class S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using MatrixF = MatrixX<float>;
using VectorF = VectorX<float>;
using MatrixD = MatrixX<double>;
using VectorD = VectorX<double>;

/// Raised when inputs, configs, or file contents violate a documented contract.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised for filesystem and serialization failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when training encounters a non-recoverable runtime condition.
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

inline std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed = kFnvOffset) {
  std::uint64_t h = seed;
  for (unsigned char c : text) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed = kFnvOffset) {
  std::uint64_t h = seed;
  for (std::byte b : bytes) {
    h ^= static_cast<unsigned char>(b);
    h *= kFnvPrime;
  }
  return h;
}

/// Byte-level checksum of a dense Eigen matrix or vector, used by the
/// freeze-invariant checks. Identical bytes <=> identical checksum is all we
/// need; this is not a cryptographic digest.
template <class Derived>
std::uint64_t checksum(const Eigen::MatrixBase<Derived>& m) {
  using S = typename Derived::Scalar;
  const auto& eval = m.derived().eval();
  std::span<const std::byte> bytes(reinterpret_cast<const std::byte*>(eval.data()),
                                   static_cast<std::size_t>(eval.size()) * sizeof(S));
  return fnv1a64(bytes);
}

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Deterministic, portable random stream. One 64-bit word of state keeps
/// checkpointing trivial; splitmix64 is strong enough for initialization and
/// shuffling. Derived streams (fork) are decorrelated via string labels, so
/// `seed` plus a label fully determines every draw in the program.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // Avoid the weak all-zero start without changing distinct seeds' streams.
    splitmix64_next(state_);
  }

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_below(std::uint64_t n) {
    // Modulo bias is irrelevant at the sizes used here (shuffles, ids).
    return next_u64() % n;
  }

  /// Standard normal via Box-Muller (cosine branch only, so the state stays
  /// a single word with no cached spare).
  double gaussian() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Derived stream keyed by a label; independent of draws on this stream.
  Rng fork(std::string_view label) const {
    return Rng(fnv1a64(label, state_ ^ 0x6a09e667f3bcc909ull));
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

template <class S>
VectorX<S> l2_normalized(const VectorX<S>& v) {
  const S n = v.norm();
  if (!(n > S(0))) {
    throw ValidationError("cannot normalize a zero-length vector");
  }
  return v / n;
}

/// Relative difference used by the finite-difference gradient checks.
inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-10});
  return std::abs(a - b) / scale;
}

}  // namespace cosmo
