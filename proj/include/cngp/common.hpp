#pragma once

// Shared vocabulary: error types, small fixed-size vectors, deterministic
// random numbers and the worker fan-out used by rendering and training.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cngp {

// Error hierarchy. The CLI maps each family to an exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

struct FormatError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "FormatError"; }
};

struct ValidationError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "ValidationError"; }
};

struct NumericalError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "NumericalError"; }
};

struct UnknownLabelError : ValidationError {
  using ValidationError::ValidationError;
  const char* kind() const noexcept override { return "UnknownLabelError"; }
};

struct DuplicateLabelError : ValidationError {
  using ValidationError::ValidationError;
  const char* kind() const noexcept override { return "DuplicateLabelError"; }
};

struct MissingCameraError : ValidationError {
  using ValidationError::ValidationError;
  const char* kind() const noexcept override { return "MissingCameraError"; }
};

template <typename Real>
struct Vec3T {
  Real x{}, y{}, z{};

  constexpr Real& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr Real operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  friend constexpr Vec3T operator+(Vec3T a, Vec3T b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3T operator-(Vec3T a, Vec3T b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3T operator*(Vec3T a, Real s) { return {a.x * s, a.y * s, a.z * s}; }
  friend constexpr Vec3T operator*(Real s, Vec3T a) { return a * s; }
  friend constexpr bool operator==(Vec3T a, Vec3T b) = default;

  template <typename Other>
  constexpr Vec3T<Other> cast() const {
    return {static_cast<Other>(x), static_cast<Other>(y), static_cast<Other>(z)};
  }
};

using Vec3 = Vec3T<double>;

template <typename Real>
constexpr Real dot(Vec3T<Real> a, Vec3T<Real> b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

template <typename Real>
constexpr Vec3T<Real> cross(Vec3T<Real> a, Vec3T<Real> b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

template <typename Real>
Real norm(Vec3T<Real> a) {
  return std::sqrt(dot(a, a));
}

template <typename Real>
Vec3T<Real> normalize(Vec3T<Real> a) {
  return a * (Real(1) / norm(a));
}

// 4x4 row-major matrix, used for camera-to-world poses.
using Mat4 = std::array<std::array<double, 4>, 4>;

inline Mat4 identity4() {
  Mat4 m{};
  for (int i = 0; i < 4; ++i) m[i][i] = 1.0;
  return m;
}

using Rng = std::mt19937_64;

// Uniform in [0, 1) with a fixed bit-level recipe so results do not depend on
// the standard library's distribution implementation.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

// Fisher-Yates with uniform_index, reproducible across standard libraries.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

inline bool all_finite(const std::vector<float>& v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

inline int default_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

// Runs fn(task) for task in [0, n_tasks) on up to n_threads workers. Tasks are
// assigned round-robin so every task always runs with the same inputs; any
// reduction over task results is left to the caller in task order.
inline void parallel_for(int n_tasks, int n_threads, const std::function<void(int)>& fn) {
  n_threads = std::max(1, std::min(n_threads, n_tasks));
  if (n_threads == 1) {
    for (int t = 0; t < n_tasks; ++t) fn(t);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(n_threads);
  for (int w = 0; w < n_threads; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (int t = w; t < n_tasks; t += n_threads) fn(t);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : workers) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// 64-bit FNV-1a, used for fingerprints and history digests.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ull) {
  return fnv1a(s.data(), s.size(), h);
}

}  // namespace cngp
