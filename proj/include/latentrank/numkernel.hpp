#pragma once

// Dense row-major matrices, a portable seeded random source, and the
// elementary differentiable operations the rest of the library builds on.
// Everything here is a pure function over value types; no shared state.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "latentrank/errors.hpp"

namespace latentrank {

using Vec = std::vector<double>;

inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

// Shortest decimal form that survives a text round trip exactly.
inline std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major, rows*cols entries

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  bool same_shape(const DenseMatrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline void require_finite(std::span<const double> v, const char* what) {
  if (!all_finite(v)) {
    throw NumericError(std::string("non-finite values in ") + what);
  }
}

// ---------------------------------------------------------------------------
// Random source.
//
// The engine is std::mt19937_64, whose output sequence for a given seed is
// pinned bit-exactly by the C++ standard. Every variate below is derived
// from raw 64-bit draws using only arithmetic the IEEE-754 spec fixes, so
// seeded sequences replay identically across platforms and standard
// libraries:
//   u01     (raw >> 11) * 2^-53, uniform in [0,1) with 53-bit resolution
//   below   unbiased rejection sampling, then modulo
//   normal  Irwin-Hall sum of 12 u01 draws minus 6 (approximate gaussian,
//           support [-6,6]; chosen over Box-Muller so no libm call whose
//           rounding could vary by platform enters the sequence)
// ---------------------------------------------------------------------------
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  double u01() {
    return static_cast<double>(raw() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ConfigError("Rng::below: bound must be positive");
    const std::uint64_t t = (0 - n) % n;  // 2^64 mod n
    std::uint64_t r = raw();
    while (r < t) r = raw();
    return r % n;
  }

  double normal() {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += u01();
    return s - 6.0;
  }

  std::string save_state() const {
    std::ostringstream oss;
    oss << engine_;
    return oss.str();
  }

  void restore_state(const std::string& s) {
    std::istringstream iss(s);
    iss >> engine_;
    if (iss.fail()) throw StateError("Rng::restore_state: malformed state string");
  }

  // Fans one root seed out to independent component streams. FNV-1a over the
  // label, xor the root, splitmix64 finalizer.
  static std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

 private:
  std::mt19937_64 engine_;
};

// FNV-1a, 64-bit. Offset basis 14695981039346656037, prime 1099511628211.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t Rng::derive_seed(std::uint64_t root, std::string_view label) {
  std::uint64_t h = fnv1a64(label);
  h ^= root;
  h += 0x9E3779B97F4A7C15ULL;
  h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9ULL;
  h = (h ^ (h >> 27)) * 0x94D049BB133111EBULL;
  return h ^ (h >> 31);
}

// ---------------------------------------------------------------------------
// Matrix products. Plain loops, ikj order; inputs stay untouched. MatView
// lets the products run over matrices embedded in larger buffers (flat
// parameter vectors); DenseMatrix converts implicitly.
// ---------------------------------------------------------------------------

struct MatView {
  const double* ptr;
  std::size_t rows, cols;
  MatView(const DenseMatrix& m) : ptr(m.data.data()), rows(m.rows), cols(m.cols) {}
  MatView(std::span<const double> s, std::size_t r, std::size_t c)
      : ptr(s.data()), rows(r), cols(c) {
    if (s.size() != r * c) {
      throw ShapeError("MatView: span of " + std::to_string(s.size()) +
                       " is not " + shape_str(r, c));
    }
  }
};

inline DenseMatrix matmul(MatView a, MatView b) {
  if (a.cols != b.rows) {
    throw ShapeError("matmul: " + shape_str(a.rows, a.cols) + " times " +
                     shape_str(b.rows, b.cols));
  }
  DenseMatrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.ptr + i * a.cols;
    double* orow = out.data.data() + i * out.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.ptr + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  require_finite(out.data, "matmul result");
  return out;
}

// a^T * b, for weight gradients (in x batch times batch x out).
inline DenseMatrix matmul_tn(MatView a, MatView b) {
  if (a.rows != b.rows) {
    throw ShapeError("matmul_tn: " + shape_str(a.rows, a.cols) + " vs " +
                     shape_str(b.rows, b.cols));
  }
  DenseMatrix out(a.cols, b.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double* arow = a.ptr + r * a.cols;
    const double* brow = b.ptr + r * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double ari = arow[i];
      if (ari == 0.0) continue;
      double* orow = out.data.data() + i * out.cols;
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += ari * brow[j];
    }
  }
  require_finite(out.data, "matmul_tn result");
  return out;
}

// a * b^T, for input gradients (batch x out times out x in read transposed).
inline DenseMatrix matmul_nt(MatView a, MatView b) {
  if (a.cols != b.cols) {
    throw ShapeError("matmul_nt: " + shape_str(a.rows, a.cols) + " vs " +
                     shape_str(b.rows, b.cols));
  }
  DenseMatrix out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.ptr + i * a.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = b.ptr + j * b.cols;
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      out.at(i, j) = acc;
    }
  }
  require_finite(out.data, "matmul_nt result");
  return out;
}

// ---------------------------------------------------------------------------
// Vector ops.
// ---------------------------------------------------------------------------

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: length " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Unit-norm copy of v. A zero vector is a caller bug, not a value: silent
// zeros would poison every distance downstream, so it throws.
inline Vec l2_normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (n == 0.0) {
    throw DegenerateInputError("l2_normalize: zero vector");
  }
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

inline double euclidean_distance(std::span<const double> a,
                                 std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("euclidean_distance: length " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// Elementwise max(0, x). Backward zeroes the gradient where the forward
// input was <= 0; the subgradient at exactly 0 is defined as 0.
inline Vec relu(std::span<const double> v) {
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  return out;
}

inline Vec relu_backward(std::span<const double> input,
                         std::span<const double> upstream) {
  if (input.size() != upstream.size()) {
    throw ShapeError("relu_backward: length " + std::to_string(input.size()) +
                     " vs " + std::to_string(upstream.size()));
  }
  Vec out(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    out[i] = input[i] > 0.0 ? upstream[i] : 0.0;
  }
  return out;
}

inline DenseMatrix relu_backward(const DenseMatrix& input,
                                 const DenseMatrix& upstream) {
  if (!input.same_shape(upstream)) {
    throw ShapeError("relu_backward: " + shape_str(input.rows, input.cols) +
                     " vs " + shape_str(upstream.rows, upstream.cols));
  }
  DenseMatrix out(input.rows, input.cols);
  out.data = relu_backward(std::span<const double>(input.data),
                           std::span<const double>(upstream.data));
  return out;
}

inline void relu_inplace(DenseMatrix& m) {
  for (double& x : m.data) x = x > 0.0 ? x : 0.0;
}

inline void add_row_vector(DenseMatrix& m, std::span<const double> b) {
  if (m.cols != b.size()) {
    throw ShapeError("add_row_vector: " + shape_str(m.rows, m.cols) +
                     " plus length " + std::to_string(b.size()));
  }
  for (std::size_t i = 0; i < m.rows; ++i) {
    double* row = m.data.data() + i * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) row[j] += b[j];
  }
}

inline Vec column_sums(const DenseMatrix& m) {
  Vec out(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* row = m.data.data() + i * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) out[j] += row[j];
  }
  return out;
}

inline DenseMatrix concat_cols(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows != b.rows) {
    throw ShapeError("concat_cols: " + shape_str(a.rows, a.cols) + " with " +
                     shape_str(b.rows, b.cols));
  }
  DenseMatrix out(a.rows, a.cols + b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    auto arow = a.row(i);
    auto brow = b.row(i);
    double* orow = out.data.data() + i * out.cols;
    for (std::size_t j = 0; j < a.cols; ++j) orow[j] = arow[j];
    for (std::size_t j = 0; j < b.cols; ++j) orow[a.cols + j] = brow[j];
  }
  return out;
}

}  // namespace latentrank
