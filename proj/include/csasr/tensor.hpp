#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace csasr {

// Dense row-major tensor of doubles. Plain value type; the autodiff layer
// wraps these in graph nodes.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }
  Tensor(std::vector<int64_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
      throw std::invalid_argument("tensor: shape/data size mismatch");
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
  }
  static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int64_t> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(size_t i) const { return shape.at(i); }
  size_t rank() const { return shape.size(); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // 2-D accessors (rows x cols)
  int64_t rows() const { return shape.at(0); }
  int64_t cols() const { return shape.at(1); }
  double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  std::string shape_str() const;
};

// C = A(MxK) * B(KxN). The parallel version splits rows across threads;
// per-row accumulation order is identical to the serial one, so results
// are bit-identical.
void matmul_serial(const double* a, const double* b, double* c, int64_t m,
                   int64_t k, int64_t n);
void matmul_parallel(const double* a, const double* b, double* c, int64_t m,
                     int64_t k, int64_t n);

Tensor matmul(const Tensor& a, const Tensor& b);

// Toggle for the OpenMP path (on by default when compiled with OpenMP).
void set_parallel_kernels(bool enabled);
bool parallel_kernels_enabled();

}  // namespace csasr
