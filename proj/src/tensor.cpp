#include "csasr/tensor.hpp"

#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace csasr {

namespace {
bool g_parallel = true;
}

void set_parallel_kernels(bool enabled) { g_parallel = enabled; }
bool parallel_kernels_enabled() { return g_parallel; }

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

void matmul_serial(const double* a, const double* b, double* c, int64_t m,
                   int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) ci[j] = 0.0;
    const double* ai = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      double av = ai[p];
      const double* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_parallel(const double* a, const double* b, double* c, int64_t m,
                     int64_t k, int64_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) ci[j] = 0.0;
    const double* ai = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      double av = ai[p];
      const double* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
#else
  matmul_serial(a, b, c, m, k, n);
#endif
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw std::invalid_argument("matmul: incompatible shapes " + a.shape_str() +
                                " " + b.shape_str());
  Tensor c({a.rows(), b.cols()});
  // Parallelism only pays off for real workloads; small products stay serial.
  if (g_parallel && a.rows() >= 16)
    matmul_parallel(a.data.data(), b.data.data(), c.data.data(), a.rows(),
                    a.cols(), b.cols());
  else
    matmul_serial(a.data.data(), b.data.data(), c.data.data(), a.rows(),
                  a.cols(), b.cols());
  return c;
}

}  // namespace csasr
