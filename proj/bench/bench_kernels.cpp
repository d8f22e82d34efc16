// Compares the serial and OpenMP matmul kernels and verifies they agree
// bit-for-bit (the parallel kernel keeps the serial per-row accumulation
// order).

#include <chrono>
#include <cstdio>
#include <functional>
#include <cstring>
#include <vector>

#include "csasr/rng.hpp"
#include "csasr/tensor.hpp"

using namespace csasr;

namespace {

double time_ms(const std::function<void()>& f, int reps) {
  f();  // warmup
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
  Rng rng(42);
  std::printf("%8s %8s %8s | %10s %10s %8s %s\n", "m", "k", "n", "serial_ms",
              "omp_ms", "speedup", "bitwise");
  for (auto [m, k, n] : {std::tuple{64, 64, 64},
                         {256, 256, 256},
                         {512, 512, 512},
                         {128, 512, 2048},
                         {1024, 80, 512}}) {
    std::vector<double> a(size_t(m * k)), b(size_t(k * n));
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    std::vector<double> cs(size_t(m * n)), cp(size_t(m * n));
    int reps = m * n <= 256 * 256 ? 20 : 5;
    double ts = time_ms([&] { matmul_serial(a.data(), b.data(), cs.data(), m, k, n); }, reps);
    double tp = time_ms([&] { matmul_parallel(a.data(), b.data(), cp.data(), m, k, n); }, reps);
    bool same = std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(double)) == 0;
    std::printf("%8d %8d %8d | %10.3f %10.3f %7.2fx %s\n", m, k, n, ts, tp,
                ts / tp, same ? "yes" : "NO");
    if (!same) return 1;
  }
  return 0;
}
