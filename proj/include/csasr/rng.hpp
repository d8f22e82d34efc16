#pragma once

#include <cstdint>
#include <random>

namespace csasr {

// Single seedable RNG shared by every stochastic op (init, dropout, masking,
// shuffling). Identical seed => bit-identical runs.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : gen_(seed) {}

  void seed(uint64_t s) { gen_.seed(s); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }
  // in [0, n)
  int64_t randint(int64_t n) {
    return std::uniform_int_distribution<int64_t>(0, n - 1)(gen_);
  }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(gen_); }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace csasr
