#pragma once

#include "csasr/params.hpp"

namespace csasr {

struct Linear {
  Var w, b;
  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out, Rng& rng) {
    w = ps.create(prefix + ".w", {in, out}, rng, "xavier");
    b = ps.create(prefix + ".b", {out}, rng, "zeros");
  }
  Var operator()(const Var& x) const { return add_rowvec(matmul(x, w), b); }
};

struct LayerNorm {
  Var gamma, beta;
  double eps = 1e-5;
  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& prefix, int64_t dim, Rng& rng) {
    gamma = ps.create(prefix + ".gamma", {dim}, rng, "ones");
    beta = ps.create(prefix + ".beta", {dim}, rng, "zeros");
  }
  Var operator()(const Var& x) const { return layer_norm(x, gamma, beta, eps); }
};

// Batch norm over the time axis of a TxD activation. Running statistics live
// outside the autodiff graph and are updated in training mode; inference uses
// them directly. With a single frame the batch variance is zero, so training
// mode falls back to per-frame statistics handled by the caller via eps.
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParamStore& ps, const std::string& prefix, int64_t dim, Rng& rng);
  Var operator()(const Var& x, bool training);

  double eps = 1e-5;
  double momentum = 0.1;
  Var gamma, beta;
  // running stats: checkpointed buffers, never learnable
  Var running_mean, running_var;

 private:
  // frozen modules must not keep mutating their statistics
  const ParamGroup* stats_group_ = nullptr;
};

// Depthwise 1-D conv module over time (kernel per channel).
struct DepthwiseConv {
  Var kernel;  // D x K
  DepthwiseConv() = default;
  DepthwiseConv(ParamStore& ps, const std::string& prefix, int64_t dim,
                int64_t kernel_size, Rng& rng) {
    if (kernel_size % 2 == 0)
      throw std::invalid_argument("depthwise conv kernel must be odd");
    kernel = ps.create(prefix + ".kernel", {dim, kernel_size}, rng, "xavier");
  }
  Var operator()(const Var& x) const { return conv1d_depthwise(x, kernel); }
};

// Sinusoidal absolute positional encodings, rows 0..T-1.
Tensor sinusoidal_positions(int64_t T, int64_t d_model);

}  // namespace csasr
