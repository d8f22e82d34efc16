#include "csasr/layers.hpp"

#include <cmath>

namespace csasr {

BatchNorm::BatchNorm(ParamStore& ps, const std::string& prefix, int64_t dim, Rng& rng) {
  gamma = ps.create(prefix + ".gamma", {dim}, rng, "ones");
  beta = ps.create(prefix + ".beta", {dim}, rng, "zeros");
  running_mean = ps.create_buffer(prefix + ".running_mean", {dim}, 0.0);
  running_var = ps.create_buffer(prefix + ".running_var", {dim}, 1.0);
  stats_group_ = &ps.groups().at(prefix + ".running_mean");
}

Var BatchNorm::operator()(const Var& x, bool training) {
  int64_t T = x->value.rows(), D = x->value.cols();
  if (gamma->value.numel() != D)
    throw std::invalid_argument("batch_norm: channel mismatch");
  if (training && T == 1) {
    // single frame: batch variance degenerates to zero, use layer statistics
    return layer_norm(x, gamma, beta, eps);
  }
  if (training) {
    Var ones_row = constant(Tensor::full({1, T}, 1.0));
    Var mu = scale(matmul(ones_row, x), 1.0 / T);              // 1xD
    Var neg_mu = scale(reshape(mu, {D}), -1.0);
    Var xc = add_rowvec(x, neg_mu);
    Var var_row = scale(matmul(ones_row, square(xc)), 1.0 / T);  // biased
    Var var_vec = reshape(var_row, {D});
    Var inv_std = rsqrt_eps(var_vec, eps);
    Var y = mul_rowvec(mul_rowvec(xc, inv_std), gamma);
    y = add_rowvec(y, beta);
    // update running stats with the detached batch stats (unless frozen)
    if (stats_group_ && !stats_group_->trainable) return y;
    for (int64_t d = 0; d < D; ++d) {
      running_mean->value.data[d] = (1.0 - momentum) * running_mean->value.data[d] +
                                    momentum * mu->value.data[d];
      running_var->value.data[d] = (1.0 - momentum) * running_var->value.data[d] +
                                   momentum * var_vec->value.data[d];
    }
    return y;
  }
  // inference: running statistics, no graph through stats
  Tensor neg_mu({D}), inv_std({D});
  for (int64_t d = 0; d < D; ++d) {
    neg_mu.data[d] = -running_mean->value.data[d];
    inv_std.data[d] = 1.0 / std::sqrt(running_var->value.data[d] + eps);
  }
  Var y = add_rowvec(x, constant(neg_mu));
  y = mul_rowvec(mul_rowvec(y, constant(inv_std)), gamma);
  return add_rowvec(y, beta);
}

Tensor sinusoidal_positions(int64_t T, int64_t d_model) {
  Tensor pe({T, d_model});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t i = 0; i < d_model; ++i) {
      double angle = t / std::pow(10000.0, 2.0 * (i / 2) / static_cast<double>(d_model));
      pe.data[t * d_model + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

}  // namespace csasr
