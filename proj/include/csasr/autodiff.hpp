#pragma once

#include <functional>
#include <memory>

#include "csasr/rng.hpp"
#include "csasr/tensor.hpp"

namespace csasr {

// Reverse-mode autodiff over Tensor values. Every op builds a Node whose
// backprop closure scatters gradient into its parents. Graphs are per-step
// and freed when the last Var goes out of scope.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;  // may be empty for leaves

  Tensor& ensure_grad() {
    if (grad.data.empty()) grad = Tensor::zeros(value.shape);
    return grad;
  }
};

Var make_var(Tensor value, bool requires_grad = false);
Var constant(Tensor value);

// Runs reverse accumulation from a scalar loss. Throws if loss is not a
// single-element tensor.
void backward(const Var& loss);

// ---- elementwise / shape ----
Var add(const Var& a, const Var& b);          // same shape
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);          // elementwise, same shape
Var scale(const Var& a, double c);
Var add_rowvec(const Var& x, const Var& b);   // x: RxC, b: C (bias broadcast)
Var mul_colmask(const Var& x, const Tensor& row_mask);  // scales row r by mask[r]
Var mul_rowvec(const Var& x, const Var& v);   // x: RxC, v: C, broadcast multiply
Var rsqrt_eps(const Var& x, double eps);      // elementwise 1/sqrt(x+eps)
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var concat_cols(const std::vector<Var>& xs);
Var slice_cols(const Var& x, int64_t c0, int64_t c1);
Var slice_rows(const Var& x, int64_t r0, int64_t r1);
Var concat_rows(const std::vector<Var>& xs);
Var reshape(const Var& x, std::vector<int64_t> shape);

// ---- reductions ----
Var sum(const Var& x);
Var mean(const Var& x);

// ---- nonlinearities ----
Var sigmoid(const Var& x);
Var relu(const Var& x);
Var swish(const Var& x);                      // x * sigmoid(x)
Var glu(const Var& x);                        // split last axis, a * sigmoid(b)
Var square(const Var& x);

// softmax / log_softmax along an arbitrary axis, max-subtracted.
Var softmax(const Var& x, int axis);
Var log_softmax(const Var& x, int axis);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

// Depthwise 1-D convolution over time: x is TxD, kernel DxK (K odd),
// symmetric zero padding, output TxD. Channel d only sees channel d.
Var conv1d_depthwise(const Var& x, const Var& kernel);

// 2-D convolution for the subsampler. x: C_in x H x W, w: C_out x C_in x kh x kw,
// bias: C_out. Output C_out x H' x W' with H' = floor((H+2p-kh)/stride)+1.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

// Inverted dropout. Identity when training=false or rate=0.
Var dropout(const Var& x, double rate, bool training, Rng& rng);

// Row lookup into an embedding table E (VxD) for a list of ids; gradient
// scatters back into E.
Var embedding(const Var& table, const std::vector<int>& ids);

// Adds a no-grad tensor (e.g. positional encodings or -inf attention masks).
Var add_const(const Var& x, const Tensor& c);

}  // namespace csasr
