#include "csasr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace csasr {

Var make_var(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Var constant(Tensor value) { return make_var(std::move(value), false); }

namespace {

// Result node whose gradient flows into its parents.
Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backprop) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

void topo(const Var& v, std::unordered_set<Node*>& seen, std::vector<Var>& order) {
  // Iterative DFS; graphs can be deep for long sequences.
  struct Frame {
    Var node;
    size_t next_child = 0;
  };
  if (seen.count(v.get())) return;
  std::vector<Frame> stack;
  stack.push_back({v, 0});
  seen.insert(v.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.node->parents.size()) {
      Var child = f.node->parents[f.next_child++];
      if (child->requires_grad && !seen.count(child.get())) {
        seen.insert(child.get());
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a->value.shape_str() + " vs " + b->value.shape_str());
}

struct LaneView {
  int64_t outer, axis, inner;
};

LaneView lanes(const Tensor& t, int axis) {
  if (axis < 0) axis += static_cast<int>(t.rank());
  if (axis < 0 || axis >= static_cast<int>(t.rank()))
    throw std::invalid_argument("softmax: invalid axis");
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= t.shape[i];
  for (size_t i = axis + 1; i < t.rank(); ++i) inner *= t.shape[i];
  return {outer, t.shape[axis], inner};
}

}  // namespace

void backward(const Var& loss) {
  if (loss->value.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  if (!loss->requires_grad) return;
  std::unordered_set<Node*> seen;
  std::vector<Var> order;
  topo(loss, seen, order);
  loss->ensure_grad().data[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.backprop && !n.grad.data.empty()) n.backprop(n);
  }
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->value.data[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] -= n.grad.data[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (size_t i = 0; i < g.data.size(); ++i)
        g.data[i] += n.grad.data[i] * b->value.data[i];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (size_t i = 0; i < g.data.size(); ++i)
        g.data[i] += n.grad.data[i] * a->value.data[i];
    }
  });
}

Var scale(const Var& a, double c) {
  Tensor out = a->value;
  for (double& v : out.data) v *= c;
  return make_op(std::move(out), {a}, [a, c](Node& n) {
    auto& g = a->ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += c * n.grad.data[i];
  });
}

Var add_rowvec(const Var& x, const Var& b) {
  if (x->value.rank() != 2 || b->value.numel() != x->value.cols())
    throw std::invalid_argument("add_rowvec: bias size must equal columns");
  Tensor out = x->value;
  int64_t R = out.rows(), C = out.cols();
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) out.data[r * C + c] += b->value.data[c];
  return make_op(std::move(out), {x, b}, [x, b, R, C](Node& n) {
    if (x->requires_grad) {
      auto& g = x->ensure_grad();
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) g.data[c] += n.grad.data[r * C + c];
    }
  });
}

Var mul_colmask(const Var& x, const Tensor& row_mask) {
  if (x->value.rank() != 2 || row_mask.numel() != x->value.rows())
    throw std::invalid_argument("mul_colmask: mask size must equal rows");
  Tensor out = x->value;
  int64_t R = out.rows(), C = out.cols();
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) out.data[r * C + c] *= row_mask.data[r];
  Tensor mask = row_mask;
  return make_op(std::move(out), {x}, [x, mask, R, C](Node& n) {
    auto& g = x->ensure_grad();
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < C; ++c)
        g.data[r * C + c] += n.grad.data[r * C + c] * mask.data[r];
  });
}

Var mul_rowvec(const Var& x, const Var& v) {
  if (x->value.rank() != 2 || v->value.numel() != x->value.cols())
    throw std::invalid_argument("mul_rowvec: vector size must equal columns");
  int64_t R = x->value.rows(), C = x->value.cols();
  Tensor out = x->value;
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) out.data[r * C + c] *= v->value.data[c];
  return make_op(std::move(out), {x, v}, [x, v, R, C](Node& n) {
    if (x->requires_grad) {
      auto& g = x->ensure_grad();
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c)
          g.data[r * C + c] += n.grad.data[r * C + c] * v->value.data[c];
    }
    if (v->requires_grad) {
      auto& g = v->ensure_grad();
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c)
          g.data[c] += n.grad.data[r * C + c] * x->value.data[r * C + c];
    }
  });
}

Var rsqrt_eps(const Var& x, double eps) {
  Tensor out = x->value;
  for (double& v : out.data) v = 1.0 / std::sqrt(v + eps);
  Tensor y = out;
  return make_op(std::move(out), {x}, [x, y](Node& n) {
    auto& g = x->ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i)
      g.data[i] += n.grad.data[i] * (-0.5 * y.data[i] * y.data[i] * y.data[i]);
  });
}

Var matmul(const Var& a, const Var& b) {
  Tensor out = csasr::matmul(a->value, b->value);
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    // dA = dC * B^T ; dB = A^T * dC
    int64_t M = a->value.rows(), K = a->value.cols(), N = b->value.cols();
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (int64_t i = 0; i < M; ++i)
        for (int64_t p = 0; p < K; ++p) {
          double s = 0;
          for (int64_t j = 0; j < N; ++j)
            s += n.grad.data[i * N + j] * b->value.data[p * N + j];
          g.data[i * K + p] += s;
        }
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (int64_t p = 0; p < K; ++p)
        for (int64_t j = 0; j < N; ++j) {
          double s = 0;
          for (int64_t i = 0; i < M; ++i)
            s += a->value.data[i * K + p] * n.grad.data[i * N + j];
          g.data[p * N + j] += s;
        }
    }
  });
}

Var transpose(const Var& a) {
  if (a->value.rank() != 2) throw std::invalid_argument("transpose: need 2-D");
  int64_t R = a->value.rows(), C = a->value.cols();
  Tensor out({C, R});
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) out.data[c * R + r] = a->value.data[r * C + c];
  return make_op(std::move(out), {a}, [a, R, C](Node& n) {
    auto& g = a->ensure_grad();
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < C; ++c) g.data[r * C + c] += n.grad.data[c * R + r];
  });
}

Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: empty");
  int64_t R = xs[0]->value.rows(), C = 0;
  for (const auto& x : xs) {
    if (x->value.rank() != 2 || x->value.rows() != R)
      throw std::invalid_argument("concat_cols: row mismatch");
    C += x->value.cols();
  }
  Tensor out({R, C});
  int64_t off = 0;
  for (const auto& x : xs) {
    int64_t c = x->value.cols();
    for (int64_t r = 0; r < R; ++r)
      std::copy_n(&x->value.data[r * c], c, &out.data[r * C + off]);
    off += c;
  }
  std::vector<Var> parents = xs;
  return make_op(std::move(out), parents, [parents, R, C](Node& n) {
    int64_t off = 0;
    for (const auto& x : parents) {
      int64_t c = x->value.cols();
      if (x->requires_grad) {
        auto& g = x->ensure_grad();
        for (int64_t r = 0; r < R; ++r)
          for (int64_t j = 0; j < c; ++j)
            g.data[r * c + j] += n.grad.data[r * C + off + j];
      }
      off += c;
    }
  });
}

Var slice_cols(const Var& x, int64_t c0, int64_t c1) {
  int64_t R = x->value.rows(), C = x->value.cols();
  if (c0 < 0 || c1 > C || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
  int64_t W = c1 - c0;
  Tensor out({R, W});
  for (int64_t r = 0; r < R; ++r)
    std::copy_n(&x->value.data[r * C + c0], W, &out.data[r * W]);
  return make_op(std::move(out), {x}, [x, R, C, c0, W](Node& n) {
    auto& g = x->ensure_grad();
    for (int64_t r = 0; r < R; ++r)
      for (int64_t j = 0; j < W; ++j)
        g.data[r * C + c0 + j] += n.grad.data[r * W + j];
  });
}

Var slice_rows(const Var& x, int64_t r0, int64_t r1) {
  int64_t R = x->value.rows(), C = x->value.cols();
  if (r0 < 0 || r1 > R || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
  int64_t H = r1 - r0;
  Tensor out({H, C});
  std::copy_n(&x->value.data[r0 * C], H * C, out.data.data());
  return make_op(std::move(out), {x}, [x, C, r0, H](Node& n) {
    auto& g = x->ensure_grad();
    for (int64_t i = 0; i < H * C; ++i) g.data[r0 * C + i] += n.grad.data[i];
  });
}

Var concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: empty");
  int64_t C = xs[0]->value.cols(), R = 0;
  for (const auto& x : xs) {
    if (x->value.rank() != 2 || x->value.cols() != C)
      throw std::invalid_argument("concat_rows: col mismatch");
    R += x->value.rows();
  }
  Tensor out({R, C});
  int64_t off = 0;
  for (const auto& x : xs) {
    std::copy_n(x->value.data.data(), x->value.numel(), &out.data[off]);
    off += x->value.numel();
  }
  std::vector<Var> parents = xs;
  return make_op(std::move(out), parents, [parents](Node& n) {
    int64_t off = 0;
    for (const auto& x : parents) {
      if (x->requires_grad) {
        auto& g = x->ensure_grad();
        for (int64_t i = 0; i < x->value.numel(); ++i)
          g.data[i] += n.grad.data[off + i];
      }
      off += x->value.numel();
    }
  });
}

Var reshape(const Var& x, std::vector<int64_t> shape) {
  if (Tensor::numel_of(shape) != x->value.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out(std::move(shape), x->value.data);
  return make_op(std::move(out), {x}, [x](Node& n) {
    auto& g = x->ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
  });
}

Var sum(const Var& x) {
  double s = 0;
  for (double v : x->value.data) s += v;
  return make_op(Tensor::scalar(s), {x}, [x](Node& n) {
    auto& g = x->ensure_grad();
    for (double& v : g.data) v += n.grad.data[0];
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / x->value.numel()); }

Var sigmoid(const Var& x) {
  Tensor out = x->value;
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  Tensor y = out;
  return make_op(std::move(out), {x}, [x, y](Node& n) {
    auto& g = x->ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i)
      g.data[i] += n.grad.data[i] * y.data[i] * (1.0 - y.data[i]);
  });
}

Var relu(const Var& x) {
  Tensor out = x->value;
  for (double& v : out.data) v = v > 0 ? v : 0.0;
  return make_op(std::move(out), {x}, [x](Node& n) {
    auto& g = x->ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i)
      if (x->value.data[i] > 0) g.data[i] += n.grad.data[i];
  });
}

Var swish(const Var& x) {
  Tensor out = x->value;
  for (double& v : out.data) v = v / (1.0 + std::exp(-v));
  return make_op(std::move(out), {x}, [x](Node& n) {
    auto& g = x->ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i) {
      double v = x->value.data[i];
      double s = 1.0 / (1.0 + std::exp(-v));
      g.data[i] += n.grad.data[i] * (s + v * s * (1.0 - s));
    }
  });
}

Var glu(const Var& x) {
  if (x->value.rank() != 2 || x->value.cols() % 2 != 0)
    throw std::invalid_argument("glu: last axis must be even");
  int64_t R = x->value.rows(), C = x->value.cols(), H = C / 2;
  Tensor out({R, H});
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < H; ++c) {
      double a = x->value.data[r * C + c];
      double b = x->value.data[r * C + H + c];
      out.data[r * H + c] = a / (1.0 + std::exp(-b));
    }
  return make_op(std::move(out), {x}, [x, R, C, H](Node& n) {
    auto& g = x->ensure_grad();
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < H; ++c) {
        double a = x->value.data[r * C + c];
        double b = x->value.data[r * C + H + c];
        double s = 1.0 / (1.0 + std::exp(-b));
        double d = n.grad.data[r * H + c];
        g.data[r * C + c] += d * s;
        g.data[r * C + H + c] += d * a * s * (1.0 - s);
      }
  });
}

Var square(const Var& x) { return mul(x, x); }

Var softmax(const Var& x, int axis) {
  LaneView lv = lanes(x->value, axis);
  Tensor out = x->value;
  for (int64_t o = 0; o < lv.outer; ++o)
    for (int64_t i = 0; i < lv.inner; ++i) {
      int64_t base = o * lv.axis * lv.inner + i;
      double mx = -HUGE_VAL;
      for (int64_t s = 0; s < lv.axis; ++s)
        mx = std::max(mx, out.data[base + s * lv.inner]);
      double z = 0;
      for (int64_t s = 0; s < lv.axis; ++s) {
        double e = std::exp(out.data[base + s * lv.inner] - mx);
        out.data[base + s * lv.inner] = e;
        z += e;
      }
      for (int64_t s = 0; s < lv.axis; ++s) out.data[base + s * lv.inner] /= z;
    }
  Tensor y = out;
  return make_op(std::move(out), {x}, [x, y, lv](Node& n) {
    auto& g = x->ensure_grad();
    for (int64_t o = 0; o < lv.outer; ++o)
      for (int64_t i = 0; i < lv.inner; ++i) {
        int64_t base = o * lv.axis * lv.inner + i;
        double dot = 0;
        for (int64_t s = 0; s < lv.axis; ++s) {
          int64_t idx = base + s * lv.inner;
          dot += n.grad.data[idx] * y.data[idx];
        }
        for (int64_t s = 0; s < lv.axis; ++s) {
          int64_t idx = base + s * lv.inner;
          g.data[idx] += y.data[idx] * (n.grad.data[idx] - dot);
        }
      }
  });
}

Var log_softmax(const Var& x, int axis) {
  LaneView lv = lanes(x->value, axis);
  Tensor out = x->value;
  for (int64_t o = 0; o < lv.outer; ++o)
    for (int64_t i = 0; i < lv.inner; ++i) {
      int64_t base = o * lv.axis * lv.inner + i;
      double mx = -HUGE_VAL;
      for (int64_t s = 0; s < lv.axis; ++s)
        mx = std::max(mx, out.data[base + s * lv.inner]);
      double z = 0;
      for (int64_t s = 0; s < lv.axis; ++s)
        z += std::exp(out.data[base + s * lv.inner] - mx);
      double lz = mx + std::log(z);
      for (int64_t s = 0; s < lv.axis; ++s) out.data[base + s * lv.inner] -= lz;
    }
  Tensor y = out;
  return make_op(std::move(out), {x}, [x, y, lv](Node& n) {
    auto& g = x->ensure_grad();
    for (int64_t o = 0; o < lv.outer; ++o)
      for (int64_t i = 0; i < lv.inner; ++i) {
        int64_t base = o * lv.axis * lv.inner + i;
        double gsum = 0;
        for (int64_t s = 0; s < lv.axis; ++s)
          gsum += n.grad.data[base + s * lv.inner];
        for (int64_t s = 0; s < lv.axis; ++s) {
          int64_t idx = base + s * lv.inner;
          g.data[idx] += n.grad.data[idx] - std::exp(y.data[idx]) * gsum;
        }
      }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  if (x->value.rank() != 2) throw std::invalid_argument("layer_norm: need 2-D");
  int64_t R = x->value.rows(), C = x->value.cols();
  if (gamma->value.numel() != C || beta->value.numel() != C)
    throw std::invalid_argument("layer_norm: gamma/beta must match last axis");
  Tensor out({R, C});
  Tensor xhat({R, C});
  std::vector<double> inv_std(R);
  for (int64_t r = 0; r < R; ++r) {
    double mu = 0;
    for (int64_t c = 0; c < C; ++c) mu += x->value.data[r * C + c];
    mu /= C;
    double var = 0;
    for (int64_t c = 0; c < C; ++c) {
      double d = x->value.data[r * C + c] - mu;
      var += d * d;
    }
    var /= C;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int64_t c = 0; c < C; ++c) {
      double xh = (x->value.data[r * C + c] - mu) * is;
      xhat.data[r * C + c] = xh;
      out.data[r * C + c] = gamma->value.data[c] * xh + beta->value.data[c];
    }
  }
  return make_op(std::move(out), {x, gamma, beta},
                 [x, gamma, beta, xhat, inv_std, R, C](Node& n) {
    for (int64_t r = 0; r < R; ++r) {
      double sum_dxh = 0, sum_dxh_xh = 0;
      for (int64_t c = 0; c < C; ++c) {
        double dxh = n.grad.data[r * C + c] * gamma->value.data[c];
        sum_dxh += dxh;
        sum_dxh_xh += dxh * xhat.data[r * C + c];
      }
      if (x->requires_grad) {
        auto& g = x->ensure_grad();
        for (int64_t c = 0; c < C; ++c) {
          double dxh = n.grad.data[r * C + c] * gamma->value.data[c];
          g.data[r * C + c] += inv_std[r] *
              (dxh - sum_dxh / C - xhat.data[r * C + c] * sum_dxh_xh / C);
        }
      }
    }
    if (gamma->requires_grad) {
      auto& gg = gamma->ensure_grad();
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c)
          gg.data[c] += n.grad.data[r * C + c] * xhat.data[r * C + c];
    }
    if (beta->requires_grad) {
      auto& gb = beta->ensure_grad();
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) gb.data[c] += n.grad.data[r * C + c];
    }
  });
}

Var conv1d_depthwise(const Var& x, const Var& kernel) {
  if (x->value.rank() != 2 || kernel->value.rank() != 2)
    throw std::invalid_argument("conv1d_depthwise: need 2-D input and kernel");
  int64_t T = x->value.rows(), D = x->value.cols();
  int64_t Kd = kernel->value.rows(), K = kernel->value.cols();
  if (Kd != D) throw std::invalid_argument("conv1d_depthwise: kernel rows must equal channels");
  if (K % 2 == 0) throw std::invalid_argument("conv1d_depthwise: kernel width must be odd");
  int64_t half = K / 2;
  Tensor out({T, D});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t d = 0; d < D; ++d) {
      double s = 0;
      for (int64_t j = 0; j < K; ++j) {
        int64_t tt = t + j - half;
        if (tt >= 0 && tt < T) s += x->value.data[tt * D + d] * kernel->value.data[d * K + j];
      }
      out.data[t * D + d] = s;
    }
  return make_op(std::move(out), {x, kernel}, [x, kernel, T, D, K, half](Node& n) {
    if (x->requires_grad) {
      auto& g = x->ensure_grad();
      for (int64_t t = 0; t < T; ++t)
        for (int64_t d = 0; d < D; ++d)
          for (int64_t j = 0; j < K; ++j) {
            int64_t tt = t + j - half;
            if (tt >= 0 && tt < T)
              g.data[tt * D + d] += n.grad.data[t * D + d] * kernel->value.data[d * K + j];
          }
    }
    if (kernel->requires_grad) {
      auto& g = kernel->ensure_grad();
      for (int64_t t = 0; t < T; ++t)
        for (int64_t d = 0; d < D; ++d)
          for (int64_t j = 0; j < K; ++j) {
            int64_t tt = t + j - half;
            if (tt >= 0 && tt < T)
              g.data[d * K + j] += n.grad.data[t * D + d] * x->value.data[tt * D + d];
          }
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  if (x->value.rank() != 3 || w->value.rank() != 4)
    throw std::invalid_argument("conv2d: need CxHxW input and OxCxKhxKw weight");
  int64_t Cin = x->value.shape[0], H = x->value.shape[1], W = x->value.shape[2];
  int64_t Cout = w->value.shape[0], Kh = w->value.shape[2], Kw = w->value.shape[3];
  if (w->value.shape[1] != Cin) throw std::invalid_argument("conv2d: channel mismatch");
  int64_t Ho = (H + 2 * pad - Kh) / stride + 1;
  int64_t Wo = (W + 2 * pad - Kw) / stride + 1;
  if (Ho < 1 || Wo < 1) throw std::invalid_argument("conv2d: input too small");
  auto xat = [&](int64_t c, int64_t h, int64_t ww) {
    return x->value.data[(c * H + h) * W + ww];
  };
  Tensor out({Cout, Ho, Wo});
  for (int64_t oc = 0; oc < Cout; ++oc)
    for (int64_t oh = 0; oh < Ho; ++oh)
      for (int64_t ow = 0; ow < Wo; ++ow) {
        double s = b->value.data[oc];
        for (int64_t ic = 0; ic < Cin; ++ic)
          for (int64_t kh = 0; kh < Kh; ++kh)
            for (int64_t kw = 0; kw < Kw; ++kw) {
              int64_t ih = oh * stride + kh - pad;
              int64_t iw = ow * stride + kw - pad;
              if (ih >= 0 && ih < H && iw >= 0 && iw < W)
                s += xat(ic, ih, iw) *
                     w->value.data[((oc * Cin + ic) * Kh + kh) * Kw + kw];
            }
        out.data[(oc * Ho + oh) * Wo + ow] = s;
      }
  return make_op(std::move(out), {x, w, b},
                 [x, w, b, Cin, H, W, Cout, Kh, Kw, Ho, Wo, stride, pad](Node& n) {
    for (int64_t oc = 0; oc < Cout; ++oc)
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow) {
          double d = n.grad.data[(oc * Ho + oh) * Wo + ow];
          if (b->requires_grad) b->ensure_grad().data[oc] += d;
          for (int64_t ic = 0; ic < Cin; ++ic)
            for (int64_t kh = 0; kh < Kh; ++kh)
              for (int64_t kw = 0; kw < Kw; ++kw) {
                int64_t ih = oh * stride + kh - pad;
                int64_t iw = ow * stride + kw - pad;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                size_t widx = ((oc * Cin + ic) * Kh + kh) * Kw + kw;
                size_t xidx = (ic * H + ih) * W + iw;
                if (x->requires_grad)
                  x->ensure_grad().data[xidx] += d * w->value.data[widx];
                if (w->requires_grad)
                  w->ensure_grad().data[widx] += d * x->value.data[xidx];
              }
        }
  });
}

Var dropout(const Var& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  Tensor mask(x->value.shape);
  double keep = 1.0 - rate;
  for (double& m : mask.data) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  Tensor out = x->value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
  return make_op(std::move(out), {x}, [x, mask](Node& n) {
    auto& g = x->ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i)
      g.data[i] += n.grad.data[i] * mask.data[i];
  });
}

Var embedding(const Var& table, const std::vector<int>& ids) {
  int64_t V = table->value.rows(), D = table->value.cols();
  Tensor out({static_cast<int64_t>(ids.size()), D});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= V)
      throw std::out_of_range("embedding: id out of range");
    std::copy_n(&table->value.data[ids[i] * D], D, &out.data[i * D]);
  }
  return make_op(std::move(out), {table}, [table, ids, D](Node& n) {
    auto& g = table->ensure_grad();
    for (size_t i = 0; i < ids.size(); ++i)
      for (int64_t c = 0; c < D; ++c)
        g.data[ids[i] * D + c] += n.grad.data[i * D + c];
  });
}

Var add_const(const Var& x, const Tensor& c) {
  if (!x->value.same_shape(c))
    throw std::invalid_argument("add_const: shape mismatch");
  Tensor out = x->value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += c.data[i];
  return make_op(std::move(out), {x}, [x](Node& n) {
    auto& g = x->ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
  });
}

}  // namespace csasr
