#include "csasr/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace csasr {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}
double lse(double a, double b, double c) { return lse(lse(a, b), c); }
}  // namespace

Var ctc_loss(const Var& log_probs, const std::vector<int>& target, int blank) {
  const Tensor& lp = log_probs->value;
  if (lp.shape.size() != 2) throw std::invalid_argument("ctc_loss: need TxV");
  const int64_t T = lp.shape[0], V = lp.shape[1];
  for (int t : target)
    if (t < 0 || t >= V || t == blank)
      throw std::invalid_argument("ctc_loss: bad target id");

  // extended label sequence: blank, y1, blank, y2, ..., blank
  const int64_t L = static_cast<int64_t>(target.size());
  const int64_t S = 2 * L + 1;
  std::vector<int> ext(S, blank);
  for (int64_t i = 0; i < L; ++i) ext[2 * i + 1] = target[i];

  int64_t min_T = L;
  for (int64_t i = 1; i < L; ++i)
    if (target[i] == target[i - 1]) ++min_T;
  if (T < min_T)
    throw CtcUnalignableError("ctc: target needs " + std::to_string(min_T) +
                              " frames, got " + std::to_string(T));

  auto at = [&](int64_t t, int64_t s) { return lp.data[t * V + ext[s]]; };
  std::vector<double> alpha(T * S, kNegInf), beta(T * S, kNegInf);
  alpha[0 * S + 0] = at(0, 0);
  if (S > 1) alpha[0 * S + 1] = at(0, 1);
  for (int64_t t = 1; t < T; ++t)
    for (int64_t s = 0; s < S; ++s) {
      double a = alpha[(t - 1) * S + s];
      if (s >= 1) a = lse(a, alpha[(t - 1) * S + s - 1]);
      if (s >= 2 && ext[s] != blank && ext[s] != ext[s - 2])
        a = lse(a, alpha[(t - 1) * S + s - 2]);
      alpha[t * S + s] = a + at(t, s);
    }
  double logp = alpha[(T - 1) * S + S - 1];
  if (S > 1) logp = lse(logp, alpha[(T - 1) * S + S - 2]);
  if (logp == kNegInf)
    throw CtcUnalignableError("ctc: no valid alignment");

  beta[(T - 1) * S + S - 1] = at(T - 1, S - 1);
  if (S > 1) beta[(T - 1) * S + S - 2] = at(T - 1, S - 2);
  for (int64_t t = T - 2; t >= 0; --t)
    for (int64_t s = S - 1; s >= 0; --s) {
      double b = beta[(t + 1) * S + s];
      if (s + 1 < S) b = lse(b, beta[(t + 1) * S + s + 1]);
      if (s + 2 < S && ext[s + 2] != blank && ext[s + 2] != ext[s])
        b = lse(b, beta[(t + 1) * S + s + 2]);
      beta[t * S + s] = b + at(t, s);
    }

  // negative posterior per (frame, label); alpha*beta double-counts lp[t,s]
  Tensor grad = Tensor::zeros({T, V});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t s = 0; s < S; ++s) {
      double g = alpha[t * S + s] + beta[t * S + s] - at(t, s) - logp;
      if (g != kNegInf) grad.data[t * V + ext[s]] -= std::exp(g);
    }

  auto out = std::make_shared<Node>();
  out->value = Tensor::zeros({1});
  out->value.data[0] = -logp;
  out->requires_grad = log_probs->requires_grad;
  if (out->requires_grad) {
    out->parents = {log_probs};
    out->backprop = [grad](Node& n) {
      double g = n.grad.data[0];
      Tensor& pg = n.parents[0]->ensure_grad();
      for (size_t i = 0; i < pg.data.size(); ++i) pg.data[i] += g * grad.data[i];
    };
  }
  return out;
}

CtcPrefixScorer::CtcPrefixScorer(Tensor log_probs, int blank, int eos)
    : lp_(std::move(log_probs)), blank_(blank), eos_(eos) {
  if (lp_.shape.size() != 2) throw std::invalid_argument("prefix scorer: TxV");
  T_ = lp_.shape[0];
  V_ = lp_.shape[1];
}

CtcPrefixScorer::State CtcPrefixScorer::initial() const {
  State s;
  s.r_n.assign(T_, kNegInf);
  s.r_b.assign(T_, 0.0);
  double acc = 0.0;
  for (int64_t t = 0; t < T_; ++t) {
    acc += lp_.data[t * V_ + blank_];
    s.r_b[t] = acc;
  }
  return s;
}

double CtcPrefixScorer::score(const State& s, int label, State* out) const {
  if (label == eos_) {
    // complete-sequence probability of the prefix itself
    if (s.last < 0) return s.r_b[T_ - 1];  // empty prefix: all blanks
    return lse(s.r_n[T_ - 1], s.r_b[T_ - 1]);
  }
  State ns;
  ns.r_n.assign(T_, kNegInf);
  ns.r_b.assign(T_, kNegInf);
  ns.last = label;
  double psi = kNegInf;
  for (int64_t t = 0; t < T_; ++t) {
    double prev_n = t > 0 ? s.r_n[t - 1] : kNegInf;
    double prev_b = t > 0 ? s.r_b[t - 1] : (s.last < 0 ? 0.0 : kNegInf);
    // mass from the old prefix that may emit `label` at frame t; a repeated
    // label must cross a blank first
    double phi = label == s.last ? prev_b : lse(prev_n, prev_b);
    double lab = lp_.data[t * V_ + label];
    double self_n = t > 0 ? ns.r_n[t - 1] : kNegInf;
    ns.r_n[t] = lab + lse(phi, self_n);
    double self_b = t > 0 ? ns.r_b[t - 1] : kNegInf;
    ns.r_b[t] = lp_.data[t * V_ + blank_] + lse(self_b, self_n);
    psi = lse(psi, phi + lab);
  }
  if (out) *out = std::move(ns);
  return psi;
}

}  // namespace csasr
