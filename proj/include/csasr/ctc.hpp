#pragma once

#include <stdexcept>

#include "csasr/autodiff.hpp"

namespace csasr {

// Target cannot be aligned in the available frames (needs at least
// |target| + #adjacent-repeats frames). Deliberately an exception rather
// than a NaN so training loops must handle it.
struct CtcUnalignableError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// -log P(target | log_probs) summed over all alignments, forward-backward
// in log space. log_probs is T x V (already log-softmaxed), target holds
// label ids without blanks. Gradient w.r.t. log_probs is the negative
// state-posterior mass per (frame, label).
Var ctc_loss(const Var& log_probs, const std::vector<int>& target, int blank = 0);

// Incremental CTC prefix scoring over a fixed log-prob matrix
// (Watanabe et al. hybrid CTC/attention decoding). Non-differentiable.
class CtcPrefixScorer {
 public:
  struct State {
    std::vector<double> r_n, r_b;  // per-frame log probs, last symbol non/blank
    int last = -1;                 // last label of the prefix, -1 for empty
  };

  CtcPrefixScorer(Tensor log_probs, int blank, int eos);

  State initial() const;  // empty prefix: all-blank mass
  // Log prefix probability of extending the state's prefix with `label`
  // (for eos: log probability of the prefix as a complete sequence).
  // `out` receives the successor state for non-eos labels.
  double score(const State& s, int label, State* out) const;

  int64_t frames() const { return T_; }

 private:
  Tensor lp_;
  int64_t T_, V_;
  int blank_, eos_;
};

}  // namespace csasr
