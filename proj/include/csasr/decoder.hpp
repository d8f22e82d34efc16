#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "csasr/conformer.hpp"
#include "csasr/ctc.hpp"
#include "csasr/ngram.hpp"

namespace csasr {

struct DecodeConfig {
  int beam_size = 10;
  int nbest_size = 10;
  double ctc_decode_weight = 0.3;  // lambda: weight on the CTC prefix score
  double lm_weight = 0.3;          // beta at rescoring time
  double max_length_ratio = 1.0;   // max tokens = ratio * encoder frames
  double word_reward = 0.0;        // per-word bonus at rescoring (default off)

  void validate() const;
};

struct Hypothesis {
  std::vector<int> tokens;  // without sos/eos
  double att_score = 0.0;   // cumulative attention log prob (incl. eos)
  double ctc_score = 0.0;   // CTC complete-sequence log prob
  double lm_log10 = 0.0;    // filled at rescoring
  double combined = 0.0;
  int am_rank = 0;          // rank before rescoring
  std::string text;
};
using NBestList = std::vector<Hypothesis>;

// Next-token attention scorer: log probs over the vocabulary given the
// prefix (tokens only, no sos).
using AttScorer = std::function<std::vector<double>(const std::vector<int>&)>;

// Joint CTC/attention beam search. Per-prefix score is
// lambda*ctc_prefix + (1-lambda)*att_logprob; hypotheses end on eos.
// `ctc` may be null (pure attention). `banned` ids are never emitted.
NBestList beam_search(const AttScorer& att, const CtcPrefixScorer* ctc,
                      int64_t enc_frames, int vocab_size, int eos,
                      const DecodeConfig& cfg,
                      const std::vector<int>& banned = {});

// Log probability that the collapsed CTC output begins with `prefix`
// (complete=true: probability of exactly `prefix`). Empty prefix scores 0.
double ctc_prefix_score(const Tensor& log_probs, const std::vector<int>& prefix,
                        bool complete = false, int blank = 0);

// combined = am_combined + beta*ln(10)*lm_log10(words) + word_reward*|words|;
// re-sorts, keeps the pre-rescoring rank in am_rank. detok turns token ids
// into the scoring text.
NBestList rescore_nbest(const NBestList& nbest, const ArpaModel& lm, double beta,
                        const std::function<std::string(const std::vector<int>&)>& detok,
                        double word_reward = 0.0);

// Full-model decode of one utterance (eval mode).
NBestList decode_utterance(ConformerModel& model, const Var& feats,
                           const DecodeConfig& cfg);

void write_nbest(const std::string& path,
                 const std::map<std::string, NBestList>& lists);
std::map<std::string, NBestList> read_nbest(const std::string& path);

}  // namespace csasr
