#pragma once

#include <functional>
#include <optional>

#include "csasr/conformer.hpp"
#include "csasr/data.hpp"

namespace csasr {

struct NoamSchedule {
  double factor = 5.0;
  int64_t d_model = 512;
  int64_t warmup_steps = 20000;  // 0: pure inverse-sqrt decay from step 1
};

// factor * d_model^(-1/2) * min(step^(-1/2), step * warmup^(-3/2))
double noam_lr(const NoamSchedule& s, int64_t step);

struct MixSpec {
  enum class Variant { Ev, Sv };
  Variant variant = Variant::Ev;
  double cs_fraction = 0.5;
  // Available monolingual subset sizes (hours); when set, the ratio-derived
  // nonnative target snaps to the nearest value.
  std::vector<double> nonnative_subset_hours;
  // Explicit hour targets override the ratio computation when >= 0.
  double native_target = -1.0, nonnative_target = -1.0, cs_target = -1.0;
  uint64_t seed = 0;
};

struct MixPlan {
  Manifest selected;
  double target_native = 0, target_nonnative = 0, target_cs = 0;    // hours
  double native_hours = 0, nonnative_hours = 0, cs_hours = 0;       // realized
};

// Ev: nonnative = native*45/55; Sv: nonnative = native/4; capped by
// availability; utterances accumulate in seeded-shuffle order per pool.
MixPlan build_mix_plan(const Manifest& native, const Manifest& nonnative,
                       const Manifest& cs, const MixSpec& spec);

// Adam with the Noam schedule on top; clips the global gradient norm first.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double beta1 = 0.9, double beta2 = 0.98,
                         double eps = 1e-9, double clip_norm = 5.0);
  // Updates trainable learnable params from their accumulated gradients.
  void step(ParamStore& ps, double lr);

 private:
  double b1_, b2_, eps_, clip_;
  int64_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

struct StageConfig {
  std::string stage = "pretrain";  // "pretrain" | "finetune"
  int epochs = 60;
  int batch_size = 64;
  double dropout = 0.1;
  NoamSchedule schedule;
  std::vector<std::string> frozen_prefixes;
  double alpha = 0.3;
  uint64_t seed = 1;
  int early_stop_patience = 3;  // finetune only; <=0 disables
  double grad_clip = 5.0;
  int64_t max_steps = 0;  // 0: unlimited

  // Paper recipe: factor/50, no warmup, full network trainable.
  static StageConfig finetune_from(const StageConfig& pretrain);
};

struct TrainItem {
  std::string id;
  Tensor feats;             // T x feat_dim
  std::vector<int> tokens;  // without sos/eos
};

struct EpochMetrics {
  int epoch = 0;
  int64_t step = 0;        // global step after the epoch
  double l_asr = 0, l_ctc = 0, l_ce = 0;
  double lr = 0;           // last applied
  double dev_l_asr = 0;
  double dev_wer = -1;     // percent; -1 when no dev set
  int skipped = 0;         // unalignable utterances
};

struct StageResult {
  std::vector<EpochMetrics> epochs;
  uint64_t final_step = 0;
  std::string best_checkpoint;
};

class Trainer {
 public:
  Trainer(ConformerModel& model, ParamStore& ps, StageConfig cfg);

  // init_checkpoint resumes the step counter (required for finetune).
  // Writes epoch checkpoints and metrics.jsonl under out_dir.
  StageResult run(const std::vector<TrainItem>& train,
                  const std::vector<TrainItem>& dev, const std::string& out_dir,
                  const std::string& init_checkpoint = "");

  // Token-ids-to-text hook for dev WER; identity-ish default scores id strings.
  std::function<std::string(const std::vector<int>&)> detokenize;

 private:
  ConformerModel& model_;
  ParamStore& ps_;
  StageConfig cfg_;
};

}  // namespace csasr
