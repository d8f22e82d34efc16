#include "csasr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "csasr/ctc.hpp"
#include "csasr/decoder.hpp"
#include "csasr/scoring.hpp"

namespace csasr {

double noam_lr(const NoamSchedule& s, int64_t step) {
  if (s.factor <= 0) throw std::invalid_argument("noam: factor must be > 0");
  if (s.warmup_steps < 0) throw std::invalid_argument("noam: warmup < 0");
  if (step < 1) throw std::invalid_argument("noam: step must be >= 1");
  double decay = 1.0 / std::sqrt(double(step));
  double rate = decay;
  if (s.warmup_steps > 0)
    rate = std::min(decay, double(step) / std::pow(double(s.warmup_steps), 1.5));
  return s.factor / std::sqrt(double(s.d_model)) * rate;
}

namespace {

double hours(const Manifest& m) {
  double s = 0;
  for (const auto& u : m) s += u.duration;
  return s / 3600.0;
}

// shuffle then accumulate until the target is reached
std::pair<Manifest, double> take_hours(const Manifest& pool, double target_hours,
                                       uint64_t seed) {
  Manifest shuffled = pool;
  std::mt19937_64 gen(seed);
  std::shuffle(shuffled.begin(), shuffled.end(), gen);
  Manifest out;
  double acc = 0;
  for (const auto& u : shuffled) {
    if (acc >= target_hours * 3600.0) break;
    out.push_back(u);
    acc += u.duration;
  }
  return {out, acc / 3600.0};
}

}  // namespace

MixPlan build_mix_plan(const Manifest& native, const Manifest& nonnative,
                       const Manifest& cs, const MixSpec& spec) {
  if (native.empty() || nonnative.empty() || cs.empty())
    throw std::runtime_error("mix plan: empty pool");
  double nat_avail = hours(native), non_avail = hours(nonnative),
         cs_avail = hours(cs);

  MixPlan plan;
  plan.target_native =
      spec.native_target >= 0 ? spec.native_target : nat_avail;
  double ratio_target = spec.variant == MixSpec::Variant::Ev
                            ? plan.target_native * 45.0 / 55.0
                            : plan.target_native / 4.0;
  double non_target = spec.nonnative_target >= 0 ? spec.nonnative_target
                                                 : ratio_target;
  if (spec.nonnative_target < 0 && !spec.nonnative_subset_hours.empty()) {
    double best = spec.nonnative_subset_hours[0];
    for (double h : spec.nonnative_subset_hours)
      if (std::fabs(h - ratio_target) < std::fabs(best - ratio_target)) best = h;
    non_target = best;
  }
  plan.target_nonnative = std::min(non_target, non_avail);
  plan.target_cs = spec.cs_target >= 0 ? std::min(spec.cs_target, cs_avail)
                                       : spec.cs_fraction * cs_avail;
  plan.target_native = std::min(plan.target_native, nat_avail);

  auto [nat_sel, nat_h] = take_hours(native, plan.target_native, spec.seed);
  auto [non_sel, non_h] = take_hours(nonnative, plan.target_nonnative, spec.seed + 1);
  auto [cs_sel, cs_h] = take_hours(cs, plan.target_cs, spec.seed + 2);
  plan.native_hours = nat_h;
  plan.nonnative_hours = non_h;
  plan.cs_hours = cs_h;
  plan.selected = std::move(nat_sel);
  plan.selected.insert(plan.selected.end(), non_sel.begin(), non_sel.end());
  plan.selected.insert(plan.selected.end(), cs_sel.begin(), cs_sel.end());
  return plan;
}

AdamOptimizer::AdamOptimizer(double beta1, double beta2, double eps,
                             double clip_norm)
    : b1_(beta1), b2_(beta2), eps_(eps), clip_(clip_norm) {}

void AdamOptimizer::step(ParamStore& ps, double lr) {
  double sq = 0;
  for (auto& [name, g] : ps.groups()) {
    if (!g.trainable || !g.learnable || g.var->grad.data.empty()) continue;
    for (double v : g.var->grad.data) sq += v * v;
  }
  double norm = std::sqrt(sq);
  double gscale = (clip_ > 0 && norm > clip_) ? clip_ / norm : 1.0;

  ++t_;
  double c1 = 1.0 - std::pow(b1_, double(t_));
  double c2 = 1.0 - std::pow(b2_, double(t_));
  for (auto& [name, g] : ps.groups()) {
    if (!g.trainable || !g.learnable || g.var->grad.data.empty()) continue;
    Tensor& m = m_[name];
    Tensor& v = v_[name];
    if (m.data.empty()) m = Tensor::zeros(g.var->value.shape);
    if (v.data.empty()) v = Tensor::zeros(g.var->value.shape);
    for (size_t i = 0; i < g.var->value.data.size(); ++i) {
      double gr = g.var->grad.data[i] * gscale;
      m.data[i] = b1_ * m.data[i] + (1 - b1_) * gr;
      v.data[i] = b2_ * v.data[i] + (1 - b2_) * gr * gr;
      g.var->value.data[i] -=
          lr * (m.data[i] / c1) / (std::sqrt(v.data[i] / c2) + eps_);
    }
  }
}

StageConfig StageConfig::finetune_from(const StageConfig& pretrain) {
  StageConfig ft = pretrain;
  ft.stage = "finetune";
  ft.schedule.factor = pretrain.schedule.factor / 50.0;
  ft.schedule.warmup_steps = 0;
  ft.epochs = 20;
  ft.frozen_prefixes.clear();  // fine-tune the entire network
  return ft;
}

Trainer::Trainer(ConformerModel& model, ParamStore& ps, StageConfig cfg)
    : model_(model), ps_(ps), cfg_(std::move(cfg)) {
  if (cfg_.stage != "pretrain" && cfg_.stage != "finetune")
    throw std::invalid_argument("trainer: unknown stage " + cfg_.stage);
  detokenize = [](const std::vector<int>& ids) {
    std::string s;
    for (size_t i = 0; i < ids.size(); ++i)
      s += (i ? " " : "") + std::to_string(ids[i]);
    return s;
  };
}

StageResult Trainer::run(const std::vector<TrainItem>& train,
                         const std::vector<TrainItem>& dev,
                         const std::string& out_dir,
                         const std::string& init_checkpoint) {
  if (train.empty()) throw std::invalid_argument("trainer: no training data");
  if (cfg_.stage == "finetune" && init_checkpoint.empty())
    throw std::invalid_argument("trainer: finetune requires an init checkpoint");
  std::filesystem::create_directories(out_dir);

  uint64_t step = 0;
  if (!init_checkpoint.empty()) {
    uint64_t loaded = ps_.load_checkpoint(init_checkpoint);
    // resuming a stage continues its schedule; fine-tuning starts a fresh
    // one (that is what makes "no warmup steps" meaningful)
    if (cfg_.stage != "finetune") step = loaded;
  }
  ps_.set_trainable(cfg_.frozen_prefixes);

  AdamOptimizer opt(0.9, 0.98, 1e-9, cfg_.grad_clip);
  Rng model_rng(cfg_.seed * 7919 + 17);
  std::ofstream metrics(out_dir + "/metrics.jsonl", std::ios::app);

  StageResult result;
  double best_dev = 1e300;
  int since_best = 0;
  bool stop = false;

  for (int epoch = 0; epoch < cfg_.epochs && !stop; ++epoch) {
    // shuffle, then bucket by length so batch mates are similar
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 gen(cfg_.seed + 1000003ull * uint64_t(epoch));
    std::shuffle(order.begin(), order.end(), gen);
    std::vector<std::vector<size_t>> batches;
    for (size_t i = 0; i < order.size(); i += cfg_.batch_size) {
      std::vector<size_t> b(order.begin() + i,
                            order.begin() +
                                std::min(order.size(), i + size_t(cfg_.batch_size)));
      std::sort(b.begin(), b.end(), [&](size_t x, size_t y) {
        return train[x].feats.shape[0] < train[y].feats.shape[0];
      });
      batches.push_back(std::move(b));
    }

    EpochMetrics em;
    em.epoch = epoch;
    int64_t losses = 0;
    for (size_t bi = 0; bi < batches.size() && !stop; ++bi) {
      const auto& batch = batches[bi];
      ps_.zero_grad();
      int used = 0;
      LossOutput batch_lo;
      for (size_t idx : batch) {
        const TrainItem& it = train[idx];
        try {
          LossOutput lo;
          Var l = model_.utterance_loss(make_var(it.feats), it.tokens, true,
                                        model_rng, &lo);
          backward(scale(l, 1.0 / double(batch.size())));
          batch_lo.l_asr += lo.l_asr;
          batch_lo.l_ctc += lo.l_ctc;
          batch_lo.l_ce += lo.l_ce;
          ++used;
        } catch (const CtcUnalignableError&) {
          ++em.skipped;
        }
      }
      if (used == 0) continue;
      batch_lo.l_asr /= used;
      batch_lo.l_ctc /= used;
      batch_lo.l_ce /= used;
      if (!std::isfinite(batch_lo.l_asr))
        throw std::runtime_error("trainer: NaN loss in epoch " +
                                 std::to_string(epoch) + " batch " +
                                 std::to_string(bi));
      ++step;
      em.lr = noam_lr(cfg_.schedule, int64_t(step));
      opt.step(ps_, em.lr);
      em.l_asr += batch_lo.l_asr;
      em.l_ctc += batch_lo.l_ctc;
      em.l_ce += batch_lo.l_ce;
      ++losses;
      if (cfg_.max_steps > 0 && int64_t(step) >= cfg_.max_steps) stop = true;
    }
    if (losses > 0) {
      em.l_asr /= losses;
      em.l_ctc /= losses;
      em.l_ce /= losses;
    }
    em.step = int64_t(step);

    // dev pass: mean loss (eval mode) + greedy WER
    if (!dev.empty()) {
      double dl = 0;
      int dn = 0;
      std::map<std::string, std::string> refs, hyps;
      DecodeConfig dc;
      dc.beam_size = 1;
      dc.nbest_size = 1;
      dc.ctc_decode_weight = 0.0;
      for (const auto& it : dev) {
        try {
          LossOutput lo;
          model_.utterance_loss(make_var(it.feats), it.tokens, false, model_rng,
                                &lo);
          dl += lo.l_asr;
          ++dn;
        } catch (const CtcUnalignableError&) {
        }
        refs[it.id] = detokenize(it.tokens);
        NBestList nb = decode_utterance(model_, make_var(it.feats), dc);
        hyps[it.id] = nb.empty() ? "" : detokenize(nb[0].tokens);
      }
      em.dev_l_asr = dn ? dl / dn : 0.0;
      em.dev_wer = score_corpus(refs, hyps).wer;
    }

    std::string ckpt = out_dir + "/epoch_" + std::to_string(epoch) + ".ckpt";
    ps_.save_checkpoint(ckpt, step);
    ps_.save_checkpoint(out_dir + "/last.ckpt", step);

    std::ostringstream js;
    js.precision(10);
    js << "{\"epoch\":" << em.epoch << ",\"step\":" << em.step
       << ",\"l_asr\":" << em.l_asr << ",\"l_ctc\":" << em.l_ctc
       << ",\"l_ce\":" << em.l_ce << ",\"lr\":" << em.lr
       << ",\"dev_l_asr\":" << em.dev_l_asr << ",\"dev_wer\":" << em.dev_wer
       << ",\"skipped\":" << em.skipped << "}";
    metrics << js.str() << "\n" << std::flush;
    result.epochs.push_back(em);

    if (!dev.empty() && em.dev_l_asr < best_dev - 1e-12) {
      best_dev = em.dev_l_asr;
      since_best = 0;
      result.best_checkpoint = ckpt;
      ps_.save_checkpoint(out_dir + "/best.ckpt", step);
    } else if (!dev.empty()) {
      ++since_best;
      if (cfg_.stage == "finetune" && cfg_.early_stop_patience > 0 &&
          since_best >= cfg_.early_stop_patience)
        stop = true;
    }
  }
  if (result.best_checkpoint.empty())
    result.best_checkpoint = out_dir + "/last.ckpt";
  result.final_step = step;
  return result;
}

}  // namespace csasr
