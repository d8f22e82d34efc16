#pragma once

#include "csasr/layers.hpp"

namespace csasr {

struct ConformerConfig {
  int64_t feat_dim = 80;
  int64_t d_model = 512;        // d^att; per-head width is d_model/heads
  int64_t attention_heads = 4;
  int64_t conv_kernel = 15;
  int64_t encoder_layers = 8;
  int64_t decoder_layers = 4;
  int64_t ff_units = 2048;
  int64_t subsample_channels = 0;  // 0 -> d_model
  double dropout = 0.1;
  double ctc_weight = 0.3;      // alpha in the joint loss
  double label_smoothing = 0.1;
  int64_t vocab_size = 0;       // includes specials; blank = 0

  void validate() const;
  // Output length of the two stride-2 subsampler convs for an input of T
  // frames (pad 1 then pad 0); throws if T is too short.
  int64_t subsampled_len(int64_t T) const;
};

struct LossOutput {
  double l_asr = 0.0, l_ctc = 0.0, l_ce = 0.0;
};

// Bare Eq.-style multi-head attention: per head softmax(QK^T/sqrt(d_k))V,
// heads concatenated then projected. score_mask (q_len x kv_len) is additive.
Var multi_head_attention(const Var& q_in, const Var& kv_in, const Linear& wq,
                         const Linear& wk, const Linear& wv, const Linear& wo,
                         int64_t heads, const Tensor* score_mask = nullptr);

Var ce_loss(const Var& logits, const std::vector<int>& target, double smoothing);
Var joint_loss(const Var& l_ctc, const Var& l_ce, double alpha);

class ConformerModel {
 public:
  ConformerModel(const ConformerConfig& cfg, ParamStore& ps, Rng& rng);

  // One utterance, features T x feat_dim (zero-padded past valid_len).
  // valid_len < 0 means the whole input is valid.
  Var encode(const Var& feats, bool training, Rng& rng, int64_t valid_len = -1);
  // CTC branch: log-probs T' x vocab over the encoder states.
  Var ctc_log_probs(const Var& enc_states);
  // y_in must begin with sos; returns logits |y_in| x vocab.
  Var decoder_forward(const Var& enc_states, const std::vector<int>& y_in,
                      bool training, Rng& rng, int64_t enc_valid = -1);

  // One encoder block in isolation (block-level contracts and gradient checks).
  Var encoder_block(int64_t i, const Var& x, bool training, Rng& rng,
                    int64_t valid_len = -1);

  // Full training objective for one utterance; tokens exclude sos/eos.
  Var utterance_loss(const Var& feats, const std::vector<int>& tokens,
                     bool training, Rng& rng, LossOutput* out = nullptr);

  const ConformerConfig& config() const { return cfg_; }

 private:
  struct FeedForward {
    LayerNorm norm;
    Linear lin1, lin2;
  };
  struct Attention {
    LayerNorm norm;
    Linear wq, wk, wv, wo;
  };
  struct ConvModule {
    LayerNorm norm;
    Linear pw1, pw2;
    DepthwiseConv dconv;
    BatchNorm bn;
  };
  struct EncoderBlock {
    FeedForward ff1, ff2;
    Attention mhsa;
    ConvModule conv;
    LayerNorm final_norm;
  };
  struct DecoderBlock {
    Attention self_attn, cross_attn;
    FeedForward ff;
  };

  Var ff_forward(const FeedForward& ff, const Var& x, bool training, Rng& rng);
  // q_len x kv_len attention with an additive score mask (nullptr = none).
  Var attend(const Attention& a, const Var& q_in, const Var& kv_in,
             const Tensor* score_mask, bool training, Rng& rng);
  Var conv_forward(ConvModule& cm, const Var& x, int64_t valid, bool training,
                   Rng& rng);
  Var block_forward(EncoderBlock& b, const Var& x, const Tensor* att_mask,
                    int64_t valid, bool training, Rng& rng);

  ConformerConfig cfg_;
  Var sub_w1_, sub_b1_, sub_w2_, sub_b2_;  // subsampler convs
  Linear sub_proj_;
  std::vector<EncoderBlock> enc_;
  Var embed_;
  std::vector<DecoderBlock> dec_;
  LayerNorm dec_final_norm_;
  Linear ctc_proj_, out_proj_;
};

}  // namespace csasr
