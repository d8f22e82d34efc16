#include "csasr/conformer.hpp"

#include <cmath>
#include <stdexcept>

#include "csasr/ctc.hpp"
#include "csasr/text.hpp"

namespace csasr {

void ConformerConfig::validate() const {
  if (d_model <= 0 || ff_units <= 0 || feat_dim <= 0)
    throw std::invalid_argument("config: dimensions must be positive");
  if (attention_heads <= 0 || d_model % attention_heads != 0)
    throw std::invalid_argument("config: d_model must divide by heads");
  if (conv_kernel < 1 || conv_kernel % 2 == 0)
    throw std::invalid_argument("config: conv_kernel must be odd");
  if (encoder_layers < 1 || decoder_layers < 1)
    throw std::invalid_argument("config: need at least one layer per stack");
  if (ctc_weight < 0.0 || ctc_weight > 1.0)
    throw std::invalid_argument("config: ctc_weight outside [0,1]");
  if (vocab_size < 6)
    throw std::invalid_argument("config: vocab_size too small for specials");
}

int64_t ConformerConfig::subsampled_len(int64_t T) const {
  // conv1: kernel 3, stride 2, pad 1; conv2: kernel 3, stride 2, pad 0
  if (T < 1) throw std::invalid_argument("subsampler: empty input");
  int64_t t1 = (T - 1) / 2 + 1;
  if (t1 < 3)
    throw std::invalid_argument("subsampler: input too short (" +
                                std::to_string(T) + " frames)");
  return (t1 - 3) / 2 + 1;
}

namespace {

// C x H x W -> H x (C*W): time-major flatten after the subsampler convs.
Var time_major(const Var& x) {
  const Tensor& v = x->value;
  if (v.shape.size() != 3) throw std::invalid_argument("time_major: need CxHxW");
  int64_t C = v.shape[0], H = v.shape[1], W = v.shape[2];
  auto out = std::make_shared<Node>();
  out->value = Tensor::zeros({H, C * W});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w)
        out->value.data[h * C * W + c * W + w] = v.data[(c * H + h) * W + w];
  out->requires_grad = x->requires_grad;
  if (out->requires_grad) {
    out->parents = {x};
    out->backprop = [C, H, W](Node& n) {
      Tensor& pg = n.parents[0]->ensure_grad();
      for (int64_t c = 0; c < C; ++c)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t w = 0; w < W; ++w)
            pg.data[(c * H + h) * W + w] += n.grad.data[h * C * W + c * W + w];
    };
  }
  return out;
}

Tensor band_mask(int64_t rows, int64_t cols, int64_t valid_cols) {
  Tensor m = Tensor::zeros({rows, cols});
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = valid_cols; c < cols; ++c) m.data[r * cols + c] = -1e30;
  return m;
}

Tensor causal_mask(int64_t n) {
  Tensor m = Tensor::zeros({n, n});
  for (int64_t r = 0; r < n; ++r)
    for (int64_t c = r + 1; c < n; ++c) m.data[r * n + c] = -1e30;
  return m;
}

}  // namespace

Var multi_head_attention(const Var& q_in, const Var& kv_in, const Linear& wq,
                         const Linear& wk, const Linear& wv, const Linear& wo,
                         int64_t heads, const Tensor* score_mask) {
  int64_t d = q_in->value.shape[1];
  if (score_mask && (score_mask->shape[0] != q_in->value.shape[0] ||
                     score_mask->shape[1] != kv_in->value.shape[0]))
    throw std::invalid_argument("attention mask shape mismatch");
  int64_t dk = d / heads;
  Var q = wq(q_in), k = wk(kv_in), v = wv(kv_in);
  std::vector<Var> outs;
  for (int64_t h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dk, (h + 1) * dk);
    Var kh = slice_cols(k, h * dk, (h + 1) * dk);
    Var vh = slice_cols(v, h * dk, (h + 1) * dk);
    Var scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dk)));
    if (score_mask) scores = add_const(scores, *score_mask);
    outs.push_back(matmul(softmax(scores, 1), vh));
  }
  return wo(concat_cols(outs));
}

ConformerModel::ConformerModel(const ConformerConfig& cfg, ParamStore& ps, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.subsample_channels <= 0) cfg_.subsample_channels = cfg_.d_model;
  const int64_t d = cfg_.d_model, C = cfg_.subsample_channels;

  sub_w1_ = ps.create("subsampler.conv1.w", {C, 1, 3, 3}, rng, "xavier");
  sub_b1_ = ps.create("subsampler.conv1.b", {C}, rng, "zeros");
  sub_w2_ = ps.create("subsampler.conv2.w", {C, C, 3, 3}, rng, "xavier");
  sub_b2_ = ps.create("subsampler.conv2.b", {C}, rng, "zeros");
  int64_t w1 = (cfg_.feat_dim - 1) / 2 + 1;
  int64_t w2 = (w1 - 3) / 2 + 1;
  if (w2 < 1) throw std::invalid_argument("config: feat_dim too small");
  sub_proj_ = Linear(ps, "subsampler.proj", C * w2, d, rng);

  auto make_ff = [&](const std::string& p) {
    FeedForward ff;
    ff.norm = LayerNorm(ps, p + ".norm", d, rng);
    ff.lin1 = Linear(ps, p + ".lin1", d, cfg_.ff_units, rng);
    ff.lin2 = Linear(ps, p + ".lin2", cfg_.ff_units, d, rng);
    return ff;
  };
  auto make_attn = [&](const std::string& p) {
    Attention a;
    a.norm = LayerNorm(ps, p + ".norm", d, rng);
    a.wq = Linear(ps, p + ".wq", d, d, rng);
    a.wk = Linear(ps, p + ".wk", d, d, rng);
    a.wv = Linear(ps, p + ".wv", d, d, rng);
    a.wo = Linear(ps, p + ".wo", d, d, rng);
    return a;
  };

  for (int64_t i = 0; i < cfg_.encoder_layers; ++i) {
    std::string p = "encoder.block" + std::to_string(i);
    EncoderBlock b;
    b.ff1 = make_ff(p + ".ff1");
    b.mhsa = make_attn(p + ".mhsa");
    b.conv.norm = LayerNorm(ps, p + ".conv.norm", d, rng);
    b.conv.pw1 = Linear(ps, p + ".conv.pw1", d, 2 * d, rng);
    b.conv.dconv = DepthwiseConv(ps, p + ".conv.depthwise", d, cfg_.conv_kernel, rng);
    b.conv.bn = BatchNorm(ps, p + ".conv.bn", d, rng);
    b.conv.pw2 = Linear(ps, p + ".conv.pw2", d, d, rng);
    b.ff2 = make_ff(p + ".ff2");
    b.final_norm = LayerNorm(ps, p + ".final_norm", d, rng);
    enc_.push_back(std::move(b));
  }

  embed_ = ps.create("decoder.embed", {cfg_.vocab_size, d}, rng, "xavier");
  for (int64_t i = 0; i < cfg_.decoder_layers; ++i) {
    std::string p = "decoder.block" + std::to_string(i);
    DecoderBlock b;
    b.self_attn = make_attn(p + ".self_attn");
    b.cross_attn = make_attn(p + ".cross_attn");
    b.ff = make_ff(p + ".ff");
    dec_.push_back(std::move(b));
  }
  dec_final_norm_ = LayerNorm(ps, "decoder.final_norm", d, rng);
  ctc_proj_ = Linear(ps, "ctc_proj", d, cfg_.vocab_size, rng);
  out_proj_ = Linear(ps, "decoder.out_proj", d, cfg_.vocab_size, rng);
}

Var ConformerModel::ff_forward(const FeedForward& ff, const Var& x, bool training,
                               Rng& rng) {
  Var y = swish(ff.lin1(ff.norm(x)));
  y = dropout(y, cfg_.dropout, training, rng);
  return dropout(ff.lin2(y), cfg_.dropout, training, rng);
}

Var ConformerModel::attend(const Attention& a, const Var& q_in, const Var& kv_in,
                           const Tensor* score_mask, bool training, Rng& rng) {
  Var qn = a.norm(q_in);
  Var kvn = kv_in.get() == q_in.get() ? qn : kv_in;
  Var o = multi_head_attention(qn, kvn, a.wq, a.wk, a.wv, a.wo,
                               cfg_.attention_heads, score_mask);
  return dropout(o, cfg_.dropout, training, rng);
}

Var ConformerModel::conv_forward(ConvModule& cm, const Var& x, int64_t valid,
                                 bool training, Rng& rng) {
  int64_t T = x->value.shape[0];
  Var y = glu(cm.pw1(cm.norm(x)));
  if (valid < T) {
    // padded rows must read as the depthwise conv's zero padding
    Tensor rows = Tensor::zeros({T});
    for (int64_t t = 0; t < valid; ++t) rows.data[t] = 1.0;
    y = mul_colmask(y, rows);
  }
  y = cm.dconv(y);
  y = swish(cm.bn(y, training));
  return dropout(cm.pw2(y), cfg_.dropout, training, rng);
}

Var ConformerModel::encode(const Var& feats, bool training, Rng& rng,
                           int64_t valid_len) {
  const int64_t T = feats->value.shape[0];
  if (feats->value.shape[1] != cfg_.feat_dim)
    throw std::invalid_argument("encode: feature width mismatch");
  cfg_.subsampled_len(T);  // validates the minimum input length
  Var x = reshape(feats, {1, T, cfg_.feat_dim});
  x = relu(conv2d(x, sub_w1_, sub_b1_, 2, 1));
  x = relu(conv2d(x, sub_w2_, sub_b2_, 2, 0));
  x = sub_proj_(time_major(x));
  const int64_t T2 = x->value.shape[0];
  x = add_const(x, sinusoidal_positions(T2, cfg_.d_model));
  x = dropout(x, cfg_.dropout, training, rng);

  int64_t valid = valid_len < 0 ? T2 : cfg_.subsampled_len(valid_len);
  Tensor att_mask;
  bool masked = valid < T2;
  if (masked) att_mask = band_mask(T2, T2, valid);

  for (size_t i = 0; i < enc_.size(); ++i)
    x = block_forward(enc_[i], x, masked ? &att_mask : nullptr, valid, training,
                      rng);
  return x;
}

Var ConformerModel::block_forward(EncoderBlock& b, const Var& x_in,
                                  const Tensor* att_mask, int64_t valid,
                                  bool training, Rng& rng) {
  Var x = add(x_in, scale(ff_forward(b.ff1, x_in, training, rng), 0.5));
  x = add(x, attend(b.mhsa, x, x, att_mask, training, rng));
  x = add(x, conv_forward(b.conv, x, valid, training, rng));
  x = add(x, scale(ff_forward(b.ff2, x, training, rng), 0.5));
  return b.final_norm(x);
}

Var ConformerModel::encoder_block(int64_t i, const Var& x, bool training,
                                  Rng& rng, int64_t valid_len) {
  if (i < 0 || i >= static_cast<int64_t>(enc_.size()))
    throw std::invalid_argument("encoder_block: index out of range");
  int64_t T = x->value.shape[0];
  int64_t valid = valid_len < 0 ? T : valid_len;
  Tensor mask;
  bool masked = valid < T;
  if (masked) mask = band_mask(T, T, valid);
  return block_forward(enc_[i], x, masked ? &mask : nullptr, valid, training, rng);
}

Var ConformerModel::ctc_log_probs(const Var& enc_states) {
  return log_softmax(ctc_proj_(enc_states), 1);
}

Var ConformerModel::decoder_forward(const Var& enc_states,
                                    const std::vector<int>& y_in, bool training,
                                    Rng& rng, int64_t enc_valid) {
  if (y_in.empty()) throw std::invalid_argument("decoder: empty input");
  SpecialIds sp;
  if (y_in[0] != sp.sos) throw std::invalid_argument("decoder: input must start with sos");
  for (int id : y_in)
    if (id < 0 || id >= cfg_.vocab_size)
      throw std::invalid_argument("decoder: token id out of range");
  const int64_t L = static_cast<int64_t>(y_in.size());
  const int64_t Te = enc_states->value.shape[0];

  Var x = scale(embedding(embed_, y_in), std::sqrt(double(cfg_.d_model)));
  x = add_const(x, sinusoidal_positions(L, cfg_.d_model));
  x = dropout(x, cfg_.dropout, training, rng);

  Tensor self_mask = causal_mask(L);
  Tensor cross;
  bool cross_masked = enc_valid >= 0 && enc_valid < Te;
  if (cross_masked) cross = band_mask(L, Te, enc_valid);

  for (auto& b : dec_) {
    x = add(x, attend(b.self_attn, x, x, &self_mask, training, rng));
    x = add(x, attend(b.cross_attn, x, enc_states,
                      cross_masked ? &cross : nullptr, training, rng));
    x = add(x, ff_forward(b.ff, x, training, rng));
  }
  return out_proj_(dec_final_norm_(x));
}

Var ce_loss(const Var& logits, const std::vector<int>& target, double smoothing) {
  const int64_t L = logits->value.shape[0], V = logits->value.shape[1];
  if (target.empty()) throw std::invalid_argument("ce_loss: empty target");
  if (static_cast<int64_t>(target.size()) != L)
    throw std::invalid_argument("ce_loss: target/logit length mismatch");
  Tensor q = Tensor::zeros({L, V});
  for (int64_t t = 0; t < L; ++t) {
    if (target[t] < 0 || target[t] >= V)
      throw std::invalid_argument("ce_loss: target id out of range");
    for (int64_t v = 0; v < V; ++v) q.data[t * V + v] = smoothing / double(V);
    q.data[t * V + target[t]] += 1.0 - smoothing;
  }
  Var lp = log_softmax(logits, 1);
  return scale(sum(mul(lp, constant(q))), -1.0 / double(L));
}

Var joint_loss(const Var& l_ctc, const Var& l_ce, double alpha) {
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("joint_loss: alpha outside [0,1]");
  return add(scale(l_ctc, alpha), scale(l_ce, 1.0 - alpha));
}

Var ConformerModel::utterance_loss(const Var& feats, const std::vector<int>& tokens,
                                   bool training, Rng& rng, LossOutput* out) {
  SpecialIds sp;
  Var enc = encode(feats, training, rng);
  Var l_ctc = ctc_loss(ctc_log_probs(enc), tokens, sp.blank);
  std::vector<int> y_in = {sp.sos};
  y_in.insert(y_in.end(), tokens.begin(), tokens.end());
  std::vector<int> target(tokens);
  target.push_back(sp.eos);
  Var logits = decoder_forward(enc, y_in, training, rng);
  Var l_ce = ce_loss(logits, target, cfg_.label_smoothing);
  Var l = joint_loss(l_ctc, l_ce, cfg_.ctc_weight);
  if (out) {
    out->l_ctc = l_ctc->value.data[0];
    out->l_ce = l_ce->value.data[0];
    out->l_asr = l->value.data[0];
  }
  return l;
}

}  // namespace csasr
