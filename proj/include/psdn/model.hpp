#pragma once

#include <array>
#include <json.hpp>
#include <memory>
#include <optional>
#include <string>

#include "psdn/json_util.hpp"
#include "psdn/nn.hpp"
#include "psdn/types.hpp"

namespace psdn {

// Architecture widths. paper() matches the published configuration; desk()
// is the shrunk configuration used by the acceptance runs (hidden widths 64,
// narrower helper towers). Token bank (20 x 256), timbre output width 256,
// aux feature width 16 and mel width 80 are structural and stay fixed.
struct ModelDims {
  int d_bnf = 256;
  int content_hidden = 512;
  int content_blocks = 3;
  int heads = 4;
  int ffn_mult = 4;
  int conv_kernel = 7;
  int clf_rnn_hidden = 256;
  int clf_channels = 256;
  std::array<int, 4> timbre_conv_channels = {16, 32, 64, 128};
  int timbre_rnn_hidden = 256;
  int timbre_tokens = 20;
  int timbre_token_dim = 256;
  int timbre_attn_dim = 64;
  std::array<int, 4> aux_channels = {128, 128, 128, 16};
  int dec_hidden = 512;
  int dec_blocks = 3;

  static ModelDims paper() { return ModelDims{}; }
  static ModelDims desk() {
    ModelDims d;
    d.content_hidden = 64;
    d.dec_hidden = 64;
    d.ffn_mult = 2;
    d.clf_rnn_hidden = 64;
    d.clf_channels = 64;
    d.timbre_conv_channels = {8, 16, 32, 64};
    d.timbre_rnn_hidden = 128;
    d.aux_channels = {64, 64, 64, 16};
    return d;
  }

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static ModelDims from_json(const nlohmann::ordered_json& j);
};

enum class Variant { kPsdn, kGrlOnlyBaseline };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// Loss parts of one step (means over their contributing items).
struct LossBreakdown {
  double content_loss = 0.0;
  double accent_target_term = 0.0;
  double accent_aux_term = 0.0;
  double total = 0.0;
};

inline LossBreakdown make_breakdown(double content, double target_term,
                                    double aux_term) {
  return LossBreakdown{content, target_term, aux_term,
                       content + target_term + aux_term};
}

// Unweighted sum of the parts.
double total_loss(const LossBreakdown& parts);

// L1 terms of the accent loss. pred_target must be present exactly for
// target-accent items (routing contract); the target term is 0 for
// other-accent items. Each term is a mean over all T x 80 entries.
std::pair<double, double> accent_loss_terms(
    const std::optional<MatF>& pred_target, const MatF& pred_aux,
    const MatF& y_aug_mel, bool is_target_accent);

namespace detail {

template <class S>
struct TimbreConvBn {
  ad::Parameter<S>* w = nullptr;
  ad::Parameter<S>* b = nullptr;
  ad::BatchNorm<S> bn;
  int cout = 0;
};

}  // namespace detail

template <class S>
struct ContentEncoder {
  ad::ConformerStack<S> stack;

  typename ad::Graph<S>::Var forward(ad::Graph<S>& g,
                                     typename ad::Graph<S>::Var bnf) const {
    return stack.forward(g, bnf);
  }
};

template <class S>
struct AccentClassifier {
  using GVar = typename ad::Graph<S>::Var;
  ad::BiLstm<S> lstm;
  std::array<ad::ResConvBlock1d<S>, 4> blocks;
  ad::Linear<S> head;
  static constexpr std::array<int, 4> kDownsample = {4, 2, 2, 2};

  // Short inputs are padded to the next multiple of 32 frames by repeating
  // the last frame, so every downsampling stage divides exactly.
  GVar forward(ad::Graph<S>& g, GVar f_content) const {
    const int t_in = static_cast<int>(g.value(f_content).rows());
    const int padded = ((std::max(t_in, 1) + 31) / 32) * 32;
    GVar x = g.pad_rows_repeat_last(f_content, padded);
    x = lstm.forward(g, x);
    for (const auto& b : blocks) x = b.forward(g, x);
    return head.forward(g, g.row_mean(x));
  }
};

template <class S>
struct TimbreEncoder {
  using GVar = typename ad::Graph<S>::Var;
  std::array<detail::TimbreConvBn<S>, 4> convs;
  ad::Gru<S> gru;
  ad::Parameter<S>* tokens = nullptr;  // [20 x 256]
  ad::Linear<S> q_proj, k_proj;
  int attn_dim = 64;

  GVar forward(ad::Graph<S>& g, GVar mel) const {
    const int t_in = static_cast<int>(g.value(mel).rows());
    GVar padded = g.pad_rows_repeat_last(mel, std::max(t_in, 16));
    int h = static_cast<int>(g.value(padded).rows());
    int w = kMelDim;
    GVar x = g.reshape(padded, h * w, 1);
    for (const auto& c : convs) {
      auto out = g.conv2d(x, h, w, g.param(*c.w), g.param(*c.b), 3, 2, 1);
      x = g.relu(c.bn.forward(g, out.var));
      h = out.h;
      w = out.w;
    }
    GVar seq = g.reshape(x, h, w * convs.back().cout);
    GVar states = gru.forward(g, seq);
    GVar last = g.slice_rows(states, h - 1, 1);
    GVar scores = g.scale(
        g.matmul_nt(q_proj.forward(g, last), k_proj.forward(g, g.param(*tokens))),
        1.0 / std::sqrt(static_cast<double>(attn_dim)));
    // Convex combination of the raw tokens: the output always lies in the
    // token span.
    return g.matmul(g.softmax_rows(scores), g.param(*tokens));
  }
};

template <class S>
struct AuxEncoder {
  using GVar = typename ad::Graph<S>::Var;
  std::array<ad::ResConvBlock1d<S>, 4> blocks;

  GVar forward(ad::Graph<S>& g, GVar mel) const {
    GVar x = mel;
    for (const auto& b : blocks) x = b.forward(g, x);
    return x;
  }
};

// Conditioning projection + conformer blocks + mel head.
template <class S>
struct Decoder {
  using GVar = typename ad::Graph<S>::Var;
  ad::ConformerStack<S> stack;
  ad::Linear<S> out;

  GVar forward(ad::Graph<S>& g, GVar cond) const {
    return out.forward(g, stack.forward(g, cond));
  }
};

template <class S>
class PsdnModel {
 public:
  using GVar = typename ad::Graph<S>::Var;

  static std::unique_ptr<PsdnModel> build(const ModelDims& dims,
                                          Variant variant, std::uint64_t seed);

  const ModelDims& dims() const { return dims_; }
  Variant variant() const { return variant_; }
  ad::ParamStore<S>& store() { return store_; }
  const ad::ParamStore<S>& store() const { return store_; }

  GVar content_forward(ad::Graph<S>& g, GVar bnf) const {
    return content_.forward(g, bnf);
  }
  GVar classifier_logits(ad::Graph<S>& g, GVar f_content_reversed) const {
    return classifier_.forward(g, f_content_reversed);
  }
  GVar timbre_forward(ad::Graph<S>& g, GVar mel) const {
    return timbre_.forward(g, mel);
  }
  GVar aux_encode(ad::Graph<S>& g, GVar mel) const;
  GVar decode_target(ad::Graph<S>& g, GVar f_content, GVar f_timbre) const;
  GVar decode_aux(ad::Graph<S>& g, GVar f_content, GVar f_timbre,
                  GVar f_aux) const;
  GVar decode_baseline(ad::Graph<S>& g, bool target_decoder, GVar f_content,
                       GVar f_timbre) const;

  struct ItemLoss {
    GVar ce;
    GVar l1_target;  // valid only when has_target
    GVar l1_aux;     // valid only when has_aux
    bool has_target = false;
    bool has_aux = false;
  };

  // Builds the full per-item training objective parts. The target stream
  // (or the baseline's target decoder) is only ever evaluated for
  // target-accent items; other-accent items route through the auxiliary
  // stream (or the baseline's other decoder).
  ItemLoss item_loss(ad::Graph<S>& g, const ad::Mat<S>& bnf,
                     const ad::Mat<S>& mel, const ad::Mat<S>& mel_aug,
                     bool is_target_accent, double grl_lambda) const;

  // Inference: content from BNF, timbre from the raw mel, target stream
  // only. Never evaluates the auxiliary encoder/stream (parameter use
  // counters stay untouched; tests assert this).
  ad::Mat<S> convert(const ad::Mat<S>& bnf, const ad::Mat<S>& mel) const;

 private:
  friend struct ModelAccess;
  ModelDims dims_;
  Variant variant_ = Variant::kPsdn;
  ad::ParamStore<S> store_;
  ContentEncoder<S> content_;
  AccentClassifier<S> classifier_;
  TimbreEncoder<S> timbre_;
  AuxEncoder<S> aux_encoder_;
  Decoder<S> target_stream_;
  Decoder<S> aux_stream_;
  Decoder<S> dec_target_;
  Decoder<S> dec_other_;
};

template <class S>
std::unique_ptr<PsdnModel<S>> PsdnModel<S>::build(const ModelDims& dims,
                                                  Variant variant,
                                                  std::uint64_t seed) {
  dims.validate();
  auto m = std::make_unique<PsdnModel<S>>();
  m->dims_ = dims;
  m->variant_ = variant;
  ad::ParamStore<S>& ps = m->store_;
  Rng rng(derive_seed(seed, "init"));

  m->content_.stack = ad::ConformerStack<S>::create(
      ps, "content.encoder", dims.d_bnf, dims.content_hidden,
      dims.content_blocks, dims.heads, dims.ffn_mult, dims.conv_kernel, rng);

  m->classifier_.lstm = ad::BiLstm<S>::create(
      ps, "content.classifier.lstm", dims.content_hidden, dims.clf_rnn_hidden,
      rng);
  int cin = 2 * dims.clf_rnn_hidden;
  for (int i = 0; i < 4; ++i) {
    m->classifier_.blocks[i] = ad::ResConvBlock1d<S>::create(
        ps, "content.classifier.block" + std::to_string(i), cin,
        dims.clf_channels, AccentClassifier<S>::kDownsample[i], rng);
    cin = dims.clf_channels;
  }
  m->classifier_.head = ad::Linear<S>::create(ps, "content.classifier.head",
                                              dims.clf_channels, 2, rng);

  int conv_in = 1;
  for (int i = 0; i < 4; ++i) {
    auto& c = m->timbre_.convs[i];
    c.cout = dims.timbre_conv_channels[i];
    const std::string prefix = "timbre.conv" + std::to_string(i);
    c.w = &ps.create(prefix + ".w", 9 * conv_in, c.cout);
    c.b = &ps.create(prefix + ".b", 1, c.cout);
    init_uniform_fan_in(*c.w, 9 * conv_in, rng);
    init_uniform_fan_in(*c.b, 9 * conv_in, rng);
    c.bn = ad::BatchNorm<S>::create(ps, "timbre.bn" + std::to_string(i),
                                    c.cout);
    conv_in = c.cout;
  }
  int freq = kMelDim;
  for (int i = 0; i < 4; ++i) freq = (freq - 1) / 2 + 1;  // 80 -> 5
  m->timbre_.gru = ad::Gru<S>::create(
      ps, "timbre.gru", freq * dims.timbre_conv_channels[3],
      dims.timbre_rnn_hidden, rng);
  m->timbre_.tokens =
      &ps.create("timbre.tokens", dims.timbre_tokens, dims.timbre_token_dim);
  init_gaussian(*m->timbre_.tokens, 0.5, rng);
  m->timbre_.attn_dim = dims.timbre_attn_dim;
  m->timbre_.q_proj = ad::Linear<S>::create(
      ps, "timbre.attn.q", dims.timbre_rnn_hidden, dims.timbre_attn_dim, rng);
  m->timbre_.k_proj = ad::Linear<S>::create(
      ps, "timbre.attn.k", dims.timbre_token_dim, dims.timbre_attn_dim, rng);

  auto make_decoder = [&](const std::string& prefix, int cond_in) {
    Decoder<S> d;
    d.stack = ad::ConformerStack<S>::create(ps, prefix, cond_in,
                                            dims.dec_hidden, dims.dec_blocks,
                                            dims.heads, dims.ffn_mult,
                                            dims.conv_kernel, rng);
    d.out = ad::Linear<S>::create(ps, prefix + ".out", dims.dec_hidden,
                                  kMelDim, rng);
    return d;
  };
  const int cond_base = dims.content_hidden + dims.timbre_token_dim;

  if (variant == Variant::kPsdn) {
    m->target_stream_ = make_decoder("psdn.target", cond_base);
    cin = kMelDim;
    for (int i = 0; i < 4; ++i) {
      m->aux_encoder_.blocks[i] = ad::ResConvBlock1d<S>::create(
          ps, "psdn.aux_encoder.block" + std::to_string(i), cin,
          dims.aux_channels[i], 1, rng);
      cin = dims.aux_channels[i];
    }
    m->aux_stream_ = make_decoder("psdn.aux", cond_base + dims.aux_channels[3]);
  } else {
    m->dec_target_ = make_decoder("baseline.dec_target", cond_base);
    m->dec_other_ = make_decoder("baseline.dec_other", cond_base);
  }
  return m;
}

template <class S>
typename PsdnModel<S>::GVar PsdnModel<S>::aux_encode(ad::Graph<S>& g,
                                                     GVar mel) const {
  if (variant_ != Variant::kPsdn)
    throw DataError("auxiliary encoder only exists in the psdn variant");
  return aux_encoder_.forward(g, mel);
}

template <class S>
typename PsdnModel<S>::GVar PsdnModel<S>::decode_target(ad::Graph<S>& g,
                                                        GVar f_content,
                                                        GVar f_timbre) const {
  if (variant_ != Variant::kPsdn)
    throw DataError("target stream only exists in the psdn variant");
  const int t_len = static_cast<int>(g.value(f_content).rows());
  GVar cond = g.concat_cols({f_content, g.broadcast_row(f_timbre, t_len)});
  return target_stream_.forward(g, cond);
}

template <class S>
typename PsdnModel<S>::GVar PsdnModel<S>::decode_aux(ad::Graph<S>& g,
                                                     GVar f_content,
                                                     GVar f_timbre,
                                                     GVar f_aux) const {
  if (variant_ != Variant::kPsdn)
    throw DataError("auxiliary stream only exists in the psdn variant");
  const int t_len = static_cast<int>(g.value(f_content).rows());
  if (g.value(f_aux).rows() != t_len)
    throw DataError("f_aux frame count does not match f_content");
  GVar cond =
      g.concat_cols({f_content, g.broadcast_row(f_timbre, t_len), f_aux});
  return aux_stream_.forward(g, cond);
}

template <class S>
typename PsdnModel<S>::GVar PsdnModel<S>::decode_baseline(ad::Graph<S>& g,
                                                          bool target_decoder,
                                                          GVar f_content,
                                                          GVar f_timbre) const {
  if (variant_ != Variant::kGrlOnlyBaseline)
    throw DataError("baseline decoders only exist in the baseline variant");
  const int t_len = static_cast<int>(g.value(f_content).rows());
  GVar cond = g.concat_cols({f_content, g.broadcast_row(f_timbre, t_len)});
  return (target_decoder ? dec_target_ : dec_other_).forward(g, cond);
}

template <class S>
typename PsdnModel<S>::ItemLoss PsdnModel<S>::item_loss(
    ad::Graph<S>& g, const ad::Mat<S>& bnf, const ad::Mat<S>& mel,
    const ad::Mat<S>& mel_aug, bool is_target_accent,
    double grl_lambda) const {
  ItemLoss out;
  GVar bnf_v = g.input(bnf);
  GVar mel_v = g.input(mel);
  GVar aug_v = g.input(mel_aug);

  GVar f_content = content_forward(g, bnf_v);
  GVar logits = classifier_logits(g, g.grl(f_content, grl_lambda));
  out.ce = g.cross_entropy_logits(logits, is_target_accent ? 0 : 1);

  GVar f_timbre = timbre_forward(g, aug_v);
  if (variant_ == Variant::kPsdn) {
    GVar f_aux = aux_encode(g, mel_v);
    if (is_target_accent) {
      out.l1_target =
          g.mean_abs_diff(decode_target(g, f_content, f_timbre), aug_v);
      out.has_target = true;
    }
    out.l1_aux =
        g.mean_abs_diff(decode_aux(g, f_content, f_timbre, f_aux), aug_v);
    out.has_aux = true;
  } else {
    GVar pred = decode_baseline(g, is_target_accent, f_content, f_timbre);
    if (is_target_accent) {
      out.l1_target = g.mean_abs_diff(pred, aug_v);
      out.has_target = true;
    } else {
      out.l1_aux = g.mean_abs_diff(pred, aug_v);
      out.has_aux = true;
    }
  }
  return out;
}

template <class S>
ad::Mat<S> PsdnModel<S>::convert(const ad::Mat<S>& bnf,
                                 const ad::Mat<S>& mel) const {
  ad::Graph<S> g(/*training=*/false);
  GVar f_content = content_forward(g, g.input(bnf));
  GVar f_timbre = timbre_forward(g, g.input(mel));
  const int t_len = static_cast<int>(bnf.rows());
  GVar cond = g.concat_cols({f_content, g.broadcast_row(f_timbre, t_len)});
  const Decoder<S>& dec =
      variant_ == Variant::kPsdn ? target_stream_ : dec_target_;
  return g.value(dec.forward(g, cond));
}

}  // namespace psdn
