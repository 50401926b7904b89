#include "psdn/model.hpp"

#include <cmath>

#include "psdn/errors.hpp"

namespace psdn {

void ModelDims::validate() const {
  if (d_bnf < 1) throw UsageError("model dims: d_bnf must be >= 1");
  if (content_hidden < heads || content_hidden % heads != 0)
    throw UsageError("model dims: content_hidden must be divisible by heads");
  if (dec_hidden < heads || dec_hidden % heads != 0)
    throw UsageError("model dims: dec_hidden must be divisible by heads");
  if (content_blocks < 1 || dec_blocks < 1)
    throw UsageError("model dims: block counts must be >= 1");
  if (ffn_mult < 1) throw UsageError("model dims: ffn_mult must be >= 1");
  if (conv_kernel < 1 || conv_kernel % 2 == 0)
    throw UsageError("model dims: conv_kernel must be odd");
  if (clf_rnn_hidden < 1 || clf_channels < 1)
    throw UsageError("model dims: classifier widths must be >= 1");
  for (int c : timbre_conv_channels)
    if (c < 1) throw UsageError("model dims: timbre conv channels must be >= 1");
  if (timbre_rnn_hidden < 1)
    throw UsageError("model dims: timbre_rnn_hidden must be >= 1");
  if (timbre_tokens != 20 || timbre_token_dim != 256)
    throw UsageError("model dims: the style token bank is fixed at 20 x 256");
  if (timbre_attn_dim < 1)
    throw UsageError("model dims: timbre_attn_dim must be >= 1");
  for (int c : aux_channels)
    if (c < 1) throw UsageError("model dims: aux channels must be >= 1");
  if (aux_channels[3] != 16)
    throw UsageError("model dims: auxiliary features are fixed at width 16");
}

nlohmann::ordered_json ModelDims::to_json() const {
  nlohmann::ordered_json j;
  j["d_bnf"] = d_bnf;
  j["content_hidden"] = content_hidden;
  j["content_blocks"] = content_blocks;
  j["heads"] = heads;
  j["ffn_mult"] = ffn_mult;
  j["conv_kernel"] = conv_kernel;
  j["clf_rnn_hidden"] = clf_rnn_hidden;
  j["clf_channels"] = clf_channels;
  j["timbre_conv_channels"] = timbre_conv_channels;
  j["timbre_rnn_hidden"] = timbre_rnn_hidden;
  j["timbre_tokens"] = timbre_tokens;
  j["timbre_token_dim"] = timbre_token_dim;
  j["timbre_attn_dim"] = timbre_attn_dim;
  j["aux_channels"] = aux_channels;
  j["dec_hidden"] = dec_hidden;
  j["dec_blocks"] = dec_blocks;
  return j;
}

ModelDims ModelDims::from_json(const nlohmann::ordered_json& j) {
  ModelDims d = ModelDims::desk();
  JsonReader r(j, "model dims");
  d.d_bnf = r.get("d_bnf", d.d_bnf);
  d.content_hidden = r.get("content_hidden", d.content_hidden);
  d.content_blocks = r.get("content_blocks", d.content_blocks);
  d.heads = r.get("heads", d.heads);
  d.ffn_mult = r.get("ffn_mult", d.ffn_mult);
  d.conv_kernel = r.get("conv_kernel", d.conv_kernel);
  d.clf_rnn_hidden = r.get("clf_rnn_hidden", d.clf_rnn_hidden);
  d.clf_channels = r.get("clf_channels", d.clf_channels);
  d.timbre_conv_channels =
      r.get("timbre_conv_channels", d.timbre_conv_channels);
  d.timbre_rnn_hidden = r.get("timbre_rnn_hidden", d.timbre_rnn_hidden);
  d.timbre_tokens = r.get("timbre_tokens", d.timbre_tokens);
  d.timbre_token_dim = r.get("timbre_token_dim", d.timbre_token_dim);
  d.timbre_attn_dim = r.get("timbre_attn_dim", d.timbre_attn_dim);
  d.aux_channels = r.get("aux_channels", d.aux_channels);
  d.dec_hidden = r.get("dec_hidden", d.dec_hidden);
  d.dec_blocks = r.get("dec_blocks", d.dec_blocks);
  r.finish();
  d.validate();
  return d;
}

std::string variant_name(Variant v) {
  return v == Variant::kPsdn ? "psdn" : "grl_only_baseline";
}

Variant variant_from_name(const std::string& name) {
  if (name == "psdn") return Variant::kPsdn;
  if (name == "grl_only_baseline" || name == "grl-only")
    return Variant::kGrlOnlyBaseline;
  throw UsageError("unknown variant '" + name + "'");
}

double total_loss(const LossBreakdown& parts) {
  if (!std::isfinite(parts.content_loss) ||
      !std::isfinite(parts.accent_target_term) ||
      !std::isfinite(parts.accent_aux_term))
    throw NumericError("non-finite loss parts");
  return parts.content_loss + parts.accent_target_term + parts.accent_aux_term;
}

std::pair<double, double> accent_loss_terms(
    const std::optional<MatF>& pred_target, const MatF& pred_aux,
    const MatF& y_aug_mel, bool is_target_accent) {
  if (is_target_accent && !pred_target)
    throw DataError("accent loss: target-accent item without a target-stream "
                    "prediction");
  if (!is_target_accent && pred_target)
    throw DataError("accent loss: target-stream prediction supplied for an "
                    "other-accent item");
  auto l1 = [](const MatF& a, const MatF& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
      throw DataError("accent loss: shape mismatch");
    return (a.cast<double>() - b.cast<double>()).cwiseAbs().mean();
  };
  const double target_term = is_target_accent ? l1(*pred_target, y_aug_mel) : 0.0;
  const double aux_term = l1(pred_aux, y_aug_mel);
  return {target_term, aux_term};
}

}  // namespace psdn
