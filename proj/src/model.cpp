#include "xmdpt/model.hpp"

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace xmdpt {

ModelOptions ModelOptions::for_preset(const std::string& name) {
  ModelOptions o;
  o.aggregation = (name == "s" || name == "b" || name == "l")
                      ? AggregationMode::concat_conv
                      : AggregationMode::mlp;
  return o;
}

template <typename T>
GeneratorModel<T>::GeneratorModel(Rng& rng, ModelConfig cfg_, ModelOptions opts_)
    : cfg(cfg_), opts(opts_) {
  if (cfg.layers < 2) throw std::invalid_argument("model: need at least 2 layers");
  const auto width = static_cast<std::size_t>(cfg.width);
  patch_embed = PatchEmbed<T>(rng, static_cast<std::size_t>(cfg.token_dim()),
                              width, static_cast<std::size_t>(cfg.patch));
  pos = pos_embed_2d<T>(static_cast<std::size_t>(cfg.grid / cfg.patch), width);
  time_embed = TimestepEmbed<T>(rng, static_cast<std::size_t>(cfg.time_freq), width);
  blocks.reserve(static_cast<std::size_t>(cfg.layers));
  for (int i = 0; i < cfg.layers; ++i)
    blocks.emplace_back(rng, width, static_cast<std::size_t>(cfg.heads));
  final_layer = FinalLayer<T>(rng, width, static_cast<std::size_t>(cfg.token_dim()));
  mask_token = Tensor<T>::randn(rng, {width}, T(0.02), true);
  mipnet = Mipnet<T>(rng, width, static_cast<std::size_t>(cfg.heads), opts.predictor);

  CanetConfig cc;
  cc.width = width;
  cc.source_tokens = static_cast<std::size_t>(cfg.tokens());
  const int fgrid = cfg.feat_canvas / cfg.feat_patch;
  cc.feat_tokens = static_cast<std::size_t>(1 + fgrid * fgrid);
  cc.pose_feat_width = static_cast<std::size_t>(cfg.feat_width);
  cc.glob_feat_width = opts.glob_feat_width
                           ? opts.glob_feat_width
                           : static_cast<std::size_t>(cfg.feat_width);
  cc.aggregation = opts.aggregation;
  cc.use_local = opts.use_local;
  cc.use_pose = opts.use_pose;
  cc.use_global = opts.use_global;
  canet = Canet<T>(rng, cc);
}

template <typename T>
Tensor<T> GeneratorModel<T>::source_tokens(const Tensor<T>& source_latent) const {
  return add(patch_embed.forward(source_latent), pos);
}

template <typename T>
Tensor<T> GeneratorModel<T>::cond_vector(const CondInputs<T>& c) const {
  Tensor<T> src;
  if (opts.use_local) src = source_tokens(c.source_latent);
  return canet.condition(src, c.pose_feat, c.glob_feat);
}

template <typename T>
Tensor<T> GeneratorModel<T>::pose_cond_vector(const CondInputs<T>& c) const {
  return canet.pose_only_condition(c.pose_feat);
}

template <typename T>
Tensor<T> GeneratorModel<T>::uncond_vector() const {
  return Tensor<T>::zeros({static_cast<std::size_t>(cfg.width)});
}

template <typename T>
Tensor<T> GeneratorModel<T>::predict_noise(const Tensor<T>& y_t,
                                           const Tensor<T>& c, int t) const {
  Tensor<T> z = add(patch_embed.forward(y_t), pos);
  const Tensor<T> cond = add(time_embed.embed(T(t)), c);
  for (const auto& b : blocks) z = b.forward(z, cond);
  Tensor<T> out = final_layer.forward(z, cond);
  return unpatchify(out, static_cast<std::size_t>(cfg.grid),
                    static_cast<std::size_t>(cfg.grid),
                    static_cast<std::size_t>(cfg.channels),
                    static_cast<std::size_t>(cfg.patch));
}

template <typename T>
Tensor<T> GeneratorModel<T>::masked_predict(const Tensor<T>& y_t,
                                            const Tensor<T>& c, int t,
                                            const MaskSpec& spec,
                                            const Tensor<T>& src_tokens) const {
  const auto length = static_cast<std::size_t>(cfg.tokens());
  if (spec.length != length)
    throw std::invalid_argument("masked_predict: mask over " +
                                std::to_string(spec.length) + " tokens, model has " +
                                std::to_string(length));
  Tensor<T> tokens = add(patch_embed.forward(y_t), pos);
  const Tensor<T> cond = add(time_embed.embed(T(t)), c);

  Tensor<T> z;
  if (spec.count() == 0) {
    z = tokens;
    for (int i = 0; i < cfg.n1; ++i) z = blocks[i].forward(z, cond);
  } else {
    z = apply_mask(tokens, spec);
    for (int i = 0; i < cfg.n1; ++i) z = blocks[i].forward(z, cond);
    Tensor<T> base = add(repeat_row(mask_token, length), pos);
    Tensor<T> seq = scatter_rows(base, spec.visible(), z);
    Tensor<T> filled = mipnet.forward(seq, src_tokens);
    z = scatter_rows(seq, spec.masked, gather_rows(filled, spec.masked));
  }
  for (int i = cfg.n1; i < cfg.layers; ++i) z = blocks[i].forward(z, cond);
  Tensor<T> out = final_layer.forward(z, cond);
  return unpatchify(out, static_cast<std::size_t>(cfg.grid),
                    static_cast<std::size_t>(cfg.grid),
                    static_cast<std::size_t>(cfg.channels),
                    static_cast<std::size_t>(cfg.patch));
}

template <typename T>
void GeneratorModel<T>::collect(const std::string& prefix, ParamMap<T>& pm) const {
  patch_embed.collect(prefix + ".patch", pm);
  pm.add(prefix + ".pos", pos);
  time_embed.collect(prefix + ".time", pm);
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(prefix + ".block" + std::to_string(i), pm);
  final_layer.collect(prefix + ".final", pm);
  pm.add(prefix + ".mask_token", mask_token);
  mipnet.collect(prefix + ".mipnet", pm);
  canet.collect(prefix + ".canet", pm);
}

template <typename T>
std::vector<Tensor<T>> GeneratorModel<T>::trainable() const {
  ParamMap<T> pm;
  collect("model", pm);
  std::vector<Tensor<T>> out;
  for (const auto& [name, tensor] : pm.items)
    if (tensor.requires_grad()) out.push_back(tensor);
  return out;
}

template <typename T>
LossBreakdown<T> pair_loss_at(const GeneratorModel<T>& model, const Tensor<T>& y0,
                              const CondInputs<T>& cond, const Tensor<T>& eps,
                              int t, const MaskSpec& spec,
                              const NoiseSchedule& ns, bool use_cond) {
  LossBreakdown<T> out;
  out.t = t;
  out.masked_tokens = spec.count();
  out.dropped = !use_cond;
  const Tensor<T> c = use_cond ? model.cond_vector(cond) : model.uncond_vector();
  const Tensor<T> y_t = forward_noise(y0, t, eps, ns);
  const Tensor<T> src = model.source_tokens(cond.source_latent);
  out.denoise = mse(model.predict_noise(y_t, c, t), eps);
  out.mask = mse(model.masked_predict(y_t, c, t, spec, src), eps);
  out.total = add(out.denoise, out.mask);
  return out;
}

template <typename T>
LossBreakdown<T> pair_loss(const GeneratorModel<T>& model, const Tensor<T>& y0,
                           const CondInputs<T>& cond, const NoiseSchedule& ns,
                           double mask_ratio, Rng& rng, double drop_prob) {
  const int t = 1 + static_cast<int>(rng.next_below(
                        static_cast<std::uint64_t>(ns.steps)));
  const Tensor<T> eps = Tensor<T>::randn(rng, y0.shape(), T(1));
  const auto length = static_cast<std::size_t>(model.cfg.tokens());
  const MaskSpec spec = mask_ratio > 0.0
                            ? sample_mask(length, mask_ratio, rng.next_u64())
                            : empty_mask(length);
  const bool drop = drop_prob > 0.0 && rng.uniform() < drop_prob;
  return pair_loss_at(model, y0, cond, eps, t, spec, ns, !drop);
}

#define XMDPT_INSTANTIATE_MODEL(T)                                              \
  template struct GeneratorModel<T>;                                            \
  template LossBreakdown<T> pair_loss_at<T>(                                    \
      const GeneratorModel<T>&, const Tensor<T>&, const CondInputs<T>&,         \
      const Tensor<T>&, int, const MaskSpec&, const NoiseSchedule&, bool);      \
  template LossBreakdown<T> pair_loss<T>(const GeneratorModel<T>&,              \
                                         const Tensor<T>&, const CondInputs<T>&,\
                                         const NoiseSchedule&, double, Rng&,    \
                                         double);

XMDPT_INSTANTIATE_MODEL(float)
XMDPT_INSTANTIATE_MODEL(double)
#undef XMDPT_INSTANTIATE_MODEL

}  // namespace xmdpt
