#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "xmdpt/canet.hpp"
#include "xmdpt/diffusion.hpp"
#include "xmdpt/mipnet.hpp"
#include "xmdpt/nn.hpp"
#include "xmdpt/rng.hpp"
#include "xmdpt/tensor.hpp"

// The full generator: patch embedding shared by the noisy target and the
// source latent, a conditioned transformer stack split into an encoder and a
// decoder half, the masked-token reconstruction block between them, and the
// condition aggregator. Frozen feature extractors stay outside; the model
// consumes their token grids as plain inputs.

namespace xmdpt {

struct ModelOptions {
  PredictorKind predictor = PredictorKind::self_then_cross;
  AggregationMode aggregation = AggregationMode::mlp;
  bool use_local = true, use_pose = true, use_global = true;
  std::size_t glob_feat_width = 0;  // 0 = the preset's featurizer width

  // s/b/l fuse with concat_conv, the toy presets with the mlp head.
  static ModelOptions for_preset(const std::string& name);
};

// Frozen-stage outputs for one training pair: the encoded source latent and
// the featurizer tokens of the target pose map and the source image.
template <typename T>
struct CondInputs {
  Tensor<T> source_latent;  // [grid, grid, channels]
  Tensor<T> pose_feat;      // [feat_tokens, pose width]
  Tensor<T> glob_feat;      // [feat_tokens, global width]
};

template <typename T>
struct GeneratorModel {
  ModelConfig cfg;
  ModelOptions opts;

  PatchEmbed<T> patch_embed;
  Tensor<T> pos;  // [tokens, width], fixed sincos table
  TimestepEmbed<T> time_embed;
  std::vector<DiTBlock<T>> blocks;  // n1 encoder blocks then n2 decoder blocks
  FinalLayer<T> final_layer;
  Tensor<T> mask_token;  // [width]
  Mipnet<T> mipnet;
  Canet<T> canet;

  GeneratorModel() = default;
  GeneratorModel(Rng& rng, ModelConfig cfg, ModelOptions opts = {});

  // Source latent -> embedded token sequence [tokens, width]; feeds both the
  // cross-attention source and the local condition stream.
  Tensor<T> source_tokens(const Tensor<T>& source_latent) const;

  Tensor<T> cond_vector(const CondInputs<T>& c) const;
  Tensor<T> pose_cond_vector(const CondInputs<T>& c) const;
  Tensor<T> uncond_vector() const;

  // Plain denoising pass used by the sampler: y_t [grid, grid, channels],
  // condition vector c [width] -> predicted noise with the latent shape.
  Tensor<T> predict_noise(const Tensor<T>& y_t, const Tensor<T>& c, int t) const;

  // Training pass: visible tokens run the encoder half, masked slots are
  // refilled by the reconstruction block against the source sequence, and the
  // completed sequence runs the decoder half. An empty mask skips the
  // reconstruction block and reduces to the plain pass.
  Tensor<T> masked_predict(const Tensor<T>& y_t, const Tensor<T>& c, int t,
                           const MaskSpec& spec,
                           const Tensor<T>& src_tokens) const;

  void collect(const std::string& prefix, ParamMap<T>& pm) const;
  std::vector<Tensor<T>> trainable() const;
};

template <typename T>
struct LossBreakdown {
  Tensor<T> denoise;
  Tensor<T> mask;
  Tensor<T> total;
  int t = 0;
  std::size_t masked_tokens = 0;
  bool dropped = false;  // condition replaced by the null vector this draw
};

// Both loss terms share one eps draw and one timestep; total is their sum.
template <typename T>
LossBreakdown<T> pair_loss_at(const GeneratorModel<T>& model, const Tensor<T>& y0,
                              const CondInputs<T>& cond, const Tensor<T>& eps,
                              int t, const MaskSpec& spec,
                              const NoiseSchedule& ns, bool use_cond = true);

// Draws t, eps, and the mask from rng, dropping the condition with
// probability drop_prob, then delegates to pair_loss_at.
template <typename T>
LossBreakdown<T> pair_loss(const GeneratorModel<T>& model, const Tensor<T>& y0,
                           const CondInputs<T>& cond, const NoiseSchedule& ns,
                           double mask_ratio, Rng& rng, double drop_prob = 0.0);

}  // namespace xmdpt
