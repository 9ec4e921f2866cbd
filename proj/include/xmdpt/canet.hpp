#pragma once

#include <cstddef>
#include <string>

#include "xmdpt/nn.hpp"
#include "xmdpt/rng.hpp"
#include "xmdpt/tensor.hpp"
#include "xmdpt/toyworld.hpp"

// Condition aggregation: reduce the source-token, pose-token, and global
// source-feature streams to one vector each (v_L, v_P, v_G) and fuse them
// into the single condition vector c that modulates the denoiser blocks.

namespace xmdpt {

// Frozen random-weight patch transformer producing a CLS token plus one
// token per image patch. Stands in for a pretrained feature extractor:
// weights are seeded at construction and never trained.
struct FeaturizerConfig {
  int canvas = 32;
  int patch = 8;
  int width = 64;
  int heads = 4;

  // 's' | 'b' | 'l' widths 32/64/128 on the 32x32 canvas.
  static FeaturizerConfig preset(char kind);
  int grid() const { return canvas / patch; }
  int tokens() const { return 1 + grid() * grid(); }  // CLS + patches
};

struct ToyFeaturizer {
  FeaturizerConfig cfg;
  Linear<float> proj;   // patch pixels -> width
  Tensor<float> cls;    // [1, width]
  Tensor<float> pos;    // [tokens, width], fixed sincos table
  VanillaBlock<float> block;

  ToyFeaturizer() = default;
  ToyFeaturizer(Rng& rng, FeaturizerConfig cfg);

  // [canvas, canvas, 3] image tensor -> [tokens, width].
  Tensor<float> forward(const Tensor<float>& image) const;
  Tensor<float> forward(const Image& image) const;

  void collect(const std::string& prefix, ParamMap<float>& pm) const;
};

enum class AggregationMode { sum, concat_conv, mlp };

const char* aggregation_name(AggregationMode m);
AggregationMode aggregation_from_name(const std::string& name);

struct CanetConfig {
  std::size_t width = 64;          // condition width, equals the denoiser width
  std::size_t source_tokens = 16;  // embedded source-latent tokens
  std::size_t feat_tokens = 17;    // featurizer tokens (CLS + patches)
  std::size_t pose_feat_width = 64;
  std::size_t glob_feat_width = 64;  // varies with the global featurizer capacity
  AggregationMode aggregation = AggregationMode::mlp;
  bool use_local = true, use_pose = true, use_global = true;

  std::size_t active_streams() const {
    return std::size_t(use_local) + std::size_t(use_pose) + std::size_t(use_global);
  }
};

// Learnable heads. Each head is a 1x1 reduction across the token axis; the
// pose/global heads add a linear adapter from featurizer width to the
// condition width. Streams switched off in the config are omitted entirely,
// so their parameters do not exist and receive no gradients.
template <typename T>
struct Canet {
  CanetConfig cfg;
  Tensor<T> local_w, local_b;
  Tensor<T> pose_w, pose_b;
  Linear<T> pose_adapt;
  Tensor<T> glob_w, glob_b;
  Linear<T> glob_adapt;
  Tensor<T> agg_w, agg_b;  // concat_conv
  Linear<T> agg_fc1, agg_fc2;  // mlp

  Canet() = default;
  Canet(Rng& rng, CanetConfig cfg);

  Tensor<T> local_feature(const Tensor<T>& source_tokens) const;
  Tensor<T> pose_feature(const Tensor<T>& pose_tokens) const;
  Tensor<T> global_feature(const Tensor<T>& feat_tokens) const;

  // Fuses the active streams; pass empty handles for inactive ones.
  Tensor<T> aggregate(const Tensor<T>& v_l, const Tensor<T>& v_p,
                      const Tensor<T>& v_g) const;

  Tensor<T> condition(const Tensor<T>& source_tokens,
                      const Tensor<T>& pose_tokens,
                      const Tensor<T>& feat_tokens) const;
  // Same fusion with the non-pose streams zeroed; the pose-only branch of
  // disentangled guidance.
  Tensor<T> pose_only_condition(const Tensor<T>& pose_tokens) const;

  void collect(const std::string& prefix, ParamMap<T>& pm) const;
};

// Cosine similarity of two condition vectors; throws on a zero vector.
template <typename T>
double view_similarity(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace xmdpt
