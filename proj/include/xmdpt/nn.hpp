#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "xmdpt/rng.hpp"
#include "xmdpt/tensor.hpp"

namespace xmdpt {

// Named handles to every tensor a module owns. Trainable parameters carry
// requires_grad; frozen tensors (featurizer weights, positional tables) are
// registered too so checkpoints capture them.
template <typename T>
struct ParamMap {
  std::vector<std::pair<std::string, Tensor<T>>> items;

  void add(std::string name, Tensor<T> t) {
    items.emplace_back(std::move(name), std::move(t));
  }
  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items) n += t.size();
    return n;
  }
  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items)
      if (t.requires_grad()) n += t.size();
    return n;
  }
};

struct ModelConfig {
  std::string preset = "t";
  int layers = 4;
  int width = 64;
  int heads = 4;
  int patch = 2;
  int grid = 8;      // latent grid side
  int channels = 2;  // latent channels
  int n1 = 3;        // transformer blocks before the masked-token stage
  int n2 = 1;        // blocks after it
  int time_freq = 256;
  int feat_width = 64;   // frozen featurizer width for this scale
  int feat_canvas = 32;  // image side the featurizer ingests
  int feat_patch = 8;

  static ModelConfig from_preset(const std::string& name);

  int tokens() const { return (grid / patch) * (grid / patch); }
  int token_dim() const { return patch * patch * channels; }
};

enum class Init { fan_in, zero };

template <typename T>
struct Linear {
  Tensor<T> w;  // [in, out]
  Tensor<T> b;  // [out]; undefined handle when the layer has no bias
  std::size_t in = 0, out = 0;

  Linear() = default;
  Linear(Rng& rng, std::size_t in, std::size_t out, bool bias = true,
         Init init = Init::fan_in);

  // Accepts [R, in] or a rank-1 [in] vector (returned rank is preserved).
  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamMap<T>& pm) const;
};

// Multi-head attention. q/k/v are separate projections; the output
// projection and biases are optional so the same core serves both the
// transformer blocks (with both) and the masked-token predictor (bare).
template <typename T>
struct MhaCore {
  std::size_t dim = 0, heads = 1;
  Linear<T> wq, wk, wv, wo;
  bool has_out_proj = true;

  MhaCore() = default;
  MhaCore(Rng& rng, std::size_t dim, std::size_t heads, bool out_proj = true,
          bool bias = true);

  Tensor<T> forward(const Tensor<T>& q_in, const Tensor<T>& kv_in) const;
  void collect(const std::string& prefix, ParamMap<T>& pm) const;
};

template <typename T>
struct Mlp {
  Linear<T> fc1, fc2;

  Mlp() = default;
  Mlp(Rng& rng, std::size_t dim, std::size_t hidden);

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamMap<T>& pm) const;
};

// Transformer block conditioned through adaptive layer norm: a zero-initialised
// linear maps the condition vector to shift/scale/gate pairs for the attention
// and MLP branches, so a freshly constructed block is exactly the identity.
template <typename T>
struct DiTBlock {
  MhaCore<T> attn;
  Mlp<T> mlp;
  Linear<T> mod;  // width -> 6 * width, zero init
  T eps = T(1e-5);

  DiTBlock() = default;
  DiTBlock(Rng& rng, std::size_t dim, std::size_t heads);

  Tensor<T> forward(const Tensor<T>& z, const Tensor<T>& cond) const;
  void collect(const std::string& prefix, ParamMap<T>& pm) const;
};

// Plain pre-norm block (no conditioning), used by the frozen featurizer.
template <typename T>
struct VanillaBlock {
  MhaCore<T> attn;
  Mlp<T> mlp;
  T eps = T(1e-5);

  VanillaBlock() = default;
  VanillaBlock(Rng& rng, std::size_t dim, std::size_t heads);

  Tensor<T> forward(const Tensor<T>& z) const;
  void collect(const std::string& prefix, ParamMap<T>& pm) const;
};

template <typename T>
struct PatchEmbed {
  Linear<T> proj;
  std::size_t patch = 2;

  PatchEmbed() = default;
  PatchEmbed(Rng& rng, std::size_t token_dim, std::size_t width, std::size_t patch);

  // [H, W, C] latent -> [tokens, width]
  Tensor<T> forward(const Tensor<T>& latent) const;
  void collect(const std::string& prefix, ParamMap<T>& pm) const;
};

template <typename T>
struct TimestepEmbed {
  std::size_t freq_dim = 256;
  Linear<T> fc1, fc2;

  TimestepEmbed() = default;
  TimestepEmbed(Rng& rng, std::size_t freq_dim, std::size_t width);

  static std::vector<T> sinusoid(T t, std::size_t dim);
  Tensor<T> embed(T t) const;  // rank-1 [width]
  void collect(const std::string& prefix, ParamMap<T>& pm) const;
};

// Final norm + shift/scale modulation + zero-initialised projection back to
// token space, so an untrained model predicts exactly zero.
template <typename T>
struct FinalLayer {
  Linear<T> mod;  // width -> 2 * width, zero init
  Linear<T> out;  // width -> token_dim, zero init
  T eps = T(1e-5);

  FinalLayer() = default;
  FinalLayer(Rng& rng, std::size_t width, std::size_t token_dim);

  Tensor<T> forward(const Tensor<T>& z, const Tensor<T>& cond) const;
  void collect(const std::string& prefix, ParamMap<T>& pm) const;
};

// Fixed 2D sin/cos table for a square token grid, row-major over (gy, gx).
// Layout per token: [sin_y, cos_y, sin_x, cos_x], each dim/4 wide.
template <typename T>
Tensor<T> pos_embed_2d(std::size_t grid, std::size_t dim);

// 1D variant for sequences (featurizer tokens including a leading CLS slot).
template <typename T>
Tensor<T> pos_embed_1d(std::size_t length, std::size_t dim);

}  // namespace xmdpt
