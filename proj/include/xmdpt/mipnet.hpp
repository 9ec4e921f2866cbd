#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "xmdpt/nn.hpp"
#include "xmdpt/rng.hpp"
#include "xmdpt/tensor.hpp"

// Masked-token machinery: sample a token mask, drop the masked rows before
// the encoder, and reconstruct the full sequence from the surviving target
// tokens plus the unmasked source sequence. Used during training only; the
// sampler never touches it.

namespace xmdpt {

struct MaskSpec {
  double ratio = 0.0;
  std::size_t length = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> masked;  // sorted, unique, in [0, length)

  std::size_t count() const { return masked.size(); }
  std::vector<std::size_t> visible() const;
};

// Uniform subset of exactly floor(ratio * length) positions.
MaskSpec sample_mask(std::size_t length, double ratio, std::uint64_t seed);
MaskSpec empty_mask(std::size_t length);

// Keeps the visible rows in their original order.
template <typename T>
Tensor<T> apply_mask(const Tensor<T>& tokens, const MaskSpec& spec);

// Attention layouts for the reconstruction block. self_then_cross is the
// default: self-attention output plus a cross-attention refinement of it
// against the source sequence.
enum class PredictorKind { self_only, cross_only, cross_then_self, self_then_cross };

const char* predictor_name(PredictorKind k);
PredictorKind predictor_from_name(const std::string& name);

// Single attention block without output projections, biases, or MLP.
template <typename T>
struct Mipnet {
  PredictorKind kind = PredictorKind::self_then_cross;
  std::size_t width = 0, heads = 1;
  MhaCore<T> self_attn, cross_attn;  // each present only if the kind needs it
  mutable long invocations = 0;

  Mipnet() = default;
  Mipnet(Rng& rng, std::size_t width, std::size_t heads,
         PredictorKind kind = PredictorKind::self_then_cross);

  // target_tokens [L, D], source_tokens [Ls, D] -> [L, D].
  Tensor<T> forward(const Tensor<T>& target_tokens,
                    const Tensor<T>& source_tokens) const;

  void collect(const std::string& prefix, ParamMap<T>& pm) const;
};

}  // namespace xmdpt
