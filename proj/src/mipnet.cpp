#include "xmdpt/mipnet.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xmdpt {

std::vector<std::size_t> MaskSpec::visible() const {
  std::vector<std::size_t> out;
  out.reserve(length - masked.size());
  std::size_t next = 0;
  for (std::size_t i = 0; i < length; ++i) {
    if (next < masked.size() && masked[next] == i) {
      ++next;
    } else {
      out.push_back(i);
    }
  }
  return out;
}

MaskSpec sample_mask(std::size_t length, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw std::invalid_argument("mask ratio must lie in (0, 1), got " +
                                std::to_string(ratio));
  MaskSpec spec;
  spec.ratio = ratio;
  spec.length = length;
  spec.seed = seed;
  const auto count = std::size_t(std::floor(ratio * double(length)));
  Rng rng(seed);
  spec.masked = rng.sample_without_replacement(length, count);
  std::sort(spec.masked.begin(), spec.masked.end());
  return spec;
}

MaskSpec empty_mask(std::size_t length) {
  MaskSpec spec;
  spec.length = length;
  return spec;
}

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& tokens, const MaskSpec& spec) {
  if (tokens.rank() != 2 || tokens.dim(0) != spec.length)
    throw std::invalid_argument("apply_mask: tokens " + shape_str(tokens.shape()) +
                                " do not match mask length " +
                                std::to_string(spec.length));
  if (spec.masked.empty()) return tokens;
  return gather_rows(tokens, spec.visible());
}

const char* predictor_name(PredictorKind k) {
  switch (k) {
    case PredictorKind::self_only: return "self";
    case PredictorKind::cross_only: return "cross";
    case PredictorKind::cross_then_self: return "cross-self";
    case PredictorKind::self_then_cross: return "self-cross";
  }
  return "?";
}

PredictorKind predictor_from_name(const std::string& name) {
  if (name == "self") return PredictorKind::self_only;
  if (name == "cross") return PredictorKind::cross_only;
  if (name == "cross-self") return PredictorKind::cross_then_self;
  if (name == "self-cross") return PredictorKind::self_then_cross;
  throw std::invalid_argument("unknown predictor kind '" + name +
                              "', expected self|cross|cross-self|self-cross");
}

namespace {

bool needs_self(PredictorKind k) { return k != PredictorKind::cross_only; }
bool needs_cross(PredictorKind k) { return k != PredictorKind::self_only; }

}  // namespace

template <typename T>
Mipnet<T>::Mipnet(Rng& rng, std::size_t width_, std::size_t heads_, PredictorKind kind_)
    : kind(kind_), width(width_), heads(heads_) {
  if (needs_self(kind))
    self_attn = MhaCore<T>(rng, width, heads, /*out_proj=*/false, /*bias=*/false);
  if (needs_cross(kind))
    cross_attn = MhaCore<T>(rng, width, heads, /*out_proj=*/false, /*bias=*/false);
}

template <typename T>
Tensor<T> Mipnet<T>::forward(const Tensor<T>& target_tokens,
                             const Tensor<T>& source_tokens) const {
  if (target_tokens.rank() != 2 || target_tokens.dim(1) != width)
    throw std::invalid_argument("mipnet: target tokens " +
                                shape_str(target_tokens.shape()) +
                                " do not match width " + std::to_string(width));
  if (needs_cross(kind) &&
      (source_tokens.rank() != 2 || source_tokens.dim(1) != width))
    throw std::invalid_argument("mipnet: source tokens " +
                                shape_str(source_tokens.shape()) +
                                " do not match width " + std::to_string(width));
  ++invocations;

  switch (kind) {
    case PredictorKind::self_only:
      return self_attn.forward(target_tokens, target_tokens);
    case PredictorKind::cross_only:
      return cross_attn.forward(target_tokens, source_tokens);
    case PredictorKind::cross_then_self: {
      auto crossed = cross_attn.forward(target_tokens, source_tokens);
      return add(crossed, self_attn.forward(crossed, crossed));
    }
    case PredictorKind::self_then_cross: {
      auto selfed = self_attn.forward(target_tokens, target_tokens);
      return add(selfed, cross_attn.forward(selfed, source_tokens));
    }
  }
  throw std::logic_error("mipnet: bad predictor kind");
}

template <typename T>
void Mipnet<T>::collect(const std::string& prefix, ParamMap<T>& pm) const {
  if (needs_self(kind)) self_attn.collect(prefix + ".self", pm);
  if (needs_cross(kind)) cross_attn.collect(prefix + ".cross", pm);
}

template struct Mipnet<float>;
template struct Mipnet<double>;
template Tensor<float> apply_mask<float>(const Tensor<float>&, const MaskSpec&);
template Tensor<double> apply_mask<double>(const Tensor<double>&, const MaskSpec&);

}  // namespace xmdpt
