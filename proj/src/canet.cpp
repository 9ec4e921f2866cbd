#include "xmdpt/canet.hpp"

#include <cmath>
#include <stdexcept>

namespace xmdpt {

FeaturizerConfig FeaturizerConfig::preset(char kind) {
  FeaturizerConfig cfg;
  switch (kind) {
    case 's': cfg.width = 32; break;
    case 'b': cfg.width = 64; break;
    case 'l': cfg.width = 128; break;
    default:
      throw std::invalid_argument(std::string("unknown featurizer preset '") +
                                  kind + "', expected s|b|l");
  }
  return cfg;
}

ToyFeaturizer::ToyFeaturizer(Rng& rng, FeaturizerConfig cfg_) : cfg(cfg_) {
  if (cfg.canvas % cfg.patch != 0)
    throw std::invalid_argument("featurizer canvas must be divisible by patch size");
  const std::size_t patch_dim = std::size_t(cfg.patch) * cfg.patch * 3;
  proj = Linear<float>(rng, patch_dim, std::size_t(cfg.width));
  cls = Tensor<float>::randn(rng, {1, std::size_t(cfg.width)}, 0.02f, true);
  pos = pos_embed_1d<float>(std::size_t(cfg.tokens()), std::size_t(cfg.width));
  block = VanillaBlock<float>(rng, std::size_t(cfg.width), std::size_t(cfg.heads));

  ParamMap<float> pm;
  collect("feat", pm);
  for (auto& [name, t] : pm.items) t.set_requires_grad(false);
}

Tensor<float> ToyFeaturizer::forward(const Tensor<float>& image) const {
  if (image.rank() != 3 || image.dim(0) != std::size_t(cfg.canvas) ||
      image.dim(1) != std::size_t(cfg.canvas) || image.dim(2) != 3)
    throw std::invalid_argument("featurizer: expected [" +
                                std::to_string(cfg.canvas) + ", " +
                                std::to_string(cfg.canvas) + ", 3] image, got " +
                                shape_str(image.shape()));
  auto tokens = proj.forward(patchify(image, std::size_t(cfg.patch)));
  auto seq = add(concat_rows<float>({cls, tokens}), pos);
  return block.forward(seq);
}

Tensor<float> ToyFeaturizer::forward(const Image& image) const {
  return forward(image_to_tensor<float>(image));
}

void ToyFeaturizer::collect(const std::string& prefix, ParamMap<float>& pm) const {
  proj.collect(prefix + ".proj", pm);
  pm.add(prefix + ".cls", cls);
  block.collect(prefix + ".block", pm);
}

const char* aggregation_name(AggregationMode m) {
  switch (m) {
    case AggregationMode::sum: return "sum";
    case AggregationMode::concat_conv: return "concat-conv";
    case AggregationMode::mlp: return "mlp";
  }
  return "?";
}

AggregationMode aggregation_from_name(const std::string& name) {
  if (name == "sum") return AggregationMode::sum;
  if (name == "concat-conv") return AggregationMode::concat_conv;
  if (name == "mlp") return AggregationMode::mlp;
  throw std::invalid_argument("unknown aggregation mode '" + name +
                              "', expected sum|concat-conv|mlp");
}

template <typename T>
Canet<T>::Canet(Rng& rng, CanetConfig cfg_) : cfg(cfg_) {
  const std::size_t n = cfg.active_streams();
  if (n == 0) throw std::invalid_argument("canet: no active condition streams");

  // Token-reduction heads start as exact mean pooling.
  if (cfg.use_local) {
    local_w = Tensor<T>::full({cfg.source_tokens}, T(1) / T(cfg.source_tokens), true);
    local_b = Tensor<T>::scalar(T(0), true);
  }
  if (cfg.use_pose) {
    pose_w = Tensor<T>::full({cfg.feat_tokens}, T(1) / T(cfg.feat_tokens), true);
    pose_b = Tensor<T>::scalar(T(0), true);
    pose_adapt = Linear<T>(rng, cfg.pose_feat_width, cfg.width);
  }
  if (cfg.use_global) {
    glob_w = Tensor<T>::full({cfg.feat_tokens}, T(1) / T(cfg.feat_tokens), true);
    glob_b = Tensor<T>::scalar(T(0), true);
    glob_adapt = Linear<T>(rng, cfg.glob_feat_width, cfg.width);
  }

  if (cfg.aggregation == AggregationMode::concat_conv) {
    agg_w = Tensor<T>::full({n}, T(1) / T(n), true);
    agg_b = Tensor<T>::scalar(T(0), true);
  } else if (cfg.aggregation == AggregationMode::mlp) {
    agg_fc1 = Linear<T>(rng, n * cfg.width, 2 * cfg.width);
    agg_fc2 = Linear<T>(rng, 2 * cfg.width, cfg.width);
  }
}

template <typename T>
Tensor<T> Canet<T>::local_feature(const Tensor<T>& source_tokens) const {
  if (!cfg.use_local) throw std::logic_error("canet: local stream is disabled");
  return conv_1x1(source_tokens, local_w, local_b);
}

template <typename T>
Tensor<T> Canet<T>::pose_feature(const Tensor<T>& pose_tokens) const {
  if (!cfg.use_pose) throw std::logic_error("canet: pose stream is disabled");
  return pose_adapt.forward(conv_1x1(pose_tokens, pose_w, pose_b));
}

template <typename T>
Tensor<T> Canet<T>::global_feature(const Tensor<T>& feat_tokens) const {
  if (!cfg.use_global) throw std::logic_error("canet: global stream is disabled");
  return glob_adapt.forward(conv_1x1(feat_tokens, glob_w, glob_b));
}

template <typename T>
Tensor<T> Canet<T>::aggregate(const Tensor<T>& v_l, const Tensor<T>& v_p,
                              const Tensor<T>& v_g) const {
  std::vector<Tensor<T>> active;
  if (cfg.use_local) active.push_back(v_l);
  if (cfg.use_pose) active.push_back(v_p);
  if (cfg.use_global) active.push_back(v_g);

  switch (cfg.aggregation) {
    case AggregationMode::sum: {
      Tensor<T> c = active[0];
      for (std::size_t i = 1; i < active.size(); ++i) c = add(c, active[i]);
      return c;
    }
    case AggregationMode::concat_conv: {
      std::vector<Tensor<T>> rows;
      for (const auto& v : active) rows.push_back(reshape(v, {1, cfg.width}));
      return conv_1x1(concat_rows(rows), agg_w, agg_b);
    }
    case AggregationMode::mlp:
      return agg_fc2.forward(gelu(agg_fc1.forward(concat_cols(active))));
  }
  throw std::logic_error("canet: bad aggregation mode");
}

template <typename T>
Tensor<T> Canet<T>::condition(const Tensor<T>& source_tokens,
                              const Tensor<T>& pose_tokens,
                              const Tensor<T>& feat_tokens) const {
  Tensor<T> v_l, v_p, v_g;
  if (cfg.use_local) v_l = local_feature(source_tokens);
  if (cfg.use_pose) v_p = pose_feature(pose_tokens);
  if (cfg.use_global) v_g = global_feature(feat_tokens);
  return aggregate(v_l, v_p, v_g);
}

template <typename T>
Tensor<T> Canet<T>::pose_only_condition(const Tensor<T>& pose_tokens) const {
  if (!cfg.use_pose)
    throw std::logic_error("canet: pose-only condition needs the pose stream");
  const auto zero = Tensor<T>::zeros({cfg.width});
  return aggregate(zero, pose_feature(pose_tokens), zero);
}

template <typename T>
void Canet<T>::collect(const std::string& prefix, ParamMap<T>& pm) const {
  if (cfg.use_local) {
    pm.add(prefix + ".local.w", local_w);
    pm.add(prefix + ".local.b", local_b);
  }
  if (cfg.use_pose) {
    pm.add(prefix + ".pose.w", pose_w);
    pm.add(prefix + ".pose.b", pose_b);
    pose_adapt.collect(prefix + ".pose.adapt", pm);
  }
  if (cfg.use_global) {
    pm.add(prefix + ".glob.w", glob_w);
    pm.add(prefix + ".glob.b", glob_b);
    glob_adapt.collect(prefix + ".glob.adapt", pm);
  }
  if (cfg.aggregation == AggregationMode::concat_conv) {
    pm.add(prefix + ".agg.w", agg_w);
    pm.add(prefix + ".agg.b", agg_b);
  } else if (cfg.aggregation == AggregationMode::mlp) {
    agg_fc1.collect(prefix + ".agg.fc1", pm);
    agg_fc2.collect(prefix + ".agg.fc2", pm);
  }
}

template <typename T>
double view_similarity(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.size() != b.size() || a.size() == 0)
    throw std::invalid_argument("view_similarity: size mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * double(b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("view_similarity: zero vector has no direction");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

template struct Canet<float>;
template struct Canet<double>;
template double view_similarity<float>(const Tensor<float>&, const Tensor<float>&);
template double view_similarity<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace xmdpt
