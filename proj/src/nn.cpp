#include "xmdpt/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xmdpt {

ModelConfig ModelConfig::from_preset(const std::string& name) {
  ModelConfig c;
  c.preset = name;
  if (name == "s") {
    c.layers = 12; c.width = 384; c.heads = 6;
    c.grid = 32; c.channels = 4;
    c.feat_width = 768; c.feat_canvas = 224; c.feat_patch = 14;
  } else if (name == "b") {
    c.layers = 12; c.width = 768; c.heads = 12;
    c.grid = 32; c.channels = 4;
    c.feat_width = 768; c.feat_canvas = 224; c.feat_patch = 14;
  } else if (name == "l") {
    c.layers = 24; c.width = 1024; c.heads = 16;
    c.grid = 32; c.channels = 4;
    c.feat_width = 768; c.feat_canvas = 224; c.feat_patch = 14;
  } else if (name == "t") {
    c.layers = 4; c.width = 64; c.heads = 4;
    c.grid = 8; c.channels = 2;
    c.feat_width = 64; c.feat_canvas = 32; c.feat_patch = 8;
  } else if (name == "xt") {
    c.layers = 2; c.width = 32; c.heads = 2;
    c.grid = 8; c.channels = 2;
    c.feat_width = 32; c.feat_canvas = 32; c.feat_patch = 8;
  } else {
    throw std::invalid_argument("unknown model preset: " + name);
  }
  // Two thirds of the blocks sit before the masked-token stage, clamped so
  // both stages keep at least one block even for very shallow configs.
  int n1 = (2 * c.layers + 2) / 3;
  c.n1 = std::clamp(n1, 1, c.layers - 1);
  c.n2 = c.layers - c.n1;
  return c;
}

// --- Linear ------------------------------------------------------------------

template <typename T>
Linear<T>::Linear(Rng& rng, std::size_t in_, std::size_t out_, bool bias, Init init)
    : in(in_), out(out_) {
  if (init == Init::zero) {
    w = Tensor<T>::zeros({in, out}, true);
    if (bias) b = Tensor<T>::zeros({out}, true);
  } else {
    const T bound = T(1) / std::sqrt(T(in));
    w = Tensor<T>::uniform(rng, {in, out}, -bound, bound, true);
    if (bias) b = Tensor<T>::uniform(rng, {out}, -bound, bound, true);
  }
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) const {
  if (x.rank() == 1) {
    auto y = matmul(reshape(x, {1, in}), w);
    if (b.defined()) y = add_rowvec(y, b);
    return reshape(y, {out});
  }
  auto y = matmul(x, w);
  if (b.defined()) y = add_rowvec(y, b);
  return y;
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamMap<T>& pm) const {
  pm.add(prefix + ".w", w);
  if (b.defined()) pm.add(prefix + ".b", b);
}

// --- MhaCore -----------------------------------------------------------------

template <typename T>
MhaCore<T>::MhaCore(Rng& rng, std::size_t dim_, std::size_t heads_, bool out_proj,
                    bool bias)
    : dim(dim_), heads(heads_), has_out_proj(out_proj) {
  if (dim % heads != 0)
    throw std::invalid_argument("attention width " + std::to_string(dim) +
                                " not divisible by " + std::to_string(heads) +
                                " heads");
  wq = Linear<T>(rng, dim, dim, bias);
  wk = Linear<T>(rng, dim, dim, bias);
  wv = Linear<T>(rng, dim, dim, bias);
  if (has_out_proj) wo = Linear<T>(rng, dim, dim, bias);
}

template <typename T>
Tensor<T> MhaCore<T>::forward(const Tensor<T>& q_in, const Tensor<T>& kv_in) const {
  auto q = wq.forward(q_in);
  auto k = wk.forward(kv_in);
  auto v = wv.forward(kv_in);
  const std::size_t dh = dim / heads;
  const T sc = T(1) / std::sqrt(T(dh));
  std::vector<Tensor<T>> per_head;
  per_head.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = slice_cols(q, h * dh, (h + 1) * dh);
    auto kh = slice_cols(k, h * dh, (h + 1) * dh);
    auto vh = slice_cols(v, h * dh, (h + 1) * dh);
    auto att = softmax_rows(scale(matmul(qh, transpose(kh)), sc));
    per_head.push_back(matmul(att, vh));
  }
  auto cat = concat_cols(per_head);
  return has_out_proj ? wo.forward(cat) : cat;
}

template <typename T>
void MhaCore<T>::collect(const std::string& prefix, ParamMap<T>& pm) const {
  wq.collect(prefix + ".wq", pm);
  wk.collect(prefix + ".wk", pm);
  wv.collect(prefix + ".wv", pm);
  if (has_out_proj) wo.collect(prefix + ".wo", pm);
}

// --- Mlp ---------------------------------------------------------------------

template <typename T>
Mlp<T>::Mlp(Rng& rng, std::size_t dim, std::size_t hidden)
    : fc1(rng, dim, hidden), fc2(rng, hidden, dim) {}

template <typename T>
Tensor<T> Mlp<T>::forward(const Tensor<T>& x) const {
  return fc2.forward(gelu(fc1.forward(x)));
}

template <typename T>
void Mlp<T>::collect(const std::string& prefix, ParamMap<T>& pm) const {
  fc1.collect(prefix + ".fc1", pm);
  fc2.collect(prefix + ".fc2", pm);
}

// --- DiTBlock ----------------------------------------------------------------

namespace {

// x * (1 + scale) + shift, broadcast over rows.
template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift,
                   const Tensor<T>& scale_vec) {
  return add_rowvec(mul_rowvec(x, add_scalar(scale_vec, T(1))), shift);
}

template <typename T>
Tensor<T> chunk_row(const Tensor<T>& m, std::size_t row, std::size_t width) {
  return reshape(gather_rows(m, {row}), {width});
}

}  // namespace

template <typename T>
DiTBlock<T>::DiTBlock(Rng& rng, std::size_t dim, std::size_t heads_)
    : attn(rng, dim, heads_),
      mlp(rng, dim, 4 * dim),
      mod(rng, dim, 6 * dim, true, Init::zero) {}

template <typename T>
Tensor<T> DiTBlock<T>::forward(const Tensor<T>& z, const Tensor<T>& cond) const {
  const std::size_t d = attn.dim;
  auto m = reshape(mod.forward(cond), {6, d});
  auto shift1 = chunk_row(m, 0, d), scale1 = chunk_row(m, 1, d);
  auto gate1 = chunk_row(m, 2, d);
  auto shift2 = chunk_row(m, 3, d), scale2 = chunk_row(m, 4, d);
  auto gate2 = chunk_row(m, 5, d);

  auto h = modulate(layer_norm(z, eps), shift1, scale1);
  auto z1 = add(z, mul_rowvec(attn.forward(h, h), gate1));
  auto h2 = modulate(layer_norm(z1, eps), shift2, scale2);
  return add(z1, mul_rowvec(mlp.forward(h2), gate2));
}

template <typename T>
void DiTBlock<T>::collect(const std::string& prefix, ParamMap<T>& pm) const {
  attn.collect(prefix + ".attn", pm);
  mlp.collect(prefix + ".mlp", pm);
  mod.collect(prefix + ".mod", pm);
}

// --- VanillaBlock ------------------------------------------------------------

template <typename T>
VanillaBlock<T>::VanillaBlock(Rng& rng, std::size_t dim, std::size_t heads_)
    : attn(rng, dim, heads_), mlp(rng, dim, 4 * dim) {}

template <typename T>
Tensor<T> VanillaBlock<T>::forward(const Tensor<T>& z) const {
  auto h = layer_norm(z, eps);
  auto z1 = add(z, attn.forward(h, h));
  return add(z1, mlp.forward(layer_norm(z1, eps)));
}

template <typename T>
void VanillaBlock<T>::collect(const std::string& prefix, ParamMap<T>& pm) const {
  attn.collect(prefix + ".attn", pm);
  mlp.collect(prefix + ".mlp", pm);
}

// --- PatchEmbed --------------------------------------------------------------

template <typename T>
PatchEmbed<T>::PatchEmbed(Rng& rng, std::size_t token_dim, std::size_t width,
                          std::size_t patch_)
    : proj(rng, token_dim, width), patch(patch_) {}

template <typename T>
Tensor<T> PatchEmbed<T>::forward(const Tensor<T>& latent) const {
  return proj.forward(patchify(latent, patch));
}

template <typename T>
void PatchEmbed<T>::collect(const std::string& prefix, ParamMap<T>& pm) const {
  proj.collect(prefix + ".proj", pm);
}

// --- TimestepEmbed -----------------------------------------------------------

template <typename T>
TimestepEmbed<T>::TimestepEmbed(Rng& rng, std::size_t freq_dim_, std::size_t width)
    : freq_dim(freq_dim_), fc1(rng, freq_dim_, width), fc2(rng, width, width) {}

template <typename T>
std::vector<T> TimestepEmbed<T>::sinusoid(T t, std::size_t dim) {
  const std::size_t half = dim / 2;
  std::vector<T> out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
    out[i] = T(std::sin(double(t) * freq));
    out[half + i] = T(std::cos(double(t) * freq));
  }
  return out;
}

template <typename T>
Tensor<T> TimestepEmbed<T>::embed(T t) const {
  auto feats = Tensor<T>::from({freq_dim}, sinusoid(t, freq_dim));
  return fc2.forward(gelu(fc1.forward(feats)));
}

template <typename T>
void TimestepEmbed<T>::collect(const std::string& prefix, ParamMap<T>& pm) const {
  fc1.collect(prefix + ".fc1", pm);
  fc2.collect(prefix + ".fc2", pm);
}

// --- FinalLayer --------------------------------------------------------------

template <typename T>
FinalLayer<T>::FinalLayer(Rng& rng, std::size_t width, std::size_t token_dim)
    : mod(rng, width, 2 * width, true, Init::zero),
      out(rng, width, token_dim, true, Init::zero) {}

template <typename T>
Tensor<T> FinalLayer<T>::forward(const Tensor<T>& z, const Tensor<T>& cond) const {
  const std::size_t d = z.dim(1);
  auto m = reshape(mod.forward(cond), {2, d});
  auto shift = chunk_row(m, 0, d), sc = chunk_row(m, 1, d);
  return out.forward(modulate(layer_norm(z, eps), shift, sc));
}

template <typename T>
void FinalLayer<T>::collect(const std::string& prefix, ParamMap<T>& pm) const {
  mod.collect(prefix + ".mod", pm);
  out.collect(prefix + ".out", pm);
}

// --- positional tables ---------------------------------------------------------

template <typename T>
Tensor<T> pos_embed_2d(std::size_t grid, std::size_t dim) {
  if (dim % 4 != 0)
    throw std::invalid_argument("pos_embed_2d: width must be divisible by 4");
  const std::size_t q = dim / 4;
  auto out = Tensor<T>::zeros({grid * grid, dim});
  T* dst = out.data();
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      T* row = dst + (gy * grid + gx) * dim;
      for (std::size_t i = 0; i < q; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / double(q));
        row[i] = T(std::sin(double(gy) * freq));
        row[q + i] = T(std::cos(double(gy) * freq));
        row[2 * q + i] = T(std::sin(double(gx) * freq));
        row[3 * q + i] = T(std::cos(double(gx) * freq));
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> pos_embed_1d(std::size_t length, std::size_t dim) {
  if (dim % 2 != 0)
    throw std::invalid_argument("pos_embed_1d: width must be even");
  const std::size_t half = dim / 2;
  auto out = Tensor<T>::zeros({length, dim});
  T* dst = out.data();
  for (std::size_t p = 0; p < length; ++p) {
    T* row = dst + p * dim;
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
      row[i] = T(std::sin(double(p) * freq));
      row[half + i] = T(std::cos(double(p) * freq));
    }
  }
  return out;
}

// --- instantiation -----------------------------------------------------------

#define XMDPT_INSTANTIATE_NN(T)                                  \
  template struct Linear<T>;                                     \
  template struct MhaCore<T>;                                    \
  template struct Mlp<T>;                                        \
  template struct DiTBlock<T>;                                   \
  template struct VanillaBlock<T>;                               \
  template struct PatchEmbed<T>;                                 \
  template struct TimestepEmbed<T>;                              \
  template struct FinalLayer<T>;                                 \
  template Tensor<T> pos_embed_2d<T>(std::size_t, std::size_t);  \
  template Tensor<T> pos_embed_1d<T>(std::size_t, std::size_t);

XMDPT_INSTANTIATE_NN(float)
XMDPT_INSTANTIATE_NN(double)
#undef XMDPT_INSTANTIATE_NN

}  // namespace xmdpt
