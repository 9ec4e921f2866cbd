#include "xmdpt/nn.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "xmdpt/tensor.hpp"

using namespace xmdpt;
using test_util::fd_check;
using test_util::rand_t;

namespace {

// Plain-loop single-head attention reference, kept independent of MhaCore.
std::vector<double> attention_oracle(const std::vector<double>& x, std::size_t L,
                                     std::size_t D, const Linear<double>& wq,
                                     const Linear<double>& wk,
                                     const Linear<double>& wv,
                                     const Linear<double>& wo) {
  auto apply = [&](const Linear<double>& lin, const std::vector<double>& in) {
    std::vector<double> out(L * D, 0.0);
    for (std::size_t r = 0; r < L; ++r)
      for (std::size_t j = 0; j < D; ++j) {
        double acc = lin.b[j];
        for (std::size_t i = 0; i < D; ++i) acc += in[r * D + i] * lin.w[i * D + j];
        out[r * D + j] = acc;
      }
    return out;
  };
  auto q = apply(wq, x), k = apply(wk, x), v = apply(wv, x);
  std::vector<double> ctx(L * D, 0.0);
  const double sc = 1.0 / std::sqrt(double(D));
  for (std::size_t r = 0; r < L; ++r) {
    std::vector<double> logits(L);
    double mx = -1e300;
    for (std::size_t s = 0; s < L; ++s) {
      double acc = 0;
      for (std::size_t i = 0; i < D; ++i) acc += q[r * D + i] * k[s * D + i];
      logits[s] = acc * sc;
      mx = std::max(mx, logits[s]);
    }
    double z = 0;
    for (auto& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (std::size_t s = 0; s < L; ++s)
      for (std::size_t i = 0; i < D; ++i) ctx[r * D + i] += (logits[s] / z) * v[s * D + i];
  }
  return apply(wo, ctx);
}

}  // namespace

TEST_CASE("model presets pin dimensions and stage splits") {
  auto s = ModelConfig::from_preset("s");
  CHECK(s.layers == 12);
  CHECK(s.width == 384);
  CHECK(s.heads == 6);
  CHECK(s.n1 == 8);
  CHECK(s.n2 == 4);
  CHECK(s.tokens() == 256);
  CHECK(s.token_dim() == 16);

  auto l = ModelConfig::from_preset("l");
  CHECK(l.layers == 24);
  CHECK(l.n1 == 16);
  CHECK(l.n2 == 8);

  auto t = ModelConfig::from_preset("t");
  CHECK(t.layers == 4);
  CHECK(t.n1 == 3);
  CHECK(t.n2 == 1);
  CHECK(t.tokens() == 16);
  CHECK(t.token_dim() == 8);

  // The shallowest preset still keeps one block on each side of the
  // masked-token stage.
  auto xt = ModelConfig::from_preset("xt");
  CHECK(xt.layers == 2);
  CHECK(xt.n1 == 1);
  CHECK(xt.n2 == 1);

  CHECK_THROWS(ModelConfig::from_preset("xxl"));
}

TEST_CASE("linear layer applies y = x w + b for both ranks") {
  Rng rng(1);
  Linear<double> lin(rng, 3, 2);
  lin.w.values() = {1, 2, 3, 4, 5, 6};  // rows are input dims
  lin.b.values() = {10, 20};
  auto v = Tensor<double>::from({3}, {1, 1, 1});
  auto y = lin.forward(v);
  CHECK(y.shape() == std::vector<std::size_t>{2});
  CHECK(y[0] == 1 + 3 + 5 + 10);
  CHECK(y[1] == 2 + 4 + 6 + 20);

  auto m = Tensor<double>::from({2, 3}, {1, 0, 0, 0, 1, 0});
  auto ym = lin.forward(m);
  CHECK(ym.shape() == std::vector<std::size_t>{2, 2});
  CHECK(ym[0] == 11.0);
  CHECK(ym[1] == 22.0);
  CHECK(ym[2] == 13.0);
  CHECK(ym[3] == 24.0);
}

TEST_CASE("multi-head attention matches the plain-loop oracle") {
  Rng rng(42);
  const std::size_t L = 3, D = 4;
  MhaCore<double> mha(rng, D, 1);
  auto x = rand_t(rng, {L, D});
  auto got = mha.forward(x, x);
  auto want = attention_oracle(x.values(), L, D, mha.wq, mha.wk, mha.wv, mha.wo);
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("two heads equal two half-width single-head attentions") {
  Rng rng(43);
  const std::size_t L = 5, D = 8;
  MhaCore<double> mha(rng, D, 2, /*out_proj=*/false, /*bias=*/false);
  auto x = rand_t(rng, {L, D});
  auto got = mha.forward(x, x);

  // Rebuild each head as its own attention over sliced projections.
  for (std::size_t h = 0; h < 2; ++h) {
    auto q = slice_cols(mha.wq.forward(x), h * 4, h * 4 + 4);
    auto k = slice_cols(mha.wk.forward(x), h * 4, h * 4 + 4);
    auto v = slice_cols(mha.wv.forward(x), h * 4, h * 4 + 4);
    auto att = softmax_rows(scale(matmul(q, transpose(k)), 0.5));
    auto ctx = matmul(att, v);
    for (std::size_t r = 0; r < L; ++r)
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(got[r * D + h * 4 + j] == doctest::Approx(ctx[r * 4 + j]).epsilon(1e-12));
  }
}

TEST_CASE("self-attention without positions is permutation equivariant") {
  Rng rng(44);
  const std::size_t L = 6, D = 8;
  MhaCore<double> mha(rng, D, 2);
  auto x = rand_t(rng, {L, D});
  std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  auto y = mha.forward(x, x);
  auto yp = mha.forward(gather_rows(x, perm), gather_rows(x, perm));
  for (std::size_t r = 0; r < L; ++r)
    for (std::size_t j = 0; j < D; ++j)
      CHECK(yp[r * D + j] == doctest::Approx(y[perm[r] * D + j]).epsilon(1e-12));
}

TEST_CASE("freshly built conditioned block is the exact identity") {
  Rng rng(7);
  const std::size_t L = 9, D = 16;
  DiTBlock<float> blk(rng, D, 4);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto z = Tensor<float>::randn(rng, {L, D}, 1.0f);
    auto cond = Tensor<float>::randn(rng, {D}, 1.0f);
    auto out = blk.forward(z, cond);
    for (std::size_t i = 0; i < z.size(); ++i)
      worst = std::max(worst, double(std::fabs(out[i] - z[i])));
  }
  CHECK(worst == 0.0);
}

TEST_CASE("conditioned block departs from identity once modulation is nonzero") {
  Rng rng(8);
  const std::size_t L = 4, D = 8;
  DiTBlock<double> blk(rng, D, 2);
  for (auto& v : blk.mod.w.values()) v = rng.normal() * 0.3;
  auto z = rand_t(rng, {L, D});
  auto cond = rand_t(rng, {D});
  auto out = blk.forward(z, cond);
  double dev = 0;
  for (std::size_t i = 0; i < z.size(); ++i)
    dev = std::max(dev, std::fabs(out[i] - z[i]));
  CHECK(dev > 1e-3);

  // And the condition vector influences the output.
  auto cond2 = rand_t(rng, {D});
  auto out2 = blk.forward(z, cond2);
  double cdev = 0;
  for (std::size_t i = 0; i < z.size(); ++i)
    cdev = std::max(cdev, std::fabs(out2[i] - out[i]));
  CHECK(cdev > 1e-6);
}

TEST_CASE("vanilla block is not an identity at init") {
  Rng rng(9);
  VanillaBlock<double> blk(rng, 8, 2);
  auto z = rand_t(rng, {4, 8});
  auto out = blk.forward(z);
  double dev = 0;
  for (std::size_t i = 0; i < z.size(); ++i)
    dev = std::max(dev, std::fabs(out[i] - z[i]));
  CHECK(dev > 1e-3);
}

TEST_CASE("conditioned block gradients match finite differences") {
  Rng rng(10);
  const std::size_t L = 3, D = 8;
  DiTBlock<double> blk(rng, D, 2);
  for (auto& v : blk.mod.w.values()) v = rng.normal() * 0.2;
  for (auto& v : blk.mod.b.values()) v = rng.normal() * 0.2;
  auto z = rand_t(rng, {L, D});
  auto cond = rand_t(rng, {D});

  ParamMap<double> pm;
  blk.collect("blk", pm);
  std::vector<Tensor<double>> inputs = {z, cond};
  for (auto& [name, t] : pm.items) inputs.push_back(t);
  fd_check([&] { return blk.forward(z, cond); }, inputs, 1e-5, 2e-5, 24);
}

TEST_CASE("timestep embedding separates timesteps and starts at [0,1]") {
  TimestepEmbed<double>::sinusoid(0.0, 8);
  auto s0 = TimestepEmbed<double>::sinusoid(0.0, 8);
  for (int i = 0; i < 4; ++i) {
    CHECK(s0[i] == 0.0);
    CHECK(s0[4 + i] == 1.0);
  }

  Rng rng(11);
  TimestepEmbed<double> emb(rng, 32, 16);
  auto e1 = emb.embed(1.0);
  auto e999 = emb.embed(999.0);
  CHECK(e1.shape() == std::vector<std::size_t>{16});
  double diff = 0;
  for (std::size_t i = 0; i < 16; ++i) diff += std::fabs(e1[i] - e999[i]);
  CHECK(diff > 1e-3);

  ParamMap<double> pm;
  emb.collect("t", pm);
  std::vector<Tensor<double>> inputs;
  for (auto& [name, t] : pm.items) inputs.push_back(t);
  fd_check([&] { return emb.embed(17.0); }, inputs, 1e-5, 2e-5, 24);
}

TEST_CASE("2d positional table distinguishes rows and columns") {
  auto pe = pos_embed_2d<double>(4, 16);
  CHECK(pe.shape() == std::vector<std::size_t>{16, 16});
  // Tokens in the same grid row share the y half.
  for (std::size_t gx = 1; gx < 4; ++gx)
    for (std::size_t i = 0; i < 8; ++i)
      CHECK(pe[(0 * 4 + gx) * 16 + i] == pe[(0 * 4 + 0) * 16 + i]);
  // Tokens in the same grid column share the x half.
  for (std::size_t gy = 1; gy < 4; ++gy)
    for (std::size_t i = 8; i < 16; ++i)
      CHECK(pe[(gy * 4 + 1) * 16 + i] == pe[(0 * 4 + 1) * 16 + i]);
  // All rows are pairwise distinct.
  for (std::size_t a = 0; a < 16; ++a)
    for (std::size_t b = a + 1; b < 16; ++b) {
      double d = 0;
      for (std::size_t i = 0; i < 16; ++i)
        d += std::fabs(pe[a * 16 + i] - pe[b * 16 + i]);
      CHECK(d > 1e-6);
    }
}

TEST_CASE("final layer with zero init emits exactly zero") {
  Rng rng(12);
  FinalLayer<float> fin(rng, 16, 8);
  auto z = Tensor<float>::randn(rng, {4, 16}, 1.0f);
  auto cond = Tensor<float>::randn(rng, {16}, 1.0f);
  auto out = fin.forward(z, cond);
  CHECK(out.shape() == std::vector<std::size_t>{4, 8});
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0f);
}

TEST_CASE("patch embed projects tokens and backprops to the latent") {
  Rng rng(13);
  PatchEmbed<double> pe(rng, 8, 12, 2);
  auto lat = rand_t(rng, {4, 4, 2});
  auto toks = pe.forward(lat);
  CHECK(toks.shape() == std::vector<std::size_t>{4, 12});
  fd_check([&] { return pe.forward(lat); }, {lat, pe.proj.w, pe.proj.b}, 1e-5, 2e-5, 32);
}

TEST_CASE("parameter registry counts match the block formula") {
  Rng rng(14);
  const std::size_t D = 64;
  DiTBlock<float> blk(rng, D, 4);
  ParamMap<float> pm;
  blk.collect("blk", pm);
  // attn 4(D^2+D), mlp 8D^2+5D, modulation 6D^2+6D.
  CHECK(pm.trainable_count() == 18 * D * D + 15 * D);
  CHECK(pm.total_count() == pm.trainable_count());

  // Frozen tensors drop out of the trainable count.
  pm.items[0].second.set_requires_grad(false);
  CHECK(pm.trainable_count() < pm.total_count());
}
