#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "xmdpt/model.hpp"

using namespace xmdpt;

namespace {

template <typename T>
CondInputs<T> random_cond(Rng& rng, const ModelConfig& cfg) {
  CondInputs<T> c;
  const auto grid = static_cast<std::size_t>(cfg.grid);
  const auto ch = static_cast<std::size_t>(cfg.channels);
  const int fgrid = cfg.feat_canvas / cfg.feat_patch;
  const auto ft = static_cast<std::size_t>(1 + fgrid * fgrid);
  const auto fw = static_cast<std::size_t>(cfg.feat_width);
  c.source_latent = Tensor<T>::randn(rng, {grid, grid, ch}, T(1));
  c.pose_feat = Tensor<T>::randn(rng, {ft, fw}, T(1));
  c.glob_feat = Tensor<T>::randn(rng, {ft, fw}, T(1));
  return c;
}

// Nudges every trainable parameter off its initial point so the zero-init
// gates and output head stop hiding the rest of the network.
template <typename T>
void warm(GeneratorModel<T>& model, Rng& rng, T amp = T(0.05)) {
  for (auto& p : model.trainable())
    for (auto& v : p.values()) v += T(rng.normal()) * amp;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace

TEST_CASE("preset options pick the aggregation head") {
  CHECK(ModelOptions::for_preset("s").aggregation == AggregationMode::concat_conv);
  CHECK(ModelOptions::for_preset("b").aggregation == AggregationMode::concat_conv);
  CHECK(ModelOptions::for_preset("l").aggregation == AggregationMode::concat_conv);
  CHECK(ModelOptions::for_preset("t").aggregation == AggregationMode::mlp);
  CHECK(ModelOptions::for_preset("xt").aggregation == AggregationMode::mlp);
}

TEST_CASE("plain pass produces a latent-shaped prediction") {
  Rng rng(31);
  const ModelConfig cfg = ModelConfig::from_preset("xt");
  GeneratorModel<float> model(rng, cfg, ModelOptions::for_preset("xt"));
  CHECK(model.blocks.size() == std::size_t(cfg.layers));
  CHECK(cfg.n1 + cfg.n2 == cfg.layers);

  const CondInputs<float> ci = random_cond<float>(rng, cfg);
  const Tensor<float> y_t = Tensor<float>::randn(rng, {8, 8, 2}, 1.0f);
  const Tensor<float> c = model.cond_vector(ci);
  CHECK(c.shape() == std::vector<std::size_t>{32});
  const Tensor<float> eps_hat = model.predict_noise(y_t, c, 500);
  CHECK(eps_hat.shape() == std::vector<std::size_t>({8, 8, 2}));

  // Zero-initialised output head: a fresh model predicts exactly zero.
  for (std::size_t i = 0; i < eps_hat.size(); ++i) CHECK(eps_hat[i] == 0.0f);
}

TEST_CASE("empty mask reduces the masked pass to the plain pass") {
  Rng rng(32);
  const ModelConfig cfg = ModelConfig::from_preset("xt");
  GeneratorModel<float> model(rng, cfg, ModelOptions::for_preset("xt"));
  warm(model, rng);

  const CondInputs<float> ci = random_cond<float>(rng, cfg);
  const Tensor<float> y_t = Tensor<float>::randn(rng, {8, 8, 2}, 1.0f);
  const Tensor<float> c = model.cond_vector(ci);
  const Tensor<float> src = model.source_tokens(ci.source_latent);

  const Tensor<float> plain = model.predict_noise(y_t, c, 137);
  const long before = model.mipnet.invocations;
  const Tensor<float> masked = model.masked_predict(y_t, c, 137, empty_mask(16), src);
  CHECK(model.mipnet.invocations == before);
  CHECK(max_abs_diff(plain, masked) <= 1e-9);
}

TEST_CASE("masked pass keeps the latent shape and engages the filler") {
  Rng rng(33);
  const ModelConfig cfg = ModelConfig::from_preset("xt");
  GeneratorModel<float> model(rng, cfg, ModelOptions::for_preset("xt"));
  warm(model, rng);

  const CondInputs<float> ci = random_cond<float>(rng, cfg);
  const Tensor<float> y_t = Tensor<float>::randn(rng, {8, 8, 2}, 1.0f);
  const Tensor<float> c = model.cond_vector(ci);
  const Tensor<float> src = model.source_tokens(ci.source_latent);
  const Tensor<float> plain = model.predict_noise(y_t, c, 137);

  long invocations = 0;
  for (double ratio : {0.3, 0.5, 0.7}) {
    const MaskSpec spec = sample_mask(16, ratio, 99);
    const Tensor<float> out = model.masked_predict(y_t, c, 137, spec, src);
    CHECK(out.shape() == std::vector<std::size_t>({8, 8, 2}));
    CHECK(max_abs_diff(plain, out) > 1e-6);
    ++invocations;
    CHECK(model.mipnet.invocations == invocations);
  }

  MaskSpec wrong = sample_mask(32, 0.5, 99);
  CHECK_THROWS_AS(model.masked_predict(y_t, c, 137, wrong, src),
                  std::invalid_argument);
}

TEST_CASE("sampling never touches the masked-token filler") {
  Rng rng(34);
  const ModelConfig cfg = ModelConfig::from_preset("xt");
  GeneratorModel<float> model(rng, cfg, ModelOptions::for_preset("xt"));
  warm(model, rng);
  const CondInputs<float> ci = random_cond<float>(rng, cfg);
  const Tensor<float> c = model.cond_vector(ci);
  const Tensor<float> u = model.uncond_vector();

  const NoiseSchedule ns = NoiseSchedule::linear(1000);
  GuidanceParams gp;
  gp.gamma = 1.5;
  NoisePredictor<float> predict = [&](const Tensor<float>& y_t, int t, CondMode m) {
    return model.predict_noise(y_t, m == CondMode::uncond ? u : c, t);
  };
  SampleReport report;
  Rng srng(7);
  const Tensor<float> sample =
      ddim_sample<float>(predict, {8, 8, 2}, ns, 10, gp, srng, &report);
  CHECK(sample.shape() == std::vector<std::size_t>({8, 8, 2}));
  CHECK(report.model_forwards == 20);
  CHECK(model.mipnet.invocations == 0);
}

TEST_CASE("a zero model scores exactly the noise energy") {
  Rng rng(35);
  const ModelConfig cfg = ModelConfig::from_preset("xt");
  const GeneratorModel<float> model(rng, cfg, ModelOptions::for_preset("xt"));
  const CondInputs<float> ci = random_cond<float>(rng, cfg);
  const Tensor<float> y0 = Tensor<float>::randn(rng, {8, 8, 2}, 1.0f);
  const Tensor<float> eps = Tensor<float>::randn(rng, {8, 8, 2}, 1.0f);
  const NoiseSchedule ns = NoiseSchedule::linear(1000);

  double energy = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) energy += double(eps[i]) * eps[i];
  energy /= double(eps.size());

  const MaskSpec spec = sample_mask(16, 0.3, 4);
  const auto lb = pair_loss_at(model, y0, ci, eps, 321, spec, ns);
  CHECK(lb.denoise.item() == doctest::Approx(energy).epsilon(1e-6));
  CHECK(lb.mask.item() == doctest::Approx(energy).epsilon(1e-6));
  CHECK(lb.total.item() ==
        doctest::Approx(lb.denoise.item() + lb.mask.item()).epsilon(1e-12));
  CHECK(lb.masked_tokens == 4);
}

TEST_CASE("pair_loss draws are deterministic per seed") {
  Rng rng(36);
  const ModelConfig cfg = ModelConfig::from_preset("xt");
  GeneratorModel<float> model(rng, cfg, ModelOptions::for_preset("xt"));
  warm(model, rng);
  const CondInputs<float> ci = random_cond<float>(rng, cfg);
  const Tensor<float> y0 = Tensor<float>::randn(rng, {8, 8, 2}, 1.0f);
  const NoiseSchedule ns = NoiseSchedule::linear(1000);

  Rng a(77), b(77), d(78);
  const auto la = pair_loss(model, y0, ci, ns, 0.3, a);
  const auto lb = pair_loss(model, y0, ci, ns, 0.3, b);
  const auto ld = pair_loss(model, y0, ci, ns, 0.3, d);
  CHECK(la.total.item() == lb.total.item());
  CHECK(la.t == lb.t);
  CHECK(la.total.item() != ld.total.item());
  CHECK_FALSE(la.dropped);

  Rng e(77);
  const auto le = pair_loss(model, y0, ci, ns, 0.3, e, /*drop_prob=*/1.0);
  CHECK(le.dropped);
  CHECK(std::isfinite(le.total.item()));

  Rng f(77);
  const auto lf = pair_loss(model, y0, ci, ns, 0.0, f);
  CHECK(lf.masked_tokens == 0);
}

TEST_CASE("gradients reach every trainable tensor") {
  Rng rng(37);
  const ModelConfig cfg = ModelConfig::from_preset("xt");
  GeneratorModel<float> model(rng, cfg, ModelOptions::for_preset("xt"));
  warm(model, rng);
  const CondInputs<float> ci = random_cond<float>(rng, cfg);
  const Tensor<float> y0 = Tensor<float>::randn(rng, {8, 8, 2}, 1.0f);
  const NoiseSchedule ns = NoiseSchedule::linear(1000);
  const Tensor<float> eps = Tensor<float>::randn(rng, {8, 8, 2}, 1.0f);
  const MaskSpec spec = sample_mask(16, 0.5, 11);

  {
    Tape<float> tape;
    const auto lb = pair_loss_at(model, y0, ci, eps, 640, spec, ns);
    tape.backward(lb.total);
  }
  ParamMap<float> pm;
  model.collect("model", pm);
  for (const auto& [name, p] : pm.items) {
    if (!p.requires_grad()) continue;
    REQUIRE_MESSAGE(p.has_grad(), name);
    Tensor<float> handle = p;
    float peak = 0.0f;
    for (float g : handle.grad()) peak = std::max(peak, std::fabs(g));
    CHECK_MESSAGE(peak > 0.0f, name);
  }
}

TEST_CASE("mask token only trains through the masked pass") {
  Rng rng(38);
  const ModelConfig cfg = ModelConfig::from_preset("xt");
  GeneratorModel<float> model(rng, cfg, ModelOptions::for_preset("xt"));
  warm(model, rng);
  const CondInputs<float> ci = random_cond<float>(rng, cfg);
  const Tensor<float> y0 = Tensor<float>::randn(rng, {8, 8, 2}, 1.0f);
  const Tensor<float> eps = Tensor<float>::randn(rng, {8, 8, 2}, 1.0f);
  const NoiseSchedule ns = NoiseSchedule::linear(1000);

  {
    Tape<float> tape;
    const auto lb = pair_loss_at(model, y0, ci, eps, 640, empty_mask(16), ns);
    tape.backward(lb.total);
  }
  ParamMap<float> pm;
  model.collect("model", pm);
  for (const auto& [name, p] : pm.items) {
    if (name == "model.mask_token" || name.rfind("model.mipnet", 0) == 0) {
      Tensor<float> handle = p;
      float peak = 0.0f;
      if (handle.has_grad())
        for (float g : handle.grad()) peak = std::max(peak, std::fabs(g));
      CHECK_MESSAGE(peak == 0.0f, name);
    }
  }
}

TEST_CASE("full-model gradients match finite differences") {
  Rng rng(39);
  ModelConfig cfg = ModelConfig::from_preset("xt");
  GeneratorModel<double> model(rng, cfg, ModelOptions::for_preset("xt"));
  warm(model, rng, 0.05);
  const CondInputs<double> ci = random_cond<double>(rng, cfg);
  const Tensor<double> y0 = Tensor<double>::randn(rng, {8, 8, 2}, 1.0);
  const Tensor<double> eps = Tensor<double>::randn(rng, {8, 8, 2}, 1.0);
  const NoiseSchedule ns = NoiseSchedule::linear(1000);
  const MaskSpec spec = sample_mask(16, 0.3, 5);

  auto make_out = [&]() {
    return pair_loss_at(model, y0, ci, eps, 640, spec, ns).total;
  };
  std::vector<Tensor<double>> probes = {
      model.patch_embed.proj.w,    model.time_embed.fc2.w,
      model.blocks[0].attn.wq.w,   model.blocks[0].mod.w,
      model.blocks[1].mlp.fc1.w,   model.final_layer.out.w,
      model.mask_token,            model.mipnet.self_attn.wq.w,
      model.mipnet.cross_attn.wv.w, model.canet.local_w,
      model.canet.pose_adapt.w,    model.canet.agg_fc1.w,
  };
  test_util::fd_check(make_out, probes, 1e-4, 1e-4, 24);
}
