#include <cmath>
#include <cstring>

#include "doctest.h"
#include "test_util.hpp"
#include "xmdpt/canet.hpp"
#include "xmdpt/toyworld.hpp"

using namespace xmdpt;

namespace {

bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

CanetConfig toy_canet_config(AggregationMode mode) {
  CanetConfig cfg;
  cfg.width = 64;
  cfg.source_tokens = 16;
  cfg.feat_tokens = 17;
  cfg.pose_feat_width = 64;
  cfg.glob_feat_width = 64;
  cfg.aggregation = mode;
  return cfg;
}

}  // namespace

TEST_CASE("featurizer presets pin widths and token counts") {
  CHECK(FeaturizerConfig::preset('s').width == 32);
  CHECK(FeaturizerConfig::preset('b').width == 64);
  CHECK(FeaturizerConfig::preset('l').width == 128);
  CHECK(FeaturizerConfig::preset('b').tokens() == 17);
  CHECK_THROWS_AS(FeaturizerConfig::preset('x'), std::invalid_argument);

  FeaturizerConfig big;
  big.canvas = 224;
  big.patch = 14;
  big.width = 768;
  CHECK(big.tokens() == 257);
}

TEST_CASE("featurizer is deterministic, frozen, and image sensitive") {
  Rng rng(9);
  const ToyFeaturizer feat(rng, FeaturizerConfig::preset('b'));
  Rng rng2(9);
  const ToyFeaturizer feat2(rng2, FeaturizerConfig::preset('b'));

  const Corpus c = generate_corpus(3, 1, 2, 21);
  const auto t1 = feat.forward(c.target_images[0]);
  REQUIRE(t1.shape() == std::vector<std::size_t>{17, 64});
  CHECK(same_bits(t1, feat.forward(c.target_images[0])));
  CHECK(same_bits(t1, feat2.forward(c.target_images[0])));
  CHECK_FALSE(same_bits(t1, feat.forward(c.target_images[1])));

  ParamMap<float> pm;
  feat.collect("feat", pm);
  CHECK(pm.total_count() > 0);
  CHECK(pm.trainable_count() == 0);

  CHECK_THROWS_AS(feat.forward(Tensor<float>::zeros({8, 8, 3})),
                  std::invalid_argument);
}

TEST_CASE("local head with uniform weights mean-pools the tokens") {
  Rng rng(3);
  Canet<float> net(rng, toy_canet_config(AggregationMode::sum));

  // All tokens equal to v: mean pooling must return v itself.
  Rng draw(4);
  auto v = Tensor<float>::randn(draw, {64}, 1.0f);
  std::vector<float> rows;
  for (int r = 0; r < 16; ++r)
    rows.insert(rows.end(), v.data(), v.data() + 64);
  auto tokens = Tensor<float>::from({16, 64}, std::move(rows));
  auto v_l = net.local_feature(tokens);
  REQUIRE(v_l.shape() == std::vector<std::size_t>{64});
  for (std::size_t i = 0; i < 64; ++i)
    CHECK(v_l[i] == doctest::Approx(v[i]).epsilon(1e-6));
}

TEST_CASE("local head gradient reaches every source token") {
  Rng rng(3);
  Canet<float> net(rng, toy_canet_config(AggregationMode::sum));
  Rng draw(5);
  auto tokens = Tensor<float>::randn(draw, {16, 64}, 1.0f, true);

  Tape<float> tape;
  auto weights = Tensor<float>::randn(draw, {64}, 1.0f);
  tape.backward(sum_all(mul(net.local_feature(tokens), weights)));

  const auto& g = tokens.grad();
  for (std::size_t i = 0; i < g.size(); ++i) {
    INFO("token element ", i);
    CHECK(g[i] != 0.0f);
  }
}

TEST_CASE("pose features are deterministic and distinct across poses") {
  Rng frng(6);
  const ToyFeaturizer feat(frng, FeaturizerConfig::preset('b'));
  Rng rng(7);
  const Canet<float> net(rng, toy_canet_config(AggregationMode::sum));

  const Corpus c = generate_corpus(2, 1, 4, 33);
  std::vector<Tensor<float>> vps;
  for (int p = 0; p < 4; ++p)
    vps.push_back(net.pose_feature(feat.forward(c.pose_maps[p])));

  CHECK(same_bits(vps[0], net.pose_feature(feat.forward(c.pose_maps[0]))));
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b) {
      const double cos_ab = view_similarity(vps[a], vps[b]);
      CHECK(cos_ab < 1.0 - 1e-6);
      CHECK(std::abs(cos_ab) <= 1.0 + 1e-12);
    }
}

TEST_CASE("global features at init separate identities better than chance") {
  Rng frng(8);
  const ToyFeaturizer feat(frng, FeaturizerConfig::preset('b'));
  Rng rng(9);
  const Canet<float> net(rng, toy_canet_config(AggregationMode::sum));

  const Corpus c = generate_corpus(6, 3, 1, 51);
  // v_G per (identity, view) from the source images.
  std::vector<std::vector<Tensor<float>>> vg(6);
  for (std::size_t i = 0; i < c.records.size(); ++i)
    vg[c.records[i].identity].push_back(
        net.global_feature(feat.forward(c.source_images[i])));

  double same = 0.0, cross = 0.0;
  int n_same = 0, n_cross = 0;
  for (int a = 0; a < 6; ++a)
    for (int b = a; b < 6; ++b)
      for (std::size_t i = 0; i < vg[a].size(); ++i)
        for (std::size_t j = (a == b ? i + 1 : 0); j < vg[b].size(); ++j) {
          const double s = view_similarity(vg[a][i], vg[b][j]);
          (a == b ? same : cross) += s;
          (a == b ? n_same : n_cross) += 1;
        }
  CHECK(same / n_same > cross / n_cross);
}

TEST_CASE("sum aggregation with one active stream is the identity") {
  CanetConfig cfg = toy_canet_config(AggregationMode::sum);
  cfg.use_pose = false;
  cfg.use_global = false;
  Rng rng(10);
  const Canet<float> net(rng, cfg);

  Rng draw(11);
  auto tokens = Tensor<float>::randn(draw, {16, 64}, 1.0f);
  auto v_l = net.local_feature(tokens);
  CHECK(same_bits(net.aggregate(v_l, {}, {}), v_l));

  ParamMap<float> pm;
  net.collect("canet", pm);
  for (const auto& [name, t] : pm.items) {
    CHECK(name.find("pose") == std::string::npos);
    CHECK(name.find("glob") == std::string::npos);
  }
}

TEST_CASE("every aggregation mode reacts to every active stream") {
  Rng draw(12);
  const auto v_l = Tensor<float>::randn(draw, {64}, 1.0f);
  const auto v_p = Tensor<float>::randn(draw, {64}, 1.0f);
  const auto v_g = Tensor<float>::randn(draw, {64}, 1.0f);
  auto bumped = [&](const Tensor<float>& v) {
    auto out = Tensor<float>::from(v.shape(),
                                   std::vector<float>(v.data(), v.data() + v.size()));
    out.data()[0] += 0.25f;
    return out;
  };

  for (auto mode : {AggregationMode::sum, AggregationMode::concat_conv,
                    AggregationMode::mlp}) {
    CAPTURE(aggregation_name(mode));
    Rng rng(13);
    const Canet<float> net(rng, toy_canet_config(mode));
    const auto c = net.aggregate(v_l, v_p, v_g);
    REQUIRE(c.shape() == std::vector<std::size_t>{64});
    CHECK_FALSE(same_bits(c, net.aggregate(bumped(v_l), v_p, v_g)));
    CHECK_FALSE(same_bits(c, net.aggregate(v_l, bumped(v_p), v_g)));
    CHECK_FALSE(same_bits(c, net.aggregate(v_l, v_p, bumped(v_g))));
    CHECK(same_bits(c, net.aggregate(v_l, v_p, v_g)));
  }
}

TEST_CASE("ablation subsets construct and expose only their own parameters") {
  struct Case {
    bool l, p, g;
  };
  for (const Case cs : {Case{true, true, false}, Case{false, true, true},
                        Case{true, true, true}}) {
    CanetConfig cfg = toy_canet_config(AggregationMode::mlp);
    cfg.use_local = cs.l;
    cfg.use_pose = cs.p;
    cfg.use_global = cs.g;
    Rng rng(14);
    const Canet<float> net(rng, cfg);
    ParamMap<float> pm;
    net.collect("canet", pm);
    bool has_local = false, has_glob = false;
    for (const auto& [name, t] : pm.items) {
      has_local |= name.find("local") != std::string::npos;
      has_glob |= name.find("glob") != std::string::npos;
    }
    CHECK(has_local == cs.l);
    CHECK(has_glob == cs.g);
  }

  CanetConfig none = toy_canet_config(AggregationMode::sum);
  none.use_local = none.use_pose = none.use_global = false;
  Rng rng(15);
  CHECK_THROWS_AS(Canet<float>(rng, none), std::invalid_argument);
}

TEST_CASE("every canet parameter receives gradient from the condition") {
  Rng rng(16);
  const Canet<float> net(rng, toy_canet_config(AggregationMode::mlp));
  Rng draw(17);
  const auto src = Tensor<float>::randn(draw, {16, 64}, 1.0f);
  const auto pose = Tensor<float>::randn(draw, {17, 64}, 1.0f);
  const auto feat = Tensor<float>::randn(draw, {17, 64}, 1.0f);

  Tape<float> tape;
  const auto w = Tensor<float>::randn(draw, {64}, 1.0f);
  tape.backward(sum_all(mul(net.condition(src, pose, feat), w)));

  ParamMap<float> pm;
  net.collect("canet", pm);
  for (auto& [name, t] : pm.items) {
    INFO(name);
    REQUIRE(t.has_grad());
    float max_abs = 0.0f;
    for (float g : t.grad()) max_abs = std::max(max_abs, std::abs(g));
    CHECK(max_abs > 0.0f);
  }
}

TEST_CASE("pose-only condition zeroes the other streams") {
  Rng draw(18);
  const auto src = Tensor<float>::randn(draw, {16, 64}, 1.0f);
  const auto pose = Tensor<float>::randn(draw, {17, 64}, 1.0f);
  const auto feat = Tensor<float>::randn(draw, {17, 64}, 1.0f);

  {
    Rng rng(19);
    const Canet<float> net(rng, toy_canet_config(AggregationMode::sum));
    CHECK(same_bits(net.pose_only_condition(pose),
                    net.pose_feature(pose)));
  }
  {
    Rng rng(19);
    const Canet<float> net(rng, toy_canet_config(AggregationMode::mlp));
    const auto c_full = net.condition(src, pose, feat);
    const auto c_pose = net.pose_only_condition(pose);
    CHECK_FALSE(same_bits(c_full, c_pose));
    CHECK(same_bits(c_pose, net.pose_only_condition(pose)));
  }
  {
    CanetConfig cfg = toy_canet_config(AggregationMode::sum);
    cfg.use_pose = false;
    Rng rng(20);
    const Canet<float> net(rng, cfg);
    CHECK_THROWS_AS(net.pose_only_condition(pose), std::logic_error);
  }
}

TEST_CASE("view similarity is a guarded cosine") {
  auto a = Tensor<float>::from({3}, {1.0f, 0.0f, 0.0f});
  auto b = Tensor<float>::from({3}, {0.0f, 2.0f, 0.0f});
  auto z = Tensor<float>::zeros({3});
  CHECK(view_similarity(a, a) == doctest::Approx(1.0));
  CHECK(view_similarity(a, b) == doctest::Approx(0.0));
  CHECK_THROWS_AS(view_similarity(a, z), std::invalid_argument);
  CHECK_THROWS_AS(view_similarity(a, Tensor<float>::zeros({4})),
                  std::invalid_argument);

  Rng rng(21);
  for (int i = 0; i < 200; ++i) {
    auto u = Tensor<float>::randn(rng, {16}, 1.0f);
    auto v = Tensor<float>::randn(rng, {16}, 1.0f);
    CHECK(std::abs(view_similarity(u, v)) <= 1.0 + 1e-12);
  }
}
