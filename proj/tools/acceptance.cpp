#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "xmdpt/harness.hpp"
#include "xmdpt/io.hpp"

// Release gate: twelve checks, one verdict line each. Training-backed checks
// run real short trainings, so the full gate takes tens of minutes.

using namespace xmdpt;

namespace {

struct Verdict {
  int id = 0;
  bool pass = false;
  std::string detail;
};

std::vector<Verdict> g_verdicts;

void record(int id, bool pass, std::string detail) {
  g_verdicts.push_back({id, pass, std::move(detail)});
  std::fprintf(stderr, "  .. criterion %d %s\n", id, pass ? "ok" : "FAILED");
}

void record_error(int id, const std::exception& e) {
  g_verdicts.push_back({id, false, std::string("exception: ") + e.what()});
  std::fprintf(stderr, "  .. criterion %d EXCEPTION %s\n", id, e.what());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* pattern, ...) {
  char buf[512];
  va_list args;
  va_start(args, pattern);
  std::vsnprintf(buf, sizeof buf, pattern, args);
  va_end(args);
  return buf;
}

// Shifts every trainable weight off its init point so gates open and every
// parameter carries gradient.
template <typename T>
void warm(GeneratorModel<T>& model, Rng& rng, double amp) {
  for (auto& p : model.trainable())
    for (auto& v : p.values()) v += T(rng.normal() * amp);
}

// --- criterion 1: full-model gradient sweep ---------------------------------

void criterion_1() {
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(0x101);
  ModelConfig mc = ModelConfig::from_preset("xt");
  GeneratorModel<double> model(rng, mc, ModelOptions::for_preset("xt"));
  warm(model, rng, 0.05);

  CondInputs<double> ci;
  ci.source_latent = Tensor<double>::randn(rng, {8, 8, 2}, 1.0, false);
  ci.pose_feat = Tensor<double>::randn(rng, {17, 32}, 1.0, false);
  ci.glob_feat = Tensor<double>::randn(rng, {17, 32}, 1.0, false);
  Tensor<double> y0 = Tensor<double>::randn(rng, {8, 8, 2}, 1.0, false);
  Tensor<double> eps = Tensor<double>::randn(rng, {8, 8, 2}, 1.0, false);
  NoiseSchedule ns = NoiseSchedule::linear(1000, 1e-4, 2e-2);
  MaskSpec spec = sample_mask(std::size_t(mc.tokens()), 0.3, 0x7a11);
  const int t = 500;

  auto loss_value = [&]() {
    NoGrad<double> ng;
    return pair_loss_at(model, y0, ci, eps, t, spec, ns).total.item();
  };

  std::vector<Tensor<double>> params = model.trainable();
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    auto lb = pair_loss_at(model, y0, ci, eps, t, spec, ns);
    tape.backward(lb.total);
    for (auto& p : params)
      analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.size(), 0.0));
    for (auto& p : params) p.zero_grad();
  }

  const double h = 1e-4;
  double max_err = 0.0;
  std::size_t elems = 0;
  for (std::size_t which = 0; which < params.size(); ++which) {
    auto& p = params[which];
    for (std::size_t i = 0; i < p.size(); ++i, ++elems) {
      const double keep = p.values()[i];
      p.values()[i] = keep + h;
      const double up = loss_value();
      p.values()[i] = keep - h;
      const double dn = loss_value();
      p.values()[i] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double an = analytic[which][i];
      const double err = std::fabs(fd - an) / std::max({1.0, std::fabs(fd), std::fabs(an)});
      max_err = std::max(max_err, err);
    }
  }
  double secs = seconds_since(t0);
  record(1, max_err <= 1e-4 && secs < 300.0,
         fmt("gradient sweep over %zu parameters, max rel err %.3g, %.0f s",
             elems, max_err, secs));
}

// --- criterion 2: AdaLN-Zero identity ----------------------------------------

void criterion_2() {
  Rng rng(0x202);
  double max_dev = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t width = trial % 2 == 0 ? 64 : 32;
    const std::size_t heads = trial % 2 == 0 ? 4 : 2;
    DiTBlock<float> block(rng, width, heads);
    Tensor<float> x = Tensor<float>::randn(rng, {16, width}, 1.0f, false);
    Tensor<float> c = Tensor<float>::randn(rng, {width}, 1.0f, false);
    NoGrad<float> ng;
    Tensor<float> y = block.forward(x, c);
    for (std::size_t i = 0; i < x.size(); ++i)
      max_dev = std::max(max_dev, double(std::fabs(y.values()[i] - x.values()[i])));
  }
  record(2, max_dev == 0.0,
         fmt("untrained blocks on 100 pairs, max abs deviation %.17g", max_dev));
}

// --- criterion 3: guidance algebra -------------------------------------------

void criterion_3() {
  Rng rng(0x303);
  bool ok = true;
  std::string fail;

  for (int trial = 0; trial < 1000 && ok; ++trial) {
    GuidanceParams gp;
    gp.gamma = rng.uniform(0.0, 4.0);
    gp.alpha = rng.uniform(0.05, 4.0);
    const int T = 1 + int(rng.next_below(1000));
    const double g0 = guidance_scale(0, T, gp);
    const double gT = guidance_scale(T, T, gp);
    if (g0 != 0.0 || gT != gp.gamma) {
      ok = false;
      fail = fmt("schedule endpoints broke at gamma %.17g alpha %.17g T %d "
                 "(gamma_0 %.17g, gamma_T %.17g)", gp.gamma, gp.alpha, T, g0, gT);
    }
  }
  for (int trial = 0; trial < 50 && ok; ++trial) {
    Tensor<float> cond = Tensor<float>::randn(rng, {4, 4}, 1.0f, false);
    Tensor<float> uncond = Tensor<float>::randn(rng, {4, 4}, 1.0f, false);
    Tensor<float> as_cond = cfg_combine(cond, uncond, 1.0);
    Tensor<float> as_uncond = cfg_combine(cond, uncond, 0.0);
    for (std::size_t i = 0; i < cond.size(); ++i) {
      if (as_cond.values()[i] != cond.values()[i] ||
          as_uncond.values()[i] != uncond.values()[i]) {
        ok = false;
        fail = "mixing at gamma_t in {0,1} is not an exact passthrough";
        break;
      }
    }
  }
  record(3, ok, ok ? "1000 schedule triples and 50 mixing pairs exact at the endpoints"
                   : fail);
}

// --- criterion 4: forward-count economics -------------------------------------

void criterion_4() {
  NoiseSchedule ns = NoiseSchedule::linear(1000, 1e-4, 2e-2);
  Rng dummy(0);
  NoisePredictor<float> zero = [](const Tensor<float>& y_t, int, CondMode) {
    return scale(y_t, 0.0f);
  };
  GuidanceParams std_gp;
  std_gp.disentangled = false;
  GuidanceParams dis_gp;
  dis_gp.disentangled = true;

  SampleReport a, b;
  Rng r1(4), r2(4);
  NoGrad<float> ng;
  ddim_sample(zero, {4, 4, 1}, ns, 50, std_gp, r1, &a);
  ddim_sample(zero, {4, 4, 1}, ns, 50, dis_gp, r2, &b);
  record(4, a.model_forwards == 100 && b.model_forwards == 150,
         fmt("50-step DDIM books %ld forwards standard, %ld disentangled",
             a.model_forwards, b.model_forwards));
}

// --- criterion 5: analytic sampler oracle --------------------------------------

void criterion_5() {
  auto t0 = std::chrono::steady_clock::now();
  const double mu = 0.7, sigma = 0.6;
  const int T = 1000, ddim_steps = 400, n_samples = 2000;
  NoiseSchedule ns = NoiseSchedule::linear(T, 1e-4, 2e-2);

  // Posterior-mean noise for y0 ~ N(mu, sigma^2 I):
  // eps*(y_t) = (y_t - sqrt(abar) mu) sqrt(1-abar) / (abar sigma^2 + 1 - abar).
  NoisePredictor<double> oracle = [&](const Tensor<double>& y_t, int t, CondMode) {
    const double abar = ns.alpha_bar[std::size_t(t)];
    const double root_abar = std::sqrt(abar);
    const double k = std::sqrt(1.0 - abar) / (abar * sigma * sigma + 1.0 - abar);
    std::vector<double> out(y_t.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = (y_t.values()[i] - root_abar * mu) * k;
    return Tensor<double>::from(y_t.shape(), std::move(out));
  };

  GuidanceParams gp;
  Rng rng(0x505);
  NoGrad<double> ng;
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (int s = 0; s < n_samples; ++s) {
    Tensor<double> x = ddim_sample(oracle, {4, 4, 1}, ns, ddim_steps, gp, rng);
    for (std::size_t i = 0; i < x.size(); ++i, ++n) {
      sum += x.values()[i];
      sum_sq += x.values()[i] * x.values()[i];
    }
  }
  const double mean = sum / double(n);
  const double var = (sum_sq - sum * sum / double(n)) / double(n - 1);
  const double sd = std::sqrt(var);
  const double z_mean = std::fabs(mean - mu) / (sigma / std::sqrt(double(n)));
  const double z_sd = std::fabs(sd - sigma) / (sigma / std::sqrt(2.0 * double(n - 1)));
  double secs = seconds_since(t0);
  record(5, z_mean <= 3.0 && z_sd <= 3.0 && secs < 120.0,
         fmt("2000 samples: mean %.5f (z %.2f), std %.5f (z %.2f), %.0f s", mean,
             z_mean, sd, z_sd, secs));
}

// --- criterion 6: mask machinery ------------------------------------------------

void criterion_6() {
  Rng rng(0x606);
  bool floor_ok = true;
  for (int trial = 0; trial < 2000 && floor_ok; ++trial) {
    const std::size_t L = 1 + rng.next_below(512);
    const double ratio = rng.uniform();
    MaskSpec spec = sample_mask(L, ratio, rng.next_u64());
    const std::size_t want = std::size_t(ratio * double(L));
    if (spec.count() != want || spec.length != L) floor_ok = false;
    for (std::size_t i = 0; i + 1 < spec.masked.size() && floor_ok; ++i)
      if (spec.masked[i] >= spec.masked[i + 1]) floor_ok = false;
    if (!spec.masked.empty() && spec.masked.back() >= L) floor_ok = false;
  }

  ModelConfig mc = ModelConfig::from_preset("xt");
  GeneratorModel<float> model(rng, mc, ModelOptions::for_preset("xt"));
  warm(model, rng, 0.05);
  CondInputs<float> ci;
  ci.source_latent = Tensor<float>::randn(rng, {8, 8, 2}, 1.0f, false);
  ci.pose_feat = Tensor<float>::randn(rng, {17, 32}, 1.0f, false);
  ci.glob_feat = Tensor<float>::randn(rng, {17, 32}, 1.0f, false);
  Tensor<float> y = Tensor<float>::randn(rng, {8, 8, 2}, 1.0f, false);

  NoGrad<float> ng;
  Tensor<float> c = model.cond_vector(ci);
  Tensor<float> src = model.source_tokens(ci.source_latent);
  Tensor<float> plain = model.predict_noise(y, c, 400);
  Tensor<float> degen =
      model.masked_predict(y, c, 400, empty_mask(std::size_t(mc.tokens())), src);
  double max_dev = 0.0;
  for (std::size_t i = 0; i < plain.size(); ++i)
    max_dev = std::max(max_dev,
                       double(std::fabs(plain.values()[i] - degen.values()[i])));

  const long invocations_before = model.mipnet.invocations;
  Tensor<float> c_un = model.uncond_vector();
  NoisePredictor<float> predict = [&](const Tensor<float>& y_t, int t, CondMode m) {
    return model.predict_noise(y_t, m == CondMode::uncond ? c_un : c, t);
  };
  GuidanceParams gp;
  NoiseSchedule ns = NoiseSchedule::linear(1000, 1e-4, 2e-2);
  Rng srng(7);
  ddim_sample(predict, {8, 8, 2}, ns, 25, gp, srng);
  const long sampling_invocations = model.mipnet.invocations - invocations_before;

  record(6, floor_ok && max_dev <= 1e-9 && sampling_invocations == 0,
         fmt("floor exact on 2000 draws, empty-mask deviation %.3g, "
             "%ld reconstruction calls while sampling",
             max_dev, sampling_invocations));
}

// --- criteria 7 and 8: short-training ablations ---------------------------------

RunConfig ablation_base(std::uint64_t seed) {
  RunConfig cfg;
  cfg.preset = "t";
  cfg.identities = 12;
  cfg.views = 3;
  cfg.poses = 4;
  cfg.codec_steps = 2000;
  cfg.steps = 2000;
  cfg.batch = 8;
  cfg.lr = 1e-3;
  cfg.ema_decay = 0.999;
  cfg.mask_ratio = 0.30;
  cfg.drop_prob = 0.10;
  cfg.log_every = 0;
  cfg.val_every = 0;
  cfg.checkpoint_every = 0;
  cfg.val_pairs = 16;
  cfg.seed = seed;
  return cfg;
}

void criterion_7() {
  const PredictorKind kinds[] = {PredictorKind::self_only, PredictorKind::cross_only,
                                 PredictorKind::cross_then_self,
                                 PredictorKind::self_then_cross};

  // Source sensitivity: the reconstruction block must ignore the source
  // sequence exactly when it has no cross stage.
  std::map<PredictorKind, double> src_grad;
  {
    Rng rng(0x707);
    for (PredictorKind k : kinds) {
      Mipnet<float> mip(rng, 32, 2, k);
      Tensor<float> tgt = Tensor<float>::randn(rng, {16, 32}, 1.0f, false);
      Tensor<float> src = Tensor<float>::randn(rng, {16, 32}, 1.0f, true);
      Tape<float> tape;
      Tensor<float> out = mip.forward(tgt, src);
      tape.backward(sum_all(out));
      double g = 0.0;
      if (src.has_grad())
        for (float v : src.grad()) g = std::max(g, double(std::fabs(v)));
      src_grad[k] = g;
      src.zero_grad();
    }
  }
  bool jac_ok = src_grad[PredictorKind::self_only] == 0.0 &&
                src_grad[PredictorKind::cross_only] > 0.0 &&
                src_grad[PredictorKind::cross_then_self] > 0.0 &&
                src_grad[PredictorKind::self_then_cross] > 0.0;

  bool all_finite = true;
  std::map<PredictorKind, std::vector<double>> vals;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    for (PredictorKind k : kinds) {
      RunConfig cfg = ablation_base(seed);
      cfg.predictor = k;
      std::fprintf(stderr, "  .. criterion 7: %s seed %llu\n", predictor_name(k),
                   (unsigned long long)seed);
      Trainer tr(cfg);
      try {
        tr.run(false);
      } catch (const std::runtime_error&) {
        all_finite = false;
      }
      for (const auto& row : tr.log)
        if (!std::isfinite(row.total)) all_finite = false;
      vals[k].push_back(tr.validation_total());
    }
  }
  int best_wins = 0;
  const char* best_name = "";
  for (PredictorKind k : {PredictorKind::cross_only, PredictorKind::cross_then_self,
                          PredictorKind::self_then_cross}) {
    int wins = 0;
    for (std::size_t s = 0; s < 3; ++s)
      if (vals[k][s] < vals[PredictorKind::self_only][s]) ++wins;
    if (wins > best_wins) {
      best_wins = wins;
      best_name = predictor_name(k);
    }
  }
  std::ostringstream detail;
  detail << "4 kinds x 3 seeds x 2000 steps " << (all_finite ? "finite" : "DIVERGED")
         << "; self-jacobian " << src_grad[PredictorKind::self_only]
         << ", best cross variant " << best_name << " beats self on " << best_wins
         << "/3 seeds (val totals self";
  for (double v : vals[PredictorKind::self_only]) detail << ' ' << fmt("%.4f", v);
  detail << ")";
  record(7, jac_ok && all_finite && best_wins == 3, detail.str());
}

void criterion_8() {
  int wins = 0;
  std::ostringstream detail;
  detail << "val SSIM LP vs LPG:";
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    double ssim_of[2] = {0.0, 0.0};
    int slot = 0;
    for (const char* conds : {"LP", "LPG"}) {
      RunConfig cfg = ablation_base(seed);
      set_conditions(cfg, conds);
      std::fprintf(stderr, "  .. criterion 8: %s seed %llu\n", conds,
                   (unsigned long long)seed);
      Trainer tr(cfg);
      tr.run(false);
      std::vector<std::size_t> recs = tr.corpus.test_indices();
      tr.ema.swap_into_params();
      EvalResult res =
          evaluate_records(tr.model, tr.frozen, tr.corpus, recs, tr.cfg.guidance(),
                           tr.ns, 50, 0xE7A1 + seed);
      tr.ema.swap_into_params();
      ssim_of[slot++] = res.mean_ssim;
    }
    if (ssim_of[0] < ssim_of[1]) ++wins;
    detail << fmt(" seed%llu %.4f/%.4f", (unsigned long long)seed, ssim_of[0],
                  ssim_of[1]);
  }
  record(8, wins == 3, detail.str() + fmt(" -> LPG better on %d/3", wins));
}

// --- criteria 9 and 10: the end-to-end run ---------------------------------------

void criteria_9_and_10() {
  auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg;
  cfg.preset = "t";
  cfg.identities = 45;
  cfg.views = 4;
  cfg.poses = 6;
  cfg.codec_steps = 4000;
  cfg.steps = 10000;
  cfg.batch = 8;
  cfg.lr = 1e-3;
  cfg.ema_decay = 0.999;
  cfg.mask_ratio = 0.30;
  cfg.drop_prob = 0.10;
  cfg.log_every = 2000;
  cfg.val_every = 0;
  cfg.checkpoint_every = 0;
  cfg.val_pairs = 16;
  cfg.seed = 1;

  std::fprintf(stderr, "  .. criterion 10: 10000-step run\n");
  Trainer tr(cfg);
  tr.run(false);
  const double train_secs = seconds_since(t0);

  SimilarityRow sim = tr.similarity_now();
  record(9, sim.mean_same_id > 0.95 && sim.mean_same_id > sim.mean_cross_id,
         fmt("same-identity cosine %.5f, cross-identity %.5f", sim.mean_same_id,
             sim.mean_cross_id));

  std::vector<std::size_t> recs = tr.corpus.test_indices();
  if (recs.size() > 200) recs.resize(200);
  std::fprintf(stderr, "  .. criterion 10: sampling %zu test pairs\n", recs.size());
  tr.ema.swap_into_params();
  EvalResult res = evaluate_records(tr.model, tr.frozen, tr.corpus, recs,
                                    tr.cfg.guidance(), tr.ns, 50, 0xE7A1);
  tr.ema.swap_into_params();
  record(10,
         recs.size() >= 200 && res.id_accuracy >= 0.90 && res.mean_ssim >= 0.5 &&
             train_secs < 3600.0,
         fmt("%zu pairs after %.0f s training: identity accuracy %.3f, mean SSIM "
             "%.4f, toy-FID %.4f",
             recs.size(), train_secs, res.id_accuracy, res.mean_ssim, res.toy_fid));
}

// --- criterion 11: metric correctness ---------------------------------------------

void criterion_11() {
  Rng rng(0xB0B);
  // Equal isotropic covariances collapse the distance to |delta mu|^2.
  const std::size_t dim = 8;
  FrechetStats a, b;
  a.dim = b.dim = dim;
  a.count = b.count = 100;
  a.mean.resize(dim);
  b.mean.resize(dim);
  double want = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    a.mean[i] = rng.normal();
    b.mean[i] = a.mean[i] + 0.3 * rng.normal();
    const double d = a.mean[i] - b.mean[i];
    want += d * d;
  }
  a.cov.assign(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) a.cov[i * dim + i] = 0.35;
  b.cov = a.cov;
  const double got = frechet_distance(a, b);
  const bool frechet_ok = std::fabs(got - want) <= 1e-6;

  Tensor<float> x = Tensor<float>::randn(rng, {24, 24, 3}, 0.5f, false);
  const bool ssim_ok = ssim(x, x) == 1.0;

  // Checkpoint round trip: every stored tensor and the optimizer state must
  // come back bit-identical, and a re-save must reproduce the file bytes.
  RunConfig cfg;
  cfg.preset = "xt";
  cfg.identities = 4;
  cfg.views = 2;
  cfg.poses = 2;
  cfg.codec_steps = 60;
  cfg.steps = 3;
  cfg.batch = 2;
  cfg.log_every = 0;
  cfg.val_every = 0;
  cfg.checkpoint_every = 0;
  cfg.val_pairs = 2;
  cfg.seed = 21;
  Trainer tr(cfg);
  for (int i = 0; i < 3; ++i) tr.train_step();

  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "xmdpt_acceptance_ck";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string p1 = (dir / "a.bin").string();
  const std::string p2 = (dir / "b.bin").string();
  tr.save(p1);
  Trainer back = Trainer::from_checkpoint(p1);
  back.save(p2);

  bool bits_ok = true;
  {
    ParamMap<float> pa, pb;
    tr.model.collect("model", pa);
    tr.frozen.collect(pa);
    back.model.collect("model", pb);
    back.frozen.collect(pb);
    if (pa.items.size() != pb.items.size()) bits_ok = false;
    for (std::size_t i = 0; bits_ok && i < pa.items.size(); ++i) {
      if (pa.items[i].first != pb.items[i].first) bits_ok = false;
      const auto& va = pa.items[i].second.values();
      const auto& vb = pb.items[i].second.values();
      if (va != vb) bits_ok = false;
    }
    if (tr.opt.m != back.opt.m || tr.opt.v != back.opt.v) bits_ok = false;
    if (tr.ema.shadow != back.ema.shadow) bits_ok = false;
    if (tr.rng.save_state() != back.rng.save_state()) bits_ok = false;
  }
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::ostringstream b1, b2;
  b1 << f1.rdbuf();
  b2 << f2.rdbuf();
  const bool file_ok = b1.str() == b2.str() && !b1.str().empty();
  fs::remove_all(dir);

  record(11, frechet_ok && ssim_ok && bits_ok && file_ok,
         fmt("frechet err %.3g, ssim(x,x) %s 1, state %s, re-save %s",
             std::fabs(got - want), ssim_ok ? "==" : "!=",
             bits_ok ? "bit-exact" : "DIFFERS", file_ok ? "byte-identical" : "DIFFERS"));
}

// --- criterion 12: parameter counts ------------------------------------------------

void criterion_12() {
  const struct {
    const char* name;
    double target;
  } rows[] = {{"s", 33.52e6}, {"b", 131.92e6}, {"l", 460.24e6}};
  bool ok = true;
  std::ostringstream detail;
  for (const auto& row : rows) {
    Rng rng(3);
    GeneratorModel<float> model(rng, ModelConfig::from_preset(row.name),
                                ModelOptions::for_preset(row.name));
    ParamMap<float> pm;
    model.collect("model", pm);
    const double count = double(pm.trainable_count());
    const double rel = std::fabs(count - row.target) / row.target;
    if (rel > 0.05) ok = false;
    detail << fmt("%s %s=%.2fM (%+.2f%%)", detail.str().empty() ? "" : " ", row.name,
                  count / 1e6, 100.0 * (count - row.target) / row.target);
  }
  record(12, ok, detail.str());
}

}  // namespace

// With no arguments every criterion runs; listing ids on the command line
// narrows the gate for debugging a single check.
int main(int argc, char** argv) {
  using fn = void (*)();
  const struct {
    int id;
    fn run;
  } checks[] = {{2, criterion_2},  {3, criterion_3},   {4, criterion_4},
                {6, criterion_6},  {11, criterion_11}, {12, criterion_12},
                {5, criterion_5},  {1, criterion_1},   {7, criterion_7},
                {8, criterion_8},  {9, criteria_9_and_10}};
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  const bool full = only.empty();
  auto wanted = [&](int id) {
    if (full) return true;
    for (int o : only)
      if (o == id || (id == 9 && o == 10)) return true;
    return false;
  };

  for (const auto& check : checks) {
    if (!wanted(check.id)) continue;
    try {
      check.run();
    } catch (const std::exception& e) {
      record_error(check.id, e);
    }
  }

  if (full)
    for (int id = 1; id <= 12; ++id) {
      bool seen = false;
      for (const auto& v : g_verdicts) seen = seen || v.id == id;
      if (!seen) g_verdicts.push_back({id, false, "not reached"});
    }
  std::sort(g_verdicts.begin(), g_verdicts.end(),
            [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  int failures = 0;
  for (const auto& v : g_verdicts) {
    if (!v.pass) ++failures;
    std::printf("[%s] criterion %2d: %s\n", v.pass ? "PASS" : "FAIL", v.id,
                v.detail.c_str());
  }
  if (full) std::printf("%d/12 criteria pass\n", int(g_verdicts.size()) - failures);
  return failures == 0 ? 0 : 1;
}
