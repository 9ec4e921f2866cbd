#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xmdpt/harness.hpp"
#include "xmdpt/kernels.hpp"

using namespace xmdpt;

namespace {

// Every config key a flag can override; optionals stay empty when the flag
// was not given so file values survive.
struct Overrides {
  std::optional<std::string> preset, predictor, aggregation, conditions;
  std::optional<int> patch;
  std::optional<long> steps, checkpoint_every, log_every, val_every, codec_steps;
  std::optional<int> batch, val_pairs, ddim_steps, timesteps;
  std::optional<double> lr, ema_decay, mask_ratio, drop_prob;
  std::optional<double> gamma, alpha, beta_start, beta_end;
  std::optional<std::string> guidance_mode, data_dir, out_dir;
  std::optional<int> identities, views, poses;
  std::optional<std::uint64_t> seed;

  bool touches_model_or_data() const {
    return preset || predictor || aggregation || conditions || patch || seed ||
           identities || views || poses || codec_steps || timesteps ||
           beta_start || beta_end || lr || batch || ema_decay || mask_ratio ||
           drop_prob || val_pairs;
  }

  void apply(RunConfig& cfg) const {
    if (preset) cfg.preset = *preset;
    if (patch) cfg.patch = *patch;
    if (predictor) cfg.predictor = predictor_from_name(*predictor);
    if (aggregation) cfg.aggregation = aggregation_from_name(*aggregation);
    if (conditions) set_conditions(cfg, *conditions);
    if (steps) cfg.steps = *steps;
    if (batch) cfg.batch = *batch;
    if (lr) cfg.lr = *lr;
    if (ema_decay) cfg.ema_decay = *ema_decay;
    if (mask_ratio) cfg.mask_ratio = *mask_ratio;
    if (drop_prob) cfg.drop_prob = *drop_prob;
    if (checkpoint_every) cfg.checkpoint_every = *checkpoint_every;
    if (log_every) cfg.log_every = *log_every;
    if (val_every) cfg.val_every = *val_every;
    if (val_pairs) cfg.val_pairs = *val_pairs;
    if (gamma) cfg.gamma = *gamma;
    if (alpha) cfg.alpha = *alpha;
    if (guidance_mode) {
      if (*guidance_mode != "standard" && *guidance_mode != "disentangled")
        throw std::invalid_argument("guidance mode must be standard or disentangled");
      cfg.guidance_mode = *guidance_mode;
    }
    if (ddim_steps) cfg.ddim_steps = *ddim_steps;
    if (timesteps) cfg.timesteps = *timesteps;
    if (beta_start) cfg.beta_start = *beta_start;
    if (beta_end) cfg.beta_end = *beta_end;
    if (identities) cfg.identities = *identities;
    if (views) cfg.views = *views;
    if (poses) cfg.poses = *poses;
    if (codec_steps) cfg.codec_steps = *codec_steps;
    if (data_dir) cfg.data_dir = *data_dir;
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.out_dir = *out_dir;
  }
};

void add_common_flags(CLI::App* cmd, Overrides& ov, std::optional<std::string>& config_path) {
  cmd->add_option("--config", config_path, "config file to start from");
  cmd->add_option("--preset", ov.preset, "model preset: xt|t|s|b|l");
  cmd->add_option("--patch", ov.patch, "latent patch side");
  cmd->add_option("--predictor", ov.predictor,
                  "masked-token predictor: self|cross|cross-self|self-cross");
  cmd->add_option("--aggregation", ov.aggregation,
                  "condition fusion: sum|concat-conv|mlp");
  cmd->add_option("--conditions", ov.conditions,
                  "active condition streams, letters from LPG");
  cmd->add_option("--steps", ov.steps, "training steps");
  cmd->add_option("--batch", ov.batch, "pairs per optimizer step");
  cmd->add_option("--lr", ov.lr, "Adam learning rate");
  cmd->add_option("--ema-decay", ov.ema_decay, "EMA decay for the shadow weights");
  cmd->add_option("--mask-ratio", ov.mask_ratio, "masked token fraction");
  cmd->add_option("--drop-prob", ov.drop_prob, "condition drop probability");
  cmd->add_option("--checkpoint-every", ov.checkpoint_every, "steps between checkpoints");
  cmd->add_option("--log-every", ov.log_every, "steps between progress lines");
  cmd->add_option("--val-every", ov.val_every, "steps between validation passes");
  cmd->add_option("--val-pairs", ov.val_pairs, "validation pair count");
  cmd->add_option("--gamma", ov.gamma, "guidance strength at t = T");
  cmd->add_option("--alpha", ov.alpha, "guidance schedule exponent");
  cmd->add_option("--guidance-mode", ov.guidance_mode, "standard|disentangled");
  cmd->add_option("--ddim-steps", ov.ddim_steps, "DDIM steps when sampling");
  cmd->add_option("--timesteps", ov.timesteps, "diffusion timesteps T");
  cmd->add_option("--beta-start", ov.beta_start, "linear beta ramp start");
  cmd->add_option("--beta-end", ov.beta_end, "linear beta ramp end");
  cmd->add_option("--identities", ov.identities, "toy corpus identity count");
  cmd->add_option("--views", ov.views, "views per identity");
  cmd->add_option("--poses", ov.poses, "poses per view");
  cmd->add_option("--codec-steps", ov.codec_steps, "codec fitting steps");
  cmd->add_option("--data-dir", ov.data_dir, "corpus dump directory");
  cmd->add_option("--seed", ov.seed, "master run seed");
  cmd->add_option("--out-dir", ov.out_dir, "run output directory");
}

// Precedence: flags beat RUN_SEED beats the config file beats defaults.
RunConfig effective_config(const std::optional<std::string>& config_path,
                           const Overrides& ov) {
  RunConfig cfg;
  if (config_path) cfg = load_config_file(*config_path).cfg;
  apply_env_overrides(cfg);
  ov.apply(cfg);
  return cfg;
}

void echo_config(const RunConfig& cfg) {
  std::cout << "== effective config ==\n" << serialize_config(cfg) << "\n";
}

std::vector<std::size_t> pick_records(const Corpus& corpus, const std::string& split,
                                      int max_pairs) {
  std::vector<std::size_t> recs;
  if (split == "train") recs = corpus.train_indices();
  else if (split == "test") recs = corpus.test_indices();
  else throw std::invalid_argument("split must be train or test");
  if (max_pairs > 0 && std::size_t(max_pairs) < recs.size())
    recs.resize(std::size_t(max_pairs));
  return recs;
}

int cmd_gen_data(const RunConfig& cfg) {
  Corpus corpus = generate_corpus(cfg.identities, cfg.views, cfg.poses, cfg.seed);
  write_corpus(corpus, cfg.data_dir);
  std::size_t train = corpus.train_indices().size();
  std::cout << "wrote " << corpus.records.size() << " records (" << train
            << " train, " << corpus.records.size() - train << " test) to "
            << cfg.data_dir << "\n";
  return 0;
}

int cmd_train(const std::optional<std::string>& config_path, const Overrides& ov,
              const std::optional<std::string>& resume) {
  if (resume) {
    if (ov.touches_model_or_data())
      throw std::invalid_argument(
          "when resuming, only --steps/--out-dir/cadence flags may change; "
          "model, data, and optimizer settings live in the checkpoint");
    Trainer tr = Trainer::from_checkpoint(*resume);
    if (ov.steps) tr.cfg.steps = *ov.steps;
    if (ov.out_dir) tr.cfg.out_dir = *ov.out_dir;
    if (ov.checkpoint_every) tr.cfg.checkpoint_every = *ov.checkpoint_every;
    if (ov.log_every) tr.cfg.log_every = *ov.log_every;
    if (ov.val_every) tr.cfg.val_every = *ov.val_every;
    if (ov.ddim_steps) tr.cfg.ddim_steps = *ov.ddim_steps;
    if (ov.gamma) tr.cfg.gamma = *ov.gamma;
    if (ov.alpha) tr.cfg.alpha = *ov.alpha;
    if (ov.guidance_mode) tr.cfg.guidance_mode = *ov.guidance_mode;
    echo_config(tr.cfg);
    std::cout << "resumed at step " << tr.step << "\n";
    tr.run(true);
    std::cout << "final validation total " << tr.validation_total() << "\n";
    return 0;
  }
  RunConfig cfg = effective_config(config_path, ov);
  echo_config(cfg);
  Trainer tr(cfg);
  tr.run(true);
  std::cout << "final validation total " << tr.validation_total() << "\n";
  return 0;
}

struct SamplingOverrides {
  std::optional<double> gamma, alpha;
  std::optional<std::string> mode;
  std::optional<int> ddim_steps;
  bool no_ema = false;

  void apply(RunConfig& cfg) const {
    if (gamma) cfg.gamma = *gamma;
    if (alpha) cfg.alpha = *alpha;
    if (mode) cfg.guidance_mode = *mode;
    if (ddim_steps) cfg.ddim_steps = *ddim_steps;
  }
};

void add_sampling_flags(CLI::App* sub, SamplingOverrides& so) {
  sub->add_option("--gamma", so.gamma, "guidance strength, overrides the checkpoint");
  sub->add_option("--alpha", so.alpha, "guidance schedule exponent");
  sub->add_option("--guidance-mode", so.mode, "standard or disentangled");
  sub->add_option("--ddim-steps", so.ddim_steps, "sampling step count");
  sub->add_flag("--no-ema", so.no_ema, "use the raw weights instead of the EMA");
}

// Swaps EMA weights in for the duration of a sampling scope unless disabled.
struct EmaScope {
  Ema<float>* ema = nullptr;
  EmaScope(Trainer& tr, bool use_ema) : ema(use_ema ? &tr.ema : nullptr) {
    if (ema) ema->swap_into_params();
  }
  ~EmaScope() {
    if (ema) ema->swap_into_params();
  }
};

int cmd_sample(const std::string& checkpoint, std::optional<std::uint64_t> sample_seed,
               int count, const std::optional<std::string>& out_dir_flag,
               const SamplingOverrides& so) {
  Trainer tr = Trainer::from_checkpoint(checkpoint);
  so.apply(tr.cfg);
  std::string out_dir = out_dir_flag.value_or(tr.cfg.out_dir + "/samples");
  std::filesystem::create_directories(out_dir);
  std::uint64_t seed = sample_seed.value_or(tr.cfg.seed);
  GuidanceParams gp = tr.cfg.guidance();

  std::vector<std::size_t> recs = tr.corpus.test_indices();
  if (count > 0 && std::size_t(count) < recs.size()) recs.resize(std::size_t(count));

  EmaScope scope(tr, !so.no_ema);
  SampleReport last;
  for (std::size_t i : recs) {
    Rng rng(Rng::mix(seed, i));
    PairSample ps = sample_pair(tr.model, tr.frozen, tr.corpus.source_images[i],
                                tr.corpus.pose_maps[i], gp, tr.ns,
                                tr.cfg.ddim_steps, rng);
    char name[64];
    std::snprintf(name, sizeof name, "/rec_%05zu", i);
    std::string base = out_dir + name;
    write_ppm(ps.image, base + "_gen.ppm");
    write_ppm(tr.corpus.source_images[i], base + "_src.ppm");
    write_ppm(tr.corpus.target_images[i], base + "_tgt.ppm");
    last = ps.report;
  }
  std::cout << "wrote " << recs.size() << " samples to " << out_dir << "\n"
            << last.to_text() << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& split, int max_pairs,
             std::optional<std::uint64_t> sample_seed,
             const std::optional<std::string>& out_dir_flag,
             const SamplingOverrides& so) {
  Trainer tr = Trainer::from_checkpoint(checkpoint);
  so.apply(tr.cfg);
  std::string out_dir = out_dir_flag.value_or(tr.cfg.out_dir + "/eval");
  std::uint64_t seed = sample_seed.value_or(tr.cfg.seed);
  std::vector<std::size_t> recs = pick_records(tr.corpus, split, max_pairs);

  EvalResult res;
  {
    EmaScope scope(tr, !so.no_ema);
    res = evaluate_records(tr.model, tr.frozen, tr.corpus, recs, tr.cfg.guidance(),
                           tr.ns, tr.cfg.ddim_steps, seed);
  }
  write_eval_artifacts(out_dir, res);
  std::printf(
      "%zu pairs  mean ssim %.4f  mean psnr %.2f  toy-fid %.4f  id accuracy %.3f\n",
      res.rows.size(), res.mean_ssim, res.mean_psnr, res.toy_fid, res.id_accuracy);
  std::cout << "per-record tables in " << out_dir << "\n";
  return 0;
}

int cmd_bench(const RunConfig& cfg, int reps, int images, bool skip_big) {
  std::cout << "kernel backend: " << kern::backend_name(kern::active()) << "\n";

  std::cout << "\nparameter counts (trainable)\n";
  for (const char* name : {"s", "b", "l"}) {
    if (skip_big && std::string(name) != "s") continue;
    Rng rng(1);
    GeneratorModel<float> model(rng, ModelConfig::from_preset(name),
                                ModelOptions::for_preset(name));
    ParamMap<float> pm;
    model.collect("model", pm);
    std::printf("  %-2s %12zu  (%.2fM)\n", name, pm.trainable_count(),
                double(pm.trainable_count()) / 1e6);
  }

  ModelConfig mc = cfg.model_config();
  std::cout << "\ngeneration timing, preset " << mc.preset << ", " << images
            << " images x " << reps << " reps, " << cfg.ddim_steps
            << " DDIM steps\n";
  Corpus corpus = generate_corpus(2, 1, std::max(1, images), cfg.seed);
  FrozenStack frozen = FrozenStack::build(corpus, mc, cfg.model_options(), false);
  if (mc.grid != frozen.codec.latent_grid() || mc.channels != frozen.codec.latent_channels)
    throw std::invalid_argument("timing needs a toy preset (xt or t)");
  Rng mrng(Rng::mix(cfg.seed, 7));
  GeneratorModel<float> model(mrng, mc, cfg.model_options());
  NoiseSchedule ns = cfg.schedule();

  for (bool disentangled : {false, true}) {
    GuidanceParams gp = cfg.guidance();
    gp.disentangled = disentangled;
    std::vector<double> times;
    SampleReport rep;
    for (int r = 0; r < reps; ++r) {
      auto t0 = std::chrono::steady_clock::now();
      for (int k = 0; k < images; ++k) {
        std::size_t rec = std::size_t(k) % corpus.records.size();
        Rng rng(Rng::mix(cfg.seed, std::uint64_t(r) * 1000 + std::uint64_t(k)));
        PairSample ps = sample_pair(model, frozen, corpus.source_images[rec],
                                    corpus.pose_maps[rec], gp, ns,
                                    cfg.ddim_steps, rng);
        rep = ps.report;
      }
      auto t1 = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    double mean = 0.0;
    for (double t : times) mean += t;
    mean /= double(times.size());
    double var = 0.0;
    for (double t : times) var += (t - mean) * (t - mean);
    double sd = times.size() > 1 ? std::sqrt(var / double(times.size() - 1)) : 0.0;
    std::printf("  %-13s %8.1f ms/batch +- %.1f   (%ld forwards/image)\n",
                disentangled ? "disentangled" : "standard", mean, sd,
                rep.model_forwards);
  }
  return 0;
}

int cmd_ablate(const RunConfig& base, const std::string& axis, bool with_eval) {
  struct Variant {
    std::string label;
    RunConfig cfg;
  };
  std::vector<Variant> variants;
  auto push = [&](const std::string& label, RunConfig cfg) {
    cfg.out_dir = base.out_dir + "/" + axis + "_" + label;
    variants.push_back({label, std::move(cfg)});
  };
  if (axis == "mask") {
    for (double r : {0.30, 0.50, 0.70}) {
      RunConfig cfg = base;
      cfg.mask_ratio = r;
      char label[16];
      std::snprintf(label, sizeof label, "%.2f", r);
      push(label, cfg);
    }
  } else if (axis == "predictor") {
    for (PredictorKind k : {PredictorKind::self_only, PredictorKind::cross_only,
                            PredictorKind::cross_then_self, PredictorKind::self_then_cross}) {
      RunConfig cfg = base;
      cfg.predictor = k;
      push(predictor_name(k), cfg);
    }
  } else if (axis == "conditions") {
    for (const char* s : {"LP", "PG", "LPG"}) {
      RunConfig cfg = base;
      set_conditions(cfg, s);
      push(s, cfg);
    }
  } else if (axis == "aggregation") {
    for (AggregationMode m : {AggregationMode::sum, AggregationMode::concat_conv,
                              AggregationMode::mlp}) {
      RunConfig cfg = base;
      cfg.aggregation = m;
      push(aggregation_name(m), cfg);
    }
  } else {
    throw std::invalid_argument(
        "axis must be mask, predictor, conditions, or aggregation");
  }

  std::filesystem::create_directories(base.out_dir);
  std::ofstream csv(base.out_dir + "/ablate_" + axis + ".csv", std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write the ablation summary");
  csv << "axis,value,val_denoise,val_mask,val_total,same_id,cross_id";
  if (with_eval) csv << ",mean_ssim,mean_psnr,toy_fid,id_accuracy";
  csv << "\n";

  for (auto& v : variants) {
    std::cout << "=== " << axis << " = " << v.label << " ===\n";
    Trainer tr(v.cfg);
    tr.run(true);
    TrainLogRow val = tr.validation_row();
    SimilarityRow sim = tr.similarity_now();
    char line[256];
    std::snprintf(line, sizeof line, "%s,%s,%.10g,%.10g,%.10g,%.10g,%.10g",
                  axis.c_str(), v.label.c_str(), val.denoise, val.mask, val.total,
                  sim.mean_same_id, sim.mean_cross_id);
    csv << line;
    if (with_eval) {
      std::vector<std::size_t> recs = tr.corpus.test_indices();
      if (recs.size() > std::size_t(std::max(tr.cfg.val_pairs, 2)))
        recs.resize(std::size_t(std::max(tr.cfg.val_pairs, 2)));
      tr.ema.swap_into_params();
      EvalResult res = evaluate_records(tr.model, tr.frozen, tr.corpus, recs,
                                        tr.cfg.guidance(), tr.ns,
                                        tr.cfg.ddim_steps, tr.cfg.seed);
      tr.ema.swap_into_params();
      std::snprintf(line, sizeof line, ",%.10g,%.10g,%.10g,%.10g", res.mean_ssim,
                    res.mean_psnr, res.toy_fid, res.id_accuracy);
      csv << line;
    }
    csv << "\n";
    csv.flush();
  }
  std::cout << "summary in " << base.out_dir << "/ablate_" << axis << ".csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-view masked diffusion on a procedural toy corpus"};
  app.require_subcommand(1);

  Overrides ov;
  std::optional<std::string> config_path;

  CLI::App* gen = app.add_subcommand("gen-data", "render the toy corpus to disk");
  add_common_flags(gen, ov, config_path);

  CLI::App* train = app.add_subcommand("train", "train a generator");
  add_common_flags(train, ov, config_path);
  std::optional<std::string> resume;
  train->add_option("--resume", resume, "checkpoint to continue from");

  CLI::App* sample = app.add_subcommand("sample", "generate images from a checkpoint");
  std::string ckpt;
  std::optional<std::uint64_t> sample_seed;
  int count = 8;
  std::optional<std::string> sample_out;
  SamplingOverrides sample_so;
  sample->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  sample->add_option("--sample-seed", sample_seed, "seed for the sampling noise");
  sample->add_option("--count", count, "how many test records to render");
  sample->add_option("--out-dir", sample_out, "where to put the PPMs");
  add_sampling_flags(sample, sample_so);

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on a split");
  std::string eval_ckpt, split = "test";
  int max_pairs = 0;
  std::optional<std::uint64_t> eval_seed;
  std::optional<std::string> eval_out;
  SamplingOverrides eval_so;
  eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
  eval->add_option("--split", split, "train or test");
  eval->add_option("--max-pairs", max_pairs, "cap on evaluated pairs, 0 = all");
  eval->add_option("--sample-seed", eval_seed, "seed for the sampling noise");
  eval->add_option("--out-dir", eval_out, "where to put the CSV tables");
  add_sampling_flags(eval, eval_so);

  CLI::App* bench = app.add_subcommand("bench", "parameter counts and sampling speed");
  add_common_flags(bench, ov, config_path);
  int reps = 10, images = 8;
  bool skip_big = false;
  bench->add_option("--reps", reps, "timing repetitions");
  bench->add_option("--images", images, "images per timed batch");
  bench->add_flag("--skip-big", skip_big, "skip the b and l parameter counts");

  CLI::App* ablate = app.add_subcommand("ablate", "train one variant per axis value");
  add_common_flags(ablate, ov, config_path);
  std::string axis = "mask";
  bool with_eval = false;
  ablate->add_option("--axis", axis, "mask|predictor|conditions|aggregation");
  ablate->add_flag("--with-eval", with_eval, "also sample and score each variant");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(effective_config(config_path, ov));
    if (train->parsed()) return cmd_train(config_path, ov, resume);
    if (sample->parsed())
      return cmd_sample(ckpt, sample_seed, count, sample_out, sample_so);
    if (eval->parsed())
      return cmd_eval(eval_ckpt, split, max_pairs, eval_seed, eval_out, eval_so);
    if (bench->parsed())
      return cmd_bench(effective_config(config_path, ov), reps, images, skip_big);
    if (ablate->parsed()) {
      RunConfig cfg = effective_config(config_path, ov);
      echo_config(cfg);
      return cmd_ablate(cfg, axis, with_eval);
    }
  } catch (const std::exception& e) {
    std::cerr << "xmdpt: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
