#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "xmdpt/canet.hpp"
#include "xmdpt/diffusion.hpp"
#include "xmdpt/metrics.hpp"
#include "xmdpt/model.hpp"
#include "xmdpt/optim.hpp"
#include "xmdpt/toyworld.hpp"

// Run plumbing: config files, the frozen preprocessing stack, the training
// loop with EMA and checkpointing, the sampling pipeline, and evaluation.

namespace xmdpt {

struct RunConfig {
  // [model]
  std::string preset = "t";
  int patch = 2;
  PredictorKind predictor = PredictorKind::self_then_cross;
  AggregationMode aggregation = AggregationMode::mlp;
  bool use_local = true, use_pose = true, use_global = true;

  // [train]
  long steps = 10000;
  int batch = 8;
  double lr = 1e-4;
  double ema_decay = 0.9999;
  double mask_ratio = 0.30;
  double drop_prob = 0.10;
  long checkpoint_every = 2000;
  long log_every = 25;
  long val_every = 500;
  int val_pairs = 16;

  // [guidance]
  double gamma = 2.0;
  double alpha = 1.0;
  std::string guidance_mode = "standard";  // standard | disentangled
  int ddim_steps = 50;

  // [schedule]
  int timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;

  // [data]
  int identities = 12;
  int views = 4;
  int poses = 4;
  long codec_steps = 4000;
  std::string data_dir = "data";

  // [run]
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";

  ModelConfig model_config() const;
  ModelOptions model_options() const;
  GuidanceParams guidance() const;
  NoiseSchedule schedule() const;
  std::string conditions_string() const;
};

// "LP" / "PG" / "LPG": which condition streams stay active.
void set_conditions(RunConfig& cfg, const std::string& letters);

// Flat [section] key=value text, parsed strictly: unknown sections or keys
// are errors. An optional [state] section carries checkpoint progress.
struct ParsedConfig {
  RunConfig cfg;
  bool has_state = false;
  long step = 0;
  long adam_step = 0;
  std::array<std::uint64_t, 6> rng_state{};
};

ParsedConfig parse_config_text(const std::string& text);
ParsedConfig load_config_file(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

// RUN_SEED in the environment overrides the config seed.
void apply_env_overrides(RunConfig& cfg);

// The frozen preprocessing stack: a codec fitted on the train split and one
// featurizer per conditioned stream, all derived from the corpus seed.
struct FrozenStack {
  ToyCodec codec;
  ToyFeaturizer pose_feat, glob_feat;

  static FrozenStack build(const Corpus& corpus, const ModelConfig& mc,
                           const ModelOptions& opts, bool fit_codec = true,
                           long codec_steps = 4000);
  void collect(ParamMap<float>& pm) const;
};

// One training pair with all frozen-stage outputs precomputed.
struct PairExample {
  std::size_t record = 0;
  int identity = 0, view = 0, pose = 0;
  Tensor<float> y0;  // target latent
  CondInputs<float> cond;
};

std::vector<PairExample> build_examples(const Corpus& corpus,
                                        const FrozenStack& frozen,
                                        const std::vector<std::size_t>& indices);

struct TrainLogRow {
  long step = 0;
  double denoise = 0.0, mask = 0.0, total = 0.0;
};

struct Trainer {
  RunConfig cfg;
  Corpus corpus;
  FrozenStack frozen;
  GeneratorModel<float> model;
  Adam<float> opt;
  Ema<float> ema;
  NoiseSchedule ns;
  Rng rng;
  long step = 0;
  std::vector<PairExample> train_set, val_set;
  std::vector<TrainLogRow> log, val_log;
  std::vector<SimilarityRow> sim_log;

  explicit Trainer(const RunConfig& cfg);
  static Trainer from_checkpoint(const std::string& path);

  // One optimizer step over a freshly drawn batch; throws on non-finite loss
  // with the offending step and batch in the message.
  TrainLogRow train_step();

  // Full loop with periodic validation, similarity logging, and checkpoints;
  // writes CSVs and the effective config under cfg.out_dir when requested.
  void run(bool write_artifacts = true);

  // Mean losses over the validation pairs with draws fixed by the config
  // seed, so runs that differ only in a model knob stay comparable.
  TrainLogRow validation_row();
  double validation_total();
  SimilarityRow similarity_now();

  void save(const std::string& path) const;

 private:
  struct FromFileTag {};
  Trainer(const RunConfig& cfg, FromFileTag);
  void init_data();
  void restore(const std::string& path);
};

struct PairSample {
  Image image;
  Tensor<float> latent;
  SampleReport report;
};

// Full conditional generation for one (source image, target pose) pair using
// whatever weights the model currently holds.
PairSample sample_pair(const GeneratorModel<float>& model, const FrozenStack& frozen,
                       const Image& source_img, const Image& pose_map,
                       const GuidanceParams& gp, const NoiseSchedule& ns,
                       int ddim_steps, Rng& rng);

struct PairScore {
  std::size_t record = 0;
  double ssim = 0.0, psnr = 0.0;
  int actual_identity = 0, predicted_identity = 0;
};

struct EvalResult {
  std::vector<PairScore> rows;
  double mean_ssim = 0.0, mean_psnr = 0.0, toy_fid = 0.0, id_accuracy = 0.0;
};

// Generates every listed record and scores it against the ground-truth
// target. Identity classification is nearest centroid over the real target
// embeddings of the evaluated identities; toy-FID compares generated and real
// embedding statistics in the fixed metric featurizer space.
EvalResult evaluate_records(const GeneratorModel<float>& model,
                            const FrozenStack& frozen, const Corpus& corpus,
                            const std::vector<std::size_t>& records,
                            const GuidanceParams& gp, const NoiseSchedule& ns,
                            int ddim_steps, std::uint64_t seed,
                            std::vector<Image>* generated = nullptr);

// PPM corpus dump plus a manifest (one line per record); byte-stable per seed.
void write_corpus(const Corpus& corpus, const std::string& dir);

void write_train_csv(const std::string& path, const std::vector<TrainLogRow>& rows);
// One CSV per metric (ssim, psnr, identity, toyfid) under dir.
void write_eval_artifacts(const std::string& dir, const EvalResult& result);

}  // namespace xmdpt
