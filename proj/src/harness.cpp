#include "xmdpt/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "xmdpt/io.hpp"

namespace xmdpt {

namespace {

// Stream tags for Rng::mix so every consumer draws from its own sequence.
constexpr std::uint64_t kStreamModel = 0x6d6f64656c;
constexpr std::uint64_t kStreamTrain = 0x747261696e;
constexpr std::uint64_t kStreamVal = 0x76616c;
constexpr std::uint64_t kStreamValPick = 0x7069636b;
constexpr std::uint64_t kStreamCodec = 0xc0dec;
constexpr std::uint64_t kStreamCodecFit = 0xf17c0dec;
constexpr std::uint64_t kStreamPoseFeat = 0x90cefea7;
constexpr std::uint64_t kStreamGlobFeat = 0x910bfea7;

// Fixed seed for the evaluation featurizer so scores stay comparable across
// runs and checkpoints.
constexpr std::uint64_t kMetricFeatSeed = 0x3147e;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void parse_fail(int line, const std::string& what) {
  throw std::invalid_argument("config line " + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& v, int line, const std::string& key) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    parse_fail(line, key + " is not a number: '" + v + "'");
  }
  if (used != v.size()) parse_fail(line, key + " has trailing characters: '" + v + "'");
  if (!std::isfinite(out)) parse_fail(line, key + " must be finite");
  return out;
}

long parse_long(const std::string& v, int line, const std::string& key) {
  std::size_t used = 0;
  long out = 0;
  try {
    out = std::stol(v, &used);
  } catch (const std::exception&) {
    parse_fail(line, key + " is not an integer: '" + v + "'");
  }
  if (used != v.size()) parse_fail(line, key + " has trailing characters: '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& v, int line, const std::string& key, int base = 10) {
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(v, &used, base);
  } catch (const std::exception&) {
    parse_fail(line, key + " is not an unsigned integer: '" + v + "'");
  }
  if (used != v.size()) parse_fail(line, key + " has trailing characters: '" + v + "'");
  return out;
}

bool known_preset(const std::string& name) {
  return name == "xt" || name == "t" || name == "s" || name == "b" || name == "l";
}

std::string rng_state_text(const std::array<std::uint64_t, 6>& st) {
  std::string out;
  char buf[24];
  for (std::size_t i = 0; i < st.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(st[i]));
    if (i) out += ':';
    out += buf;
  }
  return out;
}

std::array<std::uint64_t, 6> parse_rng_state(const std::string& v, int line) {
  std::array<std::uint64_t, 6> st{};
  std::size_t pos = 0;
  for (std::size_t i = 0; i < st.size(); ++i) {
    std::size_t colon = v.find(':', pos);
    bool last = i + 1 == st.size();
    if (last != (colon == std::string::npos))
      parse_fail(line, "rng state needs exactly 6 words: '" + v + "'");
    std::string word = last ? v.substr(pos) : v.substr(pos, colon - pos);
    st[i] = parse_u64(word, line, "rng", 16);
    pos = colon + 1;
  }
  return st;
}

void apply_key(ParsedConfig& pc, const std::string& section, const std::string& key,
               const std::string& value, int line) {
  RunConfig& cfg = pc.cfg;
  if (section == "model") {
    if (key == "preset") {
      if (!known_preset(value)) parse_fail(line, "unknown preset '" + value + "'");
      cfg.preset = value;
    } else if (key == "patch") {
      cfg.patch = int(parse_long(value, line, key));
    } else if (key == "predictor") {
      try {
        cfg.predictor = predictor_from_name(value);
      } catch (const std::exception& e) {
        parse_fail(line, e.what());
      }
    } else if (key == "aggregation") {
      try {
        cfg.aggregation = aggregation_from_name(value);
      } catch (const std::exception& e) {
        parse_fail(line, e.what());
      }
    } else if (key == "conditions") {
      try {
        set_conditions(cfg, value);
      } catch (const std::exception& e) {
        parse_fail(line, e.what());
      }
    } else {
      parse_fail(line, "unknown key '" + key + "' in [model]");
    }
  } else if (section == "train") {
    if (key == "steps") cfg.steps = parse_long(value, line, key);
    else if (key == "batch") cfg.batch = int(parse_long(value, line, key));
    else if (key == "lr") cfg.lr = parse_double(value, line, key);
    else if (key == "ema_decay") cfg.ema_decay = parse_double(value, line, key);
    else if (key == "mask_ratio") cfg.mask_ratio = parse_double(value, line, key);
    else if (key == "drop_prob") cfg.drop_prob = parse_double(value, line, key);
    else if (key == "checkpoint_every") cfg.checkpoint_every = parse_long(value, line, key);
    else if (key == "log_every") cfg.log_every = parse_long(value, line, key);
    else if (key == "val_every") cfg.val_every = parse_long(value, line, key);
    else if (key == "val_pairs") cfg.val_pairs = int(parse_long(value, line, key));
    else parse_fail(line, "unknown key '" + key + "' in [train]");
  } else if (section == "guidance") {
    if (key == "gamma") cfg.gamma = parse_double(value, line, key);
    else if (key == "alpha") cfg.alpha = parse_double(value, line, key);
    else if (key == "mode") {
      if (value != "standard" && value != "disentangled")
        parse_fail(line, "mode must be standard or disentangled");
      cfg.guidance_mode = value;
    } else if (key == "ddim_steps") cfg.ddim_steps = int(parse_long(value, line, key));
    else parse_fail(line, "unknown key '" + key + "' in [guidance]");
  } else if (section == "schedule") {
    if (key == "timesteps") cfg.timesteps = int(parse_long(value, line, key));
    else if (key == "beta_start") cfg.beta_start = parse_double(value, line, key);
    else if (key == "beta_end") cfg.beta_end = parse_double(value, line, key);
    else parse_fail(line, "unknown key '" + key + "' in [schedule]");
  } else if (section == "data") {
    if (key == "identities") cfg.identities = int(parse_long(value, line, key));
    else if (key == "views") cfg.views = int(parse_long(value, line, key));
    else if (key == "poses") cfg.poses = int(parse_long(value, line, key));
    else if (key == "codec_steps") cfg.codec_steps = parse_long(value, line, key);
    else if (key == "data_dir") cfg.data_dir = value;
    else parse_fail(line, "unknown key '" + key + "' in [data]");
  } else if (section == "run") {
    if (key == "seed") cfg.seed = parse_u64(value, line, key);
    else if (key == "out_dir") cfg.out_dir = value;
    else parse_fail(line, "unknown key '" + key + "' in [run]");
  } else if (section == "state") {
    pc.has_state = true;
    if (key == "step") pc.step = parse_long(value, line, key);
    else if (key == "adam_step") pc.adam_step = parse_long(value, line, key);
    else if (key == "rng") pc.rng_state = parse_rng_state(value, line);
    else parse_fail(line, "unknown key '" + key + "' in [state]");
  } else {
    parse_fail(line, "unknown section [" + section + "]");
  }
}

}  // namespace

ModelConfig RunConfig::model_config() const {
  ModelConfig mc = ModelConfig::from_preset(preset);
  if (patch < 1 || mc.grid % patch != 0)
    throw std::invalid_argument("patch " + std::to_string(patch) +
                                " does not divide the latent grid " +
                                std::to_string(mc.grid));
  mc.patch = patch;
  return mc;
}

ModelOptions RunConfig::model_options() const {
  ModelOptions o;
  o.predictor = predictor;
  o.aggregation = aggregation;
  o.use_local = use_local;
  o.use_pose = use_pose;
  o.use_global = use_global;
  return o;
}

GuidanceParams RunConfig::guidance() const {
  GuidanceParams gp;
  gp.gamma = gamma;
  gp.alpha = alpha;
  gp.drop_prob = drop_prob;
  gp.disentangled = guidance_mode == "disentangled";
  return gp;
}

NoiseSchedule RunConfig::schedule() const {
  return NoiseSchedule::linear(timesteps, beta_start, beta_end);
}

std::string RunConfig::conditions_string() const {
  std::string s;
  if (use_local) s += 'L';
  if (use_pose) s += 'P';
  if (use_global) s += 'G';
  return s;
}

void set_conditions(RunConfig& cfg, const std::string& letters) {
  bool local = false, pose = false, global = false;
  for (char ch : letters) {
    if (ch == 'L' && !local) local = true;
    else if (ch == 'P' && !pose) pose = true;
    else if (ch == 'G' && !global) global = true;
    else throw std::invalid_argument("conditions must be unique letters from LPG, got '" + letters + "'");
  }
  if (!local && !pose && !global)
    throw std::invalid_argument("conditions must keep at least one stream");
  cfg.use_local = local;
  cfg.use_pose = pose;
  cfg.use_global = global;
}

ParsedConfig parse_config_text(const std::string& text) {
  ParsedConfig pc;
  std::istringstream in(text);
  std::string raw, section;
  int no = 0;
  while (std::getline(in, raw)) {
    ++no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') parse_fail(no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "train" && section != "guidance" &&
          section != "schedule" && section != "data" && section != "run" &&
          section != "state")
        parse_fail(no, "unknown section [" + section + "]");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) parse_fail(no, "expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) parse_fail(no, "empty key");
    if (section.empty()) parse_fail(no, "key '" + key + "' outside any section");
    apply_key(pc, section, key, value, no);
  }
  return pc;
}

ParsedConfig load_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "[model]\n"
      << "preset = " << cfg.preset << "\n"
      << "patch = " << cfg.patch << "\n"
      << "predictor = " << predictor_name(cfg.predictor) << "\n"
      << "aggregation = " << aggregation_name(cfg.aggregation) << "\n"
      << "conditions = " << cfg.conditions_string() << "\n"
      << "\n[train]\n"
      << "steps = " << cfg.steps << "\n"
      << "batch = " << cfg.batch << "\n"
      << "lr = " << fmt_double(cfg.lr) << "\n"
      << "ema_decay = " << fmt_double(cfg.ema_decay) << "\n"
      << "mask_ratio = " << fmt_double(cfg.mask_ratio) << "\n"
      << "drop_prob = " << fmt_double(cfg.drop_prob) << "\n"
      << "checkpoint_every = " << cfg.checkpoint_every << "\n"
      << "log_every = " << cfg.log_every << "\n"
      << "val_every = " << cfg.val_every << "\n"
      << "val_pairs = " << cfg.val_pairs << "\n"
      << "\n[guidance]\n"
      << "gamma = " << fmt_double(cfg.gamma) << "\n"
      << "alpha = " << fmt_double(cfg.alpha) << "\n"
      << "mode = " << cfg.guidance_mode << "\n"
      << "ddim_steps = " << cfg.ddim_steps << "\n"
      << "\n[schedule]\n"
      << "timesteps = " << cfg.timesteps << "\n"
      << "beta_start = " << fmt_double(cfg.beta_start) << "\n"
      << "beta_end = " << fmt_double(cfg.beta_end) << "\n"
      << "\n[data]\n"
      << "identities = " << cfg.identities << "\n"
      << "views = " << cfg.views << "\n"
      << "poses = " << cfg.poses << "\n"
      << "codec_steps = " << cfg.codec_steps << "\n"
      << "data_dir = " << cfg.data_dir << "\n"
      << "\n[run]\n"
      << "seed = " << cfg.seed << "\n"
      << "out_dir = " << cfg.out_dir << "\n";
  return out.str();
}

void apply_env_overrides(RunConfig& cfg) {
  const char* seed = std::getenv("RUN_SEED");
  if (!seed) return;
  cfg.seed = parse_u64(seed, 0, "RUN_SEED");
}

// --- frozen stack ------------------------------------------------------------

FrozenStack FrozenStack::build(const Corpus& corpus, const ModelConfig& mc,
                               const ModelOptions& opts, bool fit_codec,
                               long codec_steps) {
  FeaturizerConfig pc;
  pc.canvas = mc.feat_canvas;
  pc.patch = mc.feat_patch;
  pc.width = mc.feat_width;
  FeaturizerConfig gc = pc;
  if (opts.glob_feat_width > 0) gc.width = int(opts.glob_feat_width);

  Rng codec_rng(Rng::mix(corpus.seed, kStreamCodec));
  Rng pose_rng(Rng::mix(corpus.seed, kStreamPoseFeat));
  Rng glob_rng(Rng::mix(corpus.seed, kStreamGlobFeat));
  FrozenStack fs{ToyCodec(codec_rng), ToyFeaturizer(pose_rng, pc),
                 ToyFeaturizer(glob_rng, gc)};
  if (fit_codec) {
    std::vector<const Image*> images;
    for (std::size_t i : corpus.train_indices()) {
      images.push_back(&corpus.source_images[i]);
      images.push_back(&corpus.target_images[i]);
    }
    fs.codec.fit(images, int(codec_steps), Rng::mix(corpus.seed, kStreamCodecFit), 3e-3f);
  }
  fs.codec.set_frozen();
  return fs;
}

void FrozenStack::collect(ParamMap<float>& pm) const {
  codec.collect("codec", pm);
  pose_feat.collect("featpose", pm);
  glob_feat.collect("featglob", pm);
}

std::vector<PairExample> build_examples(const Corpus& corpus,
                                        const FrozenStack& frozen,
                                        const std::vector<std::size_t>& indices) {
  NoGrad<float> ng;
  std::vector<PairExample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const ToyRecord& r = corpus.records[i];
    PairExample ex;
    ex.record = i;
    ex.identity = r.identity;
    ex.view = r.view;
    ex.pose = r.pose;
    ex.y0 = frozen.codec.encode(corpus.target_images[i]);
    ex.cond.source_latent = frozen.codec.encode(corpus.source_images[i]);
    ex.cond.pose_feat = frozen.pose_feat.forward(corpus.pose_maps[i]);
    ex.cond.glob_feat = frozen.glob_feat.forward(corpus.source_images[i]);
    out.push_back(std::move(ex));
  }
  return out;
}

// --- trainer -------------------------------------------------------------------

namespace {

Corpus make_corpus(const RunConfig& cfg) {
  return generate_corpus(cfg.identities, cfg.views, cfg.poses, cfg.seed);
}

GeneratorModel<float> make_model(const RunConfig& cfg) {
  Rng rng(Rng::mix(cfg.seed, kStreamModel));
  return GeneratorModel<float>(rng, cfg.model_config(), cfg.model_options());
}

void check_codec_shape(const ModelConfig& mc, const ToyCodec& codec) {
  if (mc.grid != codec.latent_grid() || mc.channels != codec.latent_channels)
    throw std::invalid_argument(
        "preset '" + mc.preset + "' wants a " + std::to_string(mc.grid) + "x" +
        std::to_string(mc.grid) + "x" + std::to_string(mc.channels) +
        " latent but the codec produces " + std::to_string(codec.latent_grid()) +
        "x" + std::to_string(codec.latent_grid()) + "x" +
        std::to_string(codec.latent_channels));
}

}  // namespace

Trainer::Trainer(const RunConfig& c)
    : cfg(c),
      corpus(make_corpus(c)),
      frozen(FrozenStack::build(corpus, c.model_config(), c.model_options(), true,
                                c.codec_steps)),
      model(make_model(c)),
      opt(model.trainable(), float(c.lr)),
      ema(model.trainable(), c.ema_decay),
      ns(NoiseSchedule::linear(c.timesteps, c.beta_start, c.beta_end)),
      rng(Rng::mix(c.seed, kStreamTrain)) {
  if (cfg.batch < 1) throw std::invalid_argument("batch must be positive");
  check_codec_shape(model.cfg, frozen.codec);
  init_data();
}

Trainer::Trainer(const RunConfig& c, FromFileTag)
    : cfg(c),
      corpus(make_corpus(c)),
      frozen(FrozenStack::build(corpus, c.model_config(), c.model_options(), false,
                                c.codec_steps)),
      model(make_model(c)),
      opt(model.trainable(), float(c.lr)),
      ema(model.trainable(), c.ema_decay),
      ns(NoiseSchedule::linear(c.timesteps, c.beta_start, c.beta_end)),
      rng(0) {
  if (cfg.batch < 1) throw std::invalid_argument("batch must be positive");
  check_codec_shape(model.cfg, frozen.codec);
}

void Trainer::init_data() {
  train_set = build_examples(corpus, frozen, corpus.train_indices());
  std::vector<std::size_t> test = corpus.test_indices();
  if (train_set.empty() || test.empty())
    throw std::invalid_argument("corpus too small for a train/val split");
  std::size_t keep = std::min<std::size_t>(test.size(), std::size_t(std::max(cfg.val_pairs, 1)));
  Rng pick(Rng::mix(cfg.seed, kStreamValPick));
  std::vector<std::size_t> chosen;
  for (std::size_t slot : pick.sample_without_replacement(test.size(), keep))
    chosen.push_back(test[slot]);
  std::sort(chosen.begin(), chosen.end());
  val_set = build_examples(corpus, frozen, chosen);
}

TrainLogRow Trainer::train_step() {
  const auto state = rng.save_state();
  std::vector<std::size_t> picks(std::size_t(cfg.batch));
  for (auto& p : picks) p = std::size_t(rng.next_below(train_set.size()));

  Tape<float> tape;
  Tensor<float> sum;
  TrainLogRow row{step + 1, 0.0, 0.0, 0.0};
  for (std::size_t k = 0; k < picks.size(); ++k) {
    const PairExample& ex = train_set[picks[k]];
    auto lb = pair_loss(model, ex.y0, ex.cond, ns, cfg.mask_ratio, rng, cfg.drop_prob);
    row.denoise += double(lb.denoise.item());
    row.mask += double(lb.mask.item());
    sum = k == 0 ? lb.total : add(sum, lb.total);
  }
  Tensor<float> loss = scale(sum, float(1.0 / cfg.batch));
  row.denoise /= cfg.batch;
  row.mask /= cfg.batch;
  row.total = double(loss.item());
  if (!std::isfinite(row.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << row.step << "; batch records";
    for (std::size_t p : picks) msg << ' ' << train_set[p].record;
    msg << "; rng state before the step " << rng_state_text(state);
    throw std::runtime_error(msg.str());
  }
  tape.backward(loss);
  opt.step();
  ema.update();
  ++step;
  log.push_back(row);
  return row;
}

TrainLogRow Trainer::validation_row() {
  NoGrad<float> ng;
  Rng vr(Rng::mix(cfg.seed, kStreamVal));
  TrainLogRow row{step, 0.0, 0.0, 0.0};
  for (const auto& ex : val_set) {
    auto lb = pair_loss(model, ex.y0, ex.cond, ns, cfg.mask_ratio, vr, 0.0);
    row.denoise += double(lb.denoise.item());
    row.mask += double(lb.mask.item());
    row.total += double(lb.total.item());
  }
  double n = double(val_set.size());
  row.denoise /= n;
  row.mask /= n;
  row.total /= n;
  return row;
}

double Trainer::validation_total() { return validation_row().total; }

SimilarityRow Trainer::similarity_now() {
  NoGrad<float> ng;
  const int views = corpus.views;
  const int poses = corpus.poses;
  // Unseen identities give the honest read; fall back to the whole roster
  // when the test split is a single identity.
  std::vector<int> ids;
  for (int id = 0; id < int(corpus.identities.size()); ++id)
    if (!corpus.records[std::size_t(id) * views * poses].is_train) ids.push_back(id);
  if (ids.size() < 2) {
    ids.clear();
    for (int id = 0; id < int(corpus.identities.size()); ++id) ids.push_back(id);
  }
  auto cond_of = [&](int idx, int view) {
    std::size_t rec = (std::size_t(ids[idx]) * views + view) * poses;
    CondInputs<float> ci;
    ci.source_latent = frozen.codec.encode(corpus.source_images[rec]);
    ci.pose_feat = frozen.pose_feat.forward(corpus.pose_maps[rec]);
    ci.glob_feat = frozen.glob_feat.forward(corpus.source_images[rec]);
    Tensor<float> c = model.cond_vector(ci);
    std::vector<double> out(c.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = double(c.values()[i]);
    return out;
  };
  return similarity_stats(step, cond_of, int(ids.size()), views);
}

void Trainer::run(bool write_artifacts) {
  namespace fs = std::filesystem;
  if (write_artifacts) {
    fs::create_directories(cfg.out_dir);
    std::ofstream f(cfg.out_dir + "/config.txt", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + cfg.out_dir + "/config.txt");
    f << serialize_config(cfg);
  }
  while (step < cfg.steps) {
    TrainLogRow row = train_step();
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.steps)) {
      std::printf("step %ld/%ld  denoise %.5f  mask %.5f  total %.5f\n", row.step,
                  cfg.steps, row.denoise, row.mask, row.total);
      std::fflush(stdout);
    }
    if (cfg.val_every > 0 && (step % cfg.val_every == 0 || step == cfg.steps)) {
      val_log.push_back(validation_row());
      sim_log.push_back(similarity_now());
    }
    if (write_artifacts && cfg.checkpoint_every > 0 &&
        step % cfg.checkpoint_every == 0 && step < cfg.steps) {
      char name[32];
      std::snprintf(name, sizeof name, "/ckpt_%08ld.bin", step);
      save(cfg.out_dir + name);
    }
  }
  if (write_artifacts) {
    save(cfg.out_dir + "/final.bin");
    write_train_csv(cfg.out_dir + "/train_loss.csv", log);
    write_train_csv(cfg.out_dir + "/val_loss.csv", val_log);
    write_similarity_csv(cfg.out_dir + "/similarity.csv", sim_log);
  }
}

void Trainer::save(const std::string& path) const {
  ParamMap<float> pm;
  model.collect("model", pm);
  frozen.collect(pm);
  char idx[16];
  for (std::size_t i = 0; i < opt.params.size(); ++i) {
    std::snprintf(idx, sizeof idx, "%04zu", i);
    pm.add(std::string("adam.m.") + idx,
           Tensor<float>::from(opt.params[i].shape(), opt.m[i]));
    pm.add(std::string("adam.v.") + idx,
           Tensor<float>::from(opt.params[i].shape(), opt.v[i]));
    pm.add(std::string("ema.") + idx,
           Tensor<float>::from(opt.params[i].shape(), ema.shadow[i]));
  }
  std::ostringstream text;
  text << serialize_config(cfg) << "\n[state]\n"
       << "step = " << step << "\n"
       << "adam_step = " << opt.step_count << "\n"
       << "rng = " << rng_state_text(rng.save_state()) << "\n";
  save_tensor_file(path, text.str(), pm);
}

void Trainer::restore(const std::string& path) {
  TensorFile file = load_tensor_file(path);
  ParsedConfig pc = parse_config_text(file.config_text);
  if (!pc.has_state)
    throw std::runtime_error(path + ": not a training checkpoint (no [state] section)");

  ParamMap<float> pm;
  model.collect("model", pm);
  frozen.collect(pm);
  restore_params(file, pm);

  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, t] : file.tensors) by_name[name] = &t;
  auto fetch = [&](const std::string& name, std::vector<float>& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error(path + ": checkpoint is missing " + name);
    if (it->second->size() != dst.size())
      throw std::runtime_error(path + ": size mismatch for " + name);
    dst = it->second->values();
  };
  char idx[16];
  for (std::size_t i = 0; i < opt.params.size(); ++i) {
    std::snprintf(idx, sizeof idx, "%04zu", i);
    fetch(std::string("adam.m.") + idx, opt.m[i]);
    fetch(std::string("adam.v.") + idx, opt.v[i]);
    fetch(std::string("ema.") + idx, ema.shadow[i]);
  }
  opt.step_count = pc.adam_step;
  step = pc.step;
  rng.load_state(pc.rng_state);
  init_data();
}

Trainer Trainer::from_checkpoint(const std::string& path) {
  ParsedConfig pc = parse_config_text(load_tensor_file(path).config_text);
  if (!pc.has_state)
    throw std::runtime_error(path + ": not a training checkpoint (no [state] section)");
  Trainer tr(pc.cfg, FromFileTag{});
  tr.restore(path);
  return tr;
}

// --- sampling and evaluation ---------------------------------------------------

PairSample sample_pair(const GeneratorModel<float>& model, const FrozenStack& frozen,
                       const Image& source_img, const Image& pose_map,
                       const GuidanceParams& gp, const NoiseSchedule& ns,
                       int ddim_steps, Rng& rng) {
  NoGrad<float> ng;
  CondInputs<float> ci;
  ci.source_latent = frozen.codec.encode(source_img);
  ci.pose_feat = frozen.pose_feat.forward(pose_map);
  ci.glob_feat = frozen.glob_feat.forward(source_img);
  Tensor<float> c_full = model.cond_vector(ci);
  Tensor<float> c_un = model.uncond_vector();
  Tensor<float> c_pose = gp.disentangled ? model.pose_cond_vector(ci) : c_full;
  NoisePredictor<float> predict = [&](const Tensor<float>& y_t, int t, CondMode m) {
    const Tensor<float>& c = m == CondMode::full ? c_full
                             : m == CondMode::uncond ? c_un
                                                     : c_pose;
    return model.predict_noise(y_t, c, t);
  };
  PairSample out;
  std::vector<std::size_t> shape{std::size_t(model.cfg.grid),
                                 std::size_t(model.cfg.grid),
                                 std::size_t(model.cfg.channels)};
  out.latent = ddim_sample(predict, shape, ns, ddim_steps, gp, rng, &out.report);
  out.image = frozen.codec.decode(out.latent);
  return out;
}

namespace {

const ToyFeaturizer& metric_featurizer() {
  static const ToyFeaturizer feat = [] {
    Rng rng(kMetricFeatSeed);
    return ToyFeaturizer(rng, FeaturizerConfig::preset('l'));
  }();
  return feat;
}

}  // namespace

EvalResult evaluate_records(const GeneratorModel<float>& model,
                            const FrozenStack& frozen, const Corpus& corpus,
                            const std::vector<std::size_t>& records,
                            const GuidanceParams& gp, const NoiseSchedule& ns,
                            int ddim_steps, std::uint64_t seed,
                            std::vector<Image>* generated) {
  if (records.size() < 2)
    throw std::invalid_argument("evaluation needs at least two records");
  const ToyFeaturizer& feat = metric_featurizer();

  EvalResult out;
  std::vector<std::vector<double>> gen_emb, real_emb;
  std::vector<Image> gen_imgs;
  std::map<int, std::vector<double>> cent_sum;
  std::map<int, int> cent_n;
  for (std::size_t i : records) {
    Rng srng(Rng::mix(seed, i));
    PairSample ps = sample_pair(model, frozen, corpus.source_images[i],
                                corpus.pose_maps[i], gp, ns, ddim_steps, srng);
    const Image& real = corpus.target_images[i];
    PairScore sc;
    sc.record = i;
    sc.actual_identity = corpus.records[i].identity;
    sc.ssim = ssim(image_to_tensor<float>(ps.image), image_to_tensor<float>(real));
    sc.psnr = psnr(image_to_tensor<float>(ps.image), image_to_tensor<float>(real));
    out.mean_ssim += sc.ssim;
    out.mean_psnr += sc.psnr;

    gen_emb.push_back(cls_embedding(feat, ps.image));
    real_emb.push_back(cls_embedding(feat, real));
    auto& sum = cent_sum[sc.actual_identity];
    if (sum.empty()) sum.assign(real_emb.back().size(), 0.0);
    for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += real_emb.back()[d];
    ++cent_n[sc.actual_identity];

    out.rows.push_back(sc);
    gen_imgs.push_back(std::move(ps.image));
  }
  out.mean_ssim /= double(records.size());
  out.mean_psnr /= double(records.size());

  for (auto& [id, sum] : cent_sum)
    for (double& v : sum) v /= double(cent_n[id]);
  int hits = 0;
  for (std::size_t k = 0; k < out.rows.size(); ++k) {
    double best = 0.0;
    int best_id = -1;
    for (const auto& [id, cent] : cent_sum) {
      double d2 = 0.0;
      for (std::size_t d = 0; d < cent.size(); ++d) {
        double diff = gen_emb[k][d] - cent[d];
        d2 += diff * diff;
      }
      if (best_id < 0 || d2 < best) {
        best = d2;
        best_id = id;
      }
    }
    out.rows[k].predicted_identity = best_id;
    if (best_id == out.rows[k].actual_identity) ++hits;
  }
  out.id_accuracy = double(hits) / double(out.rows.size());
  out.toy_fid = frechet_distance(FrechetStats::from_rows(gen_emb),
                                 FrechetStats::from_rows(real_emb));
  if (generated) *generated = std::move(gen_imgs);
  return out;
}

// --- artifacts -------------------------------------------------------------------

void write_corpus(const Corpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ostringstream man;
  char name[48];
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    const ToyRecord& r = corpus.records[i];
    std::snprintf(name, sizeof name, "rec_%05zu", i);
    std::string base = name;
    write_ppm(corpus.source_images[i], dir + "/" + base + "_src.ppm");
    write_ppm(corpus.target_images[i], dir + "/" + base + "_tgt.ppm");
    write_ppm(corpus.pose_maps[i], dir + "/" + base + "_pose.ppm");
    man << i << ' ' << r.identity << ' ' << r.view << ' ' << r.pose << ' '
        << (r.is_train ? "train" : "test") << ' ' << base << "_src.ppm " << base
        << "_tgt.ppm " << base << "_pose.ppm\n";
  }
  std::ofstream f(dir + "/manifest.txt", std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + dir + "/manifest.txt");
  f << man.str();
}

void write_train_csv(const std::string& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "step,denoise,mask,total\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%ld,%.10g,%.10g,%.10g\n", r.step, r.denoise,
                  r.mask, r.total);
    f << line;
  }
}

void write_eval_artifacts(const std::string& dir, const EvalResult& result) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  char line[160];

  std::ofstream s(dir + "/ssim.csv", std::ios::binary);
  s << "record,ssim\n";
  for (const auto& r : result.rows) {
    std::snprintf(line, sizeof line, "%zu,%.10g\n", r.record, r.ssim);
    s << line;
  }
  std::ofstream p(dir + "/psnr.csv", std::ios::binary);
  p << "record,psnr\n";
  for (const auto& r : result.rows) {
    std::snprintf(line, sizeof line, "%zu,%.10g\n", r.record, r.psnr);
    p << line;
  }
  std::ofstream id(dir + "/identity.csv", std::ios::binary);
  id << "record,actual,predicted\n";
  for (const auto& r : result.rows) {
    std::snprintf(line, sizeof line, "%zu,%d,%d\n", r.record, r.actual_identity,
                  r.predicted_identity);
    id << line;
  }
  std::ofstream sum(dir + "/summary.csv", std::ios::binary);
  sum << "mean_ssim,mean_psnr,toy_fid,id_accuracy\n";
  std::snprintf(line, sizeof line, "%.10g,%.10g,%.10g,%.10g\n", result.mean_ssim,
                result.mean_psnr, result.toy_fid, result.id_accuracy);
  sum << line;
}

}  // namespace xmdpt
