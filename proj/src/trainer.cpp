#include "brnlab/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "brnlab/parallel.hpp"

namespace brnlab {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::uint64_t z = a ^ (0x9E3779B97F4A7C15ULL * (b + 1)) ^ (0xD1B54A32D192ED03ULL * (c + 1));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kOrderStream = 2;
constexpr std::uint64_t kCropStream = 3;

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

// -------------------------------------------------------------------- config

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] >= epochs) fail("milestones must be < epochs");
    if (i > 0 && milestones[i] <= milestones[i - 1]) fail("milestones must be strictly increasing");
  }
  if (!(decay > 0.0 && decay <= 1.0)) fail("decay must be in (0,1]");
  if (lambda < 0.0) fail("lambda must be non-negative");
  if (alpha < 0.0) fail("alpha must be non-negative");
  if (crop_window < 2) fail("crop_window must be >= 2");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("Adam betas must be in [0,1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (hidden_dim < 1) fail("hidden_dim must be >= 1");
}

ModelConfig TrainConfig::model_config(std::size_t input_dim, std::size_t num_classes) const {
  ModelConfig m = ModelConfig::desk(input_dim, num_classes);
  m.backbone.hidden_dim = hidden_dim;
  m.input_length = crop_window;
  m.apply_preset(preset);
  for (const auto& a : ablations) m.apply_ablation(a);
  m.validate();
  return m;
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"milestones", c.milestones},
          {"decay", c.decay},
          {"lambda", c.lambda},
          {"alpha", c.alpha},
          {"seed", c.seed},
          {"crop_window", c.crop_window},
          {"model", to_string(c.preset)},
          {"ablations", c.ablations},
          {"hidden_dim", c.hidden_dim},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"weight_decay", c.weight_decay},
          {"checkpoint_every", c.checkpoint_every},
          {"threads", c.threads}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "learning_rate", c.learning_rate);
  read_opt(j, "milestones", c.milestones);
  read_opt(j, "decay", c.decay);
  read_opt(j, "lambda", c.lambda);
  read_opt(j, "alpha", c.alpha);
  read_opt(j, "seed", c.seed);
  read_opt(j, "crop_window", c.crop_window);
  if (j.contains("model")) c.preset = parse_preset(j["model"].get<std::string>());
  read_opt(j, "ablations", c.ablations);
  read_opt(j, "hidden_dim", c.hidden_dim);
  read_opt(j, "beta1", c.beta1);
  read_opt(j, "beta2", c.beta2);
  read_opt(j, "adam_eps", c.adam_eps);
  read_opt(j, "weight_decay", c.weight_decay);
  read_opt(j, "checkpoint_every", c.checkpoint_every);
  read_opt(j, "threads", c.threads);
  return c;
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  double lr = config.learning_rate;
  for (std::size_t m : config.milestones) {
    if (epoch >= m) lr *= config.decay;
  }
  return lr;
}

// ---------------------------------------------------------------------- crop

std::pair<FeatureSequence, VideoAnnotation> random_crop(const FeatureSequence& features,
                                                        const VideoAnnotation& annotation, std::size_t window,
                                                        std::mt19937_64& rng) {
  const std::size_t L = features.length;
  if (window < 1 || window > L) {
    throw std::invalid_argument("random_crop: window " + std::to_string(window) + " exceeds length " +
                                std::to_string(L));
  }
  if (window == L) return {features, annotation};
  const auto offset = std::uniform_int_distribution<std::size_t>(0, L - window)(rng);

  FeatureSequence out;
  out.video_id = features.video_id;
  out.length = window;
  out.dim = features.dim;
  out.values.assign(features.values.begin() + static_cast<long>(offset * features.dim),
                    features.values.begin() + static_cast<long>((offset + window) * features.dim));

  VideoAnnotation ann;
  ann.video_id = annotation.video_id;
  ann.duration_seconds = annotation.duration_seconds * static_cast<double>(window) / static_cast<double>(L);
  const double lo = static_cast<double>(offset);
  const double hi = static_cast<double>(offset + window);
  const double W = static_cast<double>(window);
  for (const auto& inst : annotation.instances) {
    const double s = inst.interval.start * static_cast<double>(L);
    const double e = inst.interval.end * static_cast<double>(L);
    const double cs = std::max(s, lo);
    const double ce = std::min(e, hi);
    if (ce <= cs) continue;
    if ((ce - cs) < 0.5 * (e - s)) continue;  // exactly half is kept
    ActionInstance kept = inst;
    kept.interval = {std::clamp((cs - lo) / W, 0.0, 1.0), std::clamp((ce - lo) / W, 0.0, 1.0)};
    if (kept.interval.valid()) ann.instances.push_back(kept);
  }
  return {std::move(out), std::move(ann)};
}

// ---------------------------------------------------------------------- Adam

void Adam::step(ParameterSet<float>& params, const Gradients<float>& grads, double lr) {
  if (m_.size() != params.count()) {
    m_.assign(params.count(), {});
    v_.assign(params.count(), {});
    for (std::size_t i = 0; i < params.count(); ++i) {
      m_[i].assign(params[i].size(), 0.0);
      v_[i].assign(params[i].size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& p = params[i];
    const std::vector<float>* g = i < grads.values.size() && !grads.values[i].empty() ? &grads.values[i] : nullptr;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g ? static_cast<double>((*g)[k]) : 0.0;
      m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * gk;
      v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * gk * gk;
      double update = (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_);
      if (weight_decay_ > 0.0) update += weight_decay_ * static_cast<double>(p.values[k]);
      if (update != 0.0) p.values[k] = static_cast<float>(static_cast<double>(p.values[k]) - lr * update);
    }
  }
}

// ------------------------------------------------------------------ loss log

std::string loss_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,l_cls,l_reg,total,lr\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.l_cls, e.l_reg, e.total, e.lr);
    out += buf;
  }
  return out;
}

std::vector<EpochLog> read_loss_log(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  if (line.rfind("epoch,l_cls,l_reg,total,lr", 0) != 0) throw FormatError(path.string() + ": bad loss log header");
  std::vector<EpochLog> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochLog e;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf", &e.epoch, &e.l_cls, &e.l_reg, &e.total, &e.lr) != 5) {
      throw FormatError(path.string() + ": bad loss log line '" + line + "'");
    }
    out.push_back(e);
  }
  return out;
}

// ------------------------------------------------------------------ training

SampleLoss sample_loss(const Model<float>& model, const FeatureSequence& features,
                       const VideoAnnotation& annotation, const TrainConfig& config, Gradients<float>* grads) {
  const auto input = resize_features(features, model.config().input_length);
  Graph<float> g(model.params().count());
  const auto out = model.forward(g, input);
  const auto targets = assign_targets(annotation, g.value(out.heads.reg_raw), model.level_ranges(),
                                      model.config().assignment);
  Var lc, lr, total;
  {
    Graph<float>::Scope scope(g, "loss");
    lc = focal_loss(g, out.heads.class_logits, targets, config.alpha);
    lr = iou_loss(g, out.heads.reg_raw, targets);
    total = total_loss(g, lc, lr, config.lambda);
  }
  SampleLoss s{g.value(lc).data[0], g.value(lr).data[0], g.value(total).data[0]};
  if (!std::isfinite(s.total)) {
    const auto bad = g.first_non_finite();
    throw TrainingError("non-finite loss on video " + features.video_id + "; first offending tensor: " +
                        bad.value_or("<none>"));
  }
  if (grads != nullptr) {
    g.backward(total);
    *grads = std::move(g.gradients());
  }
  return s;
}

TrainResult train(const Dataset& dataset, const TrainConfig& config, const std::optional<fs::path>& out_dir,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  auto [ann, feats] = select_videos(dataset, dataset.split.train);
  if (feats.empty()) throw ValidationError("training split is empty");
  const std::size_t input_dim = feats.front().dim;
  const auto mc = config.model_config(input_dim, static_cast<std::size_t>(dataset.annotations.num_classes()));

  TrainResult result;
  result.model = std::make_unique<Model<float>>(mc, mix(config.seed, kInitStream));
  auto& model = *result.model;
  Adam adam(config.beta1, config.beta2, config.adam_eps, config.weight_decay);
  std::mt19937_64 order_rng(mix(config.seed, kOrderStream));
  const std::size_t threads = config.threads == 0 ? worker_count() : config.threads;
  const std::size_t n = feats.size();
  const std::size_t P = model.params().count();

  auto snapshot = [&](const fs::path& dir, std::size_t epoch) {
    std::ostringstream rs;
    rs << order_rng;
    save_checkpoint(dir, model, config, epoch, rs.str());
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    const double lr = lr_at(epoch, config);
    EpochLog log{epoch, 0.0, 0.0, 0.0, lr};

    for (std::size_t b0 = 0; b0 < n; b0 += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - b0);
      std::vector<Gradients<float>> grads(count, Gradients<float>(P));
      std::vector<SampleLoss> losses(count);
      parallel_for(count, threads, [&](std::size_t i) {
        const std::size_t v = order[b0 + i];
        std::mt19937_64 crop_rng(mix(config.seed, kCropStream, epoch * n + v));
        const std::size_t window = std::min(config.crop_window, feats[v].length);
        auto [f, a] = random_crop(feats[v], ann.videos[v], window, crop_rng);
        losses[i] = sample_loss(model, f, a, config, &grads[i]);
      });
      Gradients<float> sum(P);
      for (std::size_t i = 0; i < count; ++i) {
        sum.add(grads[i]);
        log.l_cls += losses[i].l_cls;
        log.l_reg += losses[i].l_reg;
        log.total += losses[i].total;
      }
      sum.scale(1.0f / static_cast<float>(count));
      adam.step(model.params(), sum, lr);
    }
    log.l_cls /= static_cast<double>(n);
    log.l_reg /= static_cast<double>(n);
    log.total /= static_cast<double>(n);
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (out_dir) {
      write_text_atomic(*out_dir / "loss.csv", loss_log_csv(result.log));
      if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 && epoch + 1 < config.epochs) {
        snapshot(*out_dir / ("checkpoint_epoch" + std::to_string(epoch + 1)), epoch + 1);
      }
    }
  }
  std::ostringstream rs;
  rs << order_rng;
  result.rng_state = rs.str();
  if (out_dir) snapshot(*out_dir / "checkpoint", config.epochs);
  return result;
}

// ---------------------------------------------------------------- checkpoint

void save_checkpoint(const fs::path& dir, const Model<float>& model, const TrainConfig& config, std::size_t epoch,
                     const std::string& rng_state) {
  std::string blob;
  json arrays = json::array();
  const auto& params = model.params();
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto& p = params[i];
    arrays.push_back({{"name", p.name},
                      {"shape", p.shape},
                      {"dtype", "float32"},
                      {"offset", blob.size()},
                      {"count", p.size()}});
    for (float v : p.values) {
      const auto u = std::bit_cast<std::uint32_t>(v);
      for (int k = 0; k < 4; ++k) blob.push_back(static_cast<char>((u >> (8 * k)) & 0xFFu));
    }
  }
  const json manifest = {{"format", "brnlab-checkpoint"},
                         {"version", 1},
                         {"epoch", epoch},
                         {"rng_state", rng_state},
                         {"model_config", to_json(model.config())},
                         {"train_config", to_json(config)},
                         {"arrays", arrays}};
  fs::create_directories(dir);
  write_text_atomic(dir / "params.bin", blob);
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  const auto mpath = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_text(mpath));
  } catch (const json::parse_error& e) {
    throw FormatError(mpath.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "brnlab-checkpoint" || manifest.value("version", 0) != 1) {
    throw FormatError(mpath.string() + ": not a version 1 checkpoint manifest");
  }
  LoadedCheckpoint out;
  const auto mc = model_config_from_json(manifest.at("model_config"));
  out.train_config = train_config_from_json(manifest.at("train_config"));
  out.epoch = manifest.at("epoch").get<std::size_t>();
  out.rng_state = manifest.at("rng_state").get<std::string>();
  out.model = std::make_unique<Model<float>>(mc, 0);

  const std::string blob = read_text(dir / "params.bin");
  auto& params = out.model->params();
  const auto& arrays = manifest.at("arrays");
  if (arrays.size() != params.count()) {
    throw FormatError(mpath.string() + ": " + std::to_string(arrays.size()) + " arrays, model expects " +
                      std::to_string(params.count()));
  }
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& p = params[i];
    const auto& a = arrays[i];
    const auto name = a.at("name").get<std::string>();
    if (name != p.name || a.at("shape").get<std::vector<std::size_t>>() != p.shape) {
      throw FormatError(mpath.string() + ": array " + std::to_string(i) + " '" + name + "' does not match '" +
                        p.name + "'");
    }
    if (a.at("dtype").get<std::string>() != "float32") throw FormatError(mpath.string() + ": " + name + " is not float32");
    const auto offset = a.at("offset").get<std::size_t>();
    if (offset + 4 * p.size() > blob.size()) {
      throw FormatError((dir / "params.bin").string() + ": truncated at array '" + name + "'");
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) {
        u |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[offset + 4 * k + b])) << (8 * b);
      }
      p.values[k] = std::bit_cast<float>(u);
    }
  }
  return out;
}

// ---------------------------------------------------------------- grad check

std::string GradCheckResult::report(double tolerance) const {
  std::ostringstream os;
  for (const auto& g : groups) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-48s n=%-6zu max|diff|=%.3e rel=%.3e %s\n", g.name.c_str(), g.size,
                  g.max_abs_diff, g.rel_error, g.rel_error < tolerance ? "ok" : "FAIL");
    os << buf;
  }
  return os.str();
}

GradCheckResult grad_check(ParameterSet<double>& params, const std::function<Var(Graph<double>&)>& loss,
                           double step, double floor) {
  GradCheckResult result;
  if (params.count() == 0) return result;
  Graph<double> g0(params.count());
  const Var out = loss(g0);
  g0.backward(out);
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& p = params[i];
    const std::vector<double> analytic = g0.param_grad(p);
    double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double orig = p.values[k];
      p.values[k] = orig + step;
      Graph<double> gp(params.count());
      const double fp = gp.value(loss(gp)).data[0];
      p.values[k] = orig - step;
      Graph<double> gm(params.count());
      const double fm = gm.value(loss(gm)).data[0];
      p.values[k] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      max_diff = std::max(max_diff, std::abs(analytic[k] - numeric));
      max_a = std::max(max_a, std::abs(analytic[k]));
      max_n = std::max(max_n, std::abs(numeric));
    }
    const double rel = max_diff / std::max({max_a, max_n, floor});
    result.groups.push_back({p.name, p.size(), max_diff, rel});
    result.max_rel_error = std::max(result.max_rel_error, rel);
  }
  return result;
}

// ---------------------------------------------------------------- experiments

std::pair<AnnotationSet, std::vector<FeatureSequence>> select_videos(const Dataset& dataset,
                                                                     const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < dataset.annotations.videos.size(); ++i) {
    index[dataset.annotations.videos[i].video_id] = i;
  }
  std::pair<AnnotationSet, std::vector<FeatureSequence>> out;
  out.first.classes = dataset.annotations.classes;
  for (const auto& id : ids) {
    const auto it = index.find(id);
    if (it == index.end() || it->second >= dataset.features.size()) {
      throw ValidationError("split references unknown video '" + id + "'");
    }
    out.first.videos.push_back(dataset.annotations.videos[it->second]);
    out.second.push_back(dataset.features[it->second]);
  }
  return out;
}

ExperimentResult run_experiment(const Dataset& dataset, const TrainConfig& config, EvalPreset preset) {
  ExperimentResult r;
  r.training = train(dataset, config);
  const auto [ann, feats] = select_videos(dataset, dataset.split.val);
  const auto icfg = preset == EvalPreset::anet ? InferenceConfig::anet() : InferenceConfig::thumos();
  const std::size_t threads = config.threads == 0 ? worker_count() : config.threads;
  r.detections = detect_all(*r.training.model, feats, icfg, threads);
  r.report = evaluate(r.detections, ann, preset);
  return r;
}

}  // namespace brnlab
