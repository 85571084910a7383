#include "brnlab/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace brnlab {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Stream tags keep the prototype, assignment, split and per-video RNGs apart.
constexpr std::uint64_t kPrototypeStream = 0x70726f746fULL;
constexpr std::uint64_t kAssignStream = 0x6173736967ULL;
constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double envelope(double u, double ramp) {
  if (ramp <= 0.0) return 1.0;
  if (u < ramp) return 0.5 * (1.0 - std::cos(std::numbers::pi * u / ramp));
  if (u > 1.0 - ramp) return 0.5 * (1.0 - std::cos(std::numbers::pi * (1.0 - u) / ramp));
  return 1.0;
}

struct Group {
  double length = 0.0;
  std::vector<ActionInstance> members;  // intervals relative to the group start
};

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw GenerationError("synth config: " + msg); };
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (num_videos < 1) fail("num_videos must be >= 1");
  if (feature_dim < 1) fail("feature_dim must be >= 1");
  if (sequence_length < 2) fail("sequence_length must be >= 2");
  if (!(duration_seconds > 0.0)) fail("duration_seconds must be positive");
  if (!(0.0 < min_action_length && min_action_length < max_action_length && max_action_length <= 1.0)) {
    fail("need 0 < min_action_length < max_action_length <= 1");
  }
  if (!(0.0 < pair_min_length && pair_min_length <= pair_max_length)) {
    fail("need 0 < pair_min_length <= pair_max_length");
  }
  if (min_gap < 0.0 || max_gap < min_gap) fail("need 0 <= min_gap <= max_gap");
  if (min_separation < 0.0) fail("min_separation must be non-negative");
  if (vbp_pair_fraction < 0.0 || vbp_pair_fraction > 1.0) fail("vbp_pair_fraction must be in [0,1]");
  if (max_regular_instances < 1) fail("max_regular_instances must be >= 1");
  if (noise_std < 0.0) fail("noise_std must be non-negative");
  if (ramp_fraction < 0.0 || ramp_fraction > 0.5) fail("ramp_fraction must be in [0, 0.5]");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail("train_fraction must be in (0,1)");
  if (min_action_length + 2.0 * min_separation > 1.0) {
    fail("min_action_length plus separations does not fit in one video");
  }
  if (vbp_pair_fraction > 0.0 && 2.0 * pair_max_length + max_gap + 2.0 * min_separation > 1.0) {
    fail("a short pair with its gap and separations does not fit in one video");
  }
  // Samples per instance must cover at least one frame.
  if (min_action_length * sequence_length < 1.0 || pair_min_length * sequence_length < 1.0) {
    fail("minimum action length is shorter than one frame");
  }
}

int SynthConfig::num_vbp_videos() const {
  return static_cast<int>(std::lround(vbp_pair_fraction * num_videos));
}

json to_json(const SynthConfig& c) {
  return {{"num_classes", c.num_classes},
          {"num_videos", c.num_videos},
          {"feature_dim", c.feature_dim},
          {"sequence_length", c.sequence_length},
          {"duration_seconds", c.duration_seconds},
          {"min_action_length", c.min_action_length},
          {"max_action_length", c.max_action_length},
          {"max_regular_instances", c.max_regular_instances},
          {"min_separation", c.min_separation},
          {"pair_min_length", c.pair_min_length},
          {"pair_max_length", c.pair_max_length},
          {"min_gap", c.min_gap},
          {"max_gap", c.max_gap},
          {"vbp_pair_fraction", c.vbp_pair_fraction},
          {"amplitude", c.amplitude},
          {"noise_std", c.noise_std},
          {"ramp_fraction", c.ramp_fraction},
          {"train_fraction", c.train_fraction},
          {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  auto opt = [&j](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).get<std::remove_reference_t<decltype(out)>>();
  };
  opt("num_classes", c.num_classes);
  opt("num_videos", c.num_videos);
  opt("feature_dim", c.feature_dim);
  opt("sequence_length", c.sequence_length);
  opt("duration_seconds", c.duration_seconds);
  opt("min_action_length", c.min_action_length);
  opt("max_action_length", c.max_action_length);
  opt("max_regular_instances", c.max_regular_instances);
  opt("min_separation", c.min_separation);
  opt("pair_min_length", c.pair_min_length);
  opt("pair_max_length", c.pair_max_length);
  opt("min_gap", c.min_gap);
  opt("max_gap", c.max_gap);
  opt("vbp_pair_fraction", c.vbp_pair_fraction);
  opt("amplitude", c.amplitude);
  opt("noise_std", c.noise_std);
  opt("ramp_fraction", c.ramp_fraction);
  opt("train_fraction", c.train_fraction);
  opt("seed", c.seed);
  return c;
}

std::vector<std::vector<float>> make_class_prototypes(int num_classes, int feature_dim,
                                                      std::uint64_t seed) {
  if (num_classes < 1 || feature_dim < 1) {
    throw GenerationError("prototypes need num_classes >= 1 and feature_dim >= 1");
  }
  std::mt19937_64 rng(mix_seed(seed, kPrototypeStream));
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto D = static_cast<std::size_t>(feature_dim);
  std::vector<std::vector<double>> basis;
  std::vector<std::vector<float>> out;
  for (int k = 0; k < num_classes; ++k) {
    std::vector<double> v(D);
    double norm = 0.0;
    // Orthogonalize against earlier prototypes while the dimension allows it.
    do {
      for (auto& x : v) x = normal(rng);
      if (basis.size() < D) {
        for (const auto& b : basis) {
          const double d = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
          for (std::size_t i = 0; i < D; ++i) v[i] -= d * b[i];
        }
      }
      norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    } while (norm < 1e-6);
    for (auto& x : v) x /= norm;
    basis.push_back(v);
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

std::mt19937_64 video_rng(std::uint64_t seed, std::uint64_t index) {
  return std::mt19937_64(mix_seed(seed, 1000 + index));
}

std::string video_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "video_%04d", index);
  return buf;
}

std::vector<bool> vbp_assignment(const SynthConfig& config) {
  std::vector<int> order(static_cast<std::size_t>(config.num_videos));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(config.seed, kAssignStream));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> flags(order.size(), false);
  for (int i = 0; i < config.num_vbp_videos(); ++i) flags[static_cast<std::size_t>(order[i])] = true;
  return flags;
}

GeneratedVideo generate_video(const SynthConfig& config,
                              const std::vector<std::vector<float>>& prototypes, int index,
                              bool vbp, std::mt19937_64& rng) {
  config.validate();
  if (static_cast<int>(prototypes.size()) != config.num_classes) {
    throw GenerationError("prototype count does not match num_classes");
  }
  std::uniform_int_distribution<int> pick_class(1, config.num_classes);
  std::vector<Group> groups;

  if (vbp) {
    Group pair;
    const int label = pick_class(rng);
    const double a = uniform(rng, config.pair_min_length, config.pair_max_length);
    const double gap = uniform(rng, config.min_gap, config.max_gap);
    const double b = uniform(rng, config.pair_min_length, config.pair_max_length);
    pair.members.push_back({{0.0, a}, label});
    pair.members.push_back({{a + gap, a + gap + b}, label});
    pair.length = a + gap + b;
    groups.push_back(pair);
  }
  const int min_regular = vbp ? 0 : 1;
  const int regular =
      std::uniform_int_distribution<int>(min_regular, config.max_regular_instances)(rng);
  const double log_lo = std::log(config.min_action_length);
  const double log_hi = std::log(config.max_action_length);
  for (int i = 0; i < regular; ++i) {
    const double len = std::exp(uniform(rng, log_lo, log_hi));
    Group g;
    g.members.push_back({{0.0, len}, pick_class(rng)});
    g.length = len;
    groups.push_back(g);
  }

  auto required = [&] {
    double total = config.min_separation * static_cast<double>(groups.size() + 1);
    for (const auto& g : groups) total += g.length;
    return total;
  };
  // Drop trailing regular instances until everything fits; a lone instance is shortened.
  while (required() > 1.0 && groups.size() > 1) groups.pop_back();
  if (required() > 1.0) {
    auto& only = groups.front();
    const double len = 1.0 - 2.0 * config.min_separation;
    if (only.members.size() != 1 || len < config.min_action_length) {
      throw GenerationError("video " + std::to_string(index) + " cannot fit its instances");
    }
    only.members[0].interval.end = len;
    only.length = len;
  }

  std::shuffle(groups.begin(), groups.end(), rng);
  const double slack = 1.0 - required();
  std::vector<double> share(groups.size() + 1);
  std::exponential_distribution<double> expo(1.0);
  for (auto& s : share) s = expo(rng);
  const double share_sum = std::accumulate(share.begin(), share.end(), 0.0);

  VideoAnnotation ann;
  ann.video_id = video_name(index);
  ann.duration_seconds = config.duration_seconds;
  double cursor = 0.0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    cursor += config.min_separation + slack * share[gi] / share_sum;
    for (const auto& m : groups[gi].members) {
      ActionInstance inst = m;
      inst.interval.start = std::clamp(cursor + m.interval.start, 0.0, 1.0);
      inst.interval.end = std::clamp(cursor + m.interval.end, 0.0, 1.0);
      ann.instances.push_back(inst);
    }
    cursor += groups[gi].length;
  }
  std::sort(ann.instances.begin(), ann.instances.end(),
            [](const ActionInstance& a, const ActionInstance& b) {
              return a.interval.start < b.interval.start;
            });

  FeatureSequence seq;
  seq.video_id = ann.video_id;
  seq.length = static_cast<std::size_t>(config.sequence_length);
  seq.dim = static_cast<std::size_t>(config.feature_dim);
  seq.values.resize(seq.length * seq.dim);
  std::normal_distribution<double> noise(0.0, config.noise_std);
  for (auto& v : seq.values) v = static_cast<float>(config.noise_std > 0.0 ? noise(rng) : 0.0);
  const double L = static_cast<double>(seq.length);
  for (const auto& inst : ann.instances) {
    const auto& proto = prototypes[static_cast<std::size_t>(inst.label - 1)];
    for (std::size_t t = 0; t < seq.length; ++t) {
      const double center = (static_cast<double>(t) + 0.5) / L;
      if (center < inst.interval.start || center > inst.interval.end) continue;
      const double u = (center - inst.interval.start) / inst.interval.length();
      const double env = config.amplitude * envelope(u, config.ramp_fraction);
      for (std::size_t c = 0; c < seq.dim; ++c) {
        seq.at(t, c) += static_cast<float>(env * proto[c]);
      }
    }
  }
  return {std::move(seq), std::move(ann)};
}

json to_json(const SplitManifest& split) { return {{"train", split.train}, {"val", split.val}}; }

SplitManifest read_split(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!j.contains("train") || !j.contains("val")) {
    throw FormatError(path.string() + ": split needs 'train' and 'val'");
  }
  return {j["train"].get<std::vector<std::string>>(), j["val"].get<std::vector<std::string>>()};
}

Dataset make_dataset(const SynthConfig& config) {
  config.validate();
  const auto prototypes = make_class_prototypes(config.num_classes, config.feature_dim, config.seed);
  const auto vbp = vbp_assignment(config);
  Dataset ds;
  for (int k = 1; k <= config.num_classes; ++k) ds.annotations.classes.push_back("action_" + std::to_string(k));
  for (int i = 0; i < config.num_videos; ++i) {
    auto rng = video_rng(config.seed, static_cast<std::uint64_t>(i));
    auto video = generate_video(config, prototypes, i, vbp[static_cast<std::size_t>(i)], rng);
    ds.features.push_back(std::move(video.features));
    ds.annotations.videos.push_back(std::move(video.annotation));
  }
  std::vector<std::string> ids;
  for (const auto& v : ds.annotations.videos) ids.push_back(v.video_id);
  std::mt19937_64 rng(mix_seed(config.seed, kSplitStream));
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::lround(config.train_fraction * config.num_videos));
  ds.split.train.assign(ids.begin(), ids.begin() + static_cast<long>(n_train));
  ds.split.val.assign(ids.begin() + static_cast<long>(n_train), ids.end());
  std::sort(ds.split.train.begin(), ds.split.train.end());
  std::sort(ds.split.val.begin(), ds.split.val.end());
  return ds;
}

void generate_dataset(const SynthConfig& config, const fs::path& out_dir) {
  const Dataset ds = make_dataset(config);
  fs::create_directories(out_dir / "features");
  for (const auto& f : ds.features) write_features(f, out_dir / "features" / (f.video_id + ".brnf"));
  write_annotations(ds.annotations, out_dir / "annotations.json");
  write_text_atomic(out_dir / "split.json", to_json(ds.split).dump(2) + "\n");
  write_text_atomic(out_dir / "synth_config.json", to_json(config).dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.annotations = read_annotations(dir / "annotations.json");
  for (const auto& v : ds.annotations.videos) {
    const auto path = dir / "features" / (v.video_id + ".brnf");
    ds.features.push_back(read_features(path, v.video_id));
  }
  ds.split = read_split(dir / "split.json");
  return ds;
}

}  // namespace brnlab
