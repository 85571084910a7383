#include "brnlab/model.hpp"

#include <stdexcept>

namespace brnlab {

using json = nlohmann::json;

ModelConfig ModelConfig::paper(std::size_t input_dim, std::size_t num_classes) {
  ModelConfig c;
  c.backbone.input_dim = input_dim;
  c.backbone.hidden_dim = 256;
  c.backbone.num_levels = 5;
  c.heads.num_classes = num_classes;
  c.input_length = 256;
  return c;
}

ModelConfig ModelConfig::desk(std::size_t input_dim, std::size_t num_classes) {
  ModelConfig c = paper(input_dim, num_classes);
  c.backbone.hidden_dim = 32;
  return c;
}

void ModelConfig::apply_preset(ModelPreset preset) {
  if (preset == ModelPreset::baseline) {
    use_stb = false;
    heads.scale_conv = false;
  } else {
    use_stb = true;
    heads.scale_conv = true;
  }
}

void ModelConfig::apply_ablation(const std::string& name) {
  if (name == "no-scale") {
    stb.disable_scale = true;
  } else if (name == "no-time") {
    stb.disable_time = true;
  } else if (name == "no-selection") {
    stb.disable_selection = true;
  } else if (name == "no-dilation") {
    stb.unified_dilation = true;
  } else if (name == "k3-rates-1234") {
    stb.scale_branches = k3_rates_1234_branches();
    stb.time_branches = k3_rates_1234_branches();
  } else {
    throw std::invalid_argument("unknown ablation '" + name +
                                "' (expected no-scale, no-time, no-selection, no-dilation, "
                                "k3-rates-1234)");
  }
}

void ModelConfig::validate() const {
  backbone.validate();
  heads.validate();
  if (use_stb) stb.validate();
  check_divisible(input_length, backbone.num_levels);
}

ModelPreset parse_preset(const std::string& name) {
  if (name == "baseline") return ModelPreset::baseline;
  if (name == "brn") return ModelPreset::brn;
  throw std::invalid_argument("unknown model preset '" + name + "' (expected baseline or brn)");
}

std::string to_string(ModelPreset preset) {
  return preset == ModelPreset::baseline ? "baseline" : "brn";
}

namespace {

json branches_to_json(const std::vector<Branch>& branches) {
  json arr = json::array();
  for (const auto& b : branches) arr.push_back({{"kernel", b.kernel}, {"dilation", b.dilation}});
  return arr;
}

std::vector<Branch> branches_from_json(const json& arr) {
  std::vector<Branch> out;
  for (const auto& jb : arr) out.push_back({jb.at("kernel").get<std::size_t>(), jb.at("dilation").get<std::size_t>()});
  return out;
}

const char* aggregation_name(ScaleAggregation a) {
  switch (a) {
    case ScaleAggregation::convolution:
      return "convolution";
    case ScaleAggregation::self_attention:
      return "self-attention";
    case ScaleAggregation::merged_kernel:
      return "merged-kernel";
  }
  return "convolution";
}

ScaleAggregation parse_aggregation(const std::string& s) {
  if (s == "convolution") return ScaleAggregation::convolution;
  if (s == "self-attention") return ScaleAggregation::self_attention;
  if (s == "merged-kernel") return ScaleAggregation::merged_kernel;
  throw std::invalid_argument("unknown scale aggregation '" + s + "'");
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json to_json(const ModelConfig& c) {
  return {
      {"backbone",
       {{"kind", c.backbone.kind == BackboneKind::convolution ? "convolution" : "transformer"},
        {"input_dim", c.backbone.input_dim},
        {"hidden_dim", c.backbone.hidden_dim},
        {"num_levels", c.backbone.num_levels},
        {"kernel_size", c.backbone.kernel_size}}},
      {"stb",
       {{"num_blocks", c.stb.num_blocks},
        {"scale_branches", branches_to_json(c.stb.scale_branches)},
        {"time_branches", branches_to_json(c.stb.time_branches)},
        {"pool_kernel", c.stb.pool_kernel},
        {"disable_scale", c.stb.disable_scale},
        {"disable_time", c.stb.disable_time},
        {"disable_selection", c.stb.disable_selection},
        {"unified_dilation", c.stb.unified_dilation},
        {"residual", c.stb.residual},
        {"aggregation", aggregation_name(c.stb.aggregation)}}},
      {"heads",
       {{"num_classes", c.heads.num_classes},
        {"num_layers", c.heads.num_layers},
        {"kernel_size", c.heads.kernel_size},
        {"scale_conv", c.heads.scale_conv},
        {"background_prior", c.heads.background_prior}}},
      {"use_stb", c.use_stb},
      {"input_length", c.input_length},
      {"assignment", c.assignment == AssignmentMode::dynamic_iou ? "dynamic" : "shortest"},
  };
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  if (j.contains("backbone")) {
    const auto& b = j["backbone"];
    if (b.contains("kind")) {
      const auto kind = b["kind"].get<std::string>();
      if (kind == "convolution") {
        c.backbone.kind = BackboneKind::convolution;
      } else if (kind == "transformer") {
        c.backbone.kind = BackboneKind::transformer;
      } else {
        throw std::invalid_argument("unknown backbone kind '" + kind + "'");
      }
    }
    read_opt(b, "input_dim", c.backbone.input_dim);
    read_opt(b, "hidden_dim", c.backbone.hidden_dim);
    read_opt(b, "num_levels", c.backbone.num_levels);
    read_opt(b, "kernel_size", c.backbone.kernel_size);
  }
  if (j.contains("stb")) {
    const auto& s = j["stb"];
    read_opt(s, "num_blocks", c.stb.num_blocks);
    if (s.contains("scale_branches")) c.stb.scale_branches = branches_from_json(s["scale_branches"]);
    if (s.contains("time_branches")) c.stb.time_branches = branches_from_json(s["time_branches"]);
    read_opt(s, "pool_kernel", c.stb.pool_kernel);
    read_opt(s, "disable_scale", c.stb.disable_scale);
    read_opt(s, "disable_time", c.stb.disable_time);
    read_opt(s, "disable_selection", c.stb.disable_selection);
    read_opt(s, "unified_dilation", c.stb.unified_dilation);
    read_opt(s, "residual", c.stb.residual);
    if (s.contains("aggregation")) c.stb.aggregation = parse_aggregation(s["aggregation"].get<std::string>());
  }
  if (j.contains("heads")) {
    const auto& h = j["heads"];
    read_opt(h, "num_classes", c.heads.num_classes);
    read_opt(h, "num_layers", c.heads.num_layers);
    read_opt(h, "kernel_size", c.heads.kernel_size);
    read_opt(h, "scale_conv", c.heads.scale_conv);
    read_opt(h, "background_prior", c.heads.background_prior);
  }
  read_opt(j, "use_stb", c.use_stb);
  read_opt(j, "input_length", c.input_length);
  if (j.contains("assignment")) {
    const auto a = j["assignment"].get<std::string>();
    if (a == "dynamic") {
      c.assignment = AssignmentMode::dynamic_iou;
    } else if (a == "shortest") {
      c.assignment = AssignmentMode::shortest;
    } else {
      throw std::invalid_argument("unknown assignment mode '" + a + "'");
    }
  }
  return c;
}

// --------------------------------------------------------------------- model

template <typename Real>
Model<Real>::Model(const ModelConfig& config, std::uint64_t seed)
    : config_((config.validate(), config)),
      params_(),
      backbone_(config_.backbone, params_),
      stf_(config_.backbone.num_levels, config_.backbone.hidden_dim, config_.backbone.hidden_dim,
           params_),
      blocks_(config_.use_stb ? std::optional<ScaleTimeBlocks<Real>>(std::in_place,
                                                                    config_.backbone.hidden_dim,
                                                                    config_.stb, params_)
                              : std::nullopt),
      heads_(config_.backbone.hidden_dim, config_.heads, params_),
      ranges_(LevelRanges::geometric(config_.backbone.num_levels)) {
  std::mt19937_64 rng(seed);
  backbone_.initialize(rng);
  stf_.initialize(rng);
  if (blocks_) blocks_->initialize(rng);
  heads_.initialize(rng);
}

template <typename Real>
ModelOutputs<Real> Model<Real>::forward(Graph<Real>& g, Var input, bool trace_selection) const {
  ModelOutputs<Real> out;
  out.levels = backbone_.forward(g, input);
  out.stf = stf_.forward(g, out.levels, g.value(input).steps / 2);
  out.features = blocks_ ? blocks_->forward(g, out.stf, trace_selection ? &out.selection : nullptr)
                         : out.stf;
  out.heads = heads_.forward(g, out.features);
  return out;
}

template <typename Real>
ModelOutputs<Real> Model<Real>::forward(Graph<Real>& g, const FeatureSequence& seq,
                                        bool trace_selection) const {
  return forward(g, g.constant(to_tensor<Real>(seq)), trace_selection);
}

template <typename Real>
template <typename Other>
void Model<Real>::copy_parameters_from(const Model<Other>& other) {
  if (other.params().count() != params_.count()) {
    throw ShapeError("copy_parameters_from: architectures differ");
  }
  for (std::size_t i = 0; i < params_.count(); ++i) {
    const auto& src = other.params()[i];
    auto& dst = params_[i];
    if (src.name != dst.name || src.size() != dst.size()) {
      throw ShapeError("copy_parameters_from: parameter " + dst.name + " differs");
    }
    for (std::size_t k = 0; k < src.size(); ++k) dst.values[k] = static_cast<Real>(src.values[k]);
  }
}

FeatureSequence resize_features(const FeatureSequence& seq, std::size_t length) {
  if (seq.length == length) return seq;
  const auto taps = resize_taps(seq.length, length);
  FeatureSequence out;
  out.video_id = seq.video_id;
  out.length = length;
  out.dim = seq.dim;
  out.values.resize(length * seq.dim);
  for (std::size_t j = 0; j < length; ++j) {
    const auto [i, w] = taps[j];
    for (std::size_t c = 0; c < seq.dim; ++c) {
      const double a = seq.at(i, c);
      out.at(j, c) = static_cast<float>(w == 0.0 ? a : a + w * (seq.at(i + 1, c) - a));
    }
  }
  return out;
}

template class Model<float>;
template class Model<double>;
template void Model<float>::copy_parameters_from<double>(const Model<double>&);
template void Model<double>::copy_parameters_from<float>(const Model<float>&);
template void Model<float>::copy_parameters_from<float>(const Model<float>&);
template void Model<double>::copy_parameters_from<double>(const Model<double>&);

}  // namespace brnlab
