#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "brnlab/inference.hpp"
#include "brnlab/metrics.hpp"
#include "brnlab/parallel.hpp"
#include "brnlab/synthgen.hpp"
#include "brnlab/trainer.hpp"
#include "manifest.hpp"
#include "svg.hpp"

namespace brnlab::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string fmt(double v, int precision = 4) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

/// Replaces a plot/report extension so "x.svg", "x.csv" and "x" all name the prefix "x".
fs::path output_prefix(const fs::path& out) {
  const auto ext = out.extension();
  if (ext == ".svg" || ext == ".csv" || ext == ".json" || ext == ".txt") return fs::path(out).replace_extension();
  return out;
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

std::vector<std::string> split_ids(const SplitManifest& split, const std::string& which,
                                   const AnnotationSet& all) {
  if (which == "train") return split.train;
  if (which == "val") return split.val;
  if (which == "all") {
    std::vector<std::string> ids;
    for (const auto& v : all.videos) ids.push_back(v.video_id);
    return ids;
  }
  throw ValidationError("unknown split '" + which + "' (expected train, val or all)");
}

AnnotationSet subset(const AnnotationSet& all, const std::vector<std::string>& ids) {
  AnnotationSet out;
  out.classes = all.classes;
  for (const auto& id : ids) {
    const auto* v = all.find(id);
    if (v == nullptr) throw ValidationError("split lists unknown video '" + id + "'");
    out.videos.push_back(*v);
  }
  return out;
}

/// Loads the ground truth and records which input paths it came from.
AnnotationSet load_truth(const GroundTruthSource& src, std::vector<fs::path>& inputs) {
  if (src.annotations && src.data) throw ValidationError("give either --annotations or --data, not both");
  if (src.annotations) {
    inputs.push_back(*src.annotations);
    return read_annotations(*src.annotations);
  }
  if (src.data) {
    const auto all = read_annotations(*src.data / "annotations.json");
    const auto split = read_split(*src.data / "split.json");
    inputs.push_back(*src.data / "annotations.json");
    inputs.push_back(*src.data / "split.json");
    return subset(all, split_ids(split, src.split, all));
  }
  throw ValidationError("ground truth required: pass --annotations FILE or --data DIR");
}

json truth_config(const GroundTruthSource& src) {
  json j = json::object();
  if (src.annotations) j["annotations"] = src.annotations->string();
  if (src.data) {
    j["data"] = src.data->string();
    j["split"] = src.split;
  }
  return j;
}

RunManifest manifest_for(const std::string& command, const Common& o) {
  RunManifest m;
  m.command = command;
  m.argv = o.argv;
  m.seed = o.seed;
  if (o.config) m.inputs.push_back(*o.config);
  return m;
}

std::optional<double> delta(const std::optional<double>& a, const std::optional<double>& b) {
  if (!a || !b) return std::nullopt;
  return *b - *a;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string opt_text(const std::optional<double>& v, double scale = 1.0, int precision = 2) {
  return v ? fmt(*v * scale, precision) : std::string("-");
}

std::string pad(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : std::string(w - s.size(), ' ') + s;
}

}  // namespace

// ----------------------------------------------------------------------- gen

int cmd_gen(const GenOptions& o) {
  SynthConfig cfg;
  if (o.config) cfg = synth_config_from_json(read_json_file(*o.config));
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  generate_dataset(cfg, o.out);
  auto m = manifest_for("gen", o);
  m.seed = cfg.seed;
  m.config = to_json(cfg);
  m.outputs.push_back(o.out);
  m.write(o.out / "run_manifest.json");
  std::cout << "generated " << cfg.num_videos << " videos in " << o.out.string() << "\n";
  return 0;
}

// --------------------------------------------------------------------- train

int cmd_train(const TrainOptions& o) {
  TrainConfig cfg;
  if (o.config) cfg = train_config_from_json(read_json_file(*o.config));
  if (o.seed) cfg.seed = *o.seed;
  if (o.model) cfg.preset = parse_preset(*o.model);
  if (!o.ablate.empty()) cfg.ablations = o.ablate;
  if (o.epochs) {
    cfg.epochs = *o.epochs;
    std::vector<std::size_t> kept;
    for (auto m : cfg.milestones) {
      if (m < cfg.epochs) kept.push_back(m);
    }
    cfg.milestones = kept;
  }
  cfg.validate();
  const auto dataset = load_dataset(o.data);
  fs::create_directories(o.out);
  write_text_atomic(o.out / "train_config.json", to_json(cfg).dump(2) + "\n");
  train(dataset, cfg, o.out, [&](const EpochLog& e) {
    std::cout << "epoch " << (e.epoch + 1) << "/" << cfg.epochs << "  l_cls " << fmt(e.l_cls, 6) << "  l_reg "
              << fmt(e.l_reg, 6) << "  lr " << e.lr << std::endl;
  });
  auto m = manifest_for("train", o);
  m.seed = cfg.seed;
  m.config = to_json(cfg);
  m.inputs.push_back(o.data);
  m.outputs.push_back(o.out);
  m.write(o.out / "run_manifest.json");
  std::cout << "checkpoint written to " << (o.out / "checkpoint").string() << "\n";
  return 0;
}

// -------------------------------------------------------------------- detect

int cmd_detect(const DetectOptions& o) {
  auto cfg = InferenceConfig::preset(o.preset);
  if (o.config) cfg = inference_config_from_json(read_json_file(*o.config), cfg);
  cfg.validate();
  const auto ckpt = load_checkpoint(o.checkpoint);
  const auto all = read_annotations(o.data / "annotations.json");
  const auto split = read_split(o.data / "split.json");
  const auto ids = split_ids(split, o.split, all);
  std::vector<FeatureSequence> feats;
  for (const auto& id : ids) feats.push_back(read_features(o.data / "features" / (id + ".brnf"), id));
  const auto dets = detect_all(*ckpt.model, feats, cfg, worker_count());
  ensure_parent(o.out);
  write_detections(dets, o.out);

  auto m = manifest_for("detect", o);
  m.config = {{"inference", to_json(cfg)}, {"preset", o.preset}, {"split", o.split}};
  m.inputs.push_back(o.checkpoint);
  m.inputs.push_back(o.data / "annotations.json");
  m.inputs.push_back(o.data / "split.json");
  m.outputs.push_back(o.out);
  m.write(sidecar_manifest(o.out));
  std::size_t n = 0;
  for (const auto& [vid, list] : dets) n += list.size();
  std::cout << "wrote " << n << " detections for " << feats.size() << " videos to " << o.out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------- eval

int cmd_eval(const EvalOptions& o) {
  const auto preset = parse_eval_preset(o.preset);
  RunManifest m = manifest_for("eval", o);
  const auto truth = load_truth(o.truth, m.inputs);
  const auto dets = read_detections(o.detections);
  m.inputs.push_back(o.detections);
  const auto report = evaluate(dets, truth, preset);
  const auto text = to_text(report);
  const auto prefix = output_prefix(o.out);
  const fs::path json_path = prefix.string() + ".json";
  const fs::path text_path = prefix.string() + ".txt";
  ensure_parent(json_path);
  write_text_atomic(json_path, to_json(report).dump(2) + "\n");
  write_text_atomic(text_path, text);
  m.config = {{"preset", o.preset}, {"truth", truth_config(o.truth)}};
  m.outputs = {json_path, text_path};
  m.write(sidecar_manifest(json_path));
  std::cout << text;
  return 0;
}

// ----------------------------------------------------------- diagnose-vbp

int cmd_diagnose_vbp(const DiagnoseOptions& o) {
  const auto preset = parse_eval_preset(o.preset);
  RunManifest m = manifest_for("diagnose-vbp", o);
  const auto truth = load_truth(o.truth, m.inputs);
  const auto base = evaluate(read_detections(o.baseline), truth, preset);
  const auto brn = evaluate(read_detections(o.brn), truth, preset);
  m.inputs.push_back(o.baseline);
  m.inputs.push_back(o.brn);

  json d = json::object();
  d["average_map"] = brn.overall.average - base.overall.average;
  json per = json::array();
  for (std::size_t i = 0; i < base.overall.map.size(); ++i) per.push_back(brn.overall.map[i] - base.overall.map[i]);
  d["map"] = per;
  d["merge_rate"] = opt(delta(base.merge_rate, brn.merge_rate));
  json cov = json::object();
  for (const auto& [k, s] : base.coverage) {
    const auto& t = brn.coverage.at(k);
    cov[k] = {{"map", opt(delta(s.map, t.map))}, {"fnr", opt(delta(s.fnr, t.fnr))}};
  }
  d["coverage"] = cov;
  json dist = json::object();
  for (const auto& [k, s] : base.distance) dist[k] = {{"map", opt(delta(s.map, brn.distance.at(k).map))}};
  d["distance"] = dist;

  std::ostringstream os;
  const std::size_t w = 11;
  os << pad("", 24) << pad("baseline", w) << pad("brn", w) << pad("delta", w) << "\n";
  auto row = [&](const std::string& name, const std::optional<double>& a, const std::optional<double>& b,
                 double scale, int precision) {
    os << pad(name, 24) << pad(opt_text(a, scale, precision), w) << pad(opt_text(b, scale, precision), w)
       << pad(opt_text(delta(a, b), scale, precision), w) << "\n";
  };
  row("average mAP", base.overall.average, brn.overall.average, 1.0, 2);
  row("merge rate", base.merge_rate, brn.merge_rate, 1.0, 4);
  for (auto g : kCoverageGroups) {
    const auto k = to_string(g);
    row("coverage " + k + " mAP", base.coverage.at(k).map, brn.coverage.at(k).map, 1.0, 2);
    row("coverage " + k + " FNR %", base.coverage.at(k).fnr, brn.coverage.at(k).fnr, 100.0, 2);
  }
  for (auto b : kDistanceBuckets) {
    const auto k = to_string(b);
    row("distance " + k + " mAP", base.distance.at(k).map, brn.distance.at(k).map, 1.0, 2);
  }
  os << "neighboring pairs: " << base.neighbor_pairs << "\n";

  const auto prefix = output_prefix(o.out);
  const fs::path json_path = prefix.string() + ".json";
  const fs::path text_path = prefix.string() + ".txt";
  ensure_parent(json_path);
  write_text_atomic(json_path,
                    json{{"baseline", to_json(base)}, {"brn", to_json(brn)}, {"delta", d}}.dump(2) + "\n");
  write_text_atomic(text_path, os.str());
  m.config = {{"preset", o.preset}, {"truth", truth_config(o.truth)}};
  m.outputs = {json_path, text_path};
  m.write(sidecar_manifest(json_path));
  std::cout << os.str();
  return 0;
}

// ---------------------------------------------------------------------- plot

namespace {

struct PlotFiles {
  fs::path csv;
  fs::path svg;
};

PlotFiles plot_files(const fs::path& out) {
  const auto prefix = output_prefix(out);
  PlotFiles f{prefix.string() + ".csv", prefix.string() + ".svg"};
  ensure_parent(f.csv);
  return f;
}

void plot_selection_weights(const PlotOptions& o, RunManifest& m, const PlotFiles& files) {
  if (!o.checkpoint) throw ValidationError("selection-weights needs --checkpoint DIR");
  if (!o.truth.data) throw ValidationError("selection-weights needs --data DIR");
  const auto ckpt = load_checkpoint(*o.checkpoint);
  m.inputs.push_back(*o.checkpoint);
  const auto all = read_annotations(*o.truth.data / "annotations.json");
  const auto split = read_split(*o.truth.data / "split.json");
  const auto ids = split_ids(split, o.truth.split, all);
  const std::string vid = o.video ? *o.video : (ids.empty() ? std::string() : ids.front());
  const auto* ann = all.find(vid);
  if (ann == nullptr) throw ValidationError("unknown video '" + vid + "'");
  const fs::path feat_path = *o.truth.data / "features" / (vid + ".brnf");
  m.inputs.push_back(feat_path);
  m.inputs.push_back(*o.truth.data / "annotations.json");
  const auto seq = resize_features(read_features(feat_path, vid), ckpt.model->config().input_length);

  Graph<float> g;
  const auto out = ckpt.model->forward(g, seq, true);
  if (out.selection.empty()) throw ValidationError("the checkpoint's model has no selection weights to plot");
  // Default: the final scale sub-block, else the last traced one.
  std::string key = o.block.value_or("");
  if (key.empty()) {
    key = out.selection.back().first;
    for (const auto& [k, v] : out.selection) {
      if (k.find(".scale") != std::string::npos) key = k;
    }
  }
  const auto it = std::find_if(out.selection.begin(), out.selection.end(),
                               [&](const auto& e) { return e.first == key; });
  if (it == out.selection.end()) {
    std::string known;
    for (const auto& [k, v] : out.selection) known += " " + k;
    throw ValidationError("unknown block '" + key + "'; available:" + known);
  }
  const auto& w = g.value(it->second);
  const bool is_scale = key.find(".scale") != std::string::npos;
  const auto& stb = ckpt.model->config().stb;
  const auto branches = stb.sub_block(is_scale ? Axis::scale : Axis::time).branches;

  std::ostringstream csv;
  csv << "scale,t,anchor,branch,kernel,dilation,weight\n";
  for (std::size_t s = 0; s < w.scales; ++s) {
    for (std::size_t t = 0; t < w.steps; ++t) {
      for (std::size_t i = 0; i < w.channels; ++i) {
        csv << s + 1 << "," << t << "," << fmt(anchor_time(t, w.steps), 6) << "," << i << ","
            << branches[i].kernel << "," << branches[i].dilation << "," << fmt(w(s, t, i), 6) << "\n";
      }
    }
  }
  write_text_atomic(files.csv, csv.str());

  // One heatmap per branch (rows = scales, columns = time), ground truth strip on top.
  const double cell_w = std::max(2.0, 640.0 / static_cast<double>(w.steps));
  const double cell_h = 14.0;
  const double left = 70.0, top = 50.0, panel_gap = 34.0;
  const double plot_w = cell_w * static_cast<double>(w.steps);
  const double panel_h = cell_h * static_cast<double>(w.scales);
  const double height = top + static_cast<double>(w.channels) * (panel_h + panel_gap) + 40.0;
  svg::Document doc(left + plot_w + 90.0, height);
  doc.text(left, 18, "selection weights, " + key + ", video " + vid, 13);
  for (const auto& inst : ann->instances) {
    doc.rect(left + inst.interval.start * plot_w, 26, inst.interval.length() * plot_w, 10,
             svg::categorical(inst.label), 0.9, all.classes.at(static_cast<std::size_t>(inst.label - 1)));
  }
  doc.text(left - 6, 35, "GT", 10, "end");
  for (std::size_t i = 0; i < w.channels; ++i) {
    const double y0 = top + static_cast<double>(i) * (panel_h + panel_gap);
    doc.text(left, y0 + 12, "branch " + std::to_string(i) + " (k=" + std::to_string(branches[i].kernel) +
                                ", d=" + std::to_string(branches[i].dilation) + ")",
             11);
    for (std::size_t s = 0; s < w.scales; ++s) {
      const double y = y0 + 18 + static_cast<double>(s) * cell_h;
      doc.text(left - 6, y + cell_h - 3, "S" + std::to_string(s + 1), 10, "end");
      for (std::size_t t = 0; t < w.steps; ++t) {
        doc.rect(left + static_cast<double>(t) * cell_w, y, cell_w, cell_h, svg::sequential(w(s, t, i)));
      }
    }
  }
  // color bar
  for (int k = 0; k < 20; ++k) {
    doc.rect(left + plot_w + 30, top + 18 + k * 8.0, 14, 8, svg::sequential(1.0 - k / 19.0));
  }
  doc.text(left + plot_w + 48, top + 26, "1", 10);
  doc.text(left + plot_w + 48, top + 18 + 160, "0", 10);
  write_text_atomic(files.svg, doc.str());
  m.config = {{"kind", o.kind}, {"video", vid}, {"block", key}};
}

void plot_detections_timeline(const PlotOptions& o, RunManifest& m, const PlotFiles& files) {
  if (o.detections.empty()) throw ValidationError("detections-timeline needs at least one --detections FILE");
  const auto truth = load_truth(o.truth, m.inputs);
  std::vector<std::pair<std::string, DetectionSet>> sources;
  for (const auto& p : o.detections) {
    sources.emplace_back(p.stem().string(), read_detections(p));
    m.inputs.push_back(p);
  }
  std::string vid;
  if (o.video) {
    vid = *o.video;
  } else {
    // Default: the first video with a neighboring same-class pair, else the first video.
    const auto pairs = neighbor_pairs(truth);
    vid = !pairs.empty() ? pairs.front().video_id : (truth.videos.empty() ? "" : truth.videos.front().video_id);
  }
  const auto* ann = truth.find(vid);
  if (ann == nullptr) throw ValidationError("unknown video '" + vid + "'");

  std::ostringstream csv;
  csv << "source,rank,start,end,label,score\n";
  for (std::size_t i = 0; i < ann->instances.size(); ++i) {
    const auto& inst = ann->instances[i];
    csv << "ground_truth," << i << "," << fmt(inst.interval.start, 6) << "," << fmt(inst.interval.end, 6) << ","
        << inst.label << ",1\n";
  }
  const double left = 120.0, width = 640.0, row_h = 14.0;
  std::size_t rows = 1;
  for (const auto& [name, set] : sources) {
    const auto it = set.find(vid);
    rows += 1 + (it == set.end() ? 0 : std::min(o.top, it->second.size()));
  }
  svg::Document doc(left + width + 30, 60 + static_cast<double>(rows) * (row_h + 4) + 40);
  doc.text(left, 18, "detections, video " + vid, 13);
  double y = 34;
  doc.text(left - 8, y + 11, "ground truth", 11, "end");
  for (const auto& inst : ann->instances) {
    doc.rect(left + inst.interval.start * width, y, inst.interval.length() * width, row_h,
             svg::categorical(inst.label), 1.0, truth.classes.at(static_cast<std::size_t>(inst.label - 1)));
  }
  y += row_h + 10;
  for (const auto& [name, set] : sources) {
    doc.text(left - 8, y + 11, name, 11, "end");
    y += row_h + 4;
    const auto it = set.find(vid);
    if (it == set.end()) continue;
    for (std::size_t r = 0; r < std::min(o.top, it->second.size()); ++r) {
      const auto& d = it->second[r];
      csv << name << "," << r << "," << fmt(d.interval.start, 6) << "," << fmt(d.interval.end, 6) << "," << d.label
          << "," << fmt(d.score, 6) << "\n";
      doc.rect(left + d.interval.start * width, y, d.interval.length() * width, row_h, svg::categorical(d.label),
               0.25 + 0.75 * d.score, "score " + fmt(d.score, 3));
      doc.text(left - 8, y + 11, fmt(d.score, 2), 9, "end");
      y += row_h + 4;
    }
    y += 6;
  }
  const svg::Color axis{80, 80, 80};
  doc.line(left, y + 4, left + width, y + 4, axis);
  for (int k = 0; k <= 10; ++k) {
    const double x = left + width * k / 10.0;
    doc.line(x, y + 4, x, y + 8, axis);
    doc.text(x, y + 20, fmt(k / 10.0, 1), 9, "middle");
  }
  write_text_atomic(files.csv, csv.str());
  write_text_atomic(files.svg, doc.str());
  m.config = {{"kind", o.kind}, {"video", vid}, {"top", o.top}, {"truth", truth_config(o.truth)}};
}

void plot_loss_curve(const PlotOptions& o, RunManifest& m, const PlotFiles& files) {
  fs::path log_path;
  if (o.log) {
    log_path = *o.log;
  } else if (o.run) {
    log_path = *o.run / "loss.csv";
  } else {
    throw ValidationError("loss-curve needs --log FILE or --run DIR");
  }
  const auto log = read_loss_log(log_path);
  m.inputs.push_back(log_path);
  if (log.empty()) throw ValidationError(log_path.string() + " has no epochs");
  write_text_atomic(files.csv, loss_log_csv(log));

  double ymax = 0.0;
  for (const auto& e : log) ymax = std::max({ymax, e.l_cls, e.l_reg, e.total});
  if (ymax <= 0.0) ymax = 1.0;
  const double left = 60, top = 30, w = 600, h = 300;
  svg::Document doc(left + w + 140, top + h + 50);
  doc.text(left, 18, "training loss", 13);
  const svg::Color axis{80, 80, 80};
  doc.line(left, top + h, left + w, top + h, axis);
  doc.line(left, top, left, top + h, axis);
  const double n = static_cast<double>(std::max<std::size_t>(log.size() - 1, 1));
  auto px = [&](std::size_t i) { return left + w * static_cast<double>(i) / n; };
  auto py = [&](double v) { return top + h - h * v / ymax; };
  for (int k = 0; k <= 4; ++k) {
    const double v = ymax * k / 4.0;
    doc.text(left - 6, py(v) + 4, fmt(v, 3), 9, "end");
  }
  doc.text(left + w / 2, top + h + 34, "epoch", 11, "middle");
  doc.text(left, top + h + 16, "1", 9, "middle");
  doc.text(left + w, top + h + 16, std::to_string(log.back().epoch + 1), 9, "middle");
  const std::vector<std::pair<std::string, double EpochLog::*>> series = {
      {"l_cls", &EpochLog::l_cls}, {"l_reg", &EpochLog::l_reg}, {"total", &EpochLog::total}};
  for (std::size_t s = 0; s < series.size(); ++s) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < log.size(); ++i) pts.emplace_back(px(i), py(log[i].*series[s].second));
    doc.polyline(pts, svg::categorical(static_cast<int>(s)));
    doc.rect(left + w + 20, top + 10 + 18.0 * static_cast<double>(s), 12, 4, svg::categorical(static_cast<int>(s)));
    doc.text(left + w + 38, top + 16 + 18.0 * static_cast<double>(s), series[s].first, 11);
  }
  write_text_atomic(files.svg, doc.str());
  m.config = {{"kind", o.kind}};
}

}  // namespace

int cmd_plot(const PlotOptions& o) {
  RunManifest m = manifest_for("plot", o);
  const auto files = plot_files(o.out);
  if (o.kind == "selection-weights") {
    plot_selection_weights(o, m, files);
  } else if (o.kind == "detections-timeline") {
    plot_detections_timeline(o, m, files);
  } else if (o.kind == "loss-curve") {
    plot_loss_curve(o, m, files);
  } else {
    throw ValidationError("unknown plot kind '" + o.kind + "'");
  }
  m.outputs = {files.csv, files.svg};
  m.write(sidecar_manifest(files.svg));
  std::cout << "wrote " << files.csv.string() << " and " << files.svg.string() << "\n";
  return 0;
}

}  // namespace brnlab::cli
