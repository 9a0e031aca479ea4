#include "labeldiff/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "labeldiff/errors.hpp"

namespace labeldiff {

namespace {

struct PendingPhrase {
  std::string id;
  const BinaryMask* mask;
  ThingStuff thing_stuff;
  Number number;
};

// Accumulates requests across scenes and flushes them in sampler batches.
class BatchEvaluator {
 public:
  BatchEvaluator(const Model& model, const EvalConfig& config, const LabelDecoder* decoder)
      : model_(model), config_(config) {
    options_.clip_x0 = config.clip_x0;
    options_.decoder = decoder;
  }

  void add_scene(Scene scene, const std::string& stem) {
    scenes_.push_back(std::make_unique<Scene>(std::move(scene)));
    const Scene& s = *scenes_.back();
    for (std::size_t k = 0; k < s.phrases.size(); ++k) {
      const auto& p = s.phrases[k];
      SampleRequest req;
      req.image = &s.image;
      req.phrase = p.text;
      req.guidance = config_.guidance;
      req.decode = config_.decode;
      req.seed = derive_seed(config_.seed, counter_++);
      requests_.push_back(std::move(req));
      pending_.push_back({stem + "_" + std::to_string(k), &p.mask, p.thing_stuff, p.number});
      if (static_cast<int>(requests_.size()) >= config_.batch_size) flush();
    }
  }

  void flush() {
    if (requests_.empty()) return;
    const auto results = sample_batch(model_, requests_, options_);
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& p = pending_[i];
      records_.push_back({p.id, evaluation::iou(results[i].mask, *p.mask), p.thing_stuff, p.number});
    }
    requests_.clear();
    pending_.clear();
    // The current scene may still have phrases to queue.
    if (scenes_.size() > 1) scenes_.erase(scenes_.begin(), scenes_.end() - 1);
  }

  std::vector<evaluation::EvalRecord>& records() { return records_; }

 private:
  const Model& model_;
  EvalConfig config_;
  SamplerOptions options_;
  std::vector<std::unique_ptr<Scene>> scenes_;
  std::vector<SampleRequest> requests_;
  std::vector<PendingPhrase> pending_;
  std::vector<evaluation::EvalRecord> records_;
  std::uint64_t counter_ = 0;
};

std::string index_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04zu", i);
  return buf;
}

EvalResult finish(std::vector<evaluation::EvalRecord> records, const EvalConfig& config) {
  if (records.empty()) throw DataError("evaluation set contains no phrases");
  const auto grid = evaluation::ThresholdGrid::uniform(config.grid_divisions);
  EvalResult out;
  out.report = evaluation::subcategory_report(records, grid);
  out.records = std::move(records);
  return out;
}

}  // namespace

EvalResult evaluate_scenes(const Model& model, std::span<const Scene> scenes, const EvalConfig& config,
                           const LabelDecoder* decoder, const ProgressFn& progress) {
  if (config.batch_size < 1) throw ParameterError("evaluation batch size must be >= 1");
  BatchEvaluator eval(model, config, decoder);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    eval.add_scene(scenes[i], index_stem(i));
    if (progress) progress(i + 1, scenes.size());
  }
  eval.flush();
  return finish(std::move(eval.records()), config);
}

EvalResult evaluate_manifest(const Model& model, const SceneManifest& manifest, const EvalConfig& config,
                             const LabelDecoder* decoder, const ProgressFn& progress) {
  if (config.batch_size < 1) throw ParameterError("evaluation batch size must be >= 1");
  if (manifest.entries.empty()) throw DataError("evaluation split is empty");
  BatchEvaluator eval(model, config, decoder);
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    eval.add_scene(load_scene(manifest, manifest.entries[i]), manifest.entries[i].stem());
    if (progress) progress(i + 1, manifest.entries.size());
  }
  eval.flush();
  return finish(std::move(eval.records()), config);
}

std::vector<Scene> generate_scenes(std::size_t count, std::uint64_t seed, const SceneSpec& spec) {
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) scenes.push_back(generate_scene(derive_seed(seed, i), spec));
  return scenes;
}

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::kImageSize:
      return "image_size";
    case AblationAxis::kDdimSteps:
      return "ddim_steps";
    case AblationAxis::kGuidanceScale:
      return "guidance_scale";
  }
  return "?";
}

AblationAxis parse_ablation_axis(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  for (auto axis : {AblationAxis::kImageSize, AblationAxis::kDdimSteps, AblationAxis::kGuidanceScale}) {
    if (t == to_string(axis)) return axis;
  }
  throw ParameterError("unknown ablation axis '" + text + "' (expected image_size, ddim_steps or guidance_scale)");
}

std::vector<AblationRow> run_ablation(std::span<const double> values,
                                      const std::function<evaluation::ArReport(double)>& run) {
  if (values.empty()) throw ParameterError("ablation needs at least one axis value");
  std::vector<AblationRow> rows;
  for (double v : values) rows.push_back({v, run(v)});
  return rows;
}

std::string ablation_csv(AblationAxis axis, std::span<const AblationRow> rows) {
  std::string out = to_string(axis) + "," + evaluation::summary_csv_header();
  for (const auto& r : rows) {
    std::ostringstream v;
    v << r.value;
    out += v.str() + "," + evaluation::summary_csv_row(r.report);
  }
  return out;
}

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.empty()) throw ParameterError("plot needs matching, nonempty series");
  constexpr double kW = 480, kH = 320, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
  auto [xmin_it, xmax_it] = std::minmax_element(xs.begin(), xs.end());
  double xmin = *xmin_it, xmax = *xmax_it;
  if (xmax == xmin) {
    xmin -= 1.0;
    xmax += 1.0;
  }
  const double ymin = 0.0, ymax = 1.0;
  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * (kW - kLeft - kRight); };
  auto py = [&](double y) { return kH - kBottom - (std::clamp(y, ymin, ymax) - ymin) / (ymax - ymin) * (kH - kTop - kBottom); };

  std::vector<std::size_t> order(xs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });

  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  s << "<line x1=\"" << kLeft << "\" y1=\"" << py(ymin) << "\" x2=\"" << kW - kRight << "\" y2=\"" << py(ymin)
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << kLeft << "\" y1=\"" << py(ymin) << "\" x2=\"" << kLeft << "\" y2=\"" << py(ymax)
    << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = k / 4.0;
    s << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << y
      << "</text>\n";
  }
  for (double x : xs) {
    std::ostringstream label;
    label << x;
    s << "<text x=\"" << px(x) << "\" y=\"" << py(ymin) + 16 << "\" text-anchor=\"middle\" font-size=\"10\">"
      << label.str() << "</text>\n";
  }
  s << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label
    << "</text>\n";
  s << "<text x=\"14\" y=\"" << kH / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
    << kH / 2 << ")\">" << y_label << "</text>\n";
  s << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i : order) s << px(xs[i]) << "," << py(ys[i]) << " ";
  s << "\"/>\n";
  for (std::size_t i : order) {
    s << "<circle cx=\"" << px(xs[i]) << "\" cy=\"" << py(ys[i]) << "\" r=\"3\" fill=\"steelblue\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> values;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ParameterError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParameterError(where + ": empty key");
    if (!values.emplace(key, trim(line.substr(eq + 1))).second) throw ParameterError(where + ": duplicate key '" + key + "'");
  }
  return values;
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot read config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

std::string format_config(const std::map<std::string, std::string>& values) {
  std::string out;
  for (const auto& [k, v] : values) out += k + " = " + v + "\n";
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

}  // namespace labeldiff
