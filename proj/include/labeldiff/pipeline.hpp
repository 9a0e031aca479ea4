#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "labeldiff/evaluation.hpp"
#include "labeldiff/sampler.hpp"
#include "labeldiff/synthetic_data.hpp"
#include "labeldiff/training.hpp"

namespace labeldiff {

struct EvalConfig {
  diffusion::GuidanceConfig guidance;
  DecodeStrategy decode;
  std::uint64_t seed = 0;
  int batch_size = 16;
  int grid_divisions = 10000;
  std::optional<double> clip_x0 = 1.0;
};

struct EvalResult {
  std::vector<evaluation::EvalRecord> records;
  evaluation::ArReport report;
};

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

// Samples every phrase of every scene and scores it against its mask. Phrase p
// (in scene order) uses seed derive_seed(config.seed, p); ids are "<stem>_<k>".
EvalResult evaluate_scenes(const Model& model, std::span<const Scene> scenes, const EvalConfig& config,
                           const LabelDecoder* decoder = nullptr, const ProgressFn& progress = {});
EvalResult evaluate_manifest(const Model& model, const SceneManifest& manifest, const EvalConfig& config,
                             const LabelDecoder* decoder = nullptr, const ProgressFn& progress = {});

std::vector<Scene> generate_scenes(std::size_t count, std::uint64_t seed, const SceneSpec& spec = {});

enum class AblationAxis { kImageSize, kDdimSteps, kGuidanceScale };
std::string to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(const std::string& text);

struct AblationRow {
  double value = 0.0;
  evaluation::ArReport report;
};

std::vector<AblationRow> run_ablation(std::span<const double> values,
                                      const std::function<evaluation::ArReport(double)>& run);
// Header "<axis>,overall,things,stuff,singulars,plurals".
std::string ablation_csv(AblationAxis axis, std::span<const AblationRow> rows);

// Static SVG line plot.
std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          std::span<const double> xs, std::span<const double> ys);

// Flat "key = value" text; '#' starts a comment. Duplicate keys are an error.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);
std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin = "config");
std::string format_config(const std::map<std::string, std::string>& values);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace labeldiff
