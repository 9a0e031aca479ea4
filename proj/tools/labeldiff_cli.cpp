#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "labeldiff/errors.hpp"
#include "labeldiff/pipeline.hpp"

namespace fs = std::filesystem;
using namespace labeldiff;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape:
    case ErrorKind::kParameter:
    case ErrorKind::kBatch:
      return 1;
    case ErrorKind::kData:
    case ErrorKind::kCheckpoint:
    case ErrorKind::kGeneration:
      return 2;
    case ErrorKind::kNumeric:
    case ErrorKind::kModel:
      return 3;
  }
  return 1;
}

// Shortest text that reads back to the same double.
std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Fills options not given on the command line from a key = value file.
void apply_config_file(CLI::App& cmd, const std::string& path) {
  if (path.empty()) return;
  for (const auto& [key, value] : read_config_file(path)) {
    std::string name = key;
    for (char& c : name) c = c == '_' ? '-' : c;
    CLI::Option* opt = cmd.get_option_no_throw("--" + name);
    if (!opt || name == "config") throw ParameterError(path + ": unknown key '" + key + "'");
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

void require_dir(const std::string& path, const std::string& what) {
  if (!fs::is_directory(path)) throw DataError(what + " '" + path + "' does not exist");
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw DataError(what + " '" + path + "' does not exist");
}

void make_output_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec || !fs::is_directory(path)) throw DataError("cannot create output directory '" + path + "'");
  const fs::path probe = fs::path(path) / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw DataError("output directory '" + path + "' is not writable");
  }
  fs::remove(probe, ec);
}

struct ModelOptions {
  ModelConfig config;
  std::string schedule = "linear";

  void add(CLI::App& cmd) {
    cmd.add_option("--base-width", config.denoiser.base_width, "U-Net base channel width")->capture_default_str();
    cmd.add_option("--channel-mults", config.denoiser.channel_mults, "Per-level width multipliers")->delimiter(',');
    cmd.add_option("--heads", config.denoiser.heads)->capture_default_str();
    cmd.add_option("--injection-levels", config.denoiser.injection_levels)->delimiter(',');
    cmd.add_option("--cross-attention-levels", config.denoiser.cross_attention_levels)->delimiter(',');
    cmd.add_option("--time-embed-dim", config.denoiser.time_embed_dim)->capture_default_str();
    cmd.add_option("--groups", config.denoiser.groups)->capture_default_str();
    cmd.add_option("--encoder-widths", config.encoder.widths)->delimiter(',');
    cmd.add_option("--text-dim", config.text.text_dim)->capture_default_str();
    cmd.add_option("--adapter-tokens", config.text.adapter_tokens)->capture_default_str();
    cmd.add_option("--schedule", schedule, "linear or cosine")->capture_default_str();
    cmd.add_option("--total-steps", config.schedule.total_steps, "Diffusion steps T")->capture_default_str();
    cmd.add_option("--beta-start", config.schedule.beta_start)->capture_default_str();
    cmd.add_option("--beta-end", config.schedule.beta_end)->capture_default_str();
  }

  ModelConfig resolve(int image_size) {
    config.schedule.kind = diffusion::parse_schedule_kind(schedule);
    config.image_size = image_size;
    config.validate();
    return config;
  }
};

struct TrainOptions {
  TrainConfig config;
  std::optional<std::int64_t> max_steps;
  int decoder_epochs = 1;

  void add(CLI::App& cmd) {
    cmd.add_option("--lr", config.learning_rate, "Learning rate")->capture_default_str();
    cmd.add_option("--batch", config.batch_size, "Batch size")->capture_default_str();
    cmd.add_option("--epochs", config.epochs)->capture_default_str();
    cmd.add_option("--p-drop", config.p_drop, "Conditional dropout probability")->capture_default_str();
    cmd.add_option("--train-seed", config.seed)->capture_default_str();
    cmd.add_option("--beta1", config.beta1)->capture_default_str();
    cmd.add_option("--beta2", config.beta2)->capture_default_str();
    cmd.add_option("--adam-eps", config.epsilon)->capture_default_str();
    cmd.add_option("--log-every", config.log_every)->capture_default_str();
    cmd.add_option("--max-steps", max_steps, "Stop after this many steps in this invocation");
    cmd.add_option("--decoder-epochs", decoder_epochs, "Label-decoder epochs after training (0 = none)")
        ->capture_default_str();
  }

  void echo(std::map<std::string, std::string>& out) const {
    out["lr"] = num(config.learning_rate);
    out["batch"] = std::to_string(config.batch_size);
    out["epochs"] = std::to_string(config.epochs);
    out["p_drop"] = num(config.p_drop);
    out["train_seed"] = std::to_string(config.seed);
    out["beta1"] = num(config.beta1);
    out["beta2"] = num(config.beta2);
    out["adam_eps"] = num(config.epsilon);
    out["log_every"] = std::to_string(config.log_every);
    out["max_steps"] = max_steps ? std::to_string(*max_steps) : "";
    out["decoder_epochs"] = std::to_string(decoder_epochs);
  }
};

struct SamplingOptions {
  double scale = 7.5;
  int steps = 50;
  std::string sampler = "ddim";
  std::string decode = "bilinear_cfg";
  double threshold = 0.0;
  double clip = 1.0;
  std::uint64_t seed = 0;

  void add(CLI::App& cmd) {
    cmd.add_option("--guidance-scale", scale, "Classifier-free guidance scale w (1 = off)")->capture_default_str();
    cmd.add_option("--ddim-steps", steps)->capture_default_str();
    cmd.add_option("--sampler", sampler, "ddim or ddpm")->capture_default_str();
    cmd.add_option("--decode", decode, "bilinear_cfg, nearest or learned_decoder")->capture_default_str();
    cmd.add_option("--threshold", threshold, "Mask threshold in [-1, 1]")->capture_default_str();
    cmd.add_option("--clip", clip, "Clamp x0 estimates to [-clip, clip] (0 = off)")->capture_default_str();
    cmd.add_option("--seed", seed)->capture_default_str();
  }

  diffusion::GuidanceConfig guidance() const {
    return {scale, diffusion::parse_sampler_kind(sampler), steps};
  }
  DecodeStrategy strategy() const {
    DecodeStrategy s{parse_decode_kind(decode), threshold};
    s.validate();
    return s;
  }
  std::optional<double> clip_x0() const { return clip > 0.0 ? std::optional<double>(clip) : std::nullopt; }

  void echo(std::map<std::string, std::string>& out) const {
    out["guidance_scale"] = num(scale);
    out["ddim_steps"] = std::to_string(steps);
    out["sampler"] = sampler;
    out["decode"] = decode;
    out["threshold"] = num(threshold);
    out["clip"] = num(clip);
    out["seed"] = std::to_string(seed);
  }
};

void echo_model(const ModelConfig& config, std::map<std::string, std::string>& out) {
  for (const auto& [k, v] : config.to_map()) out[k] = v;
}

std::vector<BinaryMask> collect_masks(const SceneManifest& manifest) {
  std::vector<BinaryMask> masks;
  SceneStream stream(manifest);
  while (auto s = stream.next()) {
    for (auto& p : s->phrases) masks.push_back(std::move(p.mask));
  }
  return masks;
}

void fit_decoder(TrainState& state, std::span<const BinaryMask> masks, int epochs, std::uint64_t seed) {
  if (epochs <= 0 || masks.empty()) return;
  state.decoder.emplace(derive_seed(seed, 77));
  LabelAutoencoderConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = derive_seed(seed, 78);
  const auto report = train_label_autoencoder(*state.decoder, masks, cfg);
  std::fprintf(stderr, "label decoder: loss %.4f -> %.4f, reconstruction IoU %.4f\n", report.initial_loss,
               report.final_loss, report.reconstruction_iou);
}

// Trains on `data` from `state`, appending rows to the loss CSV.
void run_training(TrainState& state, const TrainingSet& data, const TrainOptions& opts, const fs::path& loss_csv,
                  bool append) {
  std::ofstream csv(loss_csv, append ? std::ios::app : std::ios::trunc);
  if (!csv) throw DataError("cannot write '" + loss_csv.string() + "'");
  if (!append || fs::file_size(loss_csv) == 0) write_loss_csv_header(csv);
  TrainHooks hooks;
  hooks.max_steps = opts.max_steps;
  const std::int64_t total = steps_per_epoch(data.examples.size(), opts.config.batch_size) * opts.config.epochs;
  hooks.on_log = [&](const LossRecord& r) {
    write_loss_csv_row(csv, r);
    csv.flush();
    std::fprintf(stderr, "step %lld/%lld loss %.5f (%.1fs)\n", static_cast<long long>(r.step),
                 static_cast<long long>(total), r.loss, r.wall_ms / 1000.0);
  };
  train(state, data, opts.config, hooks);
}

void write_eval_outputs(const fs::path& out, const EvalResult& result) {
  write_text_file(out / "per_phrase.csv", evaluation::per_phrase_csv(result.records));
  write_text_file(out / "summary.csv",
                  evaluation::summary_csv_header() + evaluation::summary_csv_row(result.report));
}

ProgressFn stderr_progress(const std::string& label) {
  return [label](std::size_t done, std::size_t total) {
    if (done == total || done % 20 == 0) {
      std::fprintf(stderr, "%s: %zu/%zu scenes\n", label.c_str(), done, total);
    }
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Label-space diffusion for phrase grounding on synthetic scenes");
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic scene dataset");
  std::string gen_out, gen_config;
  std::size_t gen_count = 100;
  std::uint64_t gen_seed = 0;
  double gen_test_frac = 0.0;
  SceneSpec spec;
  gen->add_option("--config", gen_config, "key = value config file");
  gen->add_option("--out", gen_out, "Dataset directory")->required();
  gen->add_option("--count", gen_count, "Number of scenes")->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--image-size", spec.image_size)->capture_default_str();
  gen->add_option("--min-groups", spec.min_groups)->capture_default_str();
  gen->add_option("--max-groups", spec.max_groups)->capture_default_str();
  gen->add_option("--plural-prob", spec.plural_probability)->capture_default_str();
  gen->add_option("--test-frac", gen_test_frac, "Also write train.jsonl/test.jsonl splits")->capture_default_str();

  // train
  auto* trn = app.add_subcommand("train", "Train the denoiser, encoder and text conditioning");
  std::string trn_data, trn_manifest = "manifest.jsonl", trn_out, trn_ckpt, trn_config;
  bool trn_resume = false;
  ModelOptions trn_model;
  TrainOptions trn_opts;
  trn->add_option("--config", trn_config, "key = value config file");
  trn->add_option("--data", trn_data, "Dataset directory")->required();
  trn->add_option("--manifest", trn_manifest, "Manifest file inside the dataset")->capture_default_str();
  trn->add_option("--out", trn_out, "Output directory (loss.csv, resolved_config.txt)")->required();
  trn->add_option("--checkpoint", trn_ckpt, "Checkpoint path (default <out>/checkpoint.bin)");
  trn->add_flag("--resume", trn_resume, "Continue from the checkpoint");
  trn_model.add(*trn);
  trn_opts.add(*trn);

  // sample
  auto* smp = app.add_subcommand("sample", "Generate a mask for one image and phrase");
  std::string smp_ckpt, smp_image, smp_phrase, smp_out, smp_config;
  SamplingOptions smp_opts;
  smp->add_option("--config", smp_config, "key = value config file");
  smp->add_option("--checkpoint", smp_ckpt)->required();
  smp->add_option("--image", smp_image, "RGB PNG")->required();
  smp->add_option("--phrase", smp_phrase)->required();
  smp->add_option("--out", smp_out, "Output mask PNG")->required();
  smp_opts.add(*smp);

  // eval
  auto* evl = app.add_subcommand("eval", "Evaluate average recall on a dataset split");
  std::string evl_ckpt, evl_data, evl_manifest = "manifest.jsonl", evl_out, evl_config;
  int evl_batch = 16, evl_divisions = 10000;
  SamplingOptions evl_opts;
  evl->add_option("--config", evl_config, "key = value config file");
  evl->add_option("--checkpoint", evl_ckpt)->required();
  evl->add_option("--data", evl_data, "Dataset directory")->required();
  evl->add_option("--manifest", evl_manifest)->capture_default_str();
  evl->add_option("--out", evl_out, "Output directory")->required();
  evl->add_option("--batch-size", evl_batch)->capture_default_str();
  evl->add_option("--grid-divisions", evl_divisions, "Thresholds k/D for k = 1..D-1")->capture_default_str();
  evl_opts.add(*evl);

  // ablate
  auto* abl = app.add_subcommand("ablate", "Sweep one axis and report average recall");
  std::string abl_axis, abl_out, abl_ckpt, abl_data, abl_manifest = "manifest.jsonl", abl_config;
  std::vector<double> abl_values;
  std::size_t abl_train_scenes = 2000, abl_test_scenes = 200;
  std::uint64_t abl_data_seed = 0;
  int abl_batch = 16, abl_divisions = 10000;
  SamplingOptions abl_opts;
  ModelOptions abl_model;
  TrainOptions abl_train;
  abl->add_option("--config", abl_config, "key = value config file");
  abl->add_option("--axis", abl_axis, "image_size, ddim_steps or guidance_scale")->required();
  abl->add_option("--values", abl_values, "Comma-separated axis values")->delimiter(',')->required();
  abl->add_option("--out", abl_out, "Output directory")->required();
  abl->add_option("--checkpoint", abl_ckpt, "Trained checkpoint (ddim_steps / guidance_scale axes)");
  abl->add_option("--data", abl_data, "Evaluation dataset (ddim_steps / guidance_scale axes)");
  abl->add_option("--manifest", abl_manifest)->capture_default_str();
  abl->add_option("--train-scenes", abl_train_scenes, "Scenes generated per image size")->capture_default_str();
  abl->add_option("--test-scenes", abl_test_scenes)->capture_default_str();
  abl->add_option("--data-seed", abl_data_seed)->capture_default_str();
  abl->add_option("--batch-size", abl_batch)->capture_default_str();
  abl->add_option("--grid-divisions", abl_divisions)->capture_default_str();
  abl_opts.add(*abl);
  abl_model.add(*abl);
  abl_train.add(*abl);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 1;
  }

  try {
    if (gen->parsed()) {
      apply_config_file(*gen, gen_config);
      spec.validate();
      if (gen_count == 0) throw ParameterError("--count must be >= 1");
      ManifestWriter writer(gen_out);
      for (std::size_t i = 0; i < gen_count; ++i) writer.add(generate_scene(derive_seed(gen_seed, i), spec));
      writer.finish();
      if (gen_test_frac > 0.0) {
        auto [train_split, test_split] = split_dataset(writer.manifest(), 1.0 - gen_test_frac, gen_seed);
        write_manifest_index(train_split, fs::path(gen_out) / "train.jsonl");
        write_manifest_index(test_split, fs::path(gen_out) / "test.jsonl");
      }
      std::map<std::string, std::string> echo{{"out", gen_out},
                                              {"count", std::to_string(gen_count)},
                                              {"seed", std::to_string(gen_seed)},
                                              {"image_size", std::to_string(spec.image_size)},
                                              {"min_groups", std::to_string(spec.min_groups)},
                                              {"max_groups", std::to_string(spec.max_groups)},
                                              {"plural_prob", num(spec.plural_probability)},
                                              {"test_frac", num(gen_test_frac)}};
      write_text_file(fs::path(gen_out) / "resolved_config.txt", format_config(echo));
      std::fprintf(stderr, "wrote %zu scenes to %s\n", gen_count, gen_out.c_str());
    } else if (trn->parsed()) {
      apply_config_file(*trn, trn_config);
      require_dir(trn_data, "dataset directory");
      make_output_dir(trn_out);
      if (trn_ckpt.empty()) trn_ckpt = (fs::path(trn_out) / "checkpoint.bin").string();
      if (trn_resume) require_file(trn_ckpt, "checkpoint");
      trn_opts.config.validate();
      const SceneManifest manifest = read_manifest(trn_data, trn_manifest);
      if (manifest.entries.empty()) throw DataError("training manifest has no scenes");
      const int image_size = load_scene(manifest, manifest.entries.front()).image.height;
      std::optional<TrainState> state;
      if (trn_resume) {
        state.emplace(load_checkpoint(trn_ckpt));
      } else {
        state.emplace(trn_model.resolve(image_size), trn_opts.config.seed);
      }
      const TrainingSet data = TrainingSet::from_manifest(manifest, state->model.text().vocabulary());
      std::map<std::string, std::string> echo{{"data", trn_data},
                                              {"manifest", trn_manifest},
                                              {"out", trn_out},
                                              {"checkpoint", trn_ckpt},
                                              {"resume", trn_resume ? "true" : "false"}};
      echo_model(state->model.config(), echo);
      trn_opts.echo(echo);
      write_text_file(fs::path(trn_out) / "resolved_config.txt", format_config(echo));
      std::fprintf(stderr, "training on %zu phrases from %zu scenes, %zu parameters\n", data.examples.size(),
                   manifest.entries.size(), state->model.parameters().scalar_count());
      run_training(*state, data, trn_opts, fs::path(trn_out) / "loss.csv", trn_resume);
      const std::int64_t total = steps_per_epoch(data.examples.size(), trn_opts.config.batch_size) *
                                 trn_opts.config.epochs;
      if (state->step >= total && !state->decoder) {
        const auto masks = collect_masks(manifest);
        fit_decoder(*state, masks, trn_opts.decoder_epochs, trn_opts.config.seed);
      }
      save_checkpoint(*state, trn_ckpt);
      std::fprintf(stderr, "checkpoint at step %lld written to %s\n", static_cast<long long>(state->step),
                   trn_ckpt.c_str());
    } else if (smp->parsed()) {
      apply_config_file(*smp, smp_config);
      require_file(smp_ckpt, "checkpoint");
      require_file(smp_image, "image");
      const TrainState state = load_checkpoint(smp_ckpt);
      const RgbImage image = read_rgb_png(smp_image);
      SampleRequest req{&image, smp_phrase, smp_opts.guidance(), smp_opts.strategy(), smp_opts.seed};
      SamplerOptions options;
      options.clip_x0 = smp_opts.clip_x0();
      options.decoder = state.decoder ? &*state.decoder : nullptr;
      const auto result = sample_mask(state.model, req, options);
      write_png(smp_out, result.mask);
      std::map<std::string, std::string> echo{{"checkpoint", smp_ckpt}, {"image", smp_image}, {"phrase", smp_phrase}};
      smp_opts.echo(echo);
      write_text_file(smp_out + ".txt", format_config(echo));
    } else if (evl->parsed()) {
      apply_config_file(*evl, evl_config);
      require_file(evl_ckpt, "checkpoint");
      require_dir(evl_data, "dataset directory");
      make_output_dir(evl_out);
      const TrainState state = load_checkpoint(evl_ckpt);
      const SceneManifest manifest = read_manifest(evl_data, evl_manifest);
      const EvalConfig cfg{evl_opts.guidance(), evl_opts.strategy(), evl_opts.seed, evl_batch, evl_divisions,
                           evl_opts.clip_x0()};
      std::map<std::string, std::string> echo{{"checkpoint", evl_ckpt},
                                              {"data", evl_data},
                                              {"manifest", evl_manifest},
                                              {"out", evl_out},
                                              {"batch_size", std::to_string(evl_batch)},
                                              {"grid_divisions", std::to_string(evl_divisions)}};
      evl_opts.echo(echo);
      write_text_file(fs::path(evl_out) / "resolved_config.txt", format_config(echo));
      const auto result = evaluate_manifest(state.model, manifest, cfg, state.decoder ? &*state.decoder : nullptr,
                                            stderr_progress("eval"));
      write_eval_outputs(evl_out, result);
      std::printf("%s%s", evaluation::summary_csv_header().c_str(),
                  evaluation::summary_csv_row(result.report).c_str());
    } else if (abl->parsed()) {
      apply_config_file(*abl, abl_config);
      const AblationAxis axis = parse_ablation_axis(abl_axis);
      make_output_dir(abl_out);
      std::map<std::string, std::string> echo{{"axis", to_string(axis)},
                                              {"out", abl_out},
                                              {"batch_size", std::to_string(abl_batch)},
                                              {"grid_divisions", std::to_string(abl_divisions)}};
      std::string values;
      for (double v : abl_values) values += (values.empty() ? "" : ",") + num(v);
      echo["values"] = values;
      abl_opts.echo(echo);
      EvalConfig base{abl_opts.guidance(), abl_opts.strategy(), abl_opts.seed, abl_batch, abl_divisions,
                      abl_opts.clip_x0()};
      std::function<evaluation::ArReport(double)> run;
      std::optional<TrainState> state;
      std::optional<SceneManifest> manifest;
      if (axis == AblationAxis::kImageSize) {
        echo["train_scenes"] = std::to_string(abl_train_scenes);
        echo["test_scenes"] = std::to_string(abl_test_scenes);
        echo["data_seed"] = std::to_string(abl_data_seed);
        abl_train.echo(echo);
        abl_train.config.validate();
        run = [&](double value) {
          const int size = static_cast<int>(value);
          if (size != value) throw ParameterError("image size must be an integer");
          SceneSpec s;
          s.image_size = size;
          const auto train_scenes = generate_scenes(abl_train_scenes, derive_seed(abl_data_seed, 1), s);
          const auto test_scenes = generate_scenes(abl_test_scenes, derive_seed(abl_data_seed, 2), s);
          TrainState st(abl_model.resolve(size), abl_train.config.seed);
          const auto data = TrainingSet::from_scenes(train_scenes, st.model.text().vocabulary());
          const fs::path dir = fs::path(abl_out) / ("size_" + std::to_string(size));
          make_output_dir(dir.string());
          run_training(st, data, abl_train, dir / "loss.csv", false);
          save_checkpoint(st, dir / "checkpoint.bin");
          const auto result = evaluate_scenes(st.model, test_scenes, base, nullptr, stderr_progress("eval"));
          write_eval_outputs(dir, result);
          return result.report;
        };
      } else {
        if (abl_ckpt.empty() || abl_data.empty()) {
          throw ParameterError("--checkpoint and --data are required for axis " + to_string(axis));
        }
        require_file(abl_ckpt, "checkpoint");
        require_dir(abl_data, "dataset directory");
        echo["checkpoint"] = abl_ckpt;
        echo["data"] = abl_data;
        echo["manifest"] = abl_manifest;
        state.emplace(load_checkpoint(abl_ckpt));
        manifest.emplace(read_manifest(abl_data, abl_manifest));
        run = [&](double value) {
          EvalConfig cfg = base;
          if (axis == AblationAxis::kDdimSteps) {
            cfg.guidance.ddim_steps = static_cast<int>(value);
            if (cfg.guidance.ddim_steps != value) throw ParameterError("DDIM steps must be an integer");
          } else {
            cfg.guidance.scale = value;
          }
          return evaluate_manifest(state->model, *manifest, cfg, state->decoder ? &*state->decoder : nullptr,
                                   stderr_progress(to_string(axis) + "=" + num(value)))
              .report;
        };
      }
      write_text_file(fs::path(abl_out) / "resolved_config.txt", format_config(echo));
      const auto rows = run_ablation(abl_values, run);
      write_text_file(fs::path(abl_out) / "ablation.csv", ablation_csv(axis, rows));
      std::vector<double> xs, ys;
      for (const auto& r : rows) {
        xs.push_back(r.value);
        ys.push_back(r.report.overall);
      }
      write_text_file(fs::path(abl_out) / "ablation.svg",
                      line_plot_svg("Overall AR vs " + to_string(axis), to_string(axis), "overall AR", xs, ys));
      std::printf("%s", ablation_csv(axis, rows).c_str());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 2;
  }
  return 0;
}
