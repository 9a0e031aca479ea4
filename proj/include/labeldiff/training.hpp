#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "labeldiff/latent_codec.hpp"
#include "labeldiff/model.hpp"
#include "labeldiff/optim.hpp"
#include "labeldiff/synthetic_data.hpp"

namespace labeldiff {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 16;
  int epochs = 20;
  double p_drop = 0.1;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Loss CSV row every `log_every` steps (and at the final step).
  int log_every = 10;

  void validate() const;
  AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon}; }
};

// One (image, phrase, mask) training triple.
struct TrainingExample {
  std::size_t image_index = 0;
  LatentGrid label_latent;  // encode_label(mask)
  std::vector<int> phrase_ids;
};

struct TrainingSet {
  std::vector<RgbImage> images;
  std::vector<TrainingExample> examples;

  static TrainingSet from_scenes(std::span<const Scene> scenes, const PhraseVocabulary& vocab);
  static TrainingSet from_manifest(const SceneManifest& manifest, const PhraseVocabulary& vocab);
  void add_scene(const Scene& scene, const PhraseVocabulary& vocab);
};

// Mean over batch and cells of (eps - eps_pred)^2. A non-finite per-sample
// loss raises a numeric error naming the sample.
struct DenoisingLoss {
  ag::Var loss;
  std::vector<double> per_sample;
};
DenoisingLoss denoising_loss(const ag::Var& predicted_noise, const ag::Var& noise);

// Per-sample randomness of one step: timesteps, noise, and dropout decisions.
struct NoiseDraw {
  std::vector<int> timesteps;
  std::vector<LatentGrid> noise;
  std::vector<bool> dropped;
};
NoiseDraw draw_noise(int batch, int latent_h, int latent_w, int total_steps, double p_drop, Rng& rng);

// Builds the graph for the denoising objective over the given examples.
DenoisingLoss model_loss(const Model& model, const TrainingSet& data, std::span<const std::size_t> batch,
                         const NoiseDraw& draw);

class TrainState {
 public:
  TrainState(const ModelConfig& config, std::uint64_t seed, PhraseVocabulary vocab = PhraseVocabulary::standard());
  TrainState(Model model, std::uint64_t seed);

  Model model;
  Adam optimizer;
  std::int64_t step = 0;
  std::uint64_t seed = 0;  // fixes initialization and batch order
  Rng rng;
  std::optional<LabelDecoder> decoder;
};

struct StepReport {
  double loss = 0.0;
  std::vector<int> timesteps;
  std::vector<bool> dropped;
};

// One optimization step over `batch` (indices into data.examples). On a
// non-finite loss or gradient the state is left unchanged.
StepReport train_step(TrainState& state, const TrainingSet& data, std::span<const std::size_t> batch,
                      const TrainConfig& config);

// Example order of one epoch: a permutation fixed by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t examples, std::uint64_t seed, std::int64_t epoch);
std::int64_t steps_per_epoch(std::size_t examples, int batch_size);

struct LossRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  std::int64_t wall_ms = 0;
};

struct TrainHooks {
  std::function<void(const LossRecord&)> on_log;
  // Stop after this many steps in this call (resume testing); unset = run to completion.
  std::optional<std::int64_t> max_steps;
};

// Runs from state.step until config.epochs are complete. Returns the logged rows.
std::vector<LossRecord> train(TrainState& state, const TrainingSet& data, const TrainConfig& config,
                              const TrainHooks& hooks = {});

void write_loss_csv_header(std::ostream& out);
void write_loss_csv_row(std::ostream& out, const LossRecord& record);

inline constexpr int kCheckpointVersion = 1;
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace labeldiff
