#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>

#include "labeldiff/denoiser.hpp"
#include "labeldiff/diffusion.hpp"
#include "labeldiff/latent_codec.hpp"
#include "labeldiff/text_conditioning.hpp"

namespace labeldiff {

struct ModelConfig {
  int image_size = 64;
  ImageEncoderConfig encoder;
  TextConfig text;
  DenoiserConfig denoiser;
  diffusion::ScheduleConfig schedule;

  void validate() const;
  // Flat key=value lines; from_text rejects unknown keys.
  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& values);
};

std::string format_int_list(const std::vector<int>& values);
std::vector<int> parse_int_list(const std::string& text);

// Image encoder + text conditioner + conditional U-Net sharing one parameter store.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed, PhraseVocabulary vocab = PhraseVocabulary::standard());

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  const diffusion::NoiseSchedule& schedule() const { return schedule_; }
  const ImageLatentEncoder& encoder() const { return encoder_; }
  const TextConditioner& text() const { return text_; }
  const Denoiser& denoiser() const { return denoiser_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  // Noise prediction for a batch; all tensors share the leading batch dim.
  ag::Var predict_noise(const ag::Var& xt, const ag::Var& image_latent, std::span<const int> timesteps,
                        const BatchConditioning& cond) const;

  // Counts every U-Net evaluation (one per sample row) made through predict_noise.
  std::uint64_t denoiser_rows() const { return rows_->load(); }
  void reset_denoiser_rows() { *rows_ = 0; }

 private:
  ModelConfig config_;
  ParameterStore store_;
  ImageLatentEncoder encoder_;
  TextConditioner text_;
  Denoiser denoiser_;
  diffusion::NoiseSchedule schedule_;
  std::unique_ptr<std::atomic<std::uint64_t>> rows_ = std::make_unique<std::atomic<std::uint64_t>>(0);
};

}  // namespace labeldiff
