#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "labeldiff/diffusion.hpp"
#include "labeldiff/image.hpp"
#include "labeldiff/latent_codec.hpp"
#include "labeldiff/model.hpp"

namespace labeldiff {

struct SampleRequest {
  const RgbImage* image = nullptr;
  std::string phrase;
  diffusion::GuidanceConfig guidance;
  DecodeStrategy decode;
  std::uint64_t seed = 0;
};

// Per-step instrumentation record.
struct StepProbe {
  std::size_t request = 0;
  int step_index = 0;
  int t = 0;
  LatentGrid eps_cond;
  std::optional<LatentGrid> eps_uncond;
  LatentGrid eps_guided;
};

struct SamplerOptions {
  // x0 estimates are clamped to [-clip, clip] inside DDIM updates.
  std::optional<double> clip_x0 = 1.0;
  // Evaluate the unconditional branch even when w == 1.
  bool force_two_pass = false;
  const LabelDecoder* decoder = nullptr;
  std::function<void(const StepProbe&)> probe;
};

struct SampleResult {
  BinaryMask mask;
  LatentGrid latent;  // final x0 estimate
};

// Guided reverse diffusion from x_T ~ N(0, I) (seeded by req.seed), decoded at
// image resolution.
SampleResult sample_mask(const Model& model, const SampleRequest& req, const SamplerOptions& options = {});

// Same results as per-request sample_mask; conditional and unconditional rows of
// every request share one U-Net call per step.
std::vector<SampleResult> sample_batch(const Model& model, std::span<const SampleRequest> requests,
                                       const SamplerOptions& options = {});

// U-Net evaluations per request.
int count_denoiser_calls(const diffusion::GuidanceConfig& config, int total_steps = 1000);

// Visit order of the configured sampler.
std::vector<int> sampler_timesteps(const diffusion::GuidanceConfig& config, int total_steps);

}  // namespace labeldiff
