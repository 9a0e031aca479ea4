#pragma once

#include <optional>
#include <string>
#include <vector>

#include "labeldiff/latent_grid.hpp"

namespace labeldiff::diffusion {

enum class ScheduleKind { kLinear, kCosine };

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& text);

// Per-timestep beta / alpha / alpha-bar tables over timesteps 0..T-1.
// Immutable after construction.
class NoiseSchedule {
 public:
  NoiseSchedule(std::vector<double> betas);

  int total_steps() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const { return betas_.at(t); }
  double alpha(int t) const { return alphas_.at(t); }
  double alpha_bar(int t) const { return alpha_bars_.at(t); }
  // alpha-bar before step 0 is 1 (clean signal).
  double alpha_bar_prev(int t) const { return t <= 0 ? 1.0 : alpha_bars_.at(t - 1); }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

NoiseSchedule make_linear_schedule(int total_steps, double beta_start, double beta_end);
// Squared-cosine alpha-bar schedule with offset s = 0.008, betas capped at 0.999.
NoiseSchedule make_cosine_schedule(int total_steps);

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::kLinear;
  int total_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};
NoiseSchedule make_schedule(const ScheduleConfig& config);

enum class SamplerKind { kDdpm, kDdim };

std::string to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(const std::string& text);

struct GuidanceConfig {
  double scale = 7.5;
  SamplerKind sampler = SamplerKind::kDdim;
  int ddim_steps = 50;

  // Guidance is off when the combined prediction is exactly the conditional one.
  bool guided() const { return scale != 1.0; }
  void validate(int total_steps) const;
};

// Strictly decreasing visit order for DDIM: starts at T-1, ends at 0.
std::vector<int> ddim_timesteps(int total_steps, int ddim_steps);

// sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps
LatentGrid forward_noise(const LatentGrid& x0, int t, const LatentGrid& eps, const NoiseSchedule& sched);

// (xt - sqrt(1 - abar_t) * eps) / sqrt(abar_t)
LatentGrid recover_x0(const LatentGrid& xt, int t, const LatentGrid& eps, const NoiseSchedule& sched);

// eps_uncond + w * (eps_cond - eps_uncond); returns eps_cond verbatim at w == 1.
LatentGrid cfg_combine(const LatentGrid& eps_uncond, const LatentGrid& eps_cond, double w);

// Ancestral update. `noise` is ignored at t == 0.
LatentGrid ddpm_step(const LatentGrid& xt, int t, const LatentGrid& eps_guided,
                     const NoiseSchedule& sched, const LatentGrid& noise);

double ddpm_sigma(int t, const NoiseSchedule& sched);

// Deterministic (eta = 0) DDIM update from t to t_prev. A negative t_prev
// designates "before step 0" and returns the x0 estimate. When `clip` is set
// the x0 estimate is clamped to [-clip, clip] and re-noised with the noise
// that maps xt onto the clamped estimate.
LatentGrid ddim_step(const LatentGrid& xt, int t, int t_prev, const LatentGrid& eps_guided,
                     const NoiseSchedule& sched, std::optional<double> clip = std::nullopt);

}  // namespace labeldiff::diffusion
