#include "labeldiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "labeldiff/errors.hpp"

namespace labeldiff::diffusion {

namespace {

void require_same_shape(const LatentGrid& a, const LatentGrid& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": operand shapes differ");
}

void require_timestep(int t, const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.total_steps()) {
    throw ParameterError("timestep " + std::to_string(t) + " outside [0, " +
                         std::to_string(sched.total_steps()) + ")");
  }
}

}  // namespace

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::kLinear ? "linear" : "cosine";
}

ScheduleKind parse_schedule_kind(const std::string& text) {
  if (text == "linear") return ScheduleKind::kLinear;
  if (text == "cosine") return ScheduleKind::kCosine;
  throw ParameterError("unknown schedule kind '" + text + "'");
}

std::string to_string(SamplerKind kind) { return kind == SamplerKind::kDdim ? "ddim" : "ddpm"; }

SamplerKind parse_sampler_kind(const std::string& text) {
  if (text == "ddim" || text == "DDIM") return SamplerKind::kDdim;
  if (text == "ddpm" || text == "DDPM") return SamplerKind::kDdpm;
  throw ParameterError("unknown sampler kind '" + text + "'");
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw ParameterError("noise schedule needs at least one step");
  alphas_.reserve(betas_.size());
  alpha_bars_.reserve(betas_.size());
  double running = 1.0;
  for (double b : betas_) {
    if (!(b > 0.0 && b < 1.0)) throw ParameterError("beta outside (0, 1)");
    alphas_.push_back(1.0 - b);
    running *= 1.0 - b;
    alpha_bars_.push_back(running);
  }
}

NoiseSchedule make_linear_schedule(int total_steps, double beta_start, double beta_end) {
  if (total_steps < 1) throw ParameterError("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ParameterError("linear schedule requires 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(total_steps);
  for (int t = 0; t < total_steps; ++t) {
    const double frac = total_steps == 1 ? 0.0 : static_cast<double>(t) / (total_steps - 1);
    betas[t] = beta_start + (beta_end - beta_start) * frac;
  }
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule make_cosine_schedule(int total_steps) {
  if (total_steps < 1) throw ParameterError("schedule needs T >= 1");
  constexpr double s = 0.008;
  auto f = [&](double t) {
    const double v = std::cos((t / total_steps + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return v * v;
  };
  std::vector<double> betas(total_steps);
  for (int t = 0; t < total_steps; ++t) {
    betas[t] = std::clamp(1.0 - f(t + 1.0) / f(t), 1e-8, 0.999);
  }
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule make_schedule(const ScheduleConfig& config) {
  if (config.kind == ScheduleKind::kCosine) return make_cosine_schedule(config.total_steps);
  return make_linear_schedule(config.total_steps, config.beta_start, config.beta_end);
}

void GuidanceConfig::validate(int total_steps) const {
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw ParameterError("guidance scale must be >= 0");
  if (ddim_steps < 1 || ddim_steps > total_steps) {
    throw ParameterError("ddim_steps must lie in [1, " + std::to_string(total_steps) + "]");
  }
}

std::vector<int> ddim_timesteps(int total_steps, int ddim_steps) {
  if (ddim_steps < 1 || ddim_steps > total_steps) {
    throw ParameterError("ddim_steps must lie in [1, T]");
  }
  if (ddim_steps == 1) return {total_steps - 1};
  std::vector<int> ts(ddim_steps);
  for (int i = 0; i < ddim_steps; ++i) {
    const double pos = static_cast<double>(total_steps - 1) * (ddim_steps - 1 - i) / (ddim_steps - 1);
    ts[i] = static_cast<int>(std::lround(pos));
  }
  return ts;
}

LatentGrid forward_noise(const LatentGrid& x0, int t, const LatentGrid& eps, const NoiseSchedule& sched) {
  require_same_shape(x0, eps, "forward_noise");
  require_timestep(t, sched);
  const double a = std::sqrt(sched.alpha_bar(t));
  const double b = std::sqrt(1.0 - sched.alpha_bar(t));
  LatentGrid out(x0.height(), x0.width(), x0.channels());
  auto o = out.values();
  auto xv = x0.values();
  auto ev = eps.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a * xv[i] + b * ev[i];
  return out;
}

LatentGrid recover_x0(const LatentGrid& xt, int t, const LatentGrid& eps, const NoiseSchedule& sched) {
  require_same_shape(xt, eps, "recover_x0");
  require_timestep(t, sched);
  const double a = std::sqrt(sched.alpha_bar(t));
  const double b = std::sqrt(1.0 - sched.alpha_bar(t));
  LatentGrid out(xt.height(), xt.width(), xt.channels());
  auto o = out.values();
  auto xv = xt.values();
  auto ev = eps.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = (xv[i] - b * ev[i]) / a;
  return out;
}

LatentGrid cfg_combine(const LatentGrid& eps_uncond, const LatentGrid& eps_cond, double w) {
  require_same_shape(eps_uncond, eps_cond, "cfg_combine");
  if (w == 1.0) return eps_cond;
  LatentGrid out(eps_cond.height(), eps_cond.width(), eps_cond.channels());
  auto o = out.values();
  auto u = eps_uncond.values();
  auto c = eps_cond.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = u[i] + w * (c[i] - u[i]);
  return out;
}

double ddpm_sigma(int t, const NoiseSchedule& sched) {
  require_timestep(t, sched);
  if (t == 0) return 0.0;
  const double var = sched.beta(t) * (1.0 - sched.alpha_bar(t - 1)) / (1.0 - sched.alpha_bar(t));
  return std::sqrt(var);
}

LatentGrid ddpm_step(const LatentGrid& xt, int t, const LatentGrid& eps_guided,
                     const NoiseSchedule& sched, const LatentGrid& noise) {
  require_same_shape(xt, eps_guided, "ddpm_step");
  require_timestep(t, sched);
  if (t > 0) require_same_shape(xt, noise, "ddpm_step noise");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  const double eps_coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
  const double sigma = ddpm_sigma(t, sched);
  LatentGrid out(xt.height(), xt.width(), xt.channels());
  auto o = out.values();
  auto xv = xt.values();
  auto ev = eps_guided.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = inv_sqrt_alpha * (xv[i] - eps_coef * ev[i]);
  }
  if (t > 0) {
    auto nv = noise.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += sigma * nv[i];
  }
  return out;
}

LatentGrid ddim_step(const LatentGrid& xt, int t, int t_prev, const LatentGrid& eps_guided,
                     const NoiseSchedule& sched, std::optional<double> clip) {
  if (t_prev >= t) throw ParameterError("ddim_step requires t_prev < t");
  LatentGrid x0 = recover_x0(xt, t, eps_guided, sched);
  if (clip) {
    for (double& v : x0.values()) v = std::clamp(v, -*clip, *clip);
  }
  if (t_prev < 0) return x0;
  const double a = std::sqrt(sched.alpha_bar(t_prev));
  const double b = std::sqrt(1.0 - sched.alpha_bar(t_prev));
  LatentGrid out(xt.height(), xt.width(), xt.channels());
  auto o = out.values();
  auto xv = x0.values();
  auto ev = eps_guided.values();
  if (!clip) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a * xv[i] + b * ev[i];
    return out;
  }
  // noise implied by the clipped estimate
  const double at = std::sqrt(sched.alpha_bar(t));
  const double bt = std::sqrt(1.0 - sched.alpha_bar(t));
  auto xtv = xt.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a * xv[i] + b * (xtv[i] - at * xv[i]) / bt;
  return out;
}

}  // namespace labeldiff::diffusion
