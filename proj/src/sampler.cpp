#include "labeldiff/sampler.hpp"

#include "labeldiff/errors.hpp"

namespace labeldiff {

std::vector<int> sampler_timesteps(const diffusion::GuidanceConfig& config, int total_steps) {
  config.validate(total_steps);
  if (config.sampler == diffusion::SamplerKind::kDdim) return diffusion::ddim_timesteps(total_steps, config.ddim_steps);
  std::vector<int> ts(total_steps);
  for (int i = 0; i < total_steps; ++i) ts[i] = total_steps - 1 - i;
  return ts;
}

int count_denoiser_calls(const diffusion::GuidanceConfig& config, int total_steps) {
  const int steps = config.sampler == diffusion::SamplerKind::kDdim ? config.ddim_steps : total_steps;
  return config.guided() ? 2 * steps : steps;
}

SampleResult sample_mask(const Model& model, const SampleRequest& req, const SamplerOptions& options) {
  return std::move(sample_batch(model, std::span(&req, 1), options).front());
}

std::vector<SampleResult> sample_batch(const Model& model, std::span<const SampleRequest> requests,
                                       const SamplerOptions& options) {
  if (requests.empty()) return {};
  const int total = model.schedule().total_steps();
  const auto& first = requests.front();
  if (!first.image) throw ParameterError("sample request without an image");
  const int height = first.image->height;
  const int width = first.image->width;
  for (const auto& r : requests) {
    if (!r.image) throw ParameterError("sample request without an image");
    if (r.image->height % kLatentFactor || r.image->width % kLatentFactor) {
      throw ShapeError("image " + std::to_string(r.image->height) + "x" + std::to_string(r.image->width) +
                       " not divisible by 8");
    }
    if (r.image->height != height || r.image->width != width) throw BatchError("mixed image sizes in one batch");
    if (r.guidance.sampler != first.guidance.sampler || r.guidance.ddim_steps != first.guidance.ddim_steps) {
      throw BatchError("mixed sampler settings in one batch");
    }
    r.guidance.validate(total);
    r.decode.validate();
    if (r.decode.kind == DecodeKind::kLearnedDecoder && !options.decoder) {
      throw ModelError("learned_decoder strategy requested but no trained decoder is loaded");
    }
  }
  if (!model.parameters().all_finite()) throw ModelError("model parameters contain non-finite values");

  ag::NoGradGuard no_grad;
  const int n = static_cast<int>(requests.size());
  const int lh = height / kLatentFactor;
  const int lw = width / kLatentFactor;

  // Row layout: n conditional rows, then one unconditional row per two-pass request.
  std::vector<int> uncond_row(n, -1);
  std::vector<const RgbImage*> row_images;
  std::vector<PhraseConditioning> row_conds;
  const auto null_cond = model.text().null_conditioning();
  for (int i = 0; i < n; ++i) {
    row_images.push_back(requests[i].image);
    row_conds.push_back(model.text().condition(requests[i].phrase));
  }
  for (int i = 0; i < n; ++i) {
    if (requests[i].guidance.guided() || options.force_two_pass) {
      uncond_row[i] = static_cast<int>(row_images.size());
      row_images.push_back(requests[i].image);
      row_conds.push_back(null_cond);
    }
  }
  const int rows = static_cast<int>(row_images.size());
  const ag::Var image_latent = model.encoder().forward(images_to_tensor(row_images));
  const BatchConditioning cond = stack_conditioning(row_conds);

  std::vector<Rng> rngs;
  std::vector<LatentGrid> x;
  for (int i = 0; i < n; ++i) {
    rngs.emplace_back(requests[i].seed);
    LatentGrid xt(lh, lw, 1);
    for (double& v : xt.values()) v = standard_normal(rngs.back());
    x.push_back(std::move(xt));
  }

  const std::vector<int> ts = sampler_timesteps(first.guidance, total);
  const bool ddim = first.guidance.sampler == diffusion::SamplerKind::kDdim;
  std::vector<LatentGrid> row_x(rows);
  for (std::size_t s = 0; s < ts.size(); ++s) {
    const int t = ts[s];
    for (int i = 0; i < n; ++i) {
      row_x[i] = x[i];
      if (uncond_row[i] >= 0) row_x[uncond_row[i]] = x[i];
    }
    const std::vector<int> row_t(rows, t);
    const auto eps = tensor_to_latents(model.predict_noise(latents_to_tensor(row_x), image_latent, row_t, cond));
    for (int i = 0; i < n; ++i) {
      const auto& g = requests[i].guidance;
      std::optional<LatentGrid> eps_u;
      if (uncond_row[i] >= 0) eps_u = eps[uncond_row[i]];
      LatentGrid guided = eps_u ? diffusion::cfg_combine(*eps_u, eps[i], g.scale) : eps[i];
      if (!guided.all_finite()) throw NumericError("non-finite noise prediction at t=" + std::to_string(t));
      if (options.probe) options.probe({static_cast<std::size_t>(i), static_cast<int>(s), t, eps[i], eps_u, guided});
      if (ddim) {
        const int t_prev = s + 1 < ts.size() ? ts[s + 1] : -1;
        x[i] = diffusion::ddim_step(x[i], t, t_prev, guided, model.schedule(), options.clip_x0);
      } else {
        LatentGrid z(lh, lw, 1);
        if (t > 0) {
          for (double& v : z.values()) v = standard_normal(rngs[i]);
        }
        x[i] = diffusion::ddpm_step(x[i], t, guided, model.schedule(), z);
      }
    }
  }

  std::vector<SampleResult> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    BinaryMask mask = decode_label(x[i], height, width, requests[i].decode, options.decoder);
    out.push_back({std::move(mask), std::move(x[i])});
  }
  return out;
}

}  // namespace labeldiff
