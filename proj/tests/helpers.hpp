#pragma once

#include "labeldiff/latent_grid.hpp"
#include "labeldiff/model.hpp"
#include "labeldiff/rng.hpp"

namespace testing {

inline labeldiff::LatentGrid random_grid(int h, int w, int c, labeldiff::Rng& rng) {
  labeldiff::LatentGrid g(h, w, c);
  for (double& v : g.values()) v = labeldiff::standard_normal(rng);
  return g;
}

// 8x8 latents from 64x64 images, base width 8.
inline labeldiff::ModelConfig tiny_config(int image_size = 64) {
  labeldiff::ModelConfig c;
  c.image_size = image_size;
  c.encoder.widths = {4, 4, 4};
  c.text.text_dim = 8;
  c.text.adapter_tokens = 2;
  c.denoiser.base_width = 8;
  c.denoiser.channel_mults = {1, 2, 2};
  c.denoiser.time_embed_dim = 8;
  c.denoiser.groups = 4;
  c.schedule.total_steps = 100;
  return c;
}

}  // namespace testing
