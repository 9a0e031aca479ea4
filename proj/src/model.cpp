#include "labeldiff/model.hpp"

#include <charconv>

#include "labeldiff/errors.hpp"

namespace labeldiff {

std::string format_int_list(const std::vector<int>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(values[i]);
  }
  return s;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ParameterError("malformed integer list '" + text + "'");
    }
  }
  return out;
}

void ModelConfig::validate() const {
  if (image_size <= 0 || image_size % kLatentFactor) throw ParameterError("image_size must be a positive multiple of 8");
  encoder.validate();
  denoiser.validate();
  if (text.text_dim <= 0 || text.adapter_tokens < 0) throw ParameterError("text configuration invalid");
  const int stride = 1 << (denoiser.levels() - 1);
  if ((image_size / kLatentFactor) % stride) {
    throw ParameterError("latent size " + std::to_string(image_size / kLatentFactor) + " not divisible by " +
                         std::to_string(stride) + " (U-Net depth)");
  }
  if (schedule.total_steps < 1) throw ParameterError("total_steps must be >= 1");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  auto num = [](double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
  };
  return {
      {"image_size", std::to_string(image_size)},
      {"encoder_widths", format_int_list(encoder.widths)},
      {"text_dim", std::to_string(text.text_dim)},
      {"adapter_tokens", std::to_string(text.adapter_tokens)},
      {"base_width", std::to_string(denoiser.base_width)},
      {"channel_mults", format_int_list(denoiser.channel_mults)},
      {"heads", std::to_string(denoiser.heads)},
      {"injection_levels", format_int_list(denoiser.injection_levels)},
      {"cross_attention_levels", format_int_list(denoiser.cross_attention_levels)},
      {"time_embed_dim", std::to_string(denoiser.time_embed_dim)},
      {"groups", std::to_string(denoiser.groups)},
      {"schedule", diffusion::to_string(schedule.kind)},
      {"total_steps", std::to_string(schedule.total_steps)},
      {"beta_start", num(schedule.beta_start)},
      {"beta_end", num(schedule.beta_end)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& values) {
  ModelConfig c;
  for (const auto& [key, value] : values) {
    try {
      if (key == "image_size") c.image_size = std::stoi(value);
      else if (key == "encoder_widths") c.encoder.widths = parse_int_list(value);
      else if (key == "text_dim") c.text.text_dim = std::stoi(value);
      else if (key == "adapter_tokens") c.text.adapter_tokens = std::stoi(value);
      else if (key == "base_width") c.denoiser.base_width = std::stoi(value);
      else if (key == "channel_mults") c.denoiser.channel_mults = parse_int_list(value);
      else if (key == "heads") c.denoiser.heads = std::stoi(value);
      else if (key == "injection_levels") c.denoiser.injection_levels = parse_int_list(value);
      else if (key == "cross_attention_levels") c.denoiser.cross_attention_levels = parse_int_list(value);
      else if (key == "time_embed_dim") c.denoiser.time_embed_dim = std::stoi(value);
      else if (key == "groups") c.denoiser.groups = std::stoi(value);
      else if (key == "schedule") c.schedule.kind = diffusion::parse_schedule_kind(value);
      else if (key == "total_steps") c.schedule.total_steps = std::stoi(value);
      else if (key == "beta_start") c.schedule.beta_start = std::stod(value);
      else if (key == "beta_end") c.schedule.beta_end = std::stod(value);
      else throw ParameterError("unknown model config key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ParameterError("malformed value for model config key '" + key + "'");
    } catch (const std::out_of_range&) {
      throw ParameterError("out-of-range value for model config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

Model::Model(const ModelConfig& config, std::uint64_t seed, PhraseVocabulary vocab)
    : config_(config), schedule_(diffusion::make_schedule(config.schedule)) {
  config.validate();
  // Registration order (encoder, text, U-Net) fixes the checkpoint layout.
  Rng rng(seed);
  encoder_ = ImageLatentEncoder(config.encoder, store_, rng);
  text_ = TextConditioner(std::move(vocab), config.text, config.denoiser.adapter_widths(), store_, rng);
  denoiser_ = Denoiser(config.denoiser, config.text.text_dim, store_, rng);
}

ag::Var Model::predict_noise(const ag::Var& xt, const ag::Var& image_latent, std::span<const int> timesteps,
                             const BatchConditioning& cond) const {
  *rows_ += static_cast<std::uint64_t>(xt.dim(0));
  return denoiser_.forward(xt, image_latent, timesteps, cond);
}

}  // namespace labeldiff
