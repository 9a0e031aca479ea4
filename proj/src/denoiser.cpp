#include "labeldiff/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "labeldiff/errors.hpp"

namespace labeldiff {

bool DenoiserConfig::has_injection(int level) const {
  return std::find(injection_levels.begin(), injection_levels.end(), level) != injection_levels.end();
}

bool DenoiserConfig::has_cross_attention(int level) const {
  return std::find(cross_attention_levels.begin(), cross_attention_levels.end(), level) !=
         cross_attention_levels.end();
}

std::array<int, 2> DenoiserConfig::adapter_widths() const {
  return {width(injection_levels.at(0)), width(injection_levels.at(1))};
}

void DenoiserConfig::validate() const {
  if (base_width <= 0) throw ParameterError("base_width must be positive");
  if (channel_mults.empty()) throw ParameterError("channel_mults must be nonempty");
  for (int m : channel_mults) {
    if (m <= 0) throw ParameterError("channel multipliers must be positive");
  }
  if (heads < 1) throw ParameterError("heads must be >= 1");
  if (injection_levels.size() != 2) throw ParameterError("exactly two injection levels are required");
  if (injection_levels[0] == injection_levels[1]) throw ParameterError("injection levels must differ");
  auto check_levels = [&](const std::vector<int>& lv, const char* what) {
    for (int l : lv) {
      if (l < 0 || l >= levels()) throw ParameterError(std::string(what) + " level out of range");
      if (width(l) % heads) throw ParameterError("channel width not divisible by head count");
    }
  };
  check_levels(injection_levels, "injection");
  check_levels(cross_attention_levels, "cross-attention");
  if (time_embed_dim < 2 || time_embed_dim % 2) throw ParameterError("time_embed_dim must be even and >= 2");
  if (groups < 1) throw ParameterError("groups must be >= 1");
}

namespace {

ag::Var split_head(const ag::Var& x, int head, int dim) { return ag::slice_last(x, head * dim, dim); }

// softmax(q k^T / sqrt(d)) v over heads sharing one [B, *, C] layout.
ag::Var multihead(const ag::Var& q, const ag::Var& k, const ag::Var& v, int heads) {
  const int channels = q.dim(-1);
  const int d = channels / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  ag::Var merged;
  for (int h = 0; h < heads; ++h) {
    ag::Var qh = heads == 1 ? q : split_head(q, h, d);
    ag::Var kh = heads == 1 ? k : split_head(k, h, d);
    ag::Var vh = heads == 1 ? v : split_head(v, h, d);
    ag::Var attn = ag::softmax_last(ag::scale(ag::bmm_nt(qh, kh), scale));
    ag::Var out = ag::bmm(attn, vh);
    merged = merged.defined() ? ag::concat_last(merged, out) : out;
  }
  return merged;
}

}  // namespace

ag::Var injected_self_attention(const ag::Var& tokens, const ag::Var& adapter_tokens, const AttentionWeights& w,
                                int heads) {
  if (tokens.rank() != 3) throw ShapeError("injected_self_attention: tokens must be [B,N,C]");
  const int channels = tokens.dim(2);
  const int n = tokens.dim(1);
  if (w.query.shape() != ag::Shape{channels, channels} || w.key.shape() != w.query.shape() ||
      w.value.shape() != w.query.shape() || w.output.shape() != w.query.shape()) {
    throw ShapeError("injected_self_attention: projections must be " + std::to_string(channels) + "x" +
                     std::to_string(channels));
  }
  if (heads < 1 || channels % heads) throw ShapeError("injected_self_attention: width not divisible by heads");
  ag::Var joint = tokens;
  if (adapter_tokens.defined()) {
    if (adapter_tokens.rank() != 3 || adapter_tokens.dim(0) != tokens.dim(0) || adapter_tokens.dim(2) != channels) {
      throw ShapeError("injected_self_attention: adapter tokens " + ag::shape_string(adapter_tokens.shape()) +
                       " do not match image tokens " + ag::shape_string(tokens.shape()));
    }
    joint = ag::concat_tokens(tokens, adapter_tokens);
  }
  ag::Var z = ag::matmul(multihead(ag::matmul(joint, w.query), ag::matmul(joint, w.key),
                                   ag::matmul(joint, w.value), heads),
                         w.output);
  return ag::slice_tokens(z, 0, n);
}

ag::Var cross_attention(const ag::Var& tokens, const ag::Var& text, const CrossAttentionWeights& w, int heads) {
  if (tokens.rank() != 3) throw ShapeError("cross_attention: tokens must be [B,N,C]");
  if (text.rank() != 2 || text.dim(0) != tokens.dim(0)) {
    throw ShapeError("cross_attention: text must be [B,D], got " + ag::shape_string(text.shape()));
  }
  const int channels = tokens.dim(2);
  if (w.query.shape() != ag::Shape{channels, channels} || w.output.shape() != w.query.shape() ||
      w.key.shape() != ag::Shape{text.dim(1), channels} || w.value.shape() != w.key.shape()) {
    throw ShapeError("cross_attention: projection shapes inconsistent with tokens/text");
  }
  const int batch = text.dim(0);
  ag::Var text_token = ag::reshape(text, {batch, 1, text.dim(1)});
  ag::Var q = ag::matmul(ag::layer_norm(tokens, w.norm_gamma, w.norm_beta), w.query);
  ag::Var attended = multihead(q, ag::matmul(text_token, w.key), ag::matmul(text_token, w.value), heads);
  return ag::add(tokens, ag::matmul(attended, w.output));
}

std::vector<double> timestep_embedding(int t, int dim) {
  if (dim < 2 || dim % 2) throw ParameterError("timestep embedding dimension must be even");
  const int half = dim / 2;
  std::vector<double> out(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    out[i] = std::sin(t * freq);
    out[half + i] = std::cos(t * freq);
  }
  return out;
}

Denoiser::Denoiser(const DenoiserConfig& config, int text_dim, ParameterStore& store, Rng& rng)
    : config_(config), text_dim_(text_dim) {
  config.validate();
  temb_width_ = 4 * config.base_width;
  const int td = config.time_embed_dim;
  time_w1_ = store.add_uniform("unet.time.w1", {td, temb_width_}, td, rng);
  time_b1_ = store.add_uniform("unet.time.b1", {temb_width_}, td, rng);
  time_w2_ = store.add_uniform("unet.time.w2", {temb_width_, temb_width_}, temb_width_, rng);
  time_b2_ = store.add_uniform("unet.time.b2", {temb_width_}, temb_width_, rng);

  const int fan_in = 9 * DenoiserConfig::kInputChannels;
  in_w_ = store.add_uniform("unet.in.weight", {fan_in, config.base_width}, fan_in, rng);
  in_b_ = store.add_uniform("unet.in.bias", {config.base_width}, fan_in, rng);

  const int levels = config.levels();
  int width = config.base_width;
  for (int l = 0; l < levels; ++l) {
    const std::string name = "unet.down" + std::to_string(l);
    down_res_.push_back(make_res(name + ".res", width, config.width(l), store, rng));
    width = config.width(l);
    down_attn_.push_back(make_attn(name + ".attn", l, text_dim, store, rng));
    if (l + 1 < levels) {
      down_w_.push_back(store.add_uniform(name + ".downsample.weight", {9 * width, width}, 9 * width, rng));
      down_b_.push_back(store.add_uniform(name + ".downsample.bias", {width}, 9 * width, rng));
    }
  }
  mid_res_ = make_res("unet.mid.res", width, width, store, rng);
  mid_attn_ = make_attn("unet.mid.attn", levels - 1, text_dim, store, rng);
  up_res_.resize(levels);
  up_attn_.resize(levels);
  for (int l = levels - 1; l >= 0; --l) {
    const std::string name = "unet.up" + std::to_string(l);
    up_res_[l] = make_res(name + ".res", width + config.width(l), config.width(l), store, rng);
    width = config.width(l);
    up_attn_[l] = make_attn(name + ".attn", l, text_dim, store, rng);
  }
  out_gamma_ = store.add_constant("unet.out.norm.gamma", {width}, 1.0);
  out_beta_ = store.add_constant("unet.out.norm.beta", {width}, 0.0);
  out_w_ = store.add_uniform("unet.out.weight", {9 * width, DenoiserConfig::kOutputChannels}, 9 * width, rng);
  out_b_ = store.add_uniform("unet.out.bias", {DenoiserConfig::kOutputChannels}, 9 * width, rng);
}

int Denoiser::group_count(int channels) const {
  int g = std::min(config_.groups, channels);
  while (channels % g) --g;
  return g;
}

bool Denoiser::has_attention(int level) const {
  return config_.has_injection(level) || config_.has_cross_attention(level);
}

Denoiser::ResBlock Denoiser::make_res(const std::string& name, int in, int out, ParameterStore& store,
                                      Rng& rng) const {
  ResBlock b;
  b.in = in;
  b.out = out;
  b.norm1_gamma = store.add_constant(name + ".norm1.gamma", {in}, 1.0);
  b.norm1_beta = store.add_constant(name + ".norm1.beta", {in}, 0.0);
  b.conv1_w = store.add_uniform(name + ".conv1.weight", {9 * in, out}, 9 * in, rng);
  b.conv1_b = store.add_uniform(name + ".conv1.bias", {out}, 9 * in, rng);
  b.time_w = store.add_uniform(name + ".time.weight", {temb_width_, out}, temb_width_, rng);
  b.time_b = store.add_uniform(name + ".time.bias", {out}, temb_width_, rng);
  b.norm2_gamma = store.add_constant(name + ".norm2.gamma", {out}, 1.0);
  b.norm2_beta = store.add_constant(name + ".norm2.beta", {out}, 0.0);
  b.conv2_w = store.add_uniform(name + ".conv2.weight", {9 * out, out}, 9 * out, rng);
  b.conv2_b = store.add_uniform(name + ".conv2.bias", {out}, 9 * out, rng);
  if (in != out) {
    b.skip_w = store.add_uniform(name + ".skip.weight", {in, out}, in, rng);
    b.skip_b = store.add_uniform(name + ".skip.bias", {out}, in, rng);
  }
  return b;
}

Denoiser::AttnBlock Denoiser::make_attn(const std::string& name, int level, int text_dim, ParameterStore& store,
                                        Rng& rng) const {
  AttnBlock b;
  b.inject = config_.has_injection(level);
  b.cross = config_.has_cross_attention(level);
  if (!b.inject && !b.cross) return b;
  const int c = config_.width(level);
  if (b.inject) {
    b.adapter_index = config_.injection_levels[0] == level ? 0 : 1;
    b.norm_gamma = store.add_constant(name + ".norm.gamma", {c}, 1.0);
    b.norm_beta = store.add_constant(name + ".norm.beta", {c}, 0.0);
    b.self.query = store.add_uniform(name + ".self.query", {c, c}, c, rng);
    b.self.key = store.add_uniform(name + ".self.key", {c, c}, c, rng);
    b.self.value = store.add_uniform(name + ".self.value", {c, c}, c, rng);
    b.self.output = store.add_uniform(name + ".self.output", {c, c}, c, rng);
  }
  if (b.cross) {
    b.cross_w.norm_gamma = store.add_constant(name + ".cross.norm.gamma", {c}, 1.0);
    b.cross_w.norm_beta = store.add_constant(name + ".cross.norm.beta", {c}, 0.0);
    b.cross_w.query = store.add_uniform(name + ".cross.query", {c, c}, c, rng);
    b.cross_w.key = store.add_uniform(name + ".cross.key", {text_dim, c}, text_dim, rng);
    b.cross_w.value = store.add_uniform(name + ".cross.value", {text_dim, c}, text_dim, rng);
    b.cross_w.output = store.add_uniform(name + ".cross.output", {c, c}, c, rng);
  }
  return b;
}

ag::Var Denoiser::run_res(const ResBlock& b, const ag::Var& x, const ag::Var& temb) const {
  ag::Var h = ag::silu(ag::group_norm(x, b.norm1_gamma, b.norm1_beta, group_count(b.in)));
  h = ag::conv2d(h, b.conv1_w, b.conv1_b, 3, 1, 1);
  h = ag::add_per_sample(h, ag::linear(ag::silu(temb), b.time_w, b.time_b));
  h = ag::silu(ag::group_norm(h, b.norm2_gamma, b.norm2_beta, group_count(b.out)));
  h = ag::conv2d(h, b.conv2_w, b.conv2_b, 3, 1, 1);
  ag::Var skip = b.skip_w.defined() ? ag::linear(x, b.skip_w, b.skip_b) : x;
  return ag::add(skip, h);
}

ag::Var Denoiser::run_attn(const AttnBlock& b, const ag::Var& x, const BatchConditioning& cond) const {
  if (!b.inject && !b.cross) return x;
  const int batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  ag::Var tokens = ag::reshape(x, {batch, h * w, c});
  if (b.inject) {
    const ag::Var& adapters = cond.per_layer.at(b.adapter_index);
    ag::Var normed = ag::layer_norm(tokens, b.norm_gamma, b.norm_beta);
    ag::Var normed_adapters = adapters.dim(1) > 0 ? ag::layer_norm(adapters, b.norm_gamma, b.norm_beta) : adapters;
    tokens = ag::add(tokens, injected_self_attention(normed, normed_adapters, b.self, config_.heads));
  }
  if (b.cross) tokens = cross_attention(tokens, cond.global, b.cross_w, config_.heads);
  return ag::reshape(tokens, {batch, h, w, c});
}

ag::Var Denoiser::forward(const ag::Var& xt, const ag::Var& image_latent, std::span<const int> timesteps,
                          const BatchConditioning& cond) const {
  if (xt.rank() != 4 || xt.dim(3) != 1) throw ShapeError("denoiser: xt must be [B,h,w,1]");
  if (image_latent.rank() != 4 || image_latent.dim(3) != 4 || image_latent.dim(0) != xt.dim(0) ||
      image_latent.dim(1) != xt.dim(1) || image_latent.dim(2) != xt.dim(2)) {
    throw ShapeError("denoiser: image latent " + ag::shape_string(image_latent.shape()) +
                     " not aligned with xt " + ag::shape_string(xt.shape()));
  }
  const int batch = xt.dim(0);
  if (static_cast<int>(timesteps.size()) != batch) throw ShapeError("denoiser: one timestep per sample required");
  const int stride = 1 << (config_.levels() - 1);
  if (xt.dim(1) % stride || xt.dim(2) % stride) {
    throw ShapeError("denoiser: latent " + std::to_string(xt.dim(1)) + "x" + std::to_string(xt.dim(2)) +
                     " not divisible by " + std::to_string(stride));
  }
  if (cond.global.dim(0) != batch || cond.per_layer.size() != 2) {
    throw ShapeError("denoiser: conditioning batch does not match");
  }

  std::vector<double> sin_table;
  sin_table.reserve(static_cast<std::size_t>(batch) * config_.time_embed_dim);
  for (int t : timesteps) {
    const auto e = timestep_embedding(t, config_.time_embed_dim);
    sin_table.insert(sin_table.end(), e.begin(), e.end());
  }
  ag::Var temb = ag::Var::constant({batch, config_.time_embed_dim}, std::move(sin_table));
  temb = ag::linear(ag::silu(ag::linear(temb, time_w1_, time_b1_)), time_w2_, time_b2_);

  ag::Var h = ag::conv2d(ag::concat_last(xt, image_latent), in_w_, in_b_, 3, 1, 1);
  std::vector<ag::Var> skips;
  const int levels = config_.levels();
  for (int l = 0; l < levels; ++l) {
    h = run_res(down_res_[l], h, temb);
    h = run_attn(down_attn_[l], h, cond);
    skips.push_back(h);
    if (l + 1 < levels) h = ag::conv2d(h, down_w_[l], down_b_[l], 3, 2, 1);
  }
  h = run_res(mid_res_, h, temb);
  h = run_attn(mid_attn_, h, cond);
  for (int l = levels - 1; l >= 0; --l) {
    h = ag::concat_last(h, skips[l]);
    h = run_res(up_res_[l], h, temb);
    h = run_attn(up_attn_[l], h, cond);
    if (l > 0) h = ag::upsample_nearest2(h);
  }
  h = ag::silu(ag::group_norm(h, out_gamma_, out_beta_, group_count(config_.width(0))));
  return ag::conv2d(h, out_w_, out_b_, 3, 1, 1);
}

}  // namespace labeldiff
