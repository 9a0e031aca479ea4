#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "labeldiff/autograd.hpp"
#include "labeldiff/parameters.hpp"
#include "labeldiff/text_conditioning.hpp"

namespace labeldiff {

struct DenoiserConfig {
  static constexpr int kInputChannels = 5;  // 1 label + 4 image-latent
  static constexpr int kOutputChannels = 1;

  int base_width = 32;
  std::vector<int> channel_mults{1, 2, 4};
  int heads = 1;
  // Resolution levels (0 = finest) carrying token-injected self-attention.
  std::vector<int> injection_levels{1, 2};
  std::vector<int> cross_attention_levels{1, 2};
  int time_embed_dim = 64;
  int groups = 8;

  int levels() const { return static_cast<int>(channel_mults.size()); }
  int width(int level) const { return base_width * channel_mults.at(level); }
  bool has_injection(int level) const;
  bool has_cross_attention(int level) const;
  // Adapter-token widths C_l for the two injected scales.
  std::array<int, 2> adapter_widths() const;
  void validate() const;
};

// Projections of one token-injected self-attention block; all C x C.
struct AttentionWeights {
  ag::Var query, key, value, output;
};

// A = concat_token(X, E); Z = softmax(A Wq (A Wk)^T / sqrt(d)) (A Wv) Wo; returns Z[0:N].
// `adapter_tokens` may be undefined or hold M = 0 tokens.
ag::Var injected_self_attention(const ag::Var& tokens, const ag::Var& adapter_tokens, const AttentionWeights& w,
                                int heads = 1);

struct CrossAttentionWeights {
  ag::Var norm_gamma, norm_beta;  // pre-normalization of the queries' source tokens
  ag::Var query;                  // C x C
  ag::Var key, value;             // D_txt x C
  ag::Var output;                 // C x C
};

// X + Attention(LN(X) Wq, g Wk, g Wv) Wo with the single text token g [B, D].
ag::Var cross_attention(const ag::Var& tokens, const ag::Var& text, const CrossAttentionWeights& w, int heads = 1);

// Sinusoidal encoding: first half sin(t * f_i), second half cos(t * f_i),
// f_i = 10000^(-i / (dim/2)).
std::vector<double> timestep_embedding(int t, int dim);

// Conditional U-Net predicting the label-latent noise.
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(const DenoiserConfig& config, int text_dim, ParameterStore& store, Rng& rng);

  // xt [B,h,w,1], image_latent [B,h,w,4] -> [B,h,w,1]
  ag::Var forward(const ag::Var& xt, const ag::Var& image_latent, std::span<const int> timesteps,
                  const BatchConditioning& cond) const;

  const DenoiserConfig& config() const { return config_; }

 private:
  struct ResBlock {
    ag::Var norm1_gamma, norm1_beta, conv1_w, conv1_b;
    ag::Var time_w, time_b;
    ag::Var norm2_gamma, norm2_beta, conv2_w, conv2_b;
    ag::Var skip_w, skip_b;  // undefined when widths match
    int in = 0, out = 0;
  };
  struct AttnBlock {
    bool inject = false;
    bool cross = false;
    int adapter_index = -1;
    ag::Var norm_gamma, norm_beta;
    AttentionWeights self;
    CrossAttentionWeights cross_w;
  };

  ResBlock make_res(const std::string& name, int in, int out, ParameterStore& store, Rng& rng) const;
  AttnBlock make_attn(const std::string& name, int level, int text_dim, ParameterStore& store, Rng& rng) const;
  ag::Var run_res(const ResBlock& block, const ag::Var& x, const ag::Var& temb) const;
  ag::Var run_attn(const AttnBlock& block, const ag::Var& x, const BatchConditioning& cond) const;
  bool has_attention(int level) const;
  int group_count(int channels) const;

  DenoiserConfig config_;
  int text_dim_ = 0;
  int temb_width_ = 0;
  ag::Var time_w1_, time_b1_, time_w2_, time_b2_;
  ag::Var in_w_, in_b_;
  std::vector<ResBlock> down_res_;
  std::vector<AttnBlock> down_attn_;
  std::vector<ag::Var> down_w_, down_b_;
  ResBlock mid_res_;
  AttnBlock mid_attn_;
  std::vector<ResBlock> up_res_;
  std::vector<AttnBlock> up_attn_;
  ag::Var out_gamma_, out_beta_, out_w_, out_b_;
};

}  // namespace labeldiff
