#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "labeldiff/autograd.hpp"
#include "labeldiff/image.hpp"
#include "labeldiff/latent_grid.hpp"
#include "labeldiff/parameters.hpp"

namespace labeldiff {

inline constexpr int kLatentFactor = 8;
inline constexpr int kImageLatentChannels = 4;

// Area-average downsample by 8, then [0,1] -> [-1,1]. Output (H/8, W/8, 1).
LatentGrid encode_label(const BinaryMask& mask);

enum class DecodeKind { kBilinearCfg, kNearest, kLearnedDecoder };

std::string to_string(DecodeKind kind);
DecodeKind parse_decode_kind(const std::string& text);

struct DecodeStrategy {
  DecodeKind kind = DecodeKind::kBilinearCfg;
  double threshold = 0.0;  // in the [-1, 1] value convention

  void validate() const;
};

// Half-pixel-centred bilinear resample of a single-channel latent.
std::vector<double> bilinear_resize(const LatentGrid& latent, int target_h, int target_w);
std::vector<double> nearest_resize(const LatentGrid& latent, int target_h, int target_w);

// Converts [B, H, W, 3] images in [0, 1] into a constant tensor.
ag::Var images_to_tensor(std::span<const RgbImage* const> images);
ag::Var latents_to_tensor(std::span<const LatentGrid> latents);
std::vector<LatentGrid> tensor_to_latents(const ag::Var& tensor);

struct ImageEncoderConfig {
  std::vector<int> widths{16, 32, 32};  // one stride-2 stage per entry; 3 stages = factor 8

  void validate() const;
};

// Strided convolutional encoder, 3 input channels -> 4 latent channels at 1/8
// resolution. Trained jointly with the denoiser.
class ImageLatentEncoder {
 public:
  ImageLatentEncoder() = default;
  ImageLatentEncoder(const ImageEncoderConfig& config, ParameterStore& store, Rng& rng,
                     const std::string& prefix = "encoder.");

  // [B, H, W, 3] -> [B, H/8, W/8, 4]
  ag::Var forward(const ag::Var& images) const;
  LatentGrid encode_image(const RgbImage& image) const;

 private:
  struct Conv {
    ag::Var weight, bias;
    int stride;
  };
  std::vector<Conv> convs_;
};

// Learned latent -> full-resolution mask decoder (the LEARNED_DECODER strategy).
class LabelDecoder {
 public:
  explicit LabelDecoder(std::uint64_t seed = 0, int width = 16);

  // [B, h, w, 1] latents -> [B, 8h, 8w, 1] logits
  ag::Var forward(const ag::Var& latents) const;
  // Per-pixel decoder output mapped to [-1, 1].
  std::vector<double> decode_values(const LatentGrid& latent) const;

  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  int width() const { return width_; }

 private:
  struct Conv {
    ag::Var weight, bias;
  };
  int width_;
  ParameterStore store_;
  std::vector<Conv> convs_;
};

BinaryMask decode_label(const LatentGrid& latent, int target_h, int target_w,
                        const DecodeStrategy& strategy, const LabelDecoder* decoder = nullptr);

struct LabelAutoencoderReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double reconstruction_iou = 0.0;  // mean IoU over the training masks after training
};

struct LabelAutoencoderConfig {
  int epochs = 1;
  int batch_size = 8;
  double learning_rate = 2e-3;
  std::uint64_t seed = 0;
};

// Fits `decoder` to invert encode_label over the given masks.
LabelAutoencoderReport train_label_autoencoder(LabelDecoder& decoder, std::span<const BinaryMask> masks,
                                               const LabelAutoencoderConfig& config);

}  // namespace labeldiff
