#include "labeldiff/latent_codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "labeldiff/errors.hpp"
#include "labeldiff/evaluation.hpp"
#include "labeldiff/optim.hpp"

namespace labeldiff {

LatentGrid encode_label(const BinaryMask& mask) {
  if (mask.height <= 0 || mask.width <= 0 || mask.height % kLatentFactor || mask.width % kLatentFactor) {
    throw ShapeError("encode_label: mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                     " not divisible by 8");
  }
  const int h = mask.height / kLatentFactor;
  const int w = mask.width / kLatentFactor;
  LatentGrid out(h, w, 1);
  constexpr double cell = kLatentFactor * kLatentFactor;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int ones = 0;
      for (int dy = 0; dy < kLatentFactor; ++dy) {
        for (int dx = 0; dx < kLatentFactor; ++dx) ones += mask.at(y * kLatentFactor + dy, x * kLatentFactor + dx);
      }
      out.at(y, x) = 2.0 * (ones / cell) - 1.0;
    }
  }
  return out;
}

std::string to_string(DecodeKind kind) {
  switch (kind) {
    case DecodeKind::kBilinearCfg: return "bilinear_cfg";
    case DecodeKind::kNearest: return "nearest";
    case DecodeKind::kLearnedDecoder: return "learned_decoder";
  }
  return "?";
}

DecodeKind parse_decode_kind(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "bilinear_cfg" || t == "bilinear") return DecodeKind::kBilinearCfg;
  if (t == "nearest") return DecodeKind::kNearest;
  if (t == "learned_decoder" || t == "learned") return DecodeKind::kLearnedDecoder;
  throw ParameterError("unknown decode strategy '" + text + "'");
}

void DecodeStrategy::validate() const {
  if (!(threshold > -1.0 && threshold < 1.0)) throw ParameterError("decode threshold outside (-1, 1)");
}

std::vector<double> bilinear_resize(const LatentGrid& latent, int target_h, int target_w) {
  const int h = latent.height(), w = latent.width();
  std::vector<double> out(static_cast<std::size_t>(target_h) * target_w);
  const double sy = static_cast<double>(h) / target_h;
  const double sx = static_cast<double>(w) / target_w;
  for (int y = 0; y < target_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < target_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      const double top = latent.at(y0, x0) * (1.0 - wx) + latent.at(y0, x1) * wx;
      const double bottom = latent.at(y1, x0) * (1.0 - wx) + latent.at(y1, x1) * wx;
      out[static_cast<std::size_t>(y) * target_w + x] = top * (1.0 - wy) + bottom * wy;
    }
  }
  return out;
}

std::vector<double> nearest_resize(const LatentGrid& latent, int target_h, int target_w) {
  std::vector<double> out(static_cast<std::size_t>(target_h) * target_w);
  for (int y = 0; y < target_h; ++y) {
    const int sy = std::min(latent.height() - 1, y * latent.height() / target_h);
    for (int x = 0; x < target_w; ++x) {
      const int sx = std::min(latent.width() - 1, x * latent.width() / target_w);
      out[static_cast<std::size_t>(y) * target_w + x] = latent.at(sy, sx);
    }
  }
  return out;
}

ag::Var images_to_tensor(std::span<const RgbImage* const> images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const int h = images[0]->height, w = images[0]->width;
  std::vector<double> values;
  values.reserve(images.size() * static_cast<std::size_t>(h) * w * 3);
  for (const RgbImage* img : images) {
    if (img->height != h || img->width != w) throw ShapeError("images_to_tensor: mixed image sizes");
    for (std::uint8_t p : img->pixels) values.push_back(p / 255.0);
  }
  return ag::Var::constant({static_cast<int>(images.size()), h, w, 3}, std::move(values));
}

ag::Var latents_to_tensor(std::span<const LatentGrid> latents) {
  if (latents.empty()) throw ShapeError("latents_to_tensor: empty batch");
  const auto& first = latents[0];
  std::vector<double> values;
  values.reserve(latents.size() * first.size());
  for (const auto& l : latents) {
    if (!l.same_shape(first)) throw ShapeError("latents_to_tensor: mixed latent shapes");
    values.insert(values.end(), l.values().begin(), l.values().end());
  }
  return ag::Var::constant({static_cast<int>(latents.size()), first.height(), first.width(), first.channels()},
                           std::move(values));
}

std::vector<LatentGrid> tensor_to_latents(const ag::Var& tensor) {
  if (tensor.rank() != 4) throw ShapeError("tensor_to_latents: expects [B,H,W,C]");
  const int b = tensor.dim(0), h = tensor.dim(1), w = tensor.dim(2), c = tensor.dim(3);
  const std::size_t per = static_cast<std::size_t>(h) * w * c;
  std::vector<LatentGrid> out;
  out.reserve(b);
  for (int i = 0; i < b; ++i) {
    auto begin = tensor.value().begin() + static_cast<std::ptrdiff_t>(i * per);
    out.emplace_back(h, w, c, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(per)));
  }
  return out;
}

void ImageEncoderConfig::validate() const {
  if (widths.size() != 3) throw ParameterError("image encoder needs exactly 3 stride-2 stages (factor 8)");
  for (int w : widths) {
    if (w <= 0) throw ParameterError("image encoder widths must be positive");
  }
}

ImageLatentEncoder::ImageLatentEncoder(const ImageEncoderConfig& config, ParameterStore& store, Rng& rng,
                                       const std::string& prefix) {
  config.validate();
  int in = 3;
  for (std::size_t i = 0; i < config.widths.size(); ++i) {
    const int out = config.widths[i];
    const std::string name = prefix + "down" + std::to_string(i);
    Conv conv;
    conv.weight = store.add_uniform(name + ".weight", {9 * in, out}, 9 * in, rng);
    conv.bias = store.add_uniform(name + ".bias", {out}, 9 * in, rng);
    conv.stride = 2;
    convs_.push_back(conv);
    in = out;
  }
  Conv head;
  head.weight = store.add_uniform(prefix + "head.weight", {9 * in, kImageLatentChannels}, 9 * in, rng);
  head.bias = store.add_uniform(prefix + "head.bias", {kImageLatentChannels}, 9 * in, rng);
  head.stride = 1;
  convs_.push_back(head);
}

ag::Var ImageLatentEncoder::forward(const ag::Var& images) const {
  if (images.rank() != 4 || images.dim(3) != 3) {
    throw ShapeError("encode_image: expected [B,H,W,3], got " + ag::shape_string(images.shape()));
  }
  if (images.dim(1) % kLatentFactor || images.dim(2) % kLatentFactor) {
    throw ShapeError("encode_image: image size " + std::to_string(images.dim(1)) + "x" +
                     std::to_string(images.dim(2)) + " not divisible by 8");
  }
  ag::Var h = images;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = ag::conv2d(h, convs_[i].weight, convs_[i].bias, 3, convs_[i].stride, 1);
    if (i + 1 < convs_.size()) h = ag::silu(h);
  }
  return h;
}

LatentGrid ImageLatentEncoder::encode_image(const RgbImage& image) const {
  ag::NoGradGuard guard;
  const RgbImage* ptr = &image;
  return tensor_to_latents(forward(images_to_tensor(std::span<const RgbImage* const>(&ptr, 1))))[0];
}

LabelDecoder::LabelDecoder(std::uint64_t seed, int width) : width_(width) {
  if (width <= 0) throw ParameterError("label decoder width must be positive");
  Rng rng(seed);
  // conv, (up, conv) x 3, conv-out
  const std::vector<std::pair<int, int>> dims{{1, width}, {width, width}, {width, width}, {width, width}, {width, 1}};
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const auto [in, out] = dims[i];
    const std::string name = "decoder.conv" + std::to_string(i);
    convs_.push_back({store_.add_uniform(name + ".weight", {9 * in, out}, 9 * in, rng),
                      store_.add_uniform(name + ".bias", {out}, 9 * in, rng)});
  }
}

ag::Var LabelDecoder::forward(const ag::Var& latents) const {
  if (latents.rank() != 4 || latents.dim(3) != 1) {
    throw ShapeError("label decoder expects [B,h,w,1], got " + ag::shape_string(latents.shape()));
  }
  ag::Var h = ag::silu(ag::conv2d(latents, convs_[0].weight, convs_[0].bias, 3, 1, 1));
  for (int i = 1; i <= 3; ++i) {
    h = ag::upsample_nearest2(h);
    h = ag::silu(ag::conv2d(h, convs_[i].weight, convs_[i].bias, 3, 1, 1));
  }
  return ag::conv2d(h, convs_[4].weight, convs_[4].bias, 3, 1, 1);
}

std::vector<double> LabelDecoder::decode_values(const LatentGrid& latent) const {
  ag::NoGradGuard guard;
  ag::Var logits = forward(latents_to_tensor(std::span<const LatentGrid>(&latent, 1)));
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 / (1.0 + std::exp(-logits.value()[i])) - 1.0;
  return out;
}

BinaryMask decode_label(const LatentGrid& latent, int target_h, int target_w, const DecodeStrategy& strategy,
                        const LabelDecoder* decoder) {
  if (latent.channels() != 1) throw ShapeError("decode_label: latent must have exactly 1 channel");
  if (target_h <= 0 || target_w <= 0) throw ShapeError("decode_label: target size must be positive");
  strategy.validate();
  std::vector<double> values;
  switch (strategy.kind) {
    case DecodeKind::kBilinearCfg:
      values = bilinear_resize(latent, target_h, target_w);
      break;
    case DecodeKind::kNearest:
      values = nearest_resize(latent, target_h, target_w);
      break;
    case DecodeKind::kLearnedDecoder:
      if (decoder == nullptr) throw ParameterError("learned_decoder strategy needs a trained label decoder");
      if (target_h != latent.height() * kLatentFactor || target_w != latent.width() * kLatentFactor) {
        throw ShapeError("learned decoder produces exactly 8x the latent size");
      }
      values = decoder->decode_values(latent);
      break;
    default:
      throw ParameterError("unknown decode strategy");
  }
  BinaryMask mask(target_h, target_w);
  for (std::size_t i = 0; i < values.size(); ++i) mask.bits[i] = values[i] > strategy.threshold ? 1 : 0;
  return mask;
}

LabelAutoencoderReport train_label_autoencoder(LabelDecoder& decoder, std::span<const BinaryMask> masks,
                                               const LabelAutoencoderConfig& config) {
  if (masks.empty()) throw DataError("label autoencoder needs a nonempty dataset");
  if (config.epochs < 1 || config.batch_size < 1) throw ParameterError("epochs and batch size must be >= 1");
  std::vector<LatentGrid> latents;
  latents.reserve(masks.size());
  for (const auto& m : masks) latents.push_back(encode_label(m));

  auto batch_loss = [&](std::span<const std::size_t> idx) {
    std::vector<LatentGrid> lat;
    std::vector<double> target;
    for (std::size_t i : idx) {
      lat.push_back(latents[i]);
      for (auto b : masks[i].bits) target.push_back(b);
    }
    const auto& m0 = masks[idx[0]];
    ag::Var t = ag::Var::constant({static_cast<int>(idx.size()), m0.height, m0.width, 1}, std::move(target));
    return ag::bce_with_logits(decoder.forward(latents_to_tensor(lat)), t);
  };
  auto full_loss = [&]() {
    ag::NoGradGuard guard;
    double total = 0.0;
    for (std::size_t i = 0; i < masks.size(); ++i) total += batch_loss(std::span<const std::size_t>(&i, 1)).item();
    return total / static_cast<double>(masks.size());
  };

  LabelAutoencoderReport report;
  report.initial_loss = full_loss();
  Adam adam(decoder.parameters());
  AdamConfig adam_config;
  adam_config.learning_rate = config.learning_rate;
  Rng rng(config.seed);
  std::vector<std::size_t> order(masks.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      // Same-size masks only within a batch.
      std::vector<std::size_t> idx;
      for (std::size_t k = start; k < end; ++k) {
        if (masks[order[k]].height == masks[order[start]].height && masks[order[k]].width == masks[order[start]].width) {
          idx.push_back(order[k]);
        }
      }
      decoder.parameters().zero_grad();
      ag::Var loss = batch_loss(idx);
      if (!std::isfinite(loss.item())) throw NumericError("label autoencoder loss is not finite");
      ag::backward(loss);
      adam.step(decoder.parameters(), adam_config);
    }
  }
  report.final_loss = full_loss();
  double iou_sum = 0.0;
  DecodeStrategy strategy{DecodeKind::kLearnedDecoder, 0.0};
  for (std::size_t i = 0; i < masks.size(); ++i) {
    iou_sum += evaluation::iou(decode_label(latents[i], masks[i].height, masks[i].width, strategy, &decoder), masks[i]);
  }
  report.reconstruction_iou = iou_sum / static_cast<double>(masks.size());
  return report;
}

}  // namespace labeldiff
