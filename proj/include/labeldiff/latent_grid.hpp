#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace labeldiff {

// Dense height x width x channels array (channel-fastest). Carries clean and
// noisy label latents, image latents and Gaussian noise.
class LatentGrid {
 public:
  LatentGrid() = default;
  LatentGrid(int height, int width, int channels, double fill = 0.0);
  LatentGrid(int height, int width, int channels, std::vector<double> values);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return values_.size(); }

  double& at(int y, int x, int c = 0) {
    return values_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  double at(int y, int x, int c = 0) const {
    return values_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool same_shape(const LatentGrid& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  bool all_finite() const;
  double max_abs_diff(const LatentGrid& other) const;

  friend bool operator==(const LatentGrid&, const LatentGrid&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> values_;
};

}  // namespace labeldiff
