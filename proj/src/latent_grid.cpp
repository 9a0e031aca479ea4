#include "labeldiff/latent_grid.hpp"

#include <algorithm>
#include <cmath>

#include "labeldiff/errors.hpp"

namespace labeldiff {

LatentGrid::LatentGrid(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw ShapeError("latent grid dimensions must be positive");
  }
  values_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

LatentGrid::LatentGrid(int height, int width, int channels, std::vector<double> values)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw ShapeError("latent grid dimensions must be positive");
  }
  if (values_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw ShapeError("latent grid value count does not match dimensions");
  }
}

bool LatentGrid::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double LatentGrid::max_abs_diff(const LatentGrid& other) const {
  if (!same_shape(other)) throw ShapeError("max_abs_diff on differently shaped grids");
  double m = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    m = std::max(m, std::abs(values_[i] - other.values_[i]));
  }
  return m;
}

}  // namespace labeldiff
