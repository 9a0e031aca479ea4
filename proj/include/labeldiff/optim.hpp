#pragma once

#include <cstdint>
#include <vector>

#include "labeldiff/parameters.hpp"

namespace labeldiff {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive-moment optimizer with bias correction. Moments are stored per
// parameter in store registration order.
class Adam {
 public:
  Adam() = default;
  explicit Adam(const ParameterStore& store);

  void step(ParameterStore& store, const AdamConfig& config);

  std::int64_t updates() const { return updates_; }
  void set_updates(std::int64_t n) { updates_ = n; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::int64_t updates_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace labeldiff
