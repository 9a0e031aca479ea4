#pragma once

#include <string>
#include <vector>

#include "labeldiff/autograd.hpp"
#include "labeldiff/rng.hpp"

namespace labeldiff {

struct NamedParameter {
  std::string name;
  ag::Var var;
};

// Ordered, named collection of trainable tensors. Registration order is the
// serialization order and the optimizer-moment order.
class ParameterStore {
 public:
  ag::Var add(const std::string& name, ag::Shape shape, std::vector<double> values);
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  ag::Var add_uniform(const std::string& name, ag::Shape shape, int fan_in, Rng& rng);
  ag::Var add_normal(const std::string& name, ag::Shape shape, double stddev, Rng& rng);
  ag::Var add_constant(const std::string& name, ag::Shape shape, double value);

  const std::vector<NamedParameter>& parameters() const { return params_; }
  ag::Var find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();
  bool all_finite() const;

 private:
  std::vector<NamedParameter> params_;
};

}  // namespace labeldiff
