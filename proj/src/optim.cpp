#include "labeldiff/optim.hpp"

#include <cmath>

#include "labeldiff/errors.hpp"

namespace labeldiff {

Adam::Adam(const ParameterStore& store) {
  for (const auto& p : store.parameters()) {
    m_.emplace_back(p.var.size(), 0.0);
    v_.emplace_back(p.var.size(), 0.0);
  }
}

void Adam::step(ParameterStore& store, const AdamConfig& config) {
  auto& params = store.parameters();
  if (params.size() != m_.size()) throw ParameterError("optimizer state does not match parameter store");
  ++updates_;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(updates_));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(updates_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ag::Var var = params[i].var;
    // Parameters untouched by the graph still decay their moments.
    const auto grad = var.mutable_grad();
    auto value = var.mutable_value();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * grad[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * grad[k] * grad[k];
      value[k] -= config.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + config.epsilon);
    }
  }
}

}  // namespace labeldiff
