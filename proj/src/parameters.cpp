#include "labeldiff/parameters.hpp"

#include <algorithm>
#include <cmath>

#include "labeldiff/errors.hpp"

namespace labeldiff {

ag::Var ParameterStore::add(const std::string& name, ag::Shape shape, std::vector<double> values) {
  for (const auto& p : params_) {
    if (p.name == name) throw ParameterError("duplicate parameter name '" + name + "'");
  }
  ag::Var v = ag::Var::parameter(std::move(shape), std::move(values));
  params_.push_back({name, v});
  return v;
}

ag::Var ParameterStore::add_uniform(const std::string& name, ag::Shape shape, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> values(ag::shape_size(shape));
  for (double& v : values) v = (2.0 * uniform01(rng) - 1.0) * bound;
  return add(name, std::move(shape), std::move(values));
}

ag::Var ParameterStore::add_normal(const std::string& name, ag::Shape shape, double stddev, Rng& rng) {
  std::vector<double> values(ag::shape_size(shape));
  for (double& v : values) v = stddev * standard_normal(rng);
  return add(name, std::move(shape), std::move(values));
}

ag::Var ParameterStore::add_constant(const std::string& name, ag::Shape shape, double value) {
  std::vector<double> values(ag::shape_size(shape), value);
  return add(name, std::move(shape), std::move(values));
}

ag::Var ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.var;
  }
  throw ParameterError("no parameter named '" + name + "'");
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

bool ParameterStore::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](const NamedParameter& p) {
    const auto v = p.var.value();
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  });
}

}  // namespace labeldiff
