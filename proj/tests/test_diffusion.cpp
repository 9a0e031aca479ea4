#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "labeldiff/diffusion.hpp"
#include "labeldiff/errors.hpp"

using namespace labeldiff;
using namespace labeldiff::diffusion;

namespace {

void check_schedule(const NoiseSchedule& s) {
  double running = 1.0;
  for (int t = 0; t < s.total_steps(); ++t) {
    CHECK(s.beta(t) > 0.0);
    CHECK(s.beta(t) < 1.0);
    CHECK(s.alpha(t) == doctest::Approx(1.0 - s.beta(t)).epsilon(1e-15));
    running *= s.alpha(t);
    CHECK(std::abs(s.alpha_bar(t) - running) <= 1e-12 * running);
    if (t > 0) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  }
}

// True noise given the clean signal: (xt - sqrt(abar) x0) / sqrt(1 - abar).
LatentGrid oracle_eps(const LatentGrid& xt, const LatentGrid& x0, int t, const NoiseSchedule& s) {
  LatentGrid e(xt.height(), xt.width(), xt.channels());
  const double ab = s.alpha_bar(t);
  for (std::size_t i = 0; i < e.size(); ++i) {
    e.values()[i] = (xt.values()[i] - std::sqrt(ab) * x0.values()[i]) / std::sqrt(1.0 - ab);
  }
  return e;
}

}  // namespace

TEST_CASE("linear schedule tables") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  CHECK(s.total_steps() == 1000);
  CHECK(s.alpha_bar(0) == doctest::Approx(0.9999).epsilon(1e-15));
  double product = 1.0;
  for (int t = 0; t < 1000; ++t) product *= 1.0 - (1e-4 + (0.02 - 1e-4) * t / 999.0);
  CHECK(std::abs(s.alpha_bar(999) - product) <= 1e-12 * product);
  CHECK(s.beta(999) == doctest::Approx(0.02).epsilon(1e-14));
  check_schedule(s);
}

TEST_CASE("one-step degenerate schedule") {
  const auto s = make_linear_schedule(1, 0.5, 0.5);
  CHECK(s.betas() == std::vector<double>{0.5});
  CHECK(s.alpha_bars() == std::vector<double>{0.5});
}

TEST_CASE("cosine schedule invariants") {
  check_schedule(make_cosine_schedule(1000));
  check_schedule(make_cosine_schedule(10));
  check_schedule(make_schedule({ScheduleKind::kCosine, 50, 0, 0}));
}

TEST_CASE("schedule parameter errors") {
  CHECK_THROWS_AS(make_linear_schedule(0, 1e-4, 0.02), ParameterError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.02), ParameterError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.03, 0.02), ParameterError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.1, 1.0), ParameterError);
  CHECK_THROWS_AS(parse_schedule_kind("quadratic"), ParameterError);
}

TEST_CASE("ddim timestep subsequence") {
  for (int steps : {1, 2, 20, 30, 50, 1000}) {
    const auto ts = ddim_timesteps(1000, steps);
    REQUIRE(static_cast<int>(ts.size()) == steps);
    CHECK(ts.front() == 999);
    if (steps > 1) CHECK(ts.back() == 0);
    for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
  }
  CHECK(ddim_timesteps(1000, 1000)[1] == 998);
  CHECK_THROWS_AS(ddim_timesteps(1000, 0), ParameterError);
  CHECK_THROWS_AS(ddim_timesteps(1000, 1001), ParameterError);
  GuidanceConfig g;
  g.ddim_steps = 2000;
  CHECK_THROWS_AS(g.validate(1000), ParameterError);
  g.ddim_steps = 50;
  g.scale = -1.0;
  CHECK_THROWS_AS(g.validate(1000), ParameterError);
}

TEST_CASE("forward_noise limits and scalar value") {
  Rng rng(1);
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  const LatentGrid x0 = testing::random_grid(4, 4, 1, rng);
  const LatentGrid zeros(4, 4, 1);
  const int t = 321;
  const auto a = forward_noise(x0, t, zeros, s);
  const auto b = forward_noise(zeros, t, x0, s);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    CHECK(a.values()[i] == std::sqrt(s.alpha_bar(t)) * x0.values()[i]);
    CHECK(b.values()[i] == std::sqrt(1.0 - s.alpha_bar(t)) * x0.values()[i]);
  }
  const auto quarter = make_linear_schedule(1, 0.75, 0.75);
  const auto x = forward_noise(LatentGrid(1, 1, 1, 1.0), 0, LatentGrid(1, 1, 1, 1.0), quarter);
  CHECK(x.at(0, 0) == doctest::Approx(1.3660254037844386).epsilon(1e-14));
  CHECK_THROWS_AS(forward_noise(x0, t, LatentGrid(4, 2, 1), s), ShapeError);
}

TEST_CASE("recover_x0 inverts forward_noise") {
  Rng rng(2);
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  for (int t : {0, 1, 500, 999}) {
    for (int rep = 0; rep < 5; ++rep) {
      const auto x0 = testing::random_grid(8, 8, 1, rng);
      const auto eps = testing::random_grid(8, 8, 1, rng);
      CHECK(recover_x0(forward_noise(x0, t, eps, s), t, eps, s).max_abs_diff(x0) <= 1e-10);
    }
  }
  const auto x0 = testing::random_grid(3, 3, 1, rng);
  const LatentGrid zeros(3, 3, 1);
  CHECK(recover_x0(forward_noise(x0, 10, zeros, s), 10, zeros, s).max_abs_diff(x0) <= 1e-12);
}

TEST_CASE("cfg_combine identities") {
  Rng rng(3);
  const auto u = testing::random_grid(8, 8, 1, rng);
  const auto c = testing::random_grid(8, 8, 1, rng);
  CHECK(cfg_combine(u, c, 1.0) == c);
  for (double w : {0.0, 1.0, 3.0, 7.5}) CHECK(cfg_combine(u, u, w) == u);
  CHECK(cfg_combine(LatentGrid(1, 1, 1, 0.0), LatentGrid(1, 1, 1, 1.0), 7.5).at(0, 0) == 7.5);
  for (auto [w1, w2] : {std::pair{0.0, 7.5}, std::pair{1.0, 3.0}, std::pair{2.5, 12.0}}) {
    const auto lhs = cfg_combine(u, c, w1);
    const auto rhs = cfg_combine(u, c, w2);
    const auto mid = cfg_combine(u, c, 0.5 * (w1 + w2));
    for (std::size_t i = 0; i < u.size(); ++i) {
      CHECK(std::abs(lhs.values()[i] + rhs.values()[i] - 2.0 * mid.values()[i]) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(cfg_combine(u, LatentGrid(4, 4, 1), 2.0), ShapeError);
}

TEST_CASE("ddpm step") {
  Rng rng(4);
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  const auto xt = testing::random_grid(4, 4, 1, rng);
  const auto eps = testing::random_grid(4, 4, 1, rng);
  CHECK(ddpm_sigma(0, s) == 0.0);
  CHECK(ddpm_step(xt, 0, eps, s, testing::random_grid(4, 4, 1, rng)) ==
        ddpm_step(xt, 0, eps, s, testing::random_grid(4, 4, 1, rng)));

  const auto one = make_linear_schedule(1, 0.3, 0.3);
  const auto x0 = testing::random_grid(4, 4, 1, rng);
  const auto x1 = forward_noise(x0, 0, eps, one);
  CHECK(ddpm_step(x1, 0, eps, one, LatentGrid(4, 4, 1, 5.0)).max_abs_diff(x0) <= 1e-10);

  const int t = 500;
  const double sigma2 = s.beta(t) * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t));
  CHECK(ddpm_sigma(t, s) == doctest::Approx(std::sqrt(sigma2)).epsilon(1e-14));
  const int n = 10000;
  const LatentGrid x(2, 2, 1, 0.3);
  const LatentGrid e(2, 2, 1, -0.2);
  std::vector<double> sum(4, 0.0), sum2(4, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto out = ddpm_step(x, t, e, s, testing::random_grid(2, 2, 1, rng));
    for (int k = 0; k < 4; ++k) {
      sum[k] += out.values()[k];
      sum2[k] += out.values()[k] * out.values()[k];
    }
  }
  for (int k = 0; k < 4; ++k) {
    const double mean = sum[k] / n;
    const double var = (sum2[k] - n * mean * mean) / (n - 1);
    CHECK(std::abs(var - sigma2) <= 0.05 * sigma2);
  }
}

TEST_CASE("ddim step with the true noise") {
  Rng rng(5);
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  const auto x0 = testing::random_grid(8, 8, 1, rng);
  for (int t : {0, 1, 250, 999}) {
    const auto eps = testing::random_grid(8, 8, 1, rng);
    const auto xt = forward_noise(x0, t, eps, s);
    CHECK(ddim_step(xt, t, -1, eps, s).max_abs_diff(x0) <= 1e-10);
  }
  const auto eps = testing::random_grid(8, 8, 1, rng);
  const auto xt = forward_noise(x0, 400, eps, s);
  CHECK(ddim_step(xt, 400, -1, eps, s) == recover_x0(xt, 400, eps, s));
  CHECK_THROWS_AS(ddim_step(xt, 400, 400, eps, s), ParameterError);
  CHECK_THROWS_AS(ddim_step(xt, 400, 401, eps, s), ParameterError);

  // Clipped x0 estimates stay in range.
  const auto wild = ddim_step(LatentGrid(2, 2, 1, 50.0), 10, -1, LatentGrid(2, 2, 1, 0.0), s, 1.0);
  CHECK(wild.at(0, 0) == 1.0);

  // in range: clipping changes nothing
  const auto small = forward_noise(LatentGrid(8, 8, 1, 0.5), 300, eps, s);
  CHECK(ddim_step(small, 300, 100, eps, s, 1.0).max_abs_diff(ddim_step(small, 300, 100, eps, s)) <= 1e-12);

  // out of range: the re-noised sample sits on the clamped estimate
  const auto big = testing::random_grid(4, 4, 1, rng);
  const auto e4 = testing::random_grid(4, 4, 1, rng);
  const auto xt4 = forward_noise(LatentGrid(4, 4, 1, 3.0), 600, e4, s);
  const auto stepped = ddim_step(xt4, 600, 200, big, s, 1.0);
  auto clamped = recover_x0(xt4, 600, big, s);
  for (double& v : clamped.values()) v = std::clamp(v, -1.0, 1.0);
  LatentGrid implied(4, 4, 1);
  for (std::size_t i = 0; i < implied.size(); ++i) {
    implied.values()[i] = (xt4.values()[i] - std::sqrt(s.alpha_bar(600)) * clamped.values()[i]) /
                          std::sqrt(1.0 - s.alpha_bar(600));
  }
  CHECK(stepped.max_abs_diff(forward_noise(clamped, 200, implied, s)) <= 1e-12);
  CHECK(recover_x0(stepped, 200, implied, s).max_abs_diff(clamped) <= 1e-12);
}

TEST_CASE("oracle DDIM trajectory matches the DDPM mean path") {
  Rng rng(6);
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  const auto x0 = testing::random_grid(8, 8, 1, rng);
  const auto start = testing::random_grid(8, 8, 1, rng);

  LatentGrid ddim = start;
  const auto ts = ddim_timesteps(1000, 50);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int prev = i + 1 < ts.size() ? ts[i + 1] : -1;
    ddim = ddim_step(ddim, ts[i], prev, oracle_eps(ddim, x0, ts[i], s), s);
  }
  LatentGrid ddpm = start;
  const LatentGrid zeros(8, 8, 1);
  for (int t = 999; t >= 0; --t) ddpm = ddpm_step(ddpm, t, oracle_eps(ddpm, x0, t, s), s, zeros);

  CHECK(ddim.max_abs_diff(x0) <= 1e-10);
  CHECK(ddim.max_abs_diff(ddpm) <= 1e-6);
}

TEST_CASE("sampler and schedule names round-trip") {
  CHECK(parse_sampler_kind(to_string(SamplerKind::kDdim)) == SamplerKind::kDdim);
  CHECK(parse_sampler_kind(to_string(SamplerKind::kDdpm)) == SamplerKind::kDdpm);
  CHECK(parse_schedule_kind(to_string(ScheduleKind::kCosine)) == ScheduleKind::kCosine);
  CHECK_THROWS_AS(parse_sampler_kind("euler"), ParameterError);
  GuidanceConfig g;
  CHECK(g.scale == 7.5);
  CHECK(g.ddim_steps == 50);
  CHECK(g.sampler == SamplerKind::kDdim);
  CHECK(g.guided());
  g.scale = 1.0;
  CHECK_FALSE(g.guided());
}
