#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "labeldiff/errors.hpp"
#include "labeldiff/text_conditioning.hpp"

using namespace labeldiff;
using ag::Var;

namespace {

struct Fixture {
  ParameterStore store;
  Rng rng{3};
  TextConditioner text{PhraseVocabulary::standard(), TextConfig{16, 4}, {32, 64}, store, rng};
};

double max_diff(const Var& a, const Var& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.value()[i] - b.value()[i]));
  return m;
}

Var random_const(ag::Shape shape, Rng& rng) {
  std::vector<double> v(ag::shape_size(shape));
  for (double& x : v) x = standard_normal(rng);
  return Var::constant(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("vocabulary ids and unknown words") {
  const auto vocab = PhraseVocabulary::standard();
  CHECK(vocab.tokens()[0] == PhraseVocabulary::kUnknownToken);
  for (int i = 0; i < vocab.size(); ++i) CHECK(vocab.id(vocab.tokens()[i]) == i);
  CHECK(vocab.id("zebra") == PhraseVocabulary::kUnknownId);
  CHECK(vocab.encode("Red  CIRCLE") == std::vector<int>{vocab.id("red"), vocab.id("circle")});

  const auto path = std::filesystem::temp_directory_path() / "labeldiff_vocab_test.txt";
  vocab.save(path);
  CHECK(PhraseVocabulary::load(path) == vocab);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(PhraseVocabulary({"red"}), DataError);
  CHECK_THROWS_AS(PhraseVocabulary({"<unk>", "red", "red"}), DataError);
}

TEST_CASE("embed_phrase") {
  Fixture f;
  CHECK(max_diff(f.text.embed_phrase("red circle"), f.text.embed_phrase("red circle")) == 0.0);
  CHECK(max_diff(f.text.embed_phrase("red circle"), f.text.embed_phrase("red square")) > 0.0);
  CHECK(max_diff(f.text.embed_phrase("two red squares"), f.text.embed_phrase("squares two red")) == 0.0);

  const Var unk = f.text.embed_phrase("zebra");
  const auto table = f.text.embedding_table().value();
  for (int d = 0; d < 16; ++d) CHECK(unk.value()[d] == table[d]);

  // mean pooling oracle
  const Var e = f.text.embed_phrase("large blue triangle");
  const auto ids = f.text.vocabulary().encode("large blue triangle");
  for (int d = 0; d < 16; ++d) {
    double s = 0.0;
    for (int id : ids) s += table[id * 16 + d];
    CHECK(e.value()[d] == doctest::Approx(s / 3.0).epsilon(1e-14));
  }
  CHECK(e.shape() == ag::Shape{1, 16});
  CHECK_THROWS_AS(f.text.embed_phrase(""), ParameterError);
  CHECK_THROWS_AS(f.text.embed_phrase("   "), ParameterError);
}

TEST_CASE("adapter projections are linear with the configured shapes") {
  Rng rng(4);
  const int d = 6, m = 4;
  const std::array<int, 2> widths{8, 16};
  std::array<Var, 2> w{random_const({d, m * widths[0]}, rng), random_const({d, m * widths[1]}, rng)};
  std::array<Var, 2> b{Var::constant({m * widths[0]}, std::vector<double>(m * widths[0], 0.0)),
                       Var::constant({m * widths[1]}, std::vector<double>(m * widths[1], 0.0))};
  const AdapterStack stack(d, m, widths, w, b);

  const auto zero = stack.project(Var::constant({1, d}, std::vector<double>(d, 0.0)));
  for (const auto& z : zero) {
    for (double v : z.value()) CHECK(v == 0.0);
  }

  const Var u = random_const({1, d}, rng);
  const Var v = random_const({1, d}, rng);
  const auto pu = stack.project(u);
  const auto pv = stack.project(v);
  const auto p2u = stack.project(ag::scale(u, 2.0));
  const auto puv = stack.project(ag::add(u, v));
  for (int l = 0; l < 2; ++l) {
    CHECK(pu[l].shape() == ag::Shape{1, m, widths[l]});
    CHECK(max_diff(p2u[l], ag::scale(pu[l], 2.0)) <= 1e-12);
    CHECK(max_diff(puv[l], ag::add(pu[l], pv[l])) <= 1e-12);
  }
  CHECK_THROWS_AS(stack.project(random_const({1, d + 1}, rng)), ShapeError);
  CHECK_THROWS_AS(AdapterStack(d, m, widths, {w[1], w[0]}, b), ShapeError);
}

TEST_CASE("adapter widths follow the denoiser across a config sweep") {
  for (int base : {4, 8, 32}) {
    for (auto mults : {std::vector<int>{1, 2, 4}, std::vector<int>{1, 1, 2}, std::vector<int>{2, 3, 4, 4}}) {
      for (int m : {0, 1, 4}) {
        DenoiserConfig dc;
        dc.base_width = base;
        dc.channel_mults = mults;
        dc.injection_levels = {static_cast<int>(mults.size()) - 2, static_cast<int>(mults.size()) - 1};
        dc.cross_attention_levels = dc.injection_levels;
        ParameterStore store;
        Rng rng(5);
        TextConditioner text(PhraseVocabulary::standard(), TextConfig{8, m}, dc.adapter_widths(), store, rng);
        const auto cond = text.condition("red circle");
        const auto null = text.null_conditioning();
        REQUIRE(cond.per_layer.size() == 2);
        for (int l = 0; l < 2; ++l) {
          const ag::Shape expected{1, m, dc.width(dc.injection_levels[l])};
          CHECK(cond.per_layer[l].shape() == expected);
          CHECK(null.per_layer[l].shape() == expected);
        }
        CHECK(cond.global.shape() == ag::Shape{1, 8});
      }
    }
  }
}

TEST_CASE("null conditioning") {
  Fixture f;
  const auto a = f.text.null_conditioning();
  const auto b = f.text.null_conditioning();
  CHECK(a.is_null);
  CHECK_FALSE(f.text.condition("red circle").is_null);
  CHECK(max_diff(a.global, b.global) == 0.0);
  for (int l = 0; l < 2; ++l) CHECK(max_diff(a.per_layer[l], b.per_layer[l]) == 0.0);
  CHECK(f.store.find("text.null_global").requires_grad());
}

TEST_CASE("conditional dropout") {
  Fixture f;
  const auto cond = f.text.condition("blue square");
  const auto null = f.text.null_conditioning();
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const auto keep = conditional_dropout(cond, null, 0.0, rng);
    CHECK_FALSE(keep.is_null);
    CHECK(max_diff(keep.global, cond.global) == 0.0);
    CHECK(conditional_dropout(cond, null, 1.0, rng).is_null);
  }
  int dropped = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto out = conditional_dropout(cond, null, 0.1, rng);
    // global and adapter tokens always come from the same source
    const bool g = max_diff(out.global, null.global) == 0.0;
    const bool p0 = out.per_layer[0].shape() == null.per_layer[0].shape() &&
                    max_diff(out.per_layer[0], null.per_layer[0]) == 0.0;
    const bool p1 = max_diff(out.per_layer[1], null.per_layer[1]) == 0.0;
    if (g != p0 || g != p1 || g != out.is_null) FAIL("partial dropout at draw " << i);
    dropped += out.is_null;
  }
  const double rate = static_cast<double>(dropped) / n;
  CHECK(rate >= 0.094);
  CHECK(rate <= 0.106);
  CHECK_THROWS_AS(conditional_dropout(cond, null, 1.5, rng), ParameterError);
  CHECK_THROWS_AS(conditional_dropout(cond, null, -0.1, rng), ParameterError);
}

TEST_CASE("stacked conditioning keeps per-sample rows") {
  Fixture f;
  const std::vector<PhraseConditioning> conds{f.text.condition("red circle"), f.text.null_conditioning(),
                                              f.text.condition("gray pavement")};
  const auto batch = stack_conditioning(conds);
  CHECK(batch.global.shape() == ag::Shape{3, 16});
  CHECK(batch.per_layer[1].shape() == ag::Shape{3, 4, 64});
  for (int i = 0; i < 3; ++i) {
    for (int d = 0; d < 16; ++d) CHECK(batch.global.value()[i * 16 + d] == conds[i].global.value()[d]);
  }
  CHECK_THROWS_AS(stack_conditioning(std::span<const PhraseConditioning>()), ShapeError);
}
