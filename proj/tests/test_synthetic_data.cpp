#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "labeldiff/errors.hpp"
#include "labeldiff/pipeline.hpp"
#include "labeldiff/synthetic_data.hpp"

using namespace labeldiff;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("labeldiff_" + name);
  fs::remove_all(dir);
  return dir;
}

bool disjoint(const BinaryMask& a, const BinaryMask& b) {
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    if (a.bits[i] && b.bits[i]) return false;
  }
  return true;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

long resident_kb() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("VmRSS:", 0) == 0) return std::stol(line.substr(6));
  }
  return -1;
}

}  // namespace

TEST_CASE("scene generation is deterministic") {
  const auto a = generate_scene(42);
  const auto b = generate_scene(42);
  CHECK(a.image == b.image);
  REQUIRE(a.phrases.size() == b.phrases.size());
  for (std::size_t i = 0; i < a.phrases.size(); ++i) {
    CHECK(a.phrases[i].text == b.phrases[i].text);
    CHECK(a.phrases[i].mask == b.phrases[i].mask);
  }
  CHECK_FALSE(generate_scene(43).image == a.image);
}

TEST_CASE("scene audit over 1000 seeds") {
  std::set<std::string> texts;
  int plurals = 0, singulars = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto s = generate_scene(seed);
    REQUIRE(s.image.height == 64);
    const auto* bg = s.background();
    REQUIRE(bg != nullptr);
    CHECK(bg->thing_stuff == ThingStuff::kStuff);
    CHECK(bg->mask.count() >= 64u * 64u / 10u);
    std::vector<const PhraseAnnotation*> things;
    for (const auto& p : s.phrases) {
      texts.insert(p.text);
      CHECK(p.mask.height == 64);
      CHECK(p.mask.width == 64);
      CHECK(p.mask.count() > 0u);
      const bool counted = p.text.rfind("two ", 0) == 0 || p.text.rfind("three ", 0) == 0;
      CHECK((p.number == Number::kPlural) == counted);
      if (p.thing_stuff == ThingStuff::kThing) {
        things.push_back(&p);
        CHECK(disjoint(p.mask, bg->mask));
        if (p.number == Number::kPlural) {
          ++plurals;
          const std::size_t expected = p.text.rfind("two ", 0) == 0 ? 2u : 3u;
          REQUIRE(p.instances.size() == expected);
          BinaryMask uni(64, 64);
          for (std::size_t i = 0; i < p.instances.size(); ++i) {
            CHECK(p.instances[i].count() > 0u);
            for (std::size_t j = i + 1; j < p.instances.size(); ++j) CHECK(disjoint(p.instances[i], p.instances[j]));
            uni = mask_union(uni, p.instances[i]);
          }
          CHECK(uni == p.mask);
        } else {
          ++singulars;
          CHECK(p.instances.size() == 1u);
        }
      }
    }
    CHECK(things.size() >= 1u);
    CHECK(things.size() <= 3u);
    for (std::size_t i = 0; i < things.size(); ++i) {
      for (std::size_t j = i + 1; j < things.size(); ++j) CHECK(disjoint(things[i]->mask, things[j]->mask));
    }
    // background is the complement of every shape
    BinaryMask all = bg->mask;
    for (const auto* t : things) all = mask_union(all, t->mask);
    CHECK(all.count() == 64u * 64u);
  }
  CHECK(plurals > 100);
  CHECK(singulars > 100);
  CHECK(texts.count("two red circles") + texts.count("three red circles") > 0u);
}

TEST_CASE("scene spec validation") {
  SceneSpec spec;
  spec.image_size = 60;
  CHECK_THROWS_AS(generate_scene(1, spec), ParameterError);
  spec = {};
  spec.min_groups = 0;
  CHECK_THROWS_AS(generate_scene(1, spec), ParameterError);
  spec = {};
  spec.image_size = 32;
  CHECK(generate_scene(1, spec).image.width == 32);
  // impossible to place: shapes larger than the image
  spec = {};
  spec.min_groups = 3;
  spec.min_radius_fraction = 0.45;
  spec.max_radius_fraction = 0.49;
  spec.plural_probability = 1.0;
  spec.placement_attempts = 5;
  spec.scene_restarts = 2;
  CHECK_THROWS_AS(generate_scene(1, spec), GenerationError);
}

TEST_CASE("manifest round trip") {
  const auto dir = fresh_dir("manifest_roundtrip");
  const auto scenes = generate_scenes(6, 5);
  write_manifest(scenes, dir);
  CHECK(fs::exists(dir / "images" / "0005.png"));
  CHECK(fs::exists(dir / "masks" / "0000_0.png"));
  const auto loaded = load_manifest(dir);
  REQUIRE(loaded.size() == scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    CHECK(loaded[i].image == scenes[i].image);
    CHECK(loaded[i].seed == scenes[i].seed);
    REQUIRE(loaded[i].phrases.size() == scenes[i].phrases.size());
    for (std::size_t k = 0; k < scenes[i].phrases.size(); ++k) {
      CHECK(loaded[i].phrases[k].text == scenes[i].phrases[k].text);
      CHECK(loaded[i].phrases[k].mask == scenes[i].phrases[k].mask);
      CHECK(loaded[i].phrases[k].thing_stuff == scenes[i].phrases[k].thing_stuff);
      CHECK(loaded[i].phrases[k].number == scenes[i].phrases[k].number);
    }
  }
  const auto manifest = read_manifest(dir);
  CHECK(manifest.entries[3].stem() == "0003");
  fs::remove_all(dir);
}

TEST_CASE("manifest load errors") {
  const auto dir = fresh_dir("manifest_errors");
  write_manifest(generate_scenes(3, 9), dir);
  const auto index = dir / "manifest.jsonl";
  const std::string good = read_text(index);

  fs::rename(dir / "masks" / "0001_0.png", dir / "moved.png");
  try {
    read_manifest(dir);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("0001_0.png") != std::string::npos);
  }
  fs::rename(dir / "moved.png", dir / "masks" / "0001_0.png");
  CHECK_NOTHROW(read_manifest(dir));

  std::string bad = good;
  bad.replace(bad.find("\"singular\""), 10, "\"several\"");
  write_text(index, bad);
  try {
    read_manifest(dir);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("manifest.jsonl:") != std::string::npos);
    CHECK(std::string(e.what()).find("several") != std::string::npos);
  }

  bad = good;
  bad.replace(bad.find("\"version\":1"), 11, "\"version\":7");
  write_text(index, bad);
  try {
    read_manifest(dir);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }

  write_text(index, good + "{not json\n");
  CHECK_THROWS_AS(read_manifest(dir), DataError);
  CHECK_THROWS_AS(read_manifest(dir / "nope"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("dataset split") {
  SceneManifest m;
  for (int i = 0; i < 100; ++i) {
    ManifestEntry e;
    e.image_path = "images/" + std::to_string(i) + ".png";
    m.entries.push_back(e);
  }
  const auto [train, test] = split_dataset(m, 0.8, 3);
  CHECK(train.entries.size() == 80u);
  CHECK(test.entries.size() == 20u);
  std::set<std::string> a, b;
  for (const auto& e : train.entries) a.insert(e.image_path);
  for (const auto& e : test.entries) b.insert(e.image_path);
  CHECK(a.size() == 80u);
  for (const auto& p : b) CHECK(a.count(p) == 0u);
  a.insert(b.begin(), b.end());
  CHECK(a.size() == 100u);

  const auto again = split_dataset(m, 0.8, 3);
  for (std::size_t i = 0; i < test.entries.size(); ++i) CHECK(again.second.entries[i].image_path == test.entries[i].image_path);
  const auto other = split_dataset(m, 0.8, 4);
  bool differs = false;
  for (std::size_t i = 0; i < test.entries.size(); ++i) differs |= other.second.entries[i].image_path != test.entries[i].image_path;
  CHECK(differs);

  CHECK_THROWS_AS(split_dataset(m, 0.0, 1), ParameterError);
  CHECK_THROWS_AS(split_dataset(m, 1.0, 1), ParameterError);
  CHECK_THROWS_AS(split_dataset(m, 0.999, 1), ParameterError);
}

TEST_CASE("streaming load keeps memory bounded") {
  const auto dir = fresh_dir("manifest_stream");
  {
    ManifestWriter writer(dir);
    for (std::uint64_t i = 0; i < 1000; ++i) writer.add(generate_scene(derive_seed(17, i)));
    writer.finish();
  }
  const auto full = read_manifest(dir);
  REQUIRE(full.entries.size() == 1000u);
  auto growth = [&](std::size_t count) {
    SceneManifest m = full;
    m.entries.resize(count);
    SceneStream stream(m);
    const long start = resident_kb();
    long peak = start;
    std::size_t seen = 0;
    while (auto s = stream.next()) {
      ++seen;
      if (seen % 10 == 0) peak = std::max(peak, resident_kb());
    }
    CHECK(seen == count);
    return peak - start;
  };
  growth(100);  // warm-up
  const long g100 = growth(100);
  const long g1000 = growth(1000);
  INFO("growth 100: " << g100 << " kB, 1000: " << g1000 << " kB");
  CHECK(g1000 <= g100 + 1024);
  fs::remove_all(dir);
}
