#include "labeldiff/synthetic_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "json.hpp"
#include "labeldiff/errors.hpp"
#include "labeldiff/rng.hpp"

namespace labeldiff {

namespace {

struct Colour {
  const char* name;
  std::array<int, 3> rgb;
};

constexpr std::array<Colour, 6> kThingColours{{
    {"red", {220, 40, 40}},
    {"blue", {40, 70, 220}},
    {"yellow", {230, 210, 40}},
    {"purple", {140, 50, 170}},
    {"orange", {240, 140, 30}},
    {"white", {240, 240, 240}},
}};

enum class Texture { kGrass, kPavement, kSand, kWater };

struct StuffKind {
  const char* phrase;
  std::array<int, 3> rgb;
  Texture texture;
};

constexpr std::array<StuffKind, 4> kStuffKinds{{
    {"green grass", {60, 140, 60}, Texture::kGrass},
    {"gray pavement", {125, 125, 125}, Texture::kPavement},
    {"brown sand", {150, 110, 70}, Texture::kSand},
    {"teal water", {40, 140, 140}, Texture::kWater},
}};

enum class ShapeKind { kCircle, kSquare, kTriangle };

constexpr std::array<std::pair<const char*, const char*>, 3> kShapeNouns{{
    {"circle", "circles"},
    {"square", "squares"},
    {"triangle", "triangles"},
}};

struct Placed {
  ShapeKind kind;
  double cx, cy, r;
};

bool inside(const Placed& s, double px, double py) {
  const double dx = px - s.cx;
  const double dy = py - s.cy;
  switch (s.kind) {
    case ShapeKind::kCircle:
      return dx * dx + dy * dy <= s.r * s.r;
    case ShapeKind::kSquare:
      return std::abs(dx) <= 0.9 * s.r && std::abs(dy) <= 0.9 * s.r;
    case ShapeKind::kTriangle:
      // Upward isosceles triangle inscribed in the bounding box.
      return dy >= -s.r && dy <= s.r && std::abs(dx) <= 0.5 * (dy + s.r);
  }
  return false;
}

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

double texture_offset(Texture texture, int y, int x, double phase, Rng& rng) {
  const double noise = 2.0 * uniform01(rng) - 1.0;
  switch (texture) {
    case Texture::kGrass:
      return 18.0 * std::sin(1.7 * x + phase) + 10.0 * noise;
    case Texture::kPavement:
      return 22.0 * noise;
    case Texture::kSand:
      return 8.0 * std::sin(0.6 * (x + y) + phase) + 12.0 * noise;
    case Texture::kWater:
      return 20.0 * std::sin(0.8 * y + phase) + 6.0 * noise;
  }
  return 0.0;
}

std::string format_index(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04zu", i);
  return buf;
}

std::optional<Scene> try_generate(std::uint64_t seed, const SceneSpec& spec, Rng& rng) {
  const int size = spec.image_size;
  Scene scene;
  scene.seed = seed;
  scene.image = RgbImage(size, size);

  const StuffKind& stuff = kStuffKinds[uniform_index(rng, kStuffKinds.size())];
  const double phase = 2.0 * std::numbers::pi * uniform01(rng);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double off = texture_offset(stuff.texture, y, x, phase, rng);
      for (int c = 0; c < 3; ++c) scene.image.at(y, x, c) = clamp_byte(stuff.rgb[c] + off);
    }
  }

  const int groups = spec.min_groups +
                     static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(spec.max_groups - spec.min_groups + 1)));
  std::vector<std::size_t> colour_order(kThingColours.size());
  std::iota(colour_order.begin(), colour_order.end(), 0);
  for (std::size_t i = colour_order.size() - 1; i > 0; --i) {
    std::swap(colour_order[i], colour_order[uniform_index(rng, i + 1)]);
  }

  const double rmin = spec.min_radius_fraction * size;
  const double rmax = spec.max_radius_fraction * size;
  std::vector<Placed> placed;
  BinaryMask occupied(size, size);

  for (int g = 0; g < groups; ++g) {
    const Colour& colour = kThingColours[colour_order[g]];
    const auto kind = static_cast<ShapeKind>(uniform_index(rng, 3));
    int count = 1;
    if (uniform01(rng) < spec.plural_probability) count = uniform01(rng) < 0.75 ? 2 : 3;

    PhraseAnnotation phrase;
    phrase.mask = BinaryMask(size, size);
    phrase.thing_stuff = ThingStuff::kThing;
    phrase.number = count > 1 ? Number::kPlural : Number::kSingular;
    double radius_sum = 0.0;
    for (int i = 0; i < count; ++i) {
      bool ok = false;
      for (int attempt = 0; attempt < spec.placement_attempts && !ok; ++attempt) {
        const double r = rmin + (rmax - rmin) * uniform01(rng);
        const double lo = r + 1.0;
        const double hi = size - r - 1.0;
        if (hi <= lo) continue;
        const Placed cand{kind, lo + (hi - lo) * uniform01(rng), lo + (hi - lo) * uniform01(rng), r};
        // Bounding boxes separated by at least 2 px keep instances disjoint.
        const bool clear = std::none_of(placed.begin(), placed.end(), [&](const Placed& o) {
          return std::abs(o.cx - cand.cx) < o.r + cand.r + 2.0 && std::abs(o.cy - cand.cy) < o.r + cand.r + 2.0;
        });
        if (!clear) continue;
        BinaryMask inst(size, size);
        for (int y = 0; y < size; ++y) {
          for (int x = 0; x < size; ++x) inst.at(y, x) = inside(cand, x + 0.5, y + 0.5) ? 1 : 0;
        }
        if (inst.count() == 0) continue;
        placed.push_back(cand);
        radius_sum += r;
        for (int y = 0; y < size; ++y) {
          for (int x = 0; x < size; ++x) {
            if (!inst.at(y, x)) continue;
            const double noise = 10.0 * (2.0 * uniform01(rng) - 1.0);
            for (int c = 0; c < 3; ++c) scene.image.at(y, x, c) = clamp_byte(colour.rgb[c] + noise);
            occupied.at(y, x) = 1;
          }
        }
        phrase.mask = mask_union(phrase.mask, inst);
        phrase.instances.push_back(std::move(inst));
        ok = true;
      }
      if (!ok) return std::nullopt;
    }

    const auto& noun = kShapeNouns[static_cast<int>(kind)];
    if (count > 1) {
      phrase.text = std::string(count == 2 ? "two " : "three ") + colour.name + " " + noun.second;
    } else {
      std::string size_word;
      if (uniform01(rng) < spec.size_word_probability) {
        size_word = radius_sum < 0.5 * (rmin + rmax) ? "small " : "large ";
      }
      phrase.text = size_word + colour.name + " " + noun.first;
    }
    scene.phrases.push_back(std::move(phrase));
  }

  PhraseAnnotation background;
  background.text = stuff.phrase;
  background.thing_stuff = ThingStuff::kStuff;
  background.number = Number::kSingular;
  background.mask = BinaryMask(size, size);
  for (std::size_t i = 0; i < occupied.bits.size(); ++i) background.mask.bits[i] = occupied.bits[i] ? 0 : 1;
  if (background.mask.count() * 10 < background.mask.bits.size()) return std::nullopt;
  scene.phrases.push_back(std::move(background));
  return scene;
}

}  // namespace

const PhraseAnnotation* Scene::background() const {
  for (const auto& p : phrases) {
    if (p.thing_stuff == ThingStuff::kStuff) return &p;
  }
  return nullptr;
}

void SceneSpec::validate() const {
  if (image_size <= 0 || image_size % 8) throw ParameterError("scene image size must be a positive multiple of 8");
  if (min_groups < 1 || max_groups < min_groups) throw ParameterError("shape group range must satisfy 1 <= min <= max");
  if (max_groups > static_cast<int>(kThingColours.size())) {
    throw ParameterError("at most " + std::to_string(kThingColours.size()) + " shape groups (one colour each)");
  }
  if (!(min_radius_fraction > 0.0 && min_radius_fraction <= max_radius_fraction && max_radius_fraction < 0.5)) {
    throw ParameterError("radius fractions must satisfy 0 < min <= max < 0.5");
  }
  if (placement_attempts < 1 || scene_restarts < 1) throw ParameterError("retry budgets must be >= 1");
}

Scene generate_scene(std::uint64_t seed, const SceneSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(seed, 0));
  for (int restart = 0; restart < spec.scene_restarts; ++restart) {
    if (auto scene = try_generate(seed, spec, rng)) return std::move(*scene);
  }
  throw GenerationError("could not place shapes for seed " + std::to_string(seed) + " after " +
                        std::to_string(spec.scene_restarts) + " restarts");
}

std::string ManifestEntry::stem() const { return std::filesystem::path(image_path).stem().string(); }

ManifestWriter::ManifestWriter(const std::filesystem::path& dir, const std::string& manifest_name)
    : dir_(dir), manifest_name_(manifest_name) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (!ec) std::filesystem::create_directories(dir / "masks", ec);
  if (ec) throw DataError("cannot create dataset directory '" + dir.string() + "': " + ec.message());
  manifest_.root = dir;
}

void ManifestWriter::add(const Scene& scene) {
  if (finished_) throw DataError("manifest writer already finished");
  const std::string idx = format_index(manifest_.entries.size());
  ManifestEntry entry;
  entry.image_path = "images/" + idx + ".png";
  entry.seed = scene.seed;
  write_png(dir_ / entry.image_path, scene.image);
  for (std::size_t k = 0; k < scene.phrases.size(); ++k) {
    const auto& p = scene.phrases[k];
    ManifestPhrase mp{p.text, "masks/" + idx + "_" + std::to_string(k) + ".png", p.thing_stuff, p.number};
    write_png(dir_ / mp.mask_path, p.mask);
    entry.phrases.push_back(std::move(mp));
  }
  manifest_.entries.push_back(std::move(entry));
}

void ManifestWriter::finish() {
  if (finished_) return;
  write_manifest_index(manifest_, dir_ / manifest_name_);
  finished_ = true;
}

void write_manifest(std::span<const Scene> scenes, const std::filesystem::path& dir) {
  ManifestWriter writer(dir);
  for (const auto& s : scenes) writer.add(s);
  writer.finish();
}

void write_manifest_index(const SceneManifest& manifest, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write manifest '" + file.string() + "'");
  out << nlohmann::json{{"format", kManifestFormat}, {"version", manifest.version}}.dump() << "\n";
  for (const auto& e : manifest.entries) {
    nlohmann::json phrases = nlohmann::json::array();
    for (const auto& p : e.phrases) {
      phrases.push_back({{"text", p.text},
                         {"mask", p.mask_path},
                         {"thing_stuff", to_string(p.thing_stuff)},
                         {"number", to_string(p.number)}});
    }
    out << nlohmann::json{{"image", e.image_path}, {"seed", e.seed}, {"phrases", phrases}}.dump() << "\n";
  }
  if (!out) throw DataError("failed writing manifest '" + file.string() + "'");
}

SceneManifest read_manifest(const std::filesystem::path& dir, const std::string& manifest_name) {
  const auto file = dir / manifest_name;
  std::ifstream in(file);
  if (!in) throw DataError("cannot open manifest '" + file.string() + "'");
  SceneManifest manifest;
  manifest.root = dir;
  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest '" + file.string() + "' is empty");
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.at("format").get<std::string>() != kManifestFormat) throw DataError("not a labeldiff manifest");
    manifest.version = header.at("version").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest header: " + std::string(e.what()));
  }
  if (manifest.version != kManifestVersion) {
    throw DataError("manifest version " + std::to_string(manifest.version) + " unsupported (expected " +
                    std::to_string(kManifestVersion) + ")");
  }
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = file.string() + ":" + std::to_string(line_no);
    ManifestEntry entry;
    try {
      const auto j = nlohmann::json::parse(line);
      entry.image_path = j.at("image").get<std::string>();
      entry.seed = j.at("seed").get<std::uint64_t>();
      for (const auto& p : j.at("phrases")) {
        ManifestPhrase mp;
        mp.text = p.at("text").get<std::string>();
        mp.mask_path = p.at("mask").get<std::string>();
        mp.thing_stuff = parse_thing_stuff(p.at("thing_stuff").get<std::string>());
        mp.number = parse_number(p.at("number").get<std::string>());
        entry.phrases.push_back(std::move(mp));
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest entry " + where + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("manifest entry " + where + ": " + e.what());
    }
    if (!std::filesystem::exists(dir / entry.image_path)) {
      throw DataError("manifest entry " + where + " references missing file '" + (dir / entry.image_path).string() + "'");
    }
    for (const auto& p : entry.phrases) {
      if (!std::filesystem::exists(dir / p.mask_path)) {
        throw DataError("manifest entry " + where + " references missing file '" + (dir / p.mask_path).string() + "'");
      }
    }
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

Scene load_scene(const SceneManifest& manifest, const ManifestEntry& entry) {
  Scene scene;
  scene.seed = entry.seed;
  scene.image = read_rgb_png(manifest.root / entry.image_path);
  for (const auto& p : entry.phrases) {
    PhraseAnnotation a;
    a.text = p.text;
    a.mask = read_mask_png(manifest.root / p.mask_path);
    if (a.mask.height != scene.image.height || a.mask.width != scene.image.width) {
      throw DataError("mask '" + p.mask_path + "' does not match image size");
    }
    a.thing_stuff = p.thing_stuff;
    a.number = p.number;
    scene.phrases.push_back(std::move(a));
  }
  return scene;
}

std::optional<Scene> SceneStream::next() {
  if (cursor_ >= manifest_.entries.size()) return std::nullopt;
  return load_scene(manifest_, manifest_.entries[cursor_++]);
}

std::vector<Scene> load_manifest(const std::filesystem::path& dir, const std::string& manifest_name) {
  SceneStream stream(read_manifest(dir, manifest_name));
  std::vector<Scene> scenes;
  while (auto s = stream.next()) scenes.push_back(std::move(*s));
  return scenes;
}

std::pair<SceneManifest, SceneManifest> split_dataset(const SceneManifest& manifest, double train_frac,
                                                      std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ParameterError("train_frac must lie in (0, 1)");
  const std::size_t n = manifest.entries.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  if (n_train == 0 || n_train == n) {
    throw ParameterError("split of " + std::to_string(n) + " scenes at " + std::to_string(train_frac) +
                         " leaves an empty side");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::sort(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  SceneManifest train{manifest.version, manifest.root, {}};
  SceneManifest test{manifest.version, manifest.root, {}};
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? train : test).entries.push_back(manifest.entries[order[i]]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace labeldiff
