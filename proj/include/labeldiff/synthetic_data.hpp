#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "labeldiff/evaluation.hpp"
#include "labeldiff/image.hpp"

namespace labeldiff {

struct PhraseAnnotation {
  std::string text;
  BinaryMask mask;
  ThingStuff thing_stuff = ThingStuff::kThing;
  Number number = Number::kSingular;
  // Per-instance masks of a thing group (generation-time only; not serialized).
  std::vector<BinaryMask> instances;
};

struct Scene {
  RgbImage image;
  std::vector<PhraseAnnotation> phrases;
  std::uint64_t seed = 0;

  // The stuff phrase covering the background, if any.
  const PhraseAnnotation* background() const;
};

struct SceneSpec {
  int image_size = 64;
  int min_groups = 1;
  int max_groups = 3;
  double plural_probability = 0.35;
  double size_word_probability = 0.3;
  // Shape radius as a fraction of the image side.
  double min_radius_fraction = 0.10;
  double max_radius_fraction = 0.17;
  int placement_attempts = 200;
  int scene_restarts = 10;

  void validate() const;
};

// Deterministic scene: textured stuff background with 1..N coloured shape
// groups, one phrase per group plus one for the background.
Scene generate_scene(std::uint64_t seed, const SceneSpec& spec = {});

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestFormat = "labeldiff-manifest";

struct ManifestPhrase {
  std::string text;
  std::string mask_path;  // relative to the dataset root
  ThingStuff thing_stuff = ThingStuff::kThing;
  Number number = Number::kSingular;
};

struct ManifestEntry {
  std::string image_path;
  std::uint64_t seed = 0;
  std::vector<ManifestPhrase> phrases;

  // Stem of the image file, used to build phrase ids ("0007" -> "0007_1").
  std::string stem() const;
};

struct SceneManifest {
  int version = kManifestVersion;
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
};

// Streams scenes to images/NNNN.png, masks/NNNN_k.png and manifest.jsonl.
class ManifestWriter {
 public:
  explicit ManifestWriter(const std::filesystem::path& dir, const std::string& manifest_name = "manifest.jsonl");
  void add(const Scene& scene);
  void finish();
  const SceneManifest& manifest() const { return manifest_; }

 private:
  std::filesystem::path dir_;
  std::string manifest_name_;
  SceneManifest manifest_;
  bool finished_ = false;
};

void write_manifest(std::span<const Scene> scenes, const std::filesystem::path& dir);
// Writes only the index file for an existing set of entries (e.g. a split).
void write_manifest_index(const SceneManifest& manifest, const std::filesystem::path& file);

// Parses and validates the index; every referenced file must exist.
SceneManifest read_manifest(const std::filesystem::path& dir, const std::string& manifest_name = "manifest.jsonl");

Scene load_scene(const SceneManifest& manifest, const ManifestEntry& entry);

// Loads scenes one at a time; memory use is independent of the scene count.
class SceneStream {
 public:
  explicit SceneStream(SceneManifest manifest) : manifest_(std::move(manifest)) {}
  std::optional<Scene> next();
  std::size_t size() const { return manifest_.entries.size(); }

 private:
  SceneManifest manifest_;
  std::size_t cursor_ = 0;
};

std::vector<Scene> load_manifest(const std::filesystem::path& dir, const std::string& manifest_name = "manifest.jsonl");

// Disjoint, exhaustive, seed-deterministic split. round(train_frac * n) scenes go to train.
std::pair<SceneManifest, SceneManifest> split_dataset(const SceneManifest& manifest, double train_frac,
                                                      std::uint64_t seed);

}  // namespace labeldiff
