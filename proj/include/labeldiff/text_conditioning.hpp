#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "labeldiff/autograd.hpp"
#include "labeldiff/parameters.hpp"
#include "labeldiff/rng.hpp"

namespace labeldiff {

// Closed token table. Id 0 is reserved for unknown words.
class PhraseVocabulary {
 public:
  static constexpr int kUnknownId = 0;
  static constexpr std::string_view kUnknownToken = "<unk>";

  // The synthetic phrase grammar: colours, sizes, shape nouns, counts, stuff.
  static PhraseVocabulary standard();
  explicit PhraseVocabulary(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(std::string_view word) const;
  std::vector<int> encode(std::string_view phrase) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // One token per line; id = zero-based line number.
  void save(const std::filesystem::path& path) const;
  static PhraseVocabulary load(const std::filesystem::path& path);

  static std::vector<std::string> split_words(std::string_view phrase);

  friend bool operator==(const PhraseVocabulary& a, const PhraseVocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Global phrase embedding [1, D] plus one [1, M, C_l] token block per adapter scale.
struct PhraseConditioning {
  ag::Var global;
  std::vector<ag::Var> per_layer;
  bool is_null = false;
};

// Exactly two learnable projections D_txt -> M * C_l.
class AdapterStack {
 public:
  AdapterStack() = default;
  AdapterStack(int text_dim, int tokens, std::array<int, 2> widths, ParameterStore& store, Rng& rng,
               const std::string& prefix = "adapter.");
  // Directly supplied projections (testing and analysis).
  AdapterStack(int text_dim, int tokens, std::array<int, 2> widths, std::array<ag::Var, 2> weights,
               std::array<ag::Var, 2> biases);

  // [B, D] -> per scale [B, M, C_l]
  std::vector<ag::Var> project(const ag::Var& global) const;

  int tokens() const { return tokens_; }
  int text_dim() const { return text_dim_; }
  const std::array<int, 2>& widths() const { return widths_; }

 private:
  int text_dim_ = 0;
  int tokens_ = 0;
  std::array<int, 2> widths_{};
  std::array<ag::Var, 2> weights_;
  std::array<ag::Var, 2> biases_;
};

struct TextConfig {
  int text_dim = 64;
  int adapter_tokens = 4;  // M
};

// Word-embedding mean pooler, adapter projections and the learned null
// ("none") conditioning.
class TextConditioner {
 public:
  TextConditioner() = default;
  TextConditioner(PhraseVocabulary vocab, const TextConfig& config, std::array<int, 2> adapter_widths,
                  ParameterStore& store, Rng& rng);

  const PhraseVocabulary& vocabulary() const { return vocab_; }
  const AdapterStack& adapters() const { return adapters_; }
  int text_dim() const { return config_.text_dim; }

  // Mean of learned word embeddings -> [1, D]. Empty phrase is an error.
  ag::Var embed_phrase(std::string_view phrase) const;
  ag::Var embed_ids(std::span<const int> ids) const;

  PhraseConditioning condition(std::string_view phrase) const;
  PhraseConditioning condition_ids(std::span<const int> ids) const;
  PhraseConditioning null_conditioning() const;

  const ag::Var& embedding_table() const { return table_; }

 private:
  PhraseVocabulary vocab_ = PhraseVocabulary::standard();
  TextConfig config_;
  ag::Var table_;
  AdapterStack adapters_;
  ag::Var null_global_;
  std::array<ag::Var, 2> null_tokens_;
};

// With probability p_drop returns `null_cond`, otherwise `cond`. Global and
// adapter features are always swapped together.
PhraseConditioning conditional_dropout(const PhraseConditioning& cond, const PhraseConditioning& null_cond,
                                       double p_drop, Rng& rng);

// Stacks per-sample conditionings into batch tensors: global [B, D] and per
// scale [B, M, C_l].
struct BatchConditioning {
  ag::Var global;
  std::vector<ag::Var> per_layer;
};
BatchConditioning stack_conditioning(std::span<const PhraseConditioning> conds);

}  // namespace labeldiff
