#include "labeldiff/text_conditioning.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "labeldiff/errors.hpp"

namespace labeldiff {

PhraseVocabulary PhraseVocabulary::standard() {
  return PhraseVocabulary({std::string(kUnknownToken),
                           // thing colours
                           "red", "blue", "yellow", "purple", "orange", "white",
                           // sizes
                           "small", "large",
                           // counts
                           "two", "three",
                           // shape nouns
                           "circle", "circles", "square", "squares", "triangle", "triangles",
                           // stuff
                           "green", "grass", "gray", "pavement", "brown", "sand", "teal", "water"});
}

PhraseVocabulary::PhraseVocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty() || tokens_[0] != kUnknownToken) {
    throw DataError("vocabulary must start with the reserved token " + std::string(kUnknownToken));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw DataError("vocabulary line " + std::to_string(i) + " is empty");
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

int PhraseVocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnknownId : it->second;
}

std::vector<std::string> PhraseVocabulary::split_words(std::string_view phrase) {
  std::vector<std::string> words;
  std::istringstream in{std::string(phrase)};
  std::string w;
  while (in >> w) {
    for (char& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    words.push_back(w);
  }
  return words;
}

std::vector<int> PhraseVocabulary::encode(std::string_view phrase) const {
  std::vector<int> ids;
  for (const auto& w : split_words(phrase)) ids.push_back(id(w));
  return ids;
}

void PhraseVocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary '" + path.string() + "'");
  for (const auto& t : tokens_) out << t << "\n";
}

PhraseVocabulary PhraseVocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocabulary '" + path.string() + "'");
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return PhraseVocabulary(std::move(tokens));
}

AdapterStack::AdapterStack(int text_dim, int tokens, std::array<int, 2> widths, ParameterStore& store, Rng& rng,
                           const std::string& prefix)
    : text_dim_(text_dim), tokens_(tokens), widths_(widths) {
  if (text_dim <= 0 || tokens < 0) throw ParameterError("adapter stack dimensions");
  for (int l = 0; l < 2; ++l) {
    const std::string name = prefix + "scale" + std::to_string(l);
    weights_[l] = store.add_uniform(name + ".weight", {text_dim, tokens * widths[l]}, text_dim, rng);
    biases_[l] = store.add_uniform(name + ".bias", {tokens * widths[l]}, text_dim, rng);
  }
}

AdapterStack::AdapterStack(int text_dim, int tokens, std::array<int, 2> widths, std::array<ag::Var, 2> weights,
                           std::array<ag::Var, 2> biases)
    : text_dim_(text_dim), tokens_(tokens), widths_(widths), weights_(std::move(weights)), biases_(std::move(biases)) {
  for (int l = 0; l < 2; ++l) {
    if (weights_[l].shape() != ag::Shape{text_dim, tokens * widths[l]} ||
        biases_[l].size() != static_cast<std::size_t>(tokens * widths[l])) {
      throw ShapeError("adapter projection " + std::to_string(l) + " has shape " +
                       ag::shape_string(weights_[l].shape()));
    }
  }
}

std::vector<ag::Var> AdapterStack::project(const ag::Var& global) const {
  if (global.rank() != 2 || global.dim(1) != text_dim_) {
    throw ShapeError("adapter projection expects [B," + std::to_string(text_dim_) + "], got " +
                     ag::shape_string(global.shape()));
  }
  std::vector<ag::Var> out;
  const int batch = global.dim(0);
  for (int l = 0; l < 2; ++l) {
    out.push_back(ag::reshape(ag::linear(global, weights_[l], biases_[l]), {batch, tokens_, widths_[l]}));
  }
  return out;
}

TextConditioner::TextConditioner(PhraseVocabulary vocab, const TextConfig& config, std::array<int, 2> adapter_widths,
                                 ParameterStore& store, Rng& rng)
    : vocab_(std::move(vocab)), config_(config) {
  if (config.text_dim <= 0) throw ParameterError("text_dim must be positive");
  if (config.adapter_tokens < 0) throw ParameterError("adapter_tokens must be >= 0");
  table_ = store.add_normal("text.embedding", {vocab_.size(), config.text_dim}, 1.0, rng);
  adapters_ = AdapterStack(config.text_dim, config.adapter_tokens, adapter_widths, store, rng);
  null_global_ = store.add_normal("text.null_global", {1, config.text_dim}, 1.0, rng);
  for (int l = 0; l < 2; ++l) {
    null_tokens_[l] = store.add_normal("text.null_tokens" + std::to_string(l),
                                       {1, config.adapter_tokens, adapter_widths[l]}, 1.0, rng);
  }
}

ag::Var TextConditioner::embed_ids(std::span<const int> ids) const {
  if (ids.empty()) throw ParameterError("cannot embed an empty phrase");
  std::vector<int> sorted(ids.begin(), ids.end());
  std::sort(sorted.begin(), sorted.end());
  return ag::embedding_mean(table_, sorted);
}

ag::Var TextConditioner::embed_phrase(std::string_view phrase) const {
  const auto ids = vocab_.encode(phrase);
  return embed_ids(ids);
}

PhraseConditioning TextConditioner::condition_ids(std::span<const int> ids) const {
  PhraseConditioning cond;
  cond.global = embed_ids(ids);
  cond.per_layer = adapters_.project(cond.global);
  cond.is_null = false;
  return cond;
}

PhraseConditioning TextConditioner::condition(std::string_view phrase) const {
  const auto ids = vocab_.encode(phrase);
  return condition_ids(ids);
}

PhraseConditioning TextConditioner::null_conditioning() const {
  PhraseConditioning cond;
  cond.global = null_global_;
  cond.per_layer = {null_tokens_[0], null_tokens_[1]};
  cond.is_null = true;
  return cond;
}

PhraseConditioning conditional_dropout(const PhraseConditioning& cond, const PhraseConditioning& null_cond,
                                       double p_drop, Rng& rng) {
  if (!(p_drop >= 0.0 && p_drop <= 1.0)) throw ParameterError("p_drop must lie in [0, 1]");
  return uniform01(rng) < p_drop ? null_cond : cond;
}

BatchConditioning stack_conditioning(std::span<const PhraseConditioning> conds) {
  if (conds.empty()) throw ShapeError("stack_conditioning: empty batch");
  BatchConditioning batch;
  std::vector<ag::Var> globals;
  for (const auto& c : conds) globals.push_back(c.global);
  batch.global = ag::stack(globals);
  const std::size_t layers = conds[0].per_layer.size();
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<ag::Var> parts;
    for (const auto& c : conds) {
      if (c.per_layer.size() != layers) throw ShapeError("stack_conditioning: adapter scale count differs");
      parts.push_back(c.per_layer[l]);
    }
    batch.per_layer.push_back(ag::stack(parts));
  }
  return batch;
}

}  // namespace labeldiff
