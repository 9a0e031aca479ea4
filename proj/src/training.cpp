#include "labeldiff/training.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "labeldiff/diffusion.hpp"
#include "labeldiff/errors.hpp"

namespace labeldiff {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ParameterError("learning rate must be > 0");
  if (batch_size < 1) throw ParameterError("batch size must be >= 1");
  if (epochs < 0) throw ParameterError("epochs must be >= 0");
  if (!(p_drop >= 0.0 && p_drop <= 1.0)) throw ParameterError("p_drop must lie in [0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ParameterError("moment decays must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ParameterError("optimizer epsilon must be > 0");
  if (log_every < 1) throw ParameterError("log interval must be >= 1");
}

void TrainingSet::add_scene(const Scene& scene, const PhraseVocabulary& vocab) {
  const std::size_t index = images.size();
  images.push_back(scene.image);
  for (const auto& p : scene.phrases) {
    examples.push_back({index, encode_label(p.mask), vocab.encode(p.text)});
  }
}

TrainingSet TrainingSet::from_scenes(std::span<const Scene> scenes, const PhraseVocabulary& vocab) {
  TrainingSet set;
  for (const auto& s : scenes) set.add_scene(s, vocab);
  return set;
}

TrainingSet TrainingSet::from_manifest(const SceneManifest& manifest, const PhraseVocabulary& vocab) {
  TrainingSet set;
  SceneStream stream(manifest);
  while (auto s = stream.next()) set.add_scene(*s, vocab);
  return set;
}

DenoisingLoss denoising_loss(const ag::Var& predicted_noise, const ag::Var& noise) {
  if (predicted_noise.shape() != noise.shape()) {
    throw ShapeError("denoising_loss: prediction " + ag::shape_string(predicted_noise.shape()) + " vs noise " +
                     ag::shape_string(noise.shape()));
  }
  const int batch = noise.dim(0);
  const std::size_t per = noise.size() / static_cast<std::size_t>(batch);
  DenoisingLoss out;
  out.per_sample.resize(batch);
  const auto p = predicted_noise.value();
  const auto e = noise.value();
  for (int b = 0; b < batch; ++b) {
    double s = 0.0;
    for (std::size_t k = b * per; k < (b + 1) * per; ++k) s += (e[k] - p[k]) * (e[k] - p[k]);
    out.per_sample[b] = s / static_cast<double>(per);
    if (!std::isfinite(out.per_sample[b])) {
      throw NumericError("non-finite denoising loss at batch sample " + std::to_string(b));
    }
  }
  out.loss = ag::mse(predicted_noise, noise);
  return out;
}

NoiseDraw draw_noise(int batch, int latent_h, int latent_w, int total_steps, double p_drop, Rng& rng) {
  NoiseDraw draw;
  for (int b = 0; b < batch; ++b) {
    draw.timesteps.push_back(static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(total_steps))));
    draw.dropped.push_back(uniform01(rng) < p_drop);
    LatentGrid eps(latent_h, latent_w, 1);
    for (double& v : eps.values()) v = standard_normal(rng);
    draw.noise.push_back(std::move(eps));
  }
  return draw;
}

DenoisingLoss model_loss(const Model& model, const TrainingSet& data, std::span<const std::size_t> batch,
                         const NoiseDraw& draw) {
  if (batch.empty()) throw ShapeError("model_loss: empty batch");
  if (draw.timesteps.size() != batch.size()) throw ShapeError("model_loss: noise draw does not match batch");
  std::vector<const RgbImage*> images;
  std::vector<LatentGrid> noisy;
  std::vector<PhraseConditioning> conds;
  const auto null_cond = model.text().null_conditioning();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = data.examples.at(batch[i]);
    images.push_back(&data.images.at(ex.image_index));
    noisy.push_back(diffusion::forward_noise(ex.label_latent, draw.timesteps[i], draw.noise[i], model.schedule()));
    conds.push_back(draw.dropped[i] ? null_cond : model.text().condition_ids(ex.phrase_ids));
  }
  const ag::Var image_latent = model.encoder().forward(images_to_tensor(images));
  const ag::Var pred =
      model.predict_noise(latents_to_tensor(noisy), image_latent, draw.timesteps, stack_conditioning(conds));
  return denoising_loss(pred, latents_to_tensor(draw.noise));
}

TrainState::TrainState(const ModelConfig& config, std::uint64_t seed_, PhraseVocabulary vocab)
    : TrainState(Model(config, derive_seed(seed_, 0), std::move(vocab)), seed_) {}

TrainState::TrainState(Model model_, std::uint64_t seed_)
    : model(std::move(model_)), optimizer(model.parameters()), seed(seed_), rng(derive_seed(seed_, 1)) {}

StepReport train_step(TrainState& state, const TrainingSet& data, std::span<const std::size_t> batch,
                      const TrainConfig& config) {
  config.validate();
  const Rng saved = state.rng;
  const auto& first = data.examples.at(batch.front()).label_latent;
  try {
    NoiseDraw draw = draw_noise(static_cast<int>(batch.size()), first.height(), first.width(),
                                state.model.schedule().total_steps(), config.p_drop, state.rng);
    auto& store = state.model.parameters();
    store.zero_grad();
    DenoisingLoss loss = model_loss(state.model, data, batch, draw);
    ag::backward(loss.loss);
    for (const auto& p : store.parameters()) {
      for (double g : p.var.grad()) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      }
    }
    state.optimizer.step(store, config.adam());
    store.zero_grad();
    ++state.step;
    return {loss.loss.item(), std::move(draw.timesteps), std::move(draw.dropped)};
  } catch (const NumericError&) {
    state.rng = saved;
    state.model.parameters().zero_grad();
    throw;
  }
}

std::vector<std::size_t> epoch_order(std::size_t examples, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(examples);
  std::iota(order.begin(), order.end(), 0);
  if (examples < 2) return order;
  Rng rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = examples - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
  return order;
}

std::int64_t steps_per_epoch(std::size_t examples, int batch_size) {
  return static_cast<std::int64_t>((examples + batch_size - 1) / batch_size);
}

std::vector<LossRecord> train(TrainState& state, const TrainingSet& data, const TrainConfig& config,
                              const TrainHooks& hooks) {
  config.validate();
  if (data.examples.empty()) throw DataError("training set is empty");
  const std::int64_t per_epoch = steps_per_epoch(data.examples.size(), config.batch_size);
  const std::int64_t total = per_epoch * config.epochs;
  const auto start = std::chrono::steady_clock::now();
  std::vector<LossRecord> log;
  std::vector<std::size_t> order;
  std::int64_t order_epoch = -1;
  std::int64_t done = 0;
  while (state.step < total) {
    if (hooks.max_steps && done >= *hooks.max_steps) break;
    const std::int64_t epoch = state.step / per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(data.examples.size(), state.seed, epoch);
      order_epoch = epoch;
    }
    const std::size_t begin = static_cast<std::size_t>((state.step % per_epoch) * config.batch_size);
    const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
    const auto report = train_step(state, data, std::span(order).subspan(begin, end - begin), config);
    ++done;
    if (state.step % config.log_every == 0 || state.step == total) {
      const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
      LossRecord rec{state.step, report.loss, ms.count()};
      log.push_back(rec);
      if (hooks.on_log) hooks.on_log(rec);
    }
  }
  return log;
}

void write_loss_csv_header(std::ostream& out) { out << "step,loss,wall_ms\n"; }

void write_loss_csv_row(std::ostream& out, const LossRecord& record) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%lld,%.9g,%lld\n", static_cast<long long>(record.step), record.loss,
                static_cast<long long>(record.wall_ms));
  out << buf;
}

namespace {

constexpr char kMagic[8] = {'L', 'D', 'I', 'F', 'F', 'C', 'K', 'P'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void doubles(std::span<const double> v) {
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
  template <typename T>
  T pod(const std::string& field) {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    check(field);
    return v;
  }
  std::string str(const std::string& field) {
    const auto n = pod<std::uint64_t>(field + " length");
    if (n > (1ull << 30)) fail(field + " length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    check(field);
    return s;
  }
  void doubles(std::span<double> v, const std::string& field) {
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    check(field);
  }
  [[noreturn]] void fail(const std::string& field) const {
    throw CheckpointError("'" + path_ + "': truncated or malformed field '" + field + "'");
  }

 private:
  void check(const std::string& field) const {
    if (!in_) fail(field);
  }
  std::istream& in_;
  std::string path_;
};

std::string map_to_text(const std::map<std::string, std::string>& values) {
  std::string s;
  for (const auto& [k, v] : values) s += k + "=" + v + "\n";
  return s;
}

std::map<std::string, std::string> text_to_map(const std::string& text) {
  std::map<std::string, std::string> values;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed config line '" + line + "'");
    values[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return values;
}

void write_store(Writer& w, const ParameterStore& store, const Adam* adam) {
  w.pod<std::uint64_t>(store.parameters().size());
  for (std::size_t i = 0; i < store.parameters().size(); ++i) {
    const auto& p = store.parameters()[i];
    w.str(p.name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.var.rank()));
    for (int d : p.var.shape()) w.pod<std::int32_t>(d);
    w.doubles(p.var.value());
    if (adam) {
      w.doubles(adam->first_moments()[i]);
      w.doubles(adam->second_moments()[i]);
    }
  }
}

void read_store(Reader& r, ParameterStore& store, Adam* adam) {
  const auto count = r.pod<std::uint64_t>("parameter count");
  if (count != store.parameters().size()) {
    throw CheckpointError("field 'parameter count': file has " + std::to_string(count) + ", config expects " +
                          std::to_string(store.parameters().size()));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const auto& p = store.parameters()[i];
    const std::string name = r.str("parameter " + std::to_string(i) + " name");
    if (name != p.name) throw CheckpointError("field 'parameter name': found '" + name + "', expected '" + p.name + "'");
    const auto rank = r.pod<std::uint32_t>("parameter " + name + " rank");
    if (rank > 8) r.fail("parameter " + name + " rank");
    ag::Shape shape(rank);
    for (auto& d : shape) d = r.pod<std::int32_t>("parameter " + name + " shape");
    if (shape != p.var.shape()) {
      throw CheckpointError("field 'parameter " + name + " shape': found " + ag::shape_string(shape) + ", expected " +
                            ag::shape_string(p.var.shape()));
    }
    ag::Var var = p.var;
    r.doubles(var.mutable_value(), "parameter " + name + " values");
    if (adam) {
      r.doubles(adam->first_moments()[i], "parameter " + name + " first moment");
      r.doubles(adam->second_moments()[i], "parameter " + name + " second moment");
    }
  }
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
  Writer w(out);
  out.write(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.str(map_to_text(state.model.config().to_map()));
  std::string vocab;
  for (const auto& t : state.model.text().vocabulary().tokens()) vocab += t + "\n";
  w.str(vocab);
  w.pod<std::int64_t>(state.step);
  w.pod<std::int64_t>(state.optimizer.updates());
  w.pod<std::uint64_t>(state.seed);
  w.str(serialize_rng(state.rng));
  write_store(w, state.model.parameters(), &state.optimizer);
  w.pod<std::uint8_t>(state.decoder ? 1 : 0);
  if (state.decoder) {
    w.pod<std::int32_t>(state.decoder->width());
    write_store(w, state.decoder->parameters(), nullptr);
  }
  if (!out) throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  Reader r(in, path.string());
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("field 'version': '" + path.string() + "' is not a labeldiff checkpoint (bad header)");
  }
  const auto version = r.pod<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("field 'version': checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  ModelConfig config;
  try {
    config = ModelConfig::from_map(text_to_map(r.str("config")));
  } catch (const ParameterError& e) {
    throw CheckpointError(std::string("field 'config': ") + e.what());
  }
  std::vector<std::string> tokens;
  {
    std::istringstream vin(r.str("vocabulary"));
    std::string t;
    while (std::getline(vin, t)) tokens.push_back(t);
  }
  PhraseVocabulary vocab = [&] {
    try {
      return PhraseVocabulary(tokens);
    } catch (const Error& e) {
      throw CheckpointError(std::string("field 'vocabulary': ") + e.what());
    }
  }();
  const auto step = r.pod<std::int64_t>("step");
  const auto updates = r.pod<std::int64_t>("optimizer updates");
  const auto seed = r.pod<std::uint64_t>("seed");
  const std::string rng_text = r.str("rng");
  TrainState state(Model(config, 0, std::move(vocab)), seed);
  try {
    state.rng = deserialize_rng(rng_text);
  } catch (const Error& e) {
    throw CheckpointError(std::string("field 'rng': ") + e.what());
  }
  state.step = step;
  state.optimizer.set_updates(updates);
  read_store(r, state.model.parameters(), &state.optimizer);
  const auto has_decoder = r.pod<std::uint8_t>("decoder flag");
  if (has_decoder) {
    const auto width = r.pod<std::int32_t>("decoder width");
    if (width <= 0 || width > 4096) r.fail("decoder width");
    state.decoder.emplace(0, width);
    read_store(r, state.decoder->parameters(), nullptr);
  }
  if (!state.model.parameters().all_finite()) throw CheckpointError("field 'parameters': non-finite values");
  return state;
}

}  // namespace labeldiff
