#include "dapa/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <memory>
#include <numbers>

#include <spdlog/spdlog.h>

#include "dapa/config.hpp"
#include "dapa/errors.hpp"
#include "dapa/parallel.hpp"

namespace dapa {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train." + m); };
  if (!(lr_peak >= 0.0 && std::isfinite(lr_peak))) fail("lr_peak must be a finite non-negative number");
  if (warmup_steps < 1) fail("warmup_steps must be at least 1");
  if (cosine_t_max < 1) fail("cosine_t_max must be at least 1");
  if (epochs < 1) fail("epochs must be at least 1");
  if (batch_train < 1 || batch_eval < 1) fail("batch sizes must be positive");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) fail("ema_decay must be in [0, 1]");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    fail("adam betas must be in [0, 1)");
  if (!(adam.eps > 0.0)) fail("adam_eps must be positive");
  if (!(held_out_fraction >= 0.0 && held_out_fraction < 1.0)) fail("held_out_fraction must be in [0, 1)");
  if (workers < 1) fail("workers must be at least 1");
}

double lr_at(const TrainConfig& cfg, std::size_t step, std::size_t epoch) {
  if (step < cfg.warmup_steps)
    return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  const double e = static_cast<double>(std::min(epoch, cfg.cosine_t_max));
  return cfg.lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * e / static_cast<double>(cfg.cosine_t_max)));
}

template <typename T>
AdamState<T> AdamState<T>::for_parameters(const ParameterList<T>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.size(), T{0});
    s.v.emplace_back(p.tensor.size(), T{0});
  }
  return s;
}

template <typename T>
void adam_step(AdamState<T>& state, const ParameterList<T>& params, const std::vector<std::vector<T>>& grads,
               double lr, const AdamOptions& opt) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                         std::to_string(grads.size()) + " gradients, " + std::to_string(state.m.size()) + " moments");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].size() != params[k].tensor.size() || state.m[k].size() != params[k].tensor.size())
      throw DimensionError("adam_step: size mismatch for '" + params[k].name + "'");
    for (T g : grads[k])
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in '" + params[k].name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(opt.beta1, t), bc2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T> handle = params[k].tensor;
    auto theta = handle.mutable_data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i];
      const double mi = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
      const double vi = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      theta[i] = static_cast<T>(theta[i] - lr * (mi / bc1) / (std::sqrt(vi / bc2) + opt.eps));
    }
  }
}

template <typename T>
EmaState<T> EmaState<T>::of(const ParameterList<T>& params, double decay) {
  EmaState e;
  e.decay = decay;
  for (const auto& p : params) e.shadow.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return e;
}

template <typename T>
void ema_update(EmaState<T>& ema, const ParameterList<T>& params) {
  if (ema.shadow.size() != params.size()) throw DimensionError("ema_update: parameter count changed");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto p = params[k].tensor.data();
    auto& s = ema.shadow[k];
    if (s.size() != p.size()) throw DimensionError("ema_update: shape mismatch for '" + params[k].name + "'");
    for (std::size_t i = 0; i < p.size(); ++i) s[i] = static_cast<T>(ema.decay * s[i] + (1.0 - ema.decay) * p[i]);
  }
}

bool HistoryRecord::operator==(const HistoryRecord& o) const {
  auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
  return epoch == o.epoch && step == o.step && same(lr, o.lr) && same(train_loss, o.train_loss) &&
         same(val_ccc, o.val_ccc);
}

namespace {

std::string shortest(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, ptr};
}

}  // namespace

std::string history_csv(const std::vector<HistoryRecord>& history) {
  std::string out = "epoch,step,lr,train_loss,val_ccc\n";
  for (const auto& r : history)
    out += std::to_string(r.epoch) + ',' + std::to_string(r.step) + ',' + shortest(r.lr) + ',' +
           shortest(r.train_loss) + ',' + shortest(r.val_ccc) + '\n';
  return out;
}

template <typename T>
TrainState<T> TrainState<T>::fresh(const ModelConfig& config, std::vector<std::string> domains, const TrainConfig& cfg) {
  TrainState s{DapaModel<T>::init(config, std::move(domains), cfg.seed), {}, {}};
  const auto params = s.model.parameters();
  s.adam = AdamState<T>::for_parameters(params);
  s.ema = EmaState<T>::of(params, cfg.ema_decay);
  return s;
}

template <typename T>
DapaModel<T> TrainState<T>::ema_model() const {
  DapaModel<T> copy = model.clone();
  auto params = copy.parameters();
  for (std::size_t k = 0; k < params.size(); ++k)
    std::copy(ema.shadow[k].begin(), ema.shadow[k].end(), params[k].tensor.mutable_data().begin());
  return copy;
}

namespace {

enum StreamTag : std::uint64_t { kShuffle = 1, kDropout = 2 };

struct WindowRef {
  std::size_t session;
  WindowLayout layout;
};

template <typename T>
struct BatchResult {
  double loss = 0.0;
  std::vector<std::vector<T>> grads;
};

/// Forward every window on its own tape, pool the loss over the selected
/// frames, and push the per-frame loss gradient back through each tape.
/// Per-window gradient sinks are summed in batch order.
template <typename T>
std::optional<BatchResult<T>> batch_gradient(const DapaModel<T>& model, const ParameterList<T>& params,
                                             const Corpus& corpus, const std::vector<WindowRef>& windows,
                                             const std::vector<DomainSelection>& domains,
                                             std::span<const std::size_t> batch, const RngStream& dropout_stream,
                                             const TrainConfig& cfg) {
  const std::size_t n = batch.size();
  std::vector<std::unique_ptr<Tape<T>>> tapes(n);
  std::vector<GradientSink<T>> sinks(n);
  std::vector<Tensor<T>> preds(n);
  std::vector<WindowSample> samples(n);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    const WindowRef& ref = windows[batch[i]];
    samples[i] = make_window(corpus.sessions[ref.session], ref.layout);
    tapes[i] = std::make_unique<Tape<T>>(true);
    tapes[i]->set_gradient_sink(&sinks[i]);
    Context<T> ctx{*tapes[i], dropout_stream.derive({i}), true};
    preds[i] = forward(ctx, model, to_precision<T>(samples[i].x_t), to_precision<T>(samples[i].x_p), domains[ref.session]);
  });

  std::vector<T> pooled_pred, pooled_truth;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < samples[i].y.size(); ++j)
      if (!cfg.loss_on_core_only || samples[i].core_mask[j]) {
        pooled_pred.push_back(preds[i].at(j));
        pooled_truth.push_back(static_cast<T>(samples[i].y[j]));
      }
  if (pooled_pred.size() < 2) return std::nullopt;

  const std::size_t m = pooled_pred.size();
  Tape<T> loss_tape;
  auto p = Tensor<T>::from({m}, std::move(pooled_pred));
  p.set_requires_grad(true);
  const auto loss = ccc_loss(loss_tape, p, Tensor<T>::from({m}, std::move(pooled_truth)));
  loss_tape.backward(loss);
  const auto dp = p.has_grad() ? std::vector<T>(p.grad().begin(), p.grad().end()) : std::vector<T>(m, T{0});

  std::vector<std::vector<T>> seeds(n);
  for (std::size_t i = 0, k = 0; i < n; ++i) {
    seeds[i].assign(samples[i].y.size(), T{0});
    for (std::size_t j = 0; j < samples[i].y.size(); ++j)
      if (!cfg.loss_on_core_only || samples[i].core_mask[j]) seeds[i][j] = dp[k++];
  }
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    tapes[i]->backward(preds[i], seeds[i]);
    tapes[i].reset();
  });

  BatchResult<T> out{static_cast<double>(loss.item()), {}};
  out.grads.reserve(params.size());
  for (const auto& param : params) {
    std::vector<T> g(param.tensor.size(), T{0});
    for (const auto& sink : sinks)
      if (const auto* part = sink.find(param.tensor))
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*part)[i];
    out.grads.push_back(std::move(g));
  }
  return out;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw CheckpointError("cannot write '" + path.string() + "'");
}

}  // namespace

template <typename T>
void run_training(TrainState<T>& state, const Corpus& train, const Corpus& validation, const TrainConfig& cfg,
                  const TrainOptions<T>& options) {
  cfg.validate();
  if (train.sessions.empty()) throw ConfigError("training corpus has no sessions");
  const ModelConfig& mc = state.model.config;
  for (const Corpus* c : {&train, &validation})
    if (!c->sessions.empty() && c->feature_dim != mc.d_in)
      throw ConfigError("corpus feature width " + std::to_string(c->feature_dim) + " does not match model.d_in " +
                        std::to_string(mc.d_in));
  const WindowScheme scheme = scheme_for(mc);

  std::vector<DomainSelection> domains;
  std::vector<WindowRef> windows;
  for (std::size_t s = 0; s < train.sessions.size(); ++s) {
    domains.push_back(state.model.resolve_domain(train.sessions[s].record.domain));
    for (auto& layout : plan_windows(train.sessions[s].frames(), scheme)) windows.push_back({s, std::move(layout)});
  }

  const auto params = state.model.parameters();
  for (auto p : params) p.tensor.set_requires_grad(true);
  if (state.ema.shadow.size() != params.size()) throw CheckpointError("EMA state does not match the model");
  const RngStream root(cfg.seed);

  if (options.out_dir) fs::create_directories(*options.out_dir);
  while (state.epoch < cfg.epochs) {
    const std::size_t epoch = state.epoch;
    std::vector<std::size_t> order(windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RngStream shuffle = root.derive({kShuffle, epoch});
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);

    double loss_sum = 0.0, lr = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_train) {
      const std::span<const std::size_t> batch(order.data() + b, std::min(cfg.batch_train, order.size() - b));
      const std::size_t step = state.step + 1;
      auto result = batch_gradient(state.model, params, train, windows, domains, batch,
                                   root.derive({kDropout, step}), cfg);
      if (!result) {
        spdlog::warn("epoch {} step {}: batch has fewer than two loss frames, skipped", epoch + 1, step);
        continue;
      }
      if (!std::isfinite(result->loss))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + " step " + std::to_string(step));
      lr = lr_at(cfg, step, epoch);
      adam_step(state.adam, params, result->grads, lr, cfg.adam);
      ema_update(state.ema, params);
      state.step = step;
      loss_sum += result->loss;
      ++batches;
    }

    HistoryRecord rec{epoch + 1, state.step, lr, batches ? loss_sum / static_cast<double>(batches)
                                                         : std::numeric_limits<double>::quiet_NaN()};
    if (!validation.sessions.empty())
      rec.val_ccc = evaluate_corpus(state.ema_model(), validation, {}, cfg.workers).global;
    state.epoch = epoch + 1;
    state.history.push_back(rec);
    const bool improved = validation.sessions.empty() || rec.val_ccc > state.best_val_ccc;
    if (improved) {
      state.best_epoch = state.epoch;
      if (!validation.sessions.empty()) state.best_val_ccc = rec.val_ccc;
    }
    spdlog::info("epoch {}/{} step {} lr {:.3g} loss {:.5f} val_ccc {:.4f}", rec.epoch, cfg.epochs, rec.step, rec.lr,
                 rec.train_loss, rec.val_ccc);

    if (options.out_dir) {
      save_checkpoint(*options.out_dir / "last", state, cfg);
      if (improved) save_checkpoint(*options.out_dir / "best", state, cfg);
      write_text_file(*options.out_dir / "history.csv", history_csv(state.history));
    }
    if (options.on_epoch && !options.on_epoch(state, rec)) break;
    if (options.stop_after_epoch && state.epoch >= options.stop_after_epoch) break;
  }
}

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'A', 'P', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

template <typename T>
constexpr const char* precision_name() {
  return sizeof(T) == 4 ? "float32" : "float64";
}

Json nullable(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double from_nullable(const Json& j, double fallback) { return j.is_null() ? fallback : j.get<double>(); }

}  // namespace

template <typename T>
void save_checkpoint(const fs::path& dir, const TrainState<T>& state, const TrainConfig& cfg) {
  const auto params = state.model.parameters();
  Json tensors = Json::array();
  std::size_t total = 0;
  for (const auto& p : params) {
    tensors.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
    total += p.tensor.size();
  }
  Json history = Json::array();
  for (const auto& r : state.history)
    history.push_back({{"epoch", r.epoch},
                       {"step", r.step},
                       {"lr", r.lr},
                       {"train_loss", nullable(r.train_loss)},
                       {"val_ccc", nullable(r.val_ccc)}});
  const Json doc{{"format", "dapa-checkpoint"},
                 {"version", kCheckpointVersion},
                 {"precision", precision_name<T>()},
                 {"model", to_json(state.model.config)},
                 {"domains", state.model.prompts.names},
                 {"train", to_json(cfg)},
                 {"epoch", state.epoch},
                 {"step", state.step},
                 {"adam_step", state.adam.step},
                 {"ema_decay", state.ema.decay},
                 {"best_val_ccc", nullable(state.best_val_ccc)},
                 {"best_epoch", state.best_epoch},
                 {"history", history},
                 {"tensors", tensors}};

  std::string bin(kCheckpointMagic, 4);
  put_le<std::uint32_t>(bin, kCheckpointVersion);
  put_le<std::uint32_t>(bin, sizeof(T));
  put_le<std::uint64_t>(bin, total);
  auto section = [&](auto&& values_of) {
    for (std::size_t k = 0; k < params.size(); ++k)
      for (T v : values_of(k)) put_le(bin, std::bit_cast<Bits<T>>(v));
  };
  section([&](std::size_t k) { return params[k].tensor.data(); });
  section([&](std::size_t k) { return std::span<const T>(state.adam.m[k]); });
  section([&](std::size_t k) { return std::span<const T>(state.adam.v[k]); });
  section([&](std::size_t k) { return std::span<const T>(state.ema.shadow[k]); });
  put_le<std::uint64_t>(bin, fnv1a(bin));

  // Written beside the target and swapped in, so a crash never leaves a half-written checkpoint.
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  write_text_file(tmp / "checkpoint.json", doc.dump(2) + '\n');
  write_text_file(tmp / "tensors.bin", bin);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

std::string checkpoint_precision(const fs::path& dir) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw CheckpointError("no checkpoint at '" + dir.string() + "'");
  try {
    return Json::parse(in).at("precision").get<std::string>();
  } catch (const Json::exception& e) {
    throw CheckpointError("'" + (dir / "checkpoint.json").string() + "': " + e.what());
  }
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const fs::path& dir) {
  const fs::path json_path = dir / "checkpoint.json", bin_path = dir / "tensors.bin";
  const std::string where = "checkpoint '" + dir.string() + "'";
  std::ifstream json_in(json_path);
  if (!json_in) throw CheckpointError(where + ": missing checkpoint.json");

  Json doc;
  ModelConfig mc;
  TrainConfig tc;
  std::vector<std::string> domains;
  try {
    doc = Json::parse(json_in);
    if (doc.at("format") != "dapa-checkpoint") throw CheckpointError(where + ": not a checkpoint");
    if (doc.at("version") != kCheckpointVersion)
      throw CheckpointError(where + ": unsupported version " + doc.at("version").dump());
    if (doc.at("precision") != precision_name<T>())
      throw CheckpointError(where + ": holds " + doc.at("precision").get<std::string>() + " weights, expected " +
                            precision_name<T>());
    mc = parse_model_config(doc.at("model"));
    tc = parse_train_config(doc.at("train"));
    domains = doc.at("domains").get<std::vector<std::string>>();
  } catch (const Json::exception& e) {
    throw CheckpointError(where + ": " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(where + ": " + e.what());
  }

  LoadedCheckpoint<T> out{TrainState<T>::fresh(mc, domains, tc), tc};
  auto& s = out.state;
  const auto params = s.model.parameters();
  const Json& index = doc.at("tensors");
  if (!index.is_array() || index.size() != params.size())
    throw CheckpointError(where + ": expected " + std::to_string(params.size()) + " tensors, found " +
                          std::to_string(index.is_array() ? index.size() : 0));
  std::size_t total = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& entry = index[k];
    const auto name = entry.value("name", std::string());
    if (name != params[k].name)
      throw CheckpointError(where + ": tensor #" + std::to_string(k) + " is '" + name + "', expected '" +
                            params[k].name + "'");
    if (entry.value("shape", Shape{}) != params[k].tensor.shape())
      throw CheckpointError(where + ": shape mismatch for tensor '" + name + "': stored " + entry["shape"].dump() +
                            ", model " + to_string(params[k].tensor.shape()));
    total += params[k].tensor.size();
  }

  std::ifstream bin_in(bin_path, std::ios::binary);
  if (!bin_in) throw CheckpointError(where + ": missing tensors.bin");
  const std::string bin{std::istreambuf_iterator<char>(bin_in), std::istreambuf_iterator<char>()};
  const std::size_t expected = 4 + 4 + 4 + 8 + 4 * total * sizeof(T) + 8;
  if (bin.size() != expected)
    throw CheckpointError(where + ": tensors.bin has " + std::to_string(bin.size()) + " bytes, expected " +
                          std::to_string(expected));
  if (std::string_view(bin.data(), 4) != std::string_view(kCheckpointMagic, 4) ||
      get_le<std::uint32_t>(bin.data() + 4) != kCheckpointVersion ||
      get_le<std::uint32_t>(bin.data() + 8) != sizeof(T) || get_le<std::uint64_t>(bin.data() + 12) != total)
    throw CheckpointError(where + ": tensors.bin header does not match checkpoint.json");
  if (get_le<std::uint64_t>(bin.data() + bin.size() - 8) != fnv1a(std::string_view(bin.data(), bin.size() - 8)))
    throw CheckpointError(where + ": tensors.bin checksum mismatch (corrupted file)");

  const char* p = bin.data() + 20;
  auto section = [&](auto&& target_of) {
    for (std::size_t k = 0; k < params.size(); ++k)
      for (auto& v : target_of(k)) {
        v = std::bit_cast<T>(get_le<Bits<T>>(p));
        p += sizeof(T);
      }
  };
  section([&](std::size_t k) {
    Tensor<T> handle = params[k].tensor;
    return handle.mutable_data();
  });
  section([&](std::size_t k) { return std::span<T>(s.adam.m[k]); });
  section([&](std::size_t k) { return std::span<T>(s.adam.v[k]); });
  section([&](std::size_t k) { return std::span<T>(s.ema.shadow[k]); });

  try {
    s.epoch = doc.at("epoch").get<std::size_t>();
    s.step = doc.at("step").get<std::size_t>();
    s.adam.step = doc.at("adam_step").get<std::uint64_t>();
    s.ema.decay = doc.at("ema_decay").get<double>();
    s.best_val_ccc = from_nullable(doc.at("best_val_ccc"), -std::numeric_limits<double>::infinity());
    s.best_epoch = doc.at("best_epoch").get<std::size_t>();
    for (const auto& r : doc.at("history"))
      s.history.push_back({r.at("epoch").get<std::size_t>(), r.at("step").get<std::size_t>(), r.at("lr").get<double>(),
                           from_nullable(r.at("train_loss"), std::numeric_limits<double>::quiet_NaN()),
                           from_nullable(r.at("val_ccc"), std::numeric_limits<double>::quiet_NaN())});
  } catch (const Json::exception& e) {
    throw CheckpointError(where + ": " + e.what());
  }
  return out;
}

#define DAPA_INSTANTIATE(T)                                                                                      \
  template struct AdamState<T>;                                                                                  \
  template struct EmaState<T>;                                                                                   \
  template struct TrainState<T>;                                                                                 \
  template void adam_step(AdamState<T>&, const ParameterList<T>&, const std::vector<std::vector<T>>&, double,    \
                          const AdamOptions&);                                                                   \
  template void ema_update(EmaState<T>&, const ParameterList<T>&);                                               \
  template void run_training(TrainState<T>&, const Corpus&, const Corpus&, const TrainConfig&,                  \
                             const TrainOptions<T>&);                                                            \
  template void save_checkpoint(const fs::path&, const TrainState<T>&, const TrainConfig&);                      \
  template LoadedCheckpoint<T> load_checkpoint(const fs::path&);

DAPA_INSTANTIATE(float)
DAPA_INSTANTIATE(double)

}  // namespace dapa
