#include "dapa/config.hpp"

#include <fstream>
#include <set>
#include <type_traits>

#include "dapa/errors.hpp"

namespace dapa {

namespace {

/// Reads optional keys from one JSON object and remembers which it saw.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename V>
  bool get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return false;
    const Json& v = j_.at(key);
    const std::string at = where_ + "." + key;
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) throw ConfigError(at + ": expected true or false");
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_unsigned()) throw ConfigError(at + ": expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) throw ConfigError(at + ": expected a number");
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!v.is_string()) throw ConfigError(at + ": expected a string");
    }
    out = v.get<V>();
    return true;
  }

  template <typename V>
  bool get_optional(const char* key, std::optional<V>& out) {
    V v{};
    if (!get(key, v)) return false;
    out = v;
    return true;
  }

  template <typename E>
  bool get_enum(const char* key, E& out, std::initializer_list<std::pair<const char*, E>> names) {
    std::string s;
    if (!get(key, s)) return false;
    std::string allowed;
    for (const auto& [name, value] : names) {
      if (s == name) {
        out = value;
        return true;
      }
      allowed += (allowed.empty() ? "" : ", ") + std::string(name);
    }
    throw ConfigError(where_ + "." + key + ": '" + s + "' is not one of " + allowed);
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  const std::string& where() const { return where_; }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.contains(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

const std::initializer_list<std::pair<const char*, PromptMode>> kPromptModes{
    {"feature_concat", PromptMode::FeatureConcat}, {"time_prepend", PromptMode::TimePrepend}};
const std::initializer_list<std::pair<const char*, UnknownDomainPolicy>> kPolicies{
    {"error", UnknownDomainPolicy::Error}, {"mean_prompt", UnknownDomainPolicy::MeanPrompt}};
const std::initializer_list<std::pair<const char*, AnnotationStyle>> kStyles{
    {"continuous", AnnotationStyle::Continuous}, {"step", AnnotationStyle::Step}};
const std::initializer_list<std::pair<const char*, Precision>> kPrecisions{{"float32", Precision::Float32},
                                                                          {"float64", Precision::Float64}};

template <typename E>
const char* name_of(E value, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [name, v] : names)
    if (v == value) return name;
  return "?";
}

template <typename F>
auto validated(F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

Json to_json(const ModelConfig& c) {
  return {{"d_in", c.d_in},
          {"d_prompt", c.d_prompt},
          {"d_model", c.d_model},
          {"lstm_layers", c.lstm_layers},
          {"num_dapa_layers", c.num_dapa_layers},
          {"dropout", c.dropout},
          {"attention_projections", c.attention_projections},
          {"attention_heads", c.attention_heads},
          {"head_hidden", c.head_hidden},
          {"window_length", c.window_length},
          {"prompt_mode", name_of(c.prompt_mode, kPromptModes)},
          {"unknown_domain", name_of(c.unknown_domain, kPolicies)}};
}

ModelConfig parse_model_config(const Json& j, ModelConfig c) {
  Fields f(j, "model");
  f.get("d_in", c.d_in);
  f.get("d_prompt", c.d_prompt);
  f.get("d_model", c.d_model);
  f.get("lstm_layers", c.lstm_layers);
  f.get("num_dapa_layers", c.num_dapa_layers);
  f.get("dropout", c.dropout);
  f.get("attention_projections", c.attention_projections);
  f.get("attention_heads", c.attention_heads);
  if (const Json* h = f.child("head_hidden")) {
    if (!h->is_array()) throw ConfigError("model.head_hidden: expected a list of widths");
    c.head_hidden.clear();
    for (const auto& w : *h) {
      if (!w.is_number_unsigned()) throw ConfigError("model.head_hidden: widths must be non-negative integers");
      c.head_hidden.push_back(w.get<std::size_t>());
    }
  }
  f.get("window_length", c.window_length);
  f.get_enum("prompt_mode", c.prompt_mode, kPromptModes);
  f.get_enum("unknown_domain", c.unknown_domain, kPolicies);
  f.finish();
  validated([&] {
    c.validate();
    return 0;
  });
  return c;
}

Json to_json(const TrainConfig& c) {
  return {{"seed", c.seed},
          {"lr_peak", c.lr_peak},
          {"warmup_steps", c.warmup_steps},
          {"cosine_t_max", c.cosine_t_max},
          {"epochs", c.epochs},
          {"batch_train", c.batch_train},
          {"batch_eval", c.batch_eval},
          {"ema_decay", c.ema_decay},
          {"adam_beta1", c.adam.beta1},
          {"adam_beta2", c.adam.beta2},
          {"adam_eps", c.adam.eps},
          {"loss_on_core_only", c.loss_on_core_only},
          {"held_out_fraction", c.held_out_fraction},
          {"workers", c.workers}};
}

TrainConfig parse_train_config(const Json& j, TrainConfig c) {
  Fields f(j, "train");
  f.get("seed", c.seed);
  f.get("lr_peak", c.lr_peak);
  f.get("warmup_steps", c.warmup_steps);
  f.get("cosine_t_max", c.cosine_t_max);
  f.get("epochs", c.epochs);
  f.get("batch_train", c.batch_train);
  f.get("batch_eval", c.batch_eval);
  f.get("ema_decay", c.ema_decay);
  f.get("adam_beta1", c.adam.beta1);
  f.get("adam_beta2", c.adam.beta2);
  f.get("adam_eps", c.adam.eps);
  f.get("loss_on_core_only", c.loss_on_core_only);
  f.get("held_out_fraction", c.held_out_fraction);
  f.get("workers", c.workers);
  f.finish();
  c.validate();
  return c;
}

Json to_json(const SyntheticSpec& s) {
  Json warps = Json::array();
  for (const auto& w : s.warps) warps.push_back({{"lo", w.lo}, {"hi", w.hi}, {"gamma", w.gamma}});
  Json j{{"num_domains", s.num_domains},
         {"sessions_per_domain", s.sessions_per_domain},
         {"frames_per_session", s.frames_per_session},
         {"latent_dims", s.latent_dims},
         {"feature_dim", s.feature_dim},
         {"sinusoids", s.sinusoids},
         {"kappa", s.kappa},
         {"sigma", s.sigma},
         {"warps", warps},
         {"style", name_of(s.style, kStyles)},
         {"seed", s.seed}};
  if (s.target_sigma) j["target_sigma"] = *s.target_sigma;
  return j;
}

SyntheticSpec parse_synthetic_spec(const Json& j, SyntheticSpec s) {
  Fields f(j, "synthetic");
  f.get("num_domains", s.num_domains);
  f.get("sessions_per_domain", s.sessions_per_domain);
  f.get("frames_per_session", s.frames_per_session);
  f.get("latent_dims", s.latent_dims);
  f.get("feature_dim", s.feature_dim);
  f.get("sinusoids", s.sinusoids);
  f.get("kappa", s.kappa);
  f.get("sigma", s.sigma);
  f.get_optional("target_sigma", s.target_sigma);
  if (const Json* w = f.child("warps")) {
    if (!w->is_array()) throw ConfigError("synthetic.warps: expected a list");
    s.warps.clear();
    for (std::size_t i = 0; i < w->size(); ++i) {
      Fields wf(w->at(i), "synthetic.warps[" + std::to_string(i) + "]");
      LabelWarp warp;
      wf.get("lo", warp.lo);
      wf.get("hi", warp.hi);
      wf.get("gamma", warp.gamma);
      wf.finish();
      s.warps.push_back(warp);
    }
  }
  f.get_enum("style", s.style, kStyles);
  f.get("seed", s.seed);
  f.finish();
  s.validate();
  return s;
}

RunConfig parse_run_config(const Json& j) {
  RunConfig c;
  Fields f(j, "config");
  if (const Json* m = f.child("model")) {
    c.model = parse_model_config(*m);
    c.d_in_given = m->contains("d_in");
  }
  if (const Json* t = f.child("train")) c.train = parse_train_config(*t);
  if (const Json* d = f.child("data")) {
    Fields df(*d, "data");
    std::string p;
    if (df.get("manifest", p)) c.manifest = p;
    if (df.get("dataset_map", p)) c.dataset_map = p;
    df.finish();
  }
  f.get_enum("precision", c.precision, kPrecisions);
  f.finish();
  return c;
}

Json to_json(const RunConfig& c) {
  Json j{{"model", to_json(c.model)}, {"train", to_json(c.train)}, {"precision", name_of(c.precision, kPrecisions)}};
  Json data = Json::object();
  if (c.manifest) data["manifest"] = c.manifest->string();
  if (c.dataset_map) data["dataset_map"] = c.dataset_map->string();
  j["data"] = data;
  return j;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("'" + path.string() + "': " + e.what());
  }
}

}  // namespace dapa
