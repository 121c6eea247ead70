#include "dapa/model.hpp"

#include <algorithm>
#include <cmath>

namespace dapa {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(d_in, "d_in");
  positive(d_model, "d_model");
  positive(lstm_layers, "lstm_layers");
  positive(num_dapa_layers, "num_dapa_layers");
  positive(attention_heads, "attention_heads");
  positive(window_length, "window_length");
  for (std::size_t w : head_hidden) positive(w, "head_hidden[]");
  if (d_model % attention_heads != 0) throw ConfigError("model.d_model must be divisible by attention_heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
}

template <typename T>
std::optional<std::size_t> DomainPromptPool<T>::index_of(std::string_view name) const {
  auto it = std::lower_bound(names.begin(), names.end(), name);
  if (it == names.end() || *it != name) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}

template <typename T>
Tensor<T> DomainPromptPool<T>::select(Tape<T>& tape, DomainSelection sel) const {
  if (prompts.empty()) throw ConfigError("domain prompt pool is empty");
  if (sel.index) {
    if (*sel.index >= prompts.size()) {
      throw LookupError("domain index " + std::to_string(*sel.index) + " outside pool of " +
                        std::to_string(prompts.size()));
    }
    return prompts[*sel.index];
  }
  Tensor<T> total = prompts[0];
  for (std::size_t k = 1; k < prompts.size(); ++k) total = ops::add(tape, total, prompts[k]);
  return ops::scale(tape, total, T{1} / static_cast<T>(prompts.size()));
}

template <typename T>
void DapaLayerParams<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  target_encoder.collect(prefix + ".enc_target", out);
  partner_encoder.collect(prefix + ".enc_partner", out);
  anticipatory_tp.collect(prefix + ".attn_anticipatory_tp", out);
  anticipatory_pt.collect(prefix + ".attn_anticipatory_pt", out);
  reactive_tp.collect(prefix + ".attn_reactive_tp", out);
  reactive_pt.collect(prefix + ".attn_reactive_pt", out);
}

namespace {

std::size_t prompted_width(const ModelConfig& c) {
  return c.prompt_mode == PromptMode::FeatureConcat ? c.d_in + c.d_prompt : c.d_in;
}

Shape prompt_shape(const ModelConfig& c) {
  return c.prompt_mode == PromptMode::FeatureConcat ? Shape{c.window_length, c.d_prompt} : Shape{c.d_prompt, c.d_in};
}

}  // namespace

template <typename T>
DapaModel<T> DapaModel<T>::init(const ModelConfig& config, std::vector<std::string> domains, std::uint64_t seed) {
  config.validate();
  std::sort(domains.begin(), domains.end());
  domains.erase(std::unique(domains.begin(), domains.end()), domains.end());
  if (domains.empty()) throw ConfigError("model needs at least one domain");

  const RngStream root(seed);
  DapaModel m;
  m.config = config;
  m.prompts.names = domains;
  RngStream prompt_rng = root.derive("prompt");
  for (std::size_t k = 0; k < domains.size(); ++k) {
    const Shape shape = prompt_shape(config);
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(0.02 * prompt_rng.normal());
    m.prompts.prompts.push_back(Tensor<T>::from(shape, std::move(v)));
  }

  const std::size_t d = config.d_model;
  RngStream proj_rng = root.derive("projection");
  m.projection_in = LinearParams<T>::init(prompted_width(config), d, proj_rng);
  m.projection_out = LinearParams<T>::init(d, d, proj_rng);

  for (std::size_t l = 0; l < config.num_dapa_layers; ++l) {
    RngStream rng = root.derive({0x1A7E5ULL, l});
    const std::size_t in = l == 0 ? d : 2 * d;
    DapaLayerParams<T> layer;
    layer.target_encoder = LstmStackParams<T>::init(in, d, config.lstm_layers, config.dropout, rng);
    layer.partner_encoder = LstmStackParams<T>::init(in, d, config.lstm_layers, config.dropout, rng);
    const std::size_t heads = config.attention_heads;
    const bool proj = config.attention_projections;
    layer.anticipatory_tp = AttentionParams<T>::init(d, heads, proj, rng);
    layer.anticipatory_pt = AttentionParams<T>::init(d, heads, proj, rng);
    layer.reactive_tp = AttentionParams<T>::init(d, heads, proj, rng);
    layer.reactive_pt = AttentionParams<T>::init(d, heads, proj, rng);
    m.layers.push_back(std::move(layer));
  }

  RngStream head_rng = root.derive("head");
  m.head = MlpHeadParams<T>::init(4 * d, config.head_hidden, config.dropout, head_rng);
  return m;
}

template <typename T>
ParameterList<T> DapaModel<T>::parameters() const {
  ParameterList<T> out;
  for (std::size_t k = 0; k < prompts.size(); ++k) out.push_back({"prompt." + prompts.names[k], prompts.prompts[k]});
  projection_in.collect("projection.0", out);
  projection_out.collect("projection.1", out);
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect("layer" + std::to_string(l), out);
  head.collect("head", out);
  return out;
}

template <typename T>
std::size_t DapaModel<T>::num_parameters() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.tensor.size();
  return total;
}

template <typename T>
std::size_t DapaModel<T>::parameter_count(const ModelConfig& c, std::size_t num_domains) {
  const std::size_t d = c.d_model;
  std::size_t total = num_domains * numel(prompt_shape(c));
  total += prompted_width(c) * d + d + d * d + d;
  for (std::size_t l = 0; l < c.num_dapa_layers; ++l) {
    const std::size_t in = l == 0 ? d : 2 * d;
    total += 2 * LstmStackParams<T>::parameter_count(in, d, c.lstm_layers);
    total += 4 * AttentionParams<T>::parameter_count(d, c.attention_projections);
  }
  total += MlpHeadParams<T>::parameter_count(4 * d, c.head_hidden);
  return total;
}

template <typename T>
DapaModel<T> DapaModel<T>::clone() const {
  DapaModel copy = init(config, prompts.names, 0);
  auto src = parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto out = dst[i].tensor.mutable_data();
    std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), out.begin());
  }
  return copy;
}

template <typename T>
DomainSelection DapaModel<T>::resolve_domain(std::string_view name) const {
  if (auto idx = prompts.index_of(name)) return DomainSelection::of(*idx);
  if (config.unknown_domain == UnknownDomainPolicy::MeanPrompt) return DomainSelection::mean();
  std::string known;
  for (const auto& n : prompts.names) known += (known.empty() ? "" : ", ") + n;
  throw LookupError("unknown domain '" + std::string(name) + "' (known: " + known +
                    "); set model.unknown_domain = \"mean_prompt\" to fall back to the pool mean");
}

template <typename T>
PromptedPair<T> attach_prompt(Tape<T>& tape, const DomainPromptPool<T>& pool, PromptMode mode, const Tensor<T>& x_t,
                              const Tensor<T>& x_p, DomainSelection domain) {
  if (x_t.shape() != x_p.shape()) {
    throw DimensionError("attach_prompt: target " + to_string(x_t.shape()) + " and partner " +
                         to_string(x_p.shape()) + " differ");
  }
  const Tensor<T> prompt = pool.select(tape, domain);
  if (mode == PromptMode::FeatureConcat) {
    if (prompt.rows() != x_t.rows()) {
      throw DimensionError("attach_prompt: prompt has " + std::to_string(prompt.rows()) + " rows, features have " +
                           std::to_string(x_t.rows()));
    }
    if (prompt.cols() == 0) return {x_t, x_p};
    return {ops::concat(tape, {prompt, x_t}, 1), ops::concat(tape, {prompt, x_p}, 1)};
  }
  if (prompt.cols() != x_t.cols()) {
    throw DimensionError("attach_prompt: prompt frames of width " + std::to_string(prompt.cols()) +
                         " cannot lead features of width " + std::to_string(x_t.cols()));
  }
  if (prompt.rows() == 0) return {x_t, x_p};
  return {ops::concat(tape, {prompt, x_t}, 0), ops::concat(tape, {prompt, x_p}, 0)};
}

template <typename T>
ContextStates<T> encode_context(Context<T>& ctx, const DapaLayerParams<T>& layer, const Tensor<T>& h_t,
                                const Tensor<T>& h_p) {
  if (h_t.rows() != h_p.rows()) throw DimensionError("encode_context: target and partner lengths differ");
  auto target = bilstm_forward(ctx, layer.target_encoder, h_t);
  auto partner = bilstm_forward(ctx, layer.partner_encoder, h_p);
  return {target.reactive, target.anticipatory, partner.reactive, partner.anticipatory};
}

template <typename T>
Alignments<T> parallel_cross_attention(Tape<T>& tape, const DapaLayerParams<T>& layer, const ContextStates<T>& s) {
  Alignments<T> a;
  a.anticipatory_tp = scaled_dot_attention(tape, layer.anticipatory_tp, s.anticipatory_t, s.anticipatory_p, s.anticipatory_p);
  a.anticipatory_pt = scaled_dot_attention(tape, layer.anticipatory_pt, s.anticipatory_p, s.anticipatory_t, s.anticipatory_t);
  a.reactive_tp = scaled_dot_attention(tape, layer.reactive_tp, s.reactive_t, s.reactive_p, s.reactive_p);
  a.reactive_pt = scaled_dot_attention(tape, layer.reactive_pt, s.reactive_p, s.reactive_t, s.reactive_t);
  return a;
}

template <typename T>
Tensor<T> fuse_alignments(Tape<T>& tape, const Tensor<T>& reactive, const Tensor<T>& anticipatory) {
  if (reactive.rows() != anticipatory.rows()) {
    throw DimensionError("fuse_alignments: " + to_string(reactive.shape()) + " vs " + to_string(anticipatory.shape()));
  }
  return ops::concat(tape, {reactive, anticipatory}, 1);
}

template <typename T>
Tensor<T> forward(Context<T>& ctx, const DapaModel<T>& model, const Tensor<T>& x_t, const Tensor<T>& x_p,
                  DomainSelection domain) {
  const ModelConfig& cfg = model.config;
  if (x_t.rank() != 2 || x_t.cols() != cfg.d_in) {
    throw DimensionError("forward: expected N×" + std::to_string(cfg.d_in) + " features, got " + to_string(x_t.shape()));
  }
  Tape<T>& tape = ctx.tape;
  auto [h_t, h_p] = attach_prompt(tape, model.prompts, cfg.prompt_mode, x_t, x_p, domain);

  auto project = [&](Tensor<T> h) {
    h = ops::dropout(tape, ops::tanh(tape, linear_forward(tape, model.projection_in, h)), cfg.dropout, ctx.rng, ctx.training);
    return ops::dropout(tape, ops::tanh(tape, linear_forward(tape, model.projection_out, h)), cfg.dropout, ctx.rng,
                        ctx.training);
  };
  h_t = project(h_t);
  h_p = project(h_p);

  for (const auto& layer : model.layers) {
    const ContextStates<T> states = encode_context(ctx, layer, h_t, h_p);
    const Alignments<T> aligned = parallel_cross_attention(tape, layer, states);
    h_t = fuse_alignments(tape, aligned.reactive_tp, aligned.anticipatory_tp);
    h_p = fuse_alignments(tape, aligned.reactive_pt, aligned.anticipatory_pt);
  }

  Tensor<T> dyadic = ops::concat(tape, {h_t, h_p}, 1);
  if (cfg.prompt_mode == PromptMode::TimePrepend && cfg.d_prompt > 0) {
    dyadic = ops::slice(tape, dyadic, 0, cfg.d_prompt, x_t.rows());
  }
  return mlp_head_forward(ctx, model.head, dyadic);
}

template <typename T>
Tensor<T> ccc_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& truth) {
  const std::size_t m = pred.size();
  if (truth.size() != m) {
    throw DimensionError("ccc_loss: prediction " + to_string(pred.shape()) + " vs truth " + to_string(truth.shape()));
  }
  if (m < 2) throw UsageError("ccc_loss needs at least 2 frames, got " + std::to_string(m));
  // Statistics in double regardless of T.
  const auto x = pred.data();
  const auto y = truth.data();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(m);
  my /= static_cast<double>(m);
  double sxy = 0.0, sxx = 0.0, syy = 0.0, sdd = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my, d = x[i] - y[i];
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
    sdd += d * d;
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  const double num = 2.0 * sxy * inv_m;
  const double den = (sxx + syy) * inv_m + (mx - my) * (mx - my);
  const bool degenerate = den < 1e-12;
  // den − num = mean((x − y)²), so this keeps full precision as CCC → 1.
  const double loss = degenerate ? 1.0 : sdd * inv_m / den;
  return tape.emit({}, {static_cast<T>(loss)}, {pred, truth},
                   [pred, truth, mx, my, num, den, degenerate, inv_m](Tape<T>& tp, const Tensor<T>& out) {
                     if (degenerate || !pred.requires_grad()) return;
                     const double g = out.grad()[0];
                     auto gx = tp.grad_of(pred);
                     const auto x = pred.data();
                     const auto y = truth.data();
                     const double shift = mx - my;
                     for (std::size_t i = 0; i < gx.size(); ++i) {
                       const double dx = x[i] - mx, dy = y[i] - my;
                       // d CCC / d x_i = (2/M)·[dy_i/den − num·(dx_i + (mx − my))/den²]
                       const double dccc = 2.0 * inv_m * (dy / den - num * (dx + shift) / (den * den));
                       gx[i] += static_cast<T>(-g * dccc);
                     }
                   });
}

#define DAPA_INSTANTIATE_MODEL(T)                                                                                 \
  template struct DomainPromptPool<T>;                                                                            \
  template struct DapaLayerParams<T>;                                                                             \
  template struct DapaModel<T>;                                                                                   \
  template PromptedPair<T> attach_prompt(Tape<T>&, const DomainPromptPool<T>&, PromptMode, const Tensor<T>&,      \
                                         const Tensor<T>&, DomainSelection);                                      \
  template ContextStates<T> encode_context(Context<T>&, const DapaLayerParams<T>&, const Tensor<T>&,              \
                                           const Tensor<T>&);                                                     \
  template Alignments<T> parallel_cross_attention(Tape<T>&, const DapaLayerParams<T>&, const ContextStates<T>&); \
  template Tensor<T> fuse_alignments(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> forward(Context<T>&, const DapaModel<T>&, const Tensor<T>&, const Tensor<T>&,                \
                             DomainSelection);                                                                    \
  template Tensor<T> ccc_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&);

DAPA_INSTANTIATE_MODEL(float)
DAPA_INSTANTIATE_MODEL(double)

}  // namespace dapa
