#include "dapa/layers.hpp"

#include <cmath>

namespace dapa {

template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, RngStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

template <typename T>
LinearParams<T> LinearParams<T>::init(std::size_t in, std::size_t out, RngStream& rng) {
  if (in == 0 || out == 0) throw ConfigError("linear layer sizes must be positive");
  return {uniform_fan_in<T>({out, in}, in, rng), Tensor<T>::zeros({out})};
}

template <typename T>
void LinearParams<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
Tensor<T> linear_forward(Tape<T>& tape, const LinearParams<T>& p, const Tensor<T>& x) {
  if (x.rank() != 2 || x.cols() != p.in_features()) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " does not match weight " + to_string(p.weight.shape()));
  }
  return ops::add_row(tape, ops::matmul_nt(tape, x, p.weight), p.bias);
}

template <typename T>
LstmDirectionParams<T> LstmDirectionParams<T>::init(std::size_t input, std::size_t hidden, RngStream& rng) {
  if (input == 0 || hidden == 0) throw ConfigError("LSTM sizes must be positive");
  LstmDirectionParams p;
  p.w_ih = uniform_fan_in<T>({4 * hidden, input}, input, rng);
  p.w_hh = uniform_fan_in<T>({4 * hidden, hidden}, hidden, rng);
  p.bias = Tensor<T>::zeros({4 * hidden});
  auto b = p.bias.mutable_data();
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = T{1};
  return p;
}

template <typename T>
void LstmDirectionParams<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".w_ih", w_ih});
  out.push_back({prefix + ".w_hh", w_hh});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
Tensor<T> lstm_direction_forward(Tape<T>& tape, const LstmDirectionParams<T>& p, const Tensor<T>& x, bool reverse) {
  if (x.rank() != 2 || x.cols() != p.w_ih.cols()) {
    throw DimensionError("lstm: input " + to_string(x.shape()) + " does not match w_ih " + to_string(p.w_ih.shape()));
  }
  const Tensor<T> gates = ops::add_row(tape, ops::matmul_nt(tape, x, p.w_ih), p.bias);
  return ops::lstm_recurrence(tape, gates, p.w_hh, reverse);
}

template <typename T>
LstmStackParams<T> LstmStackParams<T>::init(std::size_t input, std::size_t hidden, std::size_t num_layers,
                                            double dropout, RngStream& rng) {
  if (num_layers == 0) throw ConfigError("LSTM stack needs at least one layer");
  LstmStackParams p;
  p.input_size = input;
  p.hidden = hidden;
  p.dropout = dropout;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::size_t in = l == 0 ? input : 2 * hidden;
    auto fwd = LstmDirectionParams<T>::init(in, hidden, rng);
    auto bwd = LstmDirectionParams<T>::init(in, hidden, rng);
    p.layers.push_back({std::move(fwd), std::move(bwd)});
  }
  return p;
}

template <typename T>
void LstmStackParams<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].forward.collect(prefix + ".l" + std::to_string(l) + ".fwd", out);
    layers[l].backward.collect(prefix + ".l" + std::to_string(l) + ".bwd", out);
  }
}

template <typename T>
std::size_t LstmStackParams<T>::parameter_count(std::size_t input, std::size_t hidden, std::size_t num_layers) {
  std::size_t total = 0;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::size_t in = l == 0 ? input : 2 * hidden;
    total += 2 * (4 * hidden * in + 4 * hidden * hidden + 4 * hidden);
  }
  return total;
}

template <typename T>
BiLstmOutput<T> bilstm_forward(Context<T>& ctx, const LstmStackParams<T>& p, const Tensor<T>& x) {
  if (x.rank() != 2 || x.rows() == 0) throw UsageError("bilstm_forward needs at least one frame, got " + to_string(x.shape()));
  Tensor<T> input = x;
  BiLstmOutput<T> out;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    out.reactive = lstm_direction_forward(ctx.tape, p.layers[l].forward, input, false);
    out.anticipatory = lstm_direction_forward(ctx.tape, p.layers[l].backward, input, true);
    if (l + 1 < p.layers.size()) {
      input = ops::concat(ctx.tape, {out.reactive, out.anticipatory}, 1);
      input = ops::dropout(ctx.tape, input, p.dropout, ctx.rng, ctx.training);
    }
  }
  return out;
}

template <typename T>
AttentionParams<T> AttentionParams<T>::init(std::size_t dim, std::size_t heads, bool project, RngStream& rng) {
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("attention dim " + std::to_string(dim) + " must be a positive multiple of heads " +
                      std::to_string(heads));
  }
  AttentionParams p;
  p.dim = dim;
  p.heads = heads;
  p.project = project;
  if (project) {
    p.w_q = uniform_fan_in<T>({dim, dim}, dim, rng);
    p.w_k = uniform_fan_in<T>({dim, dim}, dim, rng);
    p.w_v = uniform_fan_in<T>({dim, dim}, dim, rng);
  }
  return p;
}

template <typename T>
void AttentionParams<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  if (!project) return;
  out.push_back({prefix + ".w_q", w_q});
  out.push_back({prefix + ".w_k", w_k});
  out.push_back({prefix + ".w_v", w_v});
}

template <typename T>
Tensor<T> scaled_dot_attention(Tape<T>& tape, const AttentionParams<T>& p, const Tensor<T>& q, const Tensor<T>& k,
                               const Tensor<T>& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw DimensionError("attention expects matrices");
  if (q.cols() != k.cols()) {
    throw DimensionError("attention: query " + to_string(q.shape()) + " and key " + to_string(k.shape()) +
                         " feature sizes differ");
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("attention: key " + to_string(k.shape()) + " and value " + to_string(v.shape()) +
                         " row counts differ");
  }
  Tensor<T> qp = q, kp = k, vp = v;
  if (p.project) {
    if (q.cols() != p.dim || v.cols() != p.dim) {
      throw DimensionError("attention: inputs " + to_string(q.shape()) + "/" + to_string(v.shape()) +
                           " do not match projection size " + std::to_string(p.dim));
    }
    qp = ops::matmul_nt(tape, q, p.w_q);
    kp = ops::matmul_nt(tape, k, p.w_k);
    vp = ops::matmul_nt(tape, v, p.w_v);
  }
  const std::size_t heads = p.heads;
  if (qp.cols() % heads != 0 || vp.cols() % heads != 0) throw DimensionError("attention: features not divisible by heads");
  const std::size_t dk = qp.cols() / heads;
  const std::size_t dv = vp.cols() / heads;
  const T inv_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
  std::vector<Tensor<T>> outputs;
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor<T> qh = heads == 1 ? qp : ops::slice(tape, qp, 1, h * dk, dk);
    const Tensor<T> kh = heads == 1 ? kp : ops::slice(tape, kp, 1, h * dk, dk);
    const Tensor<T> vh = heads == 1 ? vp : ops::slice(tape, vp, 1, h * dv, dv);
    const Tensor<T> scores = ops::scale(tape, ops::matmul_nt(tape, qh, kh), inv_scale);
    outputs.push_back(ops::matmul(tape, ops::softmax_rows(tape, scores), vh));
  }
  return heads == 1 ? outputs[0] : ops::concat(tape, outputs, 1);
}

template <typename T>
MlpHeadParams<T> MlpHeadParams<T>::init(std::size_t input, const std::vector<std::size_t>& hidden, double dropout,
                                        RngStream& rng) {
  MlpHeadParams p;
  p.dropout = dropout;
  std::size_t in = input;
  for (std::size_t width : hidden) {
    p.layers.push_back(LinearParams<T>::init(in, width, rng));
    in = width;
  }
  p.layers.push_back(LinearParams<T>::init(in, 1, rng));
  return p;
}

template <typename T>
void MlpHeadParams<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + "." + std::to_string(i), out);
}

template <typename T>
std::size_t MlpHeadParams<T>::parameter_count(std::size_t input, const std::vector<std::size_t>& hidden) {
  std::size_t total = 0, in = input;
  for (std::size_t w : hidden) {
    total += in * w + w;
    in = w;
  }
  return total + in + 1;
}

template <typename T>
Tensor<T> mlp_head_forward(Context<T>& ctx, const MlpHeadParams<T>& p, const Tensor<T>& x) {
  if (p.layers.empty()) throw ConfigError("MLP head has no layers");
  if (p.layers.back().out_features() != 1) throw ConfigError("MLP head must end in a single output");
  Tensor<T> h = x;
  for (std::size_t i = 0; i + 1 < p.layers.size(); ++i) {
    h = ops::tanh(ctx.tape, linear_forward(ctx.tape, p.layers[i], h));
    h = ops::dropout(ctx.tape, h, p.dropout, ctx.rng, ctx.training);
  }
  return ops::sigmoid(ctx.tape, linear_forward(ctx.tape, p.layers.back(), h));
}

#define DAPA_INSTANTIATE_LAYERS(T)                                                                           \
  template Tensor<T> uniform_fan_in<T>(Shape, std::size_t, RngStream&);                                      \
  template struct LinearParams<T>;                                                                           \
  template struct LstmDirectionParams<T>;                                                                    \
  template struct LstmStackParams<T>;                                                                        \
  template struct AttentionParams<T>;                                                                        \
  template struct MlpHeadParams<T>;                                                                          \
  template Tensor<T> linear_forward(Tape<T>&, const LinearParams<T>&, const Tensor<T>&);                     \
  template Tensor<T> lstm_direction_forward(Tape<T>&, const LstmDirectionParams<T>&, const Tensor<T>&, bool); \
  template BiLstmOutput<T> bilstm_forward(Context<T>&, const LstmStackParams<T>&, const Tensor<T>&);         \
  template Tensor<T> scaled_dot_attention(Tape<T>&, const AttentionParams<T>&, const Tensor<T>&,             \
                                          const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mlp_head_forward(Context<T>&, const MlpHeadParams<T>&, const Tensor<T>&);

DAPA_INSTANTIATE_LAYERS(float)
DAPA_INSTANTIATE_LAYERS(double)

}  // namespace dapa
