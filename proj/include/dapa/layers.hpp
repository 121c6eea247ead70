#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dapa/ops.hpp"
#include "dapa/rng.hpp"
#include "dapa/tensor.hpp"

namespace dapa {

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

/// Everything a forward pass needs besides parameters and inputs.
template <typename T>
struct Context {
  Tape<T>& tape;
  RngStream rng;  // dropout draws
  bool training = false;
};

/// Weights drawn from uniform(−1/√fan_in, 1/√fan_in).
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, RngStream& rng);

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // out × in
  Tensor<T> bias;    // out

  static LinearParams init(std::size_t in, std::size_t out, RngStream& rng);
  std::size_t in_features() const { return weight.cols(); }
  std::size_t out_features() const { return weight.rows(); }
  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

/// x · Wᵀ + b for every row of x.
template <typename T>
Tensor<T> linear_forward(Tape<T>& tape, const LinearParams<T>& p, const Tensor<T>& x);

/// One direction of one LSTM layer. Gate blocks are stacked in the order
/// input, forget, cell, output along the first axis.
template <typename T>
struct LstmDirectionParams {
  Tensor<T> w_ih;  // 4H × I
  Tensor<T> w_hh;  // 4H × H
  Tensor<T> bias;  // 4H; forget block starts at 1

  static LstmDirectionParams init(std::size_t input, std::size_t hidden, RngStream& rng);
  std::size_t hidden() const { return w_hh.cols(); }
  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
Tensor<T> lstm_direction_forward(Tape<T>& tape, const LstmDirectionParams<T>& p, const Tensor<T>& x, bool reverse);

template <typename T>
struct LstmStackParams {
  struct Layer {
    LstmDirectionParams<T> forward;
    LstmDirectionParams<T> backward;
  };
  std::size_t input_size = 0;
  std::size_t hidden = 0;
  double dropout = 0.0;  // between layers, training only
  std::vector<Layer> layers;

  static LstmStackParams init(std::size_t input, std::size_t hidden, std::size_t num_layers, double dropout,
                              RngStream& rng);
  void collect(const std::string& prefix, ParameterList<T>& out) const;
  static std::size_t parameter_count(std::size_t input, std::size_t hidden, std::size_t num_layers);
};

/// Top-layer direction outputs, deliberately kept apart.
template <typename T>
struct BiLstmOutput {
  Tensor<T> reactive;      // forward pass: row t summarizes frames 0..t
  Tensor<T> anticipatory;  // backward pass: row t summarizes frames t..N-1
};

template <typename T>
BiLstmOutput<T> bilstm_forward(Context<T>& ctx, const LstmStackParams<T>& p, const Tensor<T>& x);

template <typename T>
struct AttentionParams {
  std::size_t dim = 0;
  std::size_t heads = 1;
  bool project = true;
  Tensor<T> w_q, w_k, w_v;  // dim × dim, bias-free; undefined when !project

  static AttentionParams init(std::size_t dim, std::size_t heads, bool project, RngStream& rng);
  std::size_t key_dim() const { return dim / heads; }
  void collect(const std::string& prefix, ParameterList<T>& out) const;
  static std::size_t parameter_count(std::size_t dim, bool project) { return project ? 3 * dim * dim : 0; }
};

/// softmax(Q Kᵀ / √d_k) V per head, heads concatenated along features. Q, K
/// and V first pass through the learned projections when enabled.
template <typename T>
Tensor<T> scaled_dot_attention(Tape<T>& tape, const AttentionParams<T>& p, const Tensor<T>& q, const Tensor<T>& k,
                               const Tensor<T>& v);

template <typename T>
struct MlpHeadParams {
  std::vector<LinearParams<T>> layers;
  double dropout = 0.0;

  static MlpHeadParams init(std::size_t input, const std::vector<std::size_t>& hidden, double dropout,
                            RngStream& rng);
  void collect(const std::string& prefix, ParameterList<T>& out) const;
  static std::size_t parameter_count(std::size_t input, const std::vector<std::size_t>& hidden);
};

/// Hidden layers: linear → tanh → dropout. Output layer: linear → sigmoid.
template <typename T>
Tensor<T> mlp_head_forward(Context<T>& ctx, const MlpHeadParams<T>& p, const Tensor<T>& x);

}  // namespace dapa
