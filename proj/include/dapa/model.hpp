#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dapa/layers.hpp"

namespace dapa {

enum class PromptMode {
  FeatureConcat,  // row t of the prompt is joined to frame t (N × (D_in + D_p))
  TimePrepend,    // D_p prompt frames of width D_in lead the sequence and are dropped before the head
};

enum class UnknownDomainPolicy { Error, MeanPrompt };

struct ModelConfig {
  std::size_t d_in = 2989;  // 88 + 768 + 714 + 139 + 1280
  std::size_t d_prompt = 64;
  std::size_t d_model = 512;
  std::size_t lstm_layers = 3;
  std::size_t num_dapa_layers = 1;
  double dropout = 0.1;
  bool attention_projections = true;
  std::size_t attention_heads = 1;
  std::vector<std::size_t> head_hidden{512};
  std::size_t window_length = 96;
  PromptMode prompt_mode = PromptMode::FeatureConcat;
  UnknownDomainPolicy unknown_domain = UnknownDomainPolicy::Error;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Which prompt a sample uses: a pool index, or the element-wise mean of the
/// whole pool (fallback for domains unseen in training).
struct DomainSelection {
  std::optional<std::size_t> index;
  static DomainSelection mean() { return {}; }
  static DomainSelection of(std::size_t i) { return {i}; }
};

template <typename T>
struct DomainPromptPool {
  std::vector<std::string> names;  // sorted; position = domain index
  std::vector<Tensor<T>> prompts;  // one per domain

  std::size_t size() const { return names.size(); }
  std::optional<std::size_t> index_of(std::string_view name) const;
  /// Prompt tensor for `sel`; the mean form is built on `tape` so it stays differentiable.
  Tensor<T> select(Tape<T>& tape, DomainSelection sel) const;
};

template <typename T>
struct DapaLayerParams {
  LstmStackParams<T> target_encoder;
  LstmStackParams<T> partner_encoder;
  AttentionParams<T> anticipatory_tp;  // target queries partner
  AttentionParams<T> anticipatory_pt;  // partner queries target
  AttentionParams<T> reactive_tp;
  AttentionParams<T> reactive_pt;

  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
struct DapaModel {
  ModelConfig config;
  DomainPromptPool<T> prompts;
  LinearParams<T> projection_in;   // (D_in + D_p) → d_model
  LinearParams<T> projection_out;  // d_model → d_model
  std::vector<DapaLayerParams<T>> layers;
  MlpHeadParams<T> head;

  /// Fresh parameters. Domain names are sorted to fix the pool order.
  static DapaModel init(const ModelConfig& config, std::vector<std::string> domains, std::uint64_t seed);

  /// Every trainable tensor with a stable dotted name, in a fixed order.
  ParameterList<T> parameters() const;
  std::size_t num_parameters() const;

  /// Closed form of the parameter count for a configuration with
  /// `num_domains` prompts (d = d_model, D_p = d_prompt):
  ///   prompts     K·N_w·D_p                 (time-prepend: K·D_p·D_in)
  ///   projection  (D_in+D_p)·d + d + d² + d  (time-prepend: D_in·d + …)
  ///   per layer   2 · BiLSTM(in, d, lstm_layers) + 4 · 3d² (projections on)
  ///               with in = d for the first layer and 2d afterwards, and
  ///               BiLSTM(in, d, n) = Σ_l 2·(4d·in_l + 4d² + 4d)
  ///   head        MLP over 4d inputs ending in one unit
  static std::size_t parameter_count(const ModelConfig& config, std::size_t num_domains);

  /// Independent copy of every parameter.
  DapaModel clone() const;

  /// Maps a domain name to a prompt, applying the unknown-domain policy.
  DomainSelection resolve_domain(std::string_view name) const;
};

template <typename T>
struct PromptedPair {
  Tensor<T> target;
  Tensor<T> partner;
};

/// Attaches the same domain prompt to both participants' feature sequences.
template <typename T>
PromptedPair<T> attach_prompt(Tape<T>& tape, const DomainPromptPool<T>& pool, PromptMode mode, const Tensor<T>& x_t,
                              const Tensor<T>& x_p, DomainSelection domain);

template <typename T>
struct ContextStates {
  Tensor<T> reactive_t;
  Tensor<T> anticipatory_t;
  Tensor<T> reactive_p;
  Tensor<T> anticipatory_p;
};

/// Runs the two independent BiLSTM encoders.
template <typename T>
ContextStates<T> encode_context(Context<T>& ctx, const DapaLayerParams<T>& layer, const Tensor<T>& h_t,
                                const Tensor<T>& h_p);

template <typename T>
struct Alignments {
  Tensor<T> anticipatory_tp;
  Tensor<T> anticipatory_pt;
  Tensor<T> reactive_tp;
  Tensor<T> reactive_pt;
};

/// Four attention flows; reactive queries only see reactive keys and
/// anticipatory queries only anticipatory keys.
template <typename T>
Alignments<T> parallel_cross_attention(Tape<T>& tape, const DapaLayerParams<T>& layer, const ContextStates<T>& states);

/// [reactive ‖ anticipatory] along features.
template <typename T>
Tensor<T> fuse_alignments(Tape<T>& tape, const Tensor<T>& reactive, const Tensor<T>& anticipatory);

template <typename T>
Tensor<T> forward(Context<T>& ctx, const DapaModel<T>& model, const Tensor<T>& x_t, const Tensor<T>& x_p,
                  DomainSelection domain);

/// 1 − CCC(pred, truth) with population statistics; differentiable in pred.
/// A degenerate denominator (< 1e-12) gives CCC 0, hence loss 1 and zero gradient.
template <typename T>
Tensor<T> ccc_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& truth);

}  // namespace dapa
