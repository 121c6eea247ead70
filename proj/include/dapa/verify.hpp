#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dapa/gradcheck.hpp"
#include "dapa/model.hpp"

namespace dapa {

struct BlockCheck {
  std::string block;
  GradCheckResult result;
  bool passed = false;
};

/// A tiny double-precision model with inputs and truths at which the
/// end-to-end check is well conditioned.
///
/// At initialisation the stack averages frames together (near-uniform
/// attention, shrinking activations), every prediction is the same, and
/// gradients sit at the roundoff floor of the central differences. The probe
/// scales every non-prompt weight by 3, standardises the head logits across
/// frames, and places the truths near the predictions so the loss is small.
struct EndToEndProbe {
  DapaModel<double> model;
  Tensor<double> x_t;
  Tensor<double> x_p;
  Tensor<double> truth;
  DomainSelection domain;

  static EndToEndProbe make(PromptMode mode, std::uint64_t seed);
  /// 1 − CCC of the evaluation-mode forward pass.
  Tensor<double> loss(Tape<double>& tape) const;
  std::vector<NamedInput> inputs() const;
};

/// Finite-difference checks per primitive and per layer block (d_model = 8,
/// N_w = 6, two DAPA layers). `full` adds the end-to-end forward + CCC loss.
std::vector<BlockCheck> run_gradcheck_suite(bool full, double tolerance = 1e-4);

}  // namespace dapa
