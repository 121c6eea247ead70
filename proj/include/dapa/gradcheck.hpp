#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dapa/tensor.hpp"

namespace dapa {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_input;        // name of the input holding the worst coordinate
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coordinates = 0;    // number of coordinates compared
};

struct NamedInput {
  std::string name;
  Tensor<double> tensor;
};

using ScalarFunction = std::function<Tensor<double>(Tape<double>&)>;

/// Compares reverse-mode gradients of `f` with respect to every input against
/// central differences (f(x+εeᵢ) − f(x−εeᵢ)) / 2ε. Relative error per
/// coordinate is |a − n| / max(|a|, |n|, 1e-8).
///
/// `f` must read the inputs through their handles; the check perturbs them in
/// place and restores them. `max_coords_per_input` > 0 samples that many
/// coordinates (evenly strided) from larger inputs.
GradCheckResult finite_diff_check(const ScalarFunction& f, std::vector<NamedInput> inputs, double eps = 1e-5,
                                  std::size_t max_coords_per_input = 0);

/// Single-input convenience form.
GradCheckResult finite_diff_check(const std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)>& f,
                                  Tensor<double> x, double eps = 1e-5);

}  // namespace dapa
