#include "dapa/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dapa {

GradCheckResult finite_diff_check(const ScalarFunction& f, std::vector<NamedInput> inputs, double eps,
                                  std::size_t max_coords_per_input) {
  if (!(eps > 0.0)) throw UsageError("finite_diff_check: eps must be positive");
  std::vector<bool> previous_flag;
  for (auto& in : inputs) {
    previous_flag.push_back(in.tensor.requires_grad());
    in.tensor.set_requires_grad(true);
    in.tensor.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    const Tensor<double> loss = f(tape);
    tape.backward(loss);
    for (auto& in : inputs) {
      if (in.tensor.has_grad()) {
        analytic.emplace_back(in.tensor.grad().begin(), in.tensor.grad().end());
      } else {
        analytic.emplace_back(in.tensor.size(), 0.0);
      }
      in.tensor.zero_grad();
    }
  }

  auto evaluate = [&f]() {
    Tape<double> tape(false);
    return f(tape).item();
  };

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].tensor.mutable_data();
    const std::size_t n = values.size();
    const std::size_t stride =
        (max_coords_per_input == 0 || n <= max_coords_per_input) ? 1 : (n + max_coords_per_input - 1) / max_coords_per_input;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate();
      values[i] = saved - eps;
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++result.coordinates;
      if (rel > result.max_relative_error || result.coordinates == 1) {
        result.max_relative_error = std::max(result.max_relative_error, rel);
        if (rel >= result.max_relative_error) {
          result.worst_input = inputs[k].name;
          result.worst_index = i;
          result.analytic_at_worst = a;
          result.numeric_at_worst = numeric;
        }
      }
    }
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) inputs[k].tensor.set_requires_grad(previous_flag[k]);
  return result;
}

GradCheckResult finite_diff_check(const std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)>& f,
                                  Tensor<double> x, double eps) {
  return finite_diff_check([&f, x](Tape<double>& tape) { return f(tape, x); }, {{"x", x}}, eps);
}

}  // namespace dapa
