#include "dapa/verify.hpp"

#include <cmath>
#include <functional>

namespace dapa {

namespace {

Tensor<double> uniform(Shape shape, std::uint64_t seed, double scale = 1.0) {
  RngStream rng(seed);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

/// Σ y ⊙ w for a fixed random w, so every output coordinate matters.
Tensor<double> project_scalar(Tape<double>& tape, const Tensor<double>& y, std::uint64_t seed) {
  return ops::sum(tape, ops::mul(tape, y, uniform(y.shape(), seed)));
}

void append(std::vector<NamedInput>& inputs, const ParameterList<double>& params) {
  for (const auto& p : params) inputs.push_back({p.name, p.tensor});
}

ModelConfig probe_config(PromptMode mode) {
  ModelConfig c;
  c.d_in = 5;
  c.d_prompt = 3;
  c.d_model = 8;
  c.lstm_layers = 2;
  c.num_dapa_layers = 2;
  c.head_hidden = {6};
  c.window_length = 6;
  c.prompt_mode = mode;
  return c;
}

}  // namespace

EndToEndProbe EndToEndProbe::make(PromptMode mode, std::uint64_t seed) {
  const ModelConfig c = probe_config(mode);
  EndToEndProbe p{DapaModel<double>::init(c, {"a", "b"}, seed), uniform({6, 5}, seed + 1), uniform({6, 5}, seed + 2),
                  Tensor<double>(), DomainSelection::of(1)};
  for (auto& np : p.model.parameters()) {
    if (np.name.rfind("prompt.", 0) == 0) continue;
    for (auto& v : np.tensor.mutable_data()) v *= 3.0;
  }

  Tape<double> tape(false);
  Context<double> ctx{tape, RngStream(0), false};
  auto logits = [&] {
    const Tensor<double> y = forward(ctx, p.model, p.x_t, p.x_p, p.domain);
    std::vector<double> z;
    for (double v : y.data()) z.push_back(std::log(v / (1.0 - v)));
    return z;
  };
  auto moments = [](const std::vector<double>& z) {
    double m = 0.0, s = 0.0;
    for (double v : z) m += v / static_cast<double>(z.size());
    for (double v : z) s += (v - m) * (v - m) / static_cast<double>(z.size());
    return std::pair{m, std::sqrt(s)};
  };

  const auto [zm, zs] = moments(logits());
  const double k = 1.0 / zs;
  auto& out = p.model.head.layers.back();
  for (auto& v : out.weight.mutable_data()) v *= k;
  for (auto& v : out.bias.mutable_data()) v = k * (v - zm);

  const Tensor<double> y = forward(ctx, p.model, p.x_t, p.x_p, p.domain);
  double mean = 0.0, var = 0.0;
  for (double v : y.data()) mean += v / 6.0;
  for (double v : y.data()) var += (v - mean) * (v - mean) / 6.0;
  p.truth = uniform({6, 1}, seed + 3, 0.5 * std::sqrt(var));
  for (std::size_t i = 0; i < 6; ++i) p.truth.mutable_data()[i] += y.at(i);
  return p;
}

Tensor<double> EndToEndProbe::loss(Tape<double>& tape) const {
  Context<double> ctx{tape, RngStream(0), false};
  return ccc_loss(tape, forward(ctx, model, x_t, x_p, domain), truth);
}

std::vector<NamedInput> EndToEndProbe::inputs() const {
  std::vector<NamedInput> in{{"x_t", x_t}, {"x_p", x_p}};
  append(in, model.parameters());
  return in;
}

std::vector<BlockCheck> run_gradcheck_suite(bool full, double tolerance) {
  struct Block {
    std::string name;
    ScalarFunction f;
    std::vector<NamedInput> inputs;
    std::size_t max_coords = 0;
  };
  std::vector<Block> blocks;

  const auto a = uniform({3, 4}, 11), b = uniform({4, 2}, 12), c = uniform({3, 4}, 13);
  const auto bias = uniform({4}, 14), w = uniform({5, 4}, 15);
  const auto gates = uniform({4, 8}, 16), w_hh = uniform({8, 2}, 17);
  auto primitive = [&](std::string name, std::function<Tensor<double>(Tape<double>&)> g,
                       std::vector<NamedInput> in) {
    blocks.push_back({"op." + name, [g](Tape<double>& t) { return project_scalar(t, g(t), 99); }, std::move(in)});
  };
  primitive("matmul", [=](Tape<double>& t) { return ops::matmul(t, a, b); }, {{"a", a}, {"b", b}});
  primitive("matmul_nt", [=](Tape<double>& t) { return ops::matmul_nt(t, a, w); }, {{"a", a}, {"w", w}});
  primitive("add", [=](Tape<double>& t) { return ops::add(t, a, c); }, {{"a", a}, {"c", c}});
  primitive("sub", [=](Tape<double>& t) { return ops::sub(t, a, c); }, {{"a", a}, {"c", c}});
  primitive("mul", [=](Tape<double>& t) { return ops::mul(t, a, c); }, {{"a", a}, {"c", c}});
  primitive("scale", [=](Tape<double>& t) { return ops::scale(t, a, -1.7); }, {{"a", a}});
  primitive("add_row", [=](Tape<double>& t) { return ops::add_row(t, a, bias); }, {{"a", a}, {"bias", bias}});
  primitive("tanh", [=](Tape<double>& t) { return ops::tanh(t, a); }, {{"a", a}});
  primitive("sigmoid", [=](Tape<double>& t) { return ops::sigmoid(t, a); }, {{"a", a}});
  primitive("exp", [=](Tape<double>& t) { return ops::unary(t, a, ops::Unary::Exp); }, {{"a", a}});
  primitive("softmax_rows", [=](Tape<double>& t) { return ops::softmax_rows(t, a); }, {{"a", a}});
  primitive("concat", [=](Tape<double>& t) { return ops::concat(t, {a, c}, 0); }, {{"a", a}, {"c", c}});
  primitive("slice", [=](Tape<double>& t) { return ops::slice(t, a, 1, 1, 2); }, {{"a", a}});
  primitive("dropout", [=](Tape<double>& t) {
    RngStream rng(5);
    return ops::dropout(t, a, 0.3, rng, true);
  }, {{"a", a}});
  primitive("lstm_recurrence", [=](Tape<double>& t) { return ops::lstm_recurrence(t, gates, w_hh, false); },
            {{"gates", gates}, {"w_hh", w_hh}});
  primitive("lstm_recurrence_reverse", [=](Tape<double>& t) { return ops::lstm_recurrence(t, gates, w_hh, true); },
            {{"gates", gates}, {"w_hh", w_hh}});

  RngStream rng(21);
  const auto linear = LinearParams<double>::init(5, 8, rng);
  const auto x6 = uniform({6, 5}, 22);
  {
    std::vector<NamedInput> in{{"x", x6}};
    ParameterList<double> ps;
    linear.collect("linear", ps);
    append(in, ps);
    blocks.push_back({"layer.linear", [=](Tape<double>& t) { return project_scalar(t, linear_forward(t, linear, x6), 23); }, in});
  }
  {
    const auto cell = LstmDirectionParams<double>::init(5, 8, rng);
    const auto x1 = uniform({1, 5}, 24);
    std::vector<NamedInput> in{{"x", x1}};
    ParameterList<double> ps;
    cell.collect("cell", ps);
    append(in, ps);
    blocks.push_back({"layer.lstm_cell",
                      [=](Tape<double>& t) { return project_scalar(t, lstm_direction_forward(t, cell, x1, false), 25); }, in});
  }
  {
    const auto stack = LstmStackParams<double>::init(5, 8, 2, 0.0, rng);
    std::vector<NamedInput> in{{"x", x6}};
    ParameterList<double> ps;
    stack.collect("bilstm", ps);
    append(in, ps);
    blocks.push_back({"layer.bilstm",
                      [=](Tape<double>& t) {
                        Context<double> ctx{t, RngStream(0), false};
                        const auto out = bilstm_forward(ctx, stack, x6);
                        return ops::add(t, project_scalar(t, out.reactive, 26), project_scalar(t, out.anticipatory, 27));
                      },
                      in});
  }
  for (const auto& [project, heads] : std::vector<std::pair<bool, std::size_t>>{{true, 1}, {false, 1}, {true, 2}}) {
    const auto attn = AttentionParams<double>::init(8, heads, project, rng);
    const auto q = uniform({6, 8}, 28), k = uniform({6, 8}, 29), v = uniform({6, 8}, 30);
    std::vector<NamedInput> in{{"q", q}, {"k", k}, {"v", v}};
    ParameterList<double> ps;
    attn.collect("attention", ps);
    append(in, ps);
    blocks.push_back({std::string("layer.attention") + (project ? "" : "_raw") + (heads > 1 ? "_2heads" : ""),
                      [=](Tape<double>& t) { return project_scalar(t, scaled_dot_attention(t, attn, q, k, v), 31); }, in});
  }
  {
    const auto head = MlpHeadParams<double>::init(32, {6}, 0.0, rng);
    const auto x = uniform({6, 32}, 32);
    std::vector<NamedInput> in{{"x", x}};
    ParameterList<double> ps;
    head.collect("head", ps);
    append(in, ps);
    blocks.push_back({"layer.mlp_head",
                      [=](Tape<double>& t) {
                        Context<double> ctx{t, RngStream(0), false};
                        return project_scalar(t, mlp_head_forward(ctx, head, x), 33);
                      },
                      in});
  }
  {
    const auto pred = uniform({12}, 34, 0.5), truth = uniform({12}, 35, 0.5);
    blocks.push_back({"loss.ccc", [=](Tape<double>& t) { return ccc_loss(t, pred, truth); }, {{"pred", pred}}});
  }
  if (full) {
    for (auto mode : {PromptMode::FeatureConcat, PromptMode::TimePrepend}) {
      auto probe = std::make_shared<EndToEndProbe>(EndToEndProbe::make(mode, 112));
      blocks.push_back({mode == PromptMode::FeatureConcat ? "model.end_to_end" : "model.end_to_end_time_prepend",
                        [probe](Tape<double>& t) { return probe->loss(t); }, probe->inputs(), 12});
    }
  }

  std::vector<BlockCheck> out;
  for (auto& blk : blocks) {
    BlockCheck check{blk.name, finite_diff_check(blk.f, blk.inputs, 1e-5, blk.max_coords), false};
    check.passed = check.result.max_relative_error < tolerance;
    out.push_back(std::move(check));
  }
  return out;
}

}  // namespace dapa
