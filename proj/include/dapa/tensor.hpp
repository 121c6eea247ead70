#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dapa/errors.hpp"

namespace dapa {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  const Tape<T>* producer = nullptr;  // nullptr for leaves
};

}  // namespace detail

/// Dense row-major tensor with shared-handle semantics: copies alias the same
/// storage, which is how a parameter participates in many tapes at once.
template <typename T>
class Tensor {
 public:
  using Node = detail::TensorNode<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape) {
    const std::size_t n = numel(shape);
    return from(std::move(shape), std::vector<T>(n, T{0}));
  }
  static Tensor full(Shape shape, T v) {
    const std::size_t n = numel(shape);
    return from(std::move(shape), std::vector<T>(n, v));
  }
  static Tensor from(Shape shape, std::vector<T> values) {
    if (numel(shape) != values.size()) {
      throw DimensionError("tensor shape " + to_string(shape) + " holds " + std::to_string(numel(shape)) +
                           " values, got " + std::to_string(values.size()));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    return Tensor(std::move(node));
  }
  static Tensor scalar(T v) { return from({}, {v}); }
  /// 2-D helper: rows x cols from nested rows.
  static Tensor matrix(const std::vector<std::vector<T>>& rows);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.at(1); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  /// Mutable view for parameter updates and test fixtures. Writing into a
  /// tensor that a live tape has recorded invalidates that tape.
  std::span<T> mutable_data() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  T item() const {
    if (node_->value.size() != 1) throw UsageError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }
  T at(std::size_t i) const { return node_->value.at(i); }
  T at(std::size_t r, std::size_t c) const { return node_->value.at(r * cols() + c); }

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const noexcept { return node_->producer == nullptr; }

  bool has_grad() const noexcept { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }
  void ensure_grad() {
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), T{0});
  }

  /// Value copy with no history.
  Tensor detach() const { return from(shape(), node_->value); }
  bool all_finite() const {
    for (T v : node_->value)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Node* node() const noexcept { return node_.get(); }
  bool same_storage(const Tensor& other) const noexcept { return node_ == other.node_; }

 private:
  friend class Tape<T>;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

/// Per-tape redirect for leaf gradients, so independent samples can be
/// differentiated concurrently against shared parameters and reduced later in
/// a fixed order.
template <typename T>
class GradientSink {
 public:
  std::vector<T>& buffer(const Tensor<T>& leaf) {
    auto& buf = buffers_[leaf.node()];
    if (buf.size() != leaf.size()) buf.assign(leaf.size(), T{0});
    return buf;
  }
  /// Gradient gathered for `leaf`, or nullptr if it never received one.
  const std::vector<T>* find(const Tensor<T>& leaf) const {
    auto it = buffers_.find(leaf.node());
    return it == buffers_.end() ? nullptr : &it->second;
  }
  void clear() { buffers_.clear(); }

 private:
  std::unordered_map<const detail::TensorNode<T>*, std::vector<T>> buffers_;
};

/// Records differentiable operations in execution order and replays their
/// backward rules in reverse. A tape belongs to one thread at a time.
template <typename T>
class Tape {
 public:
  using BackwardRule = std::function<void(Tape&, const Tensor<T>& output)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return records_.size(); }

  /// Route leaf gradients into `sink` instead of the leaves' own buffers.
  void set_gradient_sink(GradientSink<T>* sink) noexcept { sink_ = sink; }

  /// Wraps `values` as the result of an operation on `inputs`. The backward
  /// rule is stored only when recording and some input requires a gradient.
  Tensor<T> emit(Shape shape, std::vector<T> values, std::initializer_list<Tensor<T>> inputs, BackwardRule rule) {
    return emit(std::move(shape), std::move(values), std::vector<Tensor<T>>(inputs), std::move(rule));
  }
  Tensor<T> emit(Shape shape, std::vector<T> values, std::vector<Tensor<T>> inputs, BackwardRule rule) {
    Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(values));
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (recording_ && needs) {
      out.node_->requires_grad = true;
      out.node_->producer = this;
      records_.push_back(Record{std::move(inputs), out, std::move(rule)});
    }
    return out;
  }

  /// Gradient buffer for an input inside a backward rule. Returns a
  /// zero-initialized buffer on first access; callers add into it.
  std::span<T> grad_of(const Tensor<T>& t) {
    auto* node = t.node();
    if (node->producer == nullptr && sink_ != nullptr) return sink_->buffer(t);
    if (node->grad.size() != node->value.size()) node->grad.assign(node->value.size(), T{0});
    return node->grad;
  }

  /// Reverse sweep from a scalar loss, seeded with d loss / d loss = 1.
  void backward(const Tensor<T>& loss) {
    if (loss.size() != 1) throw UsageError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
    const T one{1};
    backward(loss, std::span<const T>(&one, 1));
  }

  /// Reverse sweep from `output` seeded with an arbitrary upstream gradient.
  /// Leaf gradients accumulate across calls; intermediate ones are reset.
  void backward(const Tensor<T>& output, std::span<const T> seed) {
    if (seed.size() != output.size()) {
      throw DimensionError("backward seed has " + std::to_string(seed.size()) + " values for output shape " +
                           to_string(output.shape()));
    }
    for (auto& rec : records_) rec.output.node_->grad.clear();
    if (!output.requires_grad()) return;
    if (output.is_leaf()) {
      auto g = grad_of(output);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
      return;
    }
    if (output.node()->producer != this) throw UsageError("backward() on a tensor recorded by another tape");
    std::size_t last = records_.size();
    while (last > 0 && !records_[last - 1].output.same_storage(output)) --last;
    if (last == 0) throw UsageError("backward() output not found on tape");
    output.node_->grad.assign(seed.begin(), seed.end());
    for (std::size_t i = last; i-- > 0;) {
      auto& rec = records_[i];
      if (rec.output.node_->grad.empty()) continue;
      rec.rule(*this, rec.output);
    }
  }

  void clear() { records_.clear(); }

 private:
  struct Record {
    std::vector<Tensor<T>> inputs;  // keeps inputs alive for the rule
    Tensor<T> output;
    BackwardRule rule;
  };
  bool recording_;
  GradientSink<T>* sink_ = nullptr;
  std::vector<Record> records_;
};

template <typename T>
Tensor<T> Tensor<T>::matrix(const std::vector<std::vector<T>>& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows[0].size() : 0;
  std::vector<T> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows in Tensor::matrix");
    v.insert(v.end(), row.begin(), row.end());
  }
  return from({r, c}, std::move(v));
}

}  // namespace dapa
