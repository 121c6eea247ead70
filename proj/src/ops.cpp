#include "dapa/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace dapa {

std::size_t numel(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using VecMapC = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

void require_matrix(const char* op, const Shape& s) {
  if (s.size() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got shape " + to_string(s));
}

void require_same(const char* op, const Shape& a, const Shape& b) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <typename T>
MapC<T> as_matrix(const Tensor<T>& t) {
  return MapC<T>(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
MapC<T> as_matrix(std::span<const T> buf, std::size_t r, std::size_t c) {
  return MapC<T>(buf.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename T>
Map<T> as_matrix(std::span<T> buf, std::size_t r, std::size_t c) {
  return Map<T>(buf.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename T>
T sigmoid_scalar(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

struct AxisSplit {
  std::size_t outer;
  std::size_t inner;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r{1, 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix("matmul", a.shape());
  require_matrix("matmul", b.shape());
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " · " + to_string(b.shape()));
  }
  const std::size_t m = a.rows(), n = b.cols();
  std::vector<T> out(m * n);
  as_matrix(std::span<T>(out), m, n).noalias() = as_matrix(a) * as_matrix(b);
  return tape.emit({m, n}, std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& c) {
    auto dc = as_matrix(c.grad(), c.rows(), c.cols());
    if (a.requires_grad()) as_matrix(tp.grad_of(a), a.rows(), a.cols()).noalias() += dc * as_matrix(b).transpose();
    if (b.requires_grad()) as_matrix(tp.grad_of(b), b.rows(), b.cols()).noalias() += as_matrix(a).transpose() * dc;
  });
}

template <typename T>
Tensor<T> matmul_nt(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix("matmul_nt", a.shape());
  require_matrix("matmul_nt", b.shape());
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: feature dimensions differ, " + to_string(a.shape()) + " · " +
                         to_string(b.shape()) + "ᵀ");
  }
  const std::size_t m = a.rows(), n = b.rows();
  std::vector<T> out(m * n);
  as_matrix(std::span<T>(out), m, n).noalias() = as_matrix(a) * as_matrix(b).transpose();
  return tape.emit({m, n}, std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& c) {
    auto dc = as_matrix(c.grad(), c.rows(), c.cols());
    if (a.requires_grad()) as_matrix(tp.grad_of(a), a.rows(), a.cols()).noalias() += dc * as_matrix(b);
    if (b.requires_grad()) as_matrix(tp.grad_of(b), b.rows(), b.cols()).noalias() += dc.transpose() * as_matrix(a);
  });
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same("add", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return tape.emit(a.shape(), std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& c) {
    auto g = c.grad();
    for (const auto* in : {&a, &b}) {
      if (!in->requires_grad()) continue;
      auto gi = tp.grad_of(*in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same("sub", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return tape.emit(a.shape(), std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& c) {
    auto g = c.grad();
    if (a.requires_grad()) {
      auto ga = tp.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = tp.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same("mul", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return tape.emit(a.shape(), std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& c) {
    auto g = c.grad();
    if (a.requires_grad()) {
      auto ga = tp.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      auto gb = tp.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
    }
  });
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return tape.emit(a.shape(), std::move(out), {a}, [a, factor](Tape<T>& tp, const Tensor<T>& c) {
    auto g = c.grad();
    auto ga = tp.grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Tensor<T> add_row(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias) {
  require_matrix("add_row", x.shape());
  if (bias.size() != x.cols()) {
    throw DimensionError("add_row: bias " + to_string(bias.shape()) + " does not match rows of " + to_string(x.shape()));
  }
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<T> out(x.values());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += bias.data()[c];
  return tape.emit(x.shape(), std::move(out), {x, bias}, [x, bias, n, d](Tape<T>& tp, const Tensor<T>& y) {
    auto g = y.grad();
    if (x.requires_grad()) {
      auto gx = tp.grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto gb = tp.grad_of(bias);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
    }
  });
}

template <typename T>
Tensor<T> unary(Tape<T>& tape, const Tensor<T>& x, Unary kind) {
  std::vector<T> out(x.size());
  auto in = x.data();
  switch (kind) {
    case Unary::Tanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(in[i]);
      break;
    case Unary::Sigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(in[i]);
      break;
    case Unary::Exp:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(in[i]);
      break;
    case Unary::Neg:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = -in[i];
      break;
  }
  return tape.emit(x.shape(), std::move(out), {x}, [x, kind](Tape<T>& tp, const Tensor<T>& y) {
    auto g = y.grad();
    auto v = y.data();
    auto gx = tp.grad_of(x);
    switch (kind) {
      case Unary::Tanh:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T{1} - v[i] * v[i]);
        break;
      case Unary::Sigmoid:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * v[i] * (T{1} - v[i]);
        break;
      case Unary::Exp:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * v[i];
        break;
      case Unary::Neg:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i];
        break;
    }
  });
}

template <typename T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& x) {
  require_matrix("softmax_rows", x.shape());
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<T> out(x.size());
  auto in = x.data();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = in.data() + r * d;
    T* o = out.data() + r * d;
    const T mx = *std::max_element(row, row + d);
    T total{0};
    for (std::size_t c = 0; c < d; ++c) {
      o[c] = std::exp(row[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < d; ++c) o[c] /= total;
  }
  return tape.emit(x.shape(), std::move(out), {x}, [x, n, d](Tape<T>& tp, const Tensor<T>& y) {
    auto g = y.grad();
    auto s = y.data();
    auto gx = tp.grad_of(x);
    // dx = s ⊙ (g − <g, s>) per row
    for (std::size_t r = 0; r < n; ++r) {
      T dot{0};
      for (std::size_t c = 0; c < d; ++c) dot += g[r * d + c] * s[r * d + c];
      for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += s[r * d + c] * (g[r * d + c] - dot);
    }
  });
}

template <typename T>
Tensor<T> concat(Tape<T>& tape, const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw UsageError("concat: no parts");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw DimensionError("concat: part " + to_string(s) + " incompatible with " + to_string(first) + " on axis " + std::to_string(axis));
    out_shape[axis] += s[axis];
  }
  if (parts.size() == 1) {
    // Still a fresh tensor so callers never alias an input.
    std::vector<T> copy(parts[0].values());
    const Tensor<T> only = parts[0];
    return tape.emit(out_shape, std::move(copy), {only}, [only](Tape<T>& tp, const Tensor<T>& y) {
      auto g = y.grad();
      auto gi = tp.grad_of(only);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    });
  }
  const auto [outer, inner] = split_at(first, axis);
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<T> out(numel(out_shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * chunk, chunk, out.data() + o * out_row + offset);
    offset += chunk;
  }
  return tape.emit(out_shape, std::move(out), parts,
                   [parts, offsets, axis, outer, inner, out_row](Tape<T>& tp, const Tensor<T>& y) {
                     auto g = y.grad();
                     for (std::size_t k = 0; k < parts.size(); ++k) {
                       if (!parts[k].requires_grad()) continue;
                       auto gp = tp.grad_of(parts[k]);
                       const std::size_t chunk = parts[k].shape()[axis] * inner;
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += g[o * out_row + offsets[k] + i];
                     }
                   });
}

template <typename T>
Tensor<T> slice(Tape<T>& tape, const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("slice: axis " + std::to_string(axis) + " out of range for " + to_string(s));
  if (start + length > s[axis]) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds extent " + std::to_string(s[axis]) + " of " + to_string(s));
  }
  Shape out_shape = s;
  out_shape[axis] = length;
  const auto [outer, inner] = split_at(s, axis);
  const std::size_t in_row = s[axis] * inner;
  const std::size_t chunk = length * inner;
  const std::size_t off = start * inner;
  std::vector<T> out(outer * chunk);
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(x.data().data() + o * in_row + off, chunk, out.data() + o * chunk);
  return tape.emit(out_shape, std::move(out), {x}, [x, outer, in_row, chunk, off](Tape<T>& tp, const Tensor<T>& y) {
    auto g = y.grad();
    auto gx = tp.grad_of(x);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < chunk; ++i) gx[o * in_row + off + i] += g[o * chunk + i];
  });
}

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) throw DimensionError("reshape: " + to_string(x.shape()) + " to " + to_string(shape));
  return tape.emit(std::move(shape), x.values(), {x}, [x](Tape<T>& tp, const Tensor<T>& y) {
    auto g = y.grad();
    auto gx = tp.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& x, double rate, RngStream& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(x.size());
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? T{0} : keep_scale;
    out[i] = x.data()[i] * (*mask)[i];
  }
  return tape.emit(x.shape(), std::move(out), {x}, [x, mask](Tape<T>& tp, const Tensor<T>& y) {
    auto g = y.grad();
    auto gx = tp.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  T total{0};
  for (T v : x.data()) total += v;
  return tape.emit({}, {total}, {x}, [x](Tape<T>& tp, const Tensor<T>& y) {
    const T g = y.grad()[0];
    auto gx = tp.grad_of(x);
    for (auto& v : gx) v += g;
  });
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
  if (x.size() == 0) throw UsageError("mean of empty tensor");
  return scale(tape, sum(tape, x), T{1} / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> lstm_recurrence(Tape<T>& tape, const Tensor<T>& gates_in, const Tensor<T>& w_hh, bool reverse) {
  require_matrix("lstm_recurrence", gates_in.shape());
  require_matrix("lstm_recurrence", w_hh.shape());
  const std::size_t steps = gates_in.rows();
  const std::size_t h = w_hh.cols();
  if (w_hh.rows() != 4 * h || gates_in.cols() != 4 * h) {
    throw DimensionError("lstm_recurrence: gate inputs " + to_string(gates_in.shape()) + " and recurrent weights " +
                         to_string(w_hh.shape()) + " disagree (expected T×4H and 4H×H)");
  }
  // Post-activation gates [i f g o] and cell states, kept for BPTT.
  auto act = std::make_shared<std::vector<T>>(steps * 4 * h);
  auto cell = std::make_shared<std::vector<T>>(steps * h);
  std::vector<T> hidden(steps * h);
  const auto u = as_matrix(w_hh);
  Eigen::Matrix<T, Eigen::Dynamic, 1> z(4 * h);
  Eigen::Matrix<T, Eigen::Dynamic, 1> h_prev = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(h);
  Eigen::Matrix<T, Eigen::Dynamic, 1> c_prev = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(h);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    z = VecMapC<T>(gates_in.data().data() + t * 4 * h, 4 * h);
    z.noalias() += u * h_prev;
    T* a = act->data() + t * 4 * h;
    T* c = cell->data() + t * h;
    T* hs = hidden.data() + t * h;
    for (std::size_t j = 0; j < h; ++j) {
      const T ig = sigmoid_scalar(z[j]);
      const T fg = sigmoid_scalar(z[h + j]);
      const T gg = std::tanh(z[2 * h + j]);
      const T og = sigmoid_scalar(z[3 * h + j]);
      a[j] = ig;
      a[h + j] = fg;
      a[2 * h + j] = gg;
      a[3 * h + j] = og;
      c[j] = fg * c_prev[j] + ig * gg;
      hs[j] = og * std::tanh(c[j]);
    }
    c_prev = VecMapC<T>(c, h);
    h_prev = VecMapC<T>(hs, h);
  }
  return tape.emit(
      {steps, h}, std::move(hidden), {gates_in, w_hh},
      [gates_in, w_hh, act, cell, steps, h, reverse](Tape<T>& tp, const Tensor<T>& out) {
        auto dh_out = out.grad();
        auto hs = out.data();
        // Pre-activation gradients for every step; W_hh's gradient is one GEMM at the end.
        std::vector<T> dz_all(steps * 4 * h);
        const auto u = as_matrix(w_hh);
        Eigen::Matrix<T, Eigen::Dynamic, 1> dh_next = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(h);
        Eigen::Matrix<T, Eigen::Dynamic, 1> dc_next = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(h);
        for (std::size_t k = steps; k-- > 0;) {
          const std::size_t t = reverse ? steps - 1 - k : k;
          const bool has_prev = k > 0;
          const std::size_t tp_idx = reverse ? t + 1 : t - 1;  // previous step in processing order
          const T* a = act->data() + t * 4 * h;
          const T* c = cell->data() + t * h;
          T* dz = dz_all.data() + t * 4 * h;
          for (std::size_t j = 0; j < h; ++j) {
            const T ig = a[j], fg = a[h + j], gg = a[2 * h + j], og = a[3 * h + j];
            const T tc = std::tanh(c[j]);
            const T dh = dh_out[t * h + j] + dh_next[j];
            const T dc = dh * og * (T{1} - tc * tc) + dc_next[j];
            const T c_prev = has_prev ? (*cell)[tp_idx * h + j] : T{0};
            dz[j] = dc * gg * ig * (T{1} - ig);
            dz[h + j] = dc * c_prev * fg * (T{1} - fg);
            dz[2 * h + j] = dc * ig * (T{1} - gg * gg);
            dz[3 * h + j] = dh * tc * og * (T{1} - og);
            dc_next[j] = dc * fg;
          }
          dh_next.noalias() = u.transpose() * VecMapC<T>(dz, 4 * h);
        }
        if (gates_in.requires_grad()) {
          auto g = tp.grad_of(gates_in);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += dz_all[i];
        }
        if (w_hh.requires_grad() && steps > 1) {
          // Row t of h_prev_rows holds the state that fed step t.
          RowMat<T> h_prev_rows = RowMat<T>::Zero(static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(h));
          for (std::size_t t = 0; t < steps; ++t) {
            const bool first = reverse ? t == steps - 1 : t == 0;
            if (first) continue;
            const std::size_t src = reverse ? t + 1 : t - 1;
            h_prev_rows.row(static_cast<Eigen::Index>(t)) = VecMapC<T>(hs.data() + src * h, h).transpose();
          }
          as_matrix(tp.grad_of(w_hh), 4 * h, h).noalias() +=
              MapC<T>(dz_all.data(), static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(4 * h)).transpose() *
              h_prev_rows;
        }
      });
}

#define DAPA_INSTANTIATE_OPS(T)                                                                         \
  template Tensor<T> matmul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> matmul_nt(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                              \
  template Tensor<T> add_row(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> unary(Tape<T>&, const Tensor<T>&, Unary);                                          \
  template Tensor<T> softmax_rows(Tape<T>&, const Tensor<T>&);                                          \
  template Tensor<T> concat(Tape<T>&, const std::vector<Tensor<T>>&, std::size_t);                      \
  template Tensor<T> slice(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t, std::size_t);         \
  template Tensor<T> reshape(Tape<T>&, const Tensor<T>&, Shape);                                        \
  template Tensor<T> dropout(Tape<T>&, const Tensor<T>&, double, RngStream&, bool);                     \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> mean(Tape<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> lstm_recurrence(Tape<T>&, const Tensor<T>&, const Tensor<T>&, bool);

DAPA_INSTANTIATE_OPS(float)
DAPA_INSTANTIATE_OPS(double)

}  // namespace ops
}  // namespace dapa
