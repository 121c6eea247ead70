#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dapa/rng.hpp"
#include "dapa/tensor.hpp"

namespace dapa::ops {

enum class Unary { Tanh, Sigmoid, Exp, Neg };

// Every op records itself on `tape` (when recording and an input needs a
// gradient) and returns a fresh tensor. Shapes are checked eagerly.

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
/// a · bᵀ without materializing the transpose.
template <typename T>
Tensor<T> matmul_nt(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor);
/// x[N×d] + bias[d] on every row.
template <typename T>
Tensor<T> add_row(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> unary(Tape<T>& tape, const Tensor<T>& x, Unary kind);
template <typename T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& x) { return unary(tape, x, Unary::Tanh); }
template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) { return unary(tape, x, Unary::Sigmoid); }

/// Row-wise softmax of a matrix, stabilized by subtracting each row's max.
template <typename T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& x);

template <typename T>
Tensor<T> concat(Tape<T>& tape, const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> slice(Tape<T>& tape, const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape);

/// Inverted dropout: survivors are scaled by 1/(1-rate); identity when not
/// training or rate == 0.
template <typename T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& x, double rate, RngStream& rng, bool training);

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x);
template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x);

/// LSTM recurrence over precomputed input pre-activations.
///
/// `gates_in` is T×4H holding x_t·W_ihᵀ + b in gate order (input, forget,
/// cell, output); `w_hh` is 4H×H. Starting from zero state, each step adds
/// w_hh·h_prev and applies the cell update; `reverse` runs t = T-1 … 0 so
/// row t then summarizes frames t … T-1. Returns T×H hidden states.
template <typename T>
Tensor<T> lstm_recurrence(Tape<T>& tape, const Tensor<T>& gates_in, const Tensor<T>& w_hh, bool reverse);

}  // namespace dapa::ops
