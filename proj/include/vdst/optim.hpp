#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdst/tensor.hpp"

namespace vdst {

enum class OptimizerKind { adam, sgd };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  // One buffer per parameter, only for adam.
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

inline OptimizerState make_optimizer(OptimizerKind kind, double learning_rate) {
  if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
  OptimizerState s;
  s.kind = kind;
  s.learning_rate = learning_rate;
  return s;
}

inline double grad_norm(std::span<Tensor* const> params) {
  double sq = 0;
  for (const Tensor* p : params)
    for (double g : p->grad) sq += g * g;
  return std::sqrt(sq);
}

inline void scale_grads(std::span<Tensor* const> params, double factor) {
  for (Tensor* p : params)
    for (double& g : p->grad) g *= factor;
}

// Rescales all gradients so their global L2 norm is at most max_norm. Returns the pre-clip norm.
inline double clip_grad_norm(std::span<Tensor* const> params, double max_norm) {
  const double n = grad_norm(params);
  if (n > max_norm && n > 0) scale_grads(params, max_norm / n);
  return n;
}

inline void zero_grads(std::span<Tensor* const> params) {
  for (Tensor* p : params) p->zero_grad();
}

// Applies one update to every parameter and clears the gradients.
inline void optimizer_step(std::span<Tensor* const> params, OptimizerState& state) {
  for (const Tensor* p : params)
    if (p->grad.size() != p->size()) throw std::logic_error("optimizer_step: parameter without gradient buffer");
  ++state.step;
  if (state.kind == OptimizerKind::sgd) {
    for (Tensor* p : params) {
      auto w = p->data();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= state.learning_rate * p->grad[i];
      p->zero_grad();
    }
    return;
  }
  if (state.first_moment.empty()) {
    for (const Tensor* p : params) {
      state.first_moment.emplace_back(p->size(), 0.0);
      state.second_moment.emplace_back(p->size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size())
    throw std::logic_error("optimizer_step: parameter list changed between steps");
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != p.size()) throw std::logic_error("optimizer_step: parameter resized between steps");
    auto w = p.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = p.grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
    p.zero_grad();
  }
}

}  // namespace vdst
