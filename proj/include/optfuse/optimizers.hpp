/*
Copyright 2026 The OptFuse Authors. All rights reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "optfuse/errors.hpp"
#include "optfuse/graph.hpp"
#include "optfuse/tensor.hpp"
#include "optfuse/trace.hpp"

namespace optfuse {

enum class OptimizerKind { kSgd, kSgdMomentum, kNewton, kAdagrad, kRmsprop, kAdadelta, kAdam };

inline std::string_view name(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kSgdMomentum: return "sgd-momentum";
    case OptimizerKind::kNewton: return "newton";
    case OptimizerKind::kAdagrad: return "adagrad";
    case OptimizerKind::kRmsprop: return "rmsprop";
    case OptimizerKind::kAdadelta: return "adadelta";
    case OptimizerKind::kAdam: return "adam";
  }
  return "?";
}

inline OptimizerKind parse_optimizer(std::string_view s) {
  for (auto k : {OptimizerKind::kSgd, OptimizerKind::kSgdMomentum, OptimizerKind::kNewton,
                 OptimizerKind::kAdagrad, OptimizerKind::kRmsprop, OptimizerKind::kAdadelta,
                 OptimizerKind::kAdam}) {
    if (name(k) == s) return k;
  }
  throw ConfigError("unknown optimizer '" + std::string(s) +
                    "' (expected sgd, sgd-momentum, newton, adagrad, rmsprop, adadelta or adam)");
}

// The six policies that update each parameter from its own gradient and
// history only.
inline constexpr OptimizerKind kLocalOptimizers[] = {
    OptimizerKind::kSgd,     OptimizerKind::kSgdMomentum, OptimizerKind::kAdagrad,
    OptimizerKind::kRmsprop, OptimizerKind::kAdadelta,    OptimizerKind::kAdam};

// Update rule plus hyperparameters. Weight decay is coupled: the policy sees
// grad + weight_decay * theta.
struct OptimizerPolicy {
  OptimizerKind kind = OptimizerKind::kSgd;
  double eta = 0.01;
  double alpha = 0.9;  // momentum decay
  double weight_decay = 0.0;
  double epsilon = 1e-8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double rho = 0.9;
  // Global-norm clipping applied to all gradients before any step.
  std::optional<double> clip_norm;
  // Completed training iterations. Bias correction uses the per-parameter
  // step count instead, so deferred steps see the right t.
  std::uint64_t iteration = 0;

  bool requires_global_info() const {
    return kind == OptimizerKind::kNewton || clip_norm.has_value();
  }

  bool has_history() const {
    return kind != OptimizerKind::kSgd && kind != OptimizerKind::kNewton;
  }

  void validate() const {
    if (!(eta > 0.0)) throw ConfigError("step size eta must be positive");
    if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("momentum alpha must be in [0,1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("adam betas must be in [0,1)");
    }
    if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must be in [0,1)");
    if (clip_norm && !(*clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
  }
};

// Applies one step of `policy` to `param` in place, updates its history and
// resets its gradient. The gradient must be complete (count == 0).
template <std::floating_point T>
void policy_step(const OptimizerPolicy& policy, Parameter<T>& param, TraceSink sink = {}) {
  if (policy.kind == OptimizerKind::kNewton) {
    throw ConfigError("newton needs the full Hessian and has no per-parameter step");
  }
  if (param.count != 0) {
    throw SchedulingError("optimizer step on parameter " + std::to_string(param.id) + " with " +
                          std::to_string(param.count) + " gradient contributions outstanding");
  }
  sink.read(Region::kParameter, param.id);
  sink.read(Region::kGradient, param.id);

  Tensor<T> g = param.grad;
  if (policy.weight_decay != 0.0) axpy_inplace(g, static_cast<T>(policy.weight_decay), param.value);

  const T eta = static_cast<T>(policy.eta);
  const T eps = static_cast<T>(policy.epsilon);
  const std::uint64_t t = ++param.steps;
  if (policy.has_history()) {
    sink.read(Region::kHistory, param.id);
    sink.write(Region::kHistory, param.id);
  }

  switch (policy.kind) {
    case OptimizerKind::kSgd:
      axpy_inplace(param.value, -eta, g);
      break;
    case OptimizerKind::kSgdMomentum: {
      // v(t) = alpha v(t-1) + g, equal to the discounted gradient sum.
      auto& v = param.slot("momentum");
      const T alpha = static_cast<T>(policy.alpha);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = alpha * v[i] + g[i];
      axpy_inplace(param.value, -eta, v);
      break;
    }
    case OptimizerKind::kAdagrad: {
      auto& s = param.slot("sum_sq");
      for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = s[i] + g[i] * g[i];
        g[i] = g[i] / (std::sqrt(s[i]) + eps);
      }
      axpy_inplace(param.value, -eta, g);
      break;
    }
    case OptimizerKind::kRmsprop: {
      auto& s = param.slot("square_avg");
      const T rho = static_cast<T>(policy.rho);
      const T one_minus_rho = static_cast<T>(1.0 - policy.rho);
      for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = rho * s[i] + one_minus_rho * g[i] * g[i];
        g[i] = g[i] / (std::sqrt(s[i]) + eps);
      }
      axpy_inplace(param.value, -eta, g);
      break;
    }
    case OptimizerKind::kAdadelta: {
      auto& sq = param.slot("square_avg");
      auto& acc = param.slot("acc_delta");
      const T rho = static_cast<T>(policy.rho);
      const T one_minus_rho = static_cast<T>(1.0 - policy.rho);
      for (std::size_t i = 0; i < sq.size(); ++i) {
        sq[i] = rho * sq[i] + one_minus_rho * g[i] * g[i];
        const T delta = std::sqrt(acc[i] + eps) / std::sqrt(sq[i] + eps) * g[i];
        acc[i] = rho * acc[i] + one_minus_rho * delta * delta;
        g[i] = delta;
      }
      axpy_inplace(param.value, -eta, g);
      break;
    }
    case OptimizerKind::kAdam: {
      auto& m = param.slot("exp_avg");
      auto& v = param.slot("exp_avg_sq");
      const T b1 = static_cast<T>(policy.beta1);
      const T b2 = static_cast<T>(policy.beta2);
      const T one_minus_b1 = static_cast<T>(1.0 - policy.beta1);
      const T one_minus_b2 = static_cast<T>(1.0 - policy.beta2);
      const T bc1 = static_cast<T>(1.0 - std::pow(policy.beta1, static_cast<double>(t)));
      const T bc2 = static_cast<T>(1.0 - std::pow(policy.beta2, static_cast<double>(t)));
      for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = b1 * m[i] + one_minus_b1 * g[i];
        v[i] = b2 * v[i] + one_minus_b2 * g[i] * g[i];
        const T m_hat = m[i] / bc1;
        const T v_hat = v[i] / bc2;
        g[i] = m_hat / (std::sqrt(v_hat) + eps);
      }
      axpy_inplace(param.value, -eta, g);
      break;
    }
    case OptimizerKind::kNewton:
      break;
  }

  // Gradients are read and reset by the optimizer.
  param.grad.fill(T(0));
  sink.write(Region::kGradient, param.id);
  sink.write(Region::kParameter, param.id);
}

// One damped Newton step theta - eta * H^-1 grad on a small dense problem.
template <std::floating_point T>
Tensor<T> policy_newton(const OptimizerPolicy& policy, const Tensor<T>& theta,
                        const std::function<Tensor<T>(const Tensor<T>&)>& grad_fn,
                        const std::function<Tensor<T>(const Tensor<T>&)>& hessian_fn) {
  const std::size_t d = theta.size();
  if (theta.rank() != 1) throw ShapeError("newton: theta must be a vector");
  if (d > 16) throw ConfigError("newton is limited to problems with at most 16 unknowns");

  Tensor<T> g = grad_fn(theta);
  Tensor<T> h = hessian_fn(theta);
  if (g.size() != d || h.rank() != 2 || h.rows() != d || h.cols() != d) {
    throw ShapeError("newton: gradient/Hessian shapes do not match theta");
  }

  // Gaussian elimination with partial pivoting on [H | g].
  std::vector<double> a(d * d), rhs(d);
  double scale = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    rhs[i] = g[i];
    for (std::size_t j = 0; j < d; ++j) {
      a[i * d + j] = h.at(i, j);
      scale = std::max(scale, std::abs(a[i * d + j]));
    }
  }
  const double tiny = std::max(scale, 1.0) * 1e-12;
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < d; ++r) {
      if (std::abs(a[r * d + col]) > std::abs(a[pivot * d + col])) pivot = r;
    }
    if (std::abs(a[pivot * d + col]) <= tiny) throw NumericError("newton: Hessian is singular");
    if (pivot != col) {
      for (std::size_t j = 0; j < d; ++j) std::swap(a[col * d + j], a[pivot * d + j]);
      std::swap(rhs[col], rhs[pivot]);
    }
    for (std::size_t r = col + 1; r < d; ++r) {
      const double f = a[r * d + col] / a[col * d + col];
      for (std::size_t j = col; j < d; ++j) a[r * d + j] -= f * a[col * d + j];
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<double> step(d);
  for (std::size_t i = d; i-- > 0;) {
    double acc = rhs[i];
    for (std::size_t j = i + 1; j < d; ++j) acc -= a[i * d + j] * step[j];
    step[i] = acc / a[i * d + i];
  }

  Tensor<T> out = theta;
  for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<T>(out[i] - policy.eta * step[i]);
  return out;
}

// Scales every gradient by max_norm / ||g|| when the global L2 norm exceeds
// max_norm. Returns the factor applied (1 when nothing changed).
template <std::floating_point T>
double clip_by_global_norm(Graph<T>& graph, double max_norm, TraceSink sink = {}) {
  double total = 0.0;
  for (const auto& p : graph.parameters()) {
    sink.read(Region::kGradient, p.id);
    total += squared_norm(p.grad);
  }
  const double norm = std::sqrt(total);
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (auto& p : graph.parameters()) {
    for (auto& x : p.grad.data()) x = static_cast<T>(x * factor);
    sink.write(Region::kGradient, p.id);
  }
  return factor;
}

}  // namespace optfuse
