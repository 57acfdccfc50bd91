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
// Test-only reference computations. Nothing here calls the code path it is
// used to check: gradients come from finite differences of the loss, and the
// optimizer references are straight scalar transcriptions of the textbook
// update rules.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "optfuse/graph.hpp"

namespace optfuse::oracle {

// Sign pattern of every ReLU output after the latest forward.
template <std::floating_point T>
std::vector<bool> relu_pattern(const Graph<T>& graph) {
  std::vector<bool> out;
  for (const auto& node : graph.nodes()) {
    if (!node.relu) continue;
    for (auto v : node.output.data()) out.push_back(v > T(0));
  }
  return out;
}

// Finite difference of the loss w.r.t. every element of one parameter. The
// loss is piecewise linear in any single weight, so a difference is exact up
// to rounding as long as its stencil stays on the same ReLU pattern as the
// evaluation point. Central when possible, else the one-sided difference on
// the clean side, else retry with a smaller step. The divisor is the step
// actually realized in T, not the nominal h.
template <std::floating_point T>
std::vector<double> numeric_gradient(Graph<T>& graph, const Tensor<T>& input, std::size_t param_id, double h) {
  auto& value = graph.parameter(param_id).value;
  auto eval = [&](T v, std::size_t i, std::vector<bool>& pattern) {
    value[i] = v;
    const double loss = graph.forward(input);
    pattern = relu_pattern(graph);
    graph.discard_tape();
    return loss;
  };
  std::vector<double> out(value.size());
  for (std::size_t i = 0; i < value.size(); ++i) {
    const T saved = value[i];
    std::vector<bool> p0, pp, pm;
    const double l0 = eval(saved, i, p0);
    for (double step = h;; step /= 4) {
      const T plus = static_cast<T>(saved + step);
      const T minus = static_cast<T>(saved - step);
      const double lp = eval(plus, i, pp);
      const double lm = eval(minus, i, pm);
      const bool clean_plus = pp == p0, clean_minus = pm == p0;
      if (clean_plus && clean_minus) {
        out[i] = (lp - lm) / (static_cast<double>(plus) - static_cast<double>(minus));
      } else if (clean_plus) {
        out[i] = (lp - l0) / (static_cast<double>(plus) - static_cast<double>(saved));
      } else if (clean_minus) {
        out[i] = (l0 - lm) / (static_cast<double>(saved) - static_cast<double>(minus));
      } else if (step > h * 1e-4) {
        continue;
      } else {
        out[i] = (lp - lm) / (static_cast<double>(plus) - static_cast<double>(minus));
      }
      break;
    }
    value[i] = saved;
  }
  return out;
}

// Worst |analytic - numeric| / max(1, |numeric|) over all parameters.
template <std::floating_point T>
double gradcheck(Graph<T> graph, const Tensor<T>& input, double h) {
  for (auto& p : graph.parameters()) p.grad.fill(T(0));
  graph.forward(input);
  graph.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : graph.parameters()) analytic.emplace_back(p.grad.data().begin(), p.grad.data().end());
  graph.discard_tape();

  double worst = 0.0;
  for (std::size_t id = 0; id < graph.parameters().size(); ++id) {
    const auto numeric = numeric_gradient(graph, input, id, h);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      worst = std::max(worst, std::abs(analytic[id][i] - numeric[i]) / std::max(1.0, std::abs(numeric[i])));
    }
  }
  return worst;
}

// Scalar update rules, one element, 64-bit. State is carried by the caller.
struct ScalarState {
  double theta = 0.0;
  double a = 0.0;  // first slot (momentum / sum of squares / square avg / exp_avg)
  double b = 0.0;  // second slot (acc_delta / exp_avg_sq)
  int t = 0;
};

inline void sgd(ScalarState& s, double g, double lr) { s.theta = s.theta + (-lr) * g; }

inline void sgd_momentum(ScalarState& s, double g, double lr, double alpha) {
  s.a = alpha * s.a + g;
  s.theta = s.theta + (-lr) * s.a;
}

inline void adagrad(ScalarState& s, double g, double lr, double eps) {
  s.a = s.a + g * g;
  s.theta = s.theta + (-lr) * (g / (std::sqrt(s.a) + eps));
}

inline void rmsprop(ScalarState& s, double g, double lr, double rho, double eps) {
  s.a = rho * s.a + (1.0 - rho) * g * g;
  s.theta = s.theta + (-lr) * (g / (std::sqrt(s.a) + eps));
}

inline void adadelta(ScalarState& s, double g, double lr, double rho, double eps) {
  s.a = rho * s.a + (1.0 - rho) * g * g;
  const double delta = std::sqrt(s.b + eps) / std::sqrt(s.a + eps) * g;
  s.b = rho * s.b + (1.0 - rho) * delta * delta;
  s.theta = s.theta + (-lr) * delta;
}

inline void adam(ScalarState& s, double g, double lr, double b1, double b2, double eps) {
  ++s.t;
  s.a = b1 * s.a + (1.0 - b1) * g;
  s.b = b2 * s.b + (1.0 - b2) * g * g;
  const double m_hat = s.a / (1.0 - std::pow(b1, s.t));
  const double v_hat = s.b / (1.0 - std::pow(b2, s.t));
  s.theta = s.theta + (-lr) * (m_hat / (std::sqrt(v_hat) + eps));
}

// Gradient-descent-with-momentum step written as the explicit discounted sum
//   -lr * sum_{tau < t} alpha^(t - tau - 1) * grad(tau).
inline double momentum_sum_step(const std::vector<double>& grads, double lr, double alpha) {
  const std::size_t t = grads.size();
  double acc = 0.0;
  for (std::size_t tau = 0; tau < t; ++tau) acc += std::pow(alpha, static_cast<double>(t - tau - 1)) * grads[tau];
  return -lr * acc;
}

}  // namespace optfuse::oracle
