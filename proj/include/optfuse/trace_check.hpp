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

#include <span>
#include <string>
#include <vector>

#include "optfuse/graph.hpp"
#include "optfuse/trace.hpp"

namespace optfuse {

// Replays one iteration's trace against the model layout and returns every
// violated ordering rule (empty means the trace is legal):
//  - each dependency points at an earlier task;
//  - forward-node i follows forward-node i-1;
//  - backward-node i follows forward-node i and the backward of every later
//    node that consumes its output or shares a parameter with it;
//  - an optimizer step for a parameter runs only when every node that has
//    read the parameter this iteration has finished its backward, and either
//    no node or every node using it has run forward;
//  - at most one optimizer step per parameter outside a flush.
inline std::vector<std::string> validate_trace(const ScheduleTrace& trace, std::span<const Layer> layers,
                                               std::size_t num_params) {
  std::vector<std::string> errors;
  const std::size_t n = layers.size();
  std::vector<bool> fwd(n, false), bwd(n, false);
  std::vector<std::size_t> users(num_params, 0), fwd_users(num_params, 0), bwd_users(num_params, 0),
      steps(num_params, 0);
  for (const auto& layer : layers) {
    for (auto p : layer.params) ++users[p];
  }
  auto shares_param = [&](std::size_t a, std::size_t b) {
    for (auto p : layers[a].params) {
      for (auto q : layers[b].params) {
        if (p == q) return true;
      }
    }
    return false;
  };
  auto err = [&](std::size_t i, const std::string& what) {
    errors.push_back("task " + std::to_string(i) + " (" + std::string(name(trace.tasks[i].kind)) + " " +
                     std::to_string(trace.tasks[i].id) + "): " + what);
  };

  bool in_flush = false;
  for (std::size_t i = 0; i < trace.tasks.size(); ++i) {
    const auto& t = trace.tasks[i];
    for (auto d : t.deps) {
      if (d >= i) err(i, "depends on later task " + std::to_string(d));
    }
    switch (t.kind) {
      case TaskKind::kFlush:
        in_flush = true;
        break;
      case TaskKind::kClipBarrier:
        in_flush = false;
        for (std::size_t j = 0; j < n; ++j) {
          if (fwd[j] && !bwd[j]) err(i, "clip before backward of node " + std::to_string(j));
        }
        break;
      case TaskKind::kForwardNode: {
        in_flush = false;
        if (t.id >= n) { err(i, "unknown node"); break; }
        if (t.id > 0 && !fwd[t.id - 1]) err(i, "runs before its producer");
        if (fwd[t.id]) err(i, "runs twice");
        fwd[t.id] = true;
        for (auto p : layers[t.id].params) ++fwd_users[p];
        break;
      }
      case TaskKind::kBackwardNode: {
        in_flush = false;
        if (t.id >= n) { err(i, "unknown node"); break; }
        if (!fwd[t.id]) err(i, "runs before its forward");
        if (bwd[t.id]) err(i, "runs twice");
        for (std::size_t j = t.id + 1; j < n; ++j) {
          if ((j == t.id + 1 || shares_param(t.id, j)) && !bwd[j]) {
            err(i, "runs before backward of node " + std::to_string(j));
          }
        }
        bwd[t.id] = true;
        for (auto p : layers[t.id].params) ++bwd_users[p];
        break;
      }
      case TaskKind::kOptimizerStep: {
        if (t.id >= num_params) { err(i, "unknown parameter"); break; }
        if (bwd_users[t.id] != fwd_users[t.id]) err(i, "old value still read by a pending backward");
        if (fwd_users[t.id] != 0 && fwd_users[t.id] != users[t.id]) err(i, "runs between forward uses");
        if (!in_flush && ++steps[t.id] > 1) err(i, "second step for the same parameter");
        break;
      }
    }
  }
  for (const auto& m : trace.mems) {
    if (m.task >= trace.tasks.size()) errors.push_back("memory record refers to a missing task");
  }
  return errors;
}

template <std::floating_point T>
std::vector<std::string> validate_trace(const ScheduleTrace& trace, const Graph<T>& graph) {
  return validate_trace(trace, graph.layers(), graph.parameters().size());
}

}  // namespace optfuse
