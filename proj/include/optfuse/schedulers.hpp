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

#include <chrono>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "optfuse/errors.hpp"
#include "optfuse/executor.hpp"
#include "optfuse/graph.hpp"
#include "optfuse/optimizers.hpp"
#include "optfuse/trace.hpp"

namespace optfuse {

enum class Schedule { kBaseline, kForwardFusion, kBackwardFusion };

inline std::string_view name(Schedule s) {
  switch (s) {
    case Schedule::kBaseline: return "baseline";
    case Schedule::kForwardFusion: return "forward-fusion";
    case Schedule::kBackwardFusion: return "backward-fusion";
  }
  return "?";
}

// Accepts the CLI spellings (baseline|forward|backward) and the long names.
inline Schedule parse_schedule(std::string_view s) {
  if (s == "baseline") return Schedule::kBaseline;
  if (s == "forward" || s == "forward-fusion") return Schedule::kForwardFusion;
  if (s == "backward" || s == "backward-fusion") return Schedule::kBackwardFusion;
  throw ConfigError("unknown schedule '" + std::string(s) + "' (expected baseline, forward or backward)");
}

struct StageTimes {
  double forward_ms = 0.0;
  double backward_ms = 0.0;
  double optimizer_ms = 0.0;

  double total_ms() const { return forward_ms + backward_ms + optimizer_ms; }
};

struct StepReport {
  Schedule schedule = Schedule::kBaseline;
  double loss = 0.0;
  ScheduleTrace trace;
  // Fused optimizer time is counted in the stage it runs inside.
  StageTimes times;
  // Parameters whose step is deferred to the next forward (forward-fusion).
  std::size_t pending_updates = 0;
  double clip_factor = 1.0;
};

struct RunOptions {
  bool record_trace = true;
  // Backward-fusion workers. More than one runs the task pool in parallel.
  std::size_t workers = 1;
  // Run backward-fusion through the task pool even with one worker.
  bool task_pool = false;
};

// True iff `param` may be overwritten in place now: its gradient has every
// contribution (count == 0) and no unfinished backward task still reads the
// old value.
template <std::floating_point T>
bool check_inplace_safety(const Parameter<T>& param, const Graph<T>& graph) {
  return param.count == 0 && !graph.has_pending_reader(param.id);
}

template <std::floating_point T>
std::size_t pending_update_count(const Graph<T>& graph) {
  std::size_t n = 0;
  for (const auto& p : graph.parameters()) n += !p.updated;
  return n;
}

// Applies every step forward-fusion has deferred, exactly as the next forward
// would. Returns the number of parameters stepped.
template <std::floating_point T>
std::size_t flush_pending_updates(Graph<T>& graph, const OptimizerPolicy& policy,
                                  TraceRecorder* recorder = nullptr) {
  const std::size_t pending = pending_update_count(graph);
  if (pending == 0) return 0;
  std::size_t flush_task = TraceRecorder::kNoTask;
  if (recorder) flush_task = recorder->begin_task(TaskKind::kFlush, 0);
  for (auto& p : graph.parameters()) {
    if (p.updated) continue;
    TraceSink sink;
    if (recorder) sink = {recorder, recorder->begin_task(TaskKind::kOptimizerStep, p.id, {flush_task})};
    policy_step(policy, p, sink);
    p.updated = true;
  }
  return pending;
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

inline void require_graph_policy(const OptimizerPolicy& policy) {
  policy.validate();
  if (policy.kind == OptimizerKind::kNewton) {
    throw ConfigError("newton cannot drive a graph schedule; use policy_newton on a small problem");
  }
}

// Global-norm clip as one barrier task after the whole backward.
template <std::floating_point T>
std::size_t clip_barrier(Graph<T>& graph, const OptimizerPolicy& policy, TraceRecorder* recorder,
                         StepReport& report) {
  std::size_t task = TraceRecorder::kNoTask;
  TraceSink sink;
  if (recorder) {
    std::vector<std::size_t> deps;
    if (graph.nodes()[0].backward_task != TraceRecorder::kNoTask) deps.push_back(graph.nodes()[0].backward_task);
    task = recorder->begin_task(TaskKind::kClipBarrier, 0, std::move(deps));
    sink = {recorder, task};
  }
  report.clip_factor = clip_by_global_norm(graph, *policy.clip_norm, sink);
  return task;
}

}  // namespace detail

// Three-stage iteration: full forward, full backward, then every optimizer
// step in parameter order.
template <std::floating_point T>
StepReport run_baseline(Graph<T>& graph, OptimizerPolicy& policy, const Tensor<T>& input,
                        const RunOptions& options = {}) {
  detail::require_graph_policy(policy);
  StepReport report;
  report.schedule = Schedule::kBaseline;
  TraceRecorder recorder(options.record_trace ? &report.trace : nullptr);
  TraceRecorder* rec = options.record_trace ? &recorder : nullptr;

  flush_pending_updates(graph, policy, rec);
  const auto t0 = detail::Clock::now();
  report.loss = graph.forward(input, {}, rec);
  const auto t1 = detail::Clock::now();
  graph.backward({}, {}, rec);
  const auto t2 = detail::Clock::now();

  std::size_t prev = graph.nodes()[0].backward_task;
  if (policy.clip_norm) prev = detail::clip_barrier(graph, policy, rec, report);
  for (auto& p : graph.parameters()) {
    TraceSink sink;
    if (rec) {
      std::vector<std::size_t> deps;
      if (prev != TraceRecorder::kNoTask) deps.push_back(prev);
      sink = {rec, rec->begin_task(TaskKind::kOptimizerStep, p.id, std::move(deps))};
      prev = sink.task;
    }
    policy_step(policy, p, sink);
  }
  const auto t3 = detail::Clock::now();

  report.times = {detail::ms_between(t0, t1), detail::ms_between(t1, t2), detail::ms_between(t2, t3)};
  ++policy.iteration;
  return report;
}

// Lazy schedule: each parameter's step is deferred until just before the
// first node that reads it in the next forward pass. Global-information
// transforms (clipping) run at the end of backward; the steps just wait.
template <std::floating_point T>
StepReport run_forward_fusion(Graph<T>& graph, OptimizerPolicy& policy, const Tensor<T>& input,
                              const RunOptions& options = {}) {
  detail::require_graph_policy(policy);
  StepReport report;
  report.schedule = Schedule::kForwardFusion;
  TraceRecorder recorder(options.record_trace ? &report.trace : nullptr);
  TraceRecorder* rec = options.record_trace ? &recorder : nullptr;

  auto pre_node = [&](const OpNode<T>& node) {
    std::vector<std::size_t> deps;
    for (auto id : node.params) {
      auto& p = graph.parameter(id);
      if (p.updated) continue;
      TraceSink sink;
      if (rec) sink = {rec, rec->begin_task(TaskKind::kOptimizerStep, id)};
      policy_step(policy, p, sink);
      p.updated = true;
      deps.push_back(sink.task);
    }
    return deps;
  };
  auto node_done = [&](const OpNode<T>& node) {
    for (auto id : node.params) graph.parameter(id).updated = false;
  };

  const auto t0 = detail::Clock::now();
  report.loss = graph.forward(input, pre_node, rec);
  const auto t1 = detail::Clock::now();
  graph.backward({}, node_done, rec);
  if (policy.clip_norm) detail::clip_barrier(graph, policy, rec, report);
  const auto t2 = detail::Clock::now();

  report.times = {detail::ms_between(t0, t1), detail::ms_between(t1, t2), 0.0};
  report.pending_updates = pending_update_count(graph);
  ++policy.iteration;
  return report;
}

namespace detail {

template <std::floating_point T>
std::vector<std::size_t> readers_backward_tasks(const Graph<T>& graph, std::size_t param_id) {
  std::vector<std::size_t> deps;
  for (const auto& node : graph.nodes()) {
    for (auto p : node.params) {
      if (p == param_id && node.backward_task != TraceRecorder::kNoTask) {
        deps.push_back(node.backward_task);
        break;
      }
    }
  }
  return deps;
}

// Alg. order with one thread: node backward, then any step it unblocked.
template <std::floating_point T>
void backward_fusion_serial(Graph<T>& graph, const OptimizerPolicy& policy, TraceRecorder* rec) {
  std::vector<bool> waiting(graph.parameters().size(), false);

  auto try_step = [&](std::size_t id) {
    auto& p = graph.parameter(id);
    if (!check_inplace_safety(p, graph)) return;
    TraceSink sink;
    if (rec) sink = {rec, rec->begin_task(TaskKind::kOptimizerStep, id, readers_backward_tasks(graph, id))};
    policy_step(policy, p, sink);
    waiting[id] = false;
  };
  // Gradient complete; the node may still need the old value for dL/dx, so
  // the step waits for the node to finish when it is not yet safe.
  auto post_grad = [&](std::size_t id, const OpNode<T>&) {
    if (graph.parameter(id).count == 0) {
      waiting[id] = true;
      try_step(id);
    }
  };
  auto node_done = [&](const OpNode<T>& node) {
    for (auto id : node.params) {
      if (waiting[id]) try_step(id);
    }
  };
  graph.backward(post_grad, node_done, rec);
}

template <std::floating_point T>
void backward_fusion_pool(Graph<T>& graph, const OptimizerPolicy& policy, TraceRecorder* rec,
                          std::size_t workers) {
  graph.begin_backward();
  const auto nodes = graph.nodes();
  const std::size_t n = nodes.size();

  // Task numbering follows the serial order: B(n-1), its steps, B(n-2), ...
  struct Task {
    bool is_step;
    std::size_t target;
  };
  std::vector<Task> tasks;
  std::vector<std::size_t> backward_task_of(n);
  std::vector<std::size_t> step_task_of(graph.parameters().size());
  std::vector<std::size_t> last_user(graph.parameters().size(), n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto p : nodes[i].params) last_user[p] = std::min(last_user[p], i);
  }
  for (std::size_t i = n; i-- > 0;) {
    backward_task_of[i] = tasks.size();
    tasks.push_back({false, i});
    for (auto p : nodes[i].params) {
      if (last_user[p] == i) {
        last_user[p] = n;  // one step task per parameter
        step_task_of[p] = tasks.size();
        tasks.push_back({true, p});
      }
    }
  }

  std::vector<std::size_t> blockers(n);
  std::vector<std::vector<std::size_t>> unblocks(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto s : graph.backward_successors(i)) {
      ++blockers[i];
      unblocks[s].push_back(i);
    }
  }
  std::vector<bool> step_scheduled(graph.parameters().size(), false);
  std::mutex mutex;

  std::vector<std::size_t> initial;
  for (std::size_t i = 0; i < n; ++i) {
    if (blockers[i] == 0) initial.push_back(backward_task_of[i]);
  }

  TaskPool pool(workers);
  pool.run(initial, [&](std::size_t task_id) {
    const Task task = tasks[task_id];
    std::vector<std::size_t> ready;
    if (task.is_step) {
      TraceSink sink;
      if (rec) {
        std::vector<std::size_t> deps;
        {
          std::lock_guard lock(mutex);
          deps = readers_backward_tasks(graph, task.target);
        }
        sink = {rec, rec->begin_task(TaskKind::kOptimizerStep, task.target, std::move(deps))};
      }
      policy_step(policy, graph.parameter(task.target), sink);
      return ready;
    }

    TraceSink sink;
    if (rec) {
      std::vector<std::size_t> deps;
      {
        std::lock_guard lock(mutex);
        deps = graph.backward_deps(task.target);
      }
      sink = {rec, rec->begin_task(TaskKind::kBackwardNode, task.target, std::move(deps))};
    }
    graph.backward_node(task.target, sink);

    std::lock_guard lock(mutex);
    for (auto p : nodes[task.target].params) {
      if (!step_scheduled[p] && check_inplace_safety(graph.parameter(p), graph)) {
        step_scheduled[p] = true;
        ready.push_back(step_task_of[p]);
      }
    }
    for (auto j : unblocks[task.target]) {
      if (--blockers[j] == 0) ready.push_back(backward_task_of[j]);
    }
    return ready;
  });
  graph.finish_backward();
}

}  // namespace detail

// Eager schedule: each parameter is stepped during backward as soon as its
// gradient is complete and no pending backward task reads its old value.
// Needs purely local policies.
template <std::floating_point T>
StepReport run_backward_fusion(Graph<T>& graph, OptimizerPolicy& policy, const Tensor<T>& input,
                               const RunOptions& options = {}) {
  if (policy.requires_global_info()) {
    throw GlobalInfoRequired(std::string("backward-fusion cannot run ") +
                             (policy.clip_norm ? "global-norm clipping" : std::string(name(policy.kind))) +
                             ": it needs every gradient before the first update");
  }
  detail::require_graph_policy(policy);
  StepReport report;
  report.schedule = Schedule::kBackwardFusion;
  TraceRecorder recorder(options.record_trace ? &report.trace : nullptr);
  TraceRecorder* rec = options.record_trace ? &recorder : nullptr;

  flush_pending_updates(graph, policy, rec);
  const auto t0 = detail::Clock::now();
  report.loss = graph.forward(input, {}, rec);
  const auto t1 = detail::Clock::now();
  if (options.workers > 1 || options.task_pool) {
    detail::backward_fusion_pool(graph, policy, rec, options.workers);
  } else {
    detail::backward_fusion_serial(graph, policy, rec);
  }
  const auto t2 = detail::Clock::now();

  report.times = {detail::ms_between(t0, t1), detail::ms_between(t1, t2), 0.0};
  ++policy.iteration;
  return report;
}

template <std::floating_point T>
StepReport run_schedule(Schedule schedule, Graph<T>& graph, OptimizerPolicy& policy,
                        const Tensor<T>& input, const RunOptions& options = {}) {
  switch (schedule) {
    case Schedule::kBaseline: return run_baseline(graph, policy, input, options);
    case Schedule::kForwardFusion: return run_forward_fusion(graph, policy, input, options);
    case Schedule::kBackwardFusion: return run_backward_fusion(graph, policy, input, options);
  }
  throw ConfigError("unknown schedule");
}

}  // namespace optfuse
