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
#include <gtest/gtest.h>

#include "optfuse/schedulers.hpp"
#include "optfuse/trace_check.hpp"

namespace optfuse {
namespace {

OptimizerPolicy sgd(double eta) {
  OptimizerPolicy p;
  p.kind = OptimizerKind::kSgd;
  p.eta = eta;
  return p;
}

struct Probe {
  Graph<double> graph = build_model<double>(ModelSpec::mul_probe());
  Tensor<double> x{{1, 1}, std::vector<double>{3.0}};
  Probe() { graph.parameter(0).value[0] = 2.0; }
};

TEST(BaselineTest, MulProbeHandArithmetic) {
  Probe probe;
  auto policy = sgd(0.1);
  const auto report = run_baseline(probe.graph, policy, probe.x);
  EXPECT_DOUBLE_EQ(report.loss, 6.0);
  EXPECT_DOUBLE_EQ(probe.graph.input_grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(probe.graph.parameter(0).value[0], 2.0 - 0.1 * 3.0);
  EXPECT_EQ(policy.iteration, 1u);
}

TEST(BaselineTest, ChainPhasesAreContiguous) {
  for (std::size_t n : {1, 3, 6}) {
    auto g = build_model<float>(ModelSpec::chain(n, 3));
    auto policy = sgd(0.01);
    const auto report = run_baseline(g, policy, make_input<float>(ModelSpec::chain(n, 3), 2));
    ASSERT_EQ(report.trace.tasks.size(), 3 * n);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_EQ(report.trace.tasks[i].kind, TaskKind::kForwardNode);
      EXPECT_EQ(report.trace.tasks[n + i].kind, TaskKind::kBackwardNode);
      EXPECT_EQ(report.trace.tasks[2 * n + i].kind, TaskKind::kOptimizerStep);
    }
    EXPECT_EQ(report.pending_updates, 0u);
    EXPECT_TRUE(validate_trace(report.trace, g).empty());
  }
}

TEST(ForwardFusionTest, FirstIterationHasNothingToFuse) {
  auto g = build_model<float>(ModelSpec::chain(3, 3));
  auto policy = sgd(0.01);
  const auto report = run_forward_fusion(g, policy, make_input<float>(ModelSpec::chain(3, 3), 2));
  EXPECT_EQ(report.trace.count(TaskKind::kOptimizerStep), 0u);
  EXPECT_EQ(report.pending_updates, 3u);
  EXPECT_EQ(report.times.optimizer_ms, 0.0);
}

TEST(ForwardFusionTest, SharedParameterSteppedOnceBeforeFirstUse) {
  const auto spec = ModelSpec::shared_chain(4, 3, {{0, 2}});
  auto g = build_model<float>(spec);
  const auto x = make_input<float>(spec, 2);
  auto policy = sgd(0.01);
  run_forward_fusion(g, policy, x);
  for (int it = 0; it < 3; ++it) {
    const auto report = run_forward_fusion(g, policy, x);
    const std::size_t shared = g.layers()[0].params[0];
    EXPECT_EQ(report.trace.count(TaskKind::kOptimizerStep, shared), 1u);
    const auto step = report.trace.find(TaskKind::kOptimizerStep, shared);
    const auto layer0 = report.trace.find(TaskKind::kForwardNode, 0);
    ASSERT_TRUE(step && layer0);
    EXPECT_LT(*step, *layer0);
    // The node that follows the step depends on it.
    const auto& deps = report.trace.tasks[*layer0].deps;
    EXPECT_NE(std::find(deps.begin(), deps.end(), *step), deps.end());
    for (std::size_t p = 0; p < g.parameters().size(); ++p) {
      EXPECT_EQ(report.trace.count(TaskKind::kOptimizerStep, p), 1u);
    }
    EXPECT_TRUE(validate_trace(report.trace, g).empty());
  }
}

TEST(ForwardFusionTest, ObservationIsStaleUntilFlush) {
  const auto spec = ModelSpec::chain(3, 4);
  const auto x = make_input<float>(spec, 3, 1);
  auto base = build_model<float>(spec, 1);
  auto fused = base;
  auto base_policy = sgd(0.05);
  auto fused_policy = sgd(0.05);
  std::vector<Graph<float>> baseline_states{base};
  for (int t = 0; t < 4; ++t) {
    run_baseline(base, base_policy, x);
    baseline_states.push_back(base);
    run_forward_fusion(fused, fused_policy, x);
  }
  // Raw reads show theta(t-1); the pending step is still outstanding.
  for (std::size_t p = 0; p < 3; ++p) {
    EXPECT_EQ(fused.parameter(p).value, baseline_states[3].parameter(p).value);
  }
  EXPECT_EQ(pending_update_count(fused), 3u);
  EXPECT_EQ(flush_pending_updates(fused, fused_policy), 3u);
  EXPECT_EQ(pending_update_count(fused), 0u);
  for (std::size_t p = 0; p < 3; ++p) EXPECT_EQ(fused.parameter(p).value, base.parameter(p).value);
  // Idempotent.
  EXPECT_EQ(flush_pending_updates(fused, fused_policy), 0u);
  for (std::size_t p = 0; p < 3; ++p) EXPECT_EQ(fused.parameter(p).value, base.parameter(p).value);
}

TEST(ForwardFusionTest, FlushRecordsOneStepPerPendingParameter) {
  const auto spec = ModelSpec::chain(2, 2);
  auto g = build_model<double>(spec);
  auto policy = sgd(0.1);
  run_forward_fusion(g, policy, make_input<double>(spec, 1));
  ScheduleTrace trace;
  TraceRecorder rec(&trace);
  EXPECT_EQ(flush_pending_updates(g, policy, &rec), 2u);
  ASSERT_EQ(trace.tasks.size(), 3u);
  EXPECT_EQ(trace.tasks[0].kind, TaskKind::kFlush);
  EXPECT_EQ(trace.count(TaskKind::kOptimizerStep), 2u);
}

TEST(BackwardFusionTest, MulProbeUsesOldThetaForInputGradient) {
  Probe probe;
  auto policy = sgd(0.1);
  const auto report = run_backward_fusion(probe.graph, policy, probe.x);
  EXPECT_EQ(report.loss, 6.0);
  EXPECT_EQ(probe.graph.input_grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(probe.graph.parameter(0).value[0], 1.7);
}

TEST(BackwardFusionTest, StepForLastLayerPrecedesFirstLayerBackward) {
  auto g = build_model<float>(ModelSpec::chain(3, 3));
  auto policy = sgd(0.01);
  const auto report = run_backward_fusion(g, policy, make_input<float>(ModelSpec::chain(3, 3), 2));
  const auto step2 = report.trace.find(TaskKind::kOptimizerStep, 2);
  const auto back0 = report.trace.find(TaskKind::kBackwardNode, 0);
  ASSERT_TRUE(step2 && back0);
  EXPECT_LT(*step2, *back0);
  // Serial order interleaves: B2 U2 B1 U1 B0 U0.
  std::vector<std::pair<TaskKind, std::size_t>> order;
  for (std::size_t i = 3; i < report.trace.tasks.size(); ++i) {
    order.emplace_back(report.trace.tasks[i].kind, report.trace.tasks[i].id);
  }
  const std::vector<std::pair<TaskKind, std::size_t>> expected{
      {TaskKind::kBackwardNode, 2}, {TaskKind::kOptimizerStep, 2}, {TaskKind::kBackwardNode, 1},
      {TaskKind::kOptimizerStep, 1}, {TaskKind::kBackwardNode, 0}, {TaskKind::kOptimizerStep, 0}};
  EXPECT_EQ(order, expected);
  EXPECT_TRUE(validate_trace(report.trace, g).empty());
}

TEST(BackwardFusionTest, ClippingRaisesWithoutTouchingState) {
  const auto spec = ModelSpec::chain(2, 3);
  auto g = build_model<float>(spec);
  const auto before = g;
  auto policy = sgd(0.1);
  policy.clip_norm = 1.0;
  EXPECT_THROW(run_backward_fusion(g, policy, make_input<float>(spec, 2)), GlobalInfoRequired);
  EXPECT_EQ(policy.iteration, 0u);
  EXPECT_FALSE(g.has_tape());
  for (std::size_t p = 0; p < 2; ++p) {
    EXPECT_EQ(g.parameter(p).value, before.parameter(p).value);
    EXPECT_EQ(g.parameter(p).grad, before.parameter(p).grad);
  }
  EXPECT_NO_THROW(run_baseline(g, policy, make_input<float>(spec, 2)));
  EXPECT_NO_THROW(run_forward_fusion(g, policy, make_input<float>(spec, 2)));

  auto newton = sgd(0.1);
  newton.kind = OptimizerKind::kNewton;
  EXPECT_THROW(run_backward_fusion(g, newton, make_input<float>(spec, 2)), GlobalInfoRequired);
  EXPECT_THROW(run_baseline(g, newton, make_input<float>(spec, 2)), ConfigError);
}

TEST(InplaceSafetyTest, MulProbeMidNodeIsUnsafe) {
  Probe probe;
  probe.graph.forward(probe.x);
  bool at_hook = true;
  probe.graph.backward([&](std::size_t id, const OpNode<double>&) {
    at_hook = check_inplace_safety(probe.graph.parameter(id), probe.graph);
  });
  EXPECT_FALSE(at_hook);
  EXPECT_TRUE(check_inplace_safety(probe.graph.parameter(0), probe.graph));
}

TEST(InplaceSafetyTest, CompletedChainNodeIsSafe) {
  auto g = build_model<float>(ModelSpec::chain(3, 2));
  g.forward(make_input<float>(ModelSpec::chain(3, 2), 1));
  std::vector<bool> safe_after;
  g.backward({}, [&](const OpNode<float>& node) {
    safe_after.push_back(check_inplace_safety(g.parameter(node.params[0]), g));
  });
  EXPECT_EQ(safe_after, (std::vector<bool>{true, true, true}));
}

TEST(InplaceSafetyTest, SharedParameterHalfwayIsUnsafe) {
  auto g = build_model<float>(ModelSpec::shared_chain(4, 2, {{0, 2}}));
  const std::size_t shared = g.layers()[0].params[0];
  g.forward(make_input<float>(ModelSpec::chain(4, 2), 1));
  std::vector<std::pair<std::size_t, bool>> seen;
  g.backward({}, [&](const OpNode<float>& node) {
    if (node.params[0] == shared) {
      seen.emplace_back(g.parameter(shared).count, check_inplace_safety(g.parameter(shared), g));
    }
  });
  ASSERT_EQ(seen.size(), 2u);
  EXPECT_EQ(seen[0], std::make_pair(std::size_t{1}, false));
  EXPECT_EQ(seen[1], std::make_pair(std::size_t{0}, true));
}

TEST(BackwardFusionTest, PoolWithOneWorkerMatchesSerialOrder) {
  const auto spec = ModelSpec::shared_chain(5, 3, {{1, 3}});
  const auto x = make_input<float>(spec, 2);
  auto a = build_model<float>(spec), b = a;
  auto pa = sgd(0.05), pb = sgd(0.05);
  for (int it = 0; it < 3; ++it) {
    const auto ra = run_backward_fusion(a, pa, x);
    const auto rb = run_backward_fusion(b, pb, x, {true, 1, true});
    EXPECT_EQ(ra.trace, rb.trace);
  }
  for (std::size_t p = 0; p < a.parameters().size(); ++p) EXPECT_EQ(a.parameter(p).value, b.parameter(p).value);
}

TEST(BackwardFusionTest, ParallelMatchesBaseline) {
  const auto spec = ModelSpec::chain(8, 6);
  const auto x = make_input<double>(spec, 4, 3);
  auto base = build_model<double>(spec, 3), par = base;
  OptimizerPolicy pb;
  pb.kind = OptimizerKind::kAdam;
  pb.eta = 0.01;
  auto pp = pb;
  for (int it = 0; it < 5; ++it) {
    run_baseline(base, pb, x);
    const auto r = run_backward_fusion(par, pp, x, {true, 4, true});
    EXPECT_TRUE(validate_trace(r.trace, par).empty());
    EXPECT_EQ(r.trace.count(TaskKind::kOptimizerStep), 8u);
  }
  for (std::size_t p = 0; p < 8; ++p) EXPECT_EQ(base.parameter(p).value, par.parameter(p).value);
}

TEST(SchedulersTest, StageTimesAreConsistent) {
  const auto spec = ModelSpec::chain(4, 8);
  const auto x = make_input<float>(spec, 8);
  for (auto s : {Schedule::kBaseline, Schedule::kForwardFusion, Schedule::kBackwardFusion}) {
    auto g = build_model<float>(spec);
    auto policy = sgd(0.01);
    const auto r = run_schedule(s, g, policy, x, {false});
    EXPECT_GE(r.times.forward_ms, 0.0);
    EXPECT_GE(r.times.backward_ms, 0.0);
    EXPECT_GE(r.times.optimizer_ms, 0.0);
    EXPECT_DOUBLE_EQ(r.times.total_ms(), r.times.forward_ms + r.times.backward_ms + r.times.optimizer_ms);
    if (s != Schedule::kBaseline) {
      EXPECT_EQ(r.times.optimizer_ms, 0.0);
    }
    EXPECT_TRUE(r.trace.tasks.empty());
  }
}

TEST(SchedulersTest, ParseSchedule) {
  EXPECT_EQ(parse_schedule("forward"), Schedule::kForwardFusion);
  EXPECT_EQ(parse_schedule("backward-fusion"), Schedule::kBackwardFusion);
  EXPECT_THROW(parse_schedule("sideways"), ConfigError);
}

TEST(TraceCheckTest, FlagsIllegalStep) {
  // A step between a node's forward and its backward reads a stale theta.
  ScheduleTrace t;
  t.tasks.push_back({TaskKind::kForwardNode, 0, {}});
  t.tasks.push_back({TaskKind::kOptimizerStep, 0, {0}});
  t.tasks.push_back({TaskKind::kBackwardNode, 0, {0}});
  const std::vector<Layer> layers{{OpKind::kScale, {0}, false}};
  EXPECT_FALSE(validate_trace(t, layers, 1).empty());

  ScheduleTrace ok;
  ok.tasks.push_back({TaskKind::kForwardNode, 0, {}});
  ok.tasks.push_back({TaskKind::kBackwardNode, 0, {0}});
  ok.tasks.push_back({TaskKind::kOptimizerStep, 0, {1}});
  EXPECT_TRUE(validate_trace(ok, layers, 1).empty());

  ScheduleTrace forward_dep = ok;
  forward_dep.tasks[1].deps = {2};
  EXPECT_FALSE(validate_trace(forward_dep, layers, 1).empty());
}

}  // namespace
}  // namespace optfuse
