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
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "optfuse/errors.hpp"
#include "optfuse/tensor.hpp"
#include "optfuse/trace.hpp"

namespace optfuse {

// A trainable tensor together with everything the schedules track about it.
template <std::floating_point T>
struct Parameter {
  std::size_t id = 0;
  Tensor<T> value;
  Tensor<T> grad;
  // Optimizer state keyed by slot name ("momentum", "exp_avg", ...).
  std::map<std::string, Tensor<T>> history;
  // Gradient contributions still outstanding in the current iteration.
  std::size_t count = 0;
  // Forward-fusion latch. false means a step is pending for this parameter.
  bool updated = true;
  // Optimizer steps applied so far; drives bias correction.
  std::uint64_t steps = 0;

  Tensor<T>& slot(const std::string& name) {
    auto it = history.find(name);
    if (it == history.end()) it = history.emplace(name, Tensor<T>(value.shape())).first;
    return it->second;
  }
};

enum class OpKind {
  kLinear,  // y = act(x W), W [in,out]
  kScale,   // y[r,c] = theta[c] * x[r,c]
};

// Static description of one layer of a model. The tape replays these every
// iteration.
struct Layer {
  OpKind kind = OpKind::kLinear;
  std::vector<std::size_t> params;
  bool relu = false;
};

template <std::floating_point T>
struct OpNode {
  std::size_t id = 0;
  OpKind kind = OpKind::kLinear;
  bool relu = false;
  std::size_t input = 0;  // value id: 0 is the graph input, k + 1 the output of node k
  std::vector<std::size_t> params;
  Tensor<T> output;
  Tensor<T> output_grad;
  bool backward_done = false;
  std::size_t forward_task = TraceRecorder::kNoTask;
  std::size_t backward_task = TraceRecorder::kNoTask;

  // Value id of this node's output.
  std::size_t value_id() const { return id + 1; }
};

struct ModelSpec {
  enum class Kind { kChain, kSharedChain, kMulProbe };

  Kind kind = Kind::kChain;
  std::size_t layers = 1;
  std::size_t width = 1;
  // Layer indices that hold one common parameter (shared-chain only).
  std::vector<std::vector<std::size_t>> share_groups;

  static ModelSpec chain(std::size_t n, std::size_t width) { return {Kind::kChain, n, width, {}}; }
  static ModelSpec shared_chain(std::size_t n, std::size_t width,
                                std::vector<std::vector<std::size_t>> groups) {
    return {Kind::kSharedChain, n, width, std::move(groups)};
  }
  static ModelSpec mul_probe(std::size_t width = 1) { return {Kind::kMulProbe, 1, width, {}}; }
};

inline std::string name(ModelSpec::Kind kind) {
  switch (kind) {
    case ModelSpec::Kind::kChain: return "chain";
    case ModelSpec::Kind::kSharedChain: return "shared-chain";
    case ModelSpec::Kind::kMulProbe: return "mul-probe";
  }
  return "?";
}

// The dynamic computational graph. Parameters persist across iterations; the
// tape of OpNodes is rebuilt by every forward() call.
template <std::floating_point T>
class Graph {
 public:
  // Called before node execution; returns extra trace dependencies the node
  // must record (e.g. an optimizer step fused in front of it).
  using PreNodeHook = std::function<std::vector<std::size_t>(const OpNode<T>&)>;
  // Called after one parameter's gradient contribution from `node` has landed,
  // while the node's backward task is still in progress.
  using PostGradHook = std::function<void(std::size_t param_id, const OpNode<T>& node)>;
  // Called after a node's backward task has completed.
  using NodeDoneHook = std::function<void(const OpNode<T>& node)>;

  Graph() = default;
  Graph(std::vector<Parameter<T>> params, std::vector<Layer> layers, std::size_t input_width)
      : params_(std::move(params)), layers_(std::move(layers)), input_width_(input_width) {
    std::vector<bool> used(params_.size(), false);
    for (const auto& layer : layers_) {
      for (auto p : layer.params) {
        if (p >= params_.size()) throw ConfigError("layer references unknown parameter " + std::to_string(p));
        used[p] = true;
      }
    }
    for (std::size_t p = 0; p < params_.size(); ++p) {
      if (!used[p]) throw ConfigError("parameter " + std::to_string(p) + " is not used by any layer");
      params_[p].id = p;
    }
  }

  std::span<Parameter<T>> parameters() { return params_; }
  std::span<const Parameter<T>> parameters() const { return params_; }
  Parameter<T>& parameter(std::size_t id) { return params_.at(id); }
  const Parameter<T>& parameter(std::size_t id) const { return params_.at(id); }

  std::span<const Layer> layers() const { return layers_; }
  std::span<OpNode<T>> nodes() { return nodes_; }
  std::span<const OpNode<T>> nodes() const { return nodes_; }
  std::size_t input_width() const { return input_width_; }

  const Tensor<T>& input() const { return input_; }
  // dL/dx for the graph input, valid after backward.
  const Tensor<T>& input_grad() const { return input_grad_; }

  bool has_tape() const { return !nodes_.empty(); }
  bool backward_started() const { return backward_started_; }
  bool backward_finished() const { return backward_finished_; }
  double loss() const { return loss_; }

  // Runs every layer in order, recording the tape. Loss is the sum of the
  // last node's output.
  double forward(const Tensor<T>& input, const PreNodeHook& pre_node = {},
                 TraceRecorder* recorder = nullptr) {
    if (input.rank() != 2 || input.cols() != input_width_) {
      throw ShapeError("forward: input shape " + to_string(input.shape()) +
                       " does not match model input width " + std::to_string(input_width_));
    }
    nodes_.clear();
    nodes_.reserve(layers_.size());
    for (auto& p : params_) p.count = 0;
    backward_started_ = backward_finished_ = false;
    input_ = input;
    input_grad_ = Tensor<T>();

    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& layer = layers_[i];
      OpNode<T> node;
      node.id = i;
      node.kind = layer.kind;
      node.relu = layer.relu;
      node.input = i;  // chain topology: node i consumes value i
      node.params = layer.params;

      std::vector<std::size_t> deps;
      if (i > 0 && nodes_[i - 1].forward_task != TraceRecorder::kNoTask) {
        deps.push_back(nodes_[i - 1].forward_task);
      }
      if (pre_node) {
        for (auto d : pre_node(node)) {
          if (d != TraceRecorder::kNoTask) deps.push_back(d);
        }
      }
      TraceSink sink;
      if (recorder) {
        sink = {recorder, recorder->begin_task(TaskKind::kForwardNode, i, std::move(deps))};
        node.forward_task = sink.task;
      }
      node.output = run_node(node, value(node.input), sink);
      for (auto p : node.params) ++params_[p].count;
      nodes_.push_back(std::move(node));
    }
    loss_ = sum(nodes_.back().output);
    return loss_;
  }

  // Seeds dL/d(last output) = 1. Must follow forward().
  void begin_backward() {
    if (nodes_.empty()) throw StateError("backward called without a forward pass");
    if (backward_started_) throw StateError("backward already ran for this forward pass");
    backward_started_ = true;
    for (auto& node : nodes_) {
      node.output_grad = Tensor<T>(node.output.shape());
      node.backward_done = false;
    }
    nodes_.back().output_grad.fill(T(1));
    input_grad_ = Tensor<T>(input_.shape());
  }

  // Trace dependencies of a node's backward task: its own forward and the
  // backward of every consumer of its output.
  std::vector<std::size_t> backward_deps(std::size_t node_id) const {
    std::vector<std::size_t> deps;
    const auto& node = nodes_.at(node_id);
    if (node.forward_task != TraceRecorder::kNoTask) deps.push_back(node.forward_task);
    for (auto c : backward_successors(node_id)) {
      if (nodes_[c].backward_task != TraceRecorder::kNoTask) deps.push_back(nodes_[c].backward_task);
    }
    return deps;
  }

  // Nodes whose backward must finish before node_id's may start: consumers of
  // its output, and later nodes sharing a parameter or input value with it
  // (so gradient accumulation order is fixed).
  std::vector<std::size_t> backward_successors(std::size_t node_id) const {
    std::vector<std::size_t> out;
    const auto& node = nodes_.at(node_id);
    for (std::size_t j = node_id + 1; j < nodes_.size(); ++j) {
      const auto& other = nodes_[j];
      bool dependent = other.input == node.value_id() || other.input == node.input;
      for (auto p : other.params) {
        for (auto q : node.params) dependent = dependent || p == q;
      }
      if (dependent) out.push_back(j);
    }
    return out;
  }

  // One node's backward as a single task: gradients for its parameters, then
  // for its input. Safe to run concurrently with tasks that touch neither.
  void backward_node(std::size_t node_id, TraceSink sink = {}, const PostGradHook& post_grad = {}) {
    if (!backward_started_) throw StateError("backward_node called before begin_backward");
    OpNode<T>& node = nodes_.at(node_id);
    if (node.backward_done) throw StateError("node " + std::to_string(node_id) + " backward ran twice");
    node.backward_task = sink.task;

    const Tensor<T>& x = value(node.input);
    Tensor<T> dz = node.output_grad;
    sink.read(Region::kActivation, node.value_id());
    if (node.relu) {
      for (std::size_t i = 0; i < dz.size(); ++i) {
        if (!(node.output[i] > T(0))) dz[i] = T(0);
      }
    }
    sink.read(Region::kActivation, node.input);

    Tensor<T>& dx = value_grad(node.input);
    switch (node.kind) {
      case OpKind::kLinear: {
        Parameter<T>& w = params_[node.params.at(0)];
        accumulate(w, matmul_tn(x, dz), sink);
        if (post_grad) post_grad(w.id, node);
        sink.read(Region::kParameter, w.id);
        axpy_inplace(dx, T(1), matmul_nt(dz, w.value));
        break;
      }
      case OpKind::kScale: {
        Parameter<T>& theta = params_[node.params.at(0)];
        Tensor<T> dtheta(theta.value.shape());
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t c = 0; c < x.cols(); ++c) dtheta[c] += dz.at(r, c) * x.at(r, c);
        }
        accumulate(theta, dtheta, sink);
        if (post_grad) post_grad(theta.id, node);
        sink.read(Region::kParameter, theta.id);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t c = 0; c < x.cols(); ++c) dx.at(r, c) += dz.at(r, c) * theta.value[c];
        }
        break;
      }
    }
    node.backward_done = true;
  }

  void finish_backward() {
    for (const auto& node : nodes_) {
      if (!node.backward_done) throw StateError("node " + std::to_string(node.id) + " backward never ran");
    }
    for (const auto& p : params_) {
      if (p.count != 0) throw StateError("parameter " + std::to_string(p.id) + " has pending gradient contributions");
    }
    backward_finished_ = true;
  }

  // Reverse topological sweep. The recorder gets one backward-node task per node.
  void backward(const PostGradHook& post_grad = {}, const NodeDoneHook& node_done = {},
                TraceRecorder* recorder = nullptr) {
    begin_backward();
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      TraceSink sink;
      if (recorder) sink = {recorder, recorder->begin_task(TaskKind::kBackwardNode, i, backward_deps(i))};
      backward_node(i, sink, post_grad);
      if (node_done) node_done(nodes_[i]);
    }
    finish_backward();
  }

  void zero_grads(TraceSink sink = {}) {
    for (auto& p : params_) {
      p.grad.fill(T(0));
      p.count = 0;
      sink.write(Region::kGradient, p.id);
    }
  }

  // Drops the tape and the usage counts, e.g. after an evaluation-only forward.
  void discard_tape() {
    nodes_.clear();
    for (auto& p : params_) p.count = 0;
    backward_started_ = backward_finished_ = false;
  }

  // True while some node of the current tape that reads `param_id` has not
  // finished its backward task.
  bool has_pending_reader(std::size_t param_id) const {
    if (!backward_started_) return has_tape() && uses(param_id);
    // Only the flags of nodes that use the parameter are read: those nodes
    // never run concurrently with each other (see backward_successors).
    for (const auto& node : nodes_) {
      for (auto p : node.params) {
        if (p == param_id && !node.backward_done) return true;
      }
    }
    return false;
  }

 private:
  bool uses(std::size_t param_id) const {
    for (const auto& node : nodes_) {
      for (auto p : node.params) {
        if (p == param_id) return true;
      }
    }
    return false;
  }

  const Tensor<T>& value(std::size_t value_id) const {
    return value_id == 0 ? input_ : nodes_[value_id - 1].output;
  }

  Tensor<T>& value_grad(std::size_t value_id) {
    return value_id == 0 ? input_grad_ : nodes_[value_id - 1].output_grad;
  }

  void accumulate(Parameter<T>& p, const Tensor<T>& contribution, const TraceSink& sink) {
    if (p.count == 0) throw StateError("parameter " + std::to_string(p.id) + " received an unexpected gradient");
    sink.read(Region::kGradient, p.id);
    axpy_inplace(p.grad, T(1), contribution);
    sink.write(Region::kGradient, p.id);
    --p.count;
  }

  Tensor<T> run_node(const OpNode<T>& node, const Tensor<T>& x, const TraceSink& sink) const {
    for (auto p : node.params) sink.read(Region::kParameter, p);
    sink.read(Region::kActivation, node.input);
    Tensor<T> y;
    switch (node.kind) {
      case OpKind::kLinear: {
        const auto& w = params_[node.params.at(0)].value;
        if (w.rows() != x.cols()) {
          throw ShapeError("node " + std::to_string(node.id) + ": input " + to_string(x.shape()) +
                           " does not fit weight " + to_string(w.shape()));
        }
        y = matmul(x, w);
        break;
      }
      case OpKind::kScale: {
        const auto& theta = params_[node.params.at(0)].value;
        if (theta.size() != x.cols()) {
          throw ShapeError("node " + std::to_string(node.id) + ": input " + to_string(x.shape()) +
                           " does not fit scale " + to_string(theta.shape()));
        }
        y = x;
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t c = 0; c < x.cols(); ++c) y.at(r, c) *= theta[c];
        }
        break;
      }
    }
    if (node.relu) y = relu(y);
    sink.write(Region::kActivation, node.value_id());
    return y;
  }

  std::vector<Parameter<T>> params_;
  std::vector<Layer> layers_;
  std::size_t input_width_ = 0;

  std::vector<OpNode<T>> nodes_;
  Tensor<T> input_;
  Tensor<T> input_grad_;
  double loss_ = 0.0;
  bool backward_started_ = false;
  bool backward_finished_ = false;
};

// Builds one of the synthetic models. Weights are seeded-uniform in
// [-1/sqrt(width), 1/sqrt(width)]; the probe scale starts in [0.5, 1.5].
template <std::floating_point T>
Graph<T> build_model(const ModelSpec& spec, std::uint64_t seed = 0) {
  if (spec.layers == 0) throw ConfigError("model needs at least one layer");
  if (spec.width == 0) throw ConfigError("model width must be at least 1");

  const double bound = 1.0 / std::sqrt(static_cast<double>(spec.width));
  auto make_param = [&](Shape shape, std::size_t index, double lo, double hi) {
    Parameter<T> p;
    p.value = Tensor<T>(shape, Fill::uniform(lo, hi, seed * 7919 + index + 1));
    p.grad = Tensor<T>(std::move(shape));
    return p;
  };

  std::vector<Parameter<T>> params;
  std::vector<Layer> layers;
  switch (spec.kind) {
    case ModelSpec::Kind::kMulProbe: {
      if (spec.layers != 1) throw ConfigError("mul-probe has exactly one layer");
      params.push_back(make_param({spec.width}, 0, 0.5, 1.5));
      layers.push_back({OpKind::kScale, {0}, false});
      break;
    }
    case ModelSpec::Kind::kChain:
    case ModelSpec::Kind::kSharedChain: {
      if (spec.kind == ModelSpec::Kind::kChain && !spec.share_groups.empty()) {
        throw ConfigError("share groups are only valid for shared-chain");
      }
      std::vector<std::size_t> owner(spec.layers, SIZE_MAX);
      for (const auto& group : spec.share_groups) {
        if (group.empty()) throw ConfigError("empty share group");
        for (auto l : group) {
          if (l >= spec.layers) {
            throw ConfigError("share group names layer " + std::to_string(l) + " but the model has " +
                              std::to_string(spec.layers) + " layers");
          }
          if (owner[l] != SIZE_MAX) throw ConfigError("layer " + std::to_string(l) + " is in two share groups");
        }
        const std::size_t id = params.size();
        params.push_back(make_param({spec.width, spec.width}, id, -bound, bound));
        for (auto l : group) owner[l] = id;
      }
      for (std::size_t l = 0; l < spec.layers; ++l) {
        if (owner[l] == SIZE_MAX) {
          owner[l] = params.size();
          params.push_back(make_param({spec.width, spec.width}, owner[l], -bound, bound));
        }
        layers.push_back({OpKind::kLinear, {owner[l]}, true});
      }
      // Parameter ids follow first use.
      std::vector<std::size_t> remap(params.size(), SIZE_MAX);
      std::vector<Parameter<T>> ordered;
      for (auto& layer : layers) {
        auto& p = layer.params[0];
        if (remap[p] == SIZE_MAX) {
          remap[p] = ordered.size();
          ordered.push_back(std::move(params[p]));
        }
        p = remap[p];
      }
      params = std::move(ordered);
      break;
    }
  }
  return Graph<T>(std::move(params), std::move(layers), spec.width);
}

// Seeded input batch in [-1, 1).
template <std::floating_point T>
Tensor<T> make_input(const ModelSpec& spec, std::size_t batch, std::uint64_t seed = 0) {
  if (batch == 0) throw ConfigError("batch size must be at least 1");
  return Tensor<T>({batch, spec.width}, Fill::uniform(-1.0, 1.0, seed * 104729 + 17));
}

}  // namespace optfuse
