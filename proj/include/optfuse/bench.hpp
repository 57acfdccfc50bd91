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

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "optfuse/errors.hpp"
#include "optfuse/graph.hpp"
#include "optfuse/locality.hpp"
#include "optfuse/optimizers.hpp"
#include "optfuse/schedulers.hpp"
#include "optfuse/trace_check.hpp"

namespace optfuse {

enum class Precision { kF32, kF64 };
enum class BenchMode { kTime, kTrace, kVerify, kBreakdown, kSweep, kCompare };

inline Precision parse_precision(std::string_view s) {
  if (s == "f32") return Precision::kF32;
  if (s == "f64") return Precision::kF64;
  throw ConfigError("unknown precision '" + std::string(s) + "' (expected f32 or f64)");
}

inline BenchMode parse_mode(std::string_view s) {
  if (s == "time") return BenchMode::kTime;
  if (s == "trace") return BenchMode::kTrace;
  if (s == "verify") return BenchMode::kVerify;
  if (s == "breakdown") return BenchMode::kBreakdown;
  if (s == "sweep") return BenchMode::kSweep;
  if (s == "compare") return BenchMode::kCompare;
  throw ConfigError("unknown mode '" + std::string(s) +
                    "' (expected time, trace, verify, breakdown, sweep or compare)");
}

// Parses "lo:hi" into every integer batch size in [lo, hi].
inline std::vector<std::size_t> parse_batch_range(std::string_view s) {
  const auto colon = s.find(':');
  if (colon == std::string_view::npos) throw ConfigError("--batch-sweep expects lo:hi, got '" + std::string(s) + "'");
  auto parse = [&](std::string_view part) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc{} || ptr != part.data() + part.size() || v == 0) {
      throw ConfigError("--batch-sweep bound '" + std::string(part) + "' must be a positive integer");
    }
    return v;
  };
  const std::size_t lo = parse(s.substr(0, colon));
  const std::size_t hi = parse(s.substr(colon + 1));
  if (hi < lo) throw ConfigError("--batch-sweep needs lo <= hi");
  std::vector<std::size_t> out(hi - lo + 1);
  std::iota(out.begin(), out.end(), lo);
  return out;
}

inline OptimizerPolicy default_policy() {
  OptimizerPolicy p;
  p.kind = OptimizerKind::kAdam;
  p.eta = 1e-3;
  p.weight_decay = 5e-4;
  return p;
}

struct BenchConfig {
  ModelSpec model = ModelSpec::chain(16, 32);
  OptimizerPolicy policy = default_policy();
  Schedule schedule = Schedule::kBackwardFusion;
  Precision precision = Precision::kF32;
  std::vector<std::size_t> batches{32};
  std::size_t warmup = 10;
  std::size_t iterations = 100;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  std::string out;
  BenchMode mode = BenchMode::kTime;
  // Trace mode only; 0 means one layer's parameter-side region set.
  std::size_t cache_capacity = 0;

  void validate() const {
    if (iterations == 0) throw ConfigError("--iters must be at least 1");
    if (batches.empty()) throw ConfigError("at least one batch size is required");
    for (std::size_t i = 0; i < batches.size(); ++i) {
      if (batches[i] == 0) throw ConfigError("batch sizes must be positive");
      if (mode == BenchMode::kSweep && i > 0 && batches[i] <= batches[i - 1]) {
        throw ConfigError("sweep batch sizes must be strictly increasing");
      }
    }
    if (workers == 0) throw ConfigError("--workers must be at least 1");
    policy.validate();
  }
};

// Slots one layer needs on the parameter side: value, gradient and (when the
// policy keeps any) history.
inline std::size_t layer_region_set_size(const OptimizerPolicy& policy) {
  return policy.has_history() ? 3 : 2;
}

struct StageStats {
  StageTimes mean;
  StageTimes median;
  double mean_total_ms = 0.0;
  double median_total_ms = 0.0;
  double min_total_ms = 0.0;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

// Warmup then measured iterations of one schedule on a fresh model. Returns
// nullopt when the schedule cannot run the policy (GlobalInfoRequired).
template <std::floating_point T>
std::optional<StageStats> measure_schedule(const BenchConfig& config, Schedule schedule, std::size_t batch) {
  Graph<T> graph = build_model<T>(config.model, config.seed);
  const Tensor<T> input = make_input<T>(config.model, batch, config.seed);
  OptimizerPolicy policy = config.policy;
  RunOptions options{false, config.workers, false};
  if (schedule == Schedule::kBackwardFusion && policy.requires_global_info()) return std::nullopt;

  for (std::size_t i = 0; i < config.warmup; ++i) run_schedule(schedule, graph, policy, input, options);
  std::vector<double> fwd, bwd, opt, total;
  for (std::size_t i = 0; i < config.iterations; ++i) {
    const StepReport r = run_schedule(schedule, graph, policy, input, options);
    fwd.push_back(r.times.forward_ms);
    bwd.push_back(r.times.backward_ms);
    opt.push_back(r.times.optimizer_ms);
    total.push_back(r.times.total_ms());
  }
  StageStats s;
  s.mean = {detail::mean_of(fwd), detail::mean_of(bwd), detail::mean_of(opt)};
  s.median = {detail::median_of(fwd), detail::median_of(bwd), detail::median_of(opt)};
  s.mean_total_ms = detail::mean_of(total);
  s.median_total_ms = detail::median_of(total);
  s.min_total_ms = *std::min_element(total.begin(), total.end());
  return s;
}

// ---------------------------------------------------------------------------
// Sweep CSV: `idx\tforward-fusion\tbackward-fusion`, idx = mini-batch size.
// A cell that could not run is written as `skip`.

struct SweepRow {
  std::size_t idx = 0;
  std::optional<double> forward_fusion;
  std::optional<double> backward_fusion;

  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

inline constexpr std::string_view kCsvHeader = "idx\tforward-fusion\tbackward-fusion";

inline void write_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  auto cell = [](const std::optional<double>& v) { return v ? detail::format_double(*v) : std::string("skip"); };
  os << kCsvHeader << '\n';
  for (const auto& r : rows) os << r.idx << '\t' << cell(r.forward_fusion) << '\t' << cell(r.backward_fusion) << '\n';
}

inline void emit_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_csv(out, rows);
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline std::vector<SweepRow> read_csv(std::istream& is) {
  std::vector<SweepRow> rows;
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader) throw IoError("sweep CSV has an unexpected header");
  auto parse_cell = [](const std::string& s) -> std::optional<double> {
    if (s == "skip") return std::nullopt;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw IoError("bad number '" + s + "' in sweep CSV");
    return v;
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string idx, ff, bf;
    if (!std::getline(ls, idx, '\t') || !std::getline(ls, ff, '\t') || !std::getline(ls, bf, '\t')) {
      throw IoError("sweep CSV row '" + line + "' does not have three columns");
    }
    SweepRow row;
    auto [ptr, ec] = std::from_chars(idx.data(), idx.data() + idx.size(), row.idx);
    if (ec != std::errc{} || ptr != idx.data() + idx.size()) throw IoError("bad idx '" + idx + "' in sweep CSV");
    row.forward_fusion = parse_cell(ff);
    row.backward_fusion = parse_cell(bf);
    rows.push_back(row);
  }
  return rows;
}

inline std::vector<SweepRow> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_csv(in);
}

struct SweepPoint {
  std::size_t batch = 0;
  StageStats baseline;
  std::optional<StageStats> forward_fusion;
  std::optional<StageStats> backward_fusion;
};

template <std::floating_point T>
std::vector<SweepPoint> run_sweep(const BenchConfig& config) {
  std::vector<SweepPoint> points;
  for (auto b : config.batches) {
    SweepPoint p;
    p.batch = b;
    p.baseline = *measure_schedule<T>(config, Schedule::kBaseline, b);
    p.forward_fusion = measure_schedule<T>(config, Schedule::kForwardFusion, b);
    p.backward_fusion = measure_schedule<T>(config, Schedule::kBackwardFusion, b);
    points.push_back(std::move(p));
  }
  return points;
}

// Speedup = baseline mean total / schedule mean total.
inline std::vector<SweepRow> speedup_rows(const std::vector<SweepPoint>& points) {
  std::vector<SweepRow> rows;
  for (const auto& p : points) {
    auto speedup = [&](const std::optional<StageStats>& s) -> std::optional<double> {
      if (!s || !(s->mean_total_ms > 0.0)) return std::nullopt;
      return p.baseline.mean_total_ms / s->mean_total_ms;
    };
    rows.push_back({p.batch, speedup(p.forward_fusion), speedup(p.backward_fusion)});
  }
  return rows;
}

// Saved time in ms = baseline mean total - schedule mean total.
inline std::vector<SweepRow> saved_time_rows(const std::vector<SweepPoint>& points) {
  std::vector<SweepRow> rows;
  for (const auto& p : points) {
    auto saved = [&](const std::optional<StageStats>& s) -> std::optional<double> {
      if (!s) return std::nullopt;
      return p.baseline.mean_total_ms - s->mean_total_ms;
    };
    rows.push_back({p.batch, saved(p.forward_fusion), saved(p.backward_fusion)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Per-stage breakdown: three rows per schedule.

struct BreakdownRow {
  Schedule schedule;
  std::string stage;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  bool skipped = false;
};

template <std::floating_point T>
std::vector<BreakdownRow> run_breakdown(const BenchConfig& config) {
  std::vector<BreakdownRow> rows;
  const std::size_t batch = config.batches.front();
  for (auto s : {Schedule::kBaseline, Schedule::kForwardFusion, Schedule::kBackwardFusion}) {
    auto stats = measure_schedule<T>(config, s, batch);
    if (!stats) {
      for (const char* stage : {"forward", "backward", "optimizer"}) rows.push_back({s, stage, 0.0, 0.0, true});
      continue;
    }
    rows.push_back({s, "forward", stats->mean.forward_ms, stats->median.forward_ms});
    rows.push_back({s, "backward", stats->mean.backward_ms, stats->median.backward_ms});
    rows.push_back({s, "optimizer", stats->mean.optimizer_ms, stats->median.optimizer_ms});
  }
  return rows;
}

inline void write_breakdown(std::ostream& os, const std::vector<BreakdownRow>& rows) {
  os << "schedule\tstage\tmean_ms\tmedian_ms\n";
  for (const auto& r : rows) {
    os << name(r.schedule) << '\t' << r.stage << '\t';
    if (r.skipped) {
      os << "skip\tskip\n";
    } else {
      os << detail::format_double(r.mean_ms) << '\t' << detail::format_double(r.median_ms) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Optimizer comparison: optimizer share of the baseline iteration against
// the measured speedup of both fused schedules.

struct OptimizerComparison {
  std::string label;
  OptimizerPolicy policy;
  double ratio = 0.0;  // baseline optimizer time / baseline iteration time
  std::optional<double> forward_fusion;
  std::optional<double> backward_fusion;
};

// SGD without weight decay plus the six policies with the configured decay.
inline std::vector<std::pair<std::string, OptimizerPolicy>> comparison_policies(const OptimizerPolicy& base) {
  std::vector<std::pair<std::string, OptimizerPolicy>> out;
  OptimizerPolicy plain = base;
  plain.kind = OptimizerKind::kSgd;
  plain.weight_decay = 0.0;
  plain.clip_norm.reset();
  out.emplace_back("sgd-no-wd", plain);
  const double wd = base.weight_decay > 0.0 ? base.weight_decay : 5e-4;
  for (auto kind : kLocalOptimizers) {
    OptimizerPolicy p = plain;
    p.kind = kind;
    p.weight_decay = wd;
    out.emplace_back(std::string(name(kind)) + "-wd", p);
  }
  return out;
}

template <std::floating_point T>
std::vector<OptimizerComparison> compare_optimizers(const BenchConfig& config) {
  std::vector<OptimizerComparison> out;
  const std::size_t batch = config.batches.front();
  for (const auto& [label, policy] : comparison_policies(config.policy)) {
    BenchConfig c = config;
    c.policy = policy;
    const StageStats base = *measure_schedule<T>(c, Schedule::kBaseline, batch);
    OptimizerComparison row;
    row.label = label;
    row.policy = policy;
    row.ratio = base.median_total_ms > 0.0 ? base.median.optimizer_ms / base.median_total_ms : 0.0;
    auto speedup = [&](Schedule s) -> std::optional<double> {
      auto stats = measure_schedule<T>(c, s, batch);
      if (!stats || !(stats->median_total_ms > 0.0)) return std::nullopt;
      return base.median_total_ms / stats->median_total_ms;
    };
    row.forward_fusion = speedup(Schedule::kForwardFusion);
    row.backward_fusion = speedup(Schedule::kBackwardFusion);
    out.push_back(std::move(row));
  }
  return out;
}

// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("spearman needs two equal-length samples of size >= 2");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = detail::mean_of(rx), my = detail::mean_of(ry);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return (sxx > 0 && syy > 0) ? sxy / std::sqrt(sxx * syy) : 0.0;
}

// ---------------------------------------------------------------------------
// Trajectory verification grid.

struct VerifyCell {
  std::string model;
  std::string optimizer;
  Precision precision = Precision::kF32;
  std::uint64_t seed = 0;
  bool forward_fusion_exact = false;
  bool backward_fusion_exact = false;
  bool parallel_within_tolerance = false;
  bool parallel_exact = false;
  double parallel_max_rel_error = 0.0;
  bool one_step_per_iteration = false;
  bool traces_legal = false;
  std::vector<std::string> problems;

  bool passed() const {
    return forward_fusion_exact && backward_fusion_exact && parallel_within_tolerance &&
           one_step_per_iteration && traces_legal;
  }
};

struct VerifyGrid {
  std::vector<ModelSpec> models{ModelSpec::chain(3, 4), ModelSpec::shared_chain(4, 4, {{0, 2}}),
                                ModelSpec::mul_probe(3)};
  std::vector<OptimizerKind> optimizers{std::begin(kLocalOptimizers), std::end(kLocalOptimizers)};
  std::vector<Precision> precisions{Precision::kF32, Precision::kF64};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t iterations = 10;
  std::size_t batch = 4;
  std::size_t parallel_workers = 4;
  double parallel_rel_tolerance = 1e-12;
  double eta = 0.01;
  double weight_decay = 1e-3;
};

namespace detail {

template <std::floating_point T>
bool bitwise_equal(const Graph<T>& a, const Graph<T>& b) {
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto& x = a.parameters()[i].value;
    const auto& y = b.parameters()[i].value;
    if (x.shape() != y.shape()) return false;
    if (std::memcmp(x.data().data(), y.data().data(), x.size() * sizeof(T)) != 0) return false;
  }
  return true;
}

template <std::floating_point T>
double max_rel_error(const Graph<T>& reference, const Graph<T>& other) {
  double worst = 0.0;
  for (std::size_t i = 0; i < reference.parameters().size(); ++i) {
    const auto& x = reference.parameters()[i].value;
    const auto& y = other.parameters()[i].value;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double denom = std::max(std::abs(static_cast<double>(x[k])), 1e-300);
      worst = std::max(worst, std::abs(static_cast<double>(x[k]) - static_cast<double>(y[k])) / denom);
    }
  }
  return worst;
}

}  // namespace detail

template <std::floating_point T>
VerifyCell verify_cell(const ModelSpec& spec, OptimizerKind kind, std::uint64_t seed, const VerifyGrid& grid) {
  VerifyCell cell;
  cell.model = name(spec.kind);
  cell.optimizer = std::string(name(kind));
  cell.precision = std::is_same_v<T, float> ? Precision::kF32 : Precision::kF64;
  cell.seed = seed;

  OptimizerPolicy proto;
  proto.kind = kind;
  proto.eta = grid.eta;
  proto.weight_decay = grid.weight_decay;

  const Graph<T> initial = build_model<T>(spec, seed);
  const Tensor<T> input = make_input<T>(spec, grid.batch, seed);
  const std::size_t num_params = initial.parameters().size();

  struct Run {
    Schedule schedule;
    RunOptions options;
    Graph<T> graph;
    OptimizerPolicy policy;
  };
  std::vector<Run> runs{{Schedule::kBaseline, {}, initial, proto},
                        {Schedule::kForwardFusion, {}, initial, proto},
                        {Schedule::kBackwardFusion, {}, initial, proto},
                        {Schedule::kBackwardFusion, {true, grid.parallel_workers, true}, initial, proto}};

  cell.one_step_per_iteration = true;
  cell.traces_legal = true;
  for (auto& run : runs) {
    std::vector<std::size_t> steps(num_params, 0);
    auto tally = [&](const ScheduleTrace& trace, std::size_t iteration) {
      auto problems = validate_trace(trace, run.graph);
      if (!problems.empty()) {
        cell.traces_legal = false;
        cell.problems.push_back(std::string(name(run.schedule)) + " iteration " + std::to_string(iteration) +
                                ": " + problems.front());
      }
      for (std::size_t p = 0; p < num_params; ++p) {
        const std::size_t n = trace.count(TaskKind::kOptimizerStep, p);
        steps[p] += n;
        const std::size_t expected =
            (run.schedule == Schedule::kForwardFusion && iteration == 0) ? 0 : 1;
        if (n != expected) {
          cell.one_step_per_iteration = false;
          cell.problems.push_back(std::string(name(run.schedule)) + " iteration " + std::to_string(iteration) +
                                  ": parameter " + std::to_string(p) + " stepped " + std::to_string(n) + " times");
        }
      }
    };
    for (std::size_t it = 0; it < grid.iterations; ++it) {
      tally(run_schedule(run.schedule, run.graph, run.policy, input, run.options).trace, it);
    }
    if (run.schedule == Schedule::kForwardFusion) {
      ScheduleTrace flush;
      TraceRecorder rec(&flush);
      if (flush_pending_updates(run.graph, run.policy, &rec) != num_params) {
        cell.one_step_per_iteration = false;
        cell.problems.push_back("flush did not step every parameter");
      }
    }
  }

  cell.forward_fusion_exact = detail::bitwise_equal(runs[0].graph, runs[1].graph);
  cell.backward_fusion_exact = detail::bitwise_equal(runs[0].graph, runs[2].graph);
  cell.parallel_exact = detail::bitwise_equal(runs[0].graph, runs[3].graph);
  cell.parallel_max_rel_error = detail::max_rel_error(runs[0].graph, runs[3].graph);
  cell.parallel_within_tolerance = cell.parallel_max_rel_error <= grid.parallel_rel_tolerance;
  if (!cell.forward_fusion_exact) cell.problems.push_back("forward-fusion trajectory differs from baseline");
  if (!cell.backward_fusion_exact) cell.problems.push_back("backward-fusion trajectory differs from baseline");
  if (!cell.parallel_within_tolerance) cell.problems.push_back("parallel backward-fusion outside tolerance");
  return cell;
}

inline std::vector<VerifyCell> run_verification(const VerifyGrid& grid = {}) {
  std::vector<VerifyCell> cells;
  for (const auto& spec : grid.models) {
    for (auto kind : grid.optimizers) {
      for (auto precision : grid.precisions) {
        for (auto seed : grid.seeds) {
          cells.push_back(precision == Precision::kF32 ? verify_cell<float>(spec, kind, seed, grid)
                                                       : verify_cell<double>(spec, kind, seed, grid));
        }
      }
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------

struct BenchResult {
  int exit_code = 0;
  std::vector<std::string> files;
};

namespace detail {

inline std::string sibling_path(const std::string& path, const std::string& suffix) {
  std::filesystem::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix + p.extension().string())).string();
}

inline void write_text_file(const std::string& path, const std::string& text, BenchResult& result) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
  result.files.push_back(path);
}

template <std::floating_point T>
BenchResult run_bench_typed(const BenchConfig& config, std::ostream& log) {
  BenchResult result;
  switch (config.mode) {
    case BenchMode::kTime: {
      const std::size_t batch = config.batches.front();
      const auto base = measure_schedule<T>(config, Schedule::kBaseline, batch);
      const auto stats = measure_schedule<T>(config, config.schedule, batch);
      std::ostringstream oss;
      oss << "schedule=" << name(config.schedule) << "\nbatch=" << batch << '\n';
      if (!stats) {
        oss << "status=skip\nreason=GlobalInfoRequired\n";
      } else {
        oss << "forward_ms.mean=" << format_double(stats->mean.forward_ms) << '\n'
            << "backward_ms.mean=" << format_double(stats->mean.backward_ms) << '\n'
            << "optimizer_ms.mean=" << format_double(stats->mean.optimizer_ms) << '\n'
            << "total_ms.mean=" << format_double(stats->mean_total_ms) << '\n'
            << "total_ms.median=" << format_double(stats->median_total_ms) << '\n'
            << "total_ms.min=" << format_double(stats->min_total_ms) << '\n'
            << "baseline_total_ms.mean=" << format_double(base->mean_total_ms) << '\n'
            << "speedup=" << format_double(base->mean_total_ms / stats->mean_total_ms) << '\n';
      }
      log << oss.str();
      if (!config.out.empty()) write_text_file(config.out, oss.str(), result);
      break;
    }
    case BenchMode::kTrace: {
      Graph<T> graph = build_model<T>(config.model, config.seed);
      const Tensor<T> input = make_input<T>(config.model, config.batches.front(), config.seed);
      OptimizerPolicy policy = config.policy;
      RunOptions options{true, config.workers, config.workers > 1};
      // Two iterations so forward-fusion shows its fused steps.
      run_schedule(config.schedule, graph, policy, input, options);
      const StepReport report = run_schedule(config.schedule, graph, policy, input, options);
      const std::size_t capacity =
          config.cache_capacity ? config.cache_capacity : layer_region_set_size(config.policy);
      std::ostringstream summary;
      summary << "schedule=" << name(config.schedule) << "\ncache.capacity=" << capacity
              << "\ndepth=" << critical_path_depth(report.trace) << '\n';
      write_report(summary, simulate_cache(report.trace, {capacity}));
      log << summary.str();
      if (config.out.empty()) {
        log << to_text(report.trace);
      } else {
        write_text_file(config.out, to_text(report.trace), result);
        write_text_file(sibling_path(config.out, "_cache"), summary.str(), result);
      }
      break;
    }
    case BenchMode::kVerify:
      break;  // precision-independent, handled by run_bench
    case BenchMode::kBreakdown: {
      std::ostringstream oss;
      write_breakdown(oss, run_breakdown<T>(config));
      log << oss.str();
      if (!config.out.empty()) write_text_file(config.out, oss.str(), result);
      break;
    }
    case BenchMode::kSweep: {
      const auto points = run_sweep<T>(config);
      std::ostringstream speedups, saved;
      write_csv(speedups, speedup_rows(points));
      write_csv(saved, saved_time_rows(points));
      log << speedups.str();
      if (!config.out.empty()) {
        emit_csv(speedup_rows(points), config.out);
        result.files.push_back(config.out);
        const std::string saved_path = sibling_path(config.out, "_saved_time");
        emit_csv(saved_time_rows(points), saved_path);
        result.files.push_back(saved_path);
      }
      break;
    }
    case BenchMode::kCompare: {
      const auto rows = compare_optimizers<T>(config);
      std::ostringstream oss;
      oss << "optimizer\tratio\tforward-fusion\tbackward-fusion\n";
      std::vector<double> ratios, bf;
      for (const auto& r : rows) {
        auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("skip"); };
        oss << r.label << '\t' << format_double(r.ratio) << '\t' << cell(r.forward_fusion) << '\t'
            << cell(r.backward_fusion) << '\n';
        if (r.backward_fusion) {
          ratios.push_back(r.ratio);
          bf.push_back(*r.backward_fusion);
        }
      }
      log << oss.str();
      if (ratios.size() >= 2) log << "spearman(ratio, backward-fusion speedup)=" << format_double(spearman(ratios, bf)) << '\n';
      if (!config.out.empty()) write_text_file(config.out, oss.str(), result);
      break;
    }
  }
  return result;
}

}  // namespace detail

// Runs one harness mode. Verification failures give a nonzero exit code;
// configuration and I/O problems throw.
inline BenchResult run_bench(const BenchConfig& config, std::ostream& log) {
  config.validate();
  if (config.mode == BenchMode::kVerify) {
    BenchResult result;
    const auto cells = run_verification();
    std::size_t failed = 0;
    std::ostringstream oss;
    for (const auto& c : cells) {
      if (c.passed()) continue;
      ++failed;
      oss << "FAIL " << c.model << ' ' << c.optimizer << ' ' << (c.precision == Precision::kF32 ? "f32" : "f64")
          << " seed=" << c.seed << ": " << (c.problems.empty() ? "?" : c.problems.front()) << '\n';
    }
    oss << "cells=" << cells.size() << "\nfailed=" << failed << '\n';
    log << oss.str();
    if (!config.out.empty()) detail::write_text_file(config.out, oss.str(), result);
    result.exit_code = failed == 0 ? 0 : 1;
    return result;
  }
  return config.precision == Precision::kF32 ? detail::run_bench_typed<float>(config, log)
                                             : detail::run_bench_typed<double>(config, log);
}

}  // namespace optfuse
