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

#include <charconv>
#include <cstddef>
#include <fstream>
#include <istream>
#include <limits>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "optfuse/errors.hpp"

namespace optfuse {

enum class TaskKind { kForwardNode, kBackwardNode, kOptimizerStep, kFlush, kClipBarrier };

// Memory region classes. Each (class, owner id) pair names one whole tensor.
// Owner ids: parameter/gradient/history use the parameter id; activation uses
// the value id, where 0 is the graph input and k + 1 is the output of node k.
enum class Region { kParameter, kGradient, kHistory, kActivation };

enum class Access { kRead, kWrite };

inline constexpr std::size_t kNumRegions = 4;

inline std::string_view name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kForwardNode: return "forward-node";
    case TaskKind::kBackwardNode: return "backward-node";
    case TaskKind::kOptimizerStep: return "optimizer-step";
    case TaskKind::kFlush: return "flush";
    case TaskKind::kClipBarrier: return "clip-barrier";
  }
  return "?";
}

inline std::string_view name(Region region) {
  switch (region) {
    case Region::kParameter: return "parameter";
    case Region::kGradient: return "gradient";
    case Region::kHistory: return "history";
    case Region::kActivation: return "activation";
  }
  return "?";
}

inline std::optional<TaskKind> parse_task_kind(std::string_view s) {
  for (auto k : {TaskKind::kForwardNode, TaskKind::kBackwardNode, TaskKind::kOptimizerStep,
                 TaskKind::kFlush, TaskKind::kClipBarrier}) {
    if (name(k) == s) return k;
  }
  return std::nullopt;
}

inline std::optional<Region> parse_region(std::string_view s) {
  for (auto r : {Region::kParameter, Region::kGradient, Region::kHistory, Region::kActivation}) {
    if (name(r) == s) return r;
  }
  return std::nullopt;
}

struct TaskRecord {
  TaskKind kind;
  std::size_t id;                  // node id, or parameter id for optimizer steps
  std::vector<std::size_t> deps;   // indices of earlier records in ScheduleTrace::tasks
  std::size_t mem_begin = 0;       // size of the memory stream when the task started

  friend bool operator==(const TaskRecord&, const TaskRecord&) = default;
};

struct MemRecord {
  Region region;
  std::size_t id;
  Access access;
  std::size_t task;  // index of the issuing task

  friend bool operator==(const MemRecord&, const MemRecord&) = default;
};

// Ordered record of one iteration (or several, if appended): the task DAG as
// executed plus the memory transactions each task issued, in issue order.
struct ScheduleTrace {
  std::vector<TaskRecord> tasks;
  std::vector<MemRecord> mems;

  // Concatenates `other` after this trace, rebasing its task indices.
  void append(const ScheduleTrace& other) {
    const std::size_t task_base = tasks.size();
    const std::size_t mem_base = mems.size();
    for (auto t : other.tasks) {
      for (auto& d : t.deps) d += task_base;
      t.mem_begin += mem_base;
      tasks.push_back(std::move(t));
    }
    for (auto m : other.mems) {
      m.task += task_base;
      mems.push_back(m);
    }
  }

  std::size_t count(TaskKind kind) const {
    std::size_t n = 0;
    for (const auto& t : tasks) n += t.kind == kind;
    return n;
  }

  std::size_t count(TaskKind kind, std::size_t id) const {
    std::size_t n = 0;
    for (const auto& t : tasks) n += t.kind == kind && t.id == id;
    return n;
  }

  // Index of the first task of the given kind and id, if any.
  std::optional<std::size_t> find(TaskKind kind, std::size_t id) const {
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i].kind == kind && tasks[i].id == id) return i;
    }
    return std::nullopt;
  }

  friend bool operator==(const ScheduleTrace&, const ScheduleTrace&) = default;
};

// Serialized append channel. A null recorder (default) drops everything, so
// untraced benchmark runs pay only a branch per record.
class TraceRecorder {
 public:
  static constexpr std::size_t kNoTask = std::numeric_limits<std::size_t>::max();

  TraceRecorder() = default;
  explicit TraceRecorder(ScheduleTrace* trace) : trace_(trace) {}

  bool enabled() const { return trace_ != nullptr; }

  std::size_t begin_task(TaskKind kind, std::size_t id, std::vector<std::size_t> deps = {}) {
    if (!trace_) return kNoTask;
    std::lock_guard lock(mutex_);
    trace_->tasks.push_back({kind, id, std::move(deps), trace_->mems.size()});
    return trace_->tasks.size() - 1;
  }

  void mem(std::size_t task, Region region, std::size_t id, Access access) {
    if (!trace_) return;
    std::lock_guard lock(mutex_);
    trace_->mems.push_back({region, id, access, task});
  }

 private:
  ScheduleTrace* trace_ = nullptr;
  std::mutex mutex_;
};

// Handle a running task uses to report its memory transactions.
struct TraceSink {
  TraceRecorder* recorder = nullptr;
  std::size_t task = TraceRecorder::kNoTask;

  void read(Region region, std::size_t id) const {
    if (recorder) recorder->mem(task, region, id, Access::kRead);
  }
  void write(Region region, std::size_t id) const {
    if (recorder) recorder->mem(task, region, id, Access::kWrite);
  }
};

// Line-delimited text form:
//   task <kind> <id> deps=<i,j,...>
//   mem <class> <id> <R|W>
// deps are 0-based positions among the task lines. Memory lines belong to the
// closest preceding task line.
inline void write_trace(std::ostream& os, const ScheduleTrace& trace) {
  std::size_t m = 0;
  auto flush_mems = [&](std::size_t upto) {
    for (; m < upto && m < trace.mems.size(); ++m) {
      const auto& r = trace.mems[m];
      os << "mem " << name(r.region) << ' ' << r.id << ' '
         << (r.access == Access::kRead ? 'R' : 'W') << '\n';
    }
  };
  for (const auto& t : trace.tasks) {
    flush_mems(t.mem_begin);
    os << "task " << name(t.kind) << ' ' << t.id << " deps=";
    for (std::size_t i = 0; i < t.deps.size(); ++i) os << (i ? "," : "") << t.deps[i];
    os << '\n';
  }
  flush_mems(trace.mems.size());
}

inline std::string to_text(const ScheduleTrace& trace) {
  std::ostringstream oss;
  write_trace(oss, trace);
  return oss.str();
}

namespace detail {

inline std::size_t parse_index(std::string_view s, std::size_t line_no) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw IoError("trace line " + std::to_string(line_no) + ": bad integer '" + std::string(s) + "'");
  }
  return value;
}

}  // namespace detail

inline ScheduleTrace read_trace(std::istream& is) {
  ScheduleTrace trace;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag, a, b, c;
    ls >> tag >> a >> b >> c;
    auto fail = [&](const std::string& what) {
      return IoError("trace line " + std::to_string(line_no) + ": " + what);
    };
    if (tag == "task") {
      auto kind = parse_task_kind(a);
      if (!kind) throw fail("unknown task kind '" + a + "'");
      if (c.rfind("deps=", 0) != 0) throw fail("missing deps=");
      TaskRecord rec{*kind, detail::parse_index(b, line_no), {}, trace.mems.size()};
      std::string_view list = std::string_view(c).substr(5);
      while (!list.empty()) {
        auto comma = list.find(',');
        rec.deps.push_back(detail::parse_index(list.substr(0, comma), line_no));
        if (comma == std::string_view::npos) break;
        list.remove_prefix(comma + 1);
      }
      trace.tasks.push_back(std::move(rec));
    } else if (tag == "mem") {
      auto region = parse_region(a);
      if (!region) throw fail("unknown region class '" + a + "'");
      if (c != "R" && c != "W") throw fail("access must be R or W");
      if (trace.tasks.empty()) throw fail("mem record before any task");
      trace.mems.push_back({*region, detail::parse_index(b, line_no),
                            c == "R" ? Access::kRead : Access::kWrite, trace.tasks.size() - 1});
    } else {
      throw fail("unknown record '" + tag + "'");
    }
  }
  return trace;
}

inline ScheduleTrace from_text(const std::string& text) {
  std::istringstream iss(text);
  return read_trace(iss);
}

inline ScheduleTrace read_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace '" + path + "'");
  return read_trace(in);
}

}  // namespace optfuse
