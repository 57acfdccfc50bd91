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
#include <array>
#include <list>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "optfuse/errors.hpp"
#include "optfuse/trace.hpp"

namespace optfuse {

// Fully associative LRU cache measured in whole-tensor slots.
struct CacheConfig {
  std::size_t capacity = 1;
  // When false, activation transactions bypass the cache entirely.
  bool activations = true;
};

struct CacheReport {
  std::array<std::size_t, kNumRegions> hits{};
  std::array<std::size_t, kNumRegions> misses{};

  std::size_t hit_count(Region r) const { return hits[static_cast<std::size_t>(r)]; }
  std::size_t miss_count(Region r) const { return misses[static_cast<std::size_t>(r)]; }
  std::size_t transactions(Region r) const { return hit_count(r) + miss_count(r); }

  std::size_t total_misses() const {
    std::size_t n = 0;
    for (auto m : misses) n += m;
    return n;
  }
  std::size_t total_hits() const {
    std::size_t n = 0;
    for (auto h : hits) n += h;
    return n;
  }
};

// Replays every memory transaction (reads and writes alike touch the slot;
// a write to an absent region allocates it and counts as a miss).
inline CacheReport simulate_cache(const ScheduleTrace& trace, const CacheConfig& config) {
  if (config.capacity == 0) throw ConfigError("cache capacity must be at least 1");
  using Key = std::pair<Region, std::size_t>;
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      return std::hash<std::size_t>{}(k.second * kNumRegions + static_cast<std::size_t>(k.first));
    }
  };

  CacheReport report;
  std::list<Key> lru;  // front = most recent
  std::unordered_map<Key, std::list<Key>::iterator, KeyHash> where;
  for (const auto& m : trace.mems) {
    if (!config.activations && m.region == Region::kActivation) continue;
    const Key key{m.region, m.id};
    const auto cls = static_cast<std::size_t>(m.region);
    auto it = where.find(key);
    if (it != where.end()) {
      ++report.hits[cls];
      lru.splice(lru.begin(), lru, it->second);
      continue;
    }
    ++report.misses[cls];
    if (lru.size() == config.capacity) {
      where.erase(lru.back());
      lru.pop_back();
    }
    lru.push_front(key);
    where[key] = lru.begin();
  }
  return report;
}

inline void write_report(std::ostream& os, const CacheReport& report) {
  for (auto r : {Region::kParameter, Region::kGradient, Region::kHistory, Region::kActivation}) {
    os << name(r) << ".hits=" << report.hit_count(r) << '\n';
    os << name(r) << ".misses=" << report.miss_count(r) << '\n';
  }
  os << "total.misses=" << report.total_misses() << '\n';
}

inline std::string to_text(const CacheReport& report) {
  std::ostringstream oss;
  write_report(oss, report);
  return oss.str();
}

inline std::size_t transaction_count(const ScheduleTrace& trace, Region region) {
  return static_cast<std::size_t>(std::count_if(trace.mems.begin(), trace.mems.end(),
                                                [&](const MemRecord& m) { return m.region == region; }));
}

inline std::size_t transaction_count(const ScheduleTrace& trace, Region region, Access access) {
  return static_cast<std::size_t>(std::count_if(trace.mems.begin(), trace.mems.end(), [&](const MemRecord& m) {
    return m.region == region && m.access == access;
  }));
}

// Number of distinct tensor regions the trace touches.
inline std::size_t distinct_regions(const ScheduleTrace& trace) {
  std::set<std::pair<Region, std::size_t>> seen;
  for (const auto& m : trace.mems) seen.emplace(m.region, m.id);
  return seen.size();
}

// Longest dependency chain, counted in tasks. Dependencies are expected to
// point at earlier records; anything else is ignored.
inline std::size_t critical_path_depth(const ScheduleTrace& trace) {
  std::vector<std::size_t> depth(trace.tasks.size(), 1);
  std::size_t best = 0;
  for (std::size_t i = 0; i < trace.tasks.size(); ++i) {
    for (auto d : trace.tasks[i].deps) {
      if (d < i) depth[i] = std::max(depth[i], depth[d] + 1);
    }
    best = std::max(best, depth[i]);
  }
  return best;
}

// Analytical throughput gain of a fused schedule:
//   s = (b t_grad + t_opt) / (b t_grad + t_opt - t_saved)
// with t_grad the forward+backward time per sample, t_opt the optimizer time
// and t_saved the time the fusion removes.
inline double predict_speedup(double batch, double t_grad, double t_opt, double t_saved) {
  if (!(batch > 0.0)) throw DomainError("mini-batch size must be positive");
  if (!(t_grad >= 0.0) || !(t_opt >= 0.0)) throw DomainError("stage times must be non-negative");
  if (!(t_saved >= 0.0)) throw DomainError("saved time must be non-negative");
  const double total = batch * t_grad + t_opt;
  if (!(t_saved < total)) throw DomainError("saved time must be smaller than the iteration time");
  return total / (total - t_saved);
}

}  // namespace optfuse
