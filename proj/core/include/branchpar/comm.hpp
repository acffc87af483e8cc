// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0
//
// In-process simulated multi-rank world. Each rank runs on its own thread
// and talks to the others only through blocking collectives on static
// groups. Collectives reduce in ascending rank order and are logged to a
// trace whose order is derived from logical clocks, so both the returned
// tensors and the trace are independent of thread scheduling.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "branchpar/tensor.hpp"

namespace branchpar {

enum class CollectiveKind { broadcast, allreduce, allgather };
enum class Phase { fwd, bwd, param };

std::string_view to_string(CollectiveKind k);
std::string_view to_string(Phase p);

struct TraceRecord {
  std::int64_t seq = 0;
  CollectiveKind kind = CollectiveKind::broadcast;
  int group = 0;
  int src = -1;  // global source rank for broadcasts, -1 otherwise
  std::int64_t elements = 0;
  std::int64_t bytes = 0;
  Phase phase = Phase::fwd;
};

struct CommTrace {
  std::vector<TraceRecord> records;

  std::int64_t total_bytes() const;
  /// CSV with header seq,kind,group,src,elements,bytes,phase.
  void write_csv(std::ostream& os) const;
  std::string to_csv() const;
};

class Communicator;

/// A set of ranks plus its static communication groups. Group 0 always
/// spans every rank; further groups are given at construction.
class World {
 public:
  explicit World(int n_ranks, std::vector<std::vector<int>> groups = {}, Precision precision = Precision::f64);
  ~World();
  World(const World&) = delete;
  World& operator=(const World&) = delete;

  int size() const;
  int group_count() const;
  const std::vector<int>& group(int id) const;
  Precision precision() const;

  /// Snapshot of the trace in sequence order.
  CommTrace trace() const;

  struct State;

 private:
  friend class Communicator;
  friend void run_ranks(World& world, const std::function<void(Communicator&)>& rank_main);
  std::unique_ptr<State> state_;
};

/// One rank's handle on the world.
class Communicator {
 public:
  int rank() const { return rank_; }
  int world_size() const;
  const std::vector<int>& members(int group) const;
  /// Position of this rank within `group`, or -1 if it is not a member.
  int index_in(int group) const;

  /// Every member receives src's tensor. `src` is a global rank.
  Tensor broadcast(int group, int src, const Tensor& x, Phase phase = Phase::fwd);
  /// Element-wise sum, folded left to right in ascending rank order.
  Tensor allreduce_sum(int group, const Tensor& x, Phase phase = Phase::fwd);
  /// Rank-order concatenation of every member's shard along `axis`.
  Tensor allgather(int group, const Tensor& shard, std::int64_t axis, Phase phase = Phase::fwd);

 private:
  friend void run_ranks(World& world, const std::function<void(Communicator&)>& rank_main);
  Communicator(World::State* state, int rank) : state_(state), rank_(rank) {}

  World::State* state_;
  int rank_;
};

/// Runs `rank_main` once per rank on concurrent threads and joins them. If
/// any rank throws, the others are released from pending collectives and a
/// WorldError naming the lowest failing rank is raised. The number of ranks
/// doing work at the same time is capped by BRANCHPAR_THREADS when set.
void run_ranks(World& world, const std::function<void(Communicator&)>& rank_main);

template <class F>
auto spawn_world(World& world, F rank_main) {
  using R = std::invoke_result_t<F&, Communicator&>;
  std::vector<std::optional<R>> slots(static_cast<std::size_t>(world.size()));
  run_ranks(world, [&](Communicator& comm) { slots[static_cast<std::size_t>(comm.rank())] = rank_main(comm); });
  std::vector<R> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

template <class F>
auto spawn_world(int n_ranks, F rank_main) {
  World world(n_ranks);
  return spawn_world(world, std::move(rank_main));
}

/// Rank threads allowed to work at once: the cap set by set_thread_cap, else
/// BRANCHPAR_THREADS, else `fallback`. Never more than `fallback`.
int thread_cap_from_env(int fallback);

/// Process-wide cap overriding BRANCHPAR_THREADS; 0 clears it.
void set_thread_cap(int cap);

}  // namespace branchpar
