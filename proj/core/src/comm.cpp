// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchpar/comm.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <map>
#include <mutex>
#include <semaphore>
#include <sstream>
#include <thread>

#include "branchpar/errors.hpp"
#include "branchpar/ops.hpp"

namespace branchpar {

std::string_view to_string(CollectiveKind k) {
  switch (k) {
    case CollectiveKind::broadcast:
      return "broadcast";
    case CollectiveKind::allreduce:
      return "allreduce";
    case CollectiveKind::allgather:
      return "allgather";
  }
  return "?";
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::fwd:
      return "fwd";
    case Phase::bwd:
      return "bwd";
    case Phase::param:
      return "param";
  }
  return "?";
}

std::int64_t CommTrace::total_bytes() const {
  std::int64_t n = 0;
  for (const auto& r : records) n += r.bytes;
  return n;
}

void CommTrace::write_csv(std::ostream& os) const {
  os << "seq,kind,group,src,elements,bytes,phase\n";
  for (const auto& r : records) {
    os << r.seq << ',' << to_string(r.kind) << ',' << r.group << ',' << r.src << ',' << r.elements << ','
       << r.bytes << ',' << to_string(r.phase) << '\n';
  }
}

std::string CommTrace::to_csv() const {
  std::ostringstream os;
  write_csv(os);
  return os.str();
}

namespace {
std::atomic<int> g_thread_cap{0};
}  // namespace

void set_thread_cap(int cap) { g_thread_cap.store(std::max(cap, 0)); }

int thread_cap_from_env(int fallback) {
  if (const int cap = g_thread_cap.load(); cap > 0) return std::min(cap, fallback);
  const char* env = std::getenv("BRANCHPAR_THREADS");
  if (!env || !*env) return fallback;
  char* end = nullptr;
  long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) return fallback;
  return static_cast<int>(std::min<long>(v, fallback));
}

namespace {

// Thrown inside ranks that were released because another rank failed.
struct Aborted {};

struct CallState {
  CollectiveKind kind;
  int src;
  std::int64_t axis;
  Phase phase;
  std::vector<Tensor> inputs;
  std::vector<bool> arrived;
  int n_arrived = 0;
  int n_departed = 0;
  bool done = false;
  std::string error;
  Tensor result;
};

struct TimedRecord {
  std::int64_t clock;
  int group;
  std::int64_t call;
  TraceRecord record;
};

}  // namespace

struct World::State {
  int n_ranks;
  std::vector<std::vector<int>> groups;
  std::vector<std::vector<int>> index_in_group;  // [group][rank] -> member index or -1
  Precision precision;

  std::mutex mu;
  std::condition_variable cv;
  std::map<std::pair<int, std::int64_t>, CallState> calls;
  std::vector<std::vector<std::int64_t>> call_counter;  // [rank][group]
  std::vector<std::int64_t> clock;                      // Lamport clock per rank
  std::vector<bool> exited;
  bool aborted = false;
  std::vector<TimedRecord> trace;

  std::unique_ptr<std::counting_semaphore<>> slots;
};

World::World(int n_ranks, std::vector<std::vector<int>> groups, Precision precision)
    : state_(std::make_unique<State>()) {
  if (n_ranks < 1) throw ConfigError("world needs at least one rank, got " + std::to_string(n_ranks));
  auto& st = *state_;
  st.n_ranks = n_ranks;
  st.precision = precision;
  std::vector<int> all(static_cast<std::size_t>(n_ranks));
  for (int i = 0; i < n_ranks; ++i) all[static_cast<std::size_t>(i)] = i;
  st.groups.push_back(all);
  for (auto& g : groups) {
    if (g.empty()) throw ConfigError("communication groups must not be empty");
    std::sort(g.begin(), g.end());
    if (std::adjacent_find(g.begin(), g.end()) != g.end()) throw ConfigError("duplicate rank in group");
    for (int r : g) {
      if (r < 0 || r >= n_ranks) throw ConfigError("group member " + std::to_string(r) + " is not a rank");
    }
    st.groups.push_back(std::move(g));
  }
  for (const auto& g : st.groups) {
    std::vector<int> idx(static_cast<std::size_t>(n_ranks), -1);
    for (std::size_t i = 0; i < g.size(); ++i) idx[static_cast<std::size_t>(g[i])] = static_cast<int>(i);
    st.index_in_group.push_back(std::move(idx));
  }
}

World::~World() = default;

int World::size() const { return state_->n_ranks; }
int World::group_count() const { return static_cast<int>(state_->groups.size()); }

const std::vector<int>& World::group(int id) const {
  if (id < 0 || id >= group_count()) throw ConfigError("unknown group " + std::to_string(id));
  return state_->groups[static_cast<std::size_t>(id)];
}

Precision World::precision() const { return state_->precision; }

CommTrace World::trace() const {
  std::vector<TimedRecord> timed;
  {
    std::lock_guard lock(state_->mu);
    timed = state_->trace;
  }
  std::sort(timed.begin(), timed.end(), [](const TimedRecord& a, const TimedRecord& b) {
    return std::tie(a.clock, a.group, a.call) < std::tie(b.clock, b.group, b.call);
  });
  CommTrace out;
  std::int64_t seq = 0;
  for (auto& t : timed) {
    t.record.seq = seq++;
    out.records.push_back(t.record);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string describe(CollectiveKind kind, int group) {
  return std::string(to_string(kind)) + " on group " + std::to_string(group);
}

bool shapes_gatherable(const Shape& a, const Shape& b, std::int64_t axis) {
  if (a.size() != b.size()) return false;
  for (std::size_t d = 0; d < a.size(); ++d) {
    if (static_cast<std::int64_t>(d) != axis && a[d] != b[d]) return false;
  }
  return true;
}

// Validates a new arrival against the call's first arrival; returns an
// error message or empty.
std::string check_arrival(const CallState& call, CollectiveKind kind, int src, std::int64_t axis, Phase phase,
                          const Tensor& x, int group) {
  if (call.kind != kind) {
    return "members disagree on the collective kind (" + std::string(to_string(call.kind)) + " vs " +
           std::string(to_string(kind)) + ") on group " + std::to_string(group);
  }
  if (call.src != src) return "members disagree on the broadcast source on group " + std::to_string(group);
  if (call.axis != axis) return "members disagree on the gather axis on group " + std::to_string(group);
  if (call.phase != phase) return "members disagree on the phase tag on group " + std::to_string(group);
  for (const auto& other : call.inputs) {
    if (!other.defined()) continue;
    bool ok = kind == CollectiveKind::allgather ? shapes_gatherable(other.shape(), x.shape(), axis)
                                                : other.shape() == x.shape();
    if (!ok) {
      return describe(kind, group) + ": incompatible shapes " + to_string(other.shape()) + " and " +
             to_string(x.shape());
    }
    break;
  }
  return {};
}

Tensor round_to(Precision p, Tensor t) {
  if (p != Precision::f32) return t;
  std::vector<double> v(t.data().begin(), t.data().end());
  for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
  return Tensor(t.shape(), std::move(v));
}

}  // namespace

int Communicator::world_size() const { return state_->n_ranks; }

const std::vector<int>& Communicator::members(int group) const {
  if (group < 0 || group >= static_cast<int>(state_->groups.size())) {
    throw ConfigError("unknown group " + std::to_string(group));
  }
  return state_->groups[static_cast<std::size_t>(group)];
}

int Communicator::index_in(int group) const {
  members(group);
  return state_->index_in_group[static_cast<std::size_t>(group)][static_cast<std::size_t>(rank_)];
}

namespace {

Tensor run_collective(World::State& st, int rank, int group, CollectiveKind kind, int src, std::int64_t axis,
                      Phase phase, const Tensor& x) {
  if (group < 0 || group >= static_cast<int>(st.groups.size())) {
    throw ConfigError("unknown group " + std::to_string(group));
  }
  const auto& members = st.groups[static_cast<std::size_t>(group)];
  const int me = st.index_in_group[static_cast<std::size_t>(group)][static_cast<std::size_t>(rank)];
  if (me < 0) throw ConfigError("rank " + std::to_string(rank) + " is not a member of group " + std::to_string(group));
  if (!x.defined()) throw ContractError(describe(kind, group) + ": undefined tensor");
  if (kind == CollectiveKind::broadcast &&
      (src < 0 || src >= st.n_ranks || st.index_in_group[static_cast<std::size_t>(group)][static_cast<std::size_t>(src)] < 0)) {
    throw ConfigError("broadcast source " + std::to_string(src) + " is not in group " + std::to_string(group));
  }
  if (kind == CollectiveKind::allgather && (axis < 0 || axis >= x.rank())) {
    throw DimensionError("allgather axis " + std::to_string(axis) + " out of range for " + to_string(x.shape()));
  }
  // A one-member group has nothing to exchange.
  if (members.size() == 1) return x.detach();

  const int n = static_cast<int>(members.size());
  std::unique_lock lock(st.mu);
  if (st.aborted) throw Aborted{};
  const std::int64_t call_id = st.call_counter[static_cast<std::size_t>(rank)][static_cast<std::size_t>(group)]++;
  auto key = std::make_pair(group, call_id);
  auto [it, fresh] = st.calls.try_emplace(key);
  CallState& call = it->second;
  if (fresh) {
    call.kind = kind;
    call.src = src;
    call.axis = axis;
    call.phase = phase;
    call.inputs.resize(static_cast<std::size_t>(n));
    call.arrived.assign(static_cast<std::size_t>(n), false);
  } else if (call.error.empty()) {
    call.error = check_arrival(call, kind, src, axis, phase, x, group);
  }
  call.inputs[static_cast<std::size_t>(me)] = x.detach();
  call.arrived[static_cast<std::size_t>(me)] = true;
  ++call.n_arrived;

  if (call.n_arrived == n) {
    if (call.error.empty()) {
      switch (kind) {
        case CollectiveKind::broadcast:
          call.result = call.inputs[static_cast<std::size_t>(
              st.index_in_group[static_cast<std::size_t>(group)][static_cast<std::size_t>(src)])];
          break;
        case CollectiveKind::allreduce: {
          Tensor acc = call.inputs[0];
          for (int i = 1; i < n; ++i) {
            acc = round_to(st.precision, kernels::binary(ElementwiseKind::add, acc, call.inputs[static_cast<std::size_t>(i)]));
          }
          call.result = acc;
          break;
        }
        case CollectiveKind::allgather:
          call.result = kernels::concat(call.inputs, axis);
          break;
      }
      std::int64_t t = 0;
      for (int r : members) t = std::max(t, st.clock[static_cast<std::size_t>(r)]);
      ++t;
      for (int r : members) st.clock[static_cast<std::size_t>(r)] = t;
      TraceRecord rec;
      rec.kind = kind;
      rec.group = group;
      rec.src = kind == CollectiveKind::broadcast ? src : -1;
      rec.elements = call.result.numel();
      rec.bytes = rec.elements * element_width(st.precision);
      rec.phase = phase;
      st.trace.push_back({t, group, call_id, rec});
    }
    call.done = true;
    st.cv.notify_all();
  } else {
    auto missing_member_exited = [&] {
      for (int i = 0; i < n; ++i) {
        if (!call.arrived[static_cast<std::size_t>(i)] &&
            st.exited[static_cast<std::size_t>(members[static_cast<std::size_t>(i)])]) {
          return true;
        }
      }
      return false;
    };
    st.slots->release();
    st.cv.wait(lock, [&] { return call.done || st.aborted || missing_member_exited(); });
    if (!call.done) {
      lock.unlock();
      st.slots->acquire();
      if (st.aborted) throw Aborted{};
      throw CollectiveError(describe(kind, group) + ": a member exited without joining");
    }
    lock.unlock();
    st.slots->acquire();
    lock.lock();
  }

  std::string error = call.error;
  Tensor result = call.result;
  if (++call.n_departed == n) st.calls.erase(it);
  lock.unlock();
  if (!error.empty()) throw CollectiveError(error);
  return result;
}

}  // namespace

Tensor Communicator::broadcast(int group, int src, const Tensor& x, Phase phase) {
  return run_collective(*state_, rank_, group, CollectiveKind::broadcast, src, 0, phase, x);
}

Tensor Communicator::allreduce_sum(int group, const Tensor& x, Phase phase) {
  return run_collective(*state_, rank_, group, CollectiveKind::allreduce, -1, 0, phase, x);
}

Tensor Communicator::allgather(int group, const Tensor& shard, std::int64_t axis, Phase phase) {
  if (shard.defined() && axis < 0) axis += shard.rank();
  return run_collective(*state_, rank_, group, CollectiveKind::allgather, -1, axis, phase, shard);
}

void run_ranks(World& world, const std::function<void(Communicator&)>& rank_main) {
  auto& st = *world.state_;
  const int n = st.n_ranks;
  {
    std::lock_guard lock(st.mu);
    st.calls.clear();
    st.call_counter.assign(static_cast<std::size_t>(n),
                           std::vector<std::int64_t>(st.groups.size(), 0));
    st.clock.assign(static_cast<std::size_t>(n), 0);
    st.exited.assign(static_cast<std::size_t>(n), false);
    st.aborted = false;
    st.trace.clear();
  }
  st.slots = std::make_unique<std::counting_semaphore<>>(thread_cap_from_env(n));

  std::vector<std::string> failures(static_cast<std::size_t>(n));
  std::vector<bool> failed(static_cast<std::size_t>(n), false);
  // Execution context of the calling thread (precision, finite checks) is
  // inherited by every rank.
  const ExecMode mode = exec_mode();

  auto body = [&](int rank) {
    ScopedExecMode scoped(mode);
    st.slots->acquire();
    Communicator comm(&st, rank);
    try {
      rank_main(comm);
    } catch (const Aborted&) {
    } catch (const std::exception& e) {
      std::lock_guard lock(st.mu);
      failed[static_cast<std::size_t>(rank)] = true;
      failures[static_cast<std::size_t>(rank)] = e.what();
      st.aborted = true;
    } catch (...) {
      std::lock_guard lock(st.mu);
      failed[static_cast<std::size_t>(rank)] = true;
      failures[static_cast<std::size_t>(rank)] = "unknown exception";
      st.aborted = true;
    }
    {
      std::lock_guard lock(st.mu);
      st.exited[static_cast<std::size_t>(rank)] = true;
    }
    st.cv.notify_all();
    st.slots->release();
  };

  if (n == 1) {
    body(0);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) threads.emplace_back(body, r);
    for (auto& t : threads) t.join();
  }

  for (int r = 0; r < n; ++r) {
    if (failed[static_cast<std::size_t>(r)]) throw WorldError(r, failures[static_cast<std::size_t>(r)]);
  }
}

}  // namespace branchpar
