// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <chrono>
#include <random>
#include <sstream>
#include <thread>

#include "branchpar/comm.hpp"
#include "branchpar/errors.hpp"
#include "branchpar/ops.hpp"
#include "test_util.hpp"

namespace branchpar {
namespace {

using testing_util::random_tensor;

TEST(SpawnWorld, ReturnsPerRankResults) {
  EXPECT_EQ(spawn_world(1, [](Communicator&) { return 7; }), std::vector<int>{7});
  EXPECT_EQ(spawn_world(4, [](Communicator& c) { return c.rank(); }), (std::vector<int>{0, 1, 2, 3}));
  EXPECT_THROW(World(0), ConfigError);
}

TEST(SpawnWorld, FailingRankNamed) {
  try {
    spawn_world(3, [](Communicator& c) {
      if (c.rank() == 2) throw std::runtime_error("boom");
      return 0;
    });
    FAIL() << "expected WorldError";
  } catch (const WorldError& e) {
    EXPECT_EQ(e.rank(), 2);
    EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
  }
}

TEST(SpawnWorld, FailureReleasesPendingCollectives) {
  // Rank 0 waits in an allreduce that rank 1 never joins.
  try {
    spawn_world(2, [](Communicator& c) {
      if (c.rank() == 1) throw std::runtime_error("left early");
      return c.allreduce_sum(0, Tensor::ones({2})).item();
    });
    FAIL() << "expected WorldError";
  } catch (const WorldError& e) {
    EXPECT_EQ(e.rank(), 1);
  }
}

TEST(Broadcast, CopiesSourceAndTraces) {
  World world(2);
  const auto out = spawn_world(world, [](Communicator& c) {
    const Tensor mine = c.rank() == 0 ? Tensor::from({1, 2, 3}) : Tensor::zeros({3});
    return c.broadcast(0, 0, mine);
  });
  for (const auto& t : out) EXPECT_TRUE(bit_equal(t, Tensor::from({1, 2, 3})));
  const CommTrace trace = world.trace();
  ASSERT_EQ(trace.records.size(), 1u);
  EXPECT_EQ(trace.records[0].kind, CollectiveKind::broadcast);
  EXPECT_EQ(trace.records[0].src, 0);
  EXPECT_EQ(trace.records[0].elements, 3);
  EXPECT_EQ(trace.records[0].bytes, 3 * 8);
}

TEST(Broadcast, SingletonGroupIsIdentity) {
  World world(2, {{0}, {1}});
  const auto out = spawn_world(world, [](Communicator& c) {
    const int group = 1 + c.rank();
    return c.broadcast(group, c.rank(), Tensor::full({2}, c.rank() + 5.0));
  });
  EXPECT_EQ(out[0][0], 5.0);
  EXPECT_EQ(out[1][0], 6.0);
  EXPECT_TRUE(world.trace().records.empty());
}

TEST(Broadcast, Errors) {
  World world(2);
  EXPECT_THROW(spawn_world(world, [](Communicator& c) { return c.broadcast(0, 5, Tensor::ones({1})); }), WorldError);
  World shapes(2);
  EXPECT_THROW(spawn_world(shapes,
                           [](Communicator& c) {
                             return c.broadcast(0, 0, Tensor::ones({c.rank() == 0 ? 2 : 3}));
                           }),
               WorldError);
}

TEST(Allreduce, SumsInRankOrder) {
  const auto out = spawn_world(2, [](Communicator& c) { return c.allreduce_sum(0, Tensor::from({c.rank() + 1.0})); });
  EXPECT_EQ(out[0].item(), 3.0);
  EXPECT_EQ(out[1].item(), 3.0);

  const Tensor other = random_tensor({4}, 1);
  const auto zeros = spawn_world(2, [&](Communicator& c) {
    return c.allreduce_sum(0, c.rank() == 0 ? Tensor::zeros({4}) : other);
  });
  EXPECT_TRUE(bit_equal(zeros[0], other));
}

TEST(Allreduce, MatchesSerialLeftFold) {
  std::vector<Tensor> parts;
  for (int r = 0; r < 4; ++r) parts.push_back(scale(random_tensor({64}, 10 + r), std::pow(10.0, r)));
  std::vector<double> serial(64, 0.0);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    double acc = parts[0][static_cast<std::int64_t>(i)];
    for (int r = 1; r < 4; ++r) acc += parts[static_cast<std::size_t>(r)][static_cast<std::int64_t>(i)];
    serial[i] = acc;
  }
  const auto out = spawn_world(4, [&](Communicator& c) {
    return c.allreduce_sum(0, parts[static_cast<std::size_t>(c.rank())]);
  });
  for (const auto& t : out) EXPECT_TRUE(bit_equal(t, Tensor({64}, serial)));
}

TEST(Allreduce, ShapeDisagreementFails) {
  EXPECT_THROW(spawn_world(2, [](Communicator& c) { return c.allreduce_sum(0, Tensor::ones({c.rank() + 1})); }),
               WorldError);
}

TEST(Allgather, ConcatenatesInRankOrder) {
  World world(2);
  const auto out = spawn_world(world, [](Communicator& c) {
    return c.allgather(0, c.rank() == 0 ? Tensor::from({1, 2}) : Tensor::from({3, 4}), 0);
  });
  for (const auto& t : out) EXPECT_TRUE(bit_equal(t, Tensor::from({1, 2, 3, 4})));
  const auto rec = world.trace().records.at(0);
  EXPECT_EQ(rec.kind, CollectiveKind::allgather);
  EXPECT_EQ(rec.elements, 4);
  EXPECT_EQ(rec.bytes, 32);
}

TEST(Allgather, InnerAxisAndErrors) {
  const auto out = spawn_world(2, [](Communicator& c) {
    return c.allgather(0, Tensor::full({2, 1}, c.rank()), 1);
  });
  EXPECT_TRUE(bit_equal(out[0], Tensor::from({2, 2}, {0, 1, 0, 1})));
  EXPECT_THROW(spawn_world(2, [](Communicator& c) { return c.allgather(0, Tensor::ones({2, c.rank() + 1}), 0); }),
               WorldError);
  const auto single = spawn_world(1, [](Communicator& c) { return c.allgather(0, Tensor::from({9.0}), 0); });
  EXPECT_TRUE(bit_equal(single[0], Tensor::from({9.0})));
}

TEST(Trace, F32WorldUsesFourByteElements) {
  World world(2, {}, Precision::f32);
  spawn_world(world, [](Communicator& c) { return c.allreduce_sum(0, Tensor::ones({5}), Phase::bwd); });
  const auto rec = world.trace().records.at(0);
  EXPECT_EQ(rec.bytes, 20);
  EXPECT_EQ(rec.phase, Phase::bwd);
}

TEST(Trace, CsvHeaderAndRows) {
  World world(2);
  spawn_world(world, [](Communicator& c) {
    c.broadcast(0, 1, Tensor::ones({2}), Phase::fwd);
    return c.allreduce_sum(0, Tensor::ones({3}), Phase::param);
  });
  const std::string csv = world.trace().to_csv();
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "seq,kind,group,src,elements,bytes,phase");
  std::getline(in, line);
  EXPECT_EQ(line, "0,broadcast,0,1,2,16,fwd");
  std::getline(in, line);
  EXPECT_EQ(line, "1,allreduce,0,-1,3,24,param");
  EXPECT_EQ(world.trace().total_bytes(), 16 + 24);
}

TEST(Determinism, TraceIndependentOfRankTiming) {
  // Ranks run disjoint groups at randomized speeds; the trace must not change.
  auto run = [](std::uint64_t seed) {
    World world(4, {{0, 1}, {2, 3}});
    spawn_world(world, [seed](Communicator& c) {
      std::mt19937_64 rng(seed * 31 + static_cast<std::uint64_t>(c.rank()));
      const int group = c.rank() < 2 ? 1 : 2;
      Tensor x = Tensor::full({3}, c.rank());
      for (int i = 0; i < 6; ++i) {
        std::this_thread::sleep_for(std::chrono::microseconds(rng() % 300));
        x = i % 2 == 0 ? c.allreduce_sum(group, x) : c.broadcast(group, c.members(group)[1], x);
      }
      return c.allreduce_sum(0, x)[0];
    });
    return world.trace().to_csv();
  };
  const std::string first = run(1);
  for (std::uint64_t seed = 2; seed < 6; ++seed) EXPECT_EQ(run(seed), first);
}

TEST(Deadlock, RandomInterleavingsComplete) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto out = spawn_world(3, [seed](Communicator& c) {
      std::mt19937_64 rng(seed + static_cast<std::uint64_t>(c.rank()) * 1000);
      double acc = 0.0;
      for (int i = 0; i < 5; ++i) {
        if (rng() % 2 == 0) std::this_thread::yield();
        acc += c.allreduce_sum(0, Tensor::scalar(1.0)).item();
      }
      return acc;
    });
    for (double v : out) EXPECT_EQ(v, 15.0);
  }
}

TEST(ThreadCap, OverrideAndFallback) {
  set_thread_cap(1);
  EXPECT_EQ(thread_cap_from_env(4), 1);
  set_thread_cap(8);
  EXPECT_EQ(thread_cap_from_env(4), 4);
  set_thread_cap(0);
  // Work still completes with one active rank at a time.
  set_thread_cap(1);
  const auto out = spawn_world(4, [](Communicator& c) { return c.allreduce_sum(0, Tensor::scalar(c.rank())).item(); });
  set_thread_cap(0);
  for (double v : out) EXPECT_EQ(v, 6.0);
}

}  // namespace
}  // namespace branchpar
