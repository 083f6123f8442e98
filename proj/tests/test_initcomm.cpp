#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "o2proxy/errors.hpp"
#include "o2proxy/initcomm.hpp"

using namespace o2proxy;
using namespace o2proxy::initcomm;

// ---- topology -----------------------------------------------------------------

TEST(RankTopology, GroupsAndLeaders) {
  RankTopology topo{10, 4, {}};
  topo.validate();
  EXPECT_EQ(topo.n_groups(), 3u);
  EXPECT_EQ(topo.group_of(0), 0u);
  EXPECT_EQ(topo.group_of(7), 1u);
  EXPECT_EQ(topo.group_end(2), 10u);  // short tail group
  EXPECT_EQ(topo.leader_of(5), 4u);
  EXPECT_TRUE(topo.is_leader(8));
  EXPECT_FALSE(topo.is_leader(9));
}

TEST(RankTopology, ValidationRejectsBadShapes) {
  EXPECT_THROW((RankTopology{0, 4, {}}).validate(), InvalidSpec);
  EXPECT_THROW((RankTopology{4, 0, {}}).validate(), InvalidSpec);
  EXPECT_THROW((RankTopology{3, 2, {"aa", "bb"}}).validate(), InvalidSpec);
  EXPECT_THROW((RankTopology{2, 2, {"aa", "bbb"}}).validate(), InvalidSpec);
}

// ---- pack format ----------------------------------------------------------------

TEST(PackFormat, RoundTrips) {
  std::vector<std::uint8_t> pack;
  append_entry(pack, PackEntry{1, 2, {0xde, 0xad}});
  append_entry(pack, PackEntry{3, 0, {}});
  append_entry(pack, PackEntry{0, 3, {0x01}});
  auto entries = unpack_entries(pack, 4);
  ASSERT_EQ(entries.size(), 3u);
  EXPECT_EQ(entries[0].src, 1u);
  EXPECT_EQ(entries[0].dst, 2u);
  EXPECT_EQ(entries[0].payload, (std::vector<std::uint8_t>{0xde, 0xad}));
  EXPECT_TRUE(entries[1].payload.empty());
  EXPECT_EQ(entries[2].payload.size(), 1u);
}

TEST(PackFormat, MalformedHeadersRejected) {
  std::vector<std::uint8_t> pack;
  append_entry(pack, PackEntry{1, 2, {0xaa, 0xbb, 0xcc}});

  auto truncated = pack;
  truncated.resize(kPackHeaderBytes - 4);
  EXPECT_THROW(unpack_entries(truncated, 4), MalformedPackHeader);

  auto overrun = pack;
  overrun[16] = 0xff;  // length low byte, now far beyond the buffer
  EXPECT_THROW(unpack_entries(overrun, 4), MalformedPackHeader);

  auto bad_rank = pack;
  bad_rank[0] = 9;  // src = 9 with n_ranks = 4
  EXPECT_THROW(unpack_entries(bad_rank, 4), MalformedPackHeader);
}

// ---- all-to-all -------------------------------------------------------------------

TEST(FlatAlltoallw, AllZeroPlanSendsNothing) {
  RankTopology topo{4, 2, {}};
  auto plan = AlltoAllwPlan::uniform(4, 0);
  CommStats stats;
  auto delivery = flat_alltoallw(topo, plan, stats);
  EXPECT_EQ(stats.messages, 0u);
  for (const auto& slot : delivery.slots) EXPECT_TRUE(slot.empty());
}

TEST(FlatAlltoallw, UniformPlanIsAllPairs) {
  RankTopology topo{4, 2, {}};
  auto plan = AlltoAllwPlan::uniform(4, 8);
  CommStats stats;
  auto delivery = flat_alltoallw(topo, plan, stats);
  EXPECT_EQ(stats.messages, 12u);  // N(N-1)
  for (std::uint64_t dst = 0; dst < 4; ++dst)
    for (std::uint64_t src = 0; src < 4; ++src) {
      EXPECT_EQ(delivery.at(dst, src).size(), 8u);
      EXPECT_EQ(delivery.at(dst, src), plan.payload(src, dst));
    }
}

TEST(HierarchicalAlltoallw, SmallUniformCase) {
  RankTopology topo{4, 2, {}};
  auto plan = AlltoAllwPlan::uniform(4, 8);
  CommStats flat_stats, hier_stats;
  auto flat = flat_alltoallw(topo, plan, flat_stats);
  auto hier = hierarchical_alltoallw(topo, plan, hier_stats);
  EXPECT_EQ(flat_stats.messages, 12u);
  EXPECT_EQ(hier_stats.messages, 6u);  // 2*sum(S_g-1) + G(G-1) = 4 + 2
  EXPECT_EQ(hier, flat);
}

TEST(HierarchicalAlltoallw, PaperScaleMessageCounts) {
  RankTopology topo{64, 8, {}};
  auto plan = AlltoAllwPlan::uniform(64, 16);
  CommStats flat_stats, hier_stats;
  flat_alltoallw(topo, plan, flat_stats);
  auto hier = hierarchical_alltoallw(topo, plan, hier_stats);
  EXPECT_EQ(flat_stats.messages, 4032u);
  EXPECT_EQ(hier_stats.messages, 168u);
  EXPECT_EQ(dense_flat_messages(64), 4032u);
  EXPECT_EQ(dense_hierarchical_messages(topo), 168u);
}

TEST(HierarchicalAlltoallw, ZeroPlanFullySuppressed) {
  RankTopology topo{8, 4, {}};
  auto plan = AlltoAllwPlan::uniform(8, 0);
  CommStats stats;
  auto delivery = hierarchical_alltoallw(topo, plan, stats);
  EXPECT_EQ(stats.messages, 0u);
  for (const auto& slot : delivery.slots) EXPECT_TRUE(slot.empty());
}

TEST(HierarchicalAlltoallw, DeliveryEquivalenceRandomPlans) {
  const struct {
    std::uint64_t n, s;
  } shapes[] = {{4, 2}, {7, 3}, {16, 4}, {33, 8}, {64, 8}};
  for (const auto& shape : shapes) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      RankTopology topo{shape.n, shape.s, {}};
      auto plan = AlltoAllwPlan::random(shape.n, seed, 0, 32, 0.6);
      CommStats flat_stats, hier_stats;
      auto flat = flat_alltoallw(topo, plan, flat_stats);
      auto hier = hierarchical_alltoallw(topo, plan, hier_stats);
      EXPECT_EQ(hier, flat) << "n=" << shape.n << " s=" << shape.s << " seed=" << seed;
      EXPECT_EQ(flat_stats.messages, plan.nonzero_pairs());
      EXPECT_LE(hier_stats.messages, dense_hierarchical_messages(topo));
    }
  }
}

TEST(HierarchicalAlltoallw, NonLeaderResidencyBounded) {
  RankTopology topo{32, 8, {}};
  auto plan = AlltoAllwPlan::random(32, 5, 1, 128, 1.0);
  CommStats flat_stats, hier_stats;
  flat_alltoallw(topo, plan, flat_stats);
  hierarchical_alltoallw(topo, plan, hier_stats);

  for (std::uint64_t r = 0; r < 32; ++r) {
    if (topo.is_leader(r)) continue;
    std::uint64_t send_volume = 0, recv_volume = 0;
    for (std::uint64_t j = 0; j < 32; ++j) {
      if (j != r && plan.sizes[r][j] > 0)
        send_volume += plan.sizes[r][j] + kPackHeaderBytes;
      if (j != r && plan.sizes[j][r] > 0)
        recv_volume += plan.sizes[j][r] + kPackHeaderBytes;
    }
    const std::uint64_t bound = send_volume + recv_volume + plan.sizes[r][r];
    EXPECT_LE(hier_stats.max_resident_bytes[r], bound) << "rank " << r;
  }
  // Leaders do hold aggregates; a member never holds the N-way set.
  std::uint64_t member_peak = 0;
  for (std::uint64_t r = 0; r < 32; ++r)
    if (!topo.is_leader(r)) member_peak = std::max(member_peak, hier_stats.max_resident_bytes[r]);
  EXPECT_LT(member_peak, plan.total_bytes());
}

TEST(CommStats, CountersAreMonotoneAcrossRuns) {
  RankTopology topo{8, 4, {}};
  auto plan = AlltoAllwPlan::uniform(8, 4);
  CommStats stats;
  flat_alltoallw(topo, plan, stats);
  const auto after_one = stats.messages;
  flat_alltoallw(topo, plan, stats);
  EXPECT_EQ(stats.messages, 2 * after_one);
  stats.reset();
  EXPECT_EQ(stats.messages, 0u);
  EXPECT_TRUE(stats.max_resident_bytes.empty());
}

TEST(CommStats, SerializesToJsonAndCsv) {
  CommStats stats;
  stats.ensure_ranks(2);
  stats.messages = 5;
  stats.comparator_ops = 7;
  stats.pass_count = 3;
  stats.on_alloc(1, 100);
  auto j = stats.to_json();
  EXPECT_EQ(j["messages"].get<std::uint64_t>(), 5u);
  EXPECT_EQ(j["max_resident_bytes"][1].get<std::uint64_t>(), 100u);
  const auto csv = stats.to_csv();
  EXPECT_NE(csv.find("metric,value"), std::string::npos);
  EXPECT_NE(csv.find("messages,5"), std::string::npos);
  EXPECT_NE(csv.find("max_resident_bytes,100"), std::string::npos);
}

TEST(CommStats, ReleaseBeyondResidentRejected) {
  CommStats stats;
  EXPECT_THROW(stats.on_release(0, 1), InvalidArgument);
  stats.on_alloc(0, 10);
  EXPECT_THROW(stats.on_release(0, 11), InvalidArgument);
  stats.on_release(0, 10);
  EXPECT_EQ(stats.max_resident_bytes[0], 10u);
}

// ---- gatherv -------------------------------------------------------------------

namespace {

std::vector<std::vector<std::uint8_t>> random_payloads(std::uint64_t n, std::uint64_t seed,
                                                       bool with_zeros) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::uint8_t>> payloads(n);
  for (auto& p : payloads) {
    const std::uint64_t len = with_zeros ? rng() % 9 : 1 + rng() % 8;
    p.resize(len);
    for (auto& b : p) b = static_cast<std::uint8_t>(rng());
  }
  return payloads;
}

}  // namespace

TEST(StagedGatherv, SingleRankSendsNothing) {
  RankTopology topo{1, 1, {}};
  CommStats stats;
  auto result = staged_gatherv(topo, 0, 2, {{0x42}}, stats);
  EXPECT_EQ(stats.messages, 0u);
  EXPECT_EQ(result.stages, 0u);
  EXPECT_EQ(result.buffer, (std::vector<std::uint8_t>{0x42}));
}

TEST(StagedGatherv, BinaryTreeHasLogStages) {
  RankTopology topo{8, 8, {}};
  auto payloads = random_payloads(8, 3, false);
  CommStats staged_stats, flat_stats;
  auto staged = staged_gatherv(topo, 0, 2, payloads, staged_stats);
  auto flat = flat_gatherv(topo, 0, payloads, flat_stats);
  EXPECT_EQ(staged.stages, 3u);
  EXPECT_EQ(staged.buffer, flat.buffer);
  EXPECT_EQ(flat_stats.messages, 7u);
}

TEST(StagedGatherv, ZeroLengthPayloadsMatchFlat) {
  RankTopology topo{16, 16, {}};
  auto payloads = random_payloads(16, 9, true);
  payloads[0].clear();
  payloads[15].clear();
  CommStats staged_stats, flat_stats;
  auto staged = staged_gatherv(topo, 0, 4, payloads, staged_stats);
  auto flat = flat_gatherv(topo, 0, payloads, flat_stats);
  EXPECT_EQ(staged.stages, 2u);
  EXPECT_EQ(staged.buffer, flat.buffer);
}

TEST(StagedGatherv, NonZeroRootRotates) {
  RankTopology topo{13, 13, {}};
  auto payloads = random_payloads(13, 21, true);
  for (std::uint64_t root : {0u, 5u, 12u}) {
    CommStats staged_stats, flat_stats;
    auto staged = staged_gatherv(topo, root, 3, payloads, staged_stats);
    auto flat = flat_gatherv(topo, root, payloads, flat_stats);
    EXPECT_EQ(staged.buffer, flat.buffer) << "root " << root;
    EXPECT_EQ(staged.stages, expected_gather_stages(13, 3));
  }
}

TEST(StagedGatherv, StageFormula) {
  EXPECT_EQ(expected_gather_stages(1, 2), 0u);
  EXPECT_EQ(expected_gather_stages(2, 2), 1u);
  EXPECT_EQ(expected_gather_stages(8, 2), 3u);
  EXPECT_EQ(expected_gather_stages(9, 2), 4u);
  EXPECT_EQ(expected_gather_stages(16, 4), 2u);
  EXPECT_EQ(expected_gather_stages(17, 4), 3u);
  EXPECT_EQ(expected_gather_stages(64, 4), 3u);
}

TEST(StagedGatherv, RejectsBadArguments) {
  RankTopology topo{4, 4, {}};
  auto payloads = random_payloads(4, 1, false);
  CommStats stats;
  EXPECT_THROW(staged_gatherv(topo, 0, 1, payloads, stats), InvalidArgument);
  EXPECT_THROW(staged_gatherv(topo, 4, 2, payloads, stats), InvalidArgument);
  payloads.pop_back();
  EXPECT_THROW(staged_gatherv(topo, 0, 2, payloads, stats), InvalidArgument);
}

// ---- node-id mapping --------------------------------------------------------------

TEST(MapNodeToRank, AllEqualIds) {
  const std::vector<std::string> ids(6, "nodeA");
  CommStats stats;
  auto map = map_node_to_rank(ids, stats);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    EXPECT_EQ(map.node_ordinal[r], 0u);
    EXPECT_EQ(map.within_node_index[r], r);
  }
}

TEST(MapNodeToRank, SpecExample) {
  const std::vector<std::string> ids{"b", "a", "a", "c"};
  CommStats stats;
  auto map = map_node_to_rank(ids, stats);
  EXPECT_EQ(map.node_ordinal, (std::vector<std::uint64_t>{1, 0, 0, 2}));
  EXPECT_EQ(map.within_node_index, (std::vector<std::uint64_t>{0, 0, 1, 0}));
}

TEST(MapNodeToRank, LengthMismatchRejected) {
  CommStats stats;
  EXPECT_THROW(map_node_to_rank({"ab", "abc"}, stats), LengthMismatch);
  EXPECT_THROW(map_node_to_rank_naive({"ab", "abc"}, stats), LengthMismatch);
}

TEST(MapNodeToRank, EqualsNaiveOracleAt4096) {
  auto ids = random_node_ids(4096, 500, 7);
  CommStats fast_stats, naive_stats;
  auto fast = map_node_to_rank(ids, fast_stats);
  auto naive = map_node_to_rank_naive(ids, naive_stats);
  EXPECT_EQ(fast, naive);
  EXPECT_GT(fast_stats.comparator_ops, 0u);
  EXPECT_LT(fast_stats.comparator_ops, naive_stats.comparator_ops);
}

TEST(MapNodeToRank, FastPathIsLoglinear) {
  auto ids = random_node_ids(4096, std::size_t{1} << 40, 11);
  CommStats stats;
  map_node_to_rank(ids, stats);
  // Generous N*log2(N) envelope; the naive path is ~2 N^2.
  EXPECT_LT(stats.comparator_ops, 3.0 * 4096 * 12);
}

TEST(MapNodeToRank, NaiveGrowthIsQuadratic) {
  CommStats small_stats, big_stats;
  map_node_to_rank_naive(random_node_ids(1024, std::size_t{1} << 40, 13), small_stats);
  map_node_to_rank_naive(random_node_ids(2048, std::size_t{1} << 40, 13), big_stats);
  const double ratio = static_cast<double>(big_stats.comparator_ops) /
                       static_cast<double>(small_stats.comparator_ops);
  EXPECT_GE(ratio, 3.8);
}

// ---- clump distribution --------------------------------------------------------------

TEST(DistributeClumps, OneEachWhenUniform) {
  const std::vector<std::uint64_t> weights(8, 5);
  CommStats stats;
  auto assignment = distribute_clumps(weights, 8, stats);
  for (std::size_t c = 0; c < weights.size(); ++c) EXPECT_EQ(assignment[c], c);
}

TEST(DistributeClumps, SpecExampleMatchesNaive) {
  const std::vector<std::uint64_t> weights{3, 1, 1, 1};
  CommStats fast_stats, naive_stats;
  auto fast = distribute_clumps(weights, 2, fast_stats);
  auto naive = distribute_clumps_naive(weights, 2, naive_stats);
  EXPECT_EQ(fast, naive);
  EXPECT_EQ(fast, (std::vector<std::uint64_t>{0, 1, 1, 1}));
}

TEST(DistributeClumps, RandomPlansMatchNaive) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 200;
    const std::uint64_t procs = 1 + rng() % 50;
    std::vector<std::uint64_t> weights(n);
    for (auto& w : weights) w = rng() % 100;  // zeros included
    CommStats fast_stats, naive_stats;
    auto fast = distribute_clumps(weights, procs, fast_stats);
    auto naive = distribute_clumps_naive(weights, procs, naive_stats);
    EXPECT_EQ(fast, naive) << "trial " << trial;
    for (std::size_t c = 1; c < n; ++c) EXPECT_GE(fast[c], fast[c - 1]);
  }
}

TEST(DistributeClumps, LinearPassBound) {
  const std::size_t n = 100000;
  std::mt19937_64 rng(23);
  std::vector<std::uint64_t> weights(n);
  for (auto& w : weights) w = 1 + rng() % 10;
  CommStats fast_stats, naive_stats;
  auto fast = distribute_clumps(weights, 1000, fast_stats);
  auto naive = distribute_clumps_naive(weights, 1000, naive_stats);
  EXPECT_EQ(fast, naive);
  EXPECT_LE(fast_stats.pass_count, 2 * n);
  EXPECT_GT(naive_stats.pass_count, 10 * fast_stats.pass_count);
}

TEST(DistributeClumps, EdgeCases) {
  CommStats stats;
  EXPECT_THROW(distribute_clumps(std::vector<std::uint64_t>{1}, 0, stats), InvalidArgument);
  // All-zero weights land on process 0.
  auto all_zero = distribute_clumps(std::vector<std::uint64_t>{0, 0, 0}, 4, stats);
  EXPECT_EQ(all_zero, (std::vector<std::uint64_t>{0, 0, 0}));
  // Empty clump list.
  auto empty = distribute_clumps(std::vector<std::uint64_t>{}, 4, stats);
  EXPECT_TRUE(empty.empty());
  // More processes than clumps still matches the naive oracle.
  CommStats fast_stats, naive_stats;
  const std::vector<std::uint64_t> weights{5, 5};
  EXPECT_EQ(distribute_clumps(weights, 7, fast_stats),
            distribute_clumps_naive(weights, 7, naive_stats));
}

// ---- I/O process selection -------------------------------------------------------------

TEST(ChooseIoProcesses, BlockLeaders) {
  EXPECT_EQ(choose_io_processes(1000), (std::vector<std::uint64_t>{0}));
  EXPECT_EQ(choose_io_processes(1), (std::vector<std::uint64_t>{0}));
  EXPECT_EQ(choose_io_processes(2500), (std::vector<std::uint64_t>{0, 1000, 2000}));
  EXPECT_EQ(choose_io_processes(610800).size(), 611u);
  EXPECT_THROW(choose_io_processes(0), InvalidArgument);
}

TEST(EmitIoConfig, DefaultAndTunedValues) {
  const auto def = emit_io_config("default");
  EXPECT_EQ(def.stripe_count, 1u);
  EXPECT_EQ(def.stripe_size_bytes, 1u << 20);
  EXPECT_EQ(emit_io_config("").stripe_count, 1u);

  for (const std::string comp : {"atm", "ocn", "ice", "cpl"}) {
    const auto cfg = emit_io_config(comp);
    const bool count_ok = cfg.stripe_count == 4 || cfg.stripe_count == 8 ||
                          cfg.stripe_count == 16 || cfg.stripe_count == 32;
    const bool size_ok =
        cfg.stripe_size_bytes == (1u << 20) || cfg.stripe_size_bytes == (4u << 20);
    EXPECT_TRUE(count_ok) << comp;
    EXPECT_TRUE(size_ok) << comp;
    EXPECT_EQ(cfg.io_ratio_numer, 1u);
    EXPECT_EQ(cfg.io_ratio_denom, 1000u);
    EXPECT_DOUBLE_EQ(cfg.io_ratio(), 0.001);
  }
  EXPECT_THROW(emit_io_config("land"), UnknownComponent);
}

// ---- scenario ---------------------------------------------------------------------------

TEST(Scenario, DefaultsMatchPaperScale) {
  Scenario s;
  s.validate();
  EXPECT_EQ(s.n_ranks, 64u);
  EXPECT_EQ(s.group_size, 8u);
  EXPECT_EQ(dense_hierarchical_messages(s.topology()), 168u);
}

TEST(Scenario, JsonRoundTrip) {
  Scenario s;
  s.n_ranks = 16;
  s.density = 0.5;
  s.seed = 9;
  auto back = Scenario::from_json(s.to_json());
  EXPECT_EQ(back.n_ranks, 16u);
  EXPECT_DOUBLE_EQ(back.density, 0.5);
  EXPECT_EQ(back.seed, 9u);

  auto partial = Scenario::from_json(nlohmann::json{{"n_ranks", 32}});
  EXPECT_EQ(partial.n_ranks, 32u);
  EXPECT_EQ(partial.group_size, 8u);  // default preserved

  EXPECT_THROW(Scenario::from_json(nlohmann::json{{"fanout", 1}}), InvalidSpec);
}
