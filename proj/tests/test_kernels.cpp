#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <thread>
#include <vector>

#include "o2proxy/archsim.hpp"
#include "o2proxy/errors.hpp"
#include "o2proxy/kernels.hpp"
#include "o2proxy/offload.hpp"
#include "o2proxy/verify.hpp"

using namespace o2proxy;
using namespace o2proxy::kernels;

namespace {

archsim::CoreGroup make_group(int n_cpes = 64) {
  archsim::CoreGroupSpec spec;
  spec.n_cpes = n_cpes;
  return archsim::CoreGroup(spec);
}

testing::AssertionResult bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return testing::AssertionFailure() << "size mismatch";
  verify::Checkpoint ca = verify::Checkpoint::record("a", {a.size()}, a);
  verify::Checkpoint cb = verify::Checkpoint::record("b", {b.size()}, b);
  auto report = verify::compare(ca, cb, verify::CompareSpec::bit());
  if (report.match) return testing::AssertionSuccess();
  const auto& m = *report.first_mismatch;
  return testing::AssertionFailure() << "first mismatch at flat index " << m.index << ": "
                                     << m.value_a << " vs " << m.value_b;
}

}  // namespace

// ---- physics ---------------------------------------------------------------

TEST(PhysicsStep, ZeroCoefficientsAreIdentity) {
  auto group = make_group(8);
  auto state = ChunkedColumns::random(4, 2, 8, 42);
  const auto before = state.t;
  PhysicsParams params;
  params.alpha = 0.0;
  params.beta = 0.0;
  physics_step(group, state, params, ExecMode::kOffload);
  EXPECT_TRUE(bit_equal(state.t, before));
}

TEST(PhysicsStep, EquilibriumIsFixedPointAtTopLevel) {
  auto group = make_group(4);
  ChunkedColumns state;
  state.nchunks = 3;
  state.ncols = 2;
  state.pver = 5;
  state.t.assign(state.size(), 300.0);
  state.q.assign(state.size(), 0.4);
  PhysicsParams params;
  params.alpha = 0.5;
  params.beta = 0.0;
  physics_step(group, state, params, ExecMode::kOffload);
  // k=0 sits exactly at the equilibrium profile and must not move.
  for (std::size_t c = 0; c < state.nchunks; ++c)
    for (std::size_t col = 0; col < state.ncols; ++col)
      EXPECT_EQ(state.t[state.index(c, col, 0)], 300.0);
}

TEST(PhysicsStep, MatchesDirectFormula) {
  auto group = make_group(8);
  auto state = ChunkedColumns::random(6, 1, 16, 7);
  const auto t0 = state.t;
  const auto q0 = state.q;
  PhysicsParams params;
  physics_step(group, state, params, ExecMode::kOffload);
  for (std::size_t c = 0; c < state.nchunks; ++c) {
    for (std::size_t k = 0; k < state.pver; ++k) {
      const std::size_t i = state.index(c, 0, k);
      const double teq =
          300.0 - 50.0 * static_cast<double>(k) / static_cast<double>(state.pver - 1);
      const double expect = t0[i] + params.alpha * (teq - t0[i]) + params.beta * q0[i] * q0[i];
      EXPECT_EQ(state.t[i], expect);
    }
  }
}

TEST(PhysicsStep, RejectsNonFiniteInput) {
  auto group = make_group(4);
  auto state = ChunkedColumns::random(2, 1, 4, 3);
  state.t[3] = std::nan("");
  EXPECT_THROW(physics_step(group, state, PhysicsParams{}, ExecMode::kOffload),
               NonFiniteInput);
}

TEST(PhysicsStep, ParallelBitEqualsSerialAtTableDims) {
  auto serial_group = make_group(1);
  auto state_serial = ChunkedColumns::random(36, 1, 32, 99);
  auto state_parallel = state_serial;
  physics_step(serial_group, state_serial, PhysicsParams{}, ExecMode::kSerial);
  auto group = make_group(64);
  physics_step(group, state_parallel, PhysicsParams{}, ExecMode::kOffload);
  EXPECT_TRUE(bit_equal(state_serial.t, state_parallel.t));
}

// ---- dycore ----------------------------------------------------------------

TEST(DycoreStep, ConstantFieldUnchanged) {
  auto group = make_group(16);
  auto field = ElementField::random(8, 3, 4, 5);
  std::fill(field.values.begin(), field.values.end(), 2.75);
  dycore_step(group, field, 0.1, 0.5, ExecMode::kOffload);
  for (double v : field.values) EXPECT_EQ(v, 2.75);
}

TEST(DycoreStep, TwoElementsShareEdgeMeans) {
  auto group = make_group(4);
  ElementField field;
  field.nelem = 2;
  field.pver = 1;
  field.np = 4;
  field.ex = 2;
  field.ey = 1;
  field.values.assign(field.size(), 0.0);
  for (std::size_t i = 0; i < field.np; ++i)
    for (std::size_t j = 0; j < field.np; ++j) {
      field.values[field.index(0, 0, i, j)] = 1.0;
      field.values[field.index(1, 0, i, j)] = 3.0;
    }
  // nu*dt = 0 isolates the exchange phases.
  dycore_step(group, field, 0.0, 0.0, ExecMode::kOffload);
  for (std::size_t e = 0; e < 2; ++e) {
    const double interior = e == 0 ? 1.0 : 3.0;
    for (std::size_t i = 0; i < field.np; ++i) {
      EXPECT_EQ(field.values[field.index(e, 0, i, 0)], 2.0);
      EXPECT_EQ(field.values[field.index(e, 0, i, field.np - 1)], 2.0);
      for (std::size_t j = 1; j + 1 < field.np; ++j)
        EXPECT_EQ(field.values[field.index(e, 0, i, j)], interior);
    }
  }
}

TEST(DycoreStep, AdjacencyIsSymmetric) {
  auto field = ElementField::random(12, 1, 2, 1);
  for (std::size_t e = 0; e < field.nelem; ++e) {
    EXPECT_EQ(field.west(field.east(e)), e);
    EXPECT_EQ(field.east(field.west(e)), e);
    EXPECT_EQ(field.south(field.north(e)), e);
    EXPECT_EQ(field.north(field.south(e)), e);
  }
}

TEST(DycoreStep, ConservesGlobalSumUnderExchange) {
  auto group = make_group(64);
  auto field = ElementField::random(4, 32, 4, 123);
  double sum_before = 0.0;
  for (double v : field.values) sum_before += v;
  // nu*dt = 0: pure boundary exchange, conserved by pairwise means.
  dycore_step(group, field, 0.0, 0.0, ExecMode::kOffload);
  double sum_after = 0.0;
  for (double v : field.values) sum_after += v;
  const double ulp_scale = std::nexttoward(sum_before, INFINITY) - sum_before;
  EXPECT_NEAR(sum_after, sum_before,
              ulp_scale * static_cast<double>(field.values.size()));
}

TEST(DycoreStep, ParallelBitEqualsSerialAtTableDims) {
  auto serial_group = make_group(1);
  auto field_serial = ElementField::random(4, 32, 4, 77);
  auto field_parallel = field_serial;
  dycore_step(serial_group, field_serial, 0.05, 1.0, ExecMode::kSerial);
  auto group = make_group(64);
  dycore_step(group, field_parallel, 0.05, 1.0, ExecMode::kOffload);
  EXPECT_TRUE(bit_equal(field_serial.values, field_parallel.values));
}

TEST(DycoreStep, RejectsBadGridFactoring) {
  auto field = ElementField::random(6, 1, 4, 1);
  field.ex = 4;  // 4*? != 6
  field.ey = 2;
  auto group = make_group(4);
  EXPECT_THROW(dycore_step(group, field, 0.1, 1.0, ExecMode::kOffload), InvalidSpec);
}

// ---- vertical prefix sum ----------------------------------------------------

TEST(VerticalPrefixSum, AllZerosGiveZeros) {
  auto group = make_group(8);
  std::vector<double> div(64, 0.0), dp(64, 0.0);
  auto omega = vertical_prefix_sum(group, div, dp, ExecMode::kOffload);
  for (double v : omega) EXPECT_EQ(v, 0.0);
}

TEST(VerticalPrefixSum, IntegerInputsExact) {
  auto group = make_group(8);
  std::vector<double> div{1.0, 2.0, 3.0, 4.0};
  std::vector<double> dp(4, 1.0);
  auto omega = vertical_prefix_sum(group, div, dp, ExecMode::kOffload);
  const std::vector<double> expect{1.0, 3.0, 6.0, 10.0};
  EXPECT_TRUE(bit_equal(omega, expect));
}

TEST(VerticalPrefixSum, LengthMismatchRejected) {
  auto group = make_group(4);
  std::vector<double> div(8, 1.0), dp(7, 1.0);
  EXPECT_THROW(vertical_prefix_sum(group, div, dp, ExecMode::kOffload), LengthMismatch);
}

TEST(VerticalPrefixSum, WithinToleranceOfSerial) {
  auto group = make_group(8);
  auto div = kernels::detail::random_values(1024, 5, 0.0, 1.0);
  auto dp = kernels::detail::random_values(1024, 6, 0.0, 1.0);
  auto serial = vertical_prefix_sum(group, div, dp, ExecMode::kSerial);
  auto parallel = vertical_prefix_sum(group, div, dp, ExecMode::kOffload);
  auto ca = verify::Checkpoint::record("serial", {serial.size()}, serial);
  auto cb = verify::Checkpoint::record("parallel", {parallel.size()}, parallel);
  auto report = verify::compare(ca, cb, verify::CompareSpec::rel(1e-12));
  EXPECT_TRUE(report.match) << report.to_json().dump(2);
}

TEST(VerticalPrefixSum, SingleWorkerBitEqualsSerial) {
  auto group = make_group(1);
  auto div = kernels::detail::random_values(300, 11, -1.0, 1.0);
  auto dp = kernels::detail::random_values(300, 12, -1.0, 1.0);
  auto serial = vertical_prefix_sum(group, div, dp, ExecMode::kSerial);
  auto parallel = vertical_prefix_sum(group, div, dp, ExecMode::kOffload);
  EXPECT_TRUE(bit_equal(serial, parallel));
}

// ---- POP vmix ----------------------------------------------------------------

TEST(PopVmix, ConstantColumnIsEquilibrium) {
  auto group = make_group(8);
  BlockField field;
  field.mxblk = 1;
  field.ncat = 1;
  field.nlayer = 12;
  field.nyblk = 4;
  field.nxblk = 3;
  field.values.assign(field.size(), 5.5);
  pop_vmix_step(group, field, VmixParams{}, ExecMode::kOffload);
  // Insulating ends: a constant column solves the system exactly; the sweep
  // reproduces it to rounding.
  for (double v : field.values) EXPECT_NEAR(v, 5.5, 5.5 * 1e-13);
}

TEST(PopVmix, SingleLayerIsIdentity) {
  auto group = make_group(4);
  auto field = BlockField::random(2, 1, 1, 4, 4, 21);
  const auto before = field.values;
  pop_vmix_step(group, field, VmixParams{}, ExecMode::kOffload);
  EXPECT_TRUE(bit_equal(field.values, before));
}

TEST(PopVmix, SingularSystemDetected) {
  auto group = make_group(4);
  auto field = BlockField::random(1, 1, 2, 2, 2, 3);
  VmixParams params;
  params.kappa = -0.5;  // interior pivot collapses to zero
  params.dt = 1.0;
  EXPECT_THROW(pop_vmix_step(group, field, params, ExecMode::kOffload), SingularSystem);
  params.kappa = -1.0;  // first pivot 1 + r = 0
  EXPECT_THROW(pop_vmix_step(group, field, params, ExecMode::kOffload), SingularSystem);
}

TEST(PopVmix, ParallelBitEqualsSerialAtTableDims) {
  auto serial_group = make_group(1);
  auto field_serial = BlockField::random(1, 1, 60, 56, 10, 31);
  auto field_parallel = field_serial;
  pop_vmix_step(serial_group, field_serial, VmixParams{}, ExecMode::kSerial);
  auto group = make_group(64);
  pop_vmix_step(group, field_parallel, VmixParams{}, ExecMode::kOffload);
  EXPECT_TRUE(bit_equal(field_serial.values, field_parallel.values));
}

// ---- POP hmix ----------------------------------------------------------------

TEST(PopHmix, SingleLayerMatchesPlainLaplacian) {
  auto group = make_group(8);
  auto field = BlockField::random(1, 1, 1, 5, 6, 8);
  const auto before = field.values;
  HmixParams params;
  pop_hmix_step(group, field, params, ExecMode::kOffload);

  const std::size_t ny = field.nyblk, nx = field.nxblk;
  const auto at = [&](std::size_t y, std::size_t x) { return before[y * nx + x]; };
  for (std::size_t y = 0; y < ny; ++y) {
    for (std::size_t x = 0; x < nx; ++x) {
      const double c = at(y, x);
      const double up = y + 1 < ny ? at(y + 1, x) : c;
      const double dn = y > 0 ? at(y - 1, x) : c;
      const double ea = at(y, (x + 1) % nx);
      const double we = at(y, (x + nx - 1) % nx);
      const double expect = c + params.nu * ((up - c) + (dn - c) + (ea - c) + (we - c));
      EXPECT_EQ(field.values[y * nx + x], expect);
    }
  }
}

TEST(PopHmix, ConstantFieldUnchanged) {
  auto group = make_group(8);
  BlockField field;
  field.mxblk = 2;
  field.ncat = 1;
  field.nlayer = 6;
  field.nyblk = 4;
  field.nxblk = 5;
  field.values.assign(field.size(), 1.25);
  pop_hmix_step(group, field, HmixParams{}, ExecMode::kOffload);
  for (double v : field.values) EXPECT_EQ(v, 1.25);
}

TEST(PopHmix, ParallelBitEqualsSerialAtTableDims) {
  auto serial_group = make_group(1);
  auto field_serial = BlockField::random(1, 1, 60, 56, 10, 44);
  auto field_parallel = field_serial;
  pop_hmix_step(serial_group, field_serial, HmixParams{}, ExecMode::kSerial);
  auto group = make_group(64);
  pop_hmix_step(group, field_parallel, HmixParams{}, ExecMode::kOffload);
  EXPECT_TRUE(bit_equal(field_serial.values, field_parallel.values));
}

// ---- CICE EVP -----------------------------------------------------------------

TEST(CiceEvp, SubcycleCountValidated) {
  auto group = make_group(4);
  auto field = BlockField::random(2, 1, 1, 4, 4, 9);
  EXPECT_THROW(cice_evp_step(group, field, 0, EvpParams{}, ExecMode::kOffload),
               InvalidArgument);
}

TEST(CiceEvp, ZeroForcingIsIdentity) {
  auto group = make_group(8);
  auto field = BlockField::random(4, 2, 3, 4, 4, 13);
  const auto before = field.values;
  EvpParams params;
  params.gamma = 0.0;
  params.forcing = 0.0;
  cice_evp_step(group, field, 1, params, ExecMode::kOffload);
  EXPECT_TRUE(bit_equal(field.values, before));
}

TEST(CiceEvp, HalfOfWorkersIdleAtTableDims) {
  // 32 blocks over 64 workers: chunk ceil(32/64)=1, workers 32..63 get nothing.
  auto group = make_group(64);
  offload::LoopNest nest("ciceevp",
                         {{"mxblk", 32}, {"ncat", 5}, {"nlayer", 8}, {"ny", 4}, {"nx", 4}},
                         std::vector<std::string>{"mxblk"});
  std::vector<std::atomic<int>> items_per_worker(64);
  offload::parallel_for(group, nest, [&](const offload::WorkItem&, offload::RegionContext& ctx) {
    items_per_worker[static_cast<std::size_t>(ctx.worker_id())].fetch_add(1);
  });
  int active = 0, idle = 0;
  for (const auto& c : items_per_worker) (c.load() > 0 ? active : idle)++;
  EXPECT_EQ(active, 32);
  EXPECT_EQ(idle, 32);
}

TEST(CiceEvp, ManySubcyclesBitEqualSerial) {
  auto serial_group = make_group(1);
  auto field_serial = BlockField::random(32, 5, 8, 4, 4, 55);
  auto field_parallel = field_serial;
  EvpParams params;
  cice_evp_step(serial_group, field_serial, 120, params, ExecMode::kSerial);
  auto group = make_group(64);
  cice_evp_step(group, field_parallel, 120, params, ExecMode::kOffload);
  EXPECT_TRUE(bit_equal(field_serial.values, field_parallel.values));
}

TEST(CiceEvp, HaloFrozenWithinStep) {
  // Two steps of one subcycle differ from one step of two subcycles:
  // boundaries are exchanged only between steps.
  auto group = make_group(8);
  auto field_two_steps = BlockField::random(4, 1, 1, 4, 4, 61);
  auto field_one_step = field_two_steps;
  EvpParams params;
  params.gamma = 0.5;
  cice_evp_step(group, field_two_steps, 1, params, ExecMode::kOffload);
  cice_evp_step(group, field_two_steps, 1, params, ExecMode::kOffload);
  cice_evp_step(group, field_one_step, 2, params, ExecMode::kOffload);
  auto ca = verify::Checkpoint::record("two", field_two_steps.dims(), field_two_steps.values);
  auto cb = verify::Checkpoint::record("one", field_one_step.dims(), field_one_step.values);
  EXPECT_FALSE(verify::compare(ca, cb, verify::CompareSpec::bit()).match);
}

// ---- cross-worker bitwise property -------------------------------------------

TEST(KernelProperty, BitExactAcrossWorkerCounts) {
  const int worker_counts[] = {1, 2, 4, 8, 16, 32, 64};
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto serial_group = make_group(1);
    auto phys_ref = ChunkedColumns::random(36, 1, 32, seed);
    physics_step(serial_group, phys_ref, PhysicsParams{}, ExecMode::kSerial);
    auto vmix_ref = BlockField::random(1, 1, 60, 14, 10, seed);
    pop_vmix_step(serial_group, vmix_ref, VmixParams{}, ExecMode::kSerial);

    for (int workers : worker_counts) {
      auto group = make_group(workers);
      auto phys = ChunkedColumns::random(36, 1, 32, seed);
      physics_step(group, phys, PhysicsParams{}, ExecMode::kOffload);
      EXPECT_TRUE(bit_equal(phys.t, phys_ref.t)) << "physics seed " << seed << " workers "
                                                 << workers;
      auto vmix = BlockField::random(1, 1, 60, 14, 10, seed);
      pop_vmix_step(group, vmix, VmixParams{}, ExecMode::kOffload);
      EXPECT_TRUE(bit_equal(vmix.values, vmix_ref.values))
          << "vmix seed " << seed << " workers " << workers;
    }
  }
}

// ---- presets ------------------------------------------------------------------

TEST(Presets, LevelNamesResolve) {
  EXPECT_EQ(Presets::level("ne30"), 0);
  EXPECT_EQ(Presets::level("ts015"), 0);
  EXPECT_EQ(Presets::level("ne120"), 1);
  EXPECT_EQ(Presets::level("ts010"), 1);
  EXPECT_EQ(Presets::level("ne240"), 2);
  EXPECT_EQ(Presets::level("ts005"), 2);
  EXPECT_EQ(Presets::level("ne480"), 3);
  EXPECT_EQ(Presets::level("ts003"), 3);
  EXPECT_EQ(Presets::level("default"), 0);
  EXPECT_THROW(Presets::level("ne999"), InvalidArgument);
}

TEST(Presets, BaseLevelMatchesTableDims) {
  const auto cam = Presets::cam("ne30");
  EXPECT_EQ(cam.nelem, 4u);
  EXPECT_EQ(cam.pver, 32u);
  EXPECT_EQ(cam.np, 4u);
  EXPECT_EQ(cam.nchunks, 36u);
  EXPECT_EQ(cam.ncols, 1u);
  const auto pop = Presets::pop("ts015");
  EXPECT_EQ(pop.mxblk, 1u);
  EXPECT_EQ(pop.nlayer, 60u);
  EXPECT_EQ(pop.nyblk, 56u);
  EXPECT_EQ(pop.nxblk, 10u);
  const auto ice = Presets::cice("ts015");
  EXPECT_EQ(ice.mxblk, 32u);
  EXPECT_EQ(ice.ncat, 5u);
  EXPECT_EQ(ice.nlayer, 8u);
  EXPECT_EQ(ice.nyblk, 4u);
  EXPECT_EQ(ice.nxblk, 4u);
  EXPECT_EQ(Presets::prefix_len(0), 1024u);
}

TEST(Presets, ScalesAreMonotone) {
  for (int level = 1; level < Presets::kLevels; ++level) {
    EXPECT_GT(Presets::cam(level).nelem, Presets::cam(level - 1).nelem);
    EXPECT_GT(Presets::cam(level).nchunks, Presets::cam(level - 1).nchunks);
    EXPECT_GT(Presets::pop(level).nyblk, Presets::pop(level - 1).nyblk);
    EXPECT_GT(Presets::cice(level).mxblk, Presets::cice(level - 1).mxblk);
    EXPECT_GT(Presets::prefix_len(level), Presets::prefix_len(level - 1));
  }
}

// ---- scheduling-driven wall time ---------------------------------------------

TEST(KernelProperty, PhysicsSpeedupMonotoneUpToHostCores) {
  const unsigned host = std::thread::hardware_concurrency();
  const int max_workers = static_cast<int>(std::min(host, 8u));
  if (max_workers < 2) GTEST_SKIP() << "single-core host, nothing to compare";

  std::vector<double> elapsed;
  for (int workers = 1; workers <= max_workers; workers *= 2) {
    auto group = make_group(workers);
    auto state = ChunkedColumns::random(4096, 1, 32, 17);
    const auto start = std::chrono::steady_clock::now();
    physics_step(group, state, PhysicsParams{}, ExecMode::kOffload);
    elapsed.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                          .count());
  }
  for (std::size_t i = 1; i < elapsed.size(); ++i)
    EXPECT_LE(elapsed[i], elapsed[i - 1] * 1.15) << "worker doubling step " << i;
}
