#pragma once

// Climate proxy kernels. Each kernel exists in a serial reference form (MPE
// only) and an offloaded form (CPE workers) selected by ExecMode; both run
// the same per-element arithmetic in the same order, so every kernel except
// the chunked prefix sum is bit-exact across worker counts. The loop shapes,
// parallel axes, and communication patterns are the point; the arithmetic
// bodies are deliberately simple.
//
// Shapes and strategies:
//   physics_step         nchunks x ncols x pver      parallel on nchunks
//   dycore_step          nelem x pver x np x np      parallel on nelem, pver
//   vertical_prefix_sum  column scan                 local scan + carries
//   pop_vmix_step        mxblk x nlayer x ny x nx    parallel on ny rows
//   pop_hmix_step        same dims                   parallel on nlayer
//   cice_evp_step        mxblk x ncat x nlayer x ...  parallel on mxblk

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "o2proxy/archsim.hpp"
#include "o2proxy/errors.hpp"
#include "o2proxy/offload.hpp"

namespace o2proxy::kernels {

using archsim::CoreGroup;
using archsim::SharedArray;
using offload::LoopNest;
using offload::RegionContext;
using offload::RegionOptions;
using offload::WorkItem;

enum class ExecMode { kSerial, kOffload };

namespace detail {

inline void run_nest(CoreGroup& group, const LoopNest& nest, ExecMode mode,
                     const offload::ForBody& body, RegionOptions options = {}) {
  if (mode == ExecMode::kSerial)
    offload::dispatch_serial(group, nest, body, std::move(options));
  else
    offload::parallel_for(group, nest, body, std::move(options));
}

template <class T>
inline void fill_shared(SharedArray<T>& array, std::span<const T> src) {
  std::copy(src.begin(), src.end(), array.host_span().begin());
}

template <class T>
inline void read_shared(const SharedArray<T>& array, std::span<T> dst) {
  std::copy(array.host_span().begin(), array.host_span().end(), dst.begin());
}

inline void require_finite(std::span<const double> values, const char* what) {
  for (double v : values)
    if (!std::isfinite(v)) throw NonFiniteInput(std::string(what) + ": non-finite input value");
}

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo,
                                         double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> out(n);
  for (double& v : out) v = dist(rng);
  return out;
}

// Largest divisor <= sqrt(n), so blocks form the squarest possible torus.
inline std::pair<std::size_t, std::size_t> factor_grid(std::size_t n) {
  std::size_t best = 1;
  for (std::size_t d = 1; d * d <= n; ++d)
    if (n % d == 0) best = d;
  return {best, n / best};
}

}  // namespace detail

// ---- CAM physics: independent columns grouped into chunks -----------------

struct PhysicsParams {
  double alpha = 0.1;   // relaxation toward the equilibrium profile
  double beta = 0.01;   // moisture feedback
};

struct ChunkedColumns {
  std::size_t nchunks = 0, ncols = 0, pver = 0;
  std::vector<double> t;  // temperature, [chunk][col][level]
  std::vector<double> q;  // moisture, same layout

  std::size_t size() const { return nchunks * ncols * pver; }
  std::size_t index(std::size_t c, std::size_t col, std::size_t k) const {
    return (c * ncols + col) * pver + k;
  }
  std::vector<std::uint64_t> dims() const { return {nchunks, ncols, pver}; }

  void validate() const {
    if (nchunks == 0 || ncols == 0 || pver == 0)
      throw InvalidSpec("ChunkedColumns: all dims must be positive");
    if (t.size() != size() || q.size() != size())
      throw InvalidSpec("ChunkedColumns: state arrays do not match dims");
  }

  static ChunkedColumns random(std::size_t nchunks, std::size_t ncols, std::size_t pver,
                               std::uint64_t seed) {
    ChunkedColumns c;
    c.nchunks = nchunks;
    c.ncols = ncols;
    c.pver = pver;
    c.t = detail::random_values(c.size(), seed, 250.0, 310.0);
    c.q = detail::random_values(c.size(), seed ^ 0x9e3779b97f4a7c15ull, 0.0, 1.0);
    return c;
  }
};

namespace detail {

inline double equilibrium_temp(std::size_t k, std::size_t pver) {
  if (pver == 1) return 300.0;
  return 300.0 - 50.0 * static_cast<double>(k) / static_cast<double>(pver - 1);
}

inline double physics_update(double t, double q, double teq, const PhysicsParams& p) {
  return t + p.alpha * (teq - t) + p.beta * q * q;
}

}  // namespace detail

// t'[.,k] = t + alpha*(Teq(k) - t) + beta*q^2 with Teq(k) = 300 - 50*k/(pver-1).
// Offloaded workers stage column tiles through LDM by DMA; the reference
// path reads shared memory directly. Bit-exact class.
inline void physics_step(CoreGroup& group, ChunkedColumns& state, const PhysicsParams& params,
                         ExecMode mode) {
  state.validate();
  detail::require_finite(state.t, "physics_step t");
  detail::require_finite(state.q, "physics_step q");

  SharedArray<double> t_arr(group, "camphys.t", state.size());
  SharedArray<double> q_arr(group, "camphys.q", state.size());
  detail::fill_shared(t_arr, std::span<const double>(state.t));
  detail::fill_shared(q_arr, std::span<const double>(state.q));

  const std::size_t pver = state.pver;
  const std::size_t ncols = state.ncols;
  const std::size_t tile = std::min<std::size_t>(pver, 4096);  // 2 tiles fit LDM comfortably

  LoopNest nest("camphys",
                {{"nchunks", static_cast<std::int64_t>(state.nchunks)},
                 {"ncols", static_cast<std::int64_t>(ncols)},
                 {"pver", static_cast<std::int64_t>(pver)}},
                std::vector<std::string>{"nchunks"});

  detail::run_nest(group, nest, mode, [&](const WorkItem& item, RegionContext& ctx) {
    const auto c = static_cast<std::size_t>(item[0]);
    auto& view = ctx.view();
    if (ctx.is_mpe()) {
      for (std::size_t col = 0; col < ncols; ++col) {
        for (std::size_t k = 0; k < pver; ++k) {
          const std::size_t idx = (c * ncols + col) * pver + k;
          const double teq = detail::equilibrium_temp(k, pver);
          const double tv = view.cached_read(t_arr, idx);
          const double qv = view.cached_read(q_arr, idx);
          view.cached_write(t_arr, idx, detail::physics_update(tv, qv, teq, params));
        }
      }
      return;
    }
    const std::size_t off_t = view.ldm_alloc(tile * sizeof(double));
    const std::size_t off_q = view.ldm_alloc(tile * sizeof(double));
    for (std::size_t col = 0; col < ncols; ++col) {
      const std::size_t col_base = (c * ncols + col) * pver;
      for (std::size_t k0 = 0; k0 < pver; k0 += tile) {
        const std::size_t len = std::min(tile, pver - k0);
        view.dma_get(t_arr, (col_base + k0) * sizeof(double), off_t, len * sizeof(double));
        view.dma_get(q_arr, (col_base + k0) * sizeof(double), off_q, len * sizeof(double));
        auto ts = view.ldm_span<double>(off_t, len);
        auto qs = view.ldm_span<double>(off_q, len);
        for (std::size_t k = 0; k < len; ++k) {
          const double teq = detail::equilibrium_temp(k0 + k, pver);
          ts[k] = detail::physics_update(ts[k], qs[k], teq, params);
        }
        view.dma_put(off_t, t_arr, (col_base + k0) * sizeof(double), len * sizeof(double));
      }
    }
    view.ldm_free(off_q);
    view.ldm_free(off_t);
  });

  detail::read_shared(t_arr, std::span<double>(state.t));
}

// ---- CAM dynamics: element stencil with boundary exchange -----------------

struct ElementField {
  std::size_t nelem = 0, pver = 0, np = 0;
  std::size_t ex = 0, ey = 0;  // periodic element torus, nelem = ex*ey
  std::vector<double> values;  // [elem][level][i][j]

  std::size_t size() const { return nelem * pver * np * np; }
  std::size_t index(std::size_t e, std::size_t k, std::size_t i, std::size_t j) const {
    return ((e * pver + k) * np + i) * np + j;
  }
  std::vector<std::uint64_t> dims() const { return {nelem, pver, np, np}; }

  std::size_t east(std::size_t e) const { return (e / ex) * ex + (e % ex + 1) % ex; }
  std::size_t west(std::size_t e) const { return (e / ex) * ex + (e % ex + ex - 1) % ex; }
  std::size_t north(std::size_t e) const { return ((e / ex + 1) % ey) * ex + e % ex; }
  std::size_t south(std::size_t e) const { return ((e / ex + ey - 1) % ey) * ex + e % ex; }

  void validate() const {
    if (nelem == 0 || pver == 0) throw InvalidSpec("ElementField: dims must be positive");
    if (np < 2) throw InvalidSpec("ElementField: np must be >= 2");
    if (ex * ey != nelem) throw InvalidSpec("ElementField: grid does not factor nelem");
    if (values.size() != size()) throw InvalidSpec("ElementField: values do not match dims");
  }

  static ElementField random(std::size_t nelem, std::size_t pver, std::size_t np,
                             std::uint64_t seed) {
    ElementField f;
    f.nelem = nelem;
    f.pver = pver;
    f.np = np;
    std::tie(f.ex, f.ey) = detail::factor_grid(nelem);
    f.values = detail::random_values(f.size(), seed, 0.0, 1.0);
    return f;
  }
};

// Boundary exchange (edge points averaged pairwise with the adjacent
// element), then a per-point Laplacian relaxation within each element level.
// Three pure phases with flushing barriers between them; each phase reads
// one array and writes the other, so no worker ever reads a peer's
// in-flight writes. Bit-exact class; the pairwise means conserve the global
// sum exactly because both partners compute the same commutative average.
inline void dycore_step(CoreGroup& group, ElementField& field, double nu, double dt,
                        ExecMode mode) {
  field.validate();
  detail::require_finite(field.values, "dycore_step");

  const std::size_t np = field.np;
  const std::size_t pver = field.pver;
  SharedArray<double> a(group, "camdyn.a", field.size());
  SharedArray<double> b(group, "camdyn.b", field.size());
  detail::fill_shared(a, std::span<const double>(field.values));

  LoopNest nest("camdyn",
                {{"nelem", static_cast<std::int64_t>(field.nelem)},
                 {"pver", static_cast<std::int64_t>(pver)},
                 {"np", static_cast<std::int64_t>(np)},
                 {"np", static_cast<std::int64_t>(np)}},
                std::vector<std::size_t>{0, 1});

  const auto idx = [&field](std::size_t e, std::size_t k, std::size_t i, std::size_t j) {
    return field.index(e, k, i, j);
  };

  // Phase 1: east-west edge averaging, reads A writes B.
  RegionOptions ew;
  ew.name = "camdyn.exchange_ew";
  ew.category = profile::Category::kComm;
  detail::run_nest(group, nest, mode, [&](const WorkItem& item, RegionContext& ctx) {
    const auto e = static_cast<std::size_t>(item[0]);
    const auto k = static_cast<std::size_t>(item[1]);
    auto& v = ctx.view();
    for (std::size_t i = 0; i < np; ++i) {
      for (std::size_t j = 0; j < np; ++j) {
        double val = v.cached_read(a, idx(e, k, i, j));
        if (j == np - 1)
          val = 0.5 * (val + v.cached_read(a, idx(field.east(e), k, i, 0)));
        else if (j == 0)
          val = 0.5 * (val + v.cached_read(a, idx(field.west(e), k, i, np - 1)));
        v.cached_write(b, idx(e, k, i, j), val);
      }
    }
  }, ew);

  // Phase 2: north-south edge averaging, reads B writes A.
  RegionOptions ns;
  ns.name = "camdyn.exchange_ns";
  ns.category = profile::Category::kComm;
  detail::run_nest(group, nest, mode, [&](const WorkItem& item, RegionContext& ctx) {
    const auto e = static_cast<std::size_t>(item[0]);
    const auto k = static_cast<std::size_t>(item[1]);
    auto& v = ctx.view();
    for (std::size_t i = 0; i < np; ++i) {
      for (std::size_t j = 0; j < np; ++j) {
        double val = v.cached_read(b, idx(e, k, i, j));
        if (i == np - 1)
          val = 0.5 * (val + v.cached_read(b, idx(field.north(e), k, 0, j)));
        else if (i == 0)
          val = 0.5 * (val + v.cached_read(b, idx(field.south(e), k, np - 1, j)));
        v.cached_write(a, idx(e, k, i, j), val);
      }
    }
  }, ns);

  // Phase 3: in-element Laplacian relaxation, reads A writes B.
  RegionOptions lap;
  lap.name = "camdyn.laplacian";
  detail::run_nest(group, nest, mode, [&](const WorkItem& item, RegionContext& ctx) {
    const auto e = static_cast<std::size_t>(item[0]);
    const auto k = static_cast<std::size_t>(item[1]);
    auto& v = ctx.view();
    for (std::size_t i = 0; i < np; ++i) {
      for (std::size_t j = 0; j < np; ++j) {
        const double c = v.cached_read(a, idx(e, k, i, j));
        const double up = i + 1 < np ? v.cached_read(a, idx(e, k, i + 1, j)) : c;
        const double dn = i > 0 ? v.cached_read(a, idx(e, k, i - 1, j)) : c;
        const double ri = j + 1 < np ? v.cached_read(a, idx(e, k, i, j + 1)) : c;
        const double le = j > 0 ? v.cached_read(a, idx(e, k, i, j - 1)) : c;
        const double out = c + nu * dt * ((up - c) + (dn - c) + (ri - c) + (le - c));
        v.cached_write(b, idx(e, k, i, j), out);
      }
    }
  }, lap);

  detail::read_shared(b, std::span<double>(field.values));
}

// ---- vertical prefix sum (OMEGA-style column dependency) -------------------

// omega[k] = sum_{j<=k} div[j]*dp[j]. The offloaded form does a local scan
// per contiguous chunk, then one worker propagates chunk carries in rank
// order, then chunks add their carry. Carries reorder additions, so this is
// the tolerance-class kernel (<= 1e-12 relative vs the serial scan); with
// one worker the carry is zero and the result is bit-identical.
inline std::vector<double> vertical_prefix_sum(CoreGroup& group, std::span<const double> div,
                                               std::span<const double> dp, ExecMode mode) {
  if (div.size() != dp.size())
    throw LengthMismatch("vertical_prefix_sum: div and dp lengths differ");
  const std::size_t n = div.size();
  std::vector<double> omega(n);
  if (n == 0) return omega;

  if (mode == ExecMode::kSerial) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      acc += div[k] * dp[k];
      omega[k] = acc;
    }
    return omega;
  }

  const std::size_t n_workers = static_cast<std::size_t>(group.n_cpes());
  SharedArray<double> a_div(group, "omega.div", n);
  SharedArray<double> a_dp(group, "omega.dp", n);
  SharedArray<double> a_omega(group, "omega.out", n);
  SharedArray<double> a_sums(group, "omega.sums", n_workers);
  SharedArray<double> a_carry(group, "omega.carry", n_workers);
  detail::fill_shared(a_div, div);
  detail::fill_shared(a_dp, dp);

  RegionOptions opts;
  opts.name = "omega.scan";
  offload::parallel_region(group, [&](RegionContext& ctx) {
    auto& v = ctx.view();
    const auto w = static_cast<std::size_t>(ctx.worker_id());
    const std::size_t chunk = (n + n_workers - 1) / n_workers;
    const std::size_t lo = std::min(n, w * chunk);
    const std::size_t hi = std::min(n, lo + chunk);

    double acc = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      acc += v.cached_read(a_div, k) * v.cached_read(a_dp, k);
      v.cached_write(a_omega, k, acc);
    }
    v.cached_write(a_sums, w, acc);
    ctx.barrier();

    ctx.single([&] {
      double carry = 0.0;
      for (std::size_t ww = 0; ww < n_workers; ++ww) {
        v.cached_write(a_carry, ww, carry);
        carry += v.cached_read(a_sums, ww);
      }
    });

    const double carry = v.cached_read(a_carry, w);
    if (carry != 0.0) {
      for (std::size_t k = lo; k < hi; ++k)
        v.cached_write(a_omega, k, v.cached_read(a_omega, k) + carry);
    }
  }, opts);

  detail::read_shared(a_omega, std::span<double>(omega));
  return omega;
}

// ---- POP block field and mixing kernels ------------------------------------

struct BlockField {
  std::size_t mxblk = 0, ncat = 1, nlayer = 0, nyblk = 0, nxblk = 0;
  std::vector<double> values;  // [block][cat][layer][y][x]

  std::size_t size() const { return mxblk * ncat * nlayer * nyblk * nxblk; }
  std::size_t index(std::size_t b, std::size_t c, std::size_t l, std::size_t y,
                    std::size_t x) const {
    return (((b * ncat + c) * nlayer + l) * nyblk + y) * nxblk + x;
  }
  std::vector<std::uint64_t> dims() const { return {mxblk, ncat, nlayer, nyblk, nxblk}; }

  void validate() const {
    if (mxblk == 0 || ncat == 0 || nlayer == 0 || nyblk == 0 || nxblk == 0)
      throw InvalidSpec("BlockField: all dims must be positive");
    if (values.size() != size()) throw InvalidSpec("BlockField: values do not match dims");
  }

  static BlockField random(std::size_t mxblk, std::size_t ncat, std::size_t nlayer,
                           std::size_t nyblk, std::size_t nxblk, std::uint64_t seed) {
    BlockField f;
    f.mxblk = mxblk;
    f.ncat = ncat;
    f.nlayer = nlayer;
    f.nyblk = nyblk;
    f.nxblk = nxblk;
    f.values = detail::random_values(f.size(), seed, 0.0, 1.0);
    return f;
  }
};

struct VmixParams {
  double kappa = 0.5;
  double dt = 1.0;
};

// Implicit vertical diffusion: a Thomas tridiagonal sweep along nlayer for
// every column, parallel over nyblk rows ("thin and tall" blocks make rows
// the abundant axis). Insulating ends; in place per column. Bit-exact class.
inline void pop_vmix_step(CoreGroup& group, BlockField& field, const VmixParams& params,
                          ExecMode mode) {
  field.validate();
  const std::size_t nlayer = field.nlayer;
  const double r = params.kappa * params.dt;

  // The elimination pivots depend only on r and nlayer, not on the data, so
  // singularity is checked once up front instead of inside every column.
  {
    const auto diag = [&](std::size_t k) {
      return 1.0 + r * ((k > 0 ? 1.0 : 0.0) + (k + 1 < nlayer ? 1.0 : 0.0));
    };
    double m = diag(0);
    if (m == 0.0) throw SingularSystem("pop_vmix_step: zero pivot at layer 0");
    double cw = (nlayer > 1 ? -r : 0.0) / m;
    for (std::size_t k = 1; k < nlayer; ++k) {
      m = diag(k) - (-r) * cw;
      if (m == 0.0)
        throw SingularSystem("pop_vmix_step: zero pivot at layer " + std::to_string(k));
      cw = (k + 1 < nlayer ? -r : 0.0) / m;
    }
  }

  SharedArray<double> a(group, "popvmix.a", field.size());
  detail::fill_shared(a, std::span<const double>(field.values));

  LoopNest nest("popvmix",
                {{"mxblk", static_cast<std::int64_t>(field.mxblk)},
                 {"nlayer", static_cast<std::int64_t>(nlayer)},
                 {"nyblk", static_cast<std::int64_t>(field.nyblk)},
                 {"nxblk", static_cast<std::int64_t>(field.nxblk)}},
                std::vector<std::string>{"nyblk"});

  detail::run_nest(group, nest, mode, [&](const WorkItem& item, RegionContext& ctx) {
    const auto y = static_cast<std::size_t>(item[0]);
    auto& v = ctx.view();

    std::vector<double> host_cw, host_dw;
    std::span<double> cw, dw;
    std::size_t off_cw = 0, off_dw = 0;
    if (ctx.is_mpe()) {
      host_cw.resize(nlayer);
      host_dw.resize(nlayer);
      cw = host_cw;
      dw = host_dw;
    } else {
      off_cw = v.ldm_alloc(nlayer * sizeof(double));
      off_dw = v.ldm_alloc(nlayer * sizeof(double));
      cw = v.ldm_span<double>(off_cw, nlayer);
      dw = v.ldm_span<double>(off_dw, nlayer);
    }

    const auto diag = [&](std::size_t k) {
      const double links = (k > 0 ? 1.0 : 0.0) + (k + 1 < nlayer ? 1.0 : 0.0);
      return 1.0 + r * links;
    };

    for (std::size_t b = 0; b < field.mxblk; ++b) {
      for (std::size_t c = 0; c < field.ncat; ++c) {
        for (std::size_t x = 0; x < field.nxblk; ++x) {
          const auto cell = [&](std::size_t k) { return field.index(b, c, k, y, x); };
          // Forward elimination; pivots were validated nonzero up front.
          const double b0 = diag(0);
          cw[0] = (nlayer > 1 ? -r : 0.0) / b0;
          dw[0] = v.cached_read(a, cell(0)) / b0;
          for (std::size_t k = 1; k < nlayer; ++k) {
            const double m = diag(k) - (-r) * cw[k - 1];
            cw[k] = (k + 1 < nlayer ? -r : 0.0) / m;
            dw[k] = (v.cached_read(a, cell(k)) - (-r) * dw[k - 1]) / m;
          }
          // Back substitution, writing the solved column in place.
          double next = dw[nlayer - 1];
          v.cached_write(a, cell(nlayer - 1), next);
          for (std::size_t k = nlayer - 1; k-- > 0;) {
            next = dw[k] - cw[k] * next;
            v.cached_write(a, cell(k), next);
          }
        }
      }
    }

    if (!ctx.is_mpe()) {
      v.ldm_free(off_dw);
      v.ldm_free(off_cw);
    }
  });

  detail::read_shared(a, std::span<double>(field.values));
}

struct HmixParams {
  double nu = 0.1;
};

// Per-layer 5-point horizontal Laplacian, parallel over nlayer. Blocks tile
// the x direction into a periodic ring (cross-block halo); y boundaries are
// insulating. Reads one array, writes another. Bit-exact class.
inline void pop_hmix_step(CoreGroup& group, BlockField& field, const HmixParams& params,
                          ExecMode mode) {
  field.validate();
  const std::size_t ny = field.nyblk, nx = field.nxblk;
  const std::size_t total_x = field.mxblk * nx;

  SharedArray<double> a(group, "pophmix.a", field.size());
  SharedArray<double> b(group, "pophmix.b", field.size());
  detail::fill_shared(a, std::span<const double>(field.values));

  LoopNest nest("pophmix",
                {{"mxblk", static_cast<std::int64_t>(field.mxblk)},
                 {"ncat", static_cast<std::int64_t>(field.ncat)},
                 {"nlayer", static_cast<std::int64_t>(field.nlayer)},
                 {"nyblk", static_cast<std::int64_t>(ny)},
                 {"nxblk", static_cast<std::int64_t>(nx)}},
                std::vector<std::string>{"nlayer"});

  detail::run_nest(group, nest, mode, [&](const WorkItem& item, RegionContext& ctx) {
    const auto l = static_cast<std::size_t>(item[0]);
    auto& v = ctx.view();
    for (std::size_t blk = 0; blk < field.mxblk; ++blk) {
      for (std::size_t c = 0; c < field.ncat; ++c) {
        for (std::size_t y = 0; y < ny; ++y) {
          for (std::size_t x = 0; x < nx; ++x) {
            const double ctr = v.cached_read(a, field.index(blk, c, l, y, x));
            const double up =
                y + 1 < ny ? v.cached_read(a, field.index(blk, c, l, y + 1, x)) : ctr;
            const double dn = y > 0 ? v.cached_read(a, field.index(blk, c, l, y - 1, x)) : ctr;
            const std::size_t gx = blk * nx + x;
            const std::size_t gx_e = (gx + 1) % total_x;
            const std::size_t gx_w = (gx + total_x - 1) % total_x;
            const double ea = v.cached_read(a, field.index(gx_e / nx, c, l, y, gx_e % nx));
            const double we = v.cached_read(a, field.index(gx_w / nx, c, l, y, gx_w % nx));
            const double out =
                ctr + params.nu * ((up - ctr) + (dn - ctr) + (ea - ctr) + (we - ctr));
            v.cached_write(b, field.index(blk, c, l, y, x), out);
          }
        }
      }
    }
  });

  detail::read_shared(b, std::span<double>(field.values));
}

// ---- CICE EVP subcycling ----------------------------------------------------

struct EvpParams {
  double gamma = 0.2;   // relaxation toward the 4-neighbor mean
  double forcing = 0.0;
};

// Per-block relaxation repeated n_subcycles times. Halo columns are
// snapshotted once per step (phase 1), so blocks are fully independent
// during the subcycles and exchange boundaries only between steps. Blocks
// form a periodic ring in x. Parallel on mxblk; bit-exact class.
inline void cice_evp_step(CoreGroup& group, BlockField& field, int n_subcycles,
                          const EvpParams& params, ExecMode mode) {
  field.validate();
  if (n_subcycles < 1) throw InvalidArgument("cice_evp_step: n_subcycles must be >= 1");
  const std::size_t ny = field.nyblk, nx = field.nxblk;
  const std::size_t mxblk = field.mxblk;

  SharedArray<double> a(group, "ciceevp.a", field.size());
  // Edge snapshot: [block][cat][layer][y][slot], slot 0 = west column (x=0),
  // slot 1 = east column (x=nx-1).
  SharedArray<double> halo(group, "ciceevp.halo", mxblk * field.ncat * field.nlayer * ny * 2);
  detail::fill_shared(a, std::span<const double>(field.values));
  const auto halo_index = [&](std::size_t b, std::size_t c, std::size_t l, std::size_t y,
                              std::size_t slot) {
    return (((b * field.ncat + c) * field.nlayer + l) * ny + y) * 2 + slot;
  };

  LoopNest nest("ciceevp",
                {{"mxblk", static_cast<std::int64_t>(mxblk)},
                 {"ncat", static_cast<std::int64_t>(field.ncat)},
                 {"nlayer", static_cast<std::int64_t>(field.nlayer)},
                 {"nyblk", static_cast<std::int64_t>(ny)},
                 {"nxblk", static_cast<std::int64_t>(nx)}},
                std::vector<std::string>{"mxblk"});

  // Phase 1: snapshot own edge columns.
  RegionOptions halo_opts;
  halo_opts.name = "ciceevp.halo";
  halo_opts.category = profile::Category::kComm;
  detail::run_nest(group, nest, mode, [&](const WorkItem& item, RegionContext& ctx) {
    const auto b = static_cast<std::size_t>(item[0]);
    auto& v = ctx.view();
    for (std::size_t c = 0; c < field.ncat; ++c) {
      for (std::size_t l = 0; l < field.nlayer; ++l) {
        for (std::size_t y = 0; y < ny; ++y) {
          v.cached_write(halo, halo_index(b, c, l, y, 0),
                         v.cached_read(a, field.index(b, c, l, y, 0)));
          v.cached_write(halo, halo_index(b, c, l, y, 1),
                         v.cached_read(a, field.index(b, c, l, y, nx - 1)));
        }
      }
    }
  }, halo_opts);

  // Phase 2: subcycled relaxation against frozen halos.
  RegionOptions relax_opts;
  relax_opts.name = "ciceevp.relax";
  detail::run_nest(group, nest, mode, [&](const WorkItem& item, RegionContext& ctx) {
    const auto b = static_cast<std::size_t>(item[0]);
    const std::size_t b_east = (b + 1) % mxblk;
    const std::size_t b_west = (b + mxblk - 1) % mxblk;
    auto& v = ctx.view();
    const std::size_t slice = ny * nx;

    std::vector<double> host_u, host_w, host_wl, host_el;
    std::size_t off_u = 0, off_w = 0, off_wl = 0, off_el = 0;
    if (ctx.is_mpe()) {
      host_u.resize(slice);
      host_w.resize(slice);
      host_wl.resize(ny);
      host_el.resize(ny);
    } else {
      off_u = v.ldm_alloc(slice * sizeof(double));
      off_w = v.ldm_alloc(slice * sizeof(double));
      off_wl = v.ldm_alloc(ny * sizeof(double));
      off_el = v.ldm_alloc(ny * sizeof(double));
    }

    for (std::size_t c = 0; c < field.ncat; ++c) {
      for (std::size_t l = 0; l < field.nlayer; ++l) {
        const std::size_t slice_base = field.index(b, c, l, 0, 0);
        std::span<double> u, w, wl, el;
        if (ctx.is_mpe()) {
          u = host_u;
          w = host_w;
          wl = host_wl;
          el = host_el;
          for (std::size_t i = 0; i < slice; ++i) u[i] = v.cached_read(a, slice_base + i);
        } else {
          u = v.ldm_span<double>(off_u, slice);
          w = v.ldm_span<double>(off_w, slice);
          wl = v.ldm_span<double>(off_wl, ny);
          el = v.ldm_span<double>(off_el, ny);
          v.dma_get(a, slice_base * sizeof(double), off_u, slice * sizeof(double));
        }
        // West neighbor's east column and east neighbor's west column.
        for (std::size_t y = 0; y < ny; ++y) {
          wl[y] = v.cached_read(halo, halo_index(b_west, c, l, y, 1));
          el[y] = v.cached_read(halo, halo_index(b_east, c, l, y, 0));
        }

        for (int s = 0; s < n_subcycles; ++s) {
          for (std::size_t y = 0; y < ny; ++y) {
            for (std::size_t x = 0; x < nx; ++x) {
              const double ctr = u[y * nx + x];
              const double up = y + 1 < ny ? u[(y + 1) * nx + x] : ctr;
              const double dn = y > 0 ? u[(y - 1) * nx + x] : ctr;
              const double ea = x + 1 < nx ? u[y * nx + x + 1] : el[y];
              const double we = x > 0 ? u[y * nx + x - 1] : wl[y];
              w[y * nx + x] =
                  ctr + params.gamma * (0.25 * (((up + dn) + (ea + we))) - ctr) +
                  params.forcing;
            }
          }
          std::swap(u, w);
        }

        if (ctx.is_mpe()) {
          for (std::size_t i = 0; i < slice; ++i) v.cached_write(a, slice_base + i, u[i]);
        } else {
          // After the swaps `u` views the buffer holding the result.
          const std::size_t off_result = (n_subcycles % 2 == 0) ? off_u : off_w;
          v.dma_put(off_result, a, slice_base * sizeof(double), slice * sizeof(double));
        }
      }
    }

    if (!ctx.is_mpe()) {
      v.ldm_free(off_el);
      v.ldm_free(off_wl);
      v.ldm_free(off_w);
      v.ldm_free(off_u);
    }
  }, relax_opts);

  detail::read_shared(a, std::span<double>(field.values));
}

// ---- problem-size presets ---------------------------------------------------

// Four desk-scale size levels. The atmosphere-style names (ne30..ne480) and
// the ocean/ice-style names (ts015..ts003) address the same levels, so one
// preset flag scales a coupled run consistently. Element and block counts
// grow like the real resolution hierarchies; the block shape itself stays
// "thin and tall".
struct CamDims {
  std::size_t nelem, pver, np, nchunks, ncols;
};
struct PopDims {
  std::size_t mxblk, ncat, nlayer, nyblk, nxblk;
};
struct CiceDims {
  std::size_t mxblk, ncat, nlayer, nyblk, nxblk;
};

class Presets {
 public:
  static constexpr int kLevels = 4;

  static int level(const std::string& name) {
    static const char* cam_names[] = {"ne30", "ne120", "ne240", "ne480"};
    static const char* ocean_names[] = {"ts015", "ts010", "ts005", "ts003"};
    if (name.empty() || name == "default") return 0;
    for (int i = 0; i < kLevels; ++i)
      if (name == cam_names[i] || name == ocean_names[i]) return i;
    throw InvalidArgument("unknown preset '" + name + "'");
  }

  static CamDims cam(int level) {
    check(level);
    static constexpr std::size_t scale[] = {1, 16, 64, 256};
    return CamDims{4 * scale[level], 32, 4, 36 * scale[level], 1};
  }

  static PopDims pop(int level) {
    check(level);
    static constexpr std::size_t rows[] = {56, 84, 168, 280};
    return PopDims{1, 1, 60, rows[level], 10};
  }

  static CiceDims cice(int level) {
    check(level);
    static constexpr std::size_t blocks[] = {32, 72, 288, 800};
    return CiceDims{blocks[level], 5, 8, 4, 4};
  }

  static std::size_t prefix_len(int level) {
    check(level);
    return std::size_t{1024} << level;
  }

  static CamDims cam(const std::string& name) { return cam(level(name)); }
  static PopDims pop(const std::string& name) { return pop(level(name)); }
  static CiceDims cice(const std::string& name) { return cice(level(name)); }
  static std::size_t prefix_len(const std::string& name) { return prefix_len(level(name)); }

 private:
  static void check(int level) {
    if (level < 0 || level >= kLevels)
      throw InvalidArgument("preset level " + std::to_string(level) + " out of range");
  }
};

}  // namespace o2proxy::kernels
