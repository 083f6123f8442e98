#pragma once

// OpenMP-flavored offload runtime over the core-group model. A parallel
// region runs one body per CPE worker; loop nests are split into contiguous
// chunks of ceil(items/workers) flattened iterations in ascending worker
// order. Synchronization is flush-based because the cached windows are not
// coherent: a barrier flushes before the rendezvous and invalidates after,
// single/critical do the same around their bodies.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "o2proxy/archsim.hpp"
#include "o2proxy/errors.hpp"
#include "o2proxy/profile.hpp"

namespace o2proxy::offload {

using archsim::CoreGroup;
using archsim::ScratchView;

struct Axis {
  std::string name;
  std::int64_t extent = 0;
};

// A named rectangular loop nest with a subset of axes marked parallel.
// Parallel axes are flattened row-major (first listed axis slowest).
struct LoopNest {
  std::string name;
  std::vector<Axis> axes;
  std::vector<std::size_t> parallel_axes;  // indices into axes
  // Iterations per worker; 0 means ceil(items/workers) at dispatch.
  std::int64_t chunk = 0;

  LoopNest() = default;

  LoopNest(std::string name_, std::vector<Axis> axes_, std::vector<std::size_t> parallel)
      : name(std::move(name_)), axes(std::move(axes_)), parallel_axes(std::move(parallel)) {}

  LoopNest(std::string name_, std::vector<Axis> axes_,
           const std::vector<std::string>& parallel_names)
      : name(std::move(name_)), axes(std::move(axes_)) {
    for (const auto& pn : parallel_names) {
      std::size_t found = axes.size();
      for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i].name == pn) {
          if (found != axes.size())
            throw InvalidArgument("LoopNest '" + name + "': axis name '" + pn +
                                  "' is ambiguous; select it by index");
          found = i;
        }
      }
      if (found == axes.size())
        throw InvalidArgument("LoopNest '" + name + "': no axis named '" + pn + "'");
      parallel_axes.push_back(found);
    }
  }

  void validate() const {
    if (axes.empty()) throw InvalidSpec("LoopNest '" + name + "': no axes");
    for (const auto& a : axes)
      if (a.extent < 0)
        throw InvalidSpec("LoopNest '" + name + "': axis '" + a.name + "' has negative extent");
    if (parallel_axes.empty())
      throw InvalidSpec("LoopNest '" + name + "': no parallel axes");
    if (parallel_axes.size() > 8)
      throw InvalidSpec("LoopNest '" + name + "': more than 8 parallel axes");
    std::vector<std::size_t> seen;
    for (std::size_t idx : parallel_axes) {
      if (idx >= axes.size())
        throw InvalidSpec("LoopNest '" + name + "': parallel axis index out of range");
      if (std::find(seen.begin(), seen.end(), idx) != seen.end())
        throw InvalidSpec("LoopNest '" + name + "': duplicate parallel axis");
      seen.push_back(idx);
    }
    if (chunk < 0) throw InvalidSpec("LoopNest '" + name + "': negative chunk");
  }

  std::int64_t parallel_items() const {
    std::int64_t total = 1;
    for (std::size_t idx : parallel_axes) total *= axes[idx].extent;
    return total;
  }
};

inline constexpr std::size_t kMaxParallelAxes = 8;

// One flattened iteration of a nest's parallel axes, decoded back into
// per-axis coordinates.
class WorkItem {
 public:
  WorkItem(const LoopNest& nest, std::int64_t flat) : nest_(&nest), flat_(flat) {
    n_ = nest.parallel_axes.size();
    std::int64_t rem = flat;
    for (std::size_t k = n_; k-- > 0;) {
      const std::int64_t extent = nest.axes[nest.parallel_axes[k]].extent;
      values_[k] = rem % extent;
      rem /= extent;
    }
  }

  std::int64_t flat() const { return flat_; }
  std::size_t rank() const { return n_; }

  // Coordinate along the k-th parallel axis, in the order they were listed.
  std::int64_t operator[](std::size_t k) const {
    if (k >= n_) throw OutOfRange("WorkItem: parallel axis index out of range");
    return values_[k];
  }

  std::int64_t axis(std::string_view name) const {
    for (std::size_t k = 0; k < n_; ++k)
      if (nest_->axes[nest_->parallel_axes[k]].name == name) return values_[k];
    throw OutOfRange("WorkItem: no parallel axis named '" + std::string(name) + "'");
  }

  std::vector<std::int64_t> coords() const {
    return std::vector<std::int64_t>(values_.begin(), values_.begin() + n_);
  }

  const LoopNest& nest() const { return *nest_; }

 private:
  const LoopNest* nest_;
  std::array<std::int64_t, kMaxParallelAxes> values_{};
  std::size_t n_ = 0;
  std::int64_t flat_ = 0;
};

enum class StackPlacement { kLdm, kPrivate };

struct StackPolicy {
  // Per-worker stack request at or below this goes to LDM if it fits.
  std::size_t ldm_stack_threshold = 64 * 1024;
};

// Decides where a worker's region stack lives and reserves LDM when chosen.
// The caller owns the matching release_stack on the kLdm path.
inline StackPlacement place_stack(const StackPolicy& policy, std::size_t requested_bytes,
                                  ScratchView& view) {
  if (requested_bytes <= policy.ldm_stack_threshold &&
      requested_bytes <= view.remaining_bytes()) {
    view.reserve_stack(requested_bytes);
    return StackPlacement::kLdm;
  }
  return StackPlacement::kPrivate;
}

struct RegionOptions {
  std::string name;  // falls back to the nest name or "region"
  std::optional<profile::Category> category;
  std::size_t stack_request = 0;
  StackPolicy stack_policy{};
};

namespace detail {

// Thrown into workers whose region was poisoned by another worker's error;
// never reported, the original error is.
class RegionPoisoned : public Error {
 public:
  RegionPoisoned() : Error("region poisoned by a peer worker's error") {}
};

struct RegionState {
  CoreGroup* group = nullptr;
  std::uint64_t region_id = 0;
  int n_workers = 0;
  std::chrono::milliseconds timeout{0};

  std::mutex mu;
  std::condition_variable cv;
  int arrived = 0;
  std::uint64_t generation = 0;
  std::atomic<std::uint64_t> epoch{0};
  bool poisoned = false;

  std::map<std::size_t, int> single_claims;  // arbitration site -> winner

  std::mutex crit_mu;
  std::map<std::string, std::unique_ptr<std::mutex>, std::less<>> criticals;

  void poison() {
    {
      std::lock_guard<std::mutex> lock(mu);
      poisoned = true;
    }
    cv.notify_all();
  }

  std::mutex& critical_mutex(std::string_view name) {
    std::lock_guard<std::mutex> lock(crit_mu);
    auto it = criticals.find(name);
    if (it == criticals.end())
      it = criticals.emplace(std::string(name), std::make_unique<std::mutex>()).first;
    return *it->second;
  }
};

inline std::uint64_t next_region_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

// Per-worker handle inside a region: identity, the worker's scratch view,
// and the synchronization operations.
class RegionContext {
 public:
  RegionContext(detail::RegionState* state, ScratchView* view, int worker_id, bool is_mpe,
                profile::TimerTree* timer = nullptr)
      : state_(state), view_(view), worker_id_(worker_id), is_mpe_(is_mpe), timer_(timer) {}

  int worker_id() const { return worker_id_; }
  int n_workers() const { return state_->n_workers; }
  bool is_mpe() const { return is_mpe_; }
  ScratchView& view() { return *view_; }
  std::uint64_t region_id() const { return state_->region_id; }

  // Number of completed barriers in this region; identical on every worker
  // between consecutive barriers.
  std::uint64_t epoch() const { return state_->epoch.load(std::memory_order_acquire); }

  // Flush own cache, wait for all workers, invalidate own cache. A region
  // with a single worker returns immediately after the flush/invalidate.
  void barrier() {
    view_->flush_cache();
    if (state_->n_workers == 1) {
      state_->epoch.fetch_add(1, std::memory_order_acq_rel);
      view_->invalidate_cache();
      return;
    }
    std::optional<profile::TimerTree::Scope> idle;
    if (timer_ != nullptr) idle.emplace(*timer_, "barrier_wait", profile::Category::kIdle);
    {
      std::unique_lock<std::mutex> lock(state_->mu);
      if (state_->poisoned) throw detail::RegionPoisoned();
      const std::uint64_t gen = state_->generation;
      if (++state_->arrived == state_->n_workers) {
        state_->arrived = 0;
        ++state_->generation;
        state_->epoch.fetch_add(1, std::memory_order_acq_rel);
        lock.unlock();
        state_->cv.notify_all();
      } else {
        state_->group->throttle_release();
        const bool ok = state_->cv.wait_for(lock, state_->timeout, [this, gen] {
          return state_->generation != gen || state_->poisoned;
        });
        const bool poisoned = state_->poisoned && state_->generation == gen;
        lock.unlock();
        state_->group->throttle_acquire();
        if (poisoned) throw detail::RegionPoisoned();
        if (!ok) {
          state_->poison();
          throw DeadlockTimeout("barrier: worker " + std::to_string(worker_id_) +
                                " timed out; not all workers reached the barrier");
        }
      }
    }
    idle.reset();
    view_->invalidate_cache();
  }

  // Exactly one worker (the first to arrive at this call site) runs the
  // body; everyone then joins a flushing barrier so the body's shared
  // writes are visible to all.
  void single(const std::function<void()>& body) {
    const std::size_t site = single_site_++;
    bool winner = false;
    {
      std::lock_guard<std::mutex> lock(state_->mu);
      winner = state_->single_claims.emplace(site, worker_id_).second;
    }
    if (winner) {
      view_->flush_cache();  // publish pre-existing writes before the body
      body();
    }
    barrier();
  }

  // Mutual exclusion by name. Flush+invalidate on entry and exit give the
  // section a fresh view of shared data and publish its writes.
  void critical(std::string_view name, const std::function<void()>& body) {
    if (std::find(held_criticals_.begin(), held_criticals_.end(), name) !=
        held_criticals_.end())
      throw SelfDeadlock("critical '" + std::string(name) + "' re-entered by worker " +
                         std::to_string(worker_id_));
    std::mutex& m = state_->critical_mutex(name);
    m.lock();
    held_criticals_.emplace_back(name);
    view_->flush_cache();
    view_->invalidate_cache();
    try {
      body();
    } catch (...) {
      held_criticals_.pop_back();
      m.unlock();
      throw;
    }
    view_->flush_cache();
    view_->invalidate_cache();
    held_criticals_.pop_back();
    m.unlock();
  }

 private:
  detail::RegionState* state_;
  ScratchView* view_;
  int worker_id_;
  bool is_mpe_;
  profile::TimerTree* timer_;
  std::size_t single_site_ = 0;
  std::vector<std::string> held_criticals_;
};

using RegionBody = std::function<void(RegionContext&)>;
using ForBody = std::function<void(const WorkItem&, RegionContext&)>;

namespace detail {

class RegionGuard {
 public:
  explicit RegionGuard(CoreGroup& g) : group_(&g) { group_->begin_region(); }
  ~RegionGuard() { group_->end_region(); }
  RegionGuard(const RegionGuard&) = delete;
  RegionGuard& operator=(const RegionGuard&) = delete;

 private:
  CoreGroup* group_;
};

struct StackLease {
  ScratchView* view = nullptr;
  std::size_t bytes = 0;
  StackPlacement placement = StackPlacement::kPrivate;

  StackLease(ScratchView& v, const StackPolicy& policy, std::size_t request) : view(&v) {
    placement = place_stack(policy, request, v);
    if (placement == StackPlacement::kLdm) bytes = request;
  }
  ~StackLease() {
    if (placement == StackPlacement::kLdm) view->release_stack(bytes);
  }
};

inline std::string index_string(const std::vector<std::int64_t>& coords) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (i > 0) out << ", ";
    out << coords[i];
  }
  out << ')';
  return out.str();
}

}  // namespace detail

// SPMD region: every CPE worker runs the body once. Ends with an implicit
// flushing barrier so all shared writes are visible on return.
inline void parallel_region(CoreGroup& group, const RegionBody& body,
                            const RegionOptions& options = {}) {
  detail::RegionGuard guard(group);
  detail::RegionState state;
  state.group = &group;
  state.region_id = detail::next_region_id();
  state.n_workers = group.n_cpes();
  state.timeout = group.sync_timeout();
  const std::string region_name = options.name.empty() ? "region" : options.name;
  const profile::Category category = options.category.value_or(profile::Category::kCpeCompute);
  profile::Profiler* prof = group.profiler();
  if (prof != nullptr) prof->resize_workers(group.n_cpes());

  group.run_on_workers([&](int worker_id) {
    ScratchView& view = group.cpe_view(worker_id);
    profile::TimerTree* timer = prof != nullptr ? &prof->worker(worker_id) : nullptr;
    std::optional<profile::TimerTree::Scope> scope;
    if (timer != nullptr) scope.emplace(*timer, region_name, category);
    detail::StackLease stack(view, options.stack_policy, options.stack_request);
    RegionContext ctx(&state, &view, worker_id, false, timer);
    try {
      body(ctx);
      ctx.barrier();
    } catch (const detail::RegionPoisoned&) {
      // A peer already recorded the original error.
      view.invalidate_cache();
    } catch (...) {
      state.poison();
      view.invalidate_cache();
      throw;
    }
  });
}

namespace detail {

inline std::int64_t resolve_chunk(const LoopNest& nest, int n_workers) {
  const std::int64_t total = nest.parallel_items();
  std::int64_t chunk = nest.chunk;
  if (chunk == 0) chunk = (total + n_workers - 1) / n_workers;
  if (chunk * n_workers < total)
    throw InvalidSpec("LoopNest '" + nest.name + "': chunk " + std::to_string(chunk) +
                      " x " + std::to_string(n_workers) + " workers cannot cover " +
                      std::to_string(total) + " iterations");
  return chunk;
}

inline void run_items(const LoopNest& nest, std::int64_t lo, std::int64_t hi,
                      const ForBody& body, RegionContext& ctx) {
  for (std::int64_t flat = lo; flat < hi; ++flat) {
    WorkItem item(nest, flat);
    try {
      body(item, ctx);
    } catch (const RegionPoisoned&) {
      throw;
    } catch (const Error& e) {
      throw BodyPanicked("loop '" + nest.name + "' failed at index " +
                             index_string(item.coords()) + ": " + e.what(),
                         item.coords());
    } catch (const std::exception& e) {
      throw BodyPanicked("loop '" + nest.name + "' failed at index " +
                             index_string(item.coords()) + ": " + e.what(),
                         item.coords());
    }
  }
}

}  // namespace detail

// Work-shared loop: the nest's flattened parallel iterations are split into
// contiguous chunks, chunk k on worker k. Every iteration runs exactly once;
// the mapping is a pure function of (items, workers, chunk).
inline void parallel_for(CoreGroup& group, const LoopNest& nest, const ForBody& body,
                         RegionOptions options = {}) {
  nest.validate();
  const std::int64_t total = nest.parallel_items();
  const std::int64_t chunk = detail::resolve_chunk(nest, group.n_cpes());
  if (options.name.empty()) options.name = nest.name;
  parallel_region(
      group,
      [&](RegionContext& ctx) {
        const std::int64_t lo = std::min<std::int64_t>(total, ctx.worker_id() * chunk);
        const std::int64_t hi = std::min<std::int64_t>(total, lo + chunk);
        detail::run_items(nest, lo, hi, body, ctx);
      },
      options);
}

// Runs the whole nest on the MPE, in flat iteration order, with the same
// body signature and context operations as the parallel path.
inline void dispatch_serial(CoreGroup& group, const LoopNest& nest, const ForBody& body,
                            RegionOptions options = {}) {
  nest.validate();
  detail::RegionGuard guard(group);
  detail::RegionState state;
  state.group = &group;
  state.region_id = detail::next_region_id();
  state.n_workers = 1;
  state.timeout = group.sync_timeout();
  const std::string region_name = options.name.empty() ? nest.name : options.name;
  const profile::Category category = options.category.value_or(profile::Category::kMpeCompute);
  profile::Profiler* prof = group.profiler();
  profile::TimerTree* timer = prof != nullptr ? &prof->mpe() : nullptr;
  std::optional<profile::TimerTree::Scope> scope;
  if (timer != nullptr) scope.emplace(*timer, region_name, category);

  RegionContext ctx(&state, &group.mpe_view(), 0, true, timer);
  detail::run_items(nest, 0, nest.parallel_items(), body, ctx);
  ctx.barrier();
}

}  // namespace o2proxy::offload
