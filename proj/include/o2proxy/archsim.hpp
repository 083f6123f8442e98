#pragma once

// Software model of one SW26010P-style core group: a management core (MPE)
// plus 64 compute cores (CPEs), each with a 256 KB local scratchpad (LDM).
// CPEs reach shared memory through explicit DMA, peer scratchpads through
// RMA, or a software-cached window that is NOT coherent: other workers see
// cached writes only after an explicit flush, and a worker sees fresh shared
// data only after an explicit invalidate.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "json.hpp"
#include "o2proxy/errors.hpp"

namespace o2proxy::profile {
class Profiler;
}  // namespace o2proxy::profile

namespace o2proxy::archsim {

inline constexpr std::size_t kSegmentBytes = 256;

struct CoreGroupSpec {
  int n_cpes = 64;
  std::size_t ldm_bytes = 256 * 1024;
  double dma_bandwidth = 307e9;   // bytes/s, CPE <-> shared memory
  double rma_bandwidth = 460e9;   // bytes/s, CPE <-> CPE scratchpad
  double gmem_bandwidth = 51.2e9; // bytes/s, uncached shared-memory access
  // Fraction of LDM reserved for the cached-window segments. Zero means the
  // cache is not budgeted against LDM capacity.
  double ldm_cache_fraction = 0.0;

  void validate() const {
    if (n_cpes < 1) throw InvalidSpec("CoreGroupSpec: n_cpes must be >= 1");
    if (ldm_bytes == 0) throw InvalidSpec("CoreGroupSpec: ldm_bytes must be > 0");
    if (dma_bandwidth <= 0 || rma_bandwidth <= 0 || gmem_bandwidth <= 0)
      throw InvalidSpec("CoreGroupSpec: bandwidths must be > 0");
    if (ldm_cache_fraction < 0.0 || ldm_cache_fraction > 1.0)
      throw InvalidSpec("CoreGroupSpec: ldm_cache_fraction must be in [0,1]");
  }

  std::size_t cache_budget_bytes() const {
    return static_cast<std::size_t>(ldm_cache_fraction * static_cast<double>(ldm_bytes));
  }

  static CoreGroupSpec from_json(const nlohmann::json& j) {
    CoreGroupSpec s;
    s.n_cpes = j.value("n_cpes", s.n_cpes);
    s.ldm_bytes = j.value("ldm_bytes", s.ldm_bytes);
    s.dma_bandwidth = j.value("dma_bandwidth", s.dma_bandwidth);
    s.rma_bandwidth = j.value("rma_bandwidth", s.rma_bandwidth);
    s.gmem_bandwidth = j.value("gmem_bandwidth", s.gmem_bandwidth);
    s.ldm_cache_fraction = j.value("ldm_cache_fraction", s.ldm_cache_fraction);
    s.validate();
    return s;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"n_cpes", n_cpes},
                          {"ldm_bytes", ldm_bytes},
                          {"dma_bandwidth", dma_bandwidth},
                          {"rma_bandwidth", rma_bandwidth},
                          {"gmem_bandwidth", gmem_bandwidth},
                          {"ldm_cache_fraction", ldm_cache_fraction}};
  }
};

// Byte counters for every modeled transfer class. Thread safe; the modeled
// time is bytes/bandwidth per class, summed.
class CostLedger {
 public:
  explicit CostLedger(const CoreGroupSpec& spec)
      : dma_bw_(spec.dma_bandwidth),
        rma_bw_(spec.rma_bandwidth),
        gmem_bw_(spec.gmem_bandwidth) {}

  void add_dma(std::uint64_t bytes) { dma_bytes_.fetch_add(bytes, std::memory_order_relaxed); }
  void add_rma(std::uint64_t bytes) { rma_bytes_.fetch_add(bytes, std::memory_order_relaxed); }
  void add_gmem(std::uint64_t bytes) { gmem_bytes_.fetch_add(bytes, std::memory_order_relaxed); }

  std::uint64_t dma_bytes() const { return dma_bytes_.load(std::memory_order_relaxed); }
  std::uint64_t rma_bytes() const { return rma_bytes_.load(std::memory_order_relaxed); }
  std::uint64_t gmem_bytes() const { return gmem_bytes_.load(std::memory_order_relaxed); }

  double modeled_seconds() const {
    return static_cast<double>(dma_bytes()) / dma_bw_ +
           static_cast<double>(rma_bytes()) / rma_bw_ +
           static_cast<double>(gmem_bytes()) / gmem_bw_;
  }

  void reset() {
    dma_bytes_.store(0, std::memory_order_relaxed);
    rma_bytes_.store(0, std::memory_order_relaxed);
    gmem_bytes_.store(0, std::memory_order_relaxed);
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"dma_bytes", dma_bytes()},
                          {"rma_bytes", rma_bytes()},
                          {"gmem_bytes", gmem_bytes()},
                          {"modeled_seconds", modeled_seconds()}};
  }

 private:
  std::atomic<std::uint64_t> dma_bytes_{0};
  std::atomic<std::uint64_t> rma_bytes_{0};
  std::atomic<std::uint64_t> gmem_bytes_{0};
  double dma_bw_, rma_bw_, gmem_bw_;
};

class CoreGroup;
class ScratchView;
template <class T>
class SharedArray;

// Untyped shared-memory allocation owned by a core group's memory space.
// Raw access is internally locked; consistency across workers is still the
// caller's job (flush/invalidate or DMA at phase boundaries).
class SharedArrayBase {
 public:
  SharedArrayBase(CoreGroup& group, std::string name, std::size_t bytes);
  virtual ~SharedArrayBase();
  SharedArrayBase(const SharedArrayBase&) = delete;
  SharedArrayBase& operator=(const SharedArrayBase&) = delete;

  const std::string& name() const { return name_; }
  std::size_t size_bytes() const { return bytes_; }
  CoreGroup& group() const { return *group_; }

 protected:
  friend class ScratchView;
  friend class CoreGroup;

  void read_raw(std::size_t offset, std::byte* dst, std::size_t n) const {
    check_range(offset, n);
    std::lock_guard<std::mutex> lock(mu_);
    std::memcpy(dst, data() + offset, n);
  }

  void write_raw(std::size_t offset, const std::byte* src, std::size_t n) {
    check_range(offset, n);
    std::lock_guard<std::mutex> lock(mu_);
    std::memcpy(data() + offset, src, n);
  }

  // Writes back only the bytes a worker actually dirtied, so a flush never
  // clobbers a neighbor's bytes within the same segment.
  void write_masked(std::size_t offset, const std::byte* src, std::size_t n,
                    const std::uint8_t* dirty) {
    check_range(offset, n);
    std::lock_guard<std::mutex> lock(mu_);
    std::byte* d = data() + offset;
    for (std::size_t i = 0; i < n; ++i) {
      if (dirty[i]) d[i] = src[i];
    }
  }

  void check_range(std::size_t offset, std::size_t n) const {
    if (offset + n > bytes_ || offset + n < offset)
      throw OutOfRange("shared array '" + name_ + "': access [" + std::to_string(offset) +
                       ", " + std::to_string(offset + n) + ") exceeds size " +
                       std::to_string(bytes_));
  }

  virtual std::byte* data() = 0;
  virtual const std::byte* data() const = 0;

  // Debug conflict tracking: byte offset -> writing worker, since last flush.
  void debug_note_write(std::size_t offset, std::size_t n, int worker) {
    std::lock_guard<std::mutex> lock(debug_mu_);
    for (std::size_t i = 0; i < n; ++i) {
      auto [it, inserted] = debug_writers_.emplace(offset + i, worker);
      if (!inserted && it->second != worker)
        throw SharedWriteConflict("shared array '" + name_ + "': workers " +
                                  std::to_string(it->second) + " and " + std::to_string(worker) +
                                  " both wrote byte " + std::to_string(offset + i) +
                                  " without an intervening flush/invalidate");
    }
  }

  void debug_clear_writes(std::size_t offset, std::size_t n, int worker) {
    std::lock_guard<std::mutex> lock(debug_mu_);
    auto it = debug_writers_.lower_bound(offset);
    while (it != debug_writers_.end() && it->first < offset + n) {
      if (it->second == worker)
        it = debug_writers_.erase(it);
      else
        ++it;
    }
  }

  CoreGroup* group_;
  std::string name_;
  std::size_t bytes_;
  mutable std::mutex mu_;
  std::mutex debug_mu_;
  std::map<std::size_t, int> debug_writers_;
};

// One worker's private window: its LDM scratchpad plus a non-coherent
// segment cache over shared arrays. The MPE view has no scratchpad or cache;
// its shared accesses go straight to memory at gmem cost.
class ScratchView {
 public:
  ScratchView(CoreGroup& group, int owner, bool is_mpe);
  ScratchView(ScratchView&&) = default;
  ScratchView(const ScratchView&) = delete;
  ScratchView& operator=(const ScratchView&) = delete;

  int owner() const { return owner_; }
  bool is_mpe() const { return is_mpe_; }
  CoreGroup& group() const { return *group_; }

  std::size_t ldm_bytes() const { return ldm_.size(); }
  std::size_t used_bytes() const { return used_; }
  std::size_t stack_bytes() const { return stack_; }
  std::size_t cache_reserved_bytes() const { return cache_budget_; }
  // Bytes available to ldm_alloc right now.
  std::size_t capacity_bytes() const { return ldm_.size() - stack_ - cache_budget_; }
  std::size_t remaining_bytes() const { return capacity_bytes() - used_; }

  // First-fit allocator over the scratchpad. Offsets are byte-granular; a
  // zero-length request returns 0 without recording an allocation.
  std::size_t ldm_alloc(std::size_t bytes) {
    require_cpe("ldm_alloc");
    if (bytes == 0) return 0;
    if (bytes > remaining_bytes())
      throw CapacityExceeded("ldm_alloc: " + std::to_string(bytes) + " bytes requested, " +
                             std::to_string(remaining_bytes()) + " available on worker " +
                             std::to_string(owner_));
    std::size_t prev_end = 0;
    for (const auto& [off, len] : allocs_) {
      if (off - prev_end >= bytes) break;
      prev_end = off + len;
    }
    if (prev_end + bytes > capacity_bytes())
      throw CapacityExceeded("ldm_alloc: " + std::to_string(bytes) +
                             " bytes do not fit contiguously on worker " + std::to_string(owner_));
    allocs_.emplace(prev_end, bytes);
    used_ += bytes;
    return prev_end;
  }

  void ldm_free(std::size_t offset) {
    require_cpe("ldm_free");
    auto it = allocs_.find(offset);
    if (it == allocs_.end())
      throw OutOfRange("ldm_free: offset " + std::to_string(offset) +
                       " is not an active allocation on worker " + std::to_string(owner_));
    used_ -= it->second;
    allocs_.erase(it);
  }

  // Typed window into an allocated scratchpad range.
  template <class T>
  std::span<T> ldm_span(std::size_t offset, std::size_t count) {
    static_assert(std::is_trivially_copyable_v<T>);
    require_cpe("ldm_span");
    const std::size_t bytes = count * sizeof(T);
    if (!range_allocated(offset, bytes))
      throw OutOfRange("ldm_span: [" + std::to_string(offset) + ", " +
                       std::to_string(offset + bytes) + ") is not within an allocation");
    if (reinterpret_cast<std::uintptr_t>(ldm_.data() + offset) % alignof(T) != 0)
      throw MisalignedAccess("ldm_span: offset " + std::to_string(offset) +
                             " is not aligned for element size " + std::to_string(sizeof(T)));
    return std::span<T>(reinterpret_cast<T*>(ldm_.data() + offset), count);
  }

  // Bulk copy shared -> LDM. Counts DMA bytes (gmem bytes on the MPE view,
  // which has no scratchpad and therefore rejects LDM operations anyway).
  void dma_get(const SharedArrayBase& src, std::size_t src_offset, std::size_t ldm_offset,
               std::size_t bytes);
  // Bulk copy LDM -> shared.
  void dma_put(std::size_t ldm_offset, SharedArrayBase& dst, std::size_t dst_offset,
               std::size_t bytes);

  // Posts a copy from this worker's LDM into a peer's LDM. The data lands in
  // the peer only at the next rma_pair_sync between the two workers.
  void rma_put(ScratchView& peer, std::size_t ldm_offset, std::size_t peer_offset,
               std::size_t bytes);

  // Cached access to shared arrays, in whole segments. Reads may serve stale
  // data until invalidate_cache(); writes are private until flush_cache().
  template <class T>
  T cached_read(const SharedArray<T>& array, std::size_t index);
  template <class T>
  void cached_write(SharedArray<T>& array, std::size_t index, T value);

  // Writes every dirty byte back to shared memory and marks segments clean.
  void flush_cache();
  // Drops all cached segments. Dirty bytes are discarded, so callers flush
  // first unless they mean to throw writes away.
  void invalidate_cache();

  std::size_t cached_segments() const { return cache_.size(); }

  // Stack reservation used by the offload layer's placement policy.
  void reserve_stack(std::size_t bytes) {
    if (bytes > ldm_bytes() - cache_budget_ - used_ - stack_)
      throw CapacityExceeded("reserve_stack: " + std::to_string(bytes) + " bytes requested");
    stack_ += bytes;
  }
  void release_stack(std::size_t bytes) {
    if (bytes > stack_) throw OutOfRange("release_stack: releasing more than reserved");
    stack_ -= bytes;
  }

 private:
  friend class CoreGroup;
  friend class SharedArrayBase;

  struct Segment {
    std::vector<std::byte> bytes;
    std::vector<std::uint8_t> dirty;  // per-byte dirty flags
    bool any_dirty = false;
    std::uint64_t tick = 0;  // LRU stamp
  };
  using SegKey = std::pair<const SharedArrayBase*, std::size_t>;

  void require_cpe(const char* op) const {
    if (is_mpe_)
      throw InvalidArgument(std::string(op) + ": the MPE view has no scratchpad");
  }

  bool range_allocated(std::size_t offset, std::size_t bytes) const {
    if (bytes == 0) return offset <= capacity_bytes();
    std::size_t pos = offset;
    const std::size_t end = offset + bytes;
    for (const auto& [off, len] : allocs_) {
      if (off + len <= pos) continue;
      if (off > pos) return false;  // gap before the next allocation
      pos = off + len;
      if (pos >= end) return true;
    }
    return false;
  }

  Segment& segment_for(const SharedArrayBase& array, std::size_t seg_index);
  void flush_segment(const SegKey& key, Segment& seg);
  void evict_one_clean();

  CoreGroup* group_;
  int owner_;
  bool is_mpe_;
  std::vector<std::byte> ldm_;
  std::map<std::size_t, std::size_t> allocs_;  // offset -> length
  std::size_t used_ = 0;
  std::size_t stack_ = 0;
  std::size_t cache_budget_ = 0;  // 0 means unbudgeted
  std::size_t cache_bytes_ = 0;
  std::uint64_t tick_ = 0;
  std::map<SegKey, Segment> cache_;
};

template <class T>
class SharedArray final : public SharedArrayBase {
  static_assert(std::is_trivially_copyable_v<T>);
  static_assert(kSegmentBytes % sizeof(T) == 0,
                "segment size must be a multiple of the element size");

 public:
  SharedArray(CoreGroup& group, std::string name, std::size_t count)
      : SharedArrayBase(group, std::move(name), count * sizeof(T)), storage_(count) {}

  std::size_t size() const { return storage_.size(); }

  // Host-side access for setup and readback outside active regions; not
  // modeled as simulated traffic.
  std::span<T> host_span() { return storage_; }
  std::span<const T> host_span() const { return storage_; }

 private:
  std::byte* data() override { return reinterpret_cast<std::byte*>(storage_.data()); }
  const std::byte* data() const override {
    return reinterpret_cast<const std::byte*>(storage_.data());
  }

  std::vector<T> storage_;
};

// One MPE plus n_cpes persistent worker threads. Workers sleep on a condition
// variable between dispatches; there is no spinning anywhere, so the model
// runs correctly on hosts with fewer cores than workers.
class CoreGroup {
 public:
  explicit CoreGroup(CoreGroupSpec spec = {}) : spec_(spec), ledger_(spec) {
    spec_.validate();
    if (const char* env = std::getenv("O2PROXY_WORKERS")) {
      char* end = nullptr;
      long v = std::strtol(env, &end, 10);
      if (end != env && v > 0 && v < spec_.n_cpes) {
        throttle_limit_ = static_cast<int>(v);
        throttle_avail_ = throttle_limit_;
      }
    }
    views_.reserve(static_cast<std::size_t>(spec_.n_cpes));
    for (int i = 0; i < spec_.n_cpes; ++i) views_.emplace_back(*this, i, false);
    mpe_view_ = std::make_unique<ScratchView>(*this, -1, true);
    threads_.reserve(static_cast<std::size_t>(spec_.n_cpes));
    for (int i = 0; i < spec_.n_cpes; ++i)
      threads_.emplace_back([this, i] { worker_loop(i); });
  }

  ~CoreGroup() {
    {
      std::lock_guard<std::mutex> lock(job_mu_);
      stop_ = true;
    }
    job_cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  CoreGroup(const CoreGroup&) = delete;
  CoreGroup& operator=(const CoreGroup&) = delete;

  const CoreGroupSpec& spec() const { return spec_; }
  int n_cpes() const { return spec_.n_cpes; }
  CostLedger& ledger() { return ledger_; }
  const CostLedger& ledger() const { return ledger_; }

  ScratchView& cpe_view(int worker) {
    if (worker < 0 || worker >= spec_.n_cpes)
      throw OutOfRange("cpe_view: worker " + std::to_string(worker) + " out of range");
    return views_[static_cast<std::size_t>(worker)];
  }
  ScratchView& mpe_view() { return *mpe_view_; }

  void set_profiler(profile::Profiler* p) { profiler_ = p; }
  profile::Profiler* profiler() const { return profiler_; }

  void set_sync_timeout(std::chrono::milliseconds t) { sync_timeout_ = t; }
  std::chrono::milliseconds sync_timeout() const { return sync_timeout_; }

  // When on, concurrent unflushed writes to the same shared bytes throw.
  void set_debug_conflict_checks(bool on) { debug_checks_ = on; }
  bool debug_conflict_checks() const { return debug_checks_; }

  // Runs job(worker_id) once on every worker and waits for completion.
  // The first exception any worker raises is rethrown here.
  void run_on_workers(const std::function<void(int)>& job) {
    {
      std::unique_lock<std::mutex> lock(job_mu_);
      if (job_ != nullptr) throw NestedRegion("run_on_workers: a dispatch is already active");
      job_ = &job;
      remaining_ = spec_.n_cpes;
      ++job_generation_;
    }
    job_cv_.notify_all();
    {
      std::unique_lock<std::mutex> lock(job_mu_);
      done_cv_.wait(lock, [this] { return remaining_ == 0; });
      job_ = nullptr;
    }
    std::exception_ptr err;
    {
      std::lock_guard<std::mutex> lock(err_mu_);
      std::swap(err, first_error_);
    }
    if (err) std::rethrow_exception(err);
  }

  void record_worker_error(std::exception_ptr e) {
    std::lock_guard<std::mutex> lock(err_mu_);
    if (!first_error_) first_error_ = e;
  }

  // Host-thread throttle honoring O2PROXY_WORKERS. Workers drop their token
  // while blocked at synchronization points, so any limit >= 1 makes progress.
  void throttle_acquire() {
    if (throttle_limit_ == 0) return;
    std::unique_lock<std::mutex> lock(throttle_mu_);
    throttle_cv_.wait(lock, [this] { return throttle_avail_ > 0; });
    --throttle_avail_;
  }
  void throttle_release() {
    if (throttle_limit_ == 0) return;
    {
      std::lock_guard<std::mutex> lock(throttle_mu_);
      ++throttle_avail_;
    }
    throttle_cv_.notify_one();
  }
  int throttle_limit() const { return throttle_limit_; }

  // Region bookkeeping used by the offload layer: one region at a time.
  void begin_region() {
    bool expected = false;
    if (!region_active_.compare_exchange_strong(expected, true))
      throw NestedRegion("a region is already active on this core group");
  }
  void end_region() { region_active_.store(false); }
  bool region_active() const { return region_active_.load(); }

  // Called when a shared array dies so no view keeps stale segments for it.
  // Only safe outside active regions, like array destruction itself.
  void purge_array_from_caches(const SharedArrayBase* array) {
    for (auto& v : views_) {
      std::erase_if(v.cache_, [&](const auto& kv) {
        if (kv.first.first != array) return false;
        v.cache_bytes_ -= kv.second.bytes.size();
        return true;
      });
    }
  }

 private:
  friend class ScratchView;

  struct PendingRma {
    std::size_t dst_offset;
    std::vector<std::byte> bytes;
  };

  struct SyncCell {
    int arrived = 0;
    std::uint64_t generation = 0;
  };

  void worker_loop(int id) {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(int)>* job = nullptr;
      {
        std::unique_lock<std::mutex> lock(job_mu_);
        job_cv_.wait(lock, [&] { return stop_ || job_generation_ != seen; });
        if (stop_) return;
        seen = job_generation_;
        job = job_;
      }
      throttle_acquire();
      try {
        (*job)(id);
      } catch (...) {
        record_worker_error(std::current_exception());
      }
      throttle_release();
      {
        std::lock_guard<std::mutex> lock(job_mu_);
        --remaining_;
        if (remaining_ == 0) done_cv_.notify_all();
      }
    }
  }

  void post_rma(int src, int dst, std::size_t dst_offset, std::vector<std::byte> bytes) {
    std::lock_guard<std::mutex> lock(rma_mu_);
    rma_pending_[{src, dst}].push_back(PendingRma{dst_offset, std::move(bytes)});
  }

  void apply_pending_rma(int src, int dst) {
    std::vector<PendingRma> moved;
    {
      std::lock_guard<std::mutex> lock(rma_mu_);
      auto it = rma_pending_.find({src, dst});
      if (it == rma_pending_.end()) return;
      moved = std::move(it->second);
      rma_pending_.erase(it);
    }
    ScratchView& dst_view = cpe_view(dst);
    for (const auto& p : moved)
      std::memcpy(dst_view.ldm_.data() + p.dst_offset, p.bytes.data(), p.bytes.size());
  }

 public:
  // Rendezvous between two workers; pending RMA in both directions becomes
  // visible when both sides have arrived. A worker pairing with itself
  // applies its own pending transfers immediately.
  void rma_pair_sync(int a, int b) {
    if (a == b) {
      apply_pending_rma(a, a);
      return;
    }
    const auto key = std::minmax(a, b);
    std::unique_lock<std::mutex> lock(sync_mu_);
    SyncCell& cell = sync_cells_[key];
    if (++cell.arrived == 2) {
      apply_pending_rma(key.first, key.second);
      apply_pending_rma(key.second, key.first);
      cell.arrived = 0;
      ++cell.generation;
      lock.unlock();
      sync_cv_.notify_all();
      return;
    }
    const std::uint64_t gen = cell.generation;
    throttle_release();
    const bool ok =
        sync_cv_.wait_for(lock, sync_timeout_, [&] { return cell.generation != gen; });
    if (!ok && cell.generation == gen) --cell.arrived;  // withdraw so the cell stays reusable
    lock.unlock();
    throttle_acquire();
    if (!ok)
      throw DeadlockTimeout("rma_pair_sync: worker " + std::to_string(a) +
                            " timed out waiting for worker " + std::to_string(b));
  }

 private:
  CoreGroupSpec spec_;
  CostLedger ledger_;
  std::vector<ScratchView> views_;
  std::unique_ptr<ScratchView> mpe_view_;
  profile::Profiler* profiler_ = nullptr;
  std::chrono::milliseconds sync_timeout_{10000};
  std::atomic<bool> debug_checks_{false};
  std::atomic<bool> region_active_{false};

  std::vector<std::thread> threads_;
  std::mutex job_mu_;
  std::condition_variable job_cv_, done_cv_;
  const std::function<void(int)>* job_ = nullptr;
  std::uint64_t job_generation_ = 0;
  int remaining_ = 0;
  bool stop_ = false;
  std::mutex err_mu_;
  std::exception_ptr first_error_;

  int throttle_limit_ = 0;  // 0 = unthrottled
  int throttle_avail_ = 0;
  std::mutex throttle_mu_;
  std::condition_variable throttle_cv_;

  std::mutex rma_mu_;
  std::map<std::pair<int, int>, std::vector<PendingRma>> rma_pending_;
  std::mutex sync_mu_;
  std::condition_variable sync_cv_;
  std::map<std::pair<int, int>, SyncCell> sync_cells_;
};

inline std::unique_ptr<CoreGroup> spawn_core_group(const CoreGroupSpec& spec = {}) {
  return std::make_unique<CoreGroup>(spec);
}

inline void rma_pair_sync(ScratchView& a, ScratchView& b);

// ---- out-of-line definitions -------------------------------------------

inline SharedArrayBase::SharedArrayBase(CoreGroup& group, std::string name, std::size_t bytes)
    : group_(&group), name_(std::move(name)), bytes_(bytes) {}

inline SharedArrayBase::~SharedArrayBase() { group_->purge_array_from_caches(this); }

inline ScratchView::ScratchView(CoreGroup& group, int owner, bool is_mpe)
    : group_(&group), owner_(owner), is_mpe_(is_mpe) {
  if (!is_mpe_) {
    ldm_.resize(group.spec().ldm_bytes);
    cache_budget_ = group.spec().cache_budget_bytes();
  }
}

inline void ScratchView::dma_get(const SharedArrayBase& src, std::size_t src_offset,
                                 std::size_t ldm_offset, std::size_t bytes) {
  require_cpe("dma_get");
  if (&src.group() != group_) throw InvalidArgument("dma_get: array belongs to another group");
  if (!range_allocated(ldm_offset, bytes))
    throw OutOfRange("dma_get: LDM range is not allocated");
  src.read_raw(src_offset, ldm_.data() + ldm_offset, bytes);
  group_->ledger().add_dma(bytes);
}

inline void ScratchView::dma_put(std::size_t ldm_offset, SharedArrayBase& dst,
                                 std::size_t dst_offset, std::size_t bytes) {
  require_cpe("dma_put");
  if (&dst.group() != group_) throw InvalidArgument("dma_put: array belongs to another group");
  if (!range_allocated(ldm_offset, bytes))
    throw OutOfRange("dma_put: LDM range is not allocated");
  dst.write_raw(dst_offset, ldm_.data() + ldm_offset, bytes);
  group_->ledger().add_dma(bytes);
  if (group_->debug_conflict_checks()) dst.debug_note_write(dst_offset, bytes, owner_);
}

inline void ScratchView::rma_put(ScratchView& peer, std::size_t ldm_offset,
                                 std::size_t peer_offset, std::size_t bytes) {
  require_cpe("rma_put");
  if (peer.is_mpe()) throw InvalidArgument("rma_put: the MPE has no scratchpad");
  if (peer.group_ != group_)
    throw CrossGroupRma("rma_put: peer worker belongs to another core group");
  if (!range_allocated(ldm_offset, bytes))
    throw OutOfRange("rma_put: source LDM range is not allocated");
  if (!peer.range_allocated(peer_offset, bytes))
    throw OutOfRange("rma_put: destination LDM range is not allocated");
  std::vector<std::byte> staged(bytes);
  std::memcpy(staged.data(), ldm_.data() + ldm_offset, bytes);
  group_->post_rma(owner_, peer.owner_, peer_offset, std::move(staged));
  group_->ledger().add_rma(bytes);
}

inline ScratchView::Segment& ScratchView::segment_for(const SharedArrayBase& array,
                                                      std::size_t seg_index) {
  const SegKey key{&array, seg_index};
  auto it = cache_.find(key);
  if (it != cache_.end()) {
    it->second.tick = ++tick_;
    return it->second;
  }
  const std::size_t seg_begin = seg_index * kSegmentBytes;
  const std::size_t seg_len = std::min(kSegmentBytes, array.size_bytes() - seg_begin);
  if (cache_budget_ > 0) {
    while (cache_bytes_ + seg_len > cache_budget_) evict_one_clean();
  }
  Segment seg;
  seg.bytes.resize(seg_len);
  seg.dirty.assign(seg_len, 0);
  array.read_raw(seg_begin, seg.bytes.data(), seg_len);
  group_->ledger().add_gmem(seg_len);
  seg.tick = ++tick_;
  cache_bytes_ += seg_len;
  return cache_.emplace(key, std::move(seg)).first->second;
}

inline void ScratchView::evict_one_clean() {
  auto victim = cache_.end();
  for (auto it = cache_.begin(); it != cache_.end(); ++it) {
    if (it->second.any_dirty) continue;
    if (victim == cache_.end() || it->second.tick < victim->second.tick) victim = it;
  }
  if (victim == cache_.end())
    throw CapacityExceeded("cached window: budget exhausted and every segment is dirty; "
                           "flush_cache() before touching more shared data");
  cache_bytes_ -= victim->second.bytes.size();
  cache_.erase(victim);
}

template <class T>
inline T ScratchView::cached_read(const SharedArray<T>& array, std::size_t index) {
  const std::size_t offset = index * sizeof(T);
  array.check_range(offset, sizeof(T));
  if (is_mpe_) {
    T out;
    array.read_raw(offset, reinterpret_cast<std::byte*>(&out), sizeof(T));
    group_->ledger().add_gmem(sizeof(T));
    return out;
  }
  Segment& seg = segment_for(array, offset / kSegmentBytes);
  T out;
  std::memcpy(&out, seg.bytes.data() + offset % kSegmentBytes, sizeof(T));
  return out;
}

template <class T>
inline void ScratchView::cached_write(SharedArray<T>& array, std::size_t index, T value) {
  const std::size_t offset = index * sizeof(T);
  array.check_range(offset, sizeof(T));
  if (is_mpe_) {
    array.write_raw(offset, reinterpret_cast<const std::byte*>(&value), sizeof(T));
    group_->ledger().add_gmem(sizeof(T));
    if (group_->debug_conflict_checks()) array.debug_note_write(offset, sizeof(T), owner_);
    return;
  }
  Segment& seg = segment_for(array, offset / kSegmentBytes);
  const std::size_t in_seg = offset % kSegmentBytes;
  std::memcpy(seg.bytes.data() + in_seg, &value, sizeof(T));
  std::fill_n(seg.dirty.begin() + static_cast<std::ptrdiff_t>(in_seg), sizeof(T), 1);
  seg.any_dirty = true;
  if (group_->debug_conflict_checks()) array.debug_note_write(offset, sizeof(T), owner_);
}

inline void ScratchView::flush_segment(const SegKey& key, Segment& seg) {
  if (!seg.any_dirty) return;
  // Safe to cast away const: dirty segments only exist for arrays this view
  // wrote through, and SharedArray storage itself is never const.
  auto* array = const_cast<SharedArrayBase*>(key.first);
  const std::size_t seg_begin = key.second * kSegmentBytes;
  array->write_masked(seg_begin, seg.bytes.data(), seg.bytes.size(), seg.dirty.data());
  group_->ledger().add_gmem(seg.bytes.size());
  if (group_->debug_conflict_checks())
    array->debug_clear_writes(seg_begin, seg.bytes.size(), owner_);
  seg.dirty.assign(seg.bytes.size(), 0);
  seg.any_dirty = false;
}

inline void ScratchView::flush_cache() {
  if (is_mpe_) return;  // MPE accesses are always direct
  for (auto& [key, seg] : cache_) flush_segment(key, seg);
}

inline void ScratchView::invalidate_cache() {
  if (is_mpe_) return;
  if (group_->debug_conflict_checks()) {
    for (auto& [key, seg] : cache_) {
      if (!seg.any_dirty) continue;
      auto* array = const_cast<SharedArrayBase*>(key.first);
      array->debug_clear_writes(key.second * kSegmentBytes, seg.bytes.size(), owner_);
    }
  }
  cache_.clear();
  cache_bytes_ = 0;
}

inline void rma_pair_sync(ScratchView& a, ScratchView& b) {
  if (a.is_mpe() || b.is_mpe())
    throw InvalidArgument("rma_pair_sync: only CPE workers participate");
  if (&a.group() != &b.group())
    throw CrossGroupRma("rma_pair_sync: workers belong to different core groups");
  a.group().rma_pair_sync(a.owner(), b.owner());
}

}  // namespace o2proxy::archsim
