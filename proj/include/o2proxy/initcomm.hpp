#pragma once

// Initialization-communication rework, simulated: ranks are logical tasks
// exchanging byte buffers over in-memory FIFO channels, executed in rank
// order so every run is deterministic given the plan. The interesting
// outputs are counters (message counts, per-rank resident bytes, comparator
// operations, partition passes), which the instrumented fast paths and their
// naive oracles both report.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "o2proxy/errors.hpp"

namespace o2proxy::initcomm {

// ---- counters ---------------------------------------------------------------

struct CommStats {
  std::uint64_t messages = 0;
  std::uint64_t comparator_ops = 0;
  std::uint64_t pass_count = 0;
  std::vector<std::uint64_t> max_resident_bytes;  // per rank

  void ensure_ranks(std::size_t n) {
    if (max_resident_bytes.size() < n) {
      max_resident_bytes.resize(n, 0);
      resident_now_.resize(n, 0);
    }
  }

  void on_alloc(std::size_t rank, std::uint64_t bytes) {
    ensure_ranks(rank + 1);
    resident_now_[rank] += bytes;
    max_resident_bytes[rank] = std::max(max_resident_bytes[rank], resident_now_[rank]);
  }

  void on_release(std::size_t rank, std::uint64_t bytes) {
    if (rank >= resident_now_.size() || resident_now_[rank] < bytes)
      throw InvalidArgument("CommStats: release exceeds resident bytes");
    resident_now_[rank] -= bytes;
  }

  void reset() {
    messages = 0;
    comparator_ops = 0;
    pass_count = 0;
    max_resident_bytes.clear();
    resident_now_.clear();
  }

  std::uint64_t peak_resident_bytes() const {
    std::uint64_t peak = 0;
    for (std::uint64_t b : max_resident_bytes) peak = std::max(peak, b);
    return peak;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"messages", messages},
                          {"comparator_ops", comparator_ops},
                          {"pass_count", pass_count},
                          {"max_resident_bytes", max_resident_bytes}};
  }

  // Scalar summary; the per-rank residency vector lives in the JSON form.
  std::string to_csv() const {
    std::string out = "metric,value\n";
    out += "messages," + std::to_string(messages) + "\n";
    out += "comparator_ops," + std::to_string(comparator_ops) + "\n";
    out += "pass_count," + std::to_string(pass_count) + "\n";
    out += "max_resident_bytes," + std::to_string(peak_resident_bytes()) + "\n";
    return out;
  }

 private:
  std::vector<std::uint64_t> resident_now_;
};

// ---- topology ---------------------------------------------------------------

// Contiguous rank blocks of group_size; the leader is the lowest rank in
// each block (the last block may be short).
struct RankTopology {
  std::uint64_t n_ranks = 0;
  std::uint64_t group_size = 1;
  std::vector<std::string> node_ids;  // empty, or one fixed-length id per rank

  void validate() const {
    if (n_ranks == 0) throw InvalidSpec("RankTopology: n_ranks must be positive");
    if (group_size == 0) throw InvalidSpec("RankTopology: group_size must be positive");
    if (!node_ids.empty()) {
      if (node_ids.size() != n_ranks)
        throw InvalidSpec("RankTopology: node_ids must cover every rank");
      for (const auto& id : node_ids)
        if (id.size() != node_ids.front().size())
          throw InvalidSpec("RankTopology: node ids must have equal length");
    }
  }

  std::uint64_t n_groups() const { return (n_ranks + group_size - 1) / group_size; }
  std::uint64_t group_of(std::uint64_t rank) const { return rank / group_size; }
  std::uint64_t group_begin(std::uint64_t g) const { return g * group_size; }
  std::uint64_t group_end(std::uint64_t g) const {
    return std::min(n_ranks, (g + 1) * group_size);
  }
  std::uint64_t leader_of_group(std::uint64_t g) const { return group_begin(g); }
  std::uint64_t leader_of(std::uint64_t rank) const { return leader_of_group(group_of(rank)); }
  bool is_leader(std::uint64_t rank) const { return leader_of(rank) == rank; }
};

// ---- payload plan -----------------------------------------------------------

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace detail

// Per-pair byte counts plus a deterministic payload generator, so two
// schemes exchanging the same plan can be compared byte for byte.
struct AlltoAllwPlan {
  std::uint64_t n_ranks = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::uint64_t>> sizes;  // [src][dst] bytes, zero allowed

  void validate() const {
    if (n_ranks == 0) throw InvalidSpec("AlltoAllwPlan: n_ranks must be positive");
    if (sizes.size() != n_ranks) throw InvalidSpec("AlltoAllwPlan: sizes must be square");
    for (const auto& row : sizes)
      if (row.size() != n_ranks) throw InvalidSpec("AlltoAllwPlan: sizes must be square");
  }

  std::vector<std::uint8_t> payload(std::uint64_t src, std::uint64_t dst) const {
    const std::uint64_t n = sizes[src][dst];
    std::uint64_t state = seed ^ (src * 0xc2b2ae3d27d4eb4full) ^ (dst * 0x9e3779b97f4a7c15ull);
    std::vector<std::uint8_t> bytes(n);
    std::uint64_t word = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
      if (i % 8 == 0) word = detail::splitmix64(state);
      bytes[i] = static_cast<std::uint8_t>(word >> ((i % 8) * 8));
    }
    return bytes;
  }

  std::uint64_t total_bytes() const {
    std::uint64_t total = 0;
    for (const auto& row : sizes)
      for (std::uint64_t s : row) total += s;
    return total;
  }

  // Count of nonzero off-diagonal pairs: the flat scheme's message count.
  std::uint64_t nonzero_pairs() const {
    std::uint64_t count = 0;
    for (std::uint64_t i = 0; i < n_ranks; ++i)
      for (std::uint64_t j = 0; j < n_ranks; ++j)
        if (i != j && sizes[i][j] > 0) ++count;
    return count;
  }

  static AlltoAllwPlan uniform(std::uint64_t n, std::uint64_t bytes, std::uint64_t seed = 0) {
    AlltoAllwPlan p;
    p.n_ranks = n;
    p.seed = seed;
    p.sizes.assign(n, std::vector<std::uint64_t>(n, bytes));
    return p;
  }

  static AlltoAllwPlan random(std::uint64_t n, std::uint64_t seed, std::uint64_t min_bytes,
                              std::uint64_t max_bytes, double density) {
    if (max_bytes < min_bytes)
      throw InvalidArgument("AlltoAllwPlan: max_bytes below min_bytes");
    if (density < 0.0 || density > 1.0)
      throw InvalidArgument("AlltoAllwPlan: density must be in [0,1]");
    AlltoAllwPlan p;
    p.n_ranks = n;
    p.seed = seed;
    p.sizes.assign(n, std::vector<std::uint64_t>(n, 0));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<std::uint64_t> size_dist(min_bytes, max_bytes);
    for (auto& row : p.sizes)
      for (auto& s : row) {
        const bool active = coin(rng) < density;
        const std::uint64_t drawn = size_dist(rng);  // always drawn, keeps streams aligned
        s = active ? drawn : 0;
      }
    return p;
  }
};

// Received payloads keyed by (destination, source).
struct Delivery {
  std::uint64_t n_ranks = 0;
  std::vector<std::vector<std::uint8_t>> slots;  // [dst * n_ranks + src]

  explicit Delivery(std::uint64_t n = 0) : n_ranks(n), slots(n * n) {}

  std::vector<std::uint8_t>& at(std::uint64_t dst, std::uint64_t src) {
    return slots[dst * n_ranks + src];
  }
  const std::vector<std::uint8_t>& at(std::uint64_t dst, std::uint64_t src) const {
    return slots[dst * n_ranks + src];
  }

  bool operator==(const Delivery&) const = default;
};

// ---- pack format ------------------------------------------------------------

// Entry: source rank, destination rank, payload length (all u64 LE), then
// payload bytes. Zero-length payloads are never packed; absence means empty.
struct PackEntry {
  std::uint64_t src = 0;
  std::uint64_t dst = 0;
  std::vector<std::uint8_t> payload;
};

inline constexpr std::size_t kPackHeaderBytes = 24;

namespace detail {

inline void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_u64_le(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[at + i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void append_entry(std::vector<std::uint8_t>& pack, const PackEntry& e) {
  detail::put_u64_le(pack, e.src);
  detail::put_u64_le(pack, e.dst);
  detail::put_u64_le(pack, e.payload.size());
  pack.insert(pack.end(), e.payload.begin(), e.payload.end());
}

inline std::vector<PackEntry> unpack_entries(std::span<const std::uint8_t> pack,
                                             std::uint64_t n_ranks) {
  std::vector<PackEntry> entries;
  std::size_t at = 0;
  while (at < pack.size()) {
    if (pack.size() - at < kPackHeaderBytes)
      throw MalformedPackHeader("pack: truncated header at byte " + std::to_string(at));
    PackEntry e;
    e.src = detail::get_u64_le(pack, at);
    e.dst = detail::get_u64_le(pack, at + 8);
    const std::uint64_t len = detail::get_u64_le(pack, at + 16);
    at += kPackHeaderBytes;
    if (e.src >= n_ranks || e.dst >= n_ranks)
      throw MalformedPackHeader("pack: rank out of range in header");
    if (len > pack.size() - at)
      throw MalformedPackHeader("pack: payload length overruns buffer");
    e.payload.assign(pack.begin() + static_cast<std::ptrdiff_t>(at),
                     pack.begin() + static_cast<std::ptrdiff_t>(at + len));
    at += len;
    entries.push_back(std::move(e));
  }
  return entries;
}

// ---- in-memory network ------------------------------------------------------

namespace detail {

// FIFO per ordered pair; drain order is source-rank order, so a run is a
// pure function of the plan.
class Network {
 public:
  Network(std::uint64_t n, CommStats& stats) : n_(n), stats_(&stats) { stats.ensure_ranks(n); }

  void send(std::uint64_t src, std::uint64_t dst, std::vector<std::uint8_t> bytes) {
    ++stats_->messages;
    queues_[{src, dst}].push_back(std::move(bytes));
  }

  std::vector<std::pair<std::uint64_t, std::vector<std::uint8_t>>> drain(std::uint64_t dst) {
    std::vector<std::pair<std::uint64_t, std::vector<std::uint8_t>>> got;
    for (std::uint64_t src = 0; src < n_; ++src) {
      auto it = queues_.find({src, dst});
      if (it == queues_.end()) continue;
      while (!it->second.empty()) {
        got.emplace_back(src, std::move(it->second.front()));
        it->second.pop_front();
      }
      queues_.erase(it);
    }
    return got;
  }

  bool idle() const {
    for (const auto& [key, q] : queues_)
      if (!q.empty()) return false;
    return true;
  }

 private:
  std::uint64_t n_;
  CommStats* stats_;
  std::map<std::pair<std::uint64_t, std::uint64_t>, std::deque<std::vector<std::uint8_t>>>
      queues_;
};

}  // namespace detail

// ---- all-to-all schemes -----------------------------------------------------

// Baseline: every nonzero pair is one direct message (self pairs copy
// locally). Each sender materializes its whole outgoing buffer set at once,
// which is exactly the residency footprint the hierarchical scheme removes.
inline Delivery flat_alltoallw(const RankTopology& topo, const AlltoAllwPlan& plan,
                               CommStats& stats) {
  topo.validate();
  plan.validate();
  if (topo.n_ranks != plan.n_ranks)
    throw InvalidArgument("flat_alltoallw: topology and plan rank counts differ");
  const std::uint64_t n = plan.n_ranks;
  stats.ensure_ranks(n);
  detail::Network net(n, stats);
  Delivery delivery(n);

  for (std::uint64_t src = 0; src < n; ++src) {
    std::vector<std::pair<std::uint64_t, std::vector<std::uint8_t>>> outgoing;
    for (std::uint64_t dst = 0; dst < n; ++dst) {
      if (plan.sizes[src][dst] == 0) continue;
      outgoing.emplace_back(dst, plan.payload(src, dst));
      stats.on_alloc(src, outgoing.back().second.size());
    }
    for (auto& [dst, bytes] : outgoing) {
      const std::uint64_t sz = bytes.size();
      if (dst == src)
        delivery.at(dst, src) = std::move(bytes);
      else
        net.send(src, dst, std::move(bytes));
      stats.on_release(src, sz);
    }
  }

  for (std::uint64_t dst = 0; dst < n; ++dst) {
    for (auto& [src, bytes] : net.drain(dst)) {
      stats.on_alloc(dst, bytes.size());
      stats.on_release(dst, bytes.size());
      delivery.at(dst, src) = std::move(bytes);
    }
  }
  return delivery;
}

// Three phases: members pack all their nonzero payloads into one message to
// their leader; leaders exchange per-group aggregates pairwise; leaders
// scatter per-member packs. Empty packs are suppressed, so the dense message
// count is 2*sum_g(S_g - 1) + G*(G - 1) and sparse plans send less. A
// non-leader only ever holds its own packed send set or its own scatter
// pack, never a full N-way buffer set.
inline Delivery hierarchical_alltoallw(const RankTopology& topo, const AlltoAllwPlan& plan,
                                       CommStats& stats) {
  topo.validate();
  plan.validate();
  if (topo.n_ranks != plan.n_ranks)
    throw InvalidArgument("hierarchical_alltoallw: topology and plan rank counts differ");
  const std::uint64_t n = plan.n_ranks;
  const std::uint64_t n_groups = topo.n_groups();
  stats.ensure_ranks(n);
  detail::Network net(n, stats);
  Delivery delivery(n);

  // Leader-held entries, keyed by the leader's group. Leaders' own packs
  // enter here directly; members' packs arrive over the network.
  std::vector<std::vector<PackEntry>> leader_entries(n_groups);

  // Phase 1: every rank packs its nonzero payloads and forwards to its
  // leader; self-addressed bytes are copied locally like the flat scheme.
  for (std::uint64_t src = 0; src < n; ++src) {
    std::vector<std::uint8_t> pack;
    for (std::uint64_t dst = 0; dst < n; ++dst) {
      if (plan.sizes[src][dst] == 0) continue;
      if (dst == src) {
        auto bytes = plan.payload(src, src);
        stats.on_alloc(src, bytes.size());
        stats.on_release(src, bytes.size());
        delivery.at(src, src) = std::move(bytes);
        continue;
      }
      append_entry(pack, PackEntry{src, dst, plan.payload(src, dst)});
    }
    if (pack.empty()) continue;
    stats.on_alloc(src, pack.size());
    if (topo.is_leader(src)) {
      auto entries = unpack_entries(pack, n);
      stats.on_release(src, pack.size());
      auto& held = leader_entries[topo.group_of(src)];
      // Leader keeps its own entries resident until phase 3 consumes them.
      for (auto& e : entries) {
        stats.on_alloc(src, e.payload.size() + kPackHeaderBytes);
        held.push_back(std::move(e));
      }
    } else {
      const std::uint64_t sz = pack.size();
      net.send(src, topo.leader_of(src), std::move(pack));
      stats.on_release(src, sz);
    }
  }
  for (std::uint64_t g = 0; g < n_groups; ++g) {
    const std::uint64_t leader = topo.leader_of_group(g);
    for (auto& [src, bytes] : net.drain(leader)) {
      stats.on_alloc(leader, bytes.size());
      auto entries = unpack_entries(bytes, n);
      for (auto& e : entries) {
        if (topo.group_of(e.src) != g)
          throw MalformedPackHeader("hierarchical_alltoallw: entry from foreign group");
        leader_entries[g].push_back(std::move(e));
      }
    }
  }

  // Phase 2: leaders aggregate by destination group and exchange pairwise.
  std::vector<std::vector<PackEntry>> inbound_entries(n_groups);
  for (std::uint64_t g = 0; g < n_groups; ++g) {
    const std::uint64_t leader = topo.leader_of_group(g);
    std::uint64_t held_bytes = 0;
    for (const auto& e : leader_entries[g]) held_bytes += e.payload.size() + kPackHeaderBytes;

    for (std::uint64_t tg = 0; tg < n_groups; ++tg) {
      std::vector<std::uint8_t> agg;
      for (const auto& e : leader_entries[g])
        if (topo.group_of(e.dst) == tg) append_entry(agg, e);
      if (agg.empty()) continue;
      if (tg == g) {
        // Own-group traffic skips the network but stays resident until
        // phase 3 scatters it.
        for (auto& e : unpack_entries(agg, n)) {
          stats.on_alloc(leader, e.payload.size() + kPackHeaderBytes);
          inbound_entries[g].push_back(std::move(e));
        }
        continue;
      }
      stats.on_alloc(leader, agg.size());
      const std::uint64_t sz = agg.size();
      net.send(leader, topo.leader_of_group(tg), std::move(agg));
      stats.on_release(leader, sz);
    }
    leader_entries[g].clear();
    stats.on_release(leader, held_bytes);
  }
  for (std::uint64_t g = 0; g < n_groups; ++g) {
    const std::uint64_t leader = topo.leader_of_group(g);
    for (auto& [src, bytes] : net.drain(leader)) {
      stats.on_alloc(leader, bytes.size());
      auto entries = unpack_entries(bytes, n);
      stats.on_release(leader, bytes.size());
      for (auto& e : entries) {
        if (topo.group_of(e.dst) != g)
          throw MalformedPackHeader("hierarchical_alltoallw: entry for foreign group");
        stats.on_alloc(leader, e.payload.size() + kPackHeaderBytes);
        inbound_entries[g].push_back(std::move(e));
      }
    }
  }

  // Phase 3: leaders scatter per-member packs; members unpack into delivery.
  for (std::uint64_t g = 0; g < n_groups; ++g) {
    const std::uint64_t leader = topo.leader_of_group(g);
    std::uint64_t held_bytes = 0;
    for (const auto& e : inbound_entries[g]) held_bytes += e.payload.size() + kPackHeaderBytes;
    for (std::uint64_t m = topo.group_begin(g); m < topo.group_end(g); ++m) {
      std::vector<std::uint8_t> pack;
      for (const auto& e : inbound_entries[g])
        if (e.dst == m) append_entry(pack, e);
      if (pack.empty()) continue;
      if (m == leader) {
        for (auto& e : unpack_entries(pack, n)) delivery.at(e.dst, e.src) = std::move(e.payload);
        continue;
      }
      stats.on_alloc(leader, pack.size());
      const std::uint64_t sz = pack.size();
      net.send(leader, m, std::move(pack));
      stats.on_release(leader, sz);
    }
    inbound_entries[g].clear();
    stats.on_release(leader, held_bytes);
  }
  for (std::uint64_t dst = 0; dst < n; ++dst) {
    for (auto& [src, bytes] : net.drain(dst)) {
      stats.on_alloc(dst, bytes.size());
      for (auto& e : unpack_entries(bytes, n)) {
        if (e.dst != dst)
          throw MalformedPackHeader("hierarchical_alltoallw: scatter pack misrouted");
        delivery.at(e.dst, e.src) = std::move(e.payload);
      }
      stats.on_release(dst, bytes.size());
    }
  }
  return delivery;
}

// Dense-traffic message counts for the two schemes.
inline std::uint64_t dense_flat_messages(std::uint64_t n_ranks) {
  return n_ranks * (n_ranks - 1);
}

inline std::uint64_t dense_hierarchical_messages(const RankTopology& topo) {
  std::uint64_t members = 0;
  for (std::uint64_t g = 0; g < topo.n_groups(); ++g)
    members += topo.group_end(g) - topo.group_begin(g) - 1;
  return 2 * members + topo.n_groups() * (topo.n_groups() - 1);
}

// ---- gatherv ----------------------------------------------------------------

struct GathervResult {
  std::vector<std::uint8_t> buffer;
  std::uint64_t stages = 0;
};

// Flat oracle: every rank sends its payload straight to the root; the root
// concatenates in rank order.
inline GathervResult flat_gatherv(const RankTopology& topo, std::uint64_t root,
                                  const std::vector<std::vector<std::uint8_t>>& payloads,
                                  CommStats& stats) {
  topo.validate();
  if (root >= topo.n_ranks) throw InvalidArgument("flat_gatherv: root out of range");
  if (payloads.size() != topo.n_ranks)
    throw InvalidArgument("flat_gatherv: one payload per rank required");
  stats.ensure_ranks(topo.n_ranks);
  detail::Network net(topo.n_ranks, stats);
  for (std::uint64_t r = 0; r < topo.n_ranks; ++r)
    if (r != root && !payloads[r].empty()) net.send(r, root, payloads[r]);

  GathervResult result;
  std::vector<std::vector<std::uint8_t>> got(topo.n_ranks);
  got[root] = payloads[root];
  for (auto& [src, bytes] : net.drain(root)) got[src] = std::move(bytes);
  for (auto& b : got) result.buffer.insert(result.buffer.end(), b.begin(), b.end());
  return result;
}

// F-ary staged gather: stage s merges every F adjacent blocks of size
// F^(s-1) (in root-relative labels) into one, each merge forwarding one
// packed message of the subtree's entries. ceil(log_F N) stages; the root
// buffer equals the flat concatenation.
inline GathervResult staged_gatherv(const RankTopology& topo, std::uint64_t root,
                                    std::uint64_t fanout,
                                    const std::vector<std::vector<std::uint8_t>>& payloads,
                                    CommStats& stats) {
  topo.validate();
  if (fanout < 2) throw InvalidArgument("staged_gatherv: fanout must be >= 2");
  if (root >= topo.n_ranks) throw InvalidArgument("staged_gatherv: root out of range");
  if (payloads.size() != topo.n_ranks)
    throw InvalidArgument("staged_gatherv: one payload per rank required");
  const std::uint64_t n = topo.n_ranks;
  stats.ensure_ranks(n);
  detail::Network net(n, stats);

  // holdings[v]: entries accumulated at root-relative label v, by source rank.
  std::vector<std::map<std::uint64_t, std::vector<std::uint8_t>>> holdings(n);
  const auto rank_of = [&](std::uint64_t v) { return (v + root) % n; };
  for (std::uint64_t v = 0; v < n; ++v) {
    const std::uint64_t r = rank_of(v);
    if (!payloads[r].empty()) holdings[v][r] = payloads[r];
  }

  GathervResult result;
  for (std::uint64_t prev = 1; prev < n; prev *= fanout) {
    ++result.stages;
    const std::uint64_t block = prev * fanout;
    for (std::uint64_t v = prev; v < n; v += prev) {
      if (v % block == 0) continue;  // block head, receives this stage
      const std::uint64_t head = v - v % block;
      std::vector<std::uint8_t> pack;
      for (auto& [src, bytes] : holdings[v])
        append_entry(pack, PackEntry{src, rank_of(head), std::move(bytes)});
      holdings[v].clear();
      if (pack.empty()) continue;
      net.send(rank_of(v), rank_of(head), std::move(pack));
    }
    for (std::uint64_t head = 0; head < n; head += block) {
      for (auto& [src, bytes] : net.drain(rank_of(head)))
        for (auto& e : unpack_entries(bytes, n)) holdings[head][e.src] = std::move(e.payload);
    }
  }

  for (auto& [src, bytes] : holdings[0])
    result.buffer.insert(result.buffer.end(), bytes.begin(), bytes.end());
  return result;
}

inline std::uint64_t expected_gather_stages(std::uint64_t n_ranks, std::uint64_t fanout) {
  std::uint64_t stages = 0;
  for (std::uint64_t span = 1; span < n_ranks; span *= fanout) ++stages;
  return stages;
}

// ---- node-id to rank mapping ------------------------------------------------

struct NodeMap {
  std::vector<std::uint64_t> node_ordinal;       // rank of the node id among distinct ids
  std::vector<std::uint64_t> within_node_index;  // position among same-node ranks
  bool operator==(const NodeMap&) const = default;
};

namespace detail {

inline void check_equal_lengths(const std::vector<std::string>& ids) {
  for (const auto& id : ids)
    if (id.size() != ids.front().size())
      throw LengthMismatch("map_node_to_rank: node ids must have equal length");
}

// Three-way quicksort of index ranges keyed by node id; every id-vs-id
// comparison is one comparator op. Median-of-three pivoting; the equal band
// collapses duplicate-heavy inputs in one pass.
class IdSorter {
 public:
  IdSorter(const std::vector<std::string>& ids, CommStats& stats) : ids_(ids), stats_(stats) {}

  void sort(std::vector<std::uint64_t>& idx) { quicksort(idx, 0, idx.size()); }

 private:
  int compare(std::uint64_t a, std::uint64_t b) {
    ++stats_.comparator_ops;
    const int c = ids_[a].compare(ids_[b]);
    return c < 0 ? -1 : c > 0 ? 1 : 0;
  }

  void quicksort(std::vector<std::uint64_t>& idx, std::size_t lo, std::size_t hi) {
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      std::uint64_t pivot = median3(idx[lo], idx[mid], idx[hi - 1]);
      std::size_t lt = lo, i = lo, gt = hi;
      while (i < gt) {
        const int c = compare(idx[i], pivot);
        if (c < 0)
          std::swap(idx[lt++], idx[i++]);
        else if (c > 0)
          std::swap(idx[i], idx[--gt]);
        else
          ++i;
      }
      // Recurse into the smaller side first to bound stack depth.
      if (lt - lo < hi - gt) {
        quicksort(idx, lo, lt);
        lo = gt;
      } else {
        quicksort(idx, gt, hi);
        hi = lt;
      }
    }
  }

  std::uint64_t median3(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    if (compare(a, b) < 0) {
      if (compare(b, c) < 0) return b;
      return compare(a, c) < 0 ? c : a;
    }
    if (compare(a, c) < 0) return a;
    return compare(b, c) < 0 ? c : b;
  }

  const std::vector<std::string>& ids_;
  CommStats& stats_;
};

}  // namespace detail

// Sort-based mapping: O(N log N) comparator ops. node_ordinal is the id's
// rank among distinct ids; within_node_index orders same-node ranks by
// original rank.
inline NodeMap map_node_to_rank(const std::vector<std::string>& node_ids, CommStats& stats) {
  NodeMap out;
  const std::size_t n = node_ids.size();
  out.node_ordinal.resize(n);
  out.within_node_index.resize(n);
  if (n == 0) return out;
  detail::check_equal_lengths(node_ids);

  std::vector<std::uint64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  detail::IdSorter sorter(node_ids, stats);
  sorter.sort(idx);

  std::size_t run_begin = 0;
  std::uint64_t ordinal = 0;
  const auto close_run = [&](std::size_t run_end) {
    // Ranks inside one id run, ordered by original rank.
    std::vector<std::uint64_t> ranks(idx.begin() + static_cast<std::ptrdiff_t>(run_begin),
                                     idx.begin() + static_cast<std::ptrdiff_t>(run_end));
    std::sort(ranks.begin(), ranks.end());
    for (std::size_t k = 0; k < ranks.size(); ++k) {
      out.node_ordinal[ranks[k]] = ordinal;
      out.within_node_index[ranks[k]] = k;
    }
    ++ordinal;
    run_begin = run_end;
  };
  for (std::size_t k = 1; k < n; ++k) {
    ++stats.comparator_ops;
    if (node_ids[idx[k]] != node_ids[idx[k - 1]]) close_run(k);
  }
  close_run(n);
  return out;
}

// Scan-based oracle: distinct-id discovery, ordinal counting, and duplicate
// counting all by linear scans, O(N^2) comparator ops.
inline NodeMap map_node_to_rank_naive(const std::vector<std::string>& node_ids,
                                      CommStats& stats) {
  NodeMap out;
  const std::size_t n = node_ids.size();
  out.node_ordinal.resize(n);
  out.within_node_index.resize(n);
  if (n == 0) return out;
  detail::check_equal_lengths(node_ids);

  std::vector<std::string> uniques;
  for (const auto& id : node_ids) {
    bool found = false;
    for (const auto& u : uniques) {
      ++stats.comparator_ops;
      if (u == id) {
        found = true;
        break;
      }
    }
    if (!found) uniques.push_back(id);
  }
  for (std::size_t r = 0; r < n; ++r) {
    std::uint64_t ordinal = 0;
    for (const auto& u : uniques) {
      ++stats.comparator_ops;
      if (u < node_ids[r]) ++ordinal;
    }
    out.node_ordinal[r] = ordinal;
    std::uint64_t within = 0;
    for (std::size_t j = 0; j < r; ++j) {
      ++stats.comparator_ops;
      if (node_ids[j] == node_ids[r]) ++within;
    }
    out.within_node_index[r] = within;
  }
  return out;
}

// Deterministic fixed-length id corpus: n_ranks ranks spread over n_nodes
// nodes in shuffled order.
inline std::vector<std::string> random_node_ids(std::size_t n_ranks, std::size_t n_nodes,
                                                std::uint64_t seed) {
  if (n_nodes == 0) throw InvalidArgument("random_node_ids: n_nodes must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n_nodes - 1);
  std::vector<std::string> ids(n_ranks);
  for (auto& id : ids) {
    // 48-bit node space keeps the id at exactly 16 characters.
    const unsigned long long node = pick(rng) & 0xffffffffffffull;
    char buf[17];
    std::snprintf(buf, sizeof buf, "node%012llx", node);
    id.assign(buf, 16);
  }
  return ids;
}

// ---- clump distribution -----------------------------------------------------

namespace detail {

inline unsigned __int128 clump_boundary(unsigned __int128 total, std::uint64_t p,
                                        std::uint64_t n_procs) {
  return total * (p + 1) / n_procs;
}

}  // namespace detail

// Weighted contiguous prefix split: clump c goes to the smallest process p
// whose cumulative boundary floor(T*(p+1)/P) covers the inclusive prefix
// weight. One pass; the process pointer only moves forward, jumping by a
// closed-form ceiling when several boundaries are crossed at once, so
// pass_count <= 2*n_clumps.
inline std::vector<std::uint64_t> distribute_clumps(std::span<const std::uint64_t> weights,
                                                    std::uint64_t n_procs, CommStats& stats) {
  if (n_procs == 0) throw InvalidArgument("distribute_clumps: n_procs must be positive");
  std::vector<std::uint64_t> assignment(weights.size());
  unsigned __int128 total = 0;
  for (std::uint64_t w : weights) total += w;

  unsigned __int128 prefix = 0;
  std::uint64_t p = 0;
  for (std::size_t c = 0; c < weights.size(); ++c) {
    prefix += weights[c];
    ++stats.pass_count;
    if (prefix > detail::clump_boundary(total, p, n_procs)) {
      // Smallest p with floor(T*(p+1)/P) >= prefix is ceil(prefix*P/T) - 1.
      p = static_cast<std::uint64_t>((prefix * n_procs + total - 1) / total) - 1;
      ++stats.pass_count;
    }
    assignment[c] = p;
  }
  return assignment;
}

// Per-clump linear scan from process 0, the O(N*P) baseline.
inline std::vector<std::uint64_t> distribute_clumps_naive(std::span<const std::uint64_t> weights,
                                                          std::uint64_t n_procs,
                                                          CommStats& stats) {
  if (n_procs == 0) throw InvalidArgument("distribute_clumps_naive: n_procs must be positive");
  std::vector<std::uint64_t> assignment(weights.size());
  unsigned __int128 total = 0;
  for (std::uint64_t w : weights) total += w;

  unsigned __int128 prefix = 0;
  for (std::size_t c = 0; c < weights.size(); ++c) {
    prefix += weights[c];
    std::uint64_t p = 0;
    while (true) {
      ++stats.pass_count;
      if (prefix <= detail::clump_boundary(total, p, n_procs)) break;
      ++p;
    }
    assignment[c] = p;
  }
  return assignment;
}

// ---- I/O process selection --------------------------------------------------

// Lowest rank of every consecutive block of 1000 ranks.
inline constexpr std::uint64_t kRanksPerIoProcess = 1000;

inline std::vector<std::uint64_t> choose_io_processes(std::uint64_t n_ranks) {
  if (n_ranks == 0) throw InvalidArgument("choose_io_processes: n_ranks must be positive");
  std::vector<std::uint64_t> io;
  for (std::uint64_t r = 0; r < n_ranks; r += kRanksPerIoProcess) io.push_back(r);
  return io;
}

struct IoConfig {
  std::string component;
  std::uint64_t stripe_count = 1;
  std::uint64_t stripe_size_bytes = 1 << 20;
  std::uint64_t io_ratio_numer = 1;
  std::uint64_t io_ratio_denom = kRanksPerIoProcess;

  double io_ratio() const {
    return static_cast<double>(io_ratio_numer) / static_cast<double>(io_ratio_denom);
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"component", component},
                          {"stripe_count", stripe_count},
                          {"stripe_size_bytes", stripe_size_bytes},
                          {"io_ratio_numer", io_ratio_numer},
                          {"io_ratio_denom", io_ratio_denom}};
  }
};

// Pure configuration emitter. The default is (1, 1 MB); tuned components
// draw stripe_count from {4, 8, 16, 32} and stripe_size from {1 MB, 4 MB}.
inline IoConfig emit_io_config(const std::string& component) {
  IoConfig cfg;
  cfg.component = component.empty() ? "default" : component;
  constexpr std::uint64_t kMiB = 1 << 20;
  if (cfg.component == "default") {
    cfg.stripe_count = 1;
    cfg.stripe_size_bytes = kMiB;
  } else if (cfg.component == "atm") {
    cfg.stripe_count = 32;
    cfg.stripe_size_bytes = 4 * kMiB;
  } else if (cfg.component == "ocn") {
    cfg.stripe_count = 16;
    cfg.stripe_size_bytes = 4 * kMiB;
  } else if (cfg.component == "ice") {
    cfg.stripe_count = 8;
    cfg.stripe_size_bytes = kMiB;
  } else if (cfg.component == "cpl") {
    cfg.stripe_count = 4;
    cfg.stripe_size_bytes = kMiB;
  } else {
    throw UnknownComponent("emit_io_config: unknown component '" + component + "'");
  }
  return cfg;
}

// ---- benchmark scenario -----------------------------------------------------

struct Scenario {
  std::uint64_t n_ranks = 64;
  std::uint64_t group_size = 8;
  std::uint64_t fanout = 4;
  std::uint64_t min_bytes = 1;
  std::uint64_t max_bytes = 64;
  double density = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_ranks == 0) throw InvalidSpec("Scenario: n_ranks must be positive");
    if (group_size == 0) throw InvalidSpec("Scenario: group_size must be positive");
    if (fanout < 2) throw InvalidSpec("Scenario: fanout must be >= 2");
    if (max_bytes < min_bytes) throw InvalidSpec("Scenario: max_bytes below min_bytes");
    if (density < 0.0 || density > 1.0) throw InvalidSpec("Scenario: density must be in [0,1]");
  }

  RankTopology topology() const { return RankTopology{n_ranks, group_size, {}}; }

  AlltoAllwPlan plan() const {
    return AlltoAllwPlan::random(n_ranks, seed, min_bytes, max_bytes, density);
  }

  static Scenario from_json(const nlohmann::json& j) {
    Scenario s;
    s.n_ranks = j.value("n_ranks", s.n_ranks);
    s.group_size = j.value("group_size", s.group_size);
    s.fanout = j.value("fanout", s.fanout);
    s.min_bytes = j.value("min_bytes", s.min_bytes);
    s.max_bytes = j.value("max_bytes", s.max_bytes);
    s.density = j.value("density", s.density);
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"n_ranks", n_ranks},     {"group_size", group_size},
                          {"fanout", fanout},       {"min_bytes", min_bytes},
                          {"max_bytes", max_bytes}, {"density", density},
                          {"seed", seed}};
  }
};

}  // namespace o2proxy::initcomm
