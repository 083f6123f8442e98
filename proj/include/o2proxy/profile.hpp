#pragma once

// Lightweight nested-region profiler. Each worker owns a private timer tree
// (no locking on the hot path); trees are merged by region path at report
// time. Exclusive time is inclusive time minus the inclusive time of
// children, so the per-category breakdown partitions the total exactly.

#include <array>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "o2proxy/errors.hpp"

namespace o2proxy::profile {

enum class Category : int { kMpeCompute = 0, kCpeCompute, kComm, kIo, kIdle };

inline constexpr std::array<const char*, 5> kCategoryNames = {
    "MPE_COMPUTE", "CPE_COMPUTE", "COMM", "IO", "IDLE"};

inline const char* category_name(Category c) {
  return kCategoryNames[static_cast<std::size_t>(c)];
}

struct Node {
  std::string name;
  Category category = Category::kMpeCompute;
  std::uint64_t calls = 0;
  double inclusive_seconds = 0.0;
  std::vector<std::unique_ptr<Node>> children;

  double exclusive_seconds() const {
    double s = inclusive_seconds;
    for (const auto& c : children) s -= c->inclusive_seconds;
    return s;
  }

  const Node* child(std::string_view name_) const {
    for (const auto& c : children)
      if (c->name == name_) return c.get();
    return nullptr;
  }
};

// Single-owner stack of live regions. enter/exit must nest like parentheses.
class TimerTree {
 public:
  using Clock = std::chrono::steady_clock;

  TimerTree() { root_.name = "<root>"; }
  TimerTree(TimerTree&&) = default;
  TimerTree& operator=(TimerTree&&) = default;

  void enter(std::string_view name, Category category) {
    Node* parent = live_.empty() ? &root_ : live_.back().node;
    Node* node = nullptr;
    for (auto& c : parent->children) {
      if (c->name == name && c->category == category) {
        node = c.get();
        break;
      }
    }
    if (node == nullptr) {
      auto fresh = std::make_unique<Node>();
      fresh->name = std::string(name);
      fresh->category = category;
      node = fresh.get();
      parent->children.push_back(std::move(fresh));
    }
    live_.push_back(Live{node, Clock::now()});
  }

  void exit(std::string_view name) {
    if (live_.empty())
      throw MismatchedExit("timer exit('" + std::string(name) + "') with no open region");
    Live top = live_.back();
    if (top.node->name != name)
      throw MismatchedExit("timer exit('" + std::string(name) + "') but '" + top.node->name +
                           "' is open");
    live_.pop_back();
    top.node->calls += 1;
    top.node->inclusive_seconds +=
        std::chrono::duration<double>(Clock::now() - top.start).count();
  }

  bool has_open_region() const { return !live_.empty(); }
  const Node& root() const { return root_; }

  class Scope {
   public:
    Scope(TimerTree& t, std::string name, Category c) : tree_(&t), name_(std::move(name)) {
      tree_->enter(name_, c);
    }
    ~Scope() {
      if (tree_ != nullptr) tree_->exit(name_);
    }
    Scope(Scope&& other) noexcept : tree_(other.tree_), name_(std::move(other.name_)) {
      other.tree_ = nullptr;
    }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    TimerTree* tree_;
    std::string name_;
  };

  Scope scoped(std::string name, Category category) {
    return Scope(*this, std::move(name), category);
  }

 private:
  struct Live {
    Node* node;
    Clock::time_point start;
  };
  Node root_;
  std::vector<Live> live_;
};

namespace detail {

inline void merge_into(Node& dst, const Node& src) {
  dst.calls += src.calls;
  dst.inclusive_seconds += src.inclusive_seconds;
  for (const auto& sc : src.children) {
    Node* match = nullptr;
    for (auto& dc : dst.children) {
      if (dc->name == sc->name && dc->category == sc->category) {
        match = dc.get();
        break;
      }
    }
    if (match == nullptr) {
      auto fresh = std::make_unique<Node>();
      fresh->name = sc->name;
      fresh->category = sc->category;
      match = fresh.get();
      dst.children.push_back(std::move(fresh));
    }
    merge_into(*match, *sc);
  }
}

inline void accumulate_exclusive(const Node& n, std::array<double, 5>& per_category,
                                 bool is_root) {
  if (!is_root) per_category[static_cast<std::size_t>(n.category)] += n.exclusive_seconds();
  for (const auto& c : n.children) accumulate_exclusive(*c, per_category, false);
}

inline void rows_csv(const Node& n, const std::string& path, std::ostringstream& out) {
  if (!n.name.empty() && n.name != "<root>") {
    out << path << n.name << ',' << category_name(n.category) << ',' << n.calls << ','
        << n.inclusive_seconds << ',' << n.exclusive_seconds() << '\n';
  }
  const std::string next = (n.name == "<root>") ? "" : path + n.name + "/";
  for (const auto& c : n.children) rows_csv(*c, next, out);
}

inline nlohmann::json node_json(const Node& n) {
  nlohmann::json j{{"name", n.name},
                   {"category", category_name(n.category)},
                   {"calls", n.calls},
                   {"inclusive_seconds", n.inclusive_seconds},
                   {"exclusive_seconds", n.exclusive_seconds()}};
  if (!n.children.empty()) {
    nlohmann::json kids = nlohmann::json::array();
    for (const auto& c : n.children) kids.push_back(node_json(*c));
    j["children"] = std::move(kids);
  }
  return j;
}

}  // namespace detail

// Merges per-worker trees by region path; totals are independent of the
// order trees are merged in.
inline Node merge_trees(std::span<const TimerTree* const> trees) {
  Node out;
  out.name = "<root>";
  for (const TimerTree* t : trees) {
    if (t->has_open_region())
      throw OpenRegion("merge_trees: a timer tree still has an open region");
    detail::merge_into(out, t->root());
  }
  out.calls = 0;
  out.inclusive_seconds = 0.0;
  return out;
}

struct BreakdownReport {
  double total_seconds = 0.0;
  // All five categories are always present, even at zero.
  std::map<std::string, double> category_percent;
  // Top-level region name -> percent of total (inclusive).
  std::map<std::string, double> region_percent;

  nlohmann::json to_json() const {
    return nlohmann::json{{"total_seconds", total_seconds},
                          {"category_percent", category_percent},
                          {"region_percent", region_percent}};
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << "kind,name,percent\n";
    for (const auto& [k, v] : category_percent) out << "category," << k << ',' << v << '\n';
    for (const auto& [k, v] : region_percent) out << "region," << k << ',' << v << '\n';
    return out.str();
  }
};

inline BreakdownReport breakdown_report(const Node& merged_root) {
  BreakdownReport rep;
  for (const auto& c : merged_root.children) rep.total_seconds += c->inclusive_seconds;
  std::array<double, 5> per_category{};
  detail::accumulate_exclusive(merged_root, per_category, true);
  const double denom = rep.total_seconds > 0.0 ? rep.total_seconds : 1.0;
  for (std::size_t i = 0; i < kCategoryNames.size(); ++i)
    rep.category_percent[kCategoryNames[i]] = 100.0 * per_category[i] / denom;
  for (const auto& c : merged_root.children) {
    rep.region_percent[c->name] += 100.0 * c->inclusive_seconds / denom;
  }
  return rep;
}

// One tree for the management core plus one per worker.
class Profiler {
 public:
  explicit Profiler(int n_workers = 0) { resize_workers(n_workers); }

  // Keeps existing measurements; only grows.
  void resize_workers(int n) {
    while (static_cast<int>(workers_.size()) < n)
      workers_.push_back(std::make_unique<TimerTree>());
  }

  int n_workers() const { return static_cast<int>(workers_.size()); }
  TimerTree& mpe() { return mpe_; }
  TimerTree& worker(int i) {
    if (i < 0 || i >= n_workers())
      throw OutOfRange("Profiler::worker: index " + std::to_string(i) + " out of range");
    return *workers_[static_cast<std::size_t>(i)];
  }

  Node merged() const {
    std::vector<const TimerTree*> all;
    all.reserve(workers_.size() + 1);
    all.push_back(&mpe_);
    for (const auto& w : workers_) all.push_back(w.get());
    return merge_trees(all);
  }

  BreakdownReport report() const { return breakdown_report(merged()); }

  nlohmann::json regions_json() const { return detail::node_json(merged()); }

  std::string regions_csv() const {
    std::ostringstream out;
    out << "region,category,calls,inclusive_seconds,exclusive_seconds\n";
    detail::rows_csv(merged(), "", out);
    return out.str();
  }

 private:
  TimerTree mpe_;
  std::vector<std::unique_ptr<TimerTree>> workers_;
};

// ---- throughput metrics ---------------------------------------------------

inline constexpr double kSecondsPerDay = 86400.0;
inline constexpr double kDaysPerYear = 365.0;

// Simulated days per (wall-clock) day.
inline double compute_sdpd(double simulated_days, double wall_seconds) {
  if (wall_seconds <= 0.0) throw InvalidArgument("compute_sdpd: wall_seconds must be > 0");
  if (simulated_days < 0.0) throw InvalidArgument("compute_sdpd: simulated_days must be >= 0");
  return simulated_days * kSecondsPerDay / wall_seconds;
}

inline double sypd_from_sdpd(double sdpd) { return sdpd / kDaysPerYear; }

struct ScalePoint {
  double processes = 0.0;
  double sdpd = 0.0;
};

// Strong-scaling efficiency of `scaled` relative to `base`.
inline double scaling_efficiency(const ScalePoint& base, const ScalePoint& scaled) {
  if (base.processes <= 0.0 || scaled.processes <= 0.0)
    throw InvalidArgument("scaling_efficiency: process counts must be > 0");
  if (base.sdpd <= 0.0) throw InvalidArgument("scaling_efficiency: base sdpd must be > 0");
  return (scaled.sdpd / base.sdpd) / (scaled.processes / base.processes);
}

struct ThroughputMetric {
  double simulated_days = 0.0;
  double wall_seconds = 0.0;
  double sdpd = 0.0;
  double sypd = 0.0;

  static ThroughputMetric compute(double simulated_days, double wall_seconds) {
    ThroughputMetric m;
    m.simulated_days = simulated_days;
    m.wall_seconds = wall_seconds;
    m.sdpd = compute_sdpd(simulated_days, wall_seconds);
    m.sypd = sypd_from_sdpd(m.sdpd);
    return m;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"simulated_days", simulated_days},
                          {"wall_seconds", wall_seconds},
                          {"sdpd", sdpd},
                          {"sypd", sypd}};
  }
};

}  // namespace o2proxy::profile
