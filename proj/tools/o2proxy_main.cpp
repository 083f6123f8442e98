// Command-line driver: run kernel suites serial or offloaded, benchmark the
// initialization communication schemes, compare checkpoint files, and emit
// reports. Every computed value is seeded and deterministic; wall-clock
// measurements are segregated under the report's "timing" key so identical
// configurations produce byte-identical reports everywhere else.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <typeinfo>
#include <utility>
#include <vector>

#include <cxxabi.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "o2proxy/o2proxy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace o2proxy;

namespace {

// Raised for invalid values arriving via --config, where CLI11's own flag
// validators never ran; mapped to the usage exit code.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string error_type_name(const std::exception& e) {
  int status = 0;
  char* demangled = abi::__cxa_demangle(typeid(e).name(), nullptr, nullptr, &status);
  std::string name = (status == 0 && demangled != nullptr) ? demangled : typeid(e).name();
  std::free(demangled);
  if (name.rfind("o2proxy::", 0) == 0) name.erase(0, 9);
  return name;
}

int fail_with_error_json(const std::exception& e) {
  const json err{{"error", {{"type", error_type_name(e)}, {"message", e.what()}}}};
  std::cerr << err.dump(2) << "\n";
  return 1;
}

std::string hash_hex(std::uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::parse_error& e) {
    throw IoError("cannot parse '" + path.string() + "': " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

void flatten_json(const json& j, const std::string& prefix, std::string& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten_json(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i)
      flatten_json(j[i], prefix + "[" + std::to_string(i) + "]", out);
  } else {
    out += prefix + "," + (j.is_string() ? j.get<std::string>() : j.dump()) + "\n";
  }
}

std::string json_to_csv(const json& j) {
  std::string out = "key,value\n";
  flatten_json(j, "", out);
  return out;
}

template <class T>
void cfg_override(const json& j, const char* key, const CLI::Option* opt, T& value) {
  if (opt->count() == 0 && j.contains(key)) value = j.at(key).get<T>();
}

// ---- run --------------------------------------------------------------------

const std::vector<std::string> kSuiteNames = {"cam-phys", "cam-dyn",  "prefix-sum",
                                              "pop-vmix", "pop-hmix", "cice-evp"};
const std::vector<std::string> kPresetNames = {"default", "ne30",  "ne120", "ne240", "ne480",
                                               "ts015",   "ts010", "ts005", "ts003"};
constexpr int kEvpSubcycles = 120;

struct RunConfig {
  std::string suite = "all";
  std::string mode = "mpe+cpe";
  int n_cpes = 64;
  int n_core_groups = 1;
  std::string preset = "default";
  std::uint64_t seed = 1;
  std::string out = "o2proxy-out";
};

struct SuiteData {
  std::vector<std::uint64_t> dims;
  std::vector<double> payload;
};

SuiteData execute_suite(archsim::CoreGroup& group, const std::string& suite,
                        const std::string& preset, std::uint64_t seed, kernels::ExecMode mode) {
  using namespace kernels;
  if (suite == "cam-phys") {
    const CamDims d = Presets::cam(preset);
    auto state = ChunkedColumns::random(d.nchunks, d.ncols, d.pver, seed);
    physics_step(group, state, PhysicsParams{}, mode);
    return {state.dims(), std::move(state.t)};
  }
  if (suite == "cam-dyn") {
    const CamDims d = Presets::cam(preset);
    auto field = ElementField::random(d.nelem, d.pver, d.np, seed);
    dycore_step(group, field, 0.1, 0.1, mode);
    return {field.dims(), std::move(field.values)};
  }
  if (suite == "prefix-sum") {
    const std::size_t n = Presets::prefix_len(preset);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> div(n), dp(n);
    for (auto& v : div) v = unit(rng);
    for (auto& v : dp) v = unit(rng);
    auto acc = vertical_prefix_sum(group, div, dp, mode);
    return {{n}, std::move(acc)};
  }
  if (suite == "pop-vmix") {
    const PopDims d = Presets::pop(preset);
    auto field = BlockField::random(d.mxblk, d.ncat, d.nlayer, d.nyblk, d.nxblk, seed);
    pop_vmix_step(group, field, VmixParams{}, mode);
    return {field.dims(), std::move(field.values)};
  }
  if (suite == "pop-hmix") {
    const PopDims d = Presets::pop(preset);
    auto field = BlockField::random(d.mxblk, d.ncat, d.nlayer, d.nyblk, d.nxblk, seed);
    pop_hmix_step(group, field, HmixParams{}, mode);
    return {field.dims(), std::move(field.values)};
  }
  if (suite == "cice-evp") {
    const CiceDims d = Presets::cice(preset);
    auto field = BlockField::random(d.mxblk, d.ncat, d.nlayer, d.nyblk, d.nxblk, seed);
    cice_evp_step(group, field, kEvpSubcycles, EvpParams{}, mode);
    return {field.dims(), std::move(field.values)};
  }
  throw InvalidArgument("unknown suite '" + suite + "'");
}

struct SuiteReport {
  json deterministic;
  json timing;
  bool match = true;
};

SuiteReport run_one_suite(const std::string& suite, const RunConfig& cfg) {
  const bool offload = cfg.mode == "mpe+cpe";
  const auto mode = offload ? kernels::ExecMode::kOffload : kernels::ExecMode::kSerial;
  profile::Profiler prof;

  std::vector<std::uint64_t> dims{static_cast<std::uint64_t>(cfg.n_core_groups)};
  std::vector<double> payload, reference;
  std::uint64_t dma = 0, rma = 0, gmem = 0;
  double modeled = 0.0;

  const double t0 = now_seconds();
  for (int g = 0; g < cfg.n_core_groups; ++g) {
    const std::uint64_t gseed =
        cfg.seed + 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(g);
    archsim::CoreGroupSpec spec;
    spec.n_cpes = offload ? cfg.n_cpes : 1;  // serial mode never touches CPE workers
    archsim::CoreGroup group(spec);
    group.set_profiler(&prof);
    auto data = execute_suite(group, suite, cfg.preset, gseed, mode);
    if (g == 0) dims.insert(dims.end(), data.dims.begin(), data.dims.end());
    payload.insert(payload.end(), data.payload.begin(), data.payload.end());
    dma += group.ledger().dma_bytes();
    rma += group.ledger().rma_bytes();
    gmem += group.ledger().gmem_bytes();
    modeled += group.ledger().modeled_seconds();

    if (offload) {
      archsim::CoreGroupSpec ref_spec;
      ref_spec.n_cpes = 1;
      archsim::CoreGroup ref_group(ref_spec);
      auto ref = execute_suite(ref_group, suite, cfg.preset, gseed, kernels::ExecMode::kSerial);
      reference.insert(reference.end(), ref.payload.begin(), ref.payload.end());
    }
  }
  const double wall = now_seconds() - t0;

  auto ckpt = verify::Checkpoint::record(suite, dims, std::move(payload));
  const fs::path ckpt_path = fs::path(cfg.out) / (suite + "_" + cfg.mode + ".bin");
  ckpt.save(ckpt_path);

  SuiteReport rep;
  rep.deterministic =
      json{{"suite", suite},
           {"dims", dims},
           {"checkpoint", ckpt_path.string()},
           {"hash", hash_hex(ckpt.hash)},
           {"cost",
            {{"dma_bytes", dma},
             {"rma_bytes", rma},
             {"gmem_bytes", gmem},
             {"modeled_seconds", modeled}}}};
  if (offload) {
    auto ref_ckpt =
        verify::Checkpoint::record(suite + ".reference", dims, std::move(reference));
    const auto spec = suite == "prefix-sum" ? verify::CompareSpec::rel(1e-12)
                                            : verify::CompareSpec::bit();
    const auto cmp = verify::compare(ref_ckpt, ckpt, spec);
    rep.deterministic["compare"] = cmp.to_json();
    rep.match = cmp.match;
  }
  rep.timing = json{{"wall_seconds", wall},
                    {"breakdown", prof.report().to_json()},
                    {"regions", prof.regions_json()}};
  return rep;
}

int run_command(const RunConfig& cfg) {
  const bool suite_known =
      cfg.suite == "all" ||
      std::find(kSuiteNames.begin(), kSuiteNames.end(), cfg.suite) != kSuiteNames.end();
  if (!suite_known) throw UsageError("unknown suite '" + cfg.suite + "'");
  if (cfg.mode != "mpe" && cfg.mode != "mpe+cpe")
    throw UsageError("unknown mode '" + cfg.mode + "'");
  if (cfg.n_cpes < 1 || cfg.n_cpes > 64) throw UsageError("--n-cpes must be in 1..64");
  if (cfg.n_core_groups < 1) throw UsageError("--n-core-groups must be >= 1");
  if (std::find(kPresetNames.begin(), kPresetNames.end(), cfg.preset) == kPresetNames.end())
    throw UsageError("unknown preset '" + cfg.preset + "'");

  fs::create_directories(cfg.out);
  const std::vector<std::string> suites =
      cfg.suite == "all" ? kSuiteNames : std::vector<std::string>{cfg.suite};

  json report;
  report["command"] = "run";
  report["config"] = json{{"suite", cfg.suite},     {"mode", cfg.mode},
                          {"n_cpes", cfg.n_cpes},   {"n_core_groups", cfg.n_core_groups},
                          {"preset", cfg.preset},   {"seed", cfg.seed},
                          {"out", cfg.out}};
  json suites_json = json::array();
  json timing_suites = json::object();
  bool all_match = true;
  double wall_total = 0.0;

  for (const auto& suite : suites) {
    auto rep = run_one_suite(suite, cfg);
    all_match = all_match && rep.match;
    wall_total += rep.timing["wall_seconds"].get<double>();
    suites_json.push_back(std::move(rep.deterministic));
    timing_suites[suite] = std::move(rep.timing);
    if (cfg.mode == "mpe+cpe")
      std::cout << suite << ": " << (rep.match ? "match" : "MISMATCH") << "\n";
    else
      std::cout << suite << ": recorded\n";
  }

  // One nominal simulated day per suite step; wall time makes this the only
  // nondeterministic block, so it lives under "timing".
  const double days = static_cast<double>(suites.size() * cfg.n_core_groups);
  const auto metric = profile::ThroughputMetric::compute(days, std::max(wall_total, 1e-9));
  report["suites"] = std::move(suites_json);
  report["match"] = all_match;
  report["timing"] = json{{"suites", std::move(timing_suites)},
                          {"wall_seconds_total", wall_total},
                          {"throughput",
                           {{"simulated_days", metric.simulated_days},
                            {"wall_seconds", metric.wall_seconds},
                            {"sdpd", metric.sdpd},
                            {"sypd", metric.sypd}}}};

  write_text_file(fs::path(cfg.out) / "report.json", report.dump(2) + "\n");
  return all_match ? 0 : 1;
}

// ---- init-bench ---------------------------------------------------------------

struct BenchConfig {
  std::string bench = "all";
  initcomm::Scenario scenario;
  std::string out = "o2proxy-out";
};

bool bench_selected(const BenchConfig& bc, const char* name) {
  return bc.bench == "all" || bc.bench == name;
}

int init_bench_command(const BenchConfig& bc) {
  auto sc = bc.scenario;
  sc.validate();
  const auto topo = sc.topology();
  const auto plan = sc.plan();
  bool ok = true;
  json benches;

  if (bench_selected(bc, "alltoallw")) {
    initcomm::CommStats flat_stats, hier_stats;
    const auto flat = initcomm::flat_alltoallw(topo, plan, flat_stats);
    const auto hier = initcomm::hierarchical_alltoallw(topo, plan, hier_stats);
    const bool match = flat == hier;
    ok = ok && match;
    benches["alltoallw"] =
        json{{"flat_messages", flat_stats.messages},
             {"hierarchical_messages", hier_stats.messages},
             {"dense_flat_messages", initcomm::dense_flat_messages(sc.n_ranks)},
             {"dense_hierarchical_messages", initcomm::dense_hierarchical_messages(topo)},
             {"total_bytes", plan.total_bytes()},
             {"flat_peak_resident_bytes", flat_stats.peak_resident_bytes()},
             {"hierarchical_peak_resident_bytes", hier_stats.peak_resident_bytes()},
             {"delivery_match", match}};
  }
  if (bench_selected(bc, "gatherv")) {
    std::vector<std::vector<std::uint8_t>> payloads(sc.n_ranks);
    for (std::uint64_t r = 0; r < sc.n_ranks; ++r) payloads[r] = plan.payload(r, 0);
    initcomm::CommStats flat_stats, staged_stats;
    const auto flat = initcomm::flat_gatherv(topo, 0, payloads, flat_stats);
    const auto staged = initcomm::staged_gatherv(topo, 0, sc.fanout, payloads, staged_stats);
    const bool match = flat.buffer == staged.buffer;
    ok = ok && match;
    benches["gatherv"] =
        json{{"stages", staged.stages},
             {"expected_stages", initcomm::expected_gather_stages(sc.n_ranks, sc.fanout)},
             {"flat_messages", flat_stats.messages},
             {"staged_messages", staged_stats.messages},
             {"buffer_bytes", staged.buffer.size()},
             {"buffer_match", match}};
  }
  if (bench_selected(bc, "rankmap")) {
    const auto ids = initcomm::random_node_ids(
        sc.n_ranks, std::max<std::size_t>(1, sc.n_ranks / 4), sc.seed);
    initcomm::CommStats fast_stats, naive_stats;
    const auto fast = initcomm::map_node_to_rank(ids, fast_stats);
    const auto naive = initcomm::map_node_to_rank_naive(ids, naive_stats);
    const bool match = fast == naive;
    ok = ok && match;
    benches["rankmap"] = json{{"n_ranks", sc.n_ranks},
                              {"fast_comparator_ops", fast_stats.comparator_ops},
                              {"naive_comparator_ops", naive_stats.comparator_ops},
                              {"match", match}};
  }
  if (bench_selected(bc, "clumps")) {
    std::mt19937_64 rng(sc.seed);
    std::vector<std::uint64_t> weights(8 * sc.n_ranks);
    for (auto& w : weights) w = rng() % 100;
    initcomm::CommStats fast_stats, naive_stats;
    const auto fast = initcomm::distribute_clumps(weights, sc.n_ranks, fast_stats);
    const auto naive = initcomm::distribute_clumps_naive(weights, sc.n_ranks, naive_stats);
    const bool match = fast == naive;
    ok = ok && match;
    benches["clumps"] = json{{"n_clumps", weights.size()},
                             {"n_procs", sc.n_ranks},
                             {"fast_pass_count", fast_stats.pass_count},
                             {"naive_pass_count", naive_stats.pass_count},
                             {"match", match}};
  }
  if (bench_selected(bc, "io")) {
    const auto io_procs = initcomm::choose_io_processes(sc.n_ranks);
    json comps;
    for (const char* name : {"default", "atm", "ocn", "ice", "cpl"})
      comps[name] = initcomm::emit_io_config(name).to_json();
    benches["io"] = json{{"io_process_count", io_procs.size()},
                         {"ranks_per_io_process", initcomm::kRanksPerIoProcess},
                         {"components", std::move(comps)}};
  }

  const json out = json{{"command", "init-bench"},
                        {"bench", bc.bench},
                        {"scenario", sc.to_json()},
                        {"benches", std::move(benches)},
                        {"match", ok}};
  std::cout << out.dump(2) << "\n";
  fs::create_directories(bc.out);
  write_text_file(fs::path(bc.out) / "initcomm.json", out.dump(2) + "\n");
  write_text_file(fs::path(bc.out) / "initcomm.csv", json_to_csv(out));
  return ok ? 0 : 1;
}

// ---- verify / report ------------------------------------------------------------

int verify_command(const std::string& a, const std::string& b, const std::string& compare) {
  const auto ca = verify::Checkpoint::load(a);
  const auto cb = verify::Checkpoint::load(b);
  const auto rep = verify::compare(ca, cb, verify::CompareSpec::parse(compare));
  json out = rep.to_json();
  out["a"] = a;
  out["b"] = b;
  out["a_hash"] = hash_hex(ca.hash);
  out["b_hash"] = hash_hex(cb.hash);
  std::cout << out.dump(2) << "\n";
  return rep.match ? 0 : 1;
}

int report_command(const std::string& input, const std::string& csv_path) {
  const json j = load_json_file(input);
  const std::string csv = json_to_csv(j);
  if (csv_path.empty()) {
    std::cout << csv;
  } else {
    write_text_file(csv_path, csv);
    std::cout << "wrote " << csv_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "o2proxy: simulated manycore offload runtime, climate proxy kernels,\n"
      "initialization-communication benchmarks, and bitwise verification.\n"
      "The environment variable O2PROXY_WORKERS caps concurrent host threads."};
  app.require_subcommand(1);

  RunConfig rc;
  std::string run_config_path;
  auto* run_cmd = app.add_subcommand(
      "run", "Run a kernel suite, write checkpoints and a report JSON");
  auto suite_names_with_all = kSuiteNames;
  suite_names_with_all.push_back("all");
  auto* opt_suite = run_cmd->add_option("--suite", rc.suite, "Kernel suite to run")
                        ->check(CLI::IsMember(suite_names_with_all));
  auto* opt_mode =
      run_cmd->add_option("--mode", rc.mode, "mpe (serial) or mpe+cpe (offloaded + verified)")
          ->check(CLI::IsMember(std::vector<std::string>{"mpe", "mpe+cpe"}));
  auto* opt_ncpes =
      run_cmd->add_option("--n-cpes", rc.n_cpes, "Workers per core group")->check(CLI::Range(1, 64));
  auto* opt_groups = run_cmd->add_option("--n-core-groups", rc.n_core_groups,
                                         "Independent core groups run back to back")
                         ->check(CLI::Range(1, 1 << 20));
  auto* opt_preset = run_cmd->add_option("--preset", rc.preset, "Problem size preset")
                         ->check(CLI::IsMember(kPresetNames));
  auto* opt_seed = run_cmd->add_option("--seed", rc.seed, "Seed for all random inputs");
  auto* opt_out = run_cmd->add_option("--out", rc.out, "Output directory");
  run_cmd->add_option("--config", run_config_path, "JSON file with values for the flags above")
      ->check(CLI::ExistingFile);

  BenchConfig bc;
  std::string bench_config_path;
  auto* bench_cmd = app.add_subcommand(
      "init-bench", "Run initialization-communication benchmarks and emit stats");
  auto* opt_bench =
      bench_cmd
          ->add_option("--bench", bc.bench, "Which benchmark to run")
          ->check(CLI::IsMember(
              std::vector<std::string>{"all", "alltoallw", "gatherv", "rankmap", "clumps", "io"}));
  auto* opt_n = bench_cmd->add_option("--n", bc.scenario.n_ranks, "Simulated rank count")
                    ->check(CLI::Range(std::uint64_t{1}, std::uint64_t{1} << 20));
  auto* opt_gs =
      bench_cmd->add_option("--group-size", bc.scenario.group_size, "Ranks per leader group")
          ->check(CLI::Range(std::uint64_t{1}, std::uint64_t{1} << 20));
  auto* opt_fanout = bench_cmd->add_option("--fanout", bc.scenario.fanout, "Gather tree fanout")
                         ->check(CLI::Range(std::uint64_t{2}, std::uint64_t{1} << 20));
  auto* opt_bseed = bench_cmd->add_option("--seed", bc.scenario.seed, "Plan seed");
  auto* opt_minb = bench_cmd->add_option("--min-bytes", bc.scenario.min_bytes,
                                         "Smallest per-pair payload");
  auto* opt_maxb = bench_cmd->add_option("--max-bytes", bc.scenario.max_bytes,
                                         "Largest per-pair payload");
  auto* opt_density =
      bench_cmd->add_option("--density", bc.scenario.density, "Fraction of nonzero pairs")
          ->check(CLI::Range(0.0, 1.0));
  auto* opt_bout = bench_cmd->add_option("--out", bc.out, "Output directory");
  bench_cmd
      ->add_option("--config", bench_config_path, "JSON file with values for the flags above")
      ->check(CLI::ExistingFile);

  std::string verify_a, verify_b, verify_compare = "bit";
  auto* verify_cmd =
      app.add_subcommand("verify", "Compare two checkpoint files and print a report");
  verify_cmd->add_option("a", verify_a, "First checkpoint")->required();
  verify_cmd->add_option("b", verify_b, "Second checkpoint")->required();
  verify_cmd->add_option("--compare", verify_compare, "bit, ulp:K, or rel:EPS")
      ->check(CLI::Validator(
          [](std::string& s) -> std::string {
            try {
              verify::CompareSpec::parse(s);
              return {};
            } catch (const std::exception&) {
              return "expected bit, ulp:K, or rel:EPS, got '" + s + "'";
            }
          },
          "COMPARE"));

  std::string report_input, report_csv;
  auto* report_cmd =
      app.add_subcommand("report", "Flatten a report JSON into key,value CSV");
  report_cmd->add_option("--input", report_input, "report.json or initcomm.json")->required();
  report_cmd->add_option("--csv", report_csv, "CSV output path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run_cmd->parsed()) {
      if (!run_config_path.empty()) {
        const json j = load_json_file(run_config_path);
        cfg_override(j, "suite", opt_suite, rc.suite);
        cfg_override(j, "mode", opt_mode, rc.mode);
        cfg_override(j, "n_cpes", opt_ncpes, rc.n_cpes);
        cfg_override(j, "n_core_groups", opt_groups, rc.n_core_groups);
        cfg_override(j, "preset", opt_preset, rc.preset);
        cfg_override(j, "seed", opt_seed, rc.seed);
        cfg_override(j, "out", opt_out, rc.out);
      }
      return run_command(rc);
    }
    if (bench_cmd->parsed()) {
      if (!bench_config_path.empty()) {
        const json j = load_json_file(bench_config_path);
        cfg_override(j, "bench", opt_bench, bc.bench);
        cfg_override(j, "n_ranks", opt_n, bc.scenario.n_ranks);
        cfg_override(j, "group_size", opt_gs, bc.scenario.group_size);
        cfg_override(j, "fanout", opt_fanout, bc.scenario.fanout);
        cfg_override(j, "seed", opt_bseed, bc.scenario.seed);
        cfg_override(j, "min_bytes", opt_minb, bc.scenario.min_bytes);
        cfg_override(j, "max_bytes", opt_maxb, bc.scenario.max_bytes);
        cfg_override(j, "density", opt_density, bc.scenario.density);
        cfg_override(j, "out", opt_bout, bc.out);
      }
      if (bc.bench != "all" && bc.bench != "alltoallw" && bc.bench != "gatherv" &&
          bc.bench != "rankmap" && bc.bench != "clumps" && bc.bench != "io")
        throw UsageError("unknown bench '" + bc.bench + "'");
      return init_bench_command(bc);
    }
    if (verify_cmd->parsed()) return verify_command(verify_a, verify_b, verify_compare);
    if (report_cmd->parsed()) return report_command(report_input, report_csv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    return fail_with_error_json(e);
  }
  return 0;
}
