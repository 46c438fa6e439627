// skrefine: generate artifacts from a system policy, check condition R on
// them, and run the abstract/concrete machine pair in lock-step.

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "skrefine/harness.hpp"
#include "skrefine/policy_gen.hpp"

using namespace skrefine;
namespace fs = std::filesystem;

namespace {

// exit codes: 0 pass, 1 check failure or lock-step divergence, 2 validation,
// 3 i/o, 4 fast/naive checker disagreement, 5 simulate refused (condition R)
constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitValidation = 2;
constexpr int kExitIo = 3;
constexpr int kExitOracle = 4;
constexpr int kExitRefused = 5;

uint64_t effective_seed(uint64_t cli_seed) {
  const char* env = std::getenv("SKREFINE_SEED");
  if (!env || !*env) return cli_seed;
  try {
    return std::stoull(env);
  } catch (const std::exception&) {
    throw std::invalid_argument("SKREFINE_SEED is not a number: " + std::string(env));
  }
}

ContentResolver chained_resolver(fs::path primary, fs::path secondary) {
  return [a = dir_resolver(std::move(primary)),
          b = dir_resolver(std::move(secondary))](const std::string& rel) {
    try {
      return a(rel);
    } catch (const IoError&) {
      return b(rel);
    }
  };
}

struct ConfigPaths {
  fs::path policy, bpolicy, ptdir, image, params;
};

Artifacts load_artifacts(const ConfigPaths& cp) {
  Artifacts a;
  a.policy = parse_policy(read_text_file(cp.policy));
  a.bpolicy = parse_bpolicy(read_text_file(cp.bpolicy));
  auto [u, v] = params_from_json(read_text_file(cp.params));
  a.u = std::move(u);
  a.v = std::move(v);
  a.image.bytes = read_file(cp.image);
  for (const SubjectSpec& s : a.v.subject_specs)
    a.pts.push_back(load_pt_file(cp.ptdir / (s.name + ".pt"), s.pt_base));
  return a;
}

int cmd_gen(const fs::path& policy_path, const fs::path& outdir, const std::string& fault,
            uint64_t seed) {
  std::string text = read_text_file(policy_path);
  Policy p = parse_policy(text);
  std::vector<Diagnostic> diags = validate_policy(p);
  if (!diags.empty()) {
    for (const Diagnostic& d : diags)
      std::cerr << policy_path.string() << ":" << d.line << ": " << d.message << "\n";
    return kExitValidation;
  }
  ContentResolver resolve = dir_resolver(policy_path.parent_path());
  Artifacts a = generate(p, resolve);

  nlohmann::ordered_json summary;
  summary["outdir"] = outdir.string();
  summary["subjects"] = a.v.nsubs;
  summary["cpus"] = a.v.ncpus;
  summary["image_bytes"] = a.image.bytes.size();
  if (!fault.empty()) {
    std::optional<FaultKind> kind = parse_fault_kind(fault);
    if (!kind) {
      std::cerr << "unknown fault switch '" << fault
                << "' (overlap|chanflag|ptaddr|ptpresent|imgbyte|deadline)\n";
      return kExitValidation;
    }
    FaultReport fr = apply_fault(a, *kind, seed, resolve);
    summary["fault"] = {{"kind", to_string(fr.kind)},
                        {"expected_condition", "r" + std::to_string(fr.expected_condition)},
                        {"description", fr.description}};
  }
  fs::create_directories(outdir);
  write_artifacts(a, outdir);
  write_text_file(outdir / "policy.xml", text);
  std::cout << summary.dump() << "\n";
  return kExitPass;
}

const char* condition_label(int c) {
  switch (c) {
    case 1: return "r1 memory separation";
    case 2: return "r2 permission match";
    case 3: return "r3 mapping validity";
    case 4: return "r4 initial content";
    case 5: return "r5 param structures";
  }
  return "?";
}

void print_check_table(const Artifacts& a, const ConditionReport& r) {
  uint64_t pmem = 0;
  for (const PhysComponent& c : a.bpolicy.phys) pmem = std::max(pmem, c.address + c.size);
  double total_ms = 0;
  for (const ConditionStatus& c : r.conditions) total_ms += c.millis;

  char line[160];
  std::snprintf(line, sizeof line, "%-4s %-4s %-10s %-10s %-9s %s", "Sub", "CPU", "PMem", "Image",
                "Time", "Check Passed");
  std::cout << line << "\n";
  std::snprintf(line, sizeof line, "%-4u %-4u %-10s %-10zu %6.1f ms %s", a.v.nsubs, a.v.ncpus,
                hex(pmem).c_str(), static_cast<size_t>(a.image.size()), total_ms,
                r.all_pass() ? "yes" : "NO");
  std::cout << line << "\n\n";

  for (int c = 1; c <= 5; ++c) {
    const ConditionStatus& st = r.conditions[c - 1];
    std::snprintf(line, sizeof line, "  %-22s %-4s %7.1f ms", condition_label(c),
                  !st.evaluated  ? "-"
                  : st.pass      ? "pass"
                                 : "FAIL",
                  st.millis);
    std::cout << line << "\n";
  }
  for (const Finding& f : r.findings) {
    std::cout << "    r" << f.condition << ": " << f.message;
    if (!f.subject.empty()) std::cout << "  subject " << f.subject;
    if (!f.component.empty()) std::cout << "  component " << f.component;
    if (f.address) std::cout << "  address " << hex(*f.address);
    std::cout << "\n";
  }
}

int cmd_check(ConfigPaths cp, uint64_t naive_bound, const fs::path& json_out) {
  Artifacts a = load_artifacts(cp);
  ContentResolver resolve =
      chained_resolver(cp.bpolicy.parent_path(), cp.policy.parent_path());
  ConditionReport report = check_all(a.policy, a.bpolicy, a.pts, a.image, a.v, resolve);

  ConditionReport naive;
  bool ran_naive = false;
  bool oracle_mismatch = false;
  if (naive_bound > 0) {
    naive = naive_check(a.bpolicy, a.pts, a.image, naive_bound, resolve);
    ran_naive = true;
    for (int c = 1; c <= 5; ++c)
      if (naive.conditions[c - 1].evaluated && report.pass(c) != naive.pass(c))
        oracle_mismatch = true;
  }

  print_check_table(a, report);
  if (!json_out.empty()) {
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(report_to_json(report));
    if (ran_naive) {
      j["naive"] = nlohmann::ordered_json::parse(report_to_json(naive));
      j["oracle_match"] = !oracle_mismatch;
    }
    write_text_file(json_out, j.dump(2) + "\n");
  }
  if (oracle_mismatch) {
    std::cerr << "naive oracle disagrees with the fast checker\n";
    return kExitOracle;
  }
  return report.all_pass() ? kExitPass : kExitFail;
}

std::vector<OperationCall> parse_trace_file(const fs::path& path, uint32_t ncpus) {
  std::vector<OperationCall> trace;
  std::istringstream in(read_text_file(path));
  std::string line;
  size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    OperationCall op;
    op.op = j.at("op").get<std::string>();
    op.cpu = j.value("cpu", 0u);
    op.value = j.value("value", uint64_t{0});
    if (op.op == "interrupt" && j.contains("vector")) op.value = j["vector"].get<uint64_t>();
    bool known = op.op == "init" || op.op == "execute" || op.op == "tick" || op.op == "interrupt";
    if (!known || (op.op != "init" && op.op != "interrupt" && op.cpu >= ncpus) ||
        (op.op == "interrupt" && op.value >= 256))
      throw std::invalid_argument(path.string() + ":" + std::to_string(ln) +
                                  ": trace step out of domain");
    trace.push_back(op);
  }
  return trace;
}

int cmd_simulate(const fs::path& config, uint64_t steps, uint64_t seed, const fs::path& trace_file,
                 bool force, const fs::path& log_path, bool dump_on_fail) {
  ConfigPaths cp{config / "policy.xml", config / "bpolicy.xml", config / "pts",
                 config / "image.bin", config / "params.json"};
  Artifacts a = load_artifacts(cp);
  ContentResolver resolve = chained_resolver(config, cp.policy.parent_path());

  ConditionReport r = check_all(a.policy, a.bpolicy, a.pts, a.image, a.v, resolve);
  if (!r.all_pass() && !force) {
    std::cerr << "condition R fails on this config; refusing to simulate (--force overrides)\n";
    return kExitRefused;
  }

  std::vector<OperationCall> trace = trace_file.empty()
                                         ? random_trace(seed, steps, a.v.ncpus)
                                         : parse_trace_file(trace_file, a.v.ncpus);

  AbstractMachine am(a.u, artifact_resolver(a, resolve));
  ConcreteMachine cm(a.v, a.pts, a.image);
  if (!(am.machine_type() == cm.machine_type())) {
    std::cerr << "machine types differ\n";
    return kExitFail;
  }

  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!log_path.empty()) {
    log_file.open(log_path);
    if (!log_file) {
      std::cerr << "cannot open log file " << log_path << "\n";
      return kExitIo;
    }
    log = &log_file;
  }

  std::string fail_detail;
  if (std::optional<std::string> g0 = glue_and_invariants(am.state(), cm.state()))
    fail_detail = "after init: " + *g0;

  for (size_t i = 0; fail_detail.empty() && i < trace.size(); ++i) {
    const OperationCall& op = trace[i];
    StepOutput oa = am.apply(op);
    StepOutput oc = cm.apply(op);
    std::optional<std::string> g = glue_and_invariants(am.state(), cm.state());

    nlohmann::ordered_json line;
    line["step"] = i;
    line["op"] = op.op;
    if (op.op == "execute" || op.op == "tick") line["cpu"] = op.cpu;
    if (op.op == "interrupt") line["vector"] = op.value;
    line["abstract"] = to_string(oa);
    line["concrete"] = to_string(oc);
    line["glue"] = g ? *g : "pass";
    *log << line.dump() << "\n";

    if (!(oa == oc))
      fail_detail = "step " + std::to_string(i) + " (" + op.op + "): output mismatch, abstract=" +
                    to_string(oa) + " concrete=" + to_string(oc);
    else if (g)
      fail_detail = "step " + std::to_string(i) + " (" + op.op + "): " + *g;
  }

  nlohmann::ordered_json summary;
  summary["result"] = fail_detail.empty() ? "pass" : "divergence";
  summary["steps"] = trace.size();
  if (!fail_detail.empty()) summary["detail"] = fail_detail;
  *log << summary.dump() << "\n";

  if (fail_detail.empty()) return kExitPass;
  std::cerr << "lock-step divergence: " << fail_detail << "\n";
  if (dump_on_fail) {
    write_text_file(config / "abstract_state.json", a_snapshot(am.state()).dump(2) + "\n");
    write_text_file(config / "concrete_state.json", c_snapshot(cm.state()).dump(2) + "\n");
    std::cerr << "state dumps written to " << (config / "abstract_state.json").string() << " and "
              << (config / "concrete_state.json").string() << "\n";
  }
  return kExitFail;
}

int cmd_fuzz(uint32_t configs, uint64_t steps, uint64_t seed, uint32_t jobs, bool inject) {
  struct Row {
    uint64_t policy_seed = 0;
    bool ok = true;
    std::string detail;
  };
  std::vector<Row> rows(configs);
  std::atomic<uint32_t> next{0};

  auto worker = [&] {
    for (;;) {
      uint32_t i = next.fetch_add(1);
      if (i >= configs) return;
      Row row;
      row.policy_seed = seed + i;
      try {
        Policy p = gen_random_policy(row.policy_seed);
        Artifacts a = generate(p, unavailable_resolver());
        if (inject) {
          std::mt19937_64 rng(row.policy_seed ^ 0xfa017ULL);
          // not every fault kind applies to every layout; rotate until one does
          uint64_t first = rand_below(rng, 6);
          FaultReport fr{};
          for (uint64_t k = 0;; ++k) {
            try {
              fr = apply_fault(a, static_cast<FaultKind>((first + k) % 6), row.policy_seed,
                               unavailable_resolver());
              break;
            } catch (const ToolchainError&) {
              if (k == 5) throw;
            }
          }
          ConditionReport r = check_all(a.policy, a.bpolicy, a.pts, a.image, a.v,
                                        artifact_resolver(a, unavailable_resolver()));
          for (int c = 1; c <= 5; ++c) {
            bool want_pass = c != fr.expected_condition;
            if (r.pass(c) != want_pass) {
              row.ok = false;
              row.detail = std::string("fault ") + to_string(fr.kind) + " misflagged r" +
                           std::to_string(c);
              break;
            }
          }
        } else {
          LockstepRunResult r =
              lockstep_run(a, unavailable_resolver(), row.policy_seed * 2 + 1, steps);
          if (!r.pass()) {
            row.ok = false;
            row.detail = r.refused ? "condition R failed on a clean config"
                                   : "step " + std::to_string(r.verdict.step) + ": " +
                                         r.verdict.detail;
          }
        }
      } catch (const std::exception& e) {
        row.ok = false;
        row.detail = e.what();
      }
      rows[i] = std::move(row);
    }
  };

  uint32_t nthreads = std::min(std::max(jobs, 1u), std::max(configs, 1u));
  std::vector<std::thread> pool;
  for (uint32_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();

  nlohmann::ordered_json summary;
  uint32_t passed = 0;
  nlohmann::ordered_json failures = nlohmann::ordered_json::array();
  for (const Row& r : rows) {
    if (r.ok)
      ++passed;
    else
      failures.push_back({{"policy_seed", r.policy_seed}, {"detail", r.detail}});
  }
  summary["configs"] = configs;
  summary["mode"] = inject ? "inject-random-fault" : "clean";
  summary["passed"] = passed;
  summary["failed"] = configs - passed;
  summary["failures"] = failures;
  std::cout << summary.dump() << "\n";
  return passed == configs ? kExitPass : kExitFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"policy-driven separation kernel artifact generation, condition R checking, and "
               "lock-step refinement simulation"};
  app.require_subcommand(1);

  std::string gen_policy, gen_out, gen_fault;
  uint64_t gen_seed = 1;
  CLI::App* gen = app.add_subcommand("gen", "generate artifacts from a policy");
  gen->add_option("policy", gen_policy, "system policy xml")->required();
  gen->add_option("--out,-o", gen_out, "output directory")->required();
  gen->add_option("--fault", gen_fault,
                  "inject one fault: overlap|chanflag|ptaddr|ptpresent|imgbyte|deadline");
  gen->add_option("--seed", gen_seed, "fault placement seed");

  std::string ck_config, ck_policy, ck_bpolicy, ck_ptdir, ck_image, ck_params, ck_json;
  uint64_t ck_naive = 0;
  CLI::App* check = app.add_subcommand("check", "check condition R on generated artifacts");
  check->add_option("--config", ck_config, "config directory (sets all input paths)");
  check->add_option("--policy", ck_policy, "policy xml");
  check->add_option("--bpolicy", ck_bpolicy, "generated bpolicy xml");
  check->add_option("--ptdir", ck_ptdir, "directory with per-subject .pt files");
  check->add_option("--image", ck_image, "memory image");
  check->add_option("--params", ck_params, "parameter bundle json");
  check->add_option("--naive", ck_naive,
                    "also run the brute-force oracle up to this virtual address bound");
  check->add_option("--json", ck_json, "write the full report to this file");

  std::string sim_config, sim_trace, sim_log;
  uint64_t sim_steps = 10000, sim_seed = 1;
  bool sim_force = false, sim_dump = false;
  CLI::App* sim = app.add_subcommand("simulate", "run both machines in lock-step");
  sim->add_option("--config", sim_config, "config directory from gen")->required();
  sim->add_option("--steps", sim_steps, "random trace length");
  sim->add_option("--seed", sim_seed, "random trace seed");
  sim->add_option("--trace", sim_trace, "replay a json-lines trace file instead");
  sim->add_flag("--force", sim_force, "simulate even when condition R fails");
  sim->add_option("--log", sim_log, "write the step log here instead of stdout");
  sim->add_flag("--dump-on-fail", sim_dump, "write both state snapshots on divergence");

  uint32_t fz_configs = 0, fz_jobs = 4;
  uint64_t fz_steps = 1000, fz_seed = 1;
  bool fz_inject = false;
  CLI::App* fuzz = app.add_subcommand("fuzz", "gen+check+simulate over random policies");
  fuzz->add_option("--configs", fz_configs, "number of random configs")->required();
  fuzz->add_option("--steps", fz_steps, "lock-step trace length per config");
  fuzz->add_option("--seed", fz_seed, "base seed");
  fuzz->add_option("--jobs", fz_jobs, "worker threads");
  fuzz->add_flag("--inject-random-fault", fz_inject,
                 "inject one random fault per config and expect the checker to flag it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitPass : kExitValidation;
  }

  try {
    if (app.got_subcommand(gen))
      return cmd_gen(gen_policy, gen_out, gen_fault, effective_seed(gen_seed));
    if (app.got_subcommand(check)) {
      ConfigPaths cp;
      if (!ck_config.empty()) {
        fs::path dir(ck_config);
        cp = {dir / "policy.xml", dir / "bpolicy.xml", dir / "pts", dir / "image.bin",
              dir / "params.json"};
      }
      if (!ck_policy.empty()) cp.policy = ck_policy;
      if (!ck_bpolicy.empty()) cp.bpolicy = ck_bpolicy;
      if (!ck_ptdir.empty()) cp.ptdir = ck_ptdir;
      if (!ck_image.empty()) cp.image = ck_image;
      if (!ck_params.empty()) cp.params = ck_params;
      if (cp.policy.empty() || cp.bpolicy.empty() || cp.ptdir.empty() || cp.image.empty() ||
          cp.params.empty()) {
        std::cerr << "check needs --config or all of --policy --bpolicy --ptdir --image "
                     "--params\n";
        return kExitValidation;
      }
      if (ck_naive > kNaiveBoundLimit) {
        std::cerr << "naive bound exceeds " << kNaiveBoundLimit << "\n";
        return kExitValidation;
      }
      return cmd_check(cp, ck_naive, ck_json);
    }
    if (app.got_subcommand(sim))
      return cmd_simulate(sim_config, sim_steps, effective_seed(sim_seed), sim_trace, sim_force,
                          sim_log, sim_dump);
    if (app.got_subcommand(fuzz))
      return cmd_fuzz(fz_configs, fz_steps, effective_seed(fz_seed), fz_jobs, fz_inject);
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const PtFormatError& e) {
    std::cerr << "paging structure error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "json error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFail;
  }
  return kExitValidation;
}
