// tierkv: device profiling, scheme generation and benchmark runs over a
// tiered key-value store.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
// error, 3 a check found a problem.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tierkv/bench.hpp"

namespace fs = std::filesystem;
using namespace tierkv;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitCheck = 3;

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string dir;
};

void AddCommon(CLI::App* cmd, Common* c) {
  cmd->add_option("-c,--config", c->config_file, "flat key=value config file")
      ->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", c->sets, "override a config key (key=value), repeatable");
  cmd->add_option("-d,--dir", c->dir, "data directory");
}

int Fail(const Status& s, int code = kExitRuntime) {
  std::cerr << "error: " << s.ToString() << "\n";
  return code;
}

int ConfigFail(const Status& s) { return Fail(s, kExitUsage); }

Status LoadConfig(const Common& c, BenchConfig* out) {
  KvText kv;
  if (!c.config_file.empty()) TIERKV_RETURN_IF_ERROR(KvText::Load(c.config_file, &kv));
  for (const auto& s : c.sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      return Status::InvalidArgument("--set expects key=value, got '" + s + "'");
    }
    kv.Set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (!c.dir.empty()) kv.Set("dir", c.dir);
  TIERKV_RETURN_IF_ERROR(out->Apply(kv));
  return out->Validate();
}

RunOptions RunOptionsFor(const BenchConfig& config) {
  RunOptions o;
  o.duration_s = config.duration_s;
  o.sample_s = config.sample_s;
  o.time_scale = config.delay.enabled ? config.delay.time_scale : 1.0;
  return o;
}

Status LoadScheme(const std::string& file, const BenchConfig& config, PlacementScheme* out) {
  TIERKV_RETURN_IF_ERROR(PlacementScheme::Load(file, out));
  return out->ValidateStructure(config.tier_count());
}

void PrintLevels(lsm::LsmStore& store, TierFs& tfs) {
  auto bytes = store.LevelBytes();
  auto files = store.LevelFiles();
  for (size_t l = 0; l < bytes.size(); ++l) {
    if (files[l] == 0) continue;
    std::printf("level.L%zu=%d files %llu bytes tier %d\n", l, files[l],
                static_cast<unsigned long long>(bytes[l]), tfs.scheme()->TierForLevel(int(l)));
  }
}

// profile-device

struct ProfileDeviceArgs {
  int tier = 0;
  std::vector<int> threads;
  int duration_ms = 500;
  std::string mode = "both";
  std::string out;
};

int ProfileDeviceCmd(const Common& common, const ProfileDeviceArgs& a) {
  BenchConfig config;
  if (Status s = LoadConfig(common, &config); !s.ok()) return ConfigFail(s);
  if (a.tier < 0 || a.tier >= config.tier_count()) {
    return ConfigFail(Status::InvalidArgument("--tier out of range"));
  }
  std::vector<DeviceProfile> tiers;
  if (Status s = config.Profiles(&tiers); !s.ok()) return ConfigFail(s);
  DeviceProfile tier = tiers[a.tier];
  fs::path scratch = config.dir / ("profile-tier" + std::to_string(a.tier));
  tier.backing_path = scratch;

  DeviceProfileOptions o;
  if (!a.threads.empty()) o.thread_counts = a.threads;
  o.duration = std::chrono::milliseconds(a.duration_ms);
  o.interpolation = config.delay.interpolation;

  DeviceProfile result = tiers[a.tier];
  Status s;
  if (a.mode == "both") {
    s = ProfileDeviceBoth(tier, o, &result);
  } else {
    o.mode = a.mode == "read" ? ProfileMode::kRead : ProfileMode::kWrite;
    DeviceMeasurement m;
    s = ProfileDevice(tier, o, &m);
    if (s.ok()) {
      (o.mode == ProfileMode::kRead ? result.read_curve : result.write_curve) = m.Curve();
      result.DeriveParallelism();
      for (const auto& p : m.points) {
        std::printf("point n=%d ops_per_sec=%.0f%s\n", p.concurrency, p.ops_per_sec,
                    p.low_confidence ? " low_confidence" : "");
      }
      std::printf("knee=%d\n", m.knee);
    }
  }
  std::error_code ec;
  fs::remove_all(scratch, ec);
  if (!s.ok()) return Fail(s);
  result.backing_path.clear();
  if (s = result.Save(a.out); !s.ok()) return Fail(s);
  std::printf("max_write_parallelism=%d\nmax_read_parallelism=%d\nprofile=%s\n",
              result.max_write_parallelism, result.max_read_parallelism, a.out.c_str());
  return kExitOk;
}

// profile-lsm

struct ProfileLsmArgs {
  std::string workload;
  int sample_ms = 100;
  std::string out;
};

int ProfileLsmCmd(const Common& common, const ProfileLsmArgs& a) {
  BenchConfig config;
  if (Status s = LoadConfig(common, &config); !s.ok()) return ConfigFail(s);
  if (!a.workload.empty()) {
    if (Status s = WorkloadSpec::Preset(a.workload, &config.workload); !s.ok()) return ConfigFail(s);
  }
  config.dir = config.dir / "profile-lsm";
  std::error_code ec;
  fs::remove_all(config.dir, ec);
  auto scheme = PlacementScheme::Prefix(2, config.lsm.levels, config.tier_count() - 1);

  ConcurrencyDemand demand;
  Status s;
  {
    std::unique_ptr<BenchEnv> env;
    s = BenchEnv::Open(config, scheme, &env);
    if (!s.ok()) return Fail(s);
    s = LoadPhase(config.workload, env->store());
    if (s.ok()) {
      s = ProfileLsm(config.workload, env->store(), env->fs(),
                     std::chrono::milliseconds(a.sample_ms), &demand);
    }
    Status c = env->Close();
    if (s.ok()) s = c;
  }
  fs::remove_all(config.dir, ec);
  if (!s.ok()) return Fail(s);
  if (s = demand.Save(a.out); !s.ok()) return Fail(s);
  std::fputs(demand.Serialize().c_str(), stdout);
  if (demand.no_compactions) {
    std::fprintf(stderr, "warning: no compactions ran; level demand is zero. "
                         "Use more operations or a smaller memtable.\n");
  }
  return kExitOk;
}

// gen-scheme

struct GenSchemeArgs {
  std::string demand;
  double reserve = 0.2;
  std::string out;
};

int GenSchemeCmd(const Common& common, const GenSchemeArgs& a) {
  BenchConfig config;
  if (Status s = LoadConfig(common, &config); !s.ok()) return ConfigFail(s);
  ConcurrencyDemand demand;
  if (Status s = ConcurrencyDemand::Load(a.demand, &demand); !s.ok()) return ConfigFail(s);
  std::vector<DeviceProfile> tiers;
  if (Status s = config.Profiles(&tiers); !s.ok()) return ConfigFail(s);
  SchemeOptions o;
  o.reserve_fraction = a.reserve;
  o.levels = config.lsm.levels;
  PlacementScheme scheme;
  if (Status s = GenerateScheme(demand, tiers, o, &scheme); !s.ok()) return ConfigFail(s);
  if (Status s = scheme.Save(a.out); !s.ok()) return Fail(s);
  std::fputs(scheme.Serialize().c_str(), stdout);
  return kExitOk;
}

// load

int LoadCmd(const Common& common, const std::string& scheme_file) {
  BenchConfig config;
  if (Status s = LoadConfig(common, &config); !s.ok()) return ConfigFail(s);
  PlacementScheme scheme;
  if (Status s = LoadScheme(scheme_file, config, &scheme); !s.ok()) return ConfigFail(s);
  std::unique_ptr<BenchEnv> env;
  if (Status s = BenchEnv::Open(config, scheme, &env); !s.ok()) return Fail(s);
  if (Status s = LoadPhase(config.workload, env->store()); !s.ok()) return Fail(s);
  std::printf("loaded=%llu\n", static_cast<unsigned long long>(config.workload.record_count));
  PrintLevels(env->store(), env->fs());
  if (Status s = env->Close(); !s.ok()) return Fail(s);
  return kExitOk;
}

// run

struct RunArgs {
  std::string scheme;
  std::string csv = "run.csv";
  std::string svg;
  std::string summary;
  bool load = false;
  int64_t crash_after = 0;
};

int RunCmd(const Common& common, const RunArgs& a) {
  BenchConfig config;
  if (Status s = LoadConfig(common, &config); !s.ok()) return ConfigFail(s);
  PlacementScheme scheme;
  if (Status s = LoadScheme(a.scheme, config, &scheme); !s.ok()) return ConfigFail(s);
  auto faults = std::make_shared<FaultInjector>();
  std::unique_ptr<BenchEnv> env;
  if (Status s = BenchEnv::Open(config, scheme, &env, faults); !s.ok()) return Fail(s);
  if (a.load) {
    if (Status s = LoadPhase(config.workload, env->store()); !s.ok()) return Fail(s);
  }
  WriterCapMonitor cap(&env->fs());
  cap.Start();
  if (a.crash_after > 0) faults->CrashAfterMutations(a.crash_after);
  RunReport report;
  Status s = RunExperiment(config.workload, env->store(), env->fs(), RunOptionsFor(config), &report);
  cap.Stop();
  if (!s.ok()) return Fail(s);
  if (a.crash_after > 0) {
    // Leave the data directory as a crashed process would.
    std::printf("crashed=%d\n", faults->crashed() ? 1 : 0);
    std::fflush(stdout);
    std::_Exit(faults->crashed() ? kExitOk : kExitRuntime);
  }
  if (Status w = WriteCsv(report, a.csv); !w.ok()) return Fail(w);
  if (!a.svg.empty()) {
    if (Status w = WriteSvg(report, a.svg); !w.ok()) return Fail(w);
  }
  std::string summary = FormatSummary(report);
  summary += "writer_cap_samples=" + std::to_string(cap.samples()) + "\n";
  summary += "writer_cap_violations=" + std::to_string(cap.violations()) + "\n";
  if (!a.summary.empty()) {
    if (Status w = WriteWholeFile(a.summary, summary); !w.ok()) return Fail(w);
  }
  std::fputs(summary.c_str(), stdout);
  PrintLevels(env->store(), env->fs());
  Status c = env->Close();
  if (report.partial) {
    std::cerr << "error: run stopped early: " << report.error << "\n";
    return kExitRuntime;
  }
  if (!c.ok()) return Fail(c);
  return cap.violations() > 0 ? kExitCheck : kExitOk;
}

// report

int ReportCmd(const std::string& csv, const std::string& svg, const std::string& summary_file) {
  RunReport report;
  if (Status s = ReadCsv(csv, &report); !s.ok()) return Fail(s);
  std::string out = svg.empty() ? fs::path(csv).replace_extension(".svg").string() : svg;
  if (Status s = WriteSvg(report, out); !s.ok()) return Fail(s);
  std::string summary = FormatSummary(report);
  if (!summary_file.empty()) {
    if (Status s = WriteWholeFile(summary_file, summary); !s.ok()) return Fail(s);
  }
  std::fputs(summary.c_str(), stdout);
  std::printf("svg=%s\n", out.c_str());
  return kExitOk;
}

// recover-check

int RecoverCheckCmd(const Common& common, const std::string& scheme_file, int64_t records) {
  BenchConfig config;
  if (Status s = LoadConfig(common, &config); !s.ok()) return ConfigFail(s);
  PlacementScheme scheme;
  if (Status s = LoadScheme(scheme_file, config, &scheme); !s.ok()) return ConfigFail(s);
  uint64_t expect = records < 0 ? config.workload.record_count : static_cast<uint64_t>(records);
  RecoverCheckReport report;
  if (Status s = RecoverCheck(config, scheme, nullptr, expect, &report); !s.ok()) return Fail(s);
  std::fputs(FormatRecoverCheck(report).c_str(), stdout);
  return report.ok() ? kExitOk : kExitCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tiered key-value store toolkit"};
  app.require_subcommand(1);

  Common common;

  ProfileDeviceArgs pd;
  auto* cmd_pd = app.add_subcommand("profile-device", "measure a tier's throughput curve");
  AddCommon(cmd_pd, &common);
  cmd_pd->add_option("--tier", pd.tier, "tier id")->required();
  cmd_pd->add_option("--threads", pd.threads, "worker counts, e.g. 1,2,4,8")->delimiter(',');
  cmd_pd->add_option("--duration-ms", pd.duration_ms, "wall time per point")->check(CLI::PositiveNumber);
  cmd_pd->add_option("--mode", pd.mode, "write, read or both")
      ->check(CLI::IsMember({"write", "read", "both"}));
  cmd_pd->add_option("-o,--out", pd.out, "profile file to write")->required();

  ProfileLsmArgs pl;
  auto* cmd_pl = app.add_subcommand("profile-lsm", "measure per-level writer demand");
  AddCommon(cmd_pl, &common);
  cmd_pl->add_option("--workload", pl.workload, "workload preset a-f");
  cmd_pl->add_option("--sample-ms", pl.sample_ms, "sampling period")->check(CLI::PositiveNumber);
  cmd_pl->add_option("-o,--out", pl.out, "demand file to write")->required();

  GenSchemeArgs gs;
  auto* cmd_gs = app.add_subcommand("gen-scheme", "derive a placement scheme");
  AddCommon(cmd_gs, &common);
  cmd_gs->add_option("--demand", gs.demand, "demand file from profile-lsm")
      ->required()
      ->check(CLI::ExistingFile);
  cmd_gs->add_option("--reserve", gs.reserve, "fraction of tier 0 kept free")
      ->check(CLI::Range(0.0, 1.0));
  cmd_gs->add_option("-o,--out", gs.out, "scheme file to write")->required();

  std::string load_scheme;
  auto* cmd_load = app.add_subcommand("load", "insert the workload's records");
  AddCommon(cmd_load, &common);
  cmd_load->add_option("--scheme", load_scheme, "scheme file")->required()->check(CLI::ExistingFile);

  RunArgs run;
  auto* cmd_run = app.add_subcommand("run", "run a workload and record metrics");
  AddCommon(cmd_run, &common);
  cmd_run->add_option("--scheme", run.scheme, "scheme file")->required()->check(CLI::ExistingFile);
  cmd_run->add_option("--csv", run.csv, "metrics CSV to write");
  cmd_run->add_option("--svg", run.svg, "plot to write");
  cmd_run->add_option("--summary", run.summary, "summary file to write");
  cmd_run->add_flag("--load", run.load, "load records before running");
  cmd_run->add_option("--crash-after", run.crash_after,
                      "simulate a crash after N device mutations and exit");

  std::string rep_csv, rep_svg, rep_summary;
  auto* cmd_rep = app.add_subcommand("report", "rebuild plot and summary from a CSV");
  cmd_rep->add_option("--csv", rep_csv, "metrics CSV")->required()->check(CLI::ExistingFile);
  cmd_rep->add_option("--svg", rep_svg, "plot to write (default: next to the CSV)");
  cmd_rep->add_option("--summary", rep_summary, "summary file to write");

  std::string rc_scheme;
  int64_t rc_records = -1;
  auto* cmd_rc = app.add_subcommand("recover-check", "reopen after a crash and verify");
  AddCommon(cmd_rc, &common);
  cmd_rc->add_option("--scheme", rc_scheme, "scheme file")->required()->check(CLI::ExistingFile);
  cmd_rc->add_option("--records", rc_records,
                     "records that must be present (default: workload.records, 0 skips)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (*cmd_pd) return ProfileDeviceCmd(common, pd);
  if (*cmd_pl) return ProfileLsmCmd(common, pl);
  if (*cmd_gs) return GenSchemeCmd(common, gs);
  if (*cmd_load) return LoadCmd(common, load_scheme);
  if (*cmd_run) return RunCmd(common, run);
  if (*cmd_rep) return ReportCmd(rep_csv, rep_svg, rep_summary);
  if (*cmd_rc) return RecoverCheckCmd(common, rc_scheme, rc_records);
  return kExitUsage;
}
