// feel_sched: run, verify and compare scheduling experiments.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "feel/analysis.hpp"
#include "feel/config.hpp"
#include "feel/experiment.hpp"

namespace {

using feel::ConfigError;
using feel::ExperimentConfig;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  int seed_count = 0;
  std::vector<std::uint64_t> seed_list;
  std::string out_dir;
  bool quiet = false;
};

ExperimentConfig load_with_overrides(const std::string& path,
                                     const std::vector<std::string>& overrides) {
  ExperimentConfig config = path.empty() ? ExperimentConfig{} : feel::load_config(path);
  for (const auto& o : overrides) {
    feel::apply_override(config, o);
  }
  return config;
}

std::vector<std::uint64_t> resolve_seeds(const CommonOptions& opts, const ExperimentConfig& config) {
  if (!opts.seed_list.empty()) {
    return opts.seed_list;
  }
  if (opts.seed_count > 0) {
    std::vector<std::uint64_t> seeds;
    for (int s = 1; s <= opts.seed_count; ++s) {
      seeds.push_back(static_cast<std::uint64_t>(s));
    }
    return seeds;
  }
  return config.seeds;
}

std::string fmt(double v, int precision = 4) {
  if (std::isinf(v)) {
    return "unreached";
  }
  if (std::isnan(v)) {
    return "n/a";
  }
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

int cmd_run(const CommonOptions& opts) {
  auto config = load_with_overrides(opts.config_path, opts.overrides);
  config.seeds = resolve_seeds(opts, config);
  const std::string dir = opts.out_dir.empty() ? config.output.dir : opts.out_dir;
  const auto runs = feel::run_seeds(config, config.seeds);
  feel::write_outputs(config, runs, dir, opts.overrides);
  if (!opts.quiet) {
    for (const auto& run : runs) {
      const auto& last = run.rounds.back();
      std::cout << "seed " << run.seed << ": " << run.rounds.size() << " rounds, "
                << fmt(last.sim_seconds) << " s simulated, loss " << fmt(last.loss)
                << ", accuracy " << fmt(run.final_accuracy()) << "\n";
    }
    std::cout << "wrote " << dir << "/summary.json\n";
  }
  return 0;
}

int cmd_verify(const std::string& suite, const CommonOptions& opts) {
  const auto report = feel::run_verification(suite);
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    std::ofstream(std::filesystem::path(opts.out_dir) / "verification.json") << report.to_json()
                                                                             << "\n";
  }
  for (const auto& c : report.checks) {
    if (opts.quiet && (c.passed || !c.gated)) {
      continue;
    }
    const char* status = !c.gated ? "INFO" : c.passed ? "PASS" : "FAIL";
    std::cout << status << "  " << c.suite << "." << c.name << "  value=" << c.value
              << " limit=" << c.limit << " margin=" << (c.limit - c.value);
    if (!c.detail.empty()) {
      std::cout << "  (" << c.detail << ")";
    }
    std::cout << "\n";
  }
  return report.passed() ? 0 : 1;
}

// Blank out the fields a comparison is allowed to vary.
ExperimentConfig comparable(ExperimentConfig config) {
  config.scheduler = {};
  config.output = {};
  config.seeds = {};
  return config;
}

int cmd_compare(const std::vector<std::string>& paths, const CommonOptions& opts, bool force,
                const std::string& target_spec) {
  if (paths.empty()) {
    throw ConfigError("compare needs at least one --config");
  }
  std::vector<ExperimentConfig> configs;
  for (const auto& p : paths) {
    configs.push_back(load_with_overrides(p, opts.overrides));
  }
  if (!force) {
    for (std::size_t i = 1; i < configs.size(); ++i) {
      if (!(comparable(configs[i]) == comparable(configs[0]))) {
        throw ConfigError(paths[i] + " differs from " + paths[0] +
                          " outside [scheduler]; pass --force to compare anyway");
      }
    }
  }
  const auto seeds = resolve_seeds(opts, configs.front());
  std::vector<std::vector<feel::RunResult>> results;
  for (auto& c : configs) {
    c.seeds = seeds;
    c.trainer.target_accuracy.reset();  // full runs; time-to-target is read off afterwards
    results.push_back(feel::run_seeds(c, seeds));
  }

  double target = 0.0;
  if (target_spec == "p90") {
    std::vector<double> finals;
    for (const auto& r : results.front()) {
      finals.push_back(r.final_accuracy());
    }
    std::sort(finals.begin(), finals.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.9 * double(finals.size()))) - 1;
    target = finals[std::min(rank, finals.size() - 1)];
  } else {
    target = std::stod(target_spec);
  }

  std::ostringstream csv;
  csv << "config,policy,devices_per_round,rho,median_time_to_target_s,reached,median_final_accuracy\n";
  std::ostringstream table;
  table << "target accuracy " << fmt(target) << " over " << seeds.size() << " seeds\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-28s %-20s %3s %10s %14s %8s %10s\n", "config", "policy", "M",
                "rho", "median_t_s", "reached", "final_acc");
  table << line;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    std::vector<double> times;
    std::vector<double> finals;
    int reached = 0;
    for (const auto& r : results[i]) {
      const auto t = r.time_to_accuracy(target);
      reached += t.has_value();
      times.push_back(t.value_or(std::numeric_limits<double>::infinity()));
      finals.push_back(r.final_accuracy());
    }
    const auto& s = configs[i].scheduler;
    const double med = feel::median(times);
    const double fin = feel::median(finals);
    const std::string rho = s.auto_rho ? "auto*" + fmt(s.rho_scale) : fmt(s.rho);
    const std::string name = std::filesystem::path(paths[i]).filename().string();
    csv << name << "," << feel::policy_name(s.policy) << "," << s.devices_per_round << "," << rho
        << "," << (std::isinf(med) ? "unreached" : fmt(med, 10)) << "," << reached << ","
        << fmt(fin, 10) << "\n";
    std::snprintf(line, sizeof(line), "%-28s %-20s %3d %10s %14s %4d/%-3zu %10s\n", name.c_str(),
                  feel::policy_name(s.policy).c_str(), s.devices_per_round, rho.c_str(),
                  fmt(med).c_str(), reached, seeds.size(), fmt(fin).c_str());
    table << line;
  }
  const std::string dir = opts.out_dir.empty() ? "compare_out" : opts.out_dir;
  std::filesystem::create_directories(dir);
  std::ofstream(std::filesystem::path(dir) / "compare.csv") << csv.str();
  std::ofstream(std::filesystem::path(dir) / "compare.txt") << table.str();
  if (!opts.quiet) {
    std::cout << table.str();
  }
  return 0;
}

void add_common(CLI::App* cmd, CommonOptions& opts, bool with_config) {
  if (with_config) {
    cmd->add_option("--config", opts.config_path, "experiment file (key/value or JSON)");
  }
  cmd->add_option("--set", opts.overrides, "override, section.key=value (repeatable)");
  auto* count = cmd->add_option("--seeds", opts.seed_count, "run seeds 1..N");
  auto* list = cmd->add_option("--seed-list", opts.seed_list, "explicit seeds")->delimiter(',');
  count->excludes(list);
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_flag("--quiet", opts.quiet, "suppress progress output");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Importance- and channel-aware scheduling simulator"};
  app.require_subcommand(1);

  CommonOptions run_opts;
  auto* run = app.add_subcommand("run", "run every seed of an experiment");
  add_common(run, run_opts, true);

  CommonOptions verify_opts;
  std::string suite = "all";
  auto* verify = app.add_subcommand("verify", "numerical checks of the scheduling theory");
  verify->add_option("suite", suite, "unbiasedness|optimality|bandwidth|bounds|all")
      ->check(CLI::IsMember(feel::verification_suites()));
  verify->add_option("--out", verify_opts.out_dir, "directory for verification.json");
  verify->add_flag("--quiet", verify_opts.quiet, "print failures only");

  CommonOptions compare_opts;
  std::vector<std::string> compare_paths;
  bool force = false;
  std::string target = "p90";
  auto* compare = app.add_subcommand("compare", "median time-to-target per policy");
  compare->add_option("--config", compare_paths, "experiment files (repeatable)")->required();
  add_common(compare, compare_opts, false);
  compare->add_flag("--force", force, "allow configs that differ outside [scheduler]");
  compare->add_option("--target", target,
                      "target accuracy, or p90 for the first config's 90th percentile");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      return cmd_run(run_opts);
    }
    if (*verify) {
      return cmd_verify(suite, verify_opts);
    }
    return cmd_compare(compare_paths, compare_opts, force, target);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
