// Acceptance driver: one line per criterion with the measured value, the
// pinned limit and the wall time. Exit status is nonzero when any line fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "feel/analysis.hpp"
#include "feel/config.hpp"
#include "feel/experiment.hpp"

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Line {
  int id = 0;
  bool passed = false;
  std::string measured;
  double seconds = 0.0;
  double budget = 0.0;
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return buf;
}

double z_score(const std::vector<double>& xs, double target) {
  const double n = double(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) {
    ss += (x - mean) * (x - mean);
  }
  const double se = std::sqrt(ss / (n - 1.0) / n);
  return std::abs(mean - target) / se;
}

struct Fleet {
  std::vector<feel::Gradient> gradients;
  std::vector<std::int64_t> sizes;
  std::vector<double> norms;
  std::vector<double> upload;
  Eigen::VectorXd truth;
  double n = 0.0;
};

Fleet random_fleet(std::size_t count, Eigen::Index dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::int64_t> size_dist(5, 80);
  std::uniform_real_distribution<double> upload_dist(0.05, 2.0);
  Fleet f;
  f.truth = Eigen::VectorXd::Zero(dim);
  for (std::size_t k = 0; k < count; ++k) {
    const Eigen::VectorXd g =
        std::exp(normal(rng)) * Eigen::VectorXd::NullaryExpr(dim, [&] { return normal(rng); });
    f.gradients.emplace_back(g);
    f.norms.push_back(g.norm());
    f.sizes.push_back(size_dist(rng));
    f.upload.push_back(upload_dist(rng));
    f.truth += double(f.sizes.back()) * g;
    f.n += double(f.sizes.back());
  }
  f.truth /= f.n;
  return f;
}

Eigen::VectorXd random_distribution(std::size_t count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.02, 1.0);
  Eigen::VectorXd p = Eigen::VectorXd::NullaryExpr(Eigen::Index(count), [&] { return u(rng); });
  return p / p.sum();
}

Line criterion1() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto f = random_fleet(std::size_t(1 + trial % 10), 6, rng);
    const auto p = random_distribution(f.gradients.size(), rng);
    Eigen::VectorXd expectation = Eigen::VectorXd::Zero(6);
    for (std::size_t k = 0; k < f.gradients.size(); ++k) {
      const double pk = p(Eigen::Index(k));
      expectation +=
          pk * feel::aggregate_single(f.gradients[k], f.sizes[k], std::int64_t(f.n), pk).values();
    }
    worst = std::max(worst, (expectation - f.truth).lpNorm<Eigen::Infinity>());
  }
  return {1, worst < 1e-12, format("max-norm %.3g (limit 1e-12), 100 fleets K<=10", worst), 0, 1};
}

// Ordered sequences with probability prod q_m, q from p renormalized over unpicked devices.
Eigen::VectorXd enumerate(const Eigen::VectorXd& p, std::size_t picks, const Fleet& f, double* mass) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(f.truth.size());
  std::vector<std::size_t> seq;
  std::vector<double> q;
  *mass = 0.0;
  std::function<void(double, double)> walk = [&](double prob, double remaining) {
    if (seq.size() == picks) {
      feel::ScheduleDecision<double> d;
      d.sequence = seq;
      d.conditional = q;
      acc += prob * feel::aggregate_multi<double>(d, f.gradients, f.sizes).values();
      *mass += prob;
      return;
    }
    for (std::size_t k = 0; k < std::size_t(p.size()); ++k) {
      if (std::find(seq.begin(), seq.end(), k) != seq.end()) {
        continue;
      }
      const double pk = p(Eigen::Index(k));
      seq.push_back(k);
      q.push_back(pk / remaining);
      walk(prob * pk / remaining, remaining - pk);
      seq.pop_back();
      q.pop_back();
    }
  };
  walk(1.0, 1.0);
  return acc;
}

Line criterion2() {
  std::mt19937_64 rng(202);
  double enum_worst = 0.0;
  for (std::size_t count = 1; count <= 5; ++count) {
    for (std::size_t picks = 1; picks <= std::min<std::size_t>(3, count); ++picks) {
      for (int rep = 0; rep < 4; ++rep) {
        const auto f = random_fleet(count, 4, rng);
        const auto p = random_distribution(count, rng);
        double mass = 0.0;
        const auto mean = enumerate(p, picks, f, &mass);
        enum_worst = std::max({enum_worst, (mean - f.truth).lpNorm<Eigen::Infinity>(),
                               std::abs(mass - 1.0)});
      }
    }
  }
  double z_worst = 0.0;
  feel::Rng sampler(203);
  for (std::size_t picks = 1; picks <= 3; ++picks) {
    const auto f = random_fleet(5, 4, rng);
    const auto p = random_distribution(5, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::VectorXd dir = Eigen::VectorXd::NullaryExpr(4, [&] { return normal(rng); }).normalized();
    std::vector<double> proj;
    for (int draw = 0; draw < 100000; ++draw) {
      const auto d = feel::sample_without_replacement(p, picks, sampler);
      proj.push_back(dir.dot(feel::aggregate_multi<double>(d, f.gradients, f.sizes).values()));
    }
    z_worst = std::max(z_worst, z_score(proj, dir.dot(f.truth)));
  }
  return {2, enum_worst < 1e-12 && z_worst <= 3.0,
          format("enumeration max-norm %.3g (limit 1e-12); Monte Carlo worst z %.2f (limit 3)",
                 enum_worst, z_worst),
          0, 30};
}

struct GridMin {
  double objective = INFINITY;
  Eigen::Vector3d p;
};

// Objective evaluated directly from its definition on every grid point.
GridMin grid_minimum(const Fleet& f, double rho, int cells) {
  GridMin best;
  Eigen::Vector3d a;
  for (int k = 0; k < 3; ++k) {
    a(k) = double(f.sizes[std::size_t(k)]) / f.n * f.norms[std::size_t(k)];
  }
  for (int i = 0; i <= cells; ++i) {
    for (int j = 0; i + j <= cells; ++j) {
      const Eigen::Vector3d p(double(i) / cells, double(j) / cells, double(cells - i - j) / cells);
      if ((p.array() <= 0.0).any()) {
        continue;
      }
      double value = 0.0;
      for (int k = 0; k < 3; ++k) {
        value += rho * a(k) * a(k) / p(k) + (1.0 - rho) * p(k) * f.upload[std::size_t(k)];
      }
      if (value < best.objective) {
        best.objective = value;
        best.p = p;
      }
    }
  }
  return best;
}

Line criterion3() {
  std::mt19937_64 rng(303);
  const double rhos[] = {0.1, 0.5, 0.9};
  double rel_worst = 0.0;
  double above_worst = -INFINITY;
  double sum_worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto f = random_fleet(3, 4, rng);
    const double rho = rhos[trial % 3];
    const feel::SchedulingInputs<double> in{f.sizes, f.norms, f.upload};
    const auto dist = feel::solve_optimal_distribution(in, rho);
    const double closed = feel::scheduling_objective(in, dist.p, rho);
    const auto grid = grid_minimum(f, rho, 1000);
    rel_worst = std::max(rel_worst, std::abs(closed - grid.objective) / grid.objective);
    above_worst = std::max(above_worst, (closed - grid.objective) / grid.objective);
    sum_worst = std::max(sum_worst, std::abs(dist.p.sum() - 1.0));
  }
  return {3, rel_worst <= 1e-6 && sum_worst <= 1e-10,
          format("|closed-grid|/grid worst %.3g (limit 1e-6); closed-grid signed worst %.3g; "
                 "sum error %.3g (limit 1e-10)",
                 rel_worst, above_worst, sum_worst),
          0, 120};
}

Line criterion4() {
  std::mt19937_64 rng(404);
  const feel::ChannelConfig channel;
  std::uniform_real_distribution<double> dist_km(0.01, 0.5);
  std::exponential_distribution<double> fading(1.0);
  std::uniform_int_distribution<int> count_dist(1, 8);
  double sum_err = 0.0;
  double spread = 0.0;
  double oracle_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> snr(std::size_t(count_dist(rng)));
    for (auto& g : snr) {
      g = feel::link_snr(channel.device_tx_power_dbm, dist_km(rng), fading(rng), channel.bandwidth_hz,
                         channel);
    }
    const double band = channel.bandwidth_hz;
    const double bits = 16.0 * 25000.0;
    const auto b = feel::allocate_bandwidth<double>(snr, band);
    sum_err = std::max(sum_err, std::abs(b.sum() - band) / band);
    std::vector<double> t;
    for (std::size_t m = 0; m < snr.size(); ++m) {
      t.push_back(bits / feel::uplink_rate(b(Eigen::Index(m)), snr[m]));
    }
    const auto [lo, hi] = std::minmax_element(t.begin(), t.end());
    spread = std::max(spread, (*hi - *lo) / *lo);

    // Bisection on the common latency T: sum_m bits / (T R_m) <= B.
    const auto demand = [&](double latency) {
      double total = 0.0;
      for (double g : snr) {
        total += bits / (latency * std::log2(1.0 + g));
      }
      return total;
    };
    double low = 0.0;
    double high = 1.0;
    while (demand(high) > band) {
      high *= 2.0;
    }
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (low + high);
      (demand(mid) > band ? low : high) = mid;
    }
    for (std::size_t m = 0; m < snr.size(); ++m) {
      const double oracle = bits / (high * std::log2(1.0 + snr[m]));
      oracle_err = std::max(oracle_err, std::abs(b(Eigen::Index(m)) - oracle) / oracle);
    }
  }
  return {4, sum_err <= 1e-9 && spread <= 1e-9 && oracle_err <= 1e-6,
          format("sum %.3g (1e-9), equalization %.3g (1e-9), minimax oracle %.3g (1e-6)", sum_err,
                 spread, oracle_err),
          0, 5};
}

Line criterion5() {
  std::mt19937_64 rng(505);
  double z_worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto count = std::size_t(2 + trial % 8);
    const auto f = random_fleet(count, 4, rng);
    const feel::SchedulingInputs<double> in{f.sizes, f.norms, f.upload};
    const Eigen::VectorXd p = trial % 2 == 0 ? feel::solve_optimal_distribution(in, 0.5).p
                                             : random_distribution(count, rng);
    const double closed = feel::aggregation_variance(in, p, f.truth.squaredNorm());
    std::discrete_distribution<std::size_t> pick(p.data(), p.data() + p.size());
    std::vector<double> dev;
    dev.reserve(100000);
    for (int draw = 0; draw < 100000; ++draw) {
      const auto k = pick(rng);
      const Eigen::VectorXd est =
          double(f.sizes[k]) / (f.n * p(Eigen::Index(k))) * f.gradients[k].values();
      dev.push_back((est - f.truth).squaredNorm());
    }
    z_worst = std::max(z_worst, z_score(dev, closed));
  }
  return {5, z_worst <= 3.0, format("worst z %.2f over 20 instances (limit 3)", z_worst), 0, 60};
}

Line criterion6() {
  const auto s = feel::run_bounds_experiment({});
  const bool ok = s.lemma2_holds && s.theorem2_holds && s.envelope_holds && s.worst_lemma2_z <= 3.0 &&
                  s.worst_theorem2_z <= 3.0 && s.worst_envelope_z <= 3.0;
  return {6, ok,
          format("worst (mean gap - bound)/SE: one-step %.1f, cumulative %.1f, envelope %.1f "
                 "(limit 3); l=%.3g mu=%.3g, %d rounds x 100 seeds",
                 s.worst_lemma2_z, s.worst_theorem2_z, s.worst_envelope_z, s.params.lipschitz,
                 s.params.strong_convexity, s.rounds_checked),
          0, 300};
}

Line criterion7() {
  std::mt19937_64 rng(707);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::vector<feel::LearnerKind> kinds = {feel::LinearRegression{}, feel::LeastSquaresSvm{0.05},
                                                feel::MultinomialLogistic{5}};
  const double h = 1e-5;
  double worst = 0.0;
  int draws = 0;
  for (const auto& kind : kinds) {
    int accepted = 0;
    while (accepted < 100) {
      feel::Dataset<double> d;
      d.features = Eigen::MatrixXd::NullaryExpr(10, 4, [&] { return normal(rng); });
      d.labels.resize(10);
      for (Eigen::Index i = 0; i < 10; ++i) {
        if (std::holds_alternative<feel::LinearRegression>(kind)) {
          d.labels(i) = normal(rng);
        } else if (std::holds_alternative<feel::LeastSquaresSvm>(kind)) {
          d.labels(i) = normal(rng) < 0 ? -1.0 : 1.0;
        } else {
          d.labels(i) = double(i % 5);
        }
      }
      const Eigen::VectorXd w =
          Eigen::VectorXd::NullaryExpr(feel::parameter_count(kind, 4), [&] { return normal(rng); });
      if (std::holds_alternative<feel::LeastSquaresSvm>(kind) &&
          ((d.labels.cwiseProduct(d.features * w).array() - 1.0).abs() < 1e-3).any()) {
        continue;  // central differences straddle the hinge kink
      }
      ++accepted;
      ++draws;
      const auto g = feel::local_gradient<double>(w, d, kind).values();
      for (Eigen::Index j = 0; j < w.size(); ++j) {
        Eigen::VectorXd up = w;
        Eigen::VectorXd down = w;
        up(j) += h;
        down(j) -= h;
        const double fd =
            (feel::local_loss<double>(up, d, kind) - feel::local_loss<double>(down, d, kind)) / (2 * h);
        worst = std::max(worst, std::abs(g(j) - fd) / std::max({std::abs(g(j)), std::abs(fd), 1e-3}));
      }
    }
  }
  return {7, worst <= 1e-4,
          format("worst per-coordinate relative error %.3g (limit 1e-4), %d draws", worst, draws), 0,
          10};
}

feel::ExperimentConfig load(const std::string& name, const std::vector<std::string>& overrides) {
  auto c = feel::load_config(fs::path(FEEL_SOURCE_DIR) / "configs" / name);
  for (const auto& o : overrides) {
    feel::apply_override(c, o);
  }
  c.trainer.target_accuracy.reset();
  return c;
}

std::vector<std::uint64_t> seeds_1_to(int n) {
  std::vector<std::uint64_t> s(static_cast<std::size_t>(n));
  std::iota(s.begin(), s.end(), std::uint64_t{1});
  return s;
}

double p90(const std::vector<feel::RunResult>& runs) {
  std::vector<double> finals;
  for (const auto& r : runs) {
    finals.push_back(r.final_accuracy());
  }
  std::sort(finals.begin(), finals.end());
  const auto rank = std::size_t(std::ceil(0.9 * double(finals.size()))) - 1;
  return finals[rank];
}

double median_time(const std::vector<feel::RunResult>& runs, double target) {
  std::vector<double> t;
  for (const auto& r : runs) {
    t.push_back(r.time_to_accuracy(target).value_or(INFINITY));
  }
  return feel::median(t);
}

double median_final(const std::vector<feel::RunResult>& runs) {
  std::vector<double> a;
  for (const auto& r : runs) {
    a.push_back(r.final_accuracy());
  }
  return feel::median(a);
}

struct PolicyRow {
  double time_proposed, time_importance, final_proposed, final_channel, target;
};

PolicyRow policy_comparison(int picks, double rho_scale) {
  const auto seeds = seeds_1_to(20);
  const std::vector<std::string> common = {
      "scheduler.devices_per_round=" + std::to_string(picks)};
  auto with = [&](std::vector<std::string> extra) {
    extra.insert(extra.end(), common.begin(), common.end());
    return extra;
  };
  const auto proposed = feel::run_seeds(
      load("default.conf", with({"scheduler.rho_scale=" + format("%g", rho_scale)})), seeds);
  const auto importance = feel::run_seeds(load("importance_aware.conf", with({})), seeds);
  const auto channel = feel::run_seeds(load("channel_aware.conf", with({})), seeds);
  const double target = p90(proposed);
  return {median_time(proposed, target), median_time(importance, target), median_final(proposed),
          median_final(channel), target};
}

Line criterion8() {
  const auto one = policy_comparison(1, 1.0);
  const auto five = policy_comparison(5, 0.1);
  const bool a = one.time_proposed < one.time_importance;
  const bool b = one.final_channel < one.final_proposed;
  const bool c = five.time_proposed < five.time_importance && five.final_channel < five.final_proposed;
  return {8, a && b && c,
          format("M=1 target %.4f: t proposed %.1f s < importance-aware %.1f s; final channel-aware "
                 "%.4f < proposed %.4f | M=5 target %.4f: t %.1f < %.1f; final %.4f < %.4f",
                 one.target, one.time_proposed, one.time_importance, one.final_channel,
                 one.final_proposed, five.target, five.time_proposed, five.time_importance,
                 five.final_channel, five.final_proposed),
          0, 900};
}

Line criterion9() {
  const auto seeds = seeds_1_to(20);
  std::string text;
  bool ok = true;
  for (double band : {1e6, 20e6}) {
    const auto bw = "channel.bandwidth_hz=" + format("%g", band);
    const auto m1 = feel::run_seeds(load("bandwidth_regime.conf", {bw, "scheduler.devices_per_round=1"}), seeds);
    const auto m10 =
        feel::run_seeds(load("bandwidth_regime.conf", {bw, "scheduler.devices_per_round=10"}), seeds);
    const double target = p90(m1);
    const double t1 = median_time(m1, target);
    const double t10 = median_time(m10, target);
    ok = ok && (band < 5e6 ? t1 < t10 : t10 < t1);
    text += format("B=%g Hz target %.4f: M=1 %.1f s, M=10 %.1f s; ", band, target, t1, t10);
  }
  text += "expected M=1 faster at 1 MHz, M=10 faster at 20 MHz";
  return {9, ok, text, 0, 1200};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Line criterion10() {
  const auto dir = fs::temp_directory_path() / "feel_acceptance_determinism";
  fs::remove_all(dir);
  bool same = true;
  std::size_t bytes = 0;
  for (const auto& overrides : std::vector<std::vector<std::string>>{
           {}, {"scheduler.devices_per_round=5", "scheduler.rho_scale=0.1"}}) {
    auto config = load("default.conf", overrides);
    config.trainer.rounds = 200;
    const std::vector<std::uint64_t> seeds = {3, 17};
    feel::write_outputs(config, feel::run_seeds(config, seeds), dir / "a", overrides);
    feel::write_outputs(config, feel::run_seeds(config, seeds), dir / "b", overrides);
    for (auto s : seeds) {
      const auto name = "run_" + std::to_string(s) + ".csv";
      const auto a = read_file(dir / "a" / name);
      same = same && !a.empty() && a == read_file(dir / "b" / name);
      bytes += a.size();
    }
  }
  fs::remove_all(dir);
  return {10, same, format("rerun CSVs byte-identical: %s (%zu bytes compared)", same ? "yes" : "no", bytes),
          0, 0};
}

}  // namespace

int main() {
  const std::vector<std::function<Line()>> criteria = {criterion1, criterion2, criterion3, criterion4,
                                                       criterion5, criterion6, criterion7, criterion8,
                                                       criterion9, criterion10};
  int failed = 0;
  for (const auto& run : criteria) {
    const auto start = Clock::now();
    auto line = run();
    line.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    const bool in_time = line.budget <= 0.0 || line.seconds < line.budget;
    const bool passed = line.passed && in_time;
    failed += !passed;
    std::printf("criterion %2d  %s  %s  [%.2f s", line.id, passed ? "PASS" : "FAIL",
                line.measured.c_str(), line.seconds);
    if (line.budget > 0.0) {
      std::printf(", budget %.0f s", line.budget);
    }
    std::printf("]\n");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", int(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
