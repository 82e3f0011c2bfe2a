#include "rgmm/sweep.hpp"

#include "rgmm/baselines.hpp"
#include "rgmm/sever.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <thread>

namespace rgmm {

const char* to_string(SweepKind kind) {
  return kind == SweepKind::synthetic ? "synthetic" : "semi-synthetic";
}

const char* to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::none: return "none";
    case AttackKind::all_ones: return "all-ones";
    case AttackKind::negation: return "negation";
  }
  return "none";
}

const char* to_string(HyperSource source) {
  switch (source) {
    case HyperSource::plugin: return "plugin";
    case HyperSource::oracle: return "oracle";
    case HyperSource::fixed: return "fixed";
  }
  return "plugin";
}

void SweepConfig::validate() const {
  if (eps_grid.empty()) throw Error("eps grid is empty");
  for (double e : eps_grid) {
    if (!(e > 0.0 && e <= 0.5)) throw Error("eps grid values must lie in (0, 0.5]");
  }
  if (reps < 1) throw Error("reps must be >= 1");
  if (jobs < 1) throw Error("jobs must be >= 1");
  if (kind == SweepKind::synthetic && (n < 1 || d < 1)) throw Error("n and d must be >= 1");
  if (kind == SweepKind::semi_synthetic && data_path.empty() && standin_n < 1) {
    throw Error("standin_n must be >= 1");
  }
  if (estimators.empty()) throw Error("estimator list is empty");
  std::set<std::string> seen;
  for (const auto& e : estimators) {
    if (e != kIteratedGmmSever && e != kClassicalIv && e != kTwoStageHuber) {
      throw Error("unknown estimator '" + e + "'");
    }
    if (!seen.insert(e).second) throw Error("estimator listed twice: " + e);
  }
}

SweepConfig desk_synthetic_preset() {
  SweepConfig cfg;
  cfg.kind = SweepKind::synthetic;
  cfg.n = 2000;
  cfg.d = 10;
  cfg.eps_grid = {0.05, 0.1, 0.2, 0.3};
  cfg.reps = 5;
  return cfg;
}

SweepConfig semi_synthetic_preset() {
  SweepConfig cfg;
  cfg.kind = SweepKind::semi_synthetic;
  cfg.eps_grid = {0.01, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4};
  cfg.reps = 10;
  cfg.attack = AttackKind::negation;
  return cfg;
}

std::uint64_t cell_seed(std::uint64_t master, std::size_t eps_index, int rep) {
  return RandomSource(master).split("cell").split(eps_index).split(static_cast<std::uint64_t>(rep)).seed();
}

namespace {

struct Problem {
  /// Uncorrupted estimation design (regressors X, instruments Z).
  Dataset clean;
  /// Corrupted estimation design.
  Dataset design;
  /// Reference parameter: true theta (synthetic) or clean IV solution (semi-synthetic).
  Vec truth;
};

Dataset semi_base(const SweepConfig& cfg) {
  Dataset raw = [&] {
    if (!cfg.data_path.empty()) return load_csv(cfg.data_path, cfg.columns).data;
    RandomSource rng = RandomSource(cfg.seed).split("standin");
    return gen_schooling_standin(cfg.standin_n, rng);
  }();
  return cfg.center ? center_columns(raw) : raw;
}

Dataset build_design(const SweepConfig& cfg, const Dataset& raw) {
  if (cfg.kind == SweepKind::synthetic) return hte_design(raw, cfg.hte_mode);
  return scalar_treatment_design(raw, true);
}

Problem make_problem(const SweepConfig& cfg, double eps, const Dataset* semi_raw,
                     const Vec& semi_truth, RandomSource& cell) {
  std::optional<Dataset> generated;
  Vec truth = semi_truth;
  if (cfg.kind == SweepKind::synthetic) {
    RandomSource data_rng = cell.split("data");
    SyntheticDraw draw = gen_synthetic_hte(cfg.n, cfg.d, data_rng, cfg.coding);
    generated = std::move(draw.data);
    truth = draw.theta;
    if (cfg.hte_mode == HteMode::full) {
      truth.conservativeResize(2 * cfg.d);
      truth.tail(cfg.d).setZero();
    }
  }
  const Dataset& raw = generated ? *generated : *semi_raw;
  Dataset clean = build_design(cfg, raw);
  RandomSource attack_rng = cell.split("attack");
  switch (cfg.attack) {
    case AttackKind::all_ones:
      return {clean, build_design(cfg, corrupt_all_ones(raw, eps, attack_rng).data), truth};
    case AttackKind::negation:
      return {clean, corrupt_negation(clean, eps, attack_rng).data, truth};
    case AttackKind::none:
      break;
  }
  return {clean, clean, truth};
}

Vec run_robust(const SweepConfig& cfg, double eps, const Problem& prob, RandomSource& cell) {
  auto design = std::make_shared<const Dataset>(prob.design);
  LinearIVModel model(design);
  HyperParams base = cfg.hp;
  base.eps = eps;
  RandomSource diag_rng = cell.split("diagnostics");
  HyperParams hp = base;
  if (cfg.hp_source == HyperSource::oracle) {
    LinearIVModel clean(std::make_shared<const Dataset>(prob.clean));
    hp = plugin_hyperparams(clean, prob.truth, base, cfg.rule, diag_rng);
  } else if (cfg.hp_source == HyperSource::plugin) {
    const Vec w_ref = two_stage_least_squares(prob.design);
    hp = plugin_hyperparams(model, w_ref, base, cfg.rule, diag_rng);
  }
  RandomSource est_rng = cell.split(kIteratedGmmSever);
  return iterated_gmm_sever(model, hp, est_rng).w_hat;
}

Vec run_estimator(const SweepConfig& cfg, const std::string& name, double eps, const Problem& prob,
                  RandomSource& cell) {
  if (name == kClassicalIv) return two_stage_least_squares(prob.design);
  if (name == kTwoStageHuber) return two_stage_huber(prob.design).w;
  return run_robust(cfg, eps, prob, cell);
}

double metric_value(const SweepConfig& cfg, const Vec& w, const Vec& truth) {
  if (!w.allFinite()) throw Error("non-finite estimate");
  if (cfg.kind == SweepKind::semi_synthetic) return w(0);
  const Eigen::Index d = cfg.d;
  return (w.head(d) - truth.head(d)).norm();
}

}  // namespace

SweepResult run_sweep(const SweepConfig& cfg) {
  cfg.validate();
  using Clock = std::chrono::steady_clock;

  SweepResult result;
  std::optional<Dataset> semi_raw;
  Vec semi_truth;
  if (cfg.kind == SweepKind::semi_synthetic) {
    semi_raw = semi_base(cfg);
    semi_truth = two_stage_least_squares(scalar_treatment_design(*semi_raw, true));
    result.reference_ate = semi_truth(0);
  }

  const std::size_t n_eps = cfg.eps_grid.size();
  const std::size_t n_est = cfg.estimators.size();
  const auto reps = static_cast<std::size_t>(cfg.reps);
  const std::string metric = cfg.kind == SweepKind::synthetic ? "l2_error" : "ate";
  std::vector<SweepRow> rows(n_eps * n_est * reps);
  auto slot = [&](std::size_t e, std::size_t k, std::size_t r) -> SweepRow& {
    return rows[(e * n_est + k) * reps + r];
  };

  auto run_cell = [&](std::size_t cell_index) {
    const std::size_t e = cell_index / reps;
    const std::size_t r = cell_index % reps;
    const double eps = cfg.eps_grid[e];
    const std::uint64_t seed = cell_seed(cfg.seed, e, static_cast<int>(r));
    RandomSource cell(seed);
    for (std::size_t k = 0; k < n_est; ++k) {
      SweepRow& row = slot(e, k, r);
      row.epsilon = eps;
      row.estimator = cfg.estimators[k];
      row.metric = metric;
      row.seed = seed;
      row.rep = static_cast<int>(r);
    }
    std::optional<Problem> prob;
    try {
      prob = make_problem(cfg, eps, semi_raw ? &*semi_raw : nullptr, semi_truth, cell);
    } catch (const Error&) {
      for (std::size_t k = 0; k < n_est; ++k) slot(e, k, r).failed = true;
      return;
    }
    for (std::size_t k = 0; k < n_est; ++k) {
      SweepRow& row = slot(e, k, r);
      const auto start = Clock::now();
      try {
        const Vec w = run_estimator(cfg, cfg.estimators[k], eps, *prob, cell);
        row.value = metric_value(cfg, w, prob->truth);
      } catch (const Error&) {
        row.failed = true;
      }
      if (cfg.timing) {
        row.runtime_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
      }
    }
  };

  const std::size_t cells = n_eps * reps;
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), cells);
  if (workers <= 1) {
    for (std::size_t c = 0; c < cells; ++c) run_cell(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < workers; ++j) {
      pool.emplace_back([&] {
        for (std::size_t c = next++; c < cells; c = next++) run_cell(c);
      });
    }
    for (auto& t : pool) t.join();
  }

  result.rows = std::move(rows);
  return result;
}

std::vector<SweepSummary> summarize(const std::vector<SweepRow>& rows) {
  std::vector<SweepSummary> out;
  std::map<std::pair<double, std::string>, std::size_t> where;
  std::vector<std::vector<double>> values;
  for (const auto& row : rows) {
    const auto key = std::make_pair(row.epsilon, row.estimator);
    auto it = where.find(key);
    if (it == where.end()) {
      it = where.emplace(key, out.size()).first;
      SweepSummary s;
      s.epsilon = row.epsilon;
      s.estimator = row.estimator;
      s.metric = row.metric;
      out.push_back(s);
      values.emplace_back();
    }
    SweepSummary& s = out[it->second];
    if (row.failed) {
      ++s.failed;
    } else {
      values[it->second].push_back(row.value);
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& v = values[i];
    SweepSummary& s = out[i];
    s.count = v.size();
    if (v.empty()) {
      s.mean = std::nan("");
      continue;
    }
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    if (v.size() >= 2) {
      double ss = 0.0;
      for (double x : v) ss += (x - s.mean) * (x - s.mean);
      const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
      s.stderr_ = sd / std::sqrt(static_cast<double>(v.size()));
    }
  }
  return out;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open output file '" + path + "'");
  return out;
}

void write_header(std::ofstream& out, const std::vector<std::string>& header) {
  for (const auto& line : header) out << "# " << line << '\n';
}

}  // namespace

void write_rows_csv(const std::string& path, const std::vector<SweepRow>& rows,
                    const std::vector<std::string>& header) {
  std::ofstream out = open_out(path);
  write_header(out, header);
  out << "epsilon,estimator,metric,value,seed,runtime_ms\n";
  for (const auto& row : rows) {
    out << format_double(row.epsilon) << ',' << row.estimator << ',' << row.metric << ','
        << (row.failed ? std::string("failed") : format_double(row.value)) << ',' << row.seed << ','
        << format_double(row.runtime_ms) << '\n';
  }
  if (!out) throw Error("failed writing '" + path + "'");
}

void write_summary_csv(const std::string& path, const std::vector<SweepSummary>& summary,
                       const std::vector<std::string>& header) {
  std::ofstream out = open_out(path);
  write_header(out, header);
  out << "epsilon,estimator,metric,mean,stderr,count,failed\n";
  for (const auto& s : summary) {
    out << format_double(s.epsilon) << ',' << s.estimator << ',' << s.metric << ','
        << format_double(s.mean) << ',' << format_double(s.stderr_) << ',' << s.count << ','
        << s.failed << '\n';
  }
  if (!out) throw Error("failed writing '" + path + "'");
}

std::string summary_path(const std::string& rows_path) {
  const std::string ext = ".csv";
  if (rows_path.size() > ext.size() &&
      rows_path.compare(rows_path.size() - ext.size(), ext.size(), ext) == 0) {
    return rows_path.substr(0, rows_path.size() - ext.size()) + ".summary.csv";
  }
  return rows_path + ".summary.csv";
}

}  // namespace rgmm
