#pragma once

#include "rgmm/core.hpp"
#include "rgmm/experiments.hpp"
#include "rgmm/models.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rgmm {

enum class SweepKind { synthetic, semi_synthetic };
enum class AttackKind { none, all_ones, negation };
enum class HyperSource { plugin, oracle, fixed };

const char* to_string(SweepKind kind);
const char* to_string(AttackKind kind);
const char* to_string(HyperSource source);

inline constexpr const char* kIteratedGmmSever = "iterated-gmm-sever";
inline constexpr const char* kClassicalIv = "classical-iv";
inline constexpr const char* kTwoStageHuber = "two-stage-huber";

struct SweepConfig {
  SweepKind kind = SweepKind::synthetic;
  std::size_t n = 10000;
  Eigen::Index d = 20;
  std::vector<double> eps_grid{0.01, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5};
  int reps = 10;
  std::uint64_t seed = 0;
  std::vector<std::string> estimators{kIteratedGmmSever, kClassicalIv, kTwoStageHuber};
  AttackKind attack = AttackKind::all_ones;
  HteMode hte_mode = HteMode::treatment_only;
  InstrumentCoding coding = InstrumentCoding::zero_one;

  /// Base hyperparameters; eps is overwritten per cell. With HyperSource::fixed
  /// lambda, L, sigma and R0 are used as given.
  HyperParams hp;
  HyperSource hp_source = HyperSource::plugin;
  /// Factors applied to the diagnostics for both plug-in and oracle sources.
  PluginRule rule;

  /// Semi-synthetic input; empty selects the generated schooling stand-in.
  std::string data_path;
  ColumnMap columns = schooling_columns();
  /// Stand-in size when no data path is given.
  std::size_t standin_n = 3010;
  /// Subtract column means from covariates, treatment and instruments.
  bool center = false;

  /// Record wall-clock milliseconds per row; off keeps output byte-reproducible.
  bool timing = false;
  int jobs = 1;

  /// Throws Error on an invalid combination.
  void validate() const;
};

/// Desk-scale synthetic preset: d = 10, n = 2000, eps in {0.05, 0.1, 0.2, 0.3}, 5 reps.
SweepConfig desk_synthetic_preset();

/// Semi-synthetic defaults: negation attack on the schooling schema, ATE metric.
SweepConfig semi_synthetic_preset();

struct SweepRow {
  double epsilon = 0.0;
  std::string estimator;
  /// "l2_error" or "ate".
  std::string metric;
  double value = 0.0;
  bool failed = false;
  /// Seed of the (epsilon, repetition) cell.
  std::uint64_t seed = 0;
  double runtime_ms = 0.0;
  int rep = 0;
};

struct SweepResult {
  /// Canonical order: epsilon, then estimator, then repetition.
  std::vector<SweepRow> rows;
  /// Semi-synthetic: ATE of classical IV on the uncorrupted data.
  std::optional<double> reference_ate;
};

/// Seed for cell (epsilon index, repetition); depends only on the master seed.
std::uint64_t cell_seed(std::uint64_t master, std::size_t eps_index, int rep);

SweepResult run_sweep(const SweepConfig& cfg);

struct SweepSummary {
  double epsilon = 0.0;
  std::string estimator;
  std::string metric;
  double mean = 0.0;
  /// Sample standard deviation over sqrt(count); zero when count < 2.
  double stderr_ = 0.0;
  std::size_t count = 0;
  std::size_t failed = 0;
};

/// Per (epsilon, estimator) mean and standard error over non-failed rows, in row order.
std::vector<SweepSummary> summarize(const std::vector<SweepRow>& rows);

/// Writes `# line` for each header entry, then
/// epsilon,estimator,metric,value,seed,runtime_ms with 17 significant digits.
/// Failed rows carry the literal value "failed".
void write_rows_csv(const std::string& path, const std::vector<SweepRow>& rows,
                    const std::vector<std::string>& header);

/// Writes epsilon,estimator,metric,mean,stderr,count,failed.
void write_summary_csv(const std::string& path, const std::vector<SweepSummary>& summary,
                       const std::vector<std::string>& header);

/// Companion path of the aggregated file for a row file.
std::string summary_path(const std::string& rows_path);

/// Shortest decimal text that reads back to the same double ("%.17g").
std::string format_double(double v);

}  // namespace rgmm
