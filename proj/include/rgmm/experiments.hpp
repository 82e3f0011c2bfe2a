#pragma once

#include "rgmm/core.hpp"
#include "rgmm/random.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rgmm {

enum class InstrumentCoding { zero_one, plus_minus };

struct SyntheticDraw {
  Dataset data;
  Vec theta;
};

/// Heterogeneous-treatment-effect data with a confounded binary treatment:
///   theta ~ N(0, I_d); X ~ N(0, I_d); Z ~ Bernoulli(1/2); U ~ N(0, 1);
///   T ~ Bernoulli(1 / (1 + exp(-Z - sqrt(d) U mean(X)))); Y = <X, theta> T + U.
/// With plus_minus coding Z takes values in {-1, +1} instead of {0, 1}.
SyntheticDraw gen_synthetic_hte(std::size_t n, Eigen::Index d, RandomSource& rng,
                                InstrumentCoding coding = InstrumentCoding::zero_one);

/// Schooling-style stand-in with the columns of the classic returns-to-
/// schooling IV extract: log wage (response), years of education (treatment),
/// college proximity (instrument), experience and squared experience
/// (covariates). Education is confounded by an unobserved ability term.
Dataset gen_schooling_standin(std::size_t n, RandomSource& rng);

/// Structural education coefficient used by gen_schooling_standin.
inline constexpr double kStandinReturnToSchooling = 0.10;

struct Corruption {
  Dataset data;
  /// Sorted indices of modified rows.
  std::vector<std::size_t> indices;
};

/// Uniformly chosen sorted subset of {0..n-1} of size k.
std::vector<std::size_t> choose_indices(std::size_t n, std::size_t k, RandomSource& rng);

/// Replaces X by the all-ones vector on floor(eps n) uniformly chosen rows.
Corruption corrupt_all_ones(const Dataset& data, double eps, RandomSource& rng);

/// Alters floor(eps n) responses of an exactly identified linear IV design
/// so that the IV solution on the corrupted data is exactly -w0, where w0 is
/// the IV solution on the input. The response shifts are the minimum-norm
/// solution of sum_{i in C} Z_i delta_i = -2 sum_i Z_i Y_i.
Corruption corrupt_negation(const Dataset& design, double eps, RandomSource& rng);

struct ColumnMap {
  std::string response;
  std::optional<std::string> treatment;
  std::vector<std::string> instruments;
  std::vector<std::string> covariates;
};

ColumnMap schooling_columns();

/// Subtracts column means from covariates, instruments and treatment; responses are untouched.
Dataset center_columns(const Dataset& data);

struct CsvLoad {
  Dataset data;
  std::size_t rows_read = 0;
  /// Rows skipped because a mapped cell was empty or NA.
  std::size_t dropped = 0;
};

/// Reads a UTF-8, comma-separated file with a header row, skipping leading
/// lines that start with '#'. Unmapped columns
/// are ignored. Throws Error on a missing column, an unparseable cell (with
/// row and column in the message), or when no data rows remain.
CsvLoad load_csv(const std::string& path, const ColumnMap& columns);

/// Writes covariates, instruments, treatment and response under the mapped
/// names with 17 significant digits, so a reload is bit-exact. Each header
/// entry is written first as a '#' comment line.
void write_csv(const Dataset& data, const std::string& path, const ColumnMap& columns,
               const std::vector<std::string>& header = {});

/// Plug-in analogues of the identifiability and variance constants on S at w_ref:
///   lambda_hat      smallest singular value of E_S Dg(w_ref)
///   L2_hat_sampled  sup over 200 random unit (u, v) of E_S (u^T Dg v)^2
///   L2_hat          L2_hat_sampled refined by alternating top-eigenvector steps
///   sigma2L_sampled sup over 200 random unit v of E_S (v . g(w_ref))^2
///   sigma2L_hat     largest eigenvalue of E_S g g^T (the exact supremum)
///   moment_norm     |E_S g(w_ref)|
std::map<std::string, double> diagnose_assumptions(const MomentModel& model, const ActiveSet& S,
                                                   const Vec& w_ref, RandomSource& rng);

/// How plug-in hyperparameters are derived from diagnostics.
struct PluginRule {
  double lambda_factor = 0.5;
  double L_factor = 2.0;
  /// R0 = radius_factor * |w_ref| + radius_pad.
  double radius_factor = 2.0;
  double radius_pad = 1.0;
};

/// Copies `base` and overwrites lambda, L, sigma and R0 with plug-in values:
/// lambda = lambda_factor lambda_hat, L = max(L_factor sqrt(L2_hat), lambda),
/// sigma = sqrt(sigma2L_hat / sqrt(L2_hat)).
HyperParams plugin_hyperparams(const MomentModel& model, const Vec& w_ref, const HyperParams& base,
                               const PluginRule& rule, RandomSource& rng);

}  // namespace rgmm
