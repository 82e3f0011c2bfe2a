#pragma once

#include "rgmm/core.hpp"
#include "rgmm/experiments.hpp"
#include "rgmm/sweep.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace rgmm {

/// Flat key=value settings in a fixed order.
using Settings = std::vector<std::pair<std::string, std::string>>;

/// Parses key=value lines. Blank lines and lines starting with '#' are
/// skipped; whitespace around keys and values is trimmed. Throws Error on a
/// line without '=' or a repeated key.
std::map<std::string, std::string> parse_settings(std::istream& in, const std::string& origin);
std::map<std::string, std::string> read_settings_file(const std::string& path);

/// Splits "KEY=VALUE" as given to --set.
std::pair<std::string, std::string> parse_assignment(const std::string& text);

enum class ModelKind { linear_iv, logistic_iv, hte, hte_full, scalar_treatment };

const char* to_string(ModelKind kind);

struct EstimateConfig {
  std::uint64_t seed = 0;
  ModelKind model = ModelKind::scalar_treatment;
  std::string data_path;
  ColumnMap columns = schooling_columns();
  bool center = false;
  /// plugin or fixed.
  HyperSource hp_source = HyperSource::plugin;
  PluginRule rule;
  HyperParams hp;
};

struct DiagnoseConfig {
  std::uint64_t seed = 0;
  ModelKind model = ModelKind::scalar_treatment;
  std::string data_path;
  ColumnMap columns = schooling_columns();
  bool center = false;
  /// Reference point; empty selects two-stage least squares on the design.
  std::vector<double> w_ref;
  PluginRule rule;
};

enum class GenKind { schooling, synthetic };

struct GenDataConfig {
  std::uint64_t seed = 0;
  GenKind kind = GenKind::schooling;
  std::size_t n = 3010;
  Eigen::Index d = 10;
  InstrumentCoding coding = InstrumentCoding::zero_one;
};

Settings describe(const SweepConfig& cfg);
Settings describe(const EstimateConfig& cfg);
Settings describe(const DiagnoseConfig& cfg);
Settings describe(const GenDataConfig& cfg);

/// Applies one setting; throws Error("unknown key ...") for keys that do not
/// belong to the configuration, or on an unparseable value.
void apply_setting(SweepConfig& cfg, const std::string& key, const std::string& value);
void apply_setting(EstimateConfig& cfg, const std::string& key, const std::string& value);
void apply_setting(DiagnoseConfig& cfg, const std::string& key, const std::string& value);
void apply_setting(GenDataConfig& cfg, const std::string& key, const std::string& value);

/// Default sweep configuration of a subcommand ("synth-sweep" or "semi-sweep").
SweepConfig default_sweep_config(SweepKind kind);

/// Loads a settings file on top of the default sweep configuration.
SweepConfig load_sweep_config(SweepKind kind, const std::string& path);

/// Runs the command line. Returns 0 on success, 1 on usage or configuration
/// errors and 2 when estimation fails.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rgmm
