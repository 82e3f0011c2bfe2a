#include "rgmm/cli.hpp"

#include "rgmm/baselines.hpp"
#include "rgmm/filter.hpp"
#include "rgmm/models.hpp"
#include "rgmm/numerics.hpp"
#include "rgmm/random.hpp"
#include "rgmm/sever.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

namespace rgmm {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(text);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t k = 0; k < items.size(); ++k) out += (k ? "," : "") + items[k];
  return out;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt_list(const std::vector<double>& v) {
  std::vector<std::string> items;
  for (double x : v) items.push_back(fmt(x));
  return join(items);
}

double parse_double(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw Error("invalid number for '" + key + "': '" + text + "'");
  }
  return v;
}

template <typename Int>
Int parse_integer(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  Int v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error("invalid integer for '" + key + "': '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw Error("invalid boolean for '" + key + "': '" + text + "'");
}

struct Field {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

using Fields = std::vector<Field>;

Field num(const std::string& key, double& ref) {
  return {key, [&ref] { return fmt(ref); }, [&ref, key](const std::string& v) { ref = parse_double(key, v); }};
}

Field opt_num(const std::string& key, std::optional<double>& ref) {
  return {key, [&ref] { return ref ? fmt(*ref) : std::string("auto"); },
          [&ref, key](const std::string& v) {
            if (trim(v) == "auto") {
              ref.reset();
            } else {
              ref = parse_double(key, v);
            }
          }};
}

template <typename Int>
Field integer(const std::string& key, Int& ref) {
  return {key, [&ref] { return std::to_string(ref); },
          [&ref, key](const std::string& v) { ref = parse_integer<Int>(key, v); }};
}

Field boolean(const std::string& key, bool& ref) {
  return {key, [&ref] { return std::string(ref ? "true" : "false"); },
          [&ref, key](const std::string& v) { ref = parse_bool(key, v); }};
}

Field text(const std::string& key, std::string& ref) {
  return {key, [&ref] { return ref; }, [&ref](const std::string& v) { ref = trim(v); }};
}

Field num_list(const std::string& key, std::vector<double>& ref) {
  return {key, [&ref] { return fmt_list(ref); },
          [&ref, key](const std::string& v) {
            std::vector<double> out;
            for (const auto& item : split_list(v)) out.push_back(parse_double(key, item));
            ref = std::move(out);
          }};
}

Field text_list(const std::string& key, std::vector<std::string>& ref) {
  return {key, [&ref] { return join(ref); }, [&ref](const std::string& v) { ref = split_list(v); }};
}

template <typename E>
Field choice(const std::string& key, E& ref, std::vector<std::pair<std::string, E>> options) {
  return {key,
          [&ref, options] {
            for (const auto& [name, value] : options) {
              if (value == ref) return name;
            }
            return std::string();
          },
          [&ref, key, options](const std::string& v) {
            const std::string s = trim(v);
            for (const auto& [name, value] : options) {
              if (name == s) {
                ref = value;
                return;
              }
            }
            std::vector<std::string> names;
            for (const auto& option : options) names.push_back(option.first);
            throw Error("invalid value for '" + key + "': '" + v + "' (expected one of " +
                        join(names) + ")");
          }};
}

const std::vector<std::pair<std::string, ModelKind>>& model_names() {
  static const std::vector<std::pair<std::string, ModelKind>> names{
      {"linear-iv", ModelKind::linear_iv},
      {"logistic-iv", ModelKind::logistic_iv},
      {"hte", ModelKind::hte},
      {"hte-full", ModelKind::hte_full},
      {"scalar-treatment", ModelKind::scalar_treatment}};
  return names;
}

void add_hyper(Fields& f, HyperParams& hp, bool with_eps) {
  if (with_eps) f.push_back(num("eps", hp.eps));
  f.push_back(num("lambda", hp.lambda));
  f.push_back(num("L", hp.L));
  f.push_back(num("sigma", hp.sigma));
  f.push_back(opt_num("gamma", hp.gamma));
  f.push_back(num("delta", hp.delta));
  f.push_back(num("R0", hp.R0));
  f.push_back(num("c1", hp.sched.c1));
  f.push_back(num("c2", hp.sched.c2));
  f.push_back(choice<ScheduleKind>("schedule", hp.sched.kind,
                                   {{"affine", ScheduleKind::affine}, {"halving", ScheduleKind::halving}}));
  f.push_back(num("filter_slack", hp.filter_slack));
  f.push_back(num("accept_factor", hp.accept_factor));
  f.push_back(boolean("warm_start", hp.warm_start));
  f.push_back(integer("learner_max_iters", hp.learner_max_iters));
}

void add_rule(Fields& f, PluginRule& rule) {
  f.push_back(num("lambda_factor", rule.lambda_factor));
  f.push_back(num("L_factor", rule.L_factor));
  f.push_back(num("radius_factor", rule.radius_factor));
  f.push_back(num("radius_pad", rule.radius_pad));
}

void add_columns(Fields& f, ColumnMap& cols) {
  f.push_back(text("response", cols.response));
  f.push_back({"treatment", [&cols] { return cols.treatment.value_or(""); },
               [&cols](const std::string& v) {
                 const std::string s = trim(v);
                 if (s.empty()) {
                   cols.treatment.reset();
                 } else {
                   cols.treatment = s;
                 }
               }});
  f.push_back(text_list("instruments", cols.instruments));
  f.push_back(text_list("covariates", cols.covariates));
}

Fields sweep_fields(SweepConfig& cfg) {
  Fields f;
  f.push_back(integer("seed", cfg.seed));
  if (cfg.kind == SweepKind::synthetic) {
    f.push_back(integer("n", cfg.n));
    f.push_back(integer("d", cfg.d));
    f.push_back(choice<HteMode>("hte_mode", cfg.hte_mode,
                                {{"treatment-only", HteMode::treatment_only}, {"full", HteMode::full}}));
    f.push_back(choice<InstrumentCoding>(
        "instrument_coding", cfg.coding,
        {{"zero-one", InstrumentCoding::zero_one}, {"plus-minus", InstrumentCoding::plus_minus}}));
  } else {
    f.push_back(text("data", cfg.data_path));
    add_columns(f, cfg.columns);
    f.push_back(integer("standin_n", cfg.standin_n));
    f.push_back(boolean("center", cfg.center));
  }
  f.push_back(num_list("eps_grid", cfg.eps_grid));
  f.push_back(integer("reps", cfg.reps));
  f.push_back(text_list("estimators", cfg.estimators));
  f.push_back(choice<AttackKind>(
      "attack", cfg.attack,
      {{"none", AttackKind::none}, {"all-ones", AttackKind::all_ones}, {"negation", AttackKind::negation}}));
  f.push_back(choice<HyperSource>(
      "hp_source", cfg.hp_source,
      {{"plugin", HyperSource::plugin}, {"oracle", HyperSource::oracle}, {"fixed", HyperSource::fixed}}));
  add_rule(f, cfg.rule);
  add_hyper(f, cfg.hp, false);
  f.push_back(boolean("timing", cfg.timing));
  f.push_back(integer("jobs", cfg.jobs));
  return f;
}

Fields estimate_fields(EstimateConfig& cfg) {
  Fields f;
  f.push_back(integer("seed", cfg.seed));
  f.push_back(choice<ModelKind>("model", cfg.model, model_names()));
  f.push_back(text("data", cfg.data_path));
  add_columns(f, cfg.columns);
  f.push_back(boolean("center", cfg.center));
  f.push_back(choice<HyperSource>("hp_source", cfg.hp_source,
                                  {{"plugin", HyperSource::plugin}, {"fixed", HyperSource::fixed}}));
  add_rule(f, cfg.rule);
  add_hyper(f, cfg.hp, true);
  return f;
}

Fields diagnose_fields(DiagnoseConfig& cfg) {
  Fields f;
  f.push_back(integer("seed", cfg.seed));
  f.push_back(choice<ModelKind>("model", cfg.model, model_names()));
  f.push_back(text("data", cfg.data_path));
  add_columns(f, cfg.columns);
  f.push_back(boolean("center", cfg.center));
  f.push_back(num_list("w_ref", cfg.w_ref));
  add_rule(f, cfg.rule);
  return f;
}

Fields gen_fields(GenDataConfig& cfg) {
  Fields f;
  f.push_back(integer("seed", cfg.seed));
  f.push_back(choice<GenKind>("kind", cfg.kind,
                              {{"schooling", GenKind::schooling}, {"synthetic", GenKind::synthetic}}));
  f.push_back(integer("n", cfg.n));
  f.push_back(integer("d", cfg.d));
  f.push_back(choice<InstrumentCoding>(
      "instrument_coding", cfg.coding,
      {{"zero-one", InstrumentCoding::zero_one}, {"plus-minus", InstrumentCoding::plus_minus}}));
  return f;
}

Settings collect(const Fields& fields) {
  Settings out;
  for (const auto& f : fields) out.emplace_back(f.key, f.get());
  return out;
}

void apply(const Fields& fields, const std::string& key, const std::string& value) {
  for (const auto& f : fields) {
    if (f.key == key) {
      f.set(value);
      return;
    }
  }
  throw Error("unknown key '" + key + "'");
}

}  // namespace

const char* to_string(ModelKind kind) {
  for (const auto& [name, value] : model_names()) {
    if (value == kind) return name.c_str();
  }
  return "";
}

std::map<std::string, std::string> parse_settings(std::istream& in, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw Error(origin + ":" + std::to_string(line_no) + ": expected KEY=VALUE");
    }
    const std::string key = trim(s.substr(0, eq));
    if (key.empty()) throw Error(origin + ":" + std::to_string(line_no) + ": empty key");
    if (!out.emplace(key, trim(s.substr(eq + 1))).second) {
      throw Error(origin + ":" + std::to_string(line_no) + ": key '" + key + "' given twice");
    }
  }
  return out;
}

std::map<std::string, std::string> read_settings_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file '" + path + "'");
  return parse_settings(in, path);
}

std::pair<std::string, std::string> parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || trim(text.substr(0, eq)).empty()) {
    throw Error("--set expects KEY=VALUE, got '" + text + "'");
  }
  return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

Settings describe(const SweepConfig& cfg) {
  SweepConfig copy = cfg;
  return collect(sweep_fields(copy));
}

Settings describe(const EstimateConfig& cfg) {
  EstimateConfig copy = cfg;
  return collect(estimate_fields(copy));
}

Settings describe(const DiagnoseConfig& cfg) {
  DiagnoseConfig copy = cfg;
  return collect(diagnose_fields(copy));
}

Settings describe(const GenDataConfig& cfg) {
  GenDataConfig copy = cfg;
  return collect(gen_fields(copy));
}

void apply_setting(SweepConfig& cfg, const std::string& key, const std::string& value) {
  apply(sweep_fields(cfg), key, value);
}

void apply_setting(EstimateConfig& cfg, const std::string& key, const std::string& value) {
  apply(estimate_fields(cfg), key, value);
}

void apply_setting(DiagnoseConfig& cfg, const std::string& key, const std::string& value) {
  apply(diagnose_fields(cfg), key, value);
}

void apply_setting(GenDataConfig& cfg, const std::string& key, const std::string& value) {
  apply(gen_fields(cfg), key, value);
}

SweepConfig default_sweep_config(SweepKind kind) {
  return kind == SweepKind::synthetic ? SweepConfig{} : semi_synthetic_preset();
}

SweepConfig load_sweep_config(SweepKind kind, const std::string& path) {
  SweepConfig cfg = default_sweep_config(kind);
  for (const auto& [k, v] : read_settings_file(path)) apply_setting(cfg, k, v);
  cfg.validate();
  return cfg;
}

namespace {

/// Raised for failures of the estimation itself (exit code 2).
class EstimationFailure : public Error {
 public:
  using Error::Error;
};

struct Options {
  std::string config;
  std::string seed;
  std::string out;
  std::vector<std::string> sets;
  int jobs = 0;
};

template <typename Config>
void resolve(Config& cfg, const Options& opts) {
  if (!opts.config.empty()) {
    for (const auto& [k, v] : read_settings_file(opts.config)) apply_setting(cfg, k, v);
  }
  for (const auto& s : opts.sets) {
    const auto [k, v] = parse_assignment(s);
    apply_setting(cfg, k, v);
  }
  if (!opts.seed.empty()) apply_setting(cfg, "seed", opts.seed);
}

std::vector<std::string> stamp(const std::string& command, const Settings& settings) {
  std::vector<std::string> lines{"rgmm " + command};
  for (const auto& [k, v] : settings) {
    if (k == "jobs") continue;
    lines.push_back(k + "=" + v);
  }
  return lines;
}

const std::string& require_out(const Options& opts) {
  if (opts.out.empty()) throw Error("--out is required");
  return opts.out;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open output file '" + path + "'");
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

struct LoadedModel {
  Dataset design;
  std::unique_ptr<MomentModel> model;
};

Dataset load_data(const std::string& path, const ColumnMap& columns, bool center, std::ostream& out) {
  if (path.empty()) throw Error("no data file given (set data=PATH)");
  CsvLoad load = load_csv(path, columns);
  if (load.dropped > 0) {
    out << "warning: dropped " << load.dropped << " of " << load.rows_read
        << " rows with missing values\n";
  }
  return center ? center_columns(load.data) : load.data;
}

LoadedModel build_model(ModelKind kind, const Dataset& data) {
  switch (kind) {
    case ModelKind::linear_iv:
    case ModelKind::logistic_iv: {
      Dataset design(data.x(), data.y(), data.z());
      auto shared = std::make_shared<const Dataset>(design);
      if (kind == ModelKind::linear_iv) return {design, std::make_unique<LinearIVModel>(shared)};
      return {design, std::make_unique<LogisticIVModel>(shared)};
    }
    case ModelKind::hte:
    case ModelKind::hte_full: {
      Dataset design = hte_design(data, kind == ModelKind::hte ? HteMode::treatment_only : HteMode::full);
      return {design, std::make_unique<LinearIVModel>(std::make_shared<const Dataset>(design))};
    }
    case ModelKind::scalar_treatment: {
      Dataset design = scalar_treatment_design(data, true);
      return {design, std::make_unique<LinearIVModel>(std::make_shared<const Dataset>(design))};
    }
  }
  throw Error("unknown model");
}

int cmd_estimate(const Options& opts, std::ostream& out) {
  EstimateConfig cfg;
  resolve(cfg, opts);
  cfg.hp.validate();
  const std::string& path = require_out(opts);
  const Dataset data = load_data(cfg.data_path, cfg.columns, cfg.center, out);
  LoadedModel loaded = build_model(cfg.model, data);
  const MomentModel& model = *loaded.model;

  RandomSource rng(cfg.seed);
  HyperParams hp = cfg.hp;
  EstimateReport rep;
  try {
    if (cfg.hp_source == HyperSource::plugin) {
      if (cfg.model == ModelKind::logistic_iv) {
        throw Error("plug-in hyperparameters need a linear model; set hp_source=fixed");
      }
      RandomSource diag_rng = rng.split("diagnostics");
      hp = plugin_hyperparams(model, two_stage_least_squares(loaded.design), cfg.hp, cfg.rule, diag_rng);
    }
    RandomSource est_rng = rng.split("estimate");
    rep = iterated_gmm_sever(model, hp, est_rng);
  } catch (const Error& e) {
    throw EstimationFailure(e.what());
  }

  std::ofstream file = open_output(path);
  for (const auto& line : stamp("estimate", describe(cfg))) file << "# " << line << '\n';
  file << "section,key,value\n";
  for (Eigen::Index j = 0; j < rep.w_hat.size(); ++j) {
    file << "param," << j << ',' << format_double(rep.w_hat(j)) << '\n';
  }
  const std::vector<std::pair<std::string, double>> used{
      {"eps", hp.eps},     {"lambda", hp.lambda}, {"L", hp.L},
      {"sigma", hp.sigma}, {"R0", hp.R0},         {"delta", hp.delta}};
  for (const auto& [k, v] : used) file << "hyper," << k << ',' << format_double(v) << '\n';
  for (const auto& [t, R] : rep.radius_trace) file << "radius," << t << ',' << format_double(R) << '\n';
  for (const auto& [k, v] : rep.diagnostics) file << "diagnostic," << k << ',' << format_double(v) << '\n';
  for (std::size_t k = 0; k < rep.filter_events.size(); ++k) {
    const FilterEvent& ev = rep.filter_events[k];
    file << "filter_event," << k << ',' << ev.stage << ':' << ev.iteration << ':' << to_string(ev.kind)
         << ':' << ev.removed << '\n';
  }
  std::size_t removed = 0;
  for (std::size_t i = 0; i < model.num_samples(); ++i) {
    if (!rep.final_set.contains(i)) file << "removed," << removed++ << ',' << i << '\n';
  }
  for (std::size_t k = 0; k < rep.notes.size(); ++k) file << "note," << k << ',' << csv_field(rep.notes[k]) << '\n';
  if (!file) throw Error("failed writing '" + path + "'");

  out << "w_hat:";
  for (Eigen::Index j = 0; j < rep.w_hat.size(); ++j) out << ' ' << format_double(rep.w_hat(j));
  out << "\nfinal |S| = " << rep.final_set.size() << " of " << model.num_samples() << ", stages "
      << rep.diagnostics["stages"] << '\n';
  for (const auto& note : rep.notes) out << "note: " << note << '\n';
  return 0;
}

int cmd_sweep(SweepKind kind, const Options& opts, std::ostream& out) {
  SweepConfig cfg = default_sweep_config(kind);
  resolve(cfg, opts);
  if (opts.jobs > 0) cfg.jobs = opts.jobs;
  cfg.validate();
  HyperParams check = cfg.hp;
  check.eps = 0.1;
  check.validate();
  const std::string& path = require_out(opts);

  const std::string command = kind == SweepKind::synthetic ? "synth-sweep" : "semi-sweep";
  const SweepResult res = run_sweep(cfg);
  std::vector<std::string> header = stamp(command, describe(cfg));
  if (res.reference_ate) header.push_back("reference_ate=" + format_double(*res.reference_ate));
  write_rows_csv(path, res.rows, header);
  const std::string spath = summary_path(path);
  write_summary_csv(spath, summarize(res.rows), header);

  const auto failed = static_cast<std::size_t>(
      std::count_if(res.rows.begin(), res.rows.end(), [](const SweepRow& r) { return r.failed; }));
  out << "wrote " << res.rows.size() << " rows to " << path << " (" << failed << " failed); summary in "
      << spath << '\n';
  if (failed == res.rows.size()) throw EstimationFailure("every sweep cell failed");
  return 0;
}

int cmd_diagnose(const Options& opts, std::ostream& out) {
  DiagnoseConfig cfg;
  resolve(cfg, opts);
  const Dataset data = load_data(cfg.data_path, cfg.columns, cfg.center, out);
  LoadedModel loaded = build_model(cfg.model, data);
  const MomentModel& model = *loaded.model;

  Vec w_ref;
  if (cfg.w_ref.empty()) {
    w_ref = two_stage_least_squares(loaded.design);
  } else {
    w_ref = Eigen::Map<const Vec>(cfg.w_ref.data(), static_cast<Eigen::Index>(cfg.w_ref.size()));
    if (w_ref.size() != model.param_dim()) throw Error("w_ref has the wrong dimension");
  }
  RandomSource rng(cfg.seed);
  RandomSource diag_rng = rng.split("diagnostics");
  const auto diag = diagnose_assumptions(model, ActiveSet::full(model.num_samples()), w_ref, diag_rng);
  RandomSource plug_rng = rng.split("diagnostics");
  const HyperParams hp = plugin_hyperparams(model, w_ref, HyperParams{}, cfg.rule, plug_rng);

  std::ostringstream body;
  for (const auto& line : stamp("diagnose", describe(cfg))) body << "# " << line << '\n';
  body << "key,value\n";
  body << "n," << model.num_samples() << "\nparam_dim," << model.param_dim() << "\nmoment_dim,"
       << model.moment_dim() << '\n';
  for (const auto& [k, v] : diag) body << k << ',' << format_double(v) << '\n';
  body << "plugin_lambda," << format_double(hp.lambda) << "\nplugin_L," << format_double(hp.L)
       << "\nplugin_sigma," << format_double(hp.sigma) << "\nplugin_R0," << format_double(hp.R0) << '\n';
  if (opts.out.empty()) {
    out << body.str();
  } else {
    std::ofstream file = open_output(opts.out);
    file << body.str();
    if (!file) throw Error("failed writing '" + opts.out + "'");
    out << "wrote diagnostics to " << opts.out << '\n';
  }
  return 0;
}

int cmd_gen_data(const Options& opts, std::ostream& out) {
  GenDataConfig cfg;
  resolve(cfg, opts);
  if (cfg.n < 1 || cfg.d < 1) throw Error("n and d must be >= 1");
  const std::string& path = require_out(opts);
  RandomSource rng(cfg.seed);
  std::vector<std::string> header = stamp("gen-data", describe(cfg));
  if (cfg.kind == GenKind::schooling) {
    write_csv(gen_schooling_standin(cfg.n, rng), path, schooling_columns(), header);
  } else {
    const SyntheticDraw draw = gen_synthetic_hte(cfg.n, cfg.d, rng, cfg.coding);
    ColumnMap cols{"y", std::string("t"), {"z"}, {}};
    for (Eigen::Index j = 1; j <= cfg.d; ++j) cols.covariates.push_back("x" + std::to_string(j));
    std::vector<double> theta(draw.theta.data(), draw.theta.data() + draw.theta.size());
    header.push_back("theta=" + fmt_list(theta));
    write_csv(draw.data, path, cols, header);
  }
  out << "wrote " << cfg.n << " rows to " << path << '\n';
  return 0;
}

// ---- selfcheck ----

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

Dataset random_linear_data(std::size_t n, Eigen::Index d, Eigen::Index p, RandomSource& rng) {
  Mat x(static_cast<Eigen::Index>(n), d), z(static_cast<Eigen::Index>(n), p);
  Vec y(static_cast<Eigen::Index>(n)), t(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rng.normal();
    for (Eigen::Index j = 0; j < p; ++j) z(i, j) = rng.normal();
    y(i) = rng.normal();
    t(i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }
  return Dataset(x, y, z, t);
}

double jacobian_error(const MomentModel& model, RandomSource& rng, int pairs) {
  double worst = 0.0;
  for (int k = 0; k < pairs; ++k) {
    const std::size_t i = rng.index(model.num_samples());
    Vec w(model.param_dim());
    for (Eigen::Index j = 0; j < w.size(); ++j) w(j) = rng.normal();
    const Mat fd = finite_diff_jacobian([&](const Vec& v) { return model.moment(i, v); }, w, 1e-6);
    const Mat an = model.jacobian(i, w);
    worst = std::max(worst, (fd - an).norm() / std::max(1.0, an.norm()));
  }
  return worst;
}

Check check_jacobian(const std::string& name, const MomentModel& model, RandomSource& rng) {
  const double err = jacobian_error(model, rng, 25);
  return {name, err <= 1e-5, "max rel err " + fmt(err)};
}

Check check_filter_stability(RandomSource& rng) {
  constexpr int kTrials = 100;
  constexpr Eigen::Index k = 10;
  constexpr std::size_t n = 200;
  const double eps = 0.1;
  const auto bad = static_cast<std::size_t>(eps * n);
  int violations = 0, no_removal = 0;
  for (int trial = 0; trial < kTrials; ++trial) {
    Mat xi(static_cast<Eigen::Index>(n), k);
    Vec scale(k);
    for (Eigen::Index j = 0; j < k; ++j) scale(j) = rng.uniform();
    for (std::size_t i = 0; i < n - bad; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) xi(static_cast<Eigen::Index>(i), j) = scale(j) * rng.normal();
    }
    Vec dir(k);
    for (Eigen::Index j = 0; j < k; ++j) dir(j) = rng.normal();
    dir /= dir.norm();
    const double dist = std::pow(10.0, rng.uniform(-1.0, 3.0));
    for (std::size_t i = n - bad; i < n; ++i) xi.row(static_cast<Eigen::Index>(i)) = dist * dir.transpose();
    const double M = rng.uniform(0.1, 2.0);
    const FilterOutcome res = filter(xi, ActiveSet::full(n), M, rng);
    if (!res.removed.empty()) continue;
    ++no_removal;
    const MeanCov inl = sample_mean_cov(xi.topRows(static_cast<Eigen::Index>(n - bad)));
    const double cov_op = Eigen::SelfAdjointEigenSolver<Mat>(inl.cov).eigenvalues().maxCoeff();
    const double shift = (xi.colwise().mean().transpose() - inl.mean).norm();
    if (shift > 3.0 * std::sqrt(48.0) * std::sqrt((M + cov_op) * eps)) ++violations;
  }
  return {"filter-stability", violations == 0,
          std::to_string(no_removal) + " no-removal outcomes, " + std::to_string(violations) + " violations"};
}

Check check_filter_removal_rule(RandomSource& rng) {
  bool ok = true;
  for (int trial = 0; trial < 50 && ok; ++trial) {
    Mat xi(60, 3);
    for (Eigen::Index i = 0; i < xi.rows(); ++i) {
      for (Eigen::Index j = 0; j < 3; ++j) xi(i, j) = rng.normal() * (i < 6 ? 30.0 : 1.0);
    }
    const ActiveSet S = ActiveSet::full(60);
    RandomSource a = rng.split(static_cast<std::uint64_t>(trial));
    const SpectralScores sc = spectral_scores(xi, a);
    RandomSource b = rng.split(static_cast<std::uint64_t>(trial));
    const FilterOutcome res = filter(xi, S, 1.0, b);
    if (!res.threshold_used) continue;
    for (std::size_t r = 0; r < S.size(); ++r) {
      const bool gone = !res.kept.contains(S[r]);
      if (gone != (sc.tau(static_cast<Eigen::Index>(r)) > *res.threshold_used)) ok = false;
    }
    if (res.kept.size() + res.removed.size() != S.size()) ok = false;
  }
  return {"filter-removes-exactly-above-threshold", ok, "50 trials"};
}

Check check_power_iteration(RandomSource& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index k = 2 + static_cast<Eigen::Index>(rng.index(30));
    Mat B(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) B(i, j) = rng.normal();
    }
    const Mat A = B * B.transpose();
    const double exact = Eigen::SelfAdjointEigenSolver<Mat>(A).eigenvalues().maxCoeff();
    const Eigenpair top = top_eigenvector(A, rng);
    worst = std::max(worst, std::abs(top.value - exact) / exact);
  }
  return {"power-iteration-top-eigenvalue", worst <= 1e-8, "max rel err " + fmt(worst)};
}

Check check_learner(RandomSource& rng) {
  double worst = 0.0;
  bool ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.index(6));
    Mat B(d, d);
    Vec b(d), c(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      b(i) = 3.0 * rng.normal();
      c(i) = rng.normal();
      for (Eigen::Index j = 0; j < d; ++j) B(i, j) = rng.normal();
    }
    const Mat A = B * B.transpose() + 0.1 * Mat::Identity(d, d);
    CriticalPointProblem prob;
    prob.objective = [&](const Vec& x) { return 0.5 * x.dot(A * x) - b.dot(x); };
    prob.gradient = [&](const Vec& x) { return Vec(A * x - b); };
    prob.center = c;
    prob.radius = rng.uniform(0.1, 2.0);
    prob.gamma = 1e-6;
    const LearnerResult res = projected_gradient_critical_point(prob);
    const double crit = criticality_measure(res.x, A * res.x - b, c, prob.radius);
    worst = std::max(worst, crit);
    if (!(crit <= prob.gamma * (1.0 + 1e-9)) || (res.x - c).norm() > prob.radius * (1.0 + 1e-12)) ok = false;
  }
  return {"learner-gamma-critical", ok, "max criticality " + fmt(worst)};
}

Check check_schedule() {
  HyperParams hp;
  hp.eps = 0.01;
  hp.lambda = 1.0;
  hp.L = 1.0;
  hp.sigma = 0.5;
  hp.R0 = 10.0;
  hp.sched = RadiusSchedule::practice();
  const std::vector<double> radii = radius_sequence(hp, 0.01);
  const std::vector<double> expect{10.0, 2.14, 0.568};
  bool ok = radii.size() >= expect.size();
  for (std::size_t k = 0; ok && k < expect.size(); ++k) ok = std::abs(radii[k] - expect[k]) <= 1e-12;
  return {"radius-schedule-trace", ok, "R1..R3 = " + fmt_list(std::vector<double>(radii.begin(), radii.begin() + std::min<std::size_t>(3, radii.size())))};
}

Check check_negation(RandomSource& rng) {
  RandomSource data_rng = rng.split("standin");
  const Dataset design = scalar_treatment_design(gen_schooling_standin(3010, data_rng), true);
  const Vec w0 = two_stage_least_squares(design);
  double worst = 0.0;
  for (double eps : {0.05, 0.10, 0.15}) {
    RandomSource atk = rng.split(fmt(eps));
    const Corruption c = corrupt_negation(design, eps, atk);
    const Vec w1 = two_stage_least_squares(c.data);
    worst = std::max(worst, (w1 + w0).norm() / w0.norm());
  }
  return {"negation-attack-identity", worst <= 1e-8, "max rel err " + fmt(worst)};
}

Check check_determinism(std::uint64_t seed) {
  SweepConfig cfg = desk_synthetic_preset();
  cfg.n = 300;
  cfg.d = 3;
  cfg.eps_grid = {0.1};
  cfg.reps = 2;
  cfg.seed = seed;
  cfg.hp.gamma = 1e-6;
  const SweepResult a = run_sweep(cfg);
  const SweepResult b = run_sweep(cfg);
  bool same = a.rows.size() == b.rows.size();
  for (std::size_t k = 0; same && k < a.rows.size(); ++k) {
    same = a.rows[k].failed == b.rows[k].failed &&
           format_double(a.rows[k].value) == format_double(b.rows[k].value) && a.rows[k].seed == b.rows[k].seed;
  }
  return {"sweep-seed-determinism", same, std::to_string(a.rows.size()) + " rows compared"};
}

int cmd_selfcheck(const Options& opts, std::ostream& out) {
  std::uint64_t seed = 0;
  if (!opts.seed.empty()) seed = parse_integer<std::uint64_t>("seed", opts.seed);
  if (!opts.config.empty() || !opts.sets.empty()) throw Error("selfcheck takes no configuration keys");
  RandomSource rng(seed);

  std::vector<Check> checks;
  {
    RandomSource r = rng.split("linear");
    auto data = std::make_shared<const Dataset>(random_linear_data(50, 4, 5, r));
    checks.push_back(check_jacobian("jacobian-linear-iv", LinearIVModel(data), r));
  }
  {
    RandomSource r = rng.split("logistic");
    auto data = std::make_shared<const Dataset>(random_linear_data(50, 4, 5, r));
    checks.push_back(check_jacobian("jacobian-logistic-iv", LogisticIVModel(data), r));
  }
  {
    RandomSource r = rng.split("hte");
    const SyntheticDraw draw = gen_synthetic_hte(50, 4, r);
    checks.push_back(check_jacobian("jacobian-hte", HTEModel(draw.data, HteMode::full), r));
  }
  {
    RandomSource r = rng.split("filter");
    checks.push_back(check_filter_stability(r));
    checks.push_back(check_filter_removal_rule(r));
  }
  {
    RandomSource r = rng.split("power");
    checks.push_back(check_power_iteration(r));
  }
  {
    RandomSource r = rng.split("learner");
    checks.push_back(check_learner(r));
  }
  checks.push_back(check_schedule());
  {
    RandomSource r = rng.split("negation");
    checks.push_back(check_negation(r));
  }
  checks.push_back(check_determinism(seed));

  std::ostringstream report;
  std::size_t passed = 0;
  for (const auto& c : checks) {
    report << (c.pass ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
    passed += c.pass ? 1 : 0;
  }
  report << passed << "/" << checks.size() << " checks passed\n";
  out << report.str();
  if (!opts.out.empty()) {
    std::ofstream file = open_output(opts.out);
    file << report.str();
  }
  return passed == checks.size() ? 0 : 2;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Robust GMM estimation with spectral filtering, plus corruption sweeps", "rgmm"};
  app.require_subcommand(1);
  Options opts;

  auto add_common = [&](CLI::App* sub, bool with_jobs) {
    sub->add_option("--config", opts.config, "Settings file with KEY=VALUE lines");
    sub->add_option("--seed", opts.seed, "Master seed (unsigned 64-bit)");
    sub->add_option("--out", opts.out, "Output path");
    sub->add_option("--set", opts.sets, "Override a setting, KEY=VALUE (repeatable)")->allow_extra_args(false);
    if (with_jobs) sub->add_option("--jobs", opts.jobs, "Worker threads for sweep cells")->check(CLI::PositiveNumber);
  };
  CLI::App* estimate = app.add_subcommand("estimate", "Run Iterated-GMM-Sever on a CSV dataset");
  CLI::App* synth = app.add_subcommand("synth-sweep", "Synthetic corruption sweep (l2 error)");
  CLI::App* semi = app.add_subcommand("semi-sweep", "Semi-synthetic negation sweep (ATE)");
  CLI::App* diagnose = app.add_subcommand("diagnose", "Plug-in estimates of lambda, L and sigma");
  CLI::App* selfcheck = app.add_subcommand("selfcheck", "Fast invariant checks");
  CLI::App* gen = app.add_subcommand("gen-data", "Write a generated dataset as CSV");
  add_common(estimate, false);
  add_common(synth, true);
  add_common(semi, true);
  add_common(diagnose, false);
  add_common(selfcheck, false);
  add_common(gen, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (!opts.out.empty()) {
      const std::filesystem::path parent = std::filesystem::path(opts.out).parent_path();
      std::error_code ec;
      if (!parent.empty()) std::filesystem::create_directories(parent, ec);
      if (ec) throw Error("cannot create directory '" + parent.string() + "': " + ec.message());
    }
    if (estimate->parsed()) return cmd_estimate(opts, out);
    if (synth->parsed()) return cmd_sweep(SweepKind::synthetic, opts, out);
    if (semi->parsed()) return cmd_sweep(SweepKind::semi_synthetic, opts, out);
    if (diagnose->parsed()) return cmd_diagnose(opts, out);
    if (selfcheck->parsed()) return cmd_selfcheck(opts, out);
    if (gen->parsed()) return cmd_gen_data(opts, out);
  } catch (const EstimationFailure& e) {
    err << "estimation failed: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace rgmm
