#include "rgmm/experiments.hpp"

#include "rgmm/baselines.hpp"
#include "rgmm/models.hpp"
#include "rgmm/numerics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace rgmm {

SyntheticDraw gen_synthetic_hte(std::size_t n, Eigen::Index d, RandomSource& rng,
                                InstrumentCoding coding) {
  if (n == 0 || d <= 0) throw Error("synthetic data needs n >= 1 and d >= 1");
  const auto rows = static_cast<Eigen::Index>(n);
  Vec theta(d);
  for (Eigen::Index j = 0; j < d; ++j) theta(j) = rng.normal();

  Mat X(rows, d);
  Vec Y(rows);
  Mat Z(rows, 1);
  Vec T(rows);
  const double root_d = std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = rng.normal();
    const bool heads = rng.bernoulli(0.5);
    Z(i, 0) = heads ? 1.0 : (coding == InstrumentCoding::zero_one ? 0.0 : -1.0);
    const double u = rng.normal();
    const double xbar = X.row(i).mean();
    T(i) = rng.bernoulli(logistic(Z(i, 0) + root_d * u * xbar)) ? 1.0 : 0.0;
    Y(i) = X.row(i).dot(theta) * T(i) + u;
  }
  return {Dataset(std::move(X), std::move(Y), std::move(Z), std::move(T)), std::move(theta)};
}

Dataset gen_schooling_standin(std::size_t n, RandomSource& rng) {
  if (n == 0) throw Error("stand-in needs n >= 1");
  const auto rows = static_cast<Eigen::Index>(n);
  Mat X(rows, 2);
  Vec Y(rows);
  Mat Z(rows, 1);
  Vec T(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double ability = rng.normal();
    const double near = rng.bernoulli(0.68) ? 1.0 : 0.0;
    const double exper = std::clamp(std::round(8.9 + 4.1 * rng.normal()), 0.0, 23.0);
    const double educ = std::clamp(
        std::round(12.0 + 1.5 * near + 1.2 * ability - 0.15 * (exper - 8.9) + 1.5 * rng.normal()),
        2.0, 18.0);
    X(i, 0) = exper;
    X(i, 1) = exper * exper;
    Z(i, 0) = near;
    T(i) = educ;
    Y(i) = 4.8 + kStandinReturnToSchooling * educ + 0.085 * exper - 0.0023 * exper * exper +
           0.2 * ability + 0.35 * rng.normal();
  }
  return Dataset(std::move(X), std::move(Y), std::move(Z), std::move(T));
}

std::vector<std::size_t> choose_indices(std::size_t n, std::size_t k, RandomSource& rng) {
  if (k > n) throw Error("cannot choose more indices than samples");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t pick = j + rng.index(n - j);
    std::swap(pool[j], pool[pick]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

namespace {

std::size_t corrupted_count(std::size_t n, double eps) {
  if (!(eps >= 0.0 && eps < 1.0)) throw Error("corruption fraction must lie in [0, 1)");
  // The small guard keeps e.g. 0.1 * 100 from flooring to 9.
  return static_cast<std::size_t>(std::floor(eps * static_cast<double>(n) + 1e-9));
}

}  // namespace

Corruption corrupt_all_ones(const Dataset& data, double eps, RandomSource& rng) {
  const std::size_t k = corrupted_count(data.n(), eps);
  std::vector<std::size_t> idx = choose_indices(data.n(), k, rng);
  Mat X = data.x();
  for (std::size_t i : idx) X.row(static_cast<Eigen::Index>(i)).setOnes();
  return {data.with_x(std::move(X)), std::move(idx)};
}

Corruption corrupt_negation(const Dataset& design, double eps, RandomSource& rng) {
  if (design.p() != design.d()) throw Error("negation attack needs an exactly identified design");
  const std::size_t k = corrupted_count(design.n(), eps);
  if (k < static_cast<std::size_t>(design.p())) {
    throw Error("negation attack needs at least p corrupted samples");
  }
  const Mat& Z = design.z();
  const Vec b = -2.0 * (Z.transpose() * design.y());

  for (int attempt = 0; attempt < 20; ++attempt) {
    std::vector<std::size_t> idx = choose_indices(design.n(), k, rng);
    Mat A(design.p(), static_cast<Eigen::Index>(k));
    for (std::size_t c = 0; c < k; ++c) {
      A.col(static_cast<Eigen::Index>(c)) = Z.row(static_cast<Eigen::Index>(idx[c])).transpose();
    }
    Eigen::JacobiSVD<Mat> svd(A);
    const Vec& s = svd.singularValues();
    if (!(s.minCoeff() > 1e-10 * s.maxCoeff())) continue;

    // Minimum-norm solution of A delta = b, with one refinement pass.
    const Eigen::CompleteOrthogonalDecomposition<Mat> cod(A);
    Vec delta = cod.solve(b);
    delta += cod.solve(Vec(b - A * delta));

    Vec y = design.y();
    for (std::size_t c = 0; c < k; ++c) y(static_cast<Eigen::Index>(idx[c])) += delta(static_cast<Eigen::Index>(c));
    return {design.with_y(std::move(y)), std::move(idx)};
  }
  throw Error("negation attack: corrupted instruments are rank-deficient");
}

ColumnMap schooling_columns() {
  return {"lwage", std::string("educ"), {"nearc4"}, {"exper", "expersq"}};
}

Dataset center_columns(const Dataset& data) {
  Mat x = data.x().rowwise() - data.x().colwise().mean();
  Mat z = data.z().rowwise() - data.z().colwise().mean();
  std::optional<Vec> t;
  if (data.has_treatment()) t = (data.t().array() - data.t().mean()).matrix();
  return Dataset(std::move(x), data.y(), std::move(z), std::move(t));
}

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  s = s.substr(first, last - first + 1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "na" || cell == ".";
}

}  // namespace

CsvLoad load_csv(const std::string& path, const ColumnMap& columns) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (line.empty() || line[0] != '#') {
      have_header = true;
      break;
    }
  }
  if (!have_header) throw Error("no data rows in " + path);
  const std::vector<std::string> header = split_line(line);

  auto locate = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error("missing column '" + name + "' in " + path);
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> cov, inst;
  for (const auto& c : columns.covariates) cov.push_back(locate(c));
  for (const auto& c : columns.instruments) inst.push_back(locate(c));
  const std::size_t resp = locate(columns.response);
  std::optional<std::size_t> treat;
  if (columns.treatment) treat = locate(*columns.treatment);
  if (cov.empty() || inst.empty()) throw Error("column map needs covariates and instruments");

  std::vector<std::vector<double>> rows;
  std::size_t read = 0, dropped = 0;
  const std::size_t width = cov.size() + inst.size() + 1 + (treat ? 1 : 0);
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++read;
    const std::vector<std::string> cells = split_line(line);
    std::vector<double> values;
    values.reserve(width);
    bool missing = false;
    auto take = [&](std::size_t col) {
      const std::string cell = col < cells.size() ? cells[col] : std::string();
      if (is_missing(cell)) {
        missing = true;
        values.push_back(0.0);
        return;
      }
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw Error("unparseable numeric cell at row " + std::to_string(line_no) + ", column '" +
                    header[col] + "': '" + cell + "'");
      }
      values.push_back(v);
    };
    for (std::size_t c : cov) take(c);
    for (std::size_t c : inst) take(c);
    if (treat) take(*treat);
    take(resp);
    if (missing) {
      ++dropped;
      continue;
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw Error("no data rows in " + path);

  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(cov.size());
  const auto p = static_cast<Eigen::Index>(inst.size());
  Mat X(n, d), Z(n, p);
  Vec Y(n);
  std::optional<Vec> T;
  if (treat) T = Vec(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    std::size_t k = 0;
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = r[k++];
    for (Eigen::Index j = 0; j < p; ++j) Z(i, j) = r[k++];
    if (T) (*T)(i) = r[k++];
    Y(i) = r[k];
  }
  return {Dataset(std::move(X), std::move(Y), std::move(Z), std::move(T)), read, dropped};
}

void write_csv(const Dataset& data, const std::string& path, const ColumnMap& columns,
               const std::vector<std::string>& header) {
  if (static_cast<Eigen::Index>(columns.covariates.size()) != data.d() ||
      static_cast<Eigen::Index>(columns.instruments.size()) != data.p()) {
    throw Error("column map does not match dataset shape");
  }
  if (columns.treatment.has_value() != data.has_treatment()) {
    throw Error("column map treatment does not match dataset");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  for (const auto& line : header) out << "# " << line << '\n';
  std::vector<std::string> names = columns.covariates;
  names.insert(names.end(), columns.instruments.begin(), columns.instruments.end());
  if (columns.treatment) names.push_back(*columns.treatment);
  names.push_back(columns.response);
  for (std::size_t k = 0; k < names.size(); ++k) out << (k ? "," : "") << names[k];
  out << '\n';

  char buf[32];
  auto put = [&](double v, bool first) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    if (!first) out << ',';
    out << buf;
  };
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(data.n()); ++i) {
    bool first = true;
    for (Eigen::Index j = 0; j < data.d(); ++j, first = false) put(data.x()(i, j), first);
    for (Eigen::Index j = 0; j < data.p(); ++j) put(data.z()(i, j), false);
    if (data.has_treatment()) put(data.t()(i), false);
    put(data.y()(i), false);
    out << '\n';
  }
  if (!out) throw Error("failed writing " + path);
}

namespace {

Vec random_unit(Eigen::Index k, RandomSource& rng) {
  Vec v(k);
  for (Eigen::Index j = 0; j < k; ++j) v(j) = rng.normal();
  return v / v.norm();
}

}  // namespace

std::map<std::string, double> diagnose_assumptions(const MomentModel& model, const ActiveSet& S,
                                                   const Vec& w_ref, RandomSource& rng) {
  if (S.empty()) throw Error("empty active set");
  const Eigen::Index p = model.moment_dim();
  const Eigen::Index d = model.param_dim();
  const double m = static_cast<double>(S.size());

  std::vector<Mat> jac;
  jac.reserve(S.size());
  Mat moments(static_cast<Eigen::Index>(S.size()), p);
  Mat Jbar = Mat::Zero(p, d);
  {
    Eigen::Index r = 0;
    for (std::size_t i : S) {
      jac.push_back(model.jacobian(i, w_ref));
      Jbar += jac.back();
      moments.row(r++) = model.moment(i, w_ref).transpose();
    }
  }
  Jbar /= m;

  auto bilinear_second_moment = [&](const Vec& u, const Vec& v) {
    double acc = 0.0;
    for (const Mat& J : jac) {
      const double s = u.dot(J * v);
      acc += s * s;
    }
    return acc / m;
  };

  std::map<std::string, double> out;
  out["lambda_hat"] = smallest_singular_value(Jbar);

  double best = -1.0;
  Vec bu, bv;
  for (int k = 0; k < 200; ++k) {
    Vec u = random_unit(p, rng);
    Vec v = random_unit(d, rng);
    const double val = bilinear_second_moment(u, v);
    if (val > best) {
      best = val;
      bu = std::move(u);
      bv = std::move(v);
    }
  }
  out["L2_hat_sampled"] = best;
  // Alternating maximization: each half-step is an exact maximization over one factor.
  for (int step = 0; step < 25; ++step) {
    Mat Cv = Mat::Zero(d, d);
    for (const Mat& J : jac) {
      const Vec a = J.transpose() * bu;
      Cv.noalias() += a * a.transpose();
    }
    bv = top_eigenvector(Cv / m, rng).vector;
    Mat Cu = Mat::Zero(p, p);
    for (const Mat& J : jac) {
      const Vec a = J * bv;
      Cu.noalias() += a * a.transpose();
    }
    bu = top_eigenvector(Cu / m, rng).vector;
    best = std::max(best, bilinear_second_moment(bu, bv));
  }
  out["L2_hat"] = best;

  double best_noise = 0.0;
  for (int k = 0; k < 200; ++k) {
    const Vec v = random_unit(p, rng);
    best_noise = std::max(best_noise, (moments * v).squaredNorm() / m);
  }
  out["sigma2L_sampled"] = best_noise;
  const Mat second = moments.transpose() * moments / m;
  out["sigma2L_hat"] = std::max(best_noise, top_eigenvector(second, rng).value);
  out["moment_norm"] = (moments.colwise().sum().transpose() / m).norm();
  return out;
}

HyperParams plugin_hyperparams(const MomentModel& model, const Vec& w_ref, const HyperParams& base,
                               const PluginRule& rule, RandomSource& rng) {
  const auto diag = diagnose_assumptions(model, ActiveSet::full(model.num_samples()), w_ref, rng);
  HyperParams hp = base;
  const double L_hat = std::sqrt(diag.at("L2_hat"));
  hp.lambda = rule.lambda_factor * diag.at("lambda_hat");
  if (!(hp.lambda > 0.0)) hp.lambda = 1e-12;
  hp.L = std::max(rule.L_factor * L_hat, hp.lambda);
  hp.sigma = L_hat > 0.0 ? std::sqrt(diag.at("sigma2L_hat") / L_hat) : 0.0;
  hp.R0 = rule.radius_factor * w_ref.norm() + rule.radius_pad;
  return hp;
}

}  // namespace rgmm
