#include "paleo/bayes.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "paleo/parallel.hpp"

namespace paleo::bayes {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double type7(std::vector<double>& v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Split-chain potential scale reduction.
double split_rhat(const MatrixXd& draws, Index column, int chains, int kept) {
  const int half = kept / 2;
  if (half < 2) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> means, vars;
  for (int c = 0; c < chains; ++c)
    for (int s = 0; s < 2; ++s) {
      const Index start = static_cast<Index>(c) * kept + s * half;
      const VectorXd seg = draws.col(column).segment(start, half);
      const double m = seg.mean();
      means.push_back(m);
      vars.push_back((seg.array() - m).square().sum() / (half - 1));
    }
  const double n = half;
  const double m = static_cast<double>(means.size());
  double grand = 0.0;
  for (double x : means) grand += x;
  grand /= m;
  double b = 0.0;
  for (double x : means) b += (x - grand) * (x - grand);
  b *= n / (m - 1.0);
  double w = 0.0;
  for (double v : vars) w += v;
  w /= m;
  if (!(w > 0.0)) return b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

}  // namespace

void BayesSpec::validate() const {
  if (ar_order < 0 || ar_order > 2) throw Error(ErrorCode::configuration, "ar_order must be 0, 1 or 2");
  if (k < 0) throw Error(ErrorCode::configuration, "PC count must be >= 0");
  if (!(prior.coefficient_sd > 0.0) || !(prior.shape > 0.0) || !(prior.scale > 0.0))
    throw Error(ErrorCode::configuration, "prior parameters must be positive");
  if (mcmc.iterations <= mcmc.burn_in || mcmc.burn_in < 0)
    throw Error(ErrorCode::configuration, "iterations must exceed burn_in");
  if (mcmc.chains < 2) throw Error(ErrorCode::configuration, "at least two chains are required");
  if (mcmc.thin < 1) throw Error(ErrorCode::configuration, "thin must be >= 1");
}

ParameterDraw Posterior::draw(Index i) const {
  ParameterDraw d;
  const auto row = draws.row(i);
  d.intercept = row(0);
  for (int a = 0; a < spec.ar_order; ++a) d.ar.push_back(row(1 + a));
  for (int b = 0; b < spec.k; ++b) d.beta.push_back(row(1 + spec.ar_order + b));
  d.innovation_sd = row(draws.cols() - 1);
  return d;
}

ParameterDraw Posterior::mean() const {
  Posterior tmp;
  tmp.spec = spec;
  tmp.draws = draws.colwise().mean();
  return tmp.draw(0);
}

std::pair<double, double> Posterior::interval(Index parameter, double level) const {
  std::vector<double> v(draws.rows());
  for (Index i = 0; i < draws.rows(); ++i) v[static_cast<std::size_t>(i)] = draws(i, parameter);
  const double lo = type7(v, (1.0 - level) / 2.0);
  const double hi = type7(v, (1.0 + level) / 2.0);
  return {lo, hi};
}

Posterior fit_bayes(const data::AnnualSeries& y, const data::ProxyMatrix& pcs, const YearRange& calibration,
                    const BayesSpec& spec, unsigned threads) {
  spec.validate();
  const int p = spec.ar_order;
  const int k = spec.k;
  if (k > 0 && pcs.n_series() < k)
    throw Error(ErrorCode::configuration, "need " + std::to_string(k) + " PC columns, have " +
                                              std::to_string(pcs.n_series()));
  if (!y.years().contains(calibration))
    throw Error(ErrorCode::coverage, "calibration " + to_string(calibration) + " outside the target");
  const int m = calibration.length() - p;
  const int d = 1 + p + k;
  if (m <= d) throw Error(ErrorCode::insufficient_data, "calibration too short for the Bayes model");

  MatrixXd x(m, d);
  VectorXd yy(m);
  for (int r = 0; r < m; ++r) {
    const int t = calibration.first + p + r;
    yy(r) = y.at(t);
    x(r, 0) = 1.0;
    for (int a = 1; a <= p; ++a) x(r, a) = y.at(t - a);
    for (int b = 0; b < k; ++b) {
      if (!pcs.available(t, b))
        throw Error(ErrorCode::coverage, "PC " + std::to_string(b + 1) + " missing in " + std::to_string(t));
      x(r, 1 + p + b) = pcs.values()(pcs.row(t), b);
    }
  }
  if (!x.allFinite() || !yy.allFinite()) throw Error(ErrorCode::numeric, "non-finite Bayes input");

  const MatrixXd xtx = x.transpose() * x;
  const VectorXd xty = x.transpose() * yy;
  const double prior_prec = 1.0 / (spec.prior.coefficient_sd * spec.prior.coefficient_sd);
  const VectorXd ols = x.completeOrthogonalDecomposition().solve(yy);
  const double s2_ols = std::max((yy - x * ols).squaredNorm() / std::max(1, m - d), 1e-12);

  Posterior post;
  post.spec = spec;
  post.calibration = calibration;
  post.names.push_back("intercept");
  for (int a = 1; a <= p; ++a) post.names.push_back("phi" + std::to_string(a));
  for (int b = 1; b <= k; ++b) post.names.push_back("beta" + std::to_string(b));
  post.names.push_back("sigma");
  for (int a = 0; a < p; ++a) post.anchor.push_back(y.at(calibration.first + a));

  const int kept = (spec.mcmc.iterations - spec.mcmc.burn_in + spec.mcmc.thin - 1) / spec.mcmc.thin;
  post.chains = spec.mcmc.chains;
  post.kept_per_chain = kept;
  post.draws.resize(static_cast<Index>(kept) * post.chains, d + 1);

  parallel_for(static_cast<std::size_t>(post.chains), threads, [&](std::size_t c) {
    Engine engine = make_engine(Seed{spec.mcmc.seed, 0}.child(c));
    std::normal_distribution<double> z;
    const double shape = spec.prior.shape + 0.5 * m;
    double sigma2 = s2_ols * std::exp(z(engine));  // dispersed start
    int stored = 0;
    for (int it = 0; it < spec.mcmc.iterations; ++it) {
      MatrixXd prec = xtx / sigma2;
      prec.diagonal().array() += prior_prec;
      const Eigen::LLT<MatrixXd> llt(prec);
      if (llt.info() != Eigen::Success) throw Error(ErrorCode::numeric, "posterior precision not positive definite");
      const VectorXd mean = llt.solve(xty / sigma2);
      VectorXd e(d);
      for (int j = 0; j < d; ++j) e(j) = z(engine);
      const VectorXd beta = mean + llt.matrixU().solve(e);
      const double ssr = (yy - x * beta).squaredNorm();
      std::gamma_distribution<double> g(shape, 1.0 / (spec.prior.scale + 0.5 * ssr));
      sigma2 = 1.0 / g(engine);
      if (it >= spec.mcmc.burn_in && (it - spec.mcmc.burn_in) % spec.mcmc.thin == 0) {
        const Index row = static_cast<Index>(c) * kept + stored++;
        post.draws.row(row).head(d) = beta.transpose();
        post.draws(row, d) = std::sqrt(sigma2);
      }
    }
  });

  for (Index j = 0; j <= d; ++j) post.rhat.push_back(split_rhat(post.draws, j, post.chains, kept));
  post.max_rhat = 0.0;
  for (double r : post.rhat) post.max_rhat = std::max(post.max_rhat, std::isfinite(r) ? r : 1e9);
  post.converged = post.max_rhat < 1.05;
  if (!post.converged) {
    std::ostringstream msg;
    msg << "split R-hat above 1.05:";
    for (std::size_t j = 0; j < post.rhat.size(); ++j)
      if (!(post.rhat[j] < 1.05)) msg << ' ' << post.names[j] << '=' << format_double(post.rhat[j]);
    post.warnings.push_back(msg.str());
  }
  return post;
}

nlohmann::json to_json(const Posterior& post) {
  nlohmann::json j;
  j["version"] = "paleorecon.posterior/1";
  j["spec"] = {{"ar_order", post.spec.ar_order},
               {"k", post.spec.k},
               {"prior", {{"coefficient_sd", post.spec.prior.coefficient_sd},
                          {"shape", post.spec.prior.shape},
                          {"scale", post.spec.prior.scale}}},
               {"mcmc", {{"iterations", post.spec.mcmc.iterations},
                         {"burn_in", post.spec.mcmc.burn_in},
                         {"thin", post.spec.mcmc.thin},
                         {"chains", post.spec.mcmc.chains},
                         {"seed", post.spec.mcmc.seed}}}};
  j["calibration"] = {post.calibration.first, post.calibration.last};
  j["n_draws"] = post.n_draws();
  auto params = nlohmann::json::array();
  const VectorXd means = post.draws.colwise().mean();
  for (std::size_t i = 0; i < post.names.size(); ++i) {
    const auto [lo, hi] = post.interval(static_cast<Index>(i), 0.95);
    params.push_back({{"name", post.names[i]},
                      {"mean", means(static_cast<Index>(i))},
                      {"q025", lo},
                      {"q975", hi},
                      {"rhat", post.rhat[i]}});
  }
  j["parameters"] = std::move(params);
  j["diagnostics"] = {{"max_rhat", post.max_rhat}, {"converged", post.converged}, {"warnings", post.warnings}};
  return j;
}

PathEnsemble backcast_paths(const Posterior& posterior, const data::ProxyMatrix& pcs, const YearRange& years,
                            const BackcastOptions& options) {
  const int p = posterior.spec.ar_order;
  const int k = posterior.spec.k;
  if (years.empty()) throw Error(ErrorCode::configuration, "empty backcast range");
  if (years.last >= posterior.calibration.first)
    throw Error(ErrorCode::configuration, "backcast years must precede the calibration period");
  if (posterior.n_draws() == 0) throw Error(ErrorCode::configuration, "posterior has no draws");
  const YearRange sim{years.first, posterior.calibration.first - 1};
  const int len = sim.length();

  MatrixXd pc(len, k);
  for (int t = sim.first; t <= sim.last; ++t)
    for (int b = 0; b < k; ++b) {
      if (!pcs.years().contains(t) || !pcs.available(t, b))
        throw Error(ErrorCode::coverage, "PC " + std::to_string(b + 1) + " missing in backcast year " +
                                             std::to_string(t));
      pc(t - sim.first, b) = pcs.values()(pcs.row(t), b);
    }

  std::vector<Index> chosen;
  const Index total_draws = posterior.n_draws();
  if (options.max_draws > 0 && options.max_draws < total_draws) {
    for (Index i = 0; i < options.max_draws; ++i) chosen.push_back(i * total_draws / options.max_draws);
  } else {
    for (Index i = 0; i < total_draws; ++i) chosen.push_back(i);
  }
  const ParameterDraw mean = posterior.mean();
  const auto n = static_cast<Index>(chosen.size());

  PathEnsemble out;
  out.years = years;
  out.total.resize(n, years.length());
  out.beta_only.resize(n, years.length());
  out.epsilon_only.resize(n, years.length());

  // Reverse-time recursion: y_t depends on y_{t+1}, ..., y_{t+p}.
  auto run = [&](const ParameterDraw& d, const VectorXd* z, double sd, std::vector<double>& path) {
    std::vector<double> ahead = posterior.anchor;  // ahead[i] = y_{t+1+i}
    path.assign(static_cast<std::size_t>(len), 0.0);
    for (int idx = len - 1; idx >= 0; --idx) {
      double v = d.intercept;
      for (int a = 0; a < p; ++a) v += d.ar[static_cast<std::size_t>(a)] * ahead[static_cast<std::size_t>(a)];
      for (int b = 0; b < k; ++b) v += d.beta[static_cast<std::size_t>(b)] * pc(idx, b);
      if (z) v += sd * (*z)(idx);
      path[static_cast<std::size_t>(idx)] = v;
      if (p > 0) {
        for (int a = p - 1; a > 0; --a) ahead[static_cast<std::size_t>(a)] = ahead[static_cast<std::size_t>(a - 1)];
        ahead[0] = v;
      }
    }
  };

  parallel_for(static_cast<std::size_t>(n), options.threads, [&](std::size_t r) {
    Engine engine = make_engine(options.seed.child(static_cast<std::uint64_t>(chosen[r])));
    std::normal_distribution<double> zd;
    VectorXd z(len);
    for (int i = 0; i < len; ++i) z(i) = zd(engine);
    const ParameterDraw d = posterior.draw(chosen[r]);
    std::vector<double> path;
    const auto row = static_cast<Index>(r);
    run(d, &z, d.innovation_sd, path);
    for (int j = 0; j < years.length(); ++j) out.total(row, j) = path[static_cast<std::size_t>(j)];
    run(d, nullptr, 0.0, path);
    for (int j = 0; j < years.length(); ++j) out.beta_only(row, j) = path[static_cast<std::size_t>(j)];
    run(mean, &z, mean.innovation_sd, path);
    for (int j = 0; j < years.length(); ++j) out.epsilon_only(row, j) = path[static_cast<std::size_t>(j)];
  });
  return out;
}

std::vector<double> Band::width() const {
  std::vector<double> w(lower.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = upper[i] - lower[i];
  return w;
}

UncertaintyBands decompose_uncertainty(const PathEnsemble& ensemble, double level) {
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::configuration, "coverage level must lie in (0, 1)");
  if (ensemble.total.rows() == 0) throw Error(ErrorCode::configuration, "empty path ensemble");
  UncertaintyBands bands;
  bands.years = ensemble.years;
  bands.level = level;
  auto band = [&](const MatrixXd& paths) {
    Band b;
    std::vector<double> col(static_cast<std::size_t>(paths.rows()));
    for (Index j = 0; j < paths.cols(); ++j) {
      for (Index i = 0; i < paths.rows(); ++i) col[static_cast<std::size_t>(i)] = paths(i, j);
      b.lower.push_back(type7(col, (1.0 - level) / 2.0));
      b.upper.push_back(type7(col, (1.0 + level) / 2.0));
    }
    return b;
  };
  bands.epsilon_only = band(ensemble.epsilon_only);
  bands.beta_only = band(ensemble.beta_only);
  bands.total = band(ensemble.total);
  return bands;
}

std::vector<double> moving_average(std::span<const double> x, int window) {
  if (window < 1 || window % 2 == 0) throw Error(ErrorCode::configuration, "smoothing window must be odd");
  if (static_cast<std::size_t>(window) > x.size())
    throw Error(ErrorCode::configuration, "smoothing window longer than the series");
  const int half = window / 2;
  const int n = static_cast<int>(x.size());
  std::vector<double> out(x.size());
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + half);
    double s = 0.0;
    for (int j = lo; j <= hi; ++j) s += x[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = s / (hi - lo + 1);
  }
  return out;
}

PathEnsemble smooth_paths(const PathEnsemble& ensemble, int window) {
  PathEnsemble out = ensemble;
  out.smoothing_window = window;
  auto smooth = [&](MatrixXd& paths) {
    std::vector<double> row(static_cast<std::size_t>(paths.cols()));
    for (Index i = 0; i < paths.rows(); ++i) {
      for (Index j = 0; j < paths.cols(); ++j) row[static_cast<std::size_t>(j)] = paths(i, j);
      const auto s = moving_average(row, window);
      for (Index j = 0; j < paths.cols(); ++j) paths(i, j) = s[static_cast<std::size_t>(j)];
    }
  };
  smooth(out.total);
  smooth(out.beta_only);
  smooth(out.epsilon_only);
  return out;
}

std::string format_bands_csv(const UncertaintyBands& bands) {
  std::ostringstream out;
  out << "year,component,lower,upper\n";
  const std::pair<const char*, const Band*> parts[] = {
      {"epsilon_only", &bands.epsilon_only}, {"beta_only", &bands.beta_only}, {"total", &bands.total}};
  for (int j = 0; j < bands.years.length(); ++j)
    for (const auto& [name, b] : parts)
      out << bands.years.first + j << ',' << name << ',' << format_double(b->lower[static_cast<std::size_t>(j)])
          << ',' << format_double(b->upper[static_cast<std::size_t>(j)]) << '\n';
  return out.str();
}

std::string format_ensemble_csv(const PathEnsemble& e) {
  std::ostringstream out;
  out << "draw,year,component,value\n";
  const std::pair<const char*, const MatrixXd*> parts[] = {
      {"total", &e.total}, {"beta_only", &e.beta_only}, {"epsilon_only", &e.epsilon_only}};
  for (const auto& [name, m] : parts)
    for (Index i = 0; i < m->rows(); ++i)
      for (Index j = 0; j < m->cols(); ++j)
        out << i << ',' << e.years.first + j << ',' << name << ',' << format_double((*m)(i, j)) << '\n';
  return out.str();
}

}  // namespace paleo::bayes
