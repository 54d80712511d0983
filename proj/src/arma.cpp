#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

#include "paleo/solvers.hpp"

namespace paleo::solvers {

namespace {

constexpr double kPacfBound = 0.99;

std::vector<double> pacf_to_phi(std::span<const double> r) {
  std::vector<double> phi;
  for (std::size_t k = 0; k < r.size(); ++k) {
    std::vector<double> next(k + 1);
    for (std::size_t i = 0; i < k; ++i) next[i] = phi[i] - r[k] * phi[k - 1 - i];
    next[k] = r[k];
    phi = std::move(next);
  }
  return phi;
}

// Reverse Durbin-Levinson; false when some reflection coefficient is >= 1.
bool phi_to_pacf(std::span<const double> phi, std::vector<double>& r) {
  std::vector<double> cur(phi.begin(), phi.end());
  r.assign(phi.size(), 0.0);
  for (std::size_t k = cur.size(); k-- > 0;) {
    const double a = cur[k];
    if (!(std::abs(a) < 1.0)) return false;
    r[k] = a;
    std::vector<double> prev(k);
    for (std::size_t i = 0; i < k; ++i) prev[i] = (cur[i] + a * cur[k - 1 - i]) / (1.0 - a * a);
    cur = std::move(prev);
  }
  return true;
}

std::vector<double> negate(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x = -x;
  return out;
}

struct StateSpace {
  MatrixXd t;
  VectorXd r;
  MatrixXd p0;  // unit innovation variance
};

StateSpace state_space(std::span<const double> phi, std::span<const double> theta) {
  const auto m = static_cast<Index>(std::max(phi.size(), theta.size() + 1));
  StateSpace ss;
  ss.t = MatrixXd::Zero(m, m);
  for (std::size_t i = 0; i < phi.size(); ++i) ss.t(static_cast<Index>(i), 0) = phi[i];
  for (Index i = 0; i + 1 < m; ++i) ss.t(i, i + 1) = 1.0;
  ss.r = VectorXd::Zero(m);
  ss.r(0) = 1.0;
  for (std::size_t j = 0; j < theta.size(); ++j) ss.r(static_cast<Index>(j) + 1) = theta[j];
  MatrixXd lhs = MatrixXd::Identity(m * m, m * m);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < m; ++j)
      for (Index k = 0; k < m; ++k)
        for (Index l = 0; l < m; ++l) lhs(i + j * m, k + l * m) -= ss.t(i, k) * ss.t(j, l);
  const MatrixXd rr = ss.r * ss.r.transpose();
  const VectorXd vec = lhs.partialPivLu().solve(Eigen::Map<const VectorXd>(rr.data(), m * m));
  ss.p0 = Eigen::Map<const MatrixXd>(vec.data(), m, m);
  ss.p0 = 0.5 * (ss.p0 + ss.p0.transpose());
  return ss;
}

struct FilterOutput {
  double sum_sq = 0.0;    // sum v^2 / F
  double sum_log_f = 0.0;
  VectorXd scaled;        // v / sqrt(F)
};

FilterOutput kalman(const VectorXd& w, std::span<const double> phi, std::span<const double> theta) {
  const StateSpace ss = state_space(phi, theta);
  const Index m = ss.t.rows();
  VectorXd a = VectorXd::Zero(m);
  MatrixXd p = ss.p0;
  const MatrixXd rr = ss.r * ss.r.transpose();
  FilterOutput out;
  out.scaled.resize(w.size());
  for (Index t = 0; t < w.size(); ++t) {
    if (std::isnan(w(t))) {
      out.scaled(t) = 0.0;
      a = ss.t * a;
      p = ss.t * p * ss.t.transpose() + rr;
      continue;
    }
    const double f = p(0, 0);
    const double v = w(t) - a(0);
    out.sum_sq += v * v / f;
    out.sum_log_f += std::log(f);
    out.scaled(t) = v / std::sqrt(f);
    const VectorXd pz = p.col(0);
    a += pz * (v / f);
    p -= pz * pz.transpose() / f;
    a = ss.t * a;
    p = ss.t * p * ss.t.transpose() + rr;
  }
  return out;
}

template <typename F>
struct LmFunctor {
  using Scalar = double;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
  using InputType = VectorXd;
  using ValueType = VectorXd;
  using JacobianType = MatrixXd;

  F fn;
  int n_inputs;
  int n_values;
  int inputs() const { return n_inputs; }
  int values() const { return n_values; }
  int operator()(const VectorXd& x, VectorXd& fvec) const {
    fn(x, fvec);
    for (Index i = 0; i < fvec.size(); ++i)
      if (!std::isfinite(fvec(i))) fvec(i) = 1e100;
    return 0;
  }
};

template <typename F>
VectorXd minimize_lm(F fn, VectorXd start, int values) {
  LmFunctor<F> functor{std::move(fn), static_cast<int>(start.size()), values};
  Eigen::NumericalDiff<LmFunctor<F>> diff(functor);
  Eigen::LevenbergMarquardt<Eigen::NumericalDiff<LmFunctor<F>>> lm(diff);
  lm.parameters.maxfev = 4000;
  lm.parameters.xtol = 1e-10;
  lm.parameters.ftol = 1e-12;
  lm.minimize(start);
  return start;
}

// Pairwise-available products, scaled by the observed count.
std::vector<double> sample_autocov(const VectorXd& w, int max_lag) {
  std::vector<double> c(static_cast<std::size_t>(max_lag) + 1, 0.0);
  const Index n = w.size();
  const double count = static_cast<double>((w.array() == w.array()).count());
  for (int h = 0; h <= max_lag && h < n; ++h) {
    double acc = 0.0;
    for (Index t = h; t < n; ++t)
      if (!std::isnan(w(t)) && !std::isnan(w(t - h))) acc += w(t) * w(t - h);
    c[static_cast<std::size_t>(h)] = acc / count;
  }
  return c;
}

std::vector<double> yule_walker(const VectorXd& w, int p) {
  if (p == 0) return {};
  const auto c = sample_autocov(w, p);
  std::vector<double> r(static_cast<std::size_t>(p), 0.0);
  if (!(c[0] > 0.0)) return r;
  // Durbin-Levinson recursion on the sample autocorrelations
  std::vector<double> phi;
  double v = c[0];
  for (int k = 1; k <= p; ++k) {
    double acc = c[static_cast<std::size_t>(k)];
    for (int i = 1; i < k; ++i)
      acc -= phi[static_cast<std::size_t>(i - 1)] * c[static_cast<std::size_t>(k - i)];
    const double a = std::clamp(acc / v, -kPacfBound, kPacfBound);
    r[static_cast<std::size_t>(k - 1)] = a;
    std::vector<double> next(static_cast<std::size_t>(k));
    for (int i = 1; i < k; ++i)
      next[static_cast<std::size_t>(i - 1)] =
          phi[static_cast<std::size_t>(i - 1)] - a * phi[static_cast<std::size_t>(k - i - 1)];
    next[static_cast<std::size_t>(k - 1)] = a;
    phi = std::move(next);
    v *= 1.0 - a * a;
  }
  return r;
}

VectorXd css_residuals(const VectorXd& w, std::span<const double> phi, std::span<const double> theta) {
  const Index n = w.size();
  const auto p = static_cast<Index>(phi.size());
  VectorXd e = VectorXd::Zero(n);
  for (Index t = p; t < n; ++t) {
    bool gap = std::isnan(w(t));
    for (Index i = 0; i < p && !gap; ++i) gap = std::isnan(w(t - 1 - i));
    if (gap) continue;  // residual restarts from zero after a gap
    double v = w(t);
    for (Index i = 0; i < p; ++i) v -= phi[static_cast<std::size_t>(i)] * w(t - 1 - i);
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const Index lag = t - 1 - static_cast<Index>(j);
      if (lag >= p) v -= theta[j] * e(lag);
    }
    e(t) = v;
  }
  return e.tail(n - p);
}

}  // namespace

bool ar_stationary(std::span<const double> phi) {
  std::vector<double> r;
  return phi_to_pacf(phi, r);
}

std::vector<double> ArmaModel::autocovariances(int max_lag) const {
  std::vector<double> g(static_cast<std::size_t>(std::max(max_lag, 0)) + 1, 0.0);
  const double s2 = innovation_sd * innovation_sd;
  if (p == 0 && q == 0) {
    g[0] = s2;
    return g;
  }
  const StateSpace ss = state_space(ar, ma);
  MatrixXd cur = ss.p0;
  for (std::size_t h = 0; h < g.size(); ++h) {
    g[h] = s2 * cur(0, 0);
    cur = ss.t * cur;
  }
  return g;
}

bool ArmaModel::stationary() const { return ar_stationary(ar); }

static ArmaModel fit_arma_gappy(const VectorXd& raw, int p, int q) {
  if (p < 0 || q < 0 || p > 12 || q > 12)
    throw Error(ErrorCode::configuration, "ARMA orders must lie in [0, 12]");
  const Index n = (raw.array() == raw.array()).count();
  if (n < std::max<Index>(10, 2 * (p + q + 1)))
    throw Error(ErrorCode::insufficient_data, "series too short for ARMA(" + std::to_string(p) + "," +
                                                  std::to_string(q) + ")");
  for (Index t = 0; t < raw.size(); ++t)
    if (std::isinf(raw(t))) throw Error(ErrorCode::numeric, "non-finite value in ARMA input");

  ArmaModel m;
  m.p = p;
  m.q = q;
  double total = 0.0;
  for (Index t = 0; t < raw.size(); ++t)
    if (!std::isnan(raw(t))) total += raw(t);
  m.intercept = total / static_cast<double>(n);
  const VectorXd w = raw.array() - m.intercept;  // NaN stays NaN
  double ss = 0.0;
  for (Index t = 0; t < w.size(); ++t)
    if (!std::isnan(w(t))) ss += w(t) * w(t);
  const double dn = static_cast<double>(n);
  if (!(ss > 0.0)) throw Error(ErrorCode::degenerate, "constant ARMA input");

  if (p == 0 && q == 0) {
    m.innovation_sd = std::sqrt(ss / (dn - 1.0));
    const double s2 = ss / dn;
    m.log_likelihood = -0.5 * dn * (std::log(2.0 * std::numbers::pi * s2) + 1.0);
    return m;
  }

  // Stage 1: conditional sum of squares on the raw coefficients.
  std::vector<double> pacf_ar = yule_walker(w, p);
  VectorXd start(p + q);
  {
    const auto phi0 = pacf_to_phi(pacf_ar);
    for (int i = 0; i < p; ++i) start(i) = phi0[static_cast<std::size_t>(i)];
    for (int j = 0; j < q; ++j) start(p + j) = 0.0;
  }
  auto css = [&](const VectorXd& x, VectorXd& f) {
    std::vector<double> phi(x.data(), x.data() + p);
    std::vector<double> theta(x.data() + p, x.data() + p + q);
    f = css_residuals(w, phi, theta);
  };
  const VectorXd css_fit = minimize_lm(css, start, static_cast<int>(raw.size() - p));

  std::vector<double> phi(css_fit.data(), css_fit.data() + p);
  std::vector<double> theta(css_fit.data() + p, css_fit.data() + p + q);
  std::vector<double> r_ar, r_ma;
  if (!phi_to_pacf(phi, r_ar)) {
    m.projected = true;
    r_ar = pacf_ar;
  }
  if (!phi_to_pacf(negate(theta), r_ma)) {
    m.projected = true;
    r_ma.assign(static_cast<std::size_t>(q), 0.0);
  }
  for (double& v : r_ar)
    if (std::abs(v) > kPacfBound) {
      v = std::copysign(kPacfBound, v);
      m.projected = true;
    }
  for (double& v : r_ma)
    if (std::abs(v) > kPacfBound) {
      v = std::copysign(kPacfBound, v);
      m.projected = true;
    }

  // Stage 2: exact Gaussian likelihood over atanh-transformed partial
  // autocorrelations, with the innovation variance concentrated out.
  auto unpack = [&](const VectorXd& u, std::vector<double>& ar, std::vector<double>& ma) {
    std::vector<double> ra(static_cast<std::size_t>(p)), rm(static_cast<std::size_t>(q));
    for (int i = 0; i < p; ++i) ra[static_cast<std::size_t>(i)] = std::clamp(std::tanh(u(i)), -0.9999, 0.9999);
    for (int j = 0; j < q; ++j)
      rm[static_cast<std::size_t>(j)] = std::clamp(std::tanh(u(p + j)), -0.9999, 0.9999);
    ar = pacf_to_phi(ra);
    ma = negate(pacf_to_phi(rm));
  };
  auto exact = [&](const VectorXd& u, VectorXd& f) {
    std::vector<double> ar, ma;
    unpack(u, ar, ma);
    const FilterOutput out = kalman(w, ar, ma);
    f = out.scaled * std::exp(out.sum_log_f / (2.0 * dn));
  };
  VectorXd u0(p + q);
  for (int i = 0; i < p; ++i) u0(i) = std::atanh(r_ar[static_cast<std::size_t>(i)]);
  for (int j = 0; j < q; ++j) u0(p + j) = std::atanh(r_ma[static_cast<std::size_t>(j)]);
  const VectorXd u1 = minimize_lm(exact, u0, static_cast<int>(raw.size()));

  auto objective = [&](const VectorXd& u) {
    VectorXd f;
    exact(u, f);
    return f.allFinite() ? f.squaredNorm() : std::numeric_limits<double>::infinity();
  };
  const VectorXd& best = objective(u1) <= objective(u0) ? u1 : u0;
  unpack(best, m.ar, m.ma);
  const FilterOutput out = kalman(w, m.ar, m.ma);
  const double s2 = out.sum_sq / dn;
  m.log_likelihood = -0.5 * dn * (std::log(2.0 * std::numbers::pi * s2) + 1.0) - 0.5 * out.sum_log_f;
  m.innovation_sd = std::sqrt(out.sum_sq / (dn - static_cast<double>(p + q + 1)));
  return m;
}

ArmaModel fit_arma(std::span<const double> y, int p, int q) {
  return fit_arma_gappy(Eigen::Map<const VectorXd>(y.data(), static_cast<Index>(y.size())), p, q);
}

ArmaModel fit_arma(const data::AnnualSeries& series, const YearRange& window, int p, int q) {
  if (!series.years().contains(window))
    throw Error(ErrorCode::coverage, "ARMA window " + to_string(window) + " outside series " +
                                         to_string(series.years()));
  // trim leading and trailing gaps so the filter starts on data
  int first = window.first, last = window.last;
  while (first <= last && !series.available(first)) ++first;
  while (last >= first && !series.available(last)) --last;
  if (first > last) throw Error(ErrorCode::insufficient_data, "no observed values in ARMA window");
  VectorXd raw(last - first + 1);
  for (int y = first; y <= last; ++y)
    raw(y - first) = series.available(y) ? series.at(y) : std::numeric_limits<double>::quiet_NaN();
  ArmaModel m = fit_arma_gappy(raw, p, q);
  m.calibration = window;
  return m;
}

data::AnnualSeries predict_arma(const ArmaModel& model, const data::AnnualSeries& history,
                                const YearRange& years) {
  if (years.empty()) throw Error(ErrorCode::configuration, "empty prediction range");
  std::vector<int> observed;
  for (int y = history.start_year(); y <= history.end_year(); ++y)
    if (history.available(y)) observed.push_back(y);

  std::vector<double> out(static_cast<std::size_t>(years.length()), model.intercept);
  if (!observed.empty()) {
    const int lo = std::min(years.first, observed.front());
    const int hi = std::max(years.last, observed.back());
    const auto gamma = model.autocovariances(hi - lo);
    const auto m = static_cast<Index>(observed.size());
    MatrixXd cov(m, m);
    VectorXd resid(m);
    for (Index i = 0; i < m; ++i) {
      resid(i) = history.at(observed[static_cast<std::size_t>(i)]) - model.intercept;
      for (Index j = 0; j < m; ++j)
        cov(i, j) = gamma[static_cast<std::size_t>(
            std::abs(observed[static_cast<std::size_t>(i)] - observed[static_cast<std::size_t>(j)]))];
    }
    const VectorXd c = cov.ldlt().solve(resid);
    for (int y = years.first; y <= years.last; ++y) {
      double v = model.intercept;
      for (Index j = 0; j < m; ++j)
        v += gamma[static_cast<std::size_t>(std::abs(y - observed[static_cast<std::size_t>(j)]))] * c(j);
      out[static_cast<std::size_t>(y - years.first)] = v;
    }
  }
  return data::AnnualSeries(years.first, std::move(out));
}

}  // namespace paleo::solvers
