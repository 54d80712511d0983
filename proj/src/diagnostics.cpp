#include "paleo/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "paleo/parallel.hpp"

namespace paleo::diagnostics {

namespace {

double type7(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw Error(ErrorCode::degenerate, "correlation of a constant series");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double sample_sd(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

std::vector<double> quantile_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 99; ++i) g.push_back(i / 100.0);
  return g;
}

}  // namespace

std::string_view to_string(StatName name) {
  switch (name) {
    case StatName::lag1_autocorr: return "lag1_autocorr";
    case StatName::corr_with_target: return "corr_with_target";
    case StatName::sd_first_diff_standardized: return "sd_first_diff_standardized";
  }
  return "lag1_autocorr";
}

StatName parse_stat_name(std::string_view text) {
  for (auto s : {StatName::lag1_autocorr, StatName::corr_with_target, StatName::sd_first_diff_standardized})
    if (to_string(s) == text) return s;
  throw Error(ErrorCode::configuration, "unknown statistic '" + std::string(text) + "'");
}

double compute_stat(std::span<const double> x, StatName name, std::span<const double> target) {
  if (x.size() < 10) throw Error(ErrorCode::insufficient_data, "statistics need at least 10 values");
  for (double v : x)
    if (!std::isfinite(v)) throw Error(ErrorCode::numeric, "non-finite value in statistic input");
  switch (name) {
    case StatName::lag1_autocorr: return pearson(x.first(x.size() - 1), x.subspan(1));
    case StatName::corr_with_target:
      if (target.size() != x.size()) throw Error(ErrorCode::configuration, "target length differs from series");
      return pearson(x, target);
    case StatName::sd_first_diff_standardized: {
      const double sd = sample_sd(x);
      if (!(sd > 0.0)) throw Error(ErrorCode::degenerate, "constant series");
      std::vector<double> d;
      for (std::size_t i = 1; i < x.size(); ++i) d.push_back((x[i] - x[i - 1]) / sd);
      return sample_sd(d);
    }
  }
  return 0.0;
}

SeriesStat series_stat(const data::AnnualSeries& series, StatName name, const YearRange& window,
                       const data::AnnualSeries* target, std::string series_id) {
  if (!series.years().contains(window))
    throw Error(ErrorCode::coverage, "window " + to_string(window) + " outside series " + to_string(series.years()));
  SeriesStat out{name, 0.0, std::move(series_id), window};
  std::vector<double> a, b;
  switch (name) {
    case StatName::lag1_autocorr:
      for (int y = window.first; y < window.last; ++y)
        if (series.available(y) && series.available(y + 1)) {
          a.push_back(series.at(y));
          b.push_back(series.at(y + 1));
        }
      if (a.size() < 10) throw Error(ErrorCode::insufficient_data, "fewer than 10 lagged pairs in window");
      out.value = pearson(a, b);
      return out;
    case StatName::corr_with_target:
      if (target == nullptr) throw Error(ErrorCode::configuration, "corr_with_target needs a target");
      for (int y = window.first; y <= window.last; ++y)
        if (series.available(y) && target->covers(y) && target->available(y)) {
          a.push_back(series.at(y));
          b.push_back(target->at(y));
        }
      if (a.size() < 10) throw Error(ErrorCode::insufficient_data, "fewer than 10 paired values in window");
      out.value = pearson(a, b);
      return out;
    case StatName::sd_first_diff_standardized: {
      for (int y = window.first; y <= window.last; ++y)
        if (series.available(y)) a.push_back(series.at(y));
      if (a.size() < 10) throw Error(ErrorCode::insufficient_data, "fewer than 10 values in window");
      const double sd = sample_sd(a);
      if (!(sd > 0.0)) throw Error(ErrorCode::degenerate, "constant series");
      std::vector<double> d;
      for (int y = window.first; y < window.last; ++y)
        if (series.available(y) && series.available(y + 1)) d.push_back((series.at(y + 1) - series.at(y)) / sd);
      if (d.size() < 2) throw Error(ErrorCode::insufficient_data, "no consecutive pairs in window");
      out.value = sample_sd(d);
      return out;
    }
  }
  return out;
}

AcfPacf acf_pacf(std::span<const double> x, int max_lag) {
  if (max_lag < 1) throw Error(ErrorCode::configuration, "max_lag must be >= 1");
  if (x.size() <= static_cast<std::size_t>(max_lag) + 10)
    throw Error(ErrorCode::insufficient_data, "series too short for the requested lags");
  const auto n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  std::vector<double> c(static_cast<std::size_t>(max_lag) + 1, 0.0);
  for (int h = 0; h <= max_lag; ++h) {
    double s = 0.0;
    for (std::size_t t = static_cast<std::size_t>(h); t < n; ++t) s += (x[t] - mean) * (x[t - h] - mean);
    c[static_cast<std::size_t>(h)] = s / static_cast<double>(n);
  }
  if (!(c[0] > 0.0)) throw Error(ErrorCode::degenerate, "constant series");
  AcfPacf out;
  for (int h = 1; h <= max_lag; ++h) out.acf.push_back(c[static_cast<std::size_t>(h)] / c[0]);

  // Durbin-Levinson
  std::vector<double> phi;
  double v = 1.0;
  for (int k = 1; k <= max_lag; ++k) {
    double acc = out.acf[static_cast<std::size_t>(k - 1)];
    for (int i = 1; i < k; ++i) acc -= phi[static_cast<std::size_t>(i - 1)] * out.acf[static_cast<std::size_t>(k - i - 1)];
    const double a = acc / v;
    std::vector<double> next(static_cast<std::size_t>(k));
    for (int i = 1; i < k; ++i)
      next[static_cast<std::size_t>(i - 1)] = phi[static_cast<std::size_t>(i - 1)] - a * phi[static_cast<std::size_t>(k - i - 1)];
    next[static_cast<std::size_t>(k - 1)] = a;
    phi = std::move(next);
    v *= 1.0 - a * a;
    out.pacf.push_back(a);
  }
  return out;
}

std::vector<std::size_t> stationary_bootstrap_indices(std::size_t n, double mean_block, Engine& engine) {
  std::vector<std::size_t> idx(n);
  if (mean_block >= static_cast<double>(n)) {
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  std::uniform_int_distribution<std::size_t> start(0, n - 1);
  std::bernoulli_distribution restart(1.0 / mean_block);
  std::size_t cur = start(engine);
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) cur = restart(engine) ? start(engine) : (cur + 1) % n;
    idx[i] = cur;
  }
  return idx;
}

std::vector<double> bootstrap_null(std::span<const double> x, StatName name, const BootstrapOptions& options,
                                   std::span<const double> target) {
  if (options.block_length < 1) throw Error(ErrorCode::configuration, "block_length must be >= 1");
  if (options.n_boot < 100) throw Error(ErrorCode::configuration, "n_boot must be >= 100");
  if (!target.empty() && target.size() != x.size())
    throw Error(ErrorCode::configuration, "target length differs from series");
  std::vector<double> out(static_cast<std::size_t>(options.n_boot));
  parallel_for(out.size(), options.threads, [&](std::size_t b) {
    Engine engine = make_engine(options.seed.child(b));
    const auto idx = stationary_bootstrap_indices(x.size(), options.block_length, engine);
    std::vector<double> xs(x.size()), ts;
    for (std::size_t i = 0; i < idx.size(); ++i) xs[i] = x[idx[i]];
    if (!target.empty()) {
      ts.resize(x.size());
      for (std::size_t i = 0; i < idx.size(); ++i) ts[i] = target[idx[i]];
    }
    out[b] = compute_stat(xs, name, ts);
  });
  return out;
}

std::vector<std::vector<double>> bootstrap_null_set(const std::vector<std::vector<double>>& series, StatName name,
                                                    const BootstrapOptions& options) {
  std::vector<std::vector<double>> out;
  for (std::size_t s = 0; s < series.size(); ++s) {
    BootstrapOptions o = options;
    o.seed = options.seed.child(s);
    out.push_back(bootstrap_null(series[s], name, o));
  }
  return out;
}

double ks_distance(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::insufficient_data, "KS distance of an empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  const auto na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

QqReport qq_compare(std::span<const double> reference, std::span<const double> test,
                    const std::vector<std::vector<double>>& band) {
  if (reference.empty() || test.empty()) throw Error(ErrorCode::insufficient_data, "QQ needs two nonempty samples");
  QqReport r;
  r.probs = quantile_grid();
  const std::vector<double> ref(reference.begin(), reference.end());
  const std::vector<double> tst(test.begin(), test.end());
  for (double p : r.probs) {
    r.reference.push_back(type7(ref, p));
    r.test.push_back(type7(tst, p));
  }
  r.ks = ks_distance(ref, tst);
  if (!band.empty()) {
    std::vector<double> ks;
    for (const auto& s : band) ks.push_back(ks_distance(s, ref));
    r.ks_band = type7(ks, 0.95);
    for (double p : r.probs) {
      std::vector<double> q;
      for (const auto& s : band) q.push_back(type7(s, p));
      r.band_lo.push_back(type7(q, 0.025));
      r.band_hi.push_back(type7(q, 0.975));
    }
  }
  return r;
}

std::string format_qq_csv(const QqReport& r) {
  std::ostringstream out;
  out << "prob,ref_quantile,test_quantile,band_lo,band_hi\n";
  for (std::size_t i = 0; i < r.probs.size(); ++i) {
    out << format_double(r.probs[i]) << ',' << format_double(r.reference[i]) << ',' << format_double(r.test[i]) << ',';
    if (!r.band_lo.empty()) out << format_double(r.band_lo[i]) << ',' << format_double(r.band_hi[i]);
    else out << ',';
    out << '\n';
  }
  return out.str();
}

}  // namespace paleo::diagnostics
