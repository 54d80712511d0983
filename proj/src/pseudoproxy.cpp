#include "paleo/pseudoproxy.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace paleo::pseudoproxy {

using data::AnnualSeries;
using data::ProxyMatrix;
using data::SeriesKind;
using data::SeriesMeta;

void Ar1Params::validate() const {
  if (!(std::abs(phi) < 1.0))
    throw Error(ErrorCode::parameter, "AR1 coefficient " + format_double(phi) + " is not stationary");
  if (!(innovation_sd > 0.0) || !std::isfinite(innovation_sd))
    throw Error(ErrorCode::parameter, "AR1 innovation sd must be positive");
  if (!std::isfinite(mean)) throw Error(ErrorCode::parameter, "AR1 mean must be finite");
}

double Ar1Params::marginal_sd() const { return innovation_sd / std::sqrt(1.0 - phi * phi); }

std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::white: return "white";
    case NoiseKind::ar1: return "ar1";
    case NoiseKind::ar1_empirical: return "ar1_empirical";
    case NoiseKind::brownian: return "brownian";
  }
  return "white";
}

NoiseKind parse_noise_kind(std::string_view text) {
  for (auto k : {NoiseKind::white, NoiseKind::ar1, NoiseKind::ar1_empirical, NoiseKind::brownian})
    if (text == to_string(k)) return k;
  throw Error(ErrorCode::configuration, "unknown noise kind '" + std::string(text) + "'");
}

std::string NoiseSpec::label() const {
  switch (kind) {
    case NoiseKind::white: return "WhiteNoise";
    case NoiseKind::ar1: {
      std::ostringstream ss;
      ss << "AR1(" << ar1.phi << ")";
      return ss.str();
    }
    case NoiseKind::ar1_empirical: return "AR1(Empirical)";
    case NoiseKind::brownian: return "Brownian";
  }
  return "noise";
}

std::vector<double> simulate_ar1(const Ar1Params& params, std::size_t n, Engine& engine) {
  params.validate();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  if (n == 0) return out;
  double dev = params.marginal_sd() * normal(engine);
  out[0] = params.mean + dev;
  for (std::size_t t = 1; t < n; ++t) {
    dev = params.phi * dev + params.innovation_sd * normal(engine);
    out[t] = params.mean + dev;
  }
  return out;
}

namespace {

void standardize_in_place(std::vector<double>& v, std::size_t from, std::size_t to) {
  const auto n = static_cast<double>(to - from);
  double mean = 0.0;
  for (std::size_t i = from; i < to; ++i) mean += v[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = from; i < to; ++i) ss += (v[i] - mean) * (v[i] - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  for (double& x : v) x = (x - mean) / sd;
}

double sample_variance(const double* v, std::size_t n) {
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += v[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (v[i] - mean) * (v[i] - mean);
  return ss / static_cast<double>(n - 1);
}

SeriesMeta pseudo_meta(std::string name, int first_year, std::string generator) {
  SeriesMeta m;
  m.name = std::move(name);
  m.kind = SeriesKind::pseudoproxy;
  m.first_year = first_year;
  m.generator = std::move(generator);
  return m;
}

}  // namespace

ProxyMatrix gen_noise_matrix(const NoiseSpec& spec, int n_years, int n_series, const Seed& seed,
                             int start_year) {
  if (n_years < 2) throw Error(ErrorCode::configuration, "noise matrix needs at least two years");
  if (n_series < 1) throw Error(ErrorCode::configuration, "noise matrix needs at least one series");
  if (spec.kind == NoiseKind::ar1) spec.ar1.validate();
  if (spec.kind == NoiseKind::ar1_empirical) {
    if (static_cast<int>(spec.empirical.size()) != n_series)
      throw Error(ErrorCode::configuration, "AR1(Empirical) needs one parameter set per series");
    for (const auto& p : spec.empirical) p.validate();
  }

  std::size_t win_from = 0;
  std::size_t win_to = static_cast<std::size_t>(n_years);
  if (spec.standardize_window) {
    const YearRange all{start_year, start_year + n_years - 1};
    if (!all.contains(*spec.standardize_window) || spec.standardize_window->length() < 2)
      throw Error(ErrorCode::configuration, "standardization window outside generated years");
    win_from = static_cast<std::size_t>(spec.standardize_window->first - start_year);
    win_to = static_cast<std::size_t>(spec.standardize_window->last - start_year + 1);
  }

  Eigen::MatrixXd values(n_years, n_series);
  std::vector<SeriesMeta> meta;
  meta.reserve(static_cast<std::size_t>(n_series));
  const std::string label = spec.label();
  for (int j = 0; j < n_series; ++j) {
    Engine engine = make_engine(seed.child(static_cast<std::uint64_t>(j)));
    std::vector<double> col;
    switch (spec.kind) {
      case NoiseKind::white:
        col = simulate_ar1({0.0, 1.0, 0.0}, static_cast<std::size_t>(n_years), engine);
        break;
      case NoiseKind::ar1:
        col = simulate_ar1(spec.ar1, static_cast<std::size_t>(n_years), engine);
        break;
      case NoiseKind::ar1_empirical:
        col = simulate_ar1(spec.empirical[static_cast<std::size_t>(j)],
                           static_cast<std::size_t>(n_years), engine);
        break;
      case NoiseKind::brownian: {
        std::normal_distribution<double> normal(0.0, 1.0);
        col.resize(static_cast<std::size_t>(n_years));
        double level = 0.0;
        for (auto& x : col) x = (level += normal(engine));
        standardize_in_place(col, win_from, win_to);
        break;
      }
    }
    for (int i = 0; i < n_years; ++i) values(i, j) = col[static_cast<std::size_t>(i)];
    std::string gen = label;
    if (spec.kind == NoiseKind::ar1_empirical) {
      const auto& p = spec.empirical[static_cast<std::size_t>(j)];
      gen += " phi=" + format_double(p.phi) + " sd=" + format_double(p.innovation_sd);
    }
    meta.push_back(pseudo_meta("pp" + std::to_string(j + 1), start_year, gen));
  }
  return ProxyMatrix(start_year, std::move(meta), std::move(values));
}

Ar1Params fit_ar1(const AnnualSeries& series) {
  // Longest run of consecutive available values.
  std::size_t best_from = 0, best_len = 0, run_from = 0, run_len = 0;
  auto mask = series.missing_mask();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      run_len = 0;
      continue;
    }
    if (run_len == 0) run_from = i;
    if (++run_len > best_len) {
      best_len = run_len;
      best_from = run_from;
    }
  }
  if (best_len < 10)
    throw Error(ErrorCode::insufficient_data, "fit_ar1 needs 10 consecutive values, found " +
                                                  std::to_string(best_len));
  const double* x = series.values().data() + best_from;
  const double mean = std::accumulate(x, x + best_len, 0.0) / static_cast<double>(best_len);
  double c0 = 0.0, c1 = 0.0;
  for (std::size_t t = 0; t < best_len; ++t) {
    c0 += (x[t] - mean) * (x[t] - mean);
    if (t + 1 < best_len) c1 += (x[t] - mean) * (x[t + 1] - mean);
  }
  if (!(c0 > 0.0)) throw Error(ErrorCode::degenerate, "fit_ar1 on a constant series");
  Ar1Params p;
  p.phi = c1 / c0;
  p.mean = mean;
  const double sd = std::sqrt(c0 / static_cast<double>(best_len - 1));
  p.innovation_sd = sd * std::sqrt(1.0 - p.phi * p.phi);
  return p;
}

std::vector<Ar1Params> fit_ar1_columns(const ProxyMatrix& matrix, std::optional<YearRange> window) {
  std::vector<Ar1Params> out;
  out.reserve(static_cast<std::size_t>(matrix.n_series()));
  for (Eigen::Index j = 0; j < matrix.n_series(); ++j) {
    auto col = matrix.column(j);
    out.push_back(fit_ar1(window ? col.slice(*window) : col));
  }
  return out;
}

ProxyMatrix with_locations(const ProxyMatrix& generated, const ProxyMatrix& source) {
  if (source.n_series() == 0) return generated;
  auto meta = generated.columns();
  for (std::size_t j = 0; j < meta.size(); ++j) {
    const auto& s = source.columns()[j % source.columns().size()];
    meta[j].latitude = s.latitude;
    meta[j].longitude = s.longitude;
  }
  return generated.with_columns(std::move(meta));
}

ProxyMatrix gen_tingley(const AnnualSeries& target, const TingleyConfig& config, const Seed& seed) {
  if (config.n_series < 1) throw Error(ErrorCode::parameter, "n_series must be >= 1");
  if (!(config.sigma_omega >= 0.0) || !(config.sigma_beta >= 0.0))
    throw Error(ErrorCode::parameter, "sigma_omega and sigma_beta must be nonnegative");
  if (target.count_available() != target.size())
    throw Error(ErrorCode::coverage, "Tingley target must have no missing values");

  const auto n = static_cast<Eigen::Index>(target.size());
  Eigen::MatrixXd values(n, config.n_series);
  std::vector<SeriesMeta> meta;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int j = 0; j < config.n_series; ++j) {
    Engine engine = make_engine(seed.child(static_cast<std::uint64_t>(j)));
    const double beta = config.slope_mean + config.sigma_beta * normal(engine);
    for (Eigen::Index t = 0; t < n; ++t)
      values(t, j) = beta * target.values()[static_cast<std::size_t>(t)] +
                     config.sigma_omega * normal(engine);
    meta.push_back(pseudo_meta("tp" + std::to_string(j + 1), target.start_year(),
                               "tingley beta=" + format_double(beta) +
                                   " sigma_omega=" + format_double(config.sigma_omega)));
  }
  return ProxyMatrix(target.start_year(), std::move(meta), std::move(values));
}

std::string_view to_string(NoiseColor color) { return color == NoiseColor::white ? "white" : "red"; }

std::string_view to_string(CorruptionVariant variant) {
  switch (variant) {
    case CorruptionVariant::snr_mix: return "snr_mix";
    case CorruptionVariant::column_append: return "column_append";
    case CorruptionVariant::random_slope: return "random_slope";
  }
  return "snr_mix";
}

std::string CorruptionSpec::label() const {
  std::ostringstream ss;
  ss << to_string(variant) << " " << static_cast<int>(std::lround(noise_fraction * 100.0)) << "% "
     << to_string(color);
  if (color == NoiseColor::red) ss << "(phi=" << red_phi << ")";
  if (variant == CorruptionVariant::random_slope) ss << " sigma_beta=" << sigma_beta;
  return ss.str();
}

ProxyMatrix corrupt_temperatures(const ProxyMatrix& local, const CorruptionSpec& spec,
                                 const Seed& seed, std::optional<YearRange> window) {
  if (!(spec.noise_fraction >= 0.0 && spec.noise_fraction <= 1.0))
    throw Error(ErrorCode::parameter, "noise_fraction must lie in [0, 1]");
  if (spec.color == NoiseColor::red && !(std::abs(spec.red_phi) < 1.0))
    throw Error(ErrorCode::parameter, "red noise coefficient must satisfy |phi| < 1");
  if (spec.noise_fraction >= 1.0 && spec.variant != CorruptionVariant::column_append)
    throw Error(ErrorCode::parameter, "noise_fraction = 1 leaves no signal to scale against");
  if (spec.noise_fraction >= 1.0)
    throw Error(ErrorCode::parameter, "noise_fraction = 1 would need infinitely many noise columns");
  if (spec.noise_fraction == 0.0) return local;

  const YearRange win = window.value_or(local.years());
  if (!local.years().contains(win) || win.length() < 2)
    throw Error(ErrorCode::coverage, "corruption window outside the local temperature matrix");
  const Eigen::Index r0 = win.first - local.start_year();
  const Eigen::Index nw = win.length();
  for (Eigen::Index j = 0; j < local.n_series(); ++j)
    for (Eigen::Index i = r0; i < r0 + nw; ++i)
      if (local.missing()(i, j))
        throw Error(ErrorCode::coverage, "local temperature '" +
                                             local.columns()[static_cast<std::size_t>(j)].name +
                                             "' has missing values in the experiment window");

  const Eigen::Index n = local.n_years();
  auto unit_noise = [&](Engine& engine) {
    Ar1Params p{spec.color == NoiseColor::red ? spec.red_phi : 0.0, 1.0, 0.0};
    p.innovation_sd = std::sqrt(1.0 - p.phi * p.phi);
    return simulate_ar1(p, static_cast<std::size_t>(n), engine);
  };
  auto column_variance = [&](const Eigen::MatrixXd& v, Eigen::Index j) {
    return sample_variance(v.col(j).data() + r0, static_cast<std::size_t>(nw));
  };

  if (spec.variant == CorruptionVariant::column_append) {
    const auto n_local = local.n_series();
    const auto total = static_cast<Eigen::Index>(
        std::ceil(static_cast<double>(n_local) / (1.0 - spec.noise_fraction) - 1e-9));
    const Eigen::Index extra = total - n_local;
    Eigen::MatrixXd noise(n, extra);
    std::vector<SeriesMeta> meta;
    for (Eigen::Index k = 0; k < extra; ++k) {
      Engine engine = make_engine(seed.child(static_cast<std::uint64_t>(k)));
      auto v = unit_noise(engine);
      const Eigen::Index src = k % n_local;
      const double sd = std::sqrt(column_variance(local.values(), src));
      for (Eigen::Index i = 0; i < n; ++i) noise(i, k) = sd * v[static_cast<std::size_t>(i)];
      SeriesMeta m = pseudo_meta("noise" + std::to_string(k + 1), local.start_year(), spec.label());
      m.latitude = local.columns()[static_cast<std::size_t>(src)].latitude;
      m.longitude = local.columns()[static_cast<std::size_t>(src)].longitude;
      meta.push_back(std::move(m));
    }
    return local.append_columns(ProxyMatrix(local.start_year(), std::move(meta), std::move(noise)));
  }

  Eigen::MatrixXd out = local.values();
  auto meta = local.columns();
  std::normal_distribution<double> normal(0.0, 1.0);
  const double ratio = spec.noise_fraction / (1.0 - spec.noise_fraction);
  for (Eigen::Index j = 0; j < local.n_series(); ++j) {
    Engine engine = make_engine(seed.child(static_cast<std::uint64_t>(j)));
    double beta = 1.0;
    if (spec.variant == CorruptionVariant::random_slope) beta = 1.0 + spec.sigma_beta * normal(engine);
    auto v = unit_noise(engine);
    // Scale by the realized noise variance so that the noise share over the
    // window is exactly noise_fraction.
    const double var_t = column_variance(local.values(), j);
    const double var_v = sample_variance(v.data() + r0, static_cast<std::size_t>(nw));
    const double scale = std::sqrt(ratio * var_t / var_v);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (local.missing()(i, j)) continue;
      out(i, j) = beta * local.values()(i, j) + scale * v[static_cast<std::size_t>(i)];
    }
    auto& m = meta[static_cast<std::size_t>(j)];
    m.kind = SeriesKind::pseudoproxy;
    m.generator = spec.label();
    if (spec.variant == CorruptionVariant::random_slope) m.generator += " beta=" + format_double(beta);
  }
  return ProxyMatrix(local.start_year(), std::move(meta), std::move(out), local.missing());
}

}  // namespace paleo::pseudoproxy
