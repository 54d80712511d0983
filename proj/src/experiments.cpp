#include "paleo/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "paleo/diagnostics.hpp"
#include "paleo/parallel.hpp"
#include "paleo/pcselect.hpp"
#include "paleo/solvers.hpp"

#ifndef PALEO_VERSION
#define PALEO_VERSION "0.0.0"
#endif

namespace paleo::experiments {

using data::AnnualSeries;
using data::ProxyMatrix;
using validation::MethodConfig;

namespace {

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find(sep, pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view item = text.substr(pos, end - pos);
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.front()))) item.remove_prefix(1);
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.back()))) item.remove_suffix(1);
    if (!item.empty()) out.emplace_back(item);
    pos = end + 1;
  }
  return out;
}

double to_double(const std::string& key, std::string_view text) {
  double v = 0.0;
  // from_chars rejects a leading '+'
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v))
    throw Error(ErrorCode::configuration, "parameter " + key + ": '" + std::string(text) + "' is not a number");
  return v;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

std::vector<MethodConfig> parse_methods(const std::vector<std::string>& tags) {
  std::vector<MethodConfig> out;
  for (const auto& t : tags) out.push_back(validation::parse_method(t));
  return out;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

data::SeriesMeta synthetic_meta(std::string name, double latitude, int first_year, data::SeriesKind kind,
                                std::string generator) {
  data::SeriesMeta m;
  m.name = std::move(name);
  m.latitude = latitude;
  m.kind = kind;
  m.first_year = first_year;
  m.generator = std::move(generator);
  return m;
}

double spread(int j, int n, double lo, double hi) {
  return n == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(j) / (n - 1);
}

std::string fmt(double v) {
  return std::isfinite(v) ? format_double(v) : std::string();
}

// Overlap of a matrix with a series, required to be nonempty.
YearRange common_years(const AnnualSeries& target, const ProxyMatrix& m) {
  YearRange r{std::max(target.start_year(), m.start_year()), std::min(target.end_year(), m.end_year())};
  if (r.empty()) throw Error(ErrorCode::coverage, "target and matrix share no years");
  return r;
}

// Years of `target` with values, as a range spanning the first to last
// available year.
YearRange available_span(const AnnualSeries& s) {
  int first = s.end_year() + 1, last = s.start_year() - 1;
  for (int y = s.start_year(); y <= s.end_year(); ++y)
    if (s.available(y)) {
      first = std::min(first, y);
      last = std::max(last, y);
    }
  if (last < first) throw Error(ErrorCode::insufficient_data, "target has no values");
  return {first, last};
}

}  // namespace

std::string build_id() { return std::string("paleorecon ") + PALEO_VERSION; }

std::string_view to_string(Recipe recipe) {
  switch (recipe) {
    case Recipe::cps_nulls: return "cps_nulls";
    case Recipe::tingley: return "tingley";
    case Recipe::tingley_perturbed: return "tingley_perturbed";
    case Recipe::smerdon_snr: return "smerdon_snr";
    case Recipe::smerdon_append: return "smerdon_append";
    case Recipe::smerdon_slope: return "smerdon_slope";
    case Recipe::centering_bug: return "centering_bug";
    case Recipe::bayes_backcast: return "bayes_backcast";
    case Recipe::pc_criteria: return "pc_criteria";
    case Recipe::sim_fidelity: return "sim_fidelity";
  }
  return "tingley";
}

Recipe parse_recipe(std::string_view text) {
  for (auto r : {Recipe::cps_nulls, Recipe::tingley, Recipe::tingley_perturbed, Recipe::smerdon_snr,
                 Recipe::smerdon_append, Recipe::smerdon_slope, Recipe::centering_bug, Recipe::bayes_backcast,
                 Recipe::pc_criteria, Recipe::sim_fidelity})
    if (text == to_string(r)) return r;
  throw Error(ErrorCode::configuration, "unknown recipe '" + std::string(text) + "'");
}

// Parameters ---------------------------------------------------------------------

Parameters::Parameters(std::map<std::string, std::string> values) : values_(std::move(values)) {}

void Parameters::set(const std::string& key, const std::string& value) { values_[key] = value; }

int Parameters::get_int(const std::string& key, int fallback) {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) {
    resolved_[key] = std::to_string(fallback);
    return fallback;
  }
  int v = 0;
  const auto& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw Error(ErrorCode::configuration, "parameter " + key + ": '" + s + "' is not an integer");
  resolved_[key] = std::to_string(v);
  return v;
}

double Parameters::get_double(const std::string& key, double fallback) {
  used_.insert(key);
  auto it = values_.find(key);
  const double v = it == values_.end() ? fallback : to_double(key, it->second);
  resolved_[key] = format_double(v);
  return v;
}

std::string Parameters::get_string(const std::string& key, const std::string& fallback) {
  used_.insert(key);
  auto it = values_.find(key);
  std::string v = it == values_.end() ? fallback : it->second;
  resolved_[key] = v;
  return v;
}

std::vector<double> Parameters::get_doubles(const std::string& key, const std::vector<double>& fallback) {
  used_.insert(key);
  auto it = values_.find(key);
  std::vector<double> v = fallback;
  if (it != values_.end()) {
    v.clear();
    for (const auto& item : split(it->second, ',')) v.push_back(to_double(key, item));
  }
  resolved_[key] = join_doubles(v);
  return v;
}

std::vector<std::string> Parameters::get_strings(const std::string& key,
                                                 const std::vector<std::string>& fallback) {
  used_.insert(key);
  auto it = values_.find(key);
  std::vector<std::string> v = it == values_.end() ? fallback : split(it->second, ';');
  resolved_[key] = join(v, ";");
  return v;
}

void Parameters::check_unused() const {
  for (const auto& [key, value] : values_)
    if (!used_.count(key)) throw Error(ErrorCode::configuration, "unknown parameter '" + key + "'");
}

// Synthetic stand-ins --------------------------------------------------------------

AnnualSeries synthetic_target(const TargetSpec& spec, const Seed& seed) {
  if (spec.n_years < 10) throw Error(ErrorCode::parameter, "synthetic target needs at least 10 years");
  const double phi[2] = {spec.phi1, spec.phi2};
  if (!solvers::ar_stationary(phi)) throw Error(ErrorCode::parameter, "target AR(2) coefficients are not stationary");
  Engine engine = make_engine(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int burn = 500;
  std::vector<double> x(static_cast<std::size_t>(burn + spec.n_years), 0.0);
  for (std::size_t t = 2; t < x.size(); ++t) x[t] = spec.phi1 * x[t - 1] + spec.phi2 * x[t - 2] + normal(engine);
  std::vector<double> y(x.begin() + burn, x.end());
  const double n = static_cast<double>(y.size());
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : y) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  for (std::size_t t = 0; t < y.size(); ++t)
    y[t] = (y[t] - mean) / sd + spec.trend * (static_cast<double>(t) / (n - 1.0) - 0.5);
  return AnnualSeries(spec.first_year, std::move(y));
}

ProxyMatrix signal_proxies(const AnnualSeries& target, const ProxySpec& spec, const Seed& seed) {
  if (spec.n_series < 1) throw Error(ErrorCode::parameter, "n_series must be >= 1");
  if (!(spec.sigma_omega >= 0.0) || !(spec.sigma_beta >= 0.0))
    throw Error(ErrorCode::parameter, "sigma_omega and sigma_beta must be nonnegative");
  if (target.count_available() != target.size())
    throw Error(ErrorCode::coverage, "signal proxies need a target without gaps");
  pseudoproxy::NoiseSpec noise;
  if (spec.noise_phi != 0.0) {
    noise.kind = pseudoproxy::NoiseKind::ar1;
    noise.ar1 = {spec.noise_phi, std::sqrt(1.0 - spec.noise_phi * spec.noise_phi), 0.0};
    noise.ar1.validate();
  }
  const int n = static_cast<int>(target.size());
  const ProxyMatrix omega = pseudoproxy::gen_noise_matrix(noise, n, spec.n_series, seed.child(0), target.start_year());
  Engine engine = make_engine(seed.child(1));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd values(n, spec.n_series);
  std::vector<data::SeriesMeta> meta;
  for (int j = 0; j < spec.n_series; ++j) {
    const double beta = spec.slope_mean + spec.sigma_beta * normal(engine);
    for (int t = 0; t < n; ++t)
      values(t, j) = beta * target.values()[static_cast<std::size_t>(t)] + spec.sigma_omega * omega.values()(t, j);
    meta.push_back(synthetic_meta("sp" + std::to_string(j + 1), spread(j, spec.n_series, 5.0, 75.0),
                                  target.start_year(), data::SeriesKind::pseudoproxy,
                                  "signal beta=" + format_double(beta) + " sigma_omega=" +
                                      format_double(spec.sigma_omega) + " phi=" + format_double(spec.noise_phi)));
  }
  return ProxyMatrix(target.start_year(), std::move(meta), std::move(values));
}

ProxyMatrix synthetic_local_temperatures(const AnnualSeries& target, int n_local, const Seed& seed) {
  if (n_local < 1) throw Error(ErrorCode::parameter, "n_local must be >= 1");
  if (target.count_available() != target.size())
    throw Error(ErrorCode::coverage, "local temperatures need a target without gaps");
  pseudoproxy::NoiseSpec noise;
  noise.kind = pseudoproxy::NoiseKind::ar1;
  noise.ar1 = {0.5, std::sqrt(0.75), 0.0};
  const int n = static_cast<int>(target.size());
  const ProxyMatrix u = pseudoproxy::gen_noise_matrix(noise, n, n_local, seed, target.start_year());
  Eigen::MatrixXd values(n, n_local);
  std::vector<data::SeriesMeta> meta;
  for (int j = 0; j < n_local; ++j) {
    const double a = spread(j, n_local, 0.3, 0.8);
    for (int t = 0; t < n; ++t)
      values(t, j) = a * target.values()[static_cast<std::size_t>(t)] + std::sqrt(1.0 - a * a) * u.values()(t, j);
    meta.push_back(synthetic_meta("lt" + std::to_string(j + 1), spread(j, n_local, 5.0, 75.0), target.start_year(),
                                  data::SeriesKind::local_temperature, "local a=" + format_double(a)));
  }
  return ProxyMatrix(target.start_year(), std::move(meta), std::move(values));
}

pseudoproxy::NoiseSpec parse_null(std::string_view label) {
  pseudoproxy::NoiseSpec spec;
  if (label == "white") return spec;
  if (label == "ar1_empirical") {
    spec.kind = pseudoproxy::NoiseKind::ar1_empirical;
    return spec;
  }
  if (label == "brownian") {
    spec.kind = pseudoproxy::NoiseKind::brownian;
    return spec;
  }
  if (label.substr(0, 4) == "ar1:") {
    const double phi = to_double("null", label.substr(4));
    spec.kind = pseudoproxy::NoiseKind::ar1;
    spec.ar1 = {phi, std::sqrt(std::max(0.0, 1.0 - phi * phi)), 0.0};
    spec.ar1.validate();
    return spec;
  }
  throw Error(ErrorCode::configuration, "unknown null generator '" + std::string(label) + "'");
}

// Tingley --------------------------------------------------------------------------

std::vector<double> ComparisonResult::rmse(const std::string& method, double sigma_beta, double sigma_omega) const {
  std::vector<double> out;
  for (const auto& r : rows)
    if (r.method == method && r.sigma_beta == sigma_beta && r.sigma_omega == sigma_omega) out.push_back(r.rmse);
  return out;
}

double ComparisonResult::mean_rmse(const std::string& method, double sigma_beta, double sigma_omega) const {
  return mean_of(rmse(method, sigma_beta, sigma_omega));
}

std::size_t ComparisonResult::failures() const {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.failures;
  return n;
}

ComparisonResult run_tingley(const TingleyOptions& options, const AnnualSeries* real_target, std::uint64_t seed,
                             unsigned threads) {
  if (options.replicates < 1) throw Error(ErrorCode::configuration, "replicates must be >= 1");
  if (options.sigma_omega.empty() || options.sigma_beta.empty())
    throw Error(ErrorCode::configuration, "empty sigma grid");
  std::vector<MethodConfig> methods = options.methods;
  if (methods.empty())
    methods = {validation::parse_method("lasso_cv"), validation::parse_method("lasso_tingley"),
               validation::parse_method("composite_regression")};

  ComparisonResult out;
  for (int r = 0; r < options.replicates; ++r) {
    const auto ur = static_cast<std::uint64_t>(r);
    const AnnualSeries target =
        real_target ? real_target->slice(available_span(*real_target)) : synthetic_target(options.target, Seed{seed, 1}.child(ur));
    const auto scheme = data::make_holdout_blocks(target.years(), options.block_length, options.stride);
    for (double sb : options.sigma_beta) {
      for (double so : options.sigma_omega) {
        // the same noise and slope draws serve every sigma setting
        const ProxyMatrix proxies =
            signal_proxies(target, {options.n_series, so, sb, 1.0, 0.0}, Seed{seed, 2}.child(ur));
        const std::string source = "tingley sigma_beta=" + format_double(sb) + " sigma_omega=" + format_double(so);
        for (std::size_t m = 0; m < methods.size(); ++m) {
          auto report = validation::rmse_profile(methods[m], proxies, target, scheme, Seed{seed, 3}.child({ur, m}),
                                                 source, {}, threads);
          report.replication_id = r;
          out.rows.push_back({r, sb, so, report.method, report.mean, report.failures()});
          out.reports.push_back(std::move(report));
        }
      }
    }
  }
  return out;
}

std::string format_comparison_csv(const ComparisonResult& result) {
  std::ostringstream ss;
  ss << "replicate,sigma_beta,sigma_omega,method,rmse,failed_blocks\n";
  for (const auto& r : result.rows)
    ss << r.replicate << ',' << format_double(r.sigma_beta) << ',' << format_double(r.sigma_omega) << ',' << r.method
       << ',' << fmt(r.rmse) << ',' << r.failures << '\n';
  return ss.str();
}

// Centering ------------------------------------------------------------------------

CenteringResult run_centering(const CenteringOptions& options, const AnnualSeries* real_target,
                              const ProxyMatrix* real_proxies, std::uint64_t seed, unsigned threads) {
  if (options.replicates < 1) throw Error(ErrorCode::configuration, "replicates must be >= 1");
  if ((real_target == nullptr) != (real_proxies == nullptr))
    throw Error(ErrorCode::configuration, "real-data centering needs both a target and proxies");
  std::vector<MethodConfig> methods = options.methods;
  if (methods.empty()) methods = {validation::parse_method("ols"), validation::parse_method("lasso_cv")};

  CenteringResult out;
  const int replicates = real_target ? 1 : options.replicates;
  for (int r = 0; r < replicates; ++r) {
    const auto ur = static_cast<std::uint64_t>(r);
    const AnnualSeries target =
        real_target ? *real_target : synthetic_target(options.target, Seed{seed, 1}.child(ur));
    const ProxyMatrix proxies =
        real_proxies ? *real_proxies : signal_proxies(target, options.proxies, Seed{seed, 2}.child(ur));
    YearRange cal = common_years(target, proxies);
    cal = {std::max(cal.first, available_span(target).first), std::min(cal.last, available_span(target).last)};
    if (!cal.contains(options.reference))
      throw Error(ErrorCode::coverage, "reference period " + to_string(options.reference) + " outside " +
                                           to_string(cal));
    // score only blocks that end before the reference period starts
    const auto all = data::make_holdout_blocks(cal, options.block_length, options.stride, options.filter);
    std::vector<data::HoldoutBlock> blocks;
    for (const auto& b : all.blocks())
      if (b.years.last < options.reference.first) blocks.push_back(b);
    if (blocks.empty())
      throw Error(ErrorCode::configuration, "no holdout block precedes the reference period");
    const data::HoldoutScheme scheme(cal, blocks);

    for (std::size_t m = 0; m < methods.size(); ++m) {
      const Seed s = Seed{seed, 3}.child({ur, m});
      validation::HoldoutOptions good{data::CenteringSpec{options.reference, data::CenteringMode::anomaly_vs_observed}};
      validation::HoldoutOptions bad{data::CenteringSpec{options.reference, data::CenteringMode::anomaly_vs_fitted_bug}};
      const auto a = validation::rmse_profile(methods[m], proxies, target, scheme, s, "proxy", good, threads);
      const auto b = validation::rmse_profile(methods[m], proxies, target, scheme, s, "proxy", bad, threads);
      out.failures += a.failures() + b.failures();
      out.rows.push_back({r, a.method, a.mean, b.mean});
    }
  }
  return out;
}

std::string format_centering_csv(const CenteringResult& result) {
  std::ostringstream ss;
  ss << "replicate,method,rmse_anomaly,rmse_fitted_bug,ratio\n";
  for (const auto& r : result.rows)
    ss << r.replicate << ',' << r.method << ',' << fmt(r.rmse_correct) << ',' << fmt(r.rmse_bug) << ','
       << fmt(r.rmse_bug / r.rmse_correct) << '\n';
  return ss.str();
}

// Null study -----------------------------------------------------------------------

const NullStudyRow& NullStudyResult::row(int replicate, const std::string& method, const std::string& null) const {
  for (const auto& r : rows)
    if (r.replicate == replicate && r.method == method && r.null == null) return r;
  throw Error(ErrorCode::configuration, "no null study row for " + method + " / " + null);
}

NullStudyResult run_null_study(const NullStudyOptions& options, const AnnualSeries* real_target,
                               const ProxyMatrix* real_proxies, std::uint64_t seed, unsigned threads) {
  if (options.replicates < 1 || options.n_null < 1)
    throw Error(ErrorCode::configuration, "replicates and n_null must be >= 1");
  if ((real_target == nullptr) != (real_proxies == nullptr))
    throw Error(ErrorCode::configuration, "real-data null study needs both a target and proxies");
  std::vector<MethodConfig> methods = options.methods;
  if (methods.empty()) methods = {validation::parse_method("cps"), validation::parse_method("lasso_cv")};
  std::vector<pseudoproxy::NoiseSpec> nulls;
  for (const auto& n : options.nulls) nulls.push_back(parse_null(n));

  NullStudyResult out;
  const int replicates = real_target ? 1 : options.replicates;
  for (int r = 0; r < replicates; ++r) {
    const auto ur = static_cast<std::uint64_t>(r);
    const AnnualSeries target =
        real_target ? *real_target : synthetic_target(options.target, Seed{seed, 1}.child(ur));
    const ProxyMatrix proxies =
        real_proxies ? *real_proxies : signal_proxies(target, options.proxies, Seed{seed, 2}.child(ur));
    YearRange cal = common_years(target, proxies);
    const YearRange avail = available_span(target);
    cal = {std::max(cal.first, avail.first), std::min(cal.last, avail.last)};
    const AnnualSeries t = target.slice(cal);
    const auto scheme = data::make_holdout_blocks(cal, options.block_length, options.stride, options.filter);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      auto real = validation::rmse_profile(methods[m], proxies, t, scheme, Seed{seed, 3}.child({ur, m}), "proxy",
                                           {}, threads);
      out.failures += real.failures();
      for (std::size_t g = 0; g < nulls.size(); ++g) {
        validation::NullGenerator gen{nulls[g], static_cast<int>(proxies.n_series()), &proxies};
        // common random numbers across generators
        auto samples = validation::null_distribution(methods[m], gen, t, scheme, options.n_null,
                                                     Seed{seed, 4}.child({ur, m}), threads);
        for (const auto& rep : samples.replications) out.failures += rep.failures();
        NullStudyRow row;
        row.replicate = r;
        row.method = real.method;
        row.null = options.nulls[g];
        row.real_rmse = real.mean;
        row.exceedance = validation::significance(real, samples, validation::SignificanceMode::aggregate).front();
        row.null_median = validation::quantile(samples.aggregates(), 0.5);
        out.rows.push_back(row);
        if (r == 0) out.samples.push_back(std::move(samples));
      }
      if (r == 0) out.real.push_back(std::move(real));
    }
  }
  return out;
}

std::string format_null_study_csv(const NullStudyResult& result) {
  std::ostringstream ss;
  ss << "replicate,method,null,real_rmse,null_median,count_le,n_null,fraction,p_value\n";
  for (const auto& r : result.rows)
    ss << r.replicate << ',' << r.method << ',' << r.null << ',' << fmt(r.real_rmse) << ',' << fmt(r.null_median)
       << ',' << r.exceedance.count_le << ',' << r.exceedance.n << ',' << fmt(r.exceedance.fraction()) << ','
       << fmt(r.exceedance.p_value()) << '\n';
  return ss.str();
}

std::string format_null_bands_csv(const NullStudyResult& result) {
  std::ostringstream ss;
  ss << "block_first,block_last,position,method,null,lower,median,upper,real\n";
  for (const auto& samples : result.samples) {
    const auto band = validation::null_band(samples);
    const validation::RmseReport* real = nullptr;
    for (const auto& r : result.real)
      if (r.method == samples.method) real = &r;
    for (std::size_t b = 0; b < samples.blocks.size(); ++b) {
      const auto& blk = samples.blocks[b];
      ss << blk.years.first << ',' << blk.years.last << ',' << data::to_string(blk.mode) << ',' << samples.method
         << ',' << samples.generator << ',' << fmt(band.lower[b]) << ',' << fmt(band.median[b]) << ','
         << fmt(band.upper[b]) << ',' << (real ? fmt(real->per_block[b].rmse) : std::string()) << '\n';
    }
  }
  return ss.str();
}

// Smerdon --------------------------------------------------------------------------

std::size_t SmerdonResult::failures() const {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.failures;
  return n;
}

std::vector<pseudoproxy::CorruptionSpec> default_corruptions(Recipe recipe) {
  using pseudoproxy::CorruptionVariant;
  using pseudoproxy::NoiseColor;
  switch (recipe) {
    case Recipe::smerdon_append:
      return {{0.5, NoiseColor::white, 0.4, CorruptionVariant::column_append, 0.0}};
    case Recipe::smerdon_slope:
      return {{0.86, NoiseColor::red, 0.4, CorruptionVariant::random_slope, 1.0},
              {0.86, NoiseColor::red, 0.4, CorruptionVariant::random_slope, 3.0}};
    default:
      return {{0.86, NoiseColor::red, 0.4, CorruptionVariant::snr_mix, 0.0},
              {0.94, NoiseColor::white, 0.4, CorruptionVariant::snr_mix, 0.0}};
  }
}

SmerdonResult run_smerdon(const SmerdonOptions& options, const AnnualSeries* real_target,
                          const ProxyMatrix* real_local, std::uint64_t seed, unsigned threads) {
  if ((real_target == nullptr) != (real_local == nullptr))
    throw Error(ErrorCode::configuration, "real-data corruption tests need a target and local temperatures");
  if (options.corruptions.empty()) throw Error(ErrorCode::configuration, "no corruption settings");
  std::vector<MethodConfig> methods = options.methods;
  if (methods.empty()) methods = {validation::parse_method("lasso_cv"), validation::parse_method("cps")};

  const AnnualSeries target = real_target ? *real_target : synthetic_target(options.target, Seed{seed, 1});
  const ProxyMatrix local =
      real_local ? *real_local : synthetic_local_temperatures(target, options.n_local, Seed{seed, 2});
  YearRange cal = common_years(target, local);
  const YearRange avail = available_span(target);
  cal = {std::max(cal.first, avail.first), std::min(cal.last, avail.last)};
  const AnnualSeries t = target.slice(cal);
  const ProxyMatrix l = local.slice(cal);
  const auto scheme = data::make_holdout_blocks(cal, options.block_length, options.stride);
  std::vector<int> years;
  for (int y = cal.first; y <= cal.last; ++y)
    if (t.available(y)) years.push_back(y);

  SmerdonResult out;
  for (std::size_t c = 0; c < options.corruptions.size(); ++c) {
    const auto& spec = options.corruptions[c];
    const ProxyMatrix proxies = pseudoproxy::corrupt_temperatures(l, spec, Seed{seed, 3}.child(c), cal);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      SmerdonRow row;
      row.corruption = spec.label();
      row.method = methods[m].tag();
      const auto trained = validation::fit_method(methods[m], proxies, t, years, Seed{seed, 4}.child({c, m}));
      const auto fitted = solvers::predict(trained.model, {&proxies, &t}, cal);
      double ss = 0.0;
      for (int y : years) ss += std::pow(fitted.at(y) - t.at(y), 2);
      row.in_sample_rmse = std::sqrt(ss / static_cast<double>(years.size()));
      auto report = validation::rmse_profile(methods[m], proxies, t, scheme, Seed{seed, 5}.child({c, m}),
                                             row.corruption, {}, threads);
      row.holdout_rmse = report.mean;
      row.failures = report.failures();
      out.rows.push_back(row);
      out.reports.push_back(std::move(report));
    }
  }
  return out;
}

std::string format_smerdon_csv(const SmerdonResult& result) {
  std::ostringstream ss;
  ss << "corruption,method,in_sample_rmse,holdout_rmse,failed_blocks\n";
  for (const auto& r : result.rows)
    ss << '"' << r.corruption << "\"," << r.method << ',' << fmt(r.in_sample_rmse) << ',' << fmt(r.holdout_rmse)
       << ',' << r.failures << '\n';
  return ss.str();
}

// Bayes ----------------------------------------------------------------------------

ProxyMatrix synthetic_pcs(const YearRange& years, int k, double phi, const Seed& seed) {
  if (k < 1) throw Error(ErrorCode::parameter, "k must be >= 1");
  pseudoproxy::NoiseSpec spec;
  spec.kind = pseudoproxy::NoiseKind::ar1;
  spec.ar1 = {phi, std::sqrt(1.0 - phi * phi), 0.0};
  spec.ar1.validate();
  const ProxyMatrix raw = pseudoproxy::gen_noise_matrix(spec, years.length(), k, seed, years.first);
  std::vector<data::SeriesMeta> meta;
  for (int j = 0; j < k; ++j)
    meta.push_back(synthetic_meta("PC" + std::to_string(j + 1), 0.0, years.first, data::SeriesKind::pseudoproxy,
                                  "AR1(" + format_double(phi) + ")"));
  return raw.with_columns(std::move(meta));
}

AnnualSeries simulate_ar_pc(const BayesTruth& truth, const ProxyMatrix& pcs, const YearRange& calibration,
                            int backcast_first, const Seed& seed) {
  const int p = static_cast<int>(truth.ar.size());
  const auto k = static_cast<Eigen::Index>(truth.beta.size());
  if (k > pcs.n_series()) throw Error(ErrorCode::parameter, "more coefficients than PC columns");
  const YearRange span{std::min(backcast_first, calibration.first), calibration.last};
  if (!pcs.years().contains(span)) throw Error(ErrorCode::coverage, "PC scores do not cover " + to_string(span));
  Engine engine = make_engine(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto exo = [&](int year) {
    double v = truth.intercept;
    const auto row = pcs.row(year);
    for (Eigen::Index j = 0; j < k; ++j) v += truth.beta[static_cast<std::size_t>(j)] * pcs.values()(row, j);
    return v;
  };
  const double phi_sum = std::accumulate(truth.ar.begin(), truth.ar.end(), 0.0);
  const double level = truth.intercept / (1.0 - phi_sum);

  std::vector<double> y(static_cast<std::size_t>(span.length()), level);
  const int off = span.first;
  // forward recursion over calibration, started at the unconditional level
  for (int year = calibration.first; year <= calibration.last; ++year) {
    double v = exo(year) + truth.innovation_sd * normal(engine);
    for (int i = 1; i <= p; ++i) {
      const int lag = year - i;
      v += truth.ar[static_cast<std::size_t>(i - 1)] * (lag >= calibration.first ? y[static_cast<std::size_t>(lag - off)] : level);
    }
    y[static_cast<std::size_t>(year - off)] = v;
  }
  // reverse-time recursion before calibration
  for (int year = calibration.first - 1; year >= span.first; --year) {
    double v = exo(year) + truth.innovation_sd * normal(engine);
    for (int i = 1; i <= p; ++i) v += truth.ar[static_cast<std::size_t>(i - 1)] * y[static_cast<std::size_t>(year + i - off)];
    y[static_cast<std::size_t>(year - off)] = v;
  }
  return AnnualSeries(span.first, std::move(y));
}

BayesStudyResult run_bayes_study(const BayesStudyOptions& options, const AnnualSeries* real_target,
                                 const ProxyMatrix* real_pcs, std::uint64_t seed, unsigned threads) {
  if ((real_target == nullptr) != (real_pcs == nullptr))
    throw Error(ErrorCode::configuration, "real-data backcast needs a target and PC scores");
  if (options.backcast_first >= options.calibration.first)
    throw Error(ErrorCode::configuration, "backcast must start before calibration");
  BayesStudyResult out;
  const YearRange span{options.backcast_first, options.calibration.last};
  ProxyMatrix pcs;
  AnnualSeries target;
  if (real_target) {
    pcs = *real_pcs;
    target = *real_target;
  } else {
    pcs = synthetic_pcs(span, options.k, 0.5, Seed{seed, 1});
    BayesTruth truth;
    for (int j = 0; j < options.k; ++j) truth.beta.push_back(0.3 / std::sqrt(j + 1.0));
    target = simulate_ar_pc(truth, pcs, options.calibration, options.backcast_first, Seed{seed, 2});
    out.truth = target;
  }
  const YearRange backcast{options.backcast_first, options.calibration.first - 1};
  for (std::size_t o = 0; o < options.ar_orders.size(); ++o) {
    bayes::BayesSpec spec;
    spec.ar_order = options.ar_orders[o];
    spec.k = options.k;
    spec.mcmc = options.mcmc;
    spec.mcmc.seed = Seed{seed, 3}.child(o).stream;
    BayesModelResult model;
    model.ar_order = spec.ar_order;
    model.posterior = bayes::fit_bayes(target, pcs, options.calibration, spec, threads);
    const auto ens = bayes::backcast_paths(model.posterior, pcs, backcast,
                                           {options.max_draws, Seed{seed, 4}.child(o), threads});
    model.raw = bayes::decompose_uncertainty(ens);
    model.smoothed = bayes::decompose_uncertainty(bayes::smooth_paths(ens, options.smoothing));
    model.beta_share = mean_of(model.raw.beta_only.width()) / mean_of(model.raw.total.width());
    out.models.push_back(std::move(model));
  }
  return out;
}

// Bundles --------------------------------------------------------------------------

std::size_t Bundle::failures() const {
  return static_cast<std::size_t>(
      std::count_if(stages.begin(), stages.end(), [](const StageStatus& s) { return !s.error.empty(); }));
}

std::string dump_json(const nlohmann::json& doc) { return doc.dump(2) + "\n"; }

void Bundle::write(const std::filesystem::path& dir) const {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "reports", ec);
  fs::create_directories(dir / "tables", ec);
  if (ec) throw Error(ErrorCode::io, "cannot create " + dir.string() + ": " + ec.message());
  auto put = [](const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorCode::io, "write failed for " + path.string());
  };
  for (const auto& [name, doc] : reports) put(dir / "reports" / (name + ".json"), dump_json(doc));
  for (const auto& [name, text] : tables) put(dir / "tables" / (name + ".csv"), text);
  put(dir / "manifest.json", dump_json(manifest));
}

namespace {

struct Loaded {
  std::optional<AnnualSeries> target;
  std::optional<ProxyMatrix> proxies;
  std::optional<ProxyMatrix> local;
  std::optional<ProxyMatrix> pcs;
  nlohmann::json files = nlohmann::json::array();
};

std::string file_fingerprint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return Fingerprint().add(std::string_view(ss.str())).hex();
}

Loaded load_inputs(const Inputs& inputs) {
  Loaded out;
  auto note = [&](const char* role, const std::filesystem::path& p) {
    out.files.push_back({{"role", role}, {"path", p.generic_string()}, {"fingerprint", file_fingerprint(p)}});
  };
  data::LoadOptions opts;
  if (inputs.metadata) {
    note("metadata", *inputs.metadata);
    opts.metadata = inputs.metadata;
  }
  if (inputs.target) {
    note("target", *inputs.target);
    out.target = data::load_series(*inputs.target);
  }
  if (inputs.proxies) {
    note("proxies", *inputs.proxies);
    out.proxies = data::load_matrix(*inputs.proxies, opts);
  }
  if (inputs.local_temperatures) {
    note("local_temperatures", *inputs.local_temperatures);
    data::LoadOptions lo;
    lo.default_kind = data::SeriesKind::local_temperature;
    out.local = data::load_matrix(*inputs.local_temperatures, lo);
  }
  if (inputs.pcs) {
    note("pcs", *inputs.pcs);
    out.pcs = data::load_matrix(*inputs.pcs);
  }
  return out;
}

TargetSpec read_target(Parameters& p, TargetSpec t) {
  t.first_year = p.get_int("target.first_year", t.first_year);
  t.n_years = p.get_int("target.n_years", t.n_years);
  t.phi1 = p.get_double("target.phi1", t.phi1);
  t.phi2 = p.get_double("target.phi2", t.phi2);
  t.trend = p.get_double("target.trend", t.trend);
  return t;
}

ProxySpec read_proxies(Parameters& p, ProxySpec s) {
  s.n_series = p.get_int("proxies.n_series", s.n_series);
  s.sigma_omega = p.get_double("proxies.sigma_omega", s.sigma_omega);
  s.sigma_beta = p.get_double("proxies.sigma_beta", s.sigma_beta);
  s.noise_phi = p.get_double("proxies.noise_phi", s.noise_phi);
  return s;
}

data::BlockFilter read_filter(Parameters& p, data::BlockFilter f) {
  return data::parse_block_filter(p.get_string("holdout.filter", std::string(data::to_string(f))));
}

nlohmann::json reports_json(const std::vector<validation::RmseReport>& reports) {
  auto arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(validation::to_json(r));
  return arr;
}

// Recipes turn parameters into options up front (so configuration errors are
// fatal) and return the stages to execute.
using StageList = std::vector<std::pair<std::string, std::function<void(Bundle&)>>>;

StageList plan_tingley(ExperimentSpec& spec, const Loaded& in, bool perturbed) {
  auto& p = spec.parameters;
  TingleyOptions o;
  o.target = read_target(p, o.target);
  o.n_series = p.get_int("proxies.n_series", o.n_series);
  o.sigma_omega = p.get_doubles("sigma_omega", o.sigma_omega);
  o.sigma_beta = p.get_doubles("sigma_beta", perturbed ? std::vector<double>{0.0, 1.0 / 3.0, 1.0, 3.0, 9.0, 27.0}
                                                       : std::vector<double>{0.0});
  o.replicates = p.get_int("replicates", o.replicates);
  o.block_length = p.get_int("holdout.length", o.block_length);
  o.stride = p.get_int("holdout.stride", o.stride);
  o.methods = parse_methods(p.get_strings(
      "methods", perturbed ? std::vector<std::string>{"lasso_cv", "composite_regression"}
                           : std::vector<std::string>{"lasso_cv", "lasso_tingley", "composite_regression"}));
  const AnnualSeries* target = in.target ? &*in.target : nullptr;
  const std::uint64_t seed = spec.seed;
  const unsigned threads = spec.threads;
  const std::string name(perturbed ? "tingley_perturbed" : "tingley");
  return {{name, [=](Bundle& b) {
             const auto res = run_tingley(o, target, seed, threads);
             b.reports[name + "_rmse"] = reports_json(res.reports);
             b.tables[name] = format_comparison_csv(res);
             std::ostringstream ss;
             ss << "sigma_beta,sigma_omega";
             for (const auto& m : o.methods) ss << ",mean_" << m.tag();
             ss << ",ratio_" << o.methods.back().tag() << "_over_" << o.methods.front().tag() << '\n';
             for (double sb : o.sigma_beta)
               for (double so : o.sigma_omega) {
                 ss << format_double(sb) << ',' << format_double(so);
                 for (const auto& m : o.methods) ss << ',' << fmt(res.mean_rmse(m.tag(), sb, so));
                 ss << ',' << fmt(res.mean_rmse(o.methods.back().tag(), sb, so) /
                                  res.mean_rmse(o.methods.front().tag(), sb, so))
                    << '\n';
               }
             b.tables[name + "_summary"] = ss.str();
             if (res.failures() > 0)
               throw Error(ErrorCode::numeric, std::to_string(res.failures()) + " holdout blocks failed");
           }}};
}

StageList plan_centering(ExperimentSpec& spec, const Loaded& in) {
  auto& p = spec.parameters;
  CenteringOptions o;
  o.target = read_target(p, o.target);
  o.proxies = read_proxies(p, o.proxies);
  const auto ref = p.get_doubles("reference", {double(o.reference.first), double(o.reference.last)});
  if (ref.size() != 2) throw Error(ErrorCode::configuration, "reference needs two years");
  o.reference = {static_cast<int>(ref[0]), static_cast<int>(ref[1])};
  o.methods = parse_methods(p.get_strings("methods", {"ols", "lasso_cv"}));
  o.replicates = p.get_int("replicates", o.replicates);
  o.block_length = p.get_int("holdout.length", o.block_length);
  o.stride = p.get_int("holdout.stride", o.stride);
  o.filter = read_filter(p, o.filter);
  const AnnualSeries* target = in.target ? &*in.target : nullptr;
  const ProxyMatrix* proxies = in.proxies ? &*in.proxies : nullptr;
  const std::uint64_t seed = spec.seed;
  const unsigned threads = spec.threads;
  return {{"centering_bug", [=](Bundle& b) {
             const auto res = run_centering(o, target, proxies, seed, threads);
             b.tables["centering_bug"] = format_centering_csv(res);
             nlohmann::json summary = nlohmann::json::array();
             for (const auto& m : o.methods) {
               int worse = 0, n = 0;
               double ratio = 0.0;
               for (const auto& r : res.rows)
                 if (r.method == m.tag()) {
                   ++n;
                   worse += r.rmse_bug > r.rmse_correct;
                   ratio += r.rmse_bug / r.rmse_correct;
                 }
               summary.push_back({{"method", m.tag()},
                                  {"replicates", n},
                                  {"bug_worse", worse},
                                  {"mean_ratio", n ? ratio / n : 0.0}});
             }
             b.reports["centering_bug"] = {{"reference", to_string(o.reference)}, {"methods", summary}};
             if (res.failures > 0)
               throw Error(ErrorCode::numeric, std::to_string(res.failures) + " holdout blocks failed");
           }}};
}

StageList plan_nulls(ExperimentSpec& spec, const Loaded& in) {
  auto& p = spec.parameters;
  NullStudyOptions o;
  o.target = read_target(p, o.target);
  o.proxies = read_proxies(p, o.proxies);
  o.methods = parse_methods(p.get_strings("methods", {"cps", "lasso_cv"}));
  o.nulls = p.get_strings("nulls", o.nulls);
  for (const auto& n : o.nulls) parse_null(n);
  o.n_null = p.get_int("n_null", o.n_null);
  o.replicates = p.get_int("replicates", o.replicates);
  o.block_length = p.get_int("holdout.length", o.block_length);
  o.stride = p.get_int("holdout.stride", o.stride);
  o.filter = read_filter(p, o.filter);
  const AnnualSeries* target = in.target ? &*in.target : nullptr;
  const ProxyMatrix* proxies = in.proxies ? &*in.proxies : nullptr;
  const std::uint64_t seed = spec.seed;
  const unsigned threads = spec.threads;
  return {{"cps_nulls", [=](Bundle& b) {
             const auto res = run_null_study(o, target, proxies, seed, threads);
             b.reports["real_rmse"] = reports_json(res.real);
             auto nulls = nlohmann::json::array();
             for (const auto& s : res.samples) {
               const auto band = validation::null_band(s);
               nulls.push_back({{"method", s.method},
                                {"generator", s.generator},
                                {"replications", static_cast<int>(s.replications.size())},
                                {"aggregates", s.aggregates()},
                                {"band", {{"lower", band.lower}, {"median", band.median}, {"upper", band.upper}}}});
             }
             b.reports["null_samples"] = nulls;
             b.tables["null_study"] = format_null_study_csv(res);
             b.tables["null_bands"] = format_null_bands_csv(res);
             if (res.failures > 0)
               throw Error(ErrorCode::numeric, std::to_string(res.failures) + " holdout blocks failed");
           }}};
}

StageList plan_smerdon(ExperimentSpec& spec, const Loaded& in, Recipe recipe) {
  auto& p = spec.parameters;
  SmerdonOptions o;
  o.target = read_target(p, o.target);
  o.n_local = p.get_int("n_local", o.n_local);
  const auto defaults = default_corruptions(recipe);
  std::vector<double> fractions, phis, slopes;
  std::vector<std::string> colors;
  for (const auto& c : defaults) {
    fractions.push_back(c.noise_fraction);
    colors.emplace_back(pseudoproxy::to_string(c.color));
    phis.push_back(c.red_phi);
    slopes.push_back(c.sigma_beta);
  }
  fractions = p.get_doubles("noise_fraction", fractions);
  colors = p.get_strings("color", colors);
  phis = p.get_doubles("red_phi", phis);
  slopes = p.get_doubles("sigma_beta", slopes);
  const std::size_t n = fractions.size();
  if (colors.size() != n || phis.size() != n || slopes.size() != n)
    throw Error(ErrorCode::configuration, "noise_fraction, color, red_phi and sigma_beta need equal lengths");
  for (std::size_t i = 0; i < n; ++i) {
    pseudoproxy::CorruptionSpec c = defaults.front();
    c.noise_fraction = fractions[i];
    if (colors[i] == "white") c.color = pseudoproxy::NoiseColor::white;
    else if (colors[i] == "red") c.color = pseudoproxy::NoiseColor::red;
    else throw Error(ErrorCode::configuration, "color must be white or red");
    c.red_phi = phis[i];
    c.sigma_beta = slopes[i];
    o.corruptions.push_back(c);
  }
  o.methods = parse_methods(p.get_strings("methods", {"lasso_cv", "cps"}));
  o.block_length = p.get_int("holdout.length", o.block_length);
  o.stride = p.get_int("holdout.stride", o.stride);
  const AnnualSeries* target = in.target ? &*in.target : nullptr;
  const ProxyMatrix* local = in.local ? &*in.local : nullptr;
  const std::uint64_t seed = spec.seed;
  const unsigned threads = spec.threads;
  const std::string name(to_string(recipe));
  return {{name, [=](Bundle& b) {
             const auto res = run_smerdon(o, target, local, seed, threads);
             b.reports[name + "_rmse"] = reports_json(res.reports);
             b.tables[name] = format_smerdon_csv(res);
             if (res.failures() > 0)
               throw Error(ErrorCode::numeric, std::to_string(res.failures()) + " holdout blocks failed");
           }}};
}

StageList plan_bayes(ExperimentSpec& spec, const Loaded& in) {
  auto& p = spec.parameters;
  BayesStudyOptions o;
  const auto cal = p.get_doubles("calibration", {double(o.calibration.first), double(o.calibration.last)});
  if (cal.size() != 2) throw Error(ErrorCode::configuration, "calibration needs two years");
  o.calibration = {static_cast<int>(cal[0]), static_cast<int>(cal[1])};
  o.backcast_first = p.get_int("backcast_first", o.backcast_first);
  o.k = p.get_int("k", o.k);
  std::vector<double> orders;
  for (int a : o.ar_orders) orders.push_back(a);
  o.ar_orders.clear();
  for (double a : p.get_doubles("ar_orders", orders)) o.ar_orders.push_back(static_cast<int>(a));
  o.mcmc.iterations = p.get_int("mcmc.iterations", o.mcmc.iterations);
  o.mcmc.burn_in = p.get_int("mcmc.burn_in", o.mcmc.burn_in);
  o.mcmc.thin = p.get_int("mcmc.thin", o.mcmc.thin);
  o.mcmc.chains = p.get_int("mcmc.chains", o.mcmc.chains);
  o.max_draws = p.get_int("max_draws", o.max_draws);
  o.smoothing = p.get_int("smoothing", o.smoothing);
  for (int a : o.ar_orders) {
    bayes::BayesSpec s;
    s.ar_order = a;
    s.k = o.k;
    s.mcmc = o.mcmc;
    s.validate();
  }
  std::optional<ProxyMatrix> pcs = in.pcs;
  if (!pcs && in.proxies) {
    const auto pca = solvers::pca_decompose(*in.proxies, o.k, o.calibration);
    pcs = pca.scores;
  }
  if (in.target && !pcs) throw Error(ErrorCode::configuration, "real-data backcast needs pcs or proxies");
  const std::optional<AnnualSeries> target = in.target;
  const std::uint64_t seed = spec.seed;
  const unsigned threads = spec.threads;
  return {{"bayes_backcast", [=](Bundle& b) {
             const auto res = run_bayes_study(o, target ? &*target : nullptr, target ? &*pcs : nullptr, seed, threads);
             auto models = nlohmann::json::array();
             for (const auto& m : res.models) {
               const std::string tag = (m.ar_order > 0 ? "ar" + std::to_string(m.ar_order) + "_" : std::string()) +
                                       "pc" + std::to_string(o.k);
               b.reports["posterior_" + tag] = bayes::to_json(m.posterior);
               b.tables["bands_" + tag] = bayes::format_bands_csv(m.raw);
               b.tables["bands_" + tag + "_smoothed"] = bayes::format_bands_csv(m.smoothed);
               models.push_back({{"model", tag},
                                 {"max_rhat", m.posterior.max_rhat},
                                 {"converged", m.posterior.converged},
                                 {"warnings", m.posterior.warnings},
                                 {"beta_share", m.beta_share}});
             }
             b.reports["decomposition"] = {{"smoothing", o.smoothing}, {"models", models}};
             if (res.truth) b.tables["truth"] = data::format_series(*res.truth, "truth");
             for (const auto& m : res.models)
               if (!m.posterior.converged)
                 throw Error(ErrorCode::numeric, "chains did not converge: " + join(m.posterior.warnings, "; "));
           }}};
}

StageList plan_pc_criteria(ExperimentSpec& spec, const Loaded& in) {
  auto& p = spec.parameters;
  const auto thresholds = p.get_doubles("thresholds", {0.7, 0.8, 0.9});
  std::vector<double> eigen = p.get_doubles("eigenvalues", {});
  if (eigen.empty()) {
    ProxyMatrix proxies;
    YearRange period;
    if (in.proxies) {
      proxies = *in.proxies;
      const auto cal = p.get_doubles("period", {double(proxies.start_year()), double(proxies.end_year())});
      if (cal.size() != 2) throw Error(ErrorCode::configuration, "period needs two years");
      period = {static_cast<int>(cal[0]), static_cast<int>(cal[1])};
    } else {
      const TargetSpec t = read_target(p, {});
      const ProxySpec s = read_proxies(p, {93, 2.0, 0.0, 1.0, 0.6});
      const auto target = synthetic_target(t, Seed{spec.seed, 1});
      proxies = signal_proxies(target, s, Seed{spec.seed, 2});
      period = target.years();
    }
    const int k = static_cast<int>(std::min<Eigen::Index>(proxies.n_series(), period.length()));
    const auto pca = solvers::pca_decompose(proxies, k, period);
    eigen.assign(pca.basis.spectrum.data(), pca.basis.spectrum.data() + pca.basis.spectrum.size());
    // round-off can leave tiny negatives or ties out of order in the tail
    for (auto& v : eigen) v = std::max(v, 0.0);
    std::sort(eigen.begin(), eigen.end(), std::greater<>());
  }
  const pcselect::Spectrum spectrum(eigen);
  for (double t : thresholds)
    if (!(t > 0.0 && t <= 1.0)) throw Error(ErrorCode::configuration, "thresholds must lie in (0, 1]");
  return {{"pc_criteria", [=](Bundle& b) {
             const auto rows = pcselect::selection_table(spectrum, thresholds);
             b.tables["pc_selection"] = pcselect::format_table_csv(rows);
             auto sel = nlohmann::json::array();
             for (const auto& r : rows) {
               nlohmann::json e{{"criterion", pcselect::to_string(r.criterion)}, {"k", r.k}};
               e["threshold"] = std::isfinite(r.threshold) ? nlohmann::json(r.threshold) : nlohmann::json(nullptr);
               sel.push_back(e);
             }
             b.reports["pc_criteria"] = {{"eigenvalues", spectrum.eigenvalues()},
                                         {"shares", spectrum.shares()},
                                         {"selections", sel}};
           }}};
}

StageList plan_fidelity(ExperimentSpec& spec, const Loaded& in) {
  auto& p = spec.parameters;
  const int n_boot = p.get_int("bootstrap.n_boot", 200);
  const int block = p.get_int("bootstrap.block_length", 10);
  const int max_lag = p.get_int("max_lag", 10);
  if ((in.proxies.has_value()) != (in.target.has_value()))
    throw Error(ErrorCode::configuration, "sim_fidelity needs both proxies and target, or neither");
  AnnualSeries target;
  ProxyMatrix proxies;
  if (in.proxies) {
    target = *in.target;
    proxies = *in.proxies;
  } else {
    const TargetSpec t = read_target(p, {});
    const ProxySpec s = read_proxies(p, {93, 2.0, 0.0, 1.0, 0.6});
    target = synthetic_target(t, Seed{spec.seed, 1});
    proxies = signal_proxies(target, s, Seed{spec.seed, 2});
  }
  const std::uint64_t seed = spec.seed;
  const unsigned threads = spec.threads;
  return {{"sim_fidelity", [=](Bundle& b) {
             YearRange window = common_years(target, proxies);
             const YearRange avail = available_span(target);
             window = {std::max(window.first, avail.first), std::min(window.last, avail.last)};
             const ProxyMatrix real = proxies.slice(window);
             const AnnualSeries t = target.slice(window);
             pseudoproxy::NoiseSpec sim_spec;
             sim_spec.kind = pseudoproxy::NoiseKind::ar1_empirical;
             sim_spec.empirical = pseudoproxy::fit_ar1_columns(real);
             const ProxyMatrix sim =
                 pseudoproxy::gen_noise_matrix(sim_spec, window.length(), static_cast<int>(real.n_series()),
                                               Seed{seed, 3}, window.first);
             nlohmann::json stats = nlohmann::json::array();
             for (auto name : {diagnostics::StatName::lag1_autocorr, diagnostics::StatName::corr_with_target,
                               diagnostics::StatName::sd_first_diff_standardized}) {
               const bool paired = name == diagnostics::StatName::corr_with_target;
               std::vector<double> ref, test;
               std::vector<std::vector<double>> per_series;
               for (Eigen::Index j = 0; j < real.n_series(); ++j) {
                 const auto col = real.column(j);
                 if (col.count_available() != col.size()) continue;  // bootstrap needs complete series
                 ref.push_back(diagnostics::series_stat(col, name, window, paired ? &t : nullptr).value);
                 diagnostics::BootstrapOptions bo{block, n_boot, Seed{seed, 4}.child(static_cast<std::uint64_t>(j)),
                                                  threads};
                 per_series.push_back(diagnostics::bootstrap_null(
                     col.values(), name, bo, paired ? t.values() : std::span<const double>{}));
               }
               for (Eigen::Index j = 0; j < sim.n_series(); ++j)
                 test.push_back(diagnostics::series_stat(sim.column(j), name, window, paired ? &t : nullptr).value);
               if (ref.empty()) throw Error(ErrorCode::insufficient_data, "no complete proxy series in window");
               std::vector<std::vector<double>> band(static_cast<std::size_t>(n_boot));
               for (std::size_t i = 0; i < band.size(); ++i)
                 for (const auto& s : per_series) band[i].push_back(s[i]);
               const auto qq = diagnostics::qq_compare(ref, test, band);
               const std::string label(diagnostics::to_string(name));
               b.tables["qq_" + label] = diagnostics::format_qq_csv(qq);
               stats.push_back({{"statistic", label},
                                {"ks", qq.ks},
                                {"ks_band", qq.ks_band},
                                {"exceeds_band", qq.exceeds_band()},
                                {"n_real", ref.size()},
                                {"n_simulated", test.size()}});
             }
             const auto ap = diagnostics::acf_pacf(t.values(), max_lag);
             std::ostringstream ss;
             ss << "lag,acf,pacf\n";
             for (int l = 0; l < max_lag; ++l)
               ss << l + 1 << ',' << fmt(ap.acf[static_cast<std::size_t>(l)]) << ','
                  << fmt(ap.pacf[static_cast<std::size_t>(l)]) << '\n';
             b.tables["target_acf"] = ss.str();
             b.reports["sim_fidelity"] = {{"window", to_string(window)},
                                          {"simulator", "AR1(Empirical)"},
                                          {"statistics", stats}};
           }}};
}

}  // namespace

Bundle run(ExperimentSpec spec) {
  const Loaded in = load_inputs(spec.inputs);
  StageList stages;
  switch (spec.recipe) {
    case Recipe::tingley: stages = plan_tingley(spec, in, false); break;
    case Recipe::tingley_perturbed: stages = plan_tingley(spec, in, true); break;
    case Recipe::centering_bug: stages = plan_centering(spec, in); break;
    case Recipe::cps_nulls: stages = plan_nulls(spec, in); break;
    case Recipe::smerdon_snr:
    case Recipe::smerdon_append:
    case Recipe::smerdon_slope: stages = plan_smerdon(spec, in, spec.recipe); break;
    case Recipe::bayes_backcast: stages = plan_bayes(spec, in); break;
    case Recipe::pc_criteria: stages = plan_pc_criteria(spec, in); break;
    case Recipe::sim_fidelity: stages = plan_fidelity(spec, in); break;
  }
  spec.parameters.check_unused();

  Bundle bundle;
  for (auto& [name, body] : stages) {
    StageStatus status{name, {}};
    try {
      body(bundle);
    } catch (const std::exception& e) {
      status.error = e.what();
    }
    bundle.stages.push_back(status);
  }

  const bool synthetic = in.files.empty();
  nlohmann::json stage_json = nlohmann::json::array();
  for (const auto& s : bundle.stages)
    stage_json.push_back({{"name", s.name}, {"status", s.error.empty() ? "ok" : "failed"}, {"error", s.error}});
  nlohmann::json reports = nlohmann::json::array(), tables = nlohmann::json::array();
  for (const auto& [name, doc] : bundle.reports) reports.push_back("reports/" + name + ".json");
  for (const auto& [name, text] : bundle.tables) tables.push_back("tables/" + name + ".csv");
  bundle.manifest = {{"format", "paleorecon.bundle/1"},
                     {"build", build_id()},
                     {"recipe", to_string(spec.recipe)},
                     {"mode", synthetic ? "synthetic" : "real"},
                     {"seed", spec.seed},
                     {"parameters", spec.parameters.resolved()},
                     {"inputs", in.files},
                     {"stages", stage_json},
                     {"failures", bundle.failures()},
                     {"reports", reports},
                     {"tables", tables}};
  return bundle;
}

}  // namespace paleo::experiments
