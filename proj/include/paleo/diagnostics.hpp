#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "paleo/data.hpp"
#include "paleo/rng.hpp"

namespace paleo::diagnostics {

enum class StatName { lag1_autocorr, corr_with_target, sd_first_diff_standardized };
std::string_view to_string(StatName name);
StatName parse_stat_name(std::string_view text);

struct SeriesStat {
  StatName name = StatName::lag1_autocorr;
  double value = 0.0;
  std::string series_id;
  YearRange window;
};

/// Statistic of a complete sample. lag1_autocorr is the Pearson correlation
/// of (x_t, x_{t+1}); corr_with_target needs `target` of equal length.
double compute_stat(std::span<const double> x, StatName name, std::span<const double> target = {});

/// Same on the available years of `window`. Lagged and paired statistics use
/// only pairs where both values exist. Needs at least 10 values.
SeriesStat series_stat(const data::AnnualSeries& series, StatName name, const YearRange& window,
                       const data::AnnualSeries* target = nullptr, std::string series_id = {});

struct AcfPacf {
  std::vector<double> acf;   // lags 1..max_lag
  std::vector<double> pacf;  // lags 1..max_lag
};
AcfPacf acf_pacf(std::span<const double> x, int max_lag);

/// Stationary bootstrap index draw: geometric block lengths with the given
/// mean, wrapping around the end. A mean at least n returns 0..n-1.
std::vector<std::size_t> stationary_bootstrap_indices(std::size_t n, double mean_block, Engine& engine);

struct BootstrapOptions {
  int block_length = 10;
  int n_boot = 1000;
  Seed seed;
  unsigned threads = 1;
};

/// Bootstrap distribution of a statistic for one series; the target, if
/// given, is resampled with the same indices.
std::vector<double> bootstrap_null(std::span<const double> x, StatName name, const BootstrapOptions& options,
                                   std::span<const double> target = {});

/// Per series: result[s] is the bootstrap sample of series s, using
/// seed.child(s). The pooled variant concatenates them.
std::vector<std::vector<double>> bootstrap_null_set(const std::vector<std::vector<double>>& series,
                                                    StatName name, const BootstrapOptions& options);

struct QqReport {
  std::vector<double> probs;
  std::vector<double> reference;
  std::vector<double> test;
  std::vector<double> band_lo;
  std::vector<double> band_hi;
  double ks = 0.0;
  double ks_band = 0.0;  // 95th percentile of KS(band sample, reference)
  bool exceeds_band() const { return ks > ks_band; }
};

/// Two-sample Kolmogorov-Smirnov distance.
double ks_distance(std::vector<double> a, std::vector<double> b);

/// Quantile pairs on the 1%..99% grid. `band` holds replicate samples of the
/// reference population (e.g. bootstrap or Monte Carlo draws); their
/// quantiles give a 95% envelope and their KS distances to the reference give
/// the KS band.
QqReport qq_compare(std::span<const double> reference, std::span<const double> test,
                    const std::vector<std::vector<double>>& band = {});

std::string format_qq_csv(const QqReport& report);

}  // namespace paleo::diagnostics
