#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "paleo/bayes.hpp"
#include "paleo/data.hpp"
#include "paleo/pseudoproxy.hpp"
#include "paleo/rng.hpp"
#include "paleo/validation.hpp"

namespace paleo::experiments {

/// Embedded in every manifest and printed by --version.
std::string build_id();

enum class Recipe {
  cps_nulls,
  tingley,
  tingley_perturbed,
  smerdon_snr,
  smerdon_append,
  smerdon_slope,
  centering_bug,
  bayes_backcast,
  pc_criteria,
  sim_fidelity,
};
std::string_view to_string(Recipe recipe);
Recipe parse_recipe(std::string_view text);

/// Recipe-specific key=value settings. Every getter records the value it
/// used (default or not) so the manifest lists the resolved parameters;
/// check_unused() rejects typos.
class Parameters {
 public:
  Parameters() = default;
  explicit Parameters(std::map<std::string, std::string> values);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  int get_int(const std::string& key, int fallback);
  double get_double(const std::string& key, double fallback);
  std::string get_string(const std::string& key, const std::string& fallback);
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback);
  std::vector<std::string> get_strings(const std::string& key, const std::vector<std::string>& fallback);

  const std::map<std::string, std::string>& resolved() const noexcept { return resolved_; }
  void check_unused() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> resolved_;
  std::set<std::string> used_;
};

// Synthetic stand-ins ------------------------------------------------------------

/// AR(2) draw standardized to mean 0 and sd 1 over its span, plus an optional
/// linear ramp rising by `trend` sd units across the span.
struct TargetSpec {
  int first_year = 1850;
  int n_years = 149;
  double phi1 = 0.6;
  double phi2 = 0.25;
  double trend = 0.0;

  YearRange years() const { return {first_year, first_year + n_years - 1}; }
};
data::AnnualSeries synthetic_target(const TargetSpec& spec, const Seed& seed);

/// x_{t,i} = beta_i y_t + omega_{t,i} with beta_i ~ N(slope_mean, sigma_beta)
/// and omega an AR(1) with coefficient noise_phi and marginal sd sigma_omega
/// (white when noise_phi is 0). Columns get northern latitudes spread over
/// 5..75 degrees.
struct ProxySpec {
  int n_series = 93;
  double sigma_omega = 1.0;
  double sigma_beta = 0.0;
  double slope_mean = 1.0;
  double noise_phi = 0.0;
};
data::ProxyMatrix signal_proxies(const data::AnnualSeries& target, const ProxySpec& spec, const Seed& seed);

/// Synthetic local temperatures: column j = a_j y + sqrt(1 - a_j^2) u_j with
/// a_j spread over [0.3, 0.8] and u_j a unit AR(1)(0.5).
data::ProxyMatrix synthetic_local_temperatures(const data::AnnualSeries& target, int n_local, const Seed& seed);

/// Null generator from a short label: white, ar1:PHI, ar1_empirical, brownian.
pseudoproxy::NoiseSpec parse_null(std::string_view label);

// Tingley simulation -------------------------------------------------------------

struct TingleyOptions {
  TargetSpec target;
  int n_series = 200;
  std::vector<double> sigma_omega{0.25, 1.0, 4.0};
  std::vector<double> sigma_beta{0.0};
  int replicates = 20;
  int block_length = 30;
  int stride = 30;
  std::vector<validation::MethodConfig> methods;  // empty: lasso_cv, lasso_tingley, composite_regression
};

struct ComparisonRow {
  int replicate = 0;
  double sigma_beta = 0.0;
  double sigma_omega = 0.0;
  std::string method;
  double rmse = 0.0;  // mean over holdout blocks
  std::size_t failures = 0;
};

struct ComparisonResult {
  std::vector<ComparisonRow> rows;
  std::vector<validation::RmseReport> reports;

  /// Per-replicate RMSEs of one cell, in replicate order.
  std::vector<double> rmse(const std::string& method, double sigma_beta, double sigma_omega) const;
  double mean_rmse(const std::string& method, double sigma_beta, double sigma_omega) const;
  std::size_t failures() const;
};

/// Every replicate draws one target (unless `real_target` is given) and one
/// proxy noise realization; all sigma settings reuse those draws.
ComparisonResult run_tingley(const TingleyOptions& options, const data::AnnualSeries* real_target,
                             std::uint64_t seed, unsigned threads);

std::string format_comparison_csv(const ComparisonResult& result);

// Centering bug ------------------------------------------------------------------

struct CenteringOptions {
  TargetSpec target{1850, 149, 0.6, 0.25, 3.0};
  ProxySpec proxies{30, 4.0, 0.0, 1.0, 0.0};
  YearRange reference{1919, 1998};
  std::vector<validation::MethodConfig> methods;  // empty: ols, lasso_cv
  int replicates = 50;
  int block_length = 30;
  int stride = 30;
  data::BlockFilter filter = data::BlockFilter::all;
};

struct CenteringRow {
  int replicate = 0;
  std::string method;
  double rmse_correct = 0.0;  // aggregate over blocks
  double rmse_bug = 0.0;
};

struct CenteringResult {
  std::vector<CenteringRow> rows;
  std::size_t failures = 0;
};

CenteringResult run_centering(const CenteringOptions& options, const data::AnnualSeries* real_target,
                              const data::ProxyMatrix* real_proxies, std::uint64_t seed, unsigned threads);
std::string format_centering_csv(const CenteringResult& result);

// Null benchmarks -----------------------------------------------------------------

struct NullStudyOptions {
  TargetSpec target{1850, 149, 0.7, 0.2, 2.0};
  ProxySpec proxies{93, 10.0, 0.0, 1.0, 0.85};
  std::vector<validation::MethodConfig> methods;  // empty: cps, lasso_cv
  std::vector<std::string> nulls{"white", "ar1:0.25", "ar1:0.4", "ar1_empirical", "brownian"};
  int n_null = 100;
  int replicates = 1;
  int block_length = 30;
  int stride = 30;
  data::BlockFilter filter = data::BlockFilter::interpolated;
};

struct NullStudyRow {
  int replicate = 0;
  std::string method;
  std::string null;
  double real_rmse = 0.0;  // mean over blocks
  validation::Exceedance exceedance;
  double null_median = 0.0;
};

struct NullStudyResult {
  std::vector<NullStudyRow> rows;
  /// Replicate 0 only: real reports per method and null samples per
  /// method x generator, for bands and per-block tables.
  std::vector<validation::RmseReport> real;
  std::vector<validation::NullSamples> samples;
  std::size_t failures = 0;

  const NullStudyRow& row(int replicate, const std::string& method, const std::string& null) const;
};

NullStudyResult run_null_study(const NullStudyOptions& options, const data::AnnualSeries* real_target,
                               const data::ProxyMatrix* real_proxies, std::uint64_t seed, unsigned threads);
std::string format_null_study_csv(const NullStudyResult& result);
/// block_first,block_last,method,null,lower,median,upper,real rows for replicate 0.
std::string format_null_bands_csv(const NullStudyResult& result);

// Smerdon corruption tests --------------------------------------------------------

struct SmerdonOptions {
  TargetSpec target;
  int n_local = 283;
  std::vector<pseudoproxy::CorruptionSpec> corruptions;
  std::vector<validation::MethodConfig> methods;  // empty: lasso_cv, cps
  int block_length = 30;
  int stride = 30;
};

struct SmerdonRow {
  std::string corruption;
  std::string method;
  double in_sample_rmse = 0.0;
  double holdout_rmse = 0.0;  // mean over blocks
  std::size_t failures = 0;
};

struct SmerdonResult {
  std::vector<SmerdonRow> rows;
  std::vector<validation::RmseReport> reports;
  std::size_t failures() const;
};

/// Default corruption lists per recipe: snr (86% red, 94% white), append
/// (283 + 283 white noise columns) and slope (random slopes).
std::vector<pseudoproxy::CorruptionSpec> default_corruptions(Recipe recipe);

SmerdonResult run_smerdon(const SmerdonOptions& options, const data::AnnualSeries* real_target,
                          const data::ProxyMatrix* real_local, std::uint64_t seed, unsigned threads);
std::string format_smerdon_csv(const SmerdonResult& result);

// Bayes backcast -------------------------------------------------------------------

/// Parameters used to simulate from the AR+PC model.
struct BayesTruth {
  double intercept = 0.0;
  std::vector<double> ar{0.4, 0.2};
  std::vector<double> beta;
  double innovation_sd = 0.5;
};

/// Simulates y on calibration by the forward recursion and on
/// [backcast_first, calibration.first - 1] by the reverse-time recursion the
/// backcast uses. `pcs` must cover both spans.
data::AnnualSeries simulate_ar_pc(const BayesTruth& truth, const data::ProxyMatrix& pcs, const YearRange& calibration,
                                  int backcast_first, const Seed& seed);

/// k unit-variance AR(1)(phi) columns named PC1..PCk.
data::ProxyMatrix synthetic_pcs(const YearRange& years, int k, double phi, const Seed& seed);

struct BayesStudyOptions {
  YearRange calibration{1850, 1998};
  int backcast_first = 1000;
  int k = 10;
  std::vector<int> ar_orders{2, 0};
  bayes::McmcSettings mcmc{2000, 1000, 1, 4, 0};
  int max_draws = 1000;
  int smoothing = 31;
};

struct BayesModelResult {
  int ar_order = 0;
  bayes::Posterior posterior;
  bayes::UncertaintyBands raw;
  bayes::UncertaintyBands smoothed;
  double beta_share = 0.0;  // mean beta_only width / mean total width (raw)
};

struct BayesStudyResult {
  std::vector<BayesModelResult> models;
  std::optional<data::AnnualSeries> truth;  // synthetic mode only
};

BayesStudyResult run_bayes_study(const BayesStudyOptions& options, const data::AnnualSeries* real_target,
                                 const data::ProxyMatrix* real_pcs, std::uint64_t seed, unsigned threads);

// Bundles -------------------------------------------------------------------------

struct Inputs {
  std::optional<std::filesystem::path> target;
  std::optional<std::filesystem::path> proxies;
  std::optional<std::filesystem::path> metadata;
  std::optional<std::filesystem::path> local_temperatures;
  std::optional<std::filesystem::path> pcs;
};

struct ExperimentSpec {
  Recipe recipe = Recipe::tingley;
  Inputs inputs;
  Parameters parameters;
  std::uint64_t seed = 0;
  unsigned threads = 1;  // never recorded: bundles must not depend on it
};

struct StageStatus {
  std::string name;
  std::string error;  // empty on success
};

struct Bundle {
  nlohmann::json manifest;
  std::map<std::string, nlohmann::json> reports;  // reports/<name>.json
  std::map<std::string, std::string> tables;      // tables/<name>.csv
  std::vector<StageStatus> stages;

  std::size_t failures() const;
  /// Writes manifest.json, reports/ and tables/ under `dir`.
  void write(const std::filesystem::path& dir) const;
};

/// Checks inputs and parameters (configuration errors throw), then runs the
/// recipe stage by stage; a failing stage is recorded and later stages go on.
Bundle run(ExperimentSpec spec);

/// Serialization used for every JSON file in a bundle.
std::string dump_json(const nlohmann::json& doc);

}  // namespace paleo::experiments
