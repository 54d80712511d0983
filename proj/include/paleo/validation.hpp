#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "paleo/data.hpp"
#include "paleo/pseudoproxy.hpp"
#include "paleo/rng.hpp"
#include "paleo/solvers.hpp"

namespace paleo::validation {

enum class MethodKind {
  intercept,
  arma,
  ols,
  lasso_cv,
  lasso_tingley,
  lasso_fixed,
  elastic_net_cv,
  ridge_cv,
  noncentral_lasso_cv,
  pc_ols,
  cps,
  composite_regression,
};

/// A reconstruction method plus its hyperparameters. The canonical tag()
/// round-trips through parse_method and feeds cell hashes.
struct MethodConfig {
  MethodKind kind = MethodKind::lasso_cv;
  double lambda = 0.0;      // lasso_fixed
  double alpha = 0.5;       // elastic_net_cv
  int components = 4;       // pc_ols
  std::vector<int> groups;  // pc_ols, per proxy column
  solvers::WeightMode weight_mode = solvers::WeightMode::latitude_cosine;  // cps
  int arma_p = 2;
  int arma_q = 0;
  int folds = 5;
  int repetitions = 10;
  int grid_size = 50;

  std::string tag() const;
};

/// "lasso_cv", "lasso_tingley", "lasso:0.1", "enet_cv:0.5", "ridge_cv",
/// "noncentral_lasso_cv", "pc_ols:4", "cps", "cps:abs_correlation",
/// "composite_regression", "arma:2/0", "ols", "intercept". Optional CV
/// settings follow '@': "lasso_cv@folds=5/reps=1/grid=20" (commas also accepted).
MethodConfig parse_method(std::string_view text);

struct TrainedModel {
  solvers::FittedModel model;
  std::uint64_t training_fingerprint = 0;  // hash of every input the fit saw
  std::optional<double> cv_lambda;
};

/// Fits `method` on `train_years` only. The target is read on those years and
/// nowhere else.
TrainedModel fit_method(const MethodConfig& method, const data::ProxyMatrix& proxies,
                        const data::AnnualSeries& target, std::span<const int> train_years,
                        const Seed& seed);

struct HoldoutOptions {
  /// When set, predictions and observations are both turned into anomalies
  /// over the reference period before scoring; anomaly_vs_fitted_bug
  /// reproduces the erroneous variant.
  std::optional<data::CenteringSpec> centering;
};

struct HoldoutResult {
  double rmse = 0.0;
  int n_years = 0;
  std::uint64_t training_fingerprint = 0;
  std::optional<double> cv_lambda;
};

/// Trains on calibration minus block and scores the block.
HoldoutResult holdout_rmse(const MethodConfig& method, const data::ProxyMatrix& proxies,
                           const data::AnnualSeries& target, const data::HoldoutBlock& block,
                           const YearRange& calibration, const Seed& seed,
                           const HoldoutOptions& options = {});

struct BlockRmse {
  data::HoldoutBlock block;
  double rmse = 0.0;  // NaN when the block failed
  int n_years = 0;
  std::string error;
};

struct RmseReport {
  std::string method;
  std::string predictor_source;
  std::vector<BlockRmse> per_block;
  double mean = 0.0;    // over successful blocks
  double median = 0.0;
  int replication_id = 0;
  Seed seed;

  bool ok() const;
  std::size_t failures() const;
};

nlohmann::json to_json(const RmseReport& report);

/// One holdout_rmse per block; block b uses seed.child(b). Per-block errors are
/// recorded in the report instead of thrown.
RmseReport rmse_profile(const MethodConfig& method, const data::ProxyMatrix& proxies,
                        const data::AnnualSeries& target, const data::HoldoutScheme& scheme,
                        const Seed& seed, const std::string& predictor_source = "proxy",
                        const HoldoutOptions& options = {}, unsigned threads = 1);

struct NullGenerator {
  pseudoproxy::NoiseSpec spec;
  int n_series = 0;
  /// Copies latitudes from these columns (needed by latitude-weighted CPS);
  /// also the source of AR1(Empirical) fits when spec.empirical is empty.
  const data::ProxyMatrix* template_proxies = nullptr;
};

struct NullSamples {
  std::string method;
  std::string generator;
  std::vector<data::HoldoutBlock> blocks;
  std::vector<RmseReport> replications;

  /// rmse[block][replication].
  std::vector<std::vector<double>> per_block() const;
  std::vector<double> aggregates() const;  // per-replication block means
};

/// Replication r draws a fresh pseudoproxy matrix from seed.child(r) and runs
/// rmse_profile on it. Replications run in parallel.
NullSamples null_distribution(const MethodConfig& method, const NullGenerator& generator,
                              const data::AnnualSeries& target, const data::HoldoutScheme& scheme,
                              int n_replications, const Seed& seed, unsigned threads = 1);

struct NullBand {
  std::vector<double> lower, median, upper;  // per block
  int n_replications = 0;
  double level = 0.95;
};
NullBand null_band(const NullSamples& null, double level = 0.95);

struct Exceedance {
  int count_le = 0;  // null replicates with RMSE <= real RMSE
  int n = 0;
  double fraction() const;   // count_le / n
  double p_value() const;    // (count_le + 1) / (n + 1)
};

enum class SignificanceMode { per_block, aggregate };

/// per_block: one entry per block; aggregate: a single entry on block means.
std::vector<Exceedance> significance(const RmseReport& real, const NullSamples& null,
                                     SignificanceMode mode);

/// Type 7 sample quantile.
double quantile(std::vector<double> values, double prob);

// Robustness grid ---------------------------------------------------------------

struct NamedTarget {
  std::string name;
  data::AnnualSeries series;
};

struct NullSource {
  std::string label;  // "proxy" for the real matrix
  std::optional<pseudoproxy::NoiseSpec> noise;
  int n_series = 0;
};

struct GridSpec {
  std::vector<MethodConfig> methods;
  std::vector<NullSource> sources;
  std::vector<int> block_lengths{30, 60};
  std::vector<data::BlockFilter> modes{data::BlockFilter::interpolated, data::BlockFilter::extrapolated};
  std::vector<NamedTarget> targets;
  const data::ProxyMatrix* proxies = nullptr;
  YearRange calibration;
  int stride = 1;
  int n_replications = 100;
};

struct CellResult {
  std::string key;  // content hash, hex
  nlohmann::json report;
  std::string error;
  bool cached = false;
};

struct GridResult {
  std::vector<CellResult> cells;
  std::size_t failures() const;
};

/// Full factorial over methods x sources x lengths x modes x targets. Cells
/// are keyed by a hash of their configuration, data fingerprints and the
/// master seed; with a cache directory, existing cells are reused and new
/// ones are written atomically.
GridResult robustness_grid(const GridSpec& spec, std::uint64_t master_seed,
                           const std::optional<std::filesystem::path>& cache_dir, unsigned threads);

/// Flat rows: cell,method,source,block_length,mode,target,replication,
/// block_first,block_last,position,rmse.
std::string grid_csv(const GridResult& grid);

}  // namespace paleo::validation
