#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "paleo/data.hpp"
#include "paleo/rng.hpp"

namespace paleo::solvers {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Training rows assembled from a ProxyMatrix and a target on explicit years.
/// Columns with a missing value on any training year are dropped.
struct Design {
  MatrixXd x;
  VectorXd y;
  std::vector<int> years;
  std::vector<Index> columns;  // source column of each x column
  std::vector<Index> dropped;
  std::vector<double> latitudes;
  std::uint64_t fingerprint = 0;  // over x, y, years and column ids
};

Design make_design(const data::ProxyMatrix& proxies, const data::AnnualSeries& target,
                   std::span<const int> years);

// Linear models ---------------------------------------------------------------

enum class LinearMethod { intercept, ols, lasso, elastic_net, ridge, noncentral_lasso, pc_ols };
std::string_view to_string(LinearMethod method);

struct Penalty {
  double lambda = 0.0;
  double alpha = 1.0;  // 1 = lasso, 0 = ridge
};

/// Linear predictor y = intercept + x . coefficients on the original scale.
/// Penalized fits standardize columns internally (mean 0, population sd 1
/// over the calibration rows); std_coefficients are on that scale.
struct LinearModel {
  LinearMethod method = LinearMethod::ols;
  double intercept = 0.0;
  VectorXd coefficients;
  VectorXd std_coefficients;
  VectorXd column_means;
  VectorXd column_sds;
  Penalty penalty;
  bool noncentral = false;
  int components = 0;  // pc_ols: number of pooled principal components
  YearRange calibration;
  std::vector<Index> source_columns;
  std::vector<Index> dropped;
  int sweeps = 0;
  bool converged = true;
  std::uint64_t input_fingerprint = 0;

  VectorXd predict(const MatrixXd& x) const;
  Index active_count() const;
};

struct CdOptions {
  int max_sweeps = 10000;
  double tolerance = 1e-9;  // max standardized coefficient change
  /// Scale columns by their root mean square without centering and fit an
  /// explicit unpenalized intercept coordinate.
  bool noncentral = false;
  /// Pure lasso (alpha = 1) paths use the exact homotopy instead of
  /// coordinate descent; sweeps then counts homotopy steps.
  bool exact_lasso = true;
};

/// Minimizes (1/2n)|y - b0 - Xs b|^2 + lambda (alpha |b|_1 + (1-alpha)/2 |b|^2).
LinearModel fit_elastic_net(const MatrixXd& x, const VectorXd& y, double lambda, double alpha,
                            const CdOptions& options = {});
LinearModel fit_lasso(const MatrixXd& x, const VectorXd& y, double lambda,
                      const CdOptions& options = {});
/// Warm-started path over `lambdas`, which must be nonincreasing.
std::vector<LinearModel> fit_path(const MatrixXd& x, const VectorXd& y,
                                  std::span<const double> lambdas, double alpha,
                                  const CdOptions& options = {});

/// Smallest lambda at which every penalized coefficient is zero.
double lambda_max(const MatrixXd& x, const VectorXd& y, double alpha = 1.0, bool noncentral = false);
/// 0.05 * lambda_max, the fixed rule used in the Tingley simulation.
double tingley_lambda(const MatrixXd& x, const VectorXd& y);
/// Log-spaced, decreasing from lambda_max to min_ratio * lambda_max.
std::vector<double> lambda_grid(const MatrixXd& x, const VectorXd& y, int size = 50,
                                double min_ratio = 1e-3, double alpha = 1.0);

struct KktReport {
  double max_violation = 0.0;
  double objective = 0.0;
};
/// Recomputes the optimality conditions of a penalized fit from scratch.
KktReport kkt_check(const MatrixXd& x, const VectorXd& y, const LinearModel& model);

struct CvOptions {
  int folds = 5;
  int repetitions = 10;
  double alpha = 1.0;
  std::vector<double> grid;  // empty: lambda_grid(grid_size, min_ratio)
  int grid_size = 50;
  double min_ratio = 1e-3;
  CdOptions cd;
};

struct CvResult {
  double lambda = 0.0;
  std::size_t best_index = 0;
  std::vector<double> grid;
  std::vector<double> mean_mse;
  std::vector<double> se;
};

/// Repeated k-fold cross-validation over a lambda grid. Ties go to the larger
/// lambda.
CvResult select_lambda_cv(const MatrixXd& x, const VectorXd& y, const CvOptions& options,
                          const Seed& seed);

LinearModel fit_ols(const MatrixXd& x, const VectorXd& y);
LinearModel fit_intercept(const VectorXd& y);

// Principal components ------------------------------------------------------------

struct PcBasis {
  MatrixXd loadings;           // series x K
  MatrixXd scores;             // decomposition rows x K
  VectorXd eigenvalues;        // K, nonincreasing: sample variances of the scores
  VectorXd spectrum;           // every eigenvalue of the correlation matrix
  VectorXd column_means;
  VectorXd column_sds;
  std::vector<int> group_labels;

  /// Standardizes with the decomposition moments and applies the loadings.
  MatrixXd project(const MatrixXd& x) const;
};

/// Columns are standardized (sample sd) before the decomposition.
PcBasis pca_decompose(const MatrixXd& x, int k);

struct PcaResult {
  PcBasis basis;
  std::vector<Index> columns;  // source columns entering the decomposition
  data::ProxyMatrix scores;    // years x K; missing where any source column is
};

/// Decomposes over `period` using the columns complete there, then extends
/// the scores to every year of the matrix where those columns exist.
PcaResult pca_decompose(const data::ProxyMatrix& proxies, int k, const YearRange& period);

/// Applies a fitted basis to an arbitrary matrix (using `columns` as inputs).
data::ProxyMatrix pc_scores(const data::ProxyMatrix& proxies, const PcBasis& basis,
                            std::span<const Index> columns);

/// OLS on the leading K principal components (per group when labels are
/// given; the per-group components are pooled before the regression).
LinearModel fit_pc_ols(const MatrixXd& x, const VectorXd& y, int k,
                       std::span<const int> groups = {});

// Composite plus scale -----------------------------------------------------------

enum class WeightMode { latitude_cosine, abs_correlation, uniform };
enum class CpsScale { variance_match, regression };
std::string_view to_string(WeightMode mode);
WeightMode parse_weight_mode(std::string_view text);

struct CpsModel {
  VectorXd weights;
  VectorXd column_means;
  VectorXd column_sds;
  double composite_mean = 0.0;
  double composite_sd = 1.0;
  double target_mean = 0.0;
  double target_sd = 1.0;
  WeightMode weight_mode = WeightMode::latitude_cosine;
  CpsScale scale = CpsScale::variance_match;
  double slope = 0.0;      // regression scale only
  double offset = 0.0;     // regression scale only
  YearRange calibration;
  std::vector<Index> source_columns;
  std::vector<Index> dropped;
  std::uint64_t input_fingerprint = 0;

  VectorXd composite(const MatrixXd& x) const;
  VectorXd predict(const MatrixXd& x) const;
};

/// variance_match rescales the composite to the target's calibration mean and
/// sd; regression is "composite regression" (OLS of y on the composite).
CpsModel fit_cps(const MatrixXd& x, const VectorXd& y, std::span<const double> latitudes,
                 WeightMode mode, CpsScale scale = CpsScale::variance_match);

// ARMA --------------------------------------------------------------------------------

struct ArmaModel {
  int p = 0;
  int q = 0;
  std::vector<double> ar;
  std::vector<double> ma;
  double intercept = 0.0;  // process mean
  double innovation_sd = 1.0;
  double log_likelihood = 0.0;
  bool projected = false;  // conditional-sum-of-squares fit was nonstationary
  YearRange calibration;

  /// gamma(0..max_lag) of the fitted process.
  std::vector<double> autocovariances(int max_lag) const;
  bool stationary() const;
};

/// Conditional sum of squares, then exact Gaussian likelihood refinement.
ArmaModel fit_arma(std::span<const double> y, int p, int q);
/// Same, on the available years of `series` inside `window`; interior gaps
/// are skipped by the likelihood rather than filled.
ArmaModel fit_arma(const data::AnnualSeries& series, const YearRange& window, int p, int q);

/// Conditional expectation of the process on `years` given every available
/// value of `history` (both-sided for interior gaps).
data::AnnualSeries predict_arma(const ArmaModel& model, const data::AnnualSeries& history,
                                const YearRange& years);

/// AR polynomial 1 - sum phi_i z^i has all roots outside the unit circle.
bool ar_stationary(std::span<const double> phi);

// Uniform prediction surface -----------------------------------------------------

using FittedModel = std::variant<LinearModel, CpsModel, ArmaModel>;

struct PredictionInputs {
  const data::ProxyMatrix* proxies = nullptr;
  const data::AnnualSeries* history = nullptr;
};

/// Predictions on `years`; years whose inputs are missing come back masked.
data::AnnualSeries predict(const FittedModel& model, const PredictionInputs& inputs,
                           const YearRange& years);

std::string method_tag(const FittedModel& model);

/// Versioned JSON document (method, hyperparameters, coefficients,
/// calibration range, input fingerprint).
nlohmann::json to_json(const FittedModel& model);
FittedModel model_from_json(const nlohmann::json& doc);

}  // namespace paleo::solvers
