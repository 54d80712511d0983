#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "paleo/data.hpp"
#include "paleo/rng.hpp"

namespace paleo::bayes {

struct Prior {
  double coefficient_sd = 10.0;  // Normal(0, sd^2) on every regression coefficient
  double shape = 0.01;           // Inverse-Gamma on the innovation variance
  double scale = 0.01;
};

struct McmcSettings {
  int iterations = 5000;
  int burn_in = 2500;
  int thin = 1;
  int chains = 4;
  std::uint64_t seed = 0;
};

/// y_t = alpha + sum_i phi_i y_{t-i} + beta . PC_t + eps_t.
struct BayesSpec {
  int ar_order = 2;  // 0 or 2 in the studies; 1 also works
  int k = 10;        // leading PC columns used
  Prior prior;
  McmcSettings mcmc;

  void validate() const;
};

struct ParameterDraw {
  double intercept = 0.0;
  std::vector<double> ar;
  std::vector<double> beta;
  double innovation_sd = 1.0;
};

struct Posterior {
  BayesSpec spec;
  YearRange calibration;
  std::vector<std::string> names;  // intercept, phi1.., beta1.., sigma
  Eigen::MatrixXd draws;           // rows are draws, chain-major
  int chains = 0;
  int kept_per_chain = 0;
  std::vector<double> rhat;        // split-chain, per parameter
  double max_rhat = 0.0;
  bool converged = false;
  std::vector<std::string> warnings;
  std::vector<double> anchor;      // y on the first ar_order calibration years

  Eigen::Index n_draws() const { return draws.rows(); }
  ParameterDraw draw(Eigen::Index i) const;
  ParameterDraw mean() const;
  /// Equal-tailed interval for one parameter column.
  std::pair<double, double> interval(Eigen::Index parameter, double level) const;
};

/// Blocked Gibbs sampler (coefficients | variance, variance | coefficients)
/// on the calibration rows. Chains run in parallel with seeds mcmc.seed/c.
Posterior fit_bayes(const data::AnnualSeries& y, const data::ProxyMatrix& pcs, const YearRange& calibration,
                    const BayesSpec& spec, unsigned threads = 1);

nlohmann::json to_json(const Posterior& posterior);

/// Path draws x years; column j is years.first + j.
struct PathEnsemble {
  YearRange years;
  Eigen::MatrixXd total;         // parameter draw plus innovations
  Eigen::MatrixXd beta_only;     // parameter draw, no innovations
  Eigen::MatrixXd epsilon_only;  // posterior-mean parameters plus innovations
  int smoothing_window = 1;
};

struct BackcastOptions {
  int max_draws = 0;  // 0 uses every posterior draw; otherwise evenly spaced
  Seed seed;
  unsigned threads = 1;
};

/// Runs the AR recursion in reverse time from the start of calibration down to
/// years.first, with PC scores supplied over those years. The total and
/// epsilon_only paths of a draw share their standard-normal innovations.
PathEnsemble backcast_paths(const Posterior& posterior, const data::ProxyMatrix& pcs, const YearRange& years,
                            const BackcastOptions& options);

struct Band {
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<double> width() const;
};

struct UncertaintyBands {
  YearRange years;
  double level = 0.95;
  Band epsilon_only;
  Band beta_only;
  Band total;
};

/// Per-year equal-tailed quantiles of each path set.
UncertaintyBands decompose_uncertainty(const PathEnsemble& ensemble, double level = 0.95);

/// Centered moving average (odd window, truncated at the ends) applied to
/// each path; bands must then be recomputed from the result.
PathEnsemble smooth_paths(const PathEnsemble& ensemble, int window);
std::vector<double> moving_average(std::span<const double> x, int window);

std::string format_bands_csv(const UncertaintyBands& bands);
/// draw,year,component,value rows.
std::string format_ensemble_csv(const PathEnsemble& ensemble);

}  // namespace paleo::bayes
