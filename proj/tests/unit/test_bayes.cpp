#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "paleo/bayes.hpp"

using namespace paleo;
using namespace paleo::bayes;
using data::AnnualSeries;
using data::ProxyMatrix;

namespace {

ProxyMatrix pc_matrix(const Eigen::MatrixXd& scores, int start) {
  std::vector<data::SeriesMeta> cols(static_cast<std::size_t>(scores.cols()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    cols[j].name = "pc" + std::to_string(j + 1);
    cols[j].first_year = start;
  }
  return ProxyMatrix(start, cols, scores);
}

struct Simulated {
  AnnualSeries y;
  ProxyMatrix pcs;
};

// forward simulation of y_t = a + phi . y_lags + beta . pc_t + sd * e_t over 998-1998
Simulated simulate(double a, std::vector<double> phi, std::vector<double> beta, double sd, std::uint64_t seed) {
  const int n = 1001, k = static_cast<int>(beta.size());
  const Eigen::MatrixXd pc = testing_support::gaussian_matrix(n, std::max(k, 1), seed).leftCols(k);
  const auto e = testing_support::gaussian_matrix(n + 200, 1, seed + 7777);
  std::vector<double> y(n + 200, 0.0);
  for (int t = 0; t < n + 200; ++t) {
    double v = a + sd * e(t, 0);
    for (std::size_t i = 0; i < phi.size(); ++i)
      if (t - 1 - static_cast<int>(i) >= 0) v += phi[i] * y[t - 1 - i];
    if (t >= 200)
      for (int b = 0; b < k; ++b) v += beta[static_cast<std::size_t>(b)] * pc(t - 200, b);
    y[t] = v;
  }
  return {AnnualSeries(998, std::vector<double>(y.begin() + 200, y.end())), pc_matrix(pc, 998)};
}

BayesSpec quick_spec(int ar, int k, std::uint64_t seed) {
  BayesSpec s;
  s.ar_order = ar;
  s.k = k;
  s.mcmc = {2000, 1000, 1, 2, seed};
  return s;
}

const YearRange kCal{1850, 1998};
const YearRange kPast{998, 1849};

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

// posterior with hand-chosen draws (intercept, phi.., beta.., sigma per row)
Posterior manual(int ar, int k, const Eigen::MatrixXd& draws, std::vector<double> anchor) {
  Posterior p;
  p.spec.ar_order = ar;
  p.spec.k = k;
  p.calibration = kCal;
  p.draws = draws;
  p.chains = 1;
  p.kept_per_chain = static_cast<int>(draws.rows());
  p.anchor = std::move(anchor);
  return p;
}

}  // namespace

TEST_CASE("intercept-only reduction") {
  const auto sim = simulate(2.0, {}, {}, 1.5, 1);
  const auto post = fit_bayes(sim.y, sim.pcs, kCal, quick_spec(0, 0, 3));
  std::vector<double> v;
  for (int t = 1850; t <= 1998; ++t) v.push_back(sim.y.at(t));
  const double m = mean_of(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  const double sd = std::sqrt(ss / (v.size() - 1));
  const auto pm = post.mean();
  CHECK(std::abs(pm.intercept - m) < 0.05);
  CHECK(std::abs(pm.innovation_sd / sd - 1.0) < 0.05);
  CHECK(post.names.front() == "intercept");
  CHECK(post.names.back() == "sigma");
  CHECK(post.converged);
  for (Eigen::Index i = 0; i < post.n_draws(); ++i) CHECK(post.draw(i).innovation_sd > 0.0);
}

TEST_CASE("posterior recovers AR2+PC parameters and is deterministic") {
  const auto sim = simulate(0.3, {0.5, 0.2}, {0.8, -0.4, 0.2}, 0.5, 2);
  const auto spec = quick_spec(2, 3, 9);
  const auto a = fit_bayes(sim.y, sim.pcs, kCal, spec, 1);
  const auto b = fit_bayes(sim.y, sim.pcs, kCal, spec, 2);
  CHECK(a.draws == b.draws);
  CHECK(a.n_draws() == 2000);
  const std::vector<double> truth{0.3, 0.5, 0.2, 0.8, -0.4, 0.2, 0.5};
  for (Eigen::Index j = 0; j < 7; ++j) {
    const auto [lo, hi] = a.interval(j, 0.999);
    CHECK(lo < truth[static_cast<std::size_t>(j)]);
    CHECK(truth[static_cast<std::size_t>(j)] < hi);
  }
  auto other = spec;
  other.mcmc.seed = 10;
  CHECK(fit_bayes(sim.y, sim.pcs, kCal, other).draws != a.draws);

  const auto j = to_json(a);
  CHECK(j["diagnostics"].contains("max_rhat"));
  CHECK(j["parameters"].size() == 7);

  BayesSpec bad = spec;
  bad.mcmc.chains = 1;
  CHECK_THROWS_AS(fit_bayes(sim.y, sim.pcs, kCal, bad), Error);
  bad = spec;
  bad.mcmc.burn_in = bad.mcmc.iterations;
  CHECK_THROWS_AS(fit_bayes(sim.y, sim.pcs, kCal, bad), Error);
}

TEST_CASE("deterministic surface when innovations vanish; zero-width bands") {
  const auto sim = simulate(0.0, {}, {1.0, 2.0}, 1.0, 3);
  Eigen::MatrixXd draws(3, 4);
  draws << 0.5, 1.0, -1.0, 0.0,  //
      0.7, 1.2, -0.8, 0.0,       //
      0.6, 1.1, -0.9, 0.0;
  const auto post = manual(0, 2, draws, {});
  const auto ens = backcast_paths(post, sim.pcs, kPast, {0, {1, 1}, 1});
  CHECK(ens.total.cols() == 852);
  CHECK(ens.total.rows() == 3);
  for (Eigen::Index d = 0; d < 3; ++d)
    for (int t = 998; t <= 1849; t += 37) {
      const double surface = draws(d, 0) + draws(d, 1) * sim.pcs.values()(sim.pcs.row(t), 0) +
                             draws(d, 2) * sim.pcs.values()(sim.pcs.row(t), 1);
      CHECK(ens.total(d, t - 998) == doctest::Approx(surface).epsilon(1e-12));
    }
  const auto bands = decompose_uncertainty(ens);
  for (double w : bands.epsilon_only.width()) CHECK(w == 0.0);

  Eigen::MatrixXd one(1, 4);
  one << 0.5, 1.0, -1.0, 0.8;
  const auto single = decompose_uncertainty(backcast_paths(manual(0, 2, one, {}), sim.pcs, kPast, {0, {2, 1}, 1}));
  for (double w : single.beta_only.width()) CHECK(w == 0.0);
  for (double w : single.total.width()) CHECK(w == 0.0);  // one path: its own quantiles
}

TEST_CASE("backcast checks coverage of PC years and ordering") {
  const auto sim = simulate(0.0, {}, {1.0}, 1.0, 4);
  Eigen::MatrixXd one(1, 3);
  one << 0.0, 1.0, 0.5;
  const auto post = manual(0, 1, one, {});
  CHECK_THROWS_AS(backcast_paths(post, sim.pcs, {900, 1849}, {}), Error);
  CHECK_THROWS_AS(backcast_paths(post, sim.pcs, {1800, 1900}, {}), Error);
}

TEST_CASE("total band dominates its components; location equivariance") {
  const auto sim = simulate(0.2, {0.5, 0.25}, {0.6, 0.3}, 0.6, 5);
  const auto post = fit_bayes(sim.y, sim.pcs, kCal, quick_spec(2, 2, 11));
  const auto ens = backcast_paths(post, sim.pcs, kPast, {0, {3, 0}, 1});
  const auto bands = decompose_uncertainty(ens);
  const auto wt = bands.total.width(), wb = bands.beta_only.width(), we = bands.epsilon_only.width();
  int beta_ok = 0;
  for (std::size_t i = 0; i < wt.size(); ++i) {
    beta_ok += wt[i] >= wb[i];
    CHECK(wt[i] >= 0.95 * we[i]);
  }
  // quantile noise at 2000 draws can flip a handful of years
  CHECK(beta_ok >= static_cast<int>(0.98 * wt.size()));

  std::vector<double> shifted_values;
  for (int t = 998; t <= 1998; ++t) shifted_values.push_back(sim.y.at(t) + 5.0);
  const AnnualSeries shifted(998, shifted_values);
  const auto post2 = fit_bayes(shifted, sim.pcs, kCal, quick_spec(2, 2, 11));
  const auto ens2 = backcast_paths(post2, sim.pcs, kPast, {0, {3, 0}, 1});
  const Eigen::RowVectorXd m1 = ens.total.colwise().mean(), m2 = ens2.total.colwise().mean();
  for (Eigen::Index t = 0; t < m1.size(); t += 50) {
    const double se = std::sqrt((ens.total.col(t).array() - m1(t)).square().sum() / (ens.total.rows() - 1) /
                                static_cast<double>(ens.total.rows()));
    CHECK(std::abs(m2(t) - m1(t) - 5.0) < 3.0 * std::sqrt(2.0) * se);
  }
}

TEST_CASE("smoothing") {
  CHECK(moving_average(std::vector<double>{1, 2, 3, 4, 5}, 3) == std::vector<double>{1.5, 2, 3, 4, 4.5});
  CHECK(moving_average(std::vector<double>{1, 2, 3}, 1) == std::vector<double>{1, 2, 3});

  const auto sim = simulate(0.0, {}, {1.0}, 1.0, 6);
  Eigen::MatrixXd draws(2, 3);
  draws << 0.0, 1.0, 0.5, 0.1, 0.9, 0.6;
  const auto ens = backcast_paths(manual(0, 1, draws, {}), sim.pcs, kPast, {0, {4, 0}, 1});
  const auto same = smooth_paths(ens, 1);
  CHECK(same.total == ens.total);
  CHECK(same.epsilon_only == ens.epsilon_only);
  CHECK_THROWS_AS(smooth_paths(ens, 30), Error);
  CHECK_THROWS_AS(smooth_paths(ens, 853), Error);

  const auto sm = smooth_paths(ens, 31);
  CHECK(sm.smoothing_window == 31);
  CHECK(sm.total.rows() == ens.total.rows());
  std::vector<double> r0(static_cast<std::size_t>(ens.total.cols()));
  for (Eigen::Index j = 0; j < ens.total.cols(); ++j) r0[static_cast<std::size_t>(j)] = ens.total(0, j);
  const auto expect = moving_average(r0, 31);
  for (Eigen::Index j = 0; j < ens.total.cols(); ++j) CHECK(sm.total(0, j) == expect[static_cast<std::size_t>(j)]);

  const auto csv = format_bands_csv(decompose_uncertainty(sm));
  CHECK(csv.rfind("year,component,lower,upper\n", 0) == 0);
}

TEST_CASE("beta share of the band grows when AR terms enter") {
  int pass = 0;
  for (std::uint64_t r = 0; r < 20; ++r) {
    std::vector<double> beta(10);
    for (int b = 0; b < 10; ++b) beta[static_cast<std::size_t>(b)] = 0.3 / (1.0 + b);
    const auto sim = simulate(0.1, {0.5, 0.25}, beta, 0.5, 100 + r);
    double share[2];
    for (int ar : {0, 2}) {
      auto spec = quick_spec(ar, 10, 200 + r);
      spec.mcmc = {1000, 500, 1, 2, 200 + r};
      const auto post = fit_bayes(sim.y, sim.pcs, kCal, spec);
      const auto bands = decompose_uncertainty(backcast_paths(post, sim.pcs, kPast, {400, {5, r}, 1}));
      share[ar / 2] = mean_of(bands.beta_only.width()) / mean_of(bands.total.width());
    }
    pass += share[1] > share[0];
  }
  INFO(pass);
  CHECK(pass >= 16);
}
