#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "paleo/solvers.hpp"

using namespace paleo;
using namespace paleo::solvers;
using testing_support::gaussian_matrix;

namespace {

struct Problem {
  MatrixXd x;
  VectorXd y;
};

Problem sparse_problem(int n, int p, std::uint64_t seed) {
  Problem pr;
  pr.x = gaussian_matrix(n, p, seed);
  pr.x.col(1) = 0.6 * pr.x.col(0) + 0.8 * pr.x.col(1);  // some collinearity
  VectorXd beta = VectorXd::Zero(p);
  beta(0) = 2.0;
  if (p > 3) beta(3) = -1.5;
  if (p > 5) beta(5) = 0.7;
  pr.y = pr.x * beta + 0.5 * gaussian_matrix(n, 1, seed + 1).col(0);
  pr.y.array() += 3.0;
  return pr;
}

// Proximal gradient (FISTA) on the same standardized objective; independent
// of the coordinate-descent code paths.
VectorXd fista(const MatrixXd& x, const VectorXd& y, double lambda, double alpha) {
  const double n = static_cast<double>(x.rows());
  MatrixXd xs = x.rowwise() - x.colwise().mean();
  for (Index j = 0; j < xs.cols(); ++j) xs.col(j) /= std::sqrt(xs.col(j).squaredNorm() / n);
  const VectorXd yc = y.array() - y.mean();
  const double lip = Eigen::SelfAdjointEigenSolver<MatrixXd>(xs.transpose() * xs / n).eigenvalues().maxCoeff() +
                     lambda * (1.0 - alpha);
  VectorXd b = VectorXd::Zero(xs.cols()), z = b, prev = b;
  double t = 1.0;
  for (int it = 0; it < 200000; ++it) {
    const VectorXd grad = -xs.transpose() * (yc - xs * z) / n + lambda * (1.0 - alpha) * z;
    VectorXd u = z - grad / lip;
    for (Index j = 0; j < u.size(); ++j) {
      const double g = lambda * alpha / lip;
      u(j) = u(j) > g ? u(j) - g : (u(j) < -g ? u(j) + g : 0.0);
    }
    prev = b;
    b = u;
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    z = b + ((t - 1.0) / tn) * (b - prev);
    t = tn;
    if (it > 100 && (b - prev).cwiseAbs().maxCoeff() < 1e-14) break;
  }
  return b;
}

double objective(const MatrixXd& x, const VectorXd& y, const VectorXd& b_std, double lambda, double alpha) {
  const double n = static_cast<double>(x.rows());
  MatrixXd xs = x.rowwise() - x.colwise().mean();
  for (Index j = 0; j < xs.cols(); ++j) xs.col(j) /= std::sqrt(xs.col(j).squaredNorm() / n);
  const VectorXd r = (y.array() - y.mean()).matrix() - xs * b_std;
  return r.squaredNorm() / (2 * n) + lambda * (alpha * b_std.lpNorm<1>() + 0.5 * (1 - alpha) * b_std.squaredNorm());
}

}  // namespace

TEST_CASE("lasso matches a proximal-gradient oracle") {
  const auto pr = sparse_problem(80, 12, 11);
  const double lmax = lambda_max(pr.x, pr.y);
  for (double frac : {0.5, 0.1, 0.02}) {
    const double lam = frac * lmax;
    const auto m = fit_lasso(pr.x, pr.y, lam);
    const VectorXd ref = fista(pr.x, pr.y, lam, 1.0);
    CHECK(m.converged);
    CHECK((m.std_coefficients - ref).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(objective(pr.x, pr.y, m.std_coefficients, lam, 1.0) -
                   objective(pr.x, pr.y, ref, lam, 1.0)) < 1e-10);
  }
}

TEST_CASE("elastic net matches the oracle and ridge the closed form") {
  const auto pr = sparse_problem(50, 8, 3);
  const double lam = 0.3;
  const auto en = fit_elastic_net(pr.x, pr.y, lam, 0.5);
  CHECK((en.std_coefficients - fista(pr.x, pr.y, lam, 0.5)).cwiseAbs().maxCoeff() < 1e-6);

  const double n = 50.0;
  MatrixXd xs = pr.x.rowwise() - pr.x.colwise().mean();
  for (Index j = 0; j < xs.cols(); ++j) xs.col(j) /= std::sqrt(xs.col(j).squaredNorm() / n);
  const VectorXd yc = pr.y.array() - pr.y.mean();
  const MatrixXd a = xs.transpose() * xs / n + lam * MatrixXd::Identity(8, 8);
  const VectorXd closed = a.ldlt().solve(xs.transpose() * yc / n);
  const auto ridge = fit_elastic_net(pr.x, pr.y, lam, 0.0);
  CHECK(ridge.method == LinearMethod::ridge);
  CHECK((ridge.std_coefficients - closed).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("KKT conditions hold along a warm-started path") {
  const auto pr = sparse_problem(60, 40, 5);
  const auto grid = lambda_grid(pr.x, pr.y, 30, 1e-3);
  const auto path = fit_path(pr.x, pr.y, grid, 1.0);
  REQUIRE(path.size() == grid.size());
  for (std::size_t k = 0; k < path.size(); ++k) {
    CHECK(path[k].converged);
    CHECK(kkt_check(pr.x, pr.y, path[k]).max_violation < 1e-6);
    // the path solution equals a cold start
    const auto cold = fit_lasso(pr.x, pr.y, grid[k]);
    CHECK((cold.coefficients - path[k].coefficients).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("lambda_max is the exact zero threshold") {
  const auto pr = sparse_problem(70, 10, 9);
  const double lmax = lambda_max(pr.x, pr.y);
  CHECK(fit_lasso(pr.x, pr.y, lmax).active_count() == 0);
  CHECK(fit_lasso(pr.x, pr.y, lmax * 1.5).active_count() == 0);
  CHECK(fit_lasso(pr.x, pr.y, lmax * (1 - 1e-6)).active_count() >= 1);
  CHECK(tingley_lambda(pr.x, pr.y) == doctest::Approx(0.05 * lmax).epsilon(1e-15));
  const auto grid = lambda_grid(pr.x, pr.y, 50, 1e-3);
  CHECK(grid.front() == doctest::Approx(lmax));
  CHECK(grid.back() == doctest::Approx(1e-3 * lmax));
  for (std::size_t k = 1; k < grid.size(); ++k) CHECK(grid[k] < grid[k - 1]);
}

TEST_CASE("active count is monotone in lambda for an orthogonal design and saturates at zero") {
  // Orthogonal columns: the lasso path is monotone.
  MatrixXd q = Eigen::HouseholderQR<MatrixXd>(gaussian_matrix(40, 6, 21)).householderQ() * MatrixXd::Identity(40, 6);
  q = q.rowwise() - q.colwise().mean();
  const VectorXd y = q * (VectorXd(6) << 3, -2, 1, 0.5, -0.25, 0.1).finished();
  const auto grid = lambda_grid(q, y, 40, 1e-4);
  const auto path = fit_path(q, y, grid, 1.0);
  for (std::size_t k = 1; k < path.size(); ++k) CHECK(path[k].active_count() >= path[k - 1].active_count());
  const auto pr = sparse_problem(30, 10, 2);
  CHECK(fit_lasso(pr.x, pr.y, 0.0).active_count() == 10);
}

TEST_CASE("orthogonal response gives lambda_max zero") {
  MatrixXd x(4, 1);
  x << 1, -1, 1, -1;
  VectorXd y(4);
  y << 1, 1, -1, -1;
  CHECK(lambda_max(x, y) == doctest::Approx(0.0));
  CHECK_THROWS_AS(lambda_max(x, VectorXd::Constant(4, 2.0)), paleo::Error);
}

TEST_CASE("constant columns are dropped, not fatal") {
  auto pr = sparse_problem(40, 5, 4);
  pr.x.col(2).setConstant(7.0);
  const auto m = fit_lasso(pr.x, pr.y, 0.05);
  REQUIRE(m.dropped.size() == 1);
  CHECK(m.dropped[0] == 2);
  CHECK(m.coefficients(2) == 0.0);
}

TEST_CASE("non-finite inputs are numeric errors") {
  auto pr = sparse_problem(20, 3, 4);
  pr.x(3, 1) = std::nan("");
  try {
    fit_lasso(pr.x, pr.y, 0.1);
    FAIL("expected an error");
  } catch (const paleo::Error& e) {
    CHECK(e.code() == ErrorCode::numeric);
  }
}

TEST_CASE("noncentral lasso keeps an unpenalized intercept") {
  const auto pr = sparse_problem(60, 6, 8);
  CdOptions opts;
  opts.noncentral = true;
  const auto m = fit_lasso(pr.x, pr.y, 0.1, opts);
  CHECK(m.method == LinearMethod::noncentral_lasso);
  CHECK(m.converged);
  CHECK(kkt_check(pr.x, pr.y, m).max_violation < 1e-6);
  const auto top = fit_lasso(pr.x, pr.y, lambda_max(pr.x, pr.y, 1.0, true) * 1.0001, opts);
  CHECK(top.active_count() == 0);
  CHECK(top.intercept == doctest::Approx(pr.y.mean()));
}

TEST_CASE("cross-validation is seeded and prefers the larger lambda on ties") {
  const auto pr = sparse_problem(60, 15, 13);
  CvOptions opts;
  opts.repetitions = 3;
  opts.grid_size = 20;
  const auto a = select_lambda_cv(pr.x, pr.y, opts, {42, 0});
  const auto b = select_lambda_cv(pr.x, pr.y, opts, {42, 0});
  CHECK(a.lambda == b.lambda);
  CHECK(a.mean_mse == b.mean_mse);
  CHECK(a.mean_mse[a.best_index] == *std::min_element(a.mean_mse.begin(), a.mean_mse.end()));
  // true signal is strong: the chosen lambda must beat the null model
  CHECK(a.mean_mse[a.best_index] < a.mean_mse.front());

  CvOptions flat = opts;
  const double lmax = lambda_max(pr.x, pr.y);
  flat.grid = {5 * lmax, 4 * lmax, 3 * lmax};  // all-zero fits on every fold
  const auto c = select_lambda_cv(pr.x, pr.y, flat, {1, 0});
  CHECK(c.best_index == 0);
}

TEST_CASE("OLS agrees with the normal equations") {
  const auto pr = sparse_problem(50, 4, 17);
  MatrixXd d(50, 5);
  d << VectorXd::Ones(50), pr.x;
  const VectorXd ref = (d.transpose() * d).ldlt().solve(d.transpose() * pr.y);
  const auto m = fit_ols(pr.x, pr.y);
  CHECK(m.intercept == doctest::Approx(ref(0)).epsilon(1e-10));
  CHECK((m.coefficients - ref.tail(4)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(fit_intercept(pr.y).intercept == doctest::Approx(pr.y.mean()));
}

TEST_CASE("PCA reproduces the correlation eigen-decomposition") {
  const MatrixXd x = gaussian_matrix(100, 6, 31) * gaussian_matrix(6, 6, 32);
  const auto b = pca_decompose(x, 3);
  MatrixXd z = x.rowwise() - x.colwise().mean();
  for (Index j = 0; j < 6; ++j) z.col(j) /= std::sqrt(z.col(j).squaredNorm() / 99.0);
  const MatrixXd corr = z.transpose() * z / 99.0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(corr);
  for (int k = 0; k < 6; ++k) CHECK(b.spectrum(k) == doctest::Approx(es.eigenvalues()(5 - k)).epsilon(1e-10));
  CHECK(b.spectrum.sum() == doctest::Approx(6.0));
  for (int k = 0; k < 3; ++k) {
    Index arg;
    b.loadings.col(k).cwiseAbs().maxCoeff(&arg);
    CHECK(b.loadings(arg, k) > 0);
    // score variance equals the eigenvalue
    const VectorXd s = b.scores.col(k);
    CHECK(s.squaredNorm() / 99.0 == doctest::Approx(b.eigenvalues(k)).epsilon(1e-10));
  }
  CHECK(std::abs(b.scores.col(0).dot(b.scores.col(1))) < 1e-8);
  CHECK((b.project(x) - b.scores).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("PC-OLS with every component equals OLS") {
  const auto pr = sparse_problem(60, 5, 19);
  const auto full = fit_pc_ols(pr.x, pr.y, 5);
  const auto ols = fit_ols(pr.x, pr.y);
  CHECK((full.predict(pr.x) - ols.predict(pr.x)).cwiseAbs().maxCoeff() < 1e-9);
  const auto two = fit_pc_ols(pr.x, pr.y, 2);
  CHECK(two.components == 2);
  const std::vector<int> groups{0, 0, 0, 1, 1};
  const auto grouped = fit_pc_ols(pr.x, pr.y, 1, groups);
  CHECK(grouped.components == 2);
  CHECK(grouped.predict(pr.x).allFinite());
}

TEST_CASE("composite plus scale matches calibration moments") {
  const auto pr = sparse_problem(80, 4, 23);
  const std::vector<double> lats{60.0, 0.0, -30.0, 45.0};
  const auto m = fit_cps(pr.x, pr.y, lats, WeightMode::latitude_cosine);
  CHECK(m.weights(0) == doctest::Approx(0.5));
  CHECK(m.weights(1) == doctest::Approx(1.0));
  CHECK(m.weights(2) == 0.0);
  CHECK(m.weights(3) == doctest::Approx(std::sqrt(0.5)));
  const VectorXd pred = m.predict(pr.x);
  CHECK(pred.mean() == doctest::Approx(pr.y.mean()).epsilon(1e-12));
  const auto sd = [](const VectorXd& v) { return std::sqrt((v.array() - v.mean()).square().sum() / (v.size() - 1)); };
  CHECK(sd(pred) == doctest::Approx(sd(pr.y)).epsilon(1e-12));

  const auto corr = fit_cps(pr.x, pr.y, lats, WeightMode::abs_correlation);
  for (Index j = 0; j < 4; ++j) {
    const double r = std::abs(((pr.x.col(j).array() - pr.x.col(j).mean()) * (pr.y.array() - pr.y.mean())).sum() /
                              (99.0 * 0 + 79.0) / (sd(pr.x.col(j)) * sd(pr.y)));
    CHECK(corr.weights(j) == doctest::Approx(r).epsilon(1e-12));
  }
  const std::vector<double> south{-10.0, -20.0, -30.0, -40.0};
  CHECK_THROWS_AS(fit_cps(pr.x, pr.y, south, WeightMode::latitude_cosine), paleo::Error);

  const auto reg = fit_cps(pr.x, pr.y, lats, WeightMode::uniform, CpsScale::regression);
  const VectorXd c = reg.composite(pr.x);
  const auto ols = fit_ols(c, pr.y);
  CHECK(reg.slope == doctest::Approx(ols.coefficients(0)).epsilon(1e-10));
}

TEST_CASE("ARMA recovers simulated parameters") {
  const auto y = testing_support::simulate_arma({0.5, 0.3}, {}, 3000, 101, 0.7);
  const auto m = fit_arma(y, 2, 0);
  CHECK(m.ar[0] == doctest::Approx(0.5).epsilon(0.1));
  CHECK(m.ar[1] == doctest::Approx(0.3).epsilon(0.15));
  CHECK(m.innovation_sd == doctest::Approx(0.7).epsilon(0.05));
  CHECK(m.stationary());
  CHECK_FALSE(m.projected);

  const auto z = testing_support::simulate_arma({0.6}, {0.4}, 3000, 102);
  const auto mm = fit_arma(z, 1, 1);
  CHECK(mm.ar[0] == doctest::Approx(0.6).epsilon(0.1));
  CHECK(mm.ma[0] == doctest::Approx(0.4).epsilon(0.15));
}

TEST_CASE("exact likelihood beats or ties the starting point and autocovariances match AR(1)") {
  ArmaModel m;
  m.p = 1;
  m.ar = {0.6};
  m.innovation_sd = 2.0;
  const auto g = m.autocovariances(3);
  const double g0 = 4.0 / (1 - 0.36);
  CHECK(g[0] == doctest::Approx(g0));
  CHECK(g[3] == doctest::Approx(g0 * 0.216));
  CHECK(ar_stationary(std::vector<double>{0.5, 0.3}));
  CHECK_FALSE(ar_stationary(std::vector<double>{0.7, 0.4}));
  CHECK_FALSE(ar_stationary(std::vector<double>{1.0}));
}

TEST_CASE("ARMA interior prediction is the two-sided conditional mean") {
  ArmaModel m;
  m.p = 1;
  m.ar = {0.6};
  m.intercept = 10.0;
  m.innovation_sd = 1.0;
  std::vector<double> v{10.5, 11.0, 0.0, 9.0, 9.5};
  std::vector<std::uint8_t> miss{0, 0, 1, 0, 0};
  data::AnnualSeries hist(2000, v, miss);
  const auto pred = predict_arma(m, hist, {2002, 2002});
  // Markov: only the neighbours matter
  const double expected = 10.0 + 0.6 / (1 + 0.36) * ((11.0 - 10.0) + (9.0 - 10.0));
  CHECK(pred.at(2002) == doctest::Approx(expected).epsilon(1e-12));
  // forecast decays to the mean
  const auto ahead = predict_arma(m, hist, {2005, 2006});
  CHECK(ahead.at(2006) == doctest::Approx(10.0 + 0.36 * -0.5).epsilon(1e-12));
}

TEST_CASE("white-noise ARMA predicts the mean") {
  const auto y = testing_support::simulate_arma({}, {}, 200, 5);
  const auto m = fit_arma(y, 0, 0);
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / 200.0;
  CHECK(m.intercept == doctest::Approx(mean));
  const auto pred = predict_arma(m, data::AnnualSeries(1, y), {250, 251});
  CHECK(pred.at(250) == doctest::Approx(mean));
}

TEST_CASE("uniform predict masks years with missing inputs and round-trips through JSON") {
  const auto pr = sparse_problem(30, 3, 29);
  auto model = fit_lasso(pr.x, pr.y, 0.01);
  MatrixXd vals = pr.x;
  vals(4, 1) = std::nan("");
  std::vector<data::SeriesMeta> meta(3);
  for (int j = 0; j < 3; ++j) meta[j].name = "s" + std::to_string(j);
  data::ProxyMatrix proxies(1900, meta, vals);
  const FittedModel fm = model;
  const auto out = predict(fm, {&proxies, nullptr}, {1900, 1929});
  CHECK(out.missing(1904));
  CHECK(out.at(1903) == doctest::Approx(model.predict(pr.x)(3)));
  CHECK_THROWS_AS(predict(fm, {nullptr, nullptr}, {1900, 1901}), paleo::Error);
  CHECK_THROWS_AS(predict(fm, {&proxies, nullptr}, {1890, 1901}), paleo::Error);

  const auto back = model_from_json(nlohmann::json::parse(to_json(fm).dump()));
  const auto& lin = std::get<LinearModel>(back);
  CHECK(lin.coefficients == model.coefficients);
  CHECK(lin.intercept == model.intercept);
  CHECK(lin.input_fingerprint == model.input_fingerprint);

  const FittedModel cps = fit_cps(pr.x, pr.y, std::vector<double>{10, 20, 30}, WeightMode::uniform);
  const auto cback = model_from_json(to_json(cps));
  CHECK(std::get<CpsModel>(cback).predict(pr.x) == std::get<CpsModel>(cps).predict(pr.x));

  ArmaModel a;
  a.p = 1;
  a.ar = {0.3};
  const auto aback = std::get<ArmaModel>(model_from_json(to_json(FittedModel{a})));
  CHECK(aback.ar == a.ar);
  CHECK_THROWS_AS(model_from_json(nlohmann::json{{"version", "x"}}), paleo::Error);
}

TEST_CASE("exact homotopy and coordinate descent agree") {
  CdOptions cd;
  cd.exact_lasso = false;
  cd.tolerance = 1e-12;
  cd.max_sweeps = 200000;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const int n = 30 + static_cast<int>(seed % 5) * 10;
    const int p = seed % 2 ? 12 : 90;
    const auto pr = sparse_problem(n, p, 900 + seed);
    const double lam = lambda_max(pr.x, pr.y) * (0.02 + 0.03 * static_cast<double>(seed % 7));
    const auto exact = fit_lasso(pr.x, pr.y, lam);
    const auto iter = fit_lasso(pr.x, pr.y, lam, cd);
    const auto ke = kkt_check(pr.x, pr.y, exact), ki = kkt_check(pr.x, pr.y, iter);
    CHECK(ke.max_violation < 1e-9);
    CHECK(ke.objective == doctest::Approx(ki.objective).epsilon(1e-9));
    // unique solution when n > p
    if (p < n) CHECK((exact.coefficients - iter.coefficients).cwiseAbs().maxCoeff() < 1e-6);
  }
}
