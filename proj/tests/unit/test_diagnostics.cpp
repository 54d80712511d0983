#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "paleo/diagnostics.hpp"

using namespace paleo;
using namespace paleo::diagnostics;

namespace {

std::vector<double> white(int n, std::uint64_t seed) {
  const auto z = testing_support::gaussian_matrix(n, 1, seed);
  return {z.data(), z.data() + n};
}

// PACF by regressing on k lags of the zero-padded, demeaned series; this is
// the least-squares problem whose normal equations are Yule-Walker.
std::vector<double> pacf_by_regression(const std::vector<double>& x, int max_lag) {
  const auto n = static_cast<Eigen::Index>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  std::vector<double> out;
  for (int k = 1; k <= max_lag; ++k) {
    const Eigen::Index rows = n + k;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, k);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(rows);
    for (Eigen::Index t = 0; t < rows; ++t) {
      if (t < n) b(t) = x[static_cast<std::size_t>(t)] - mean;
      for (int i = 1; i <= k; ++i)
        if (t - i >= 0 && t - i < n) a(t, i - 1) = x[static_cast<std::size_t>(t - i)] - mean;
    }
    const Eigen::VectorXd coef = a.colPivHouseholderQr().solve(b);
    out.push_back(coef(k - 1));
  }
  return out;
}

std::vector<double> lag1_stats(const std::vector<double>& phis, std::uint64_t seed) {
  std::vector<double> out;
  for (std::size_t j = 0; j < phis.size(); ++j)
    out.push_back(compute_stat(testing_support::simulate_arma({phis[j]}, {}, 149, seed * 977 + j), StatName::lag1_autocorr));
  return out;
}

}  // namespace

TEST_CASE("series statistics examples") {
  std::vector<double> alt(40);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = i % 2 ? -1.0 : 1.0;
  CHECK(std::abs(compute_stat(alt, StatName::lag1_autocorr) + 1.0) < 1e-10);

  const auto w = white(10000, 1);
  CHECK(std::abs(compute_stat(w, StatName::sd_first_diff_standardized) - std::sqrt(2.0)) < 0.05);
  CHECK(compute_stat(w, StatName::corr_with_target, w) == doctest::Approx(1.0).epsilon(1e-12));

  const data::AnnualSeries s(1000, alt);
  const auto st = series_stat(s, StatName::lag1_autocorr, {1000, 1039}, nullptr, "alt");
  CHECK(st.series_id == "alt");
  CHECK(st.value == doctest::Approx(-1.0));

  CHECK_THROWS_AS(compute_stat(std::vector<double>(20, 1.0), StatName::sd_first_diff_standardized), Error);
  CHECK_THROWS_AS(compute_stat(std::vector<double>(5, 1.0), StatName::lag1_autocorr), Error);
  CHECK_THROWS_AS(series_stat(s, StatName::lag1_autocorr, {1000, 1005}), Error);
  CHECK_THROWS_AS(series_stat(s, StatName::corr_with_target, {1000, 1039}), Error);
}

TEST_CASE("affine invariance of standardized statistics") {
  const auto x = testing_support::simulate_arma({0.6}, {}, 300, 4);
  std::vector<double> y(x);
  for (double& v : y) v = 3.7 * v - 12.0;
  for (auto s : {StatName::lag1_autocorr, StatName::sd_first_diff_standardized})
    CHECK(std::abs(compute_stat(x, s) - compute_stat(y, s)) < 1e-10);
}

TEST_CASE("statistics stay in range") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto x = testing_support::simulate_arma({0.3 + 0.01 * seed}, {}, 60, seed);
    const auto t = white(60, seed + 1000);
    const double l = compute_stat(x, StatName::lag1_autocorr);
    const double c = compute_stat(x, StatName::corr_with_target, t);
    CHECK(std::abs(l) <= 1.0);
    CHECK(std::abs(c) <= 1.0);
    CHECK(compute_stat(x, StatName::sd_first_diff_standardized) >= 0.0);
  }
}

TEST_CASE("ACF and PACF") {
  const auto w = white(10000, 2);
  const auto a = acf_pacf(w, 10);
  for (int k = 0; k < 10; ++k) {
    CHECK(std::abs(a.acf[k]) < 0.03);
    CHECK(std::abs(a.pacf[k]) < 0.03);
  }

  const auto ar1 = acf_pacf(testing_support::simulate_arma({0.8}, {}, 10000, 3), 10);
  for (int k = 1; k <= 10; ++k) CHECK(std::abs(ar1.acf[k - 1] - std::pow(0.8, k)) < 0.05);
  for (int k = 2; k <= 10; ++k) CHECK(std::abs(ar1.pacf[k - 1]) < 0.03);

  const auto ar2 = acf_pacf(testing_support::simulate_arma({0.5, 0.3}, {}, 10000, 4), 10);
  CHECK(std::abs(ar2.pacf[1] - 0.3) < 0.03);
  for (int k = 3; k <= 10; ++k) CHECK(std::abs(ar2.pacf[k - 1]) < 0.03);

  CHECK_THROWS_AS(acf_pacf(std::vector<double>(30, 2.0), 5), Error);
  CHECK_THROWS_AS(acf_pacf(white(15, 1), 10), Error);
}

TEST_CASE("Durbin-Levinson PACF equals the regression oracle") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = seed % 2 ? testing_support::simulate_arma({0.5, 0.3}, {0.4}, 80 + 10 * static_cast<int>(seed), seed)
                            : white(60 + 7 * static_cast<int>(seed), seed);
    const auto dl = acf_pacf(x, 8).pacf;
    const auto ols = pacf_by_regression(x, 8);
    for (int k = 0; k < 8; ++k) CHECK(std::abs(dl[k] - ols[k]) < 1e-6);
  }
}

TEST_CASE("stationary bootstrap") {
  const auto w = white(500, 5);
  BootstrapOptions o;
  o.block_length = 500;
  o.n_boot = 100;
  o.seed = {1, 1};
  const auto same = bootstrap_null(w, StatName::lag1_autocorr, o);
  const double orig = compute_stat(w, StatName::lag1_autocorr);
  for (double v : same) CHECK(v == orig);

  o.block_length = 10;
  o.n_boot = 400;
  const auto a = bootstrap_null(w, StatName::lag1_autocorr, o);
  o.threads = 3;
  const auto b = bootstrap_null(w, StatName::lag1_autocorr, o);
  CHECK(a == b);
  CHECK(a.size() == 400);
  CHECK(std::abs(std::accumulate(a.begin(), a.end(), 0.0) / 400) < 0.03);

  // indices: blocks wrap and stay in range
  Engine engine = make_engine({3, 3});
  const auto idx = stationary_bootstrap_indices(50, 5.0, engine);
  CHECK(idx.size() == 50);
  for (auto i : idx) CHECK(i < 50);

  o.block_length = 0;
  CHECK_THROWS_AS(bootstrap_null(w, StatName::lag1_autocorr, o), Error);

  const auto set = bootstrap_null_set({w, white(300, 6)}, StatName::lag1_autocorr, {10, 100, {4, 0}, 1});
  REQUIRE(set.size() == 2);
  BootstrapOptions first{10, 100, Seed{4, 0}.child(0), 1};
  CHECK(set[0] == bootstrap_null(w, StatName::lag1_autocorr, first));
}

TEST_CASE("QQ comparison") {
  const auto a = white(400, 7);
  const auto same = qq_compare(a, a);
  CHECK(same.ks == 0.0);
  CHECK(same.probs.size() == 99);
  for (std::size_t i = 0; i < same.probs.size(); ++i) CHECK(same.reference[i] == same.test[i]);
  CHECK(std::is_sorted(same.reference.begin(), same.reference.end()));

  std::vector<double> shifted(a);
  for (double& v : shifted) v += 2.5;
  const auto off = qq_compare(a, shifted);
  for (std::size_t i = 0; i < off.probs.size(); ++i) CHECK(off.test[i] - off.reference[i] == doctest::Approx(2.5));

  CHECK(ks_distance({1, 2, 3}, {4, 5, 6}) == 1.0);
  CHECK(ks_distance({1, 2, 3, 4}, {3, 4, 5, 6}) == doctest::Approx(0.5));

  const auto csv = format_qq_csv(off);
  CHECK(csv.rfind("prob,ref_quantile,test_quantile,band_lo,band_hi\n", 0) == 0);
}

TEST_CASE("empirical-AR1 lag-1 statistics fall outside the AR1(0.25) band") {
  int pass = 0;
  for (std::uint64_t r = 0; r < 20; ++r) {
    std::vector<double> mixed(93);
    for (std::size_t j = 0; j < mixed.size(); ++j) mixed[j] = 0.2 + 0.7 * static_cast<double>(j) / 92.0;
    const auto real = lag1_stats(mixed, 1000 + r);
    const std::vector<double> flat(93, 0.25);
    const auto sim = lag1_stats(flat, 2000 + r);
    std::vector<std::vector<double>> band;
    for (std::uint64_t b = 0; b < 50; ++b) band.push_back(lag1_stats(flat, 100000 + 100 * r + b));
    const auto q = qq_compare(sim, real, band);
    for (std::size_t i = 0; i < q.probs.size(); ++i) CHECK(q.band_lo[i] <= q.band_hi[i]);
    pass += q.exceeds_band();
  }
  CHECK(pass >= 16);
}
