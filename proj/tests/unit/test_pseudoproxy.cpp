#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "paleo/pseudoproxy.hpp"

using namespace paleo;
using namespace paleo::pseudoproxy;
using data::AnnualSeries;
using data::ProxyMatrix;

namespace {

// plain Pearson oracle, independent of the diagnostics module
double pearson(const double* a, const double* b, std::size_t n) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

double lag1(const Eigen::VectorXd& x) { return pearson(x.data(), x.data() + 1, static_cast<std::size_t>(x.size() - 1)); }

double variance(const double* a, std::size_t n) {
  double m = 0;
  for (std::size_t i = 0; i < n; ++i) m += a[i] / n;
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += (a[i] - m) * (a[i] - m);
  return s / (n - 1);
}

NoiseSpec ar1_spec(double phi) {
  NoiseSpec s;
  s.kind = NoiseKind::ar1;
  s.ar1 = {phi, 1.0, 0.0};
  return s;
}

AnnualSeries target_series(int n, std::uint64_t seed) {
  const auto z = testing_support::simulate_arma({0.6, 0.25}, {}, n, seed);
  return AnnualSeries(1, z);
}

}  // namespace

TEST_CASE("AR1 with phi 0 is white and fits recover phi") {
  const auto m = gen_noise_matrix(ar1_spec(0.0), 10000, 1, {1, 1});
  CHECK(std::abs(lag1(m.values().col(0))) < 0.03);
  CHECK(m.columns()[0].kind == data::SeriesKind::pseudoproxy);

  const auto strong = gen_noise_matrix(ar1_spec(0.9), 10000, 50, {2, 1});
  for (Eigen::Index j = 0; j < 50; ++j) CHECK(std::abs(fit_ar1(strong.column(j)).phi - 0.9) < 0.02);

  for (double phi : {0.25, 0.4}) {
    const auto w = gen_noise_matrix(ar1_spec(phi), 10000, 1, {3, 1});
    const auto fit = fit_ar1(w.column(0));
    CHECK(std::abs(fit.phi - phi) < 0.03);
    CHECK(fit.innovation_sd == doctest::Approx(std::sqrt(variance(w.values().data(), 10000) * (1 - fit.phi * fit.phi))).epsilon(0.01));
  }

  NoiseSpec white;
  const auto wn = gen_noise_matrix(white, 10000, 1, {4, 1});
  CHECK(std::abs(fit_ar1(wn.column(0)).phi) < 0.03);
}

TEST_CASE("fit_ar1 errors") {
  try {
    fit_ar1(AnnualSeries(1, std::vector<double>(20, 2.0)));
    FAIL("constant series accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::degenerate);
  }
  try {
    fit_ar1(AnnualSeries(1, {1, 2, 3, 4, 5}));
    FAIL("short series accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::insufficient_data);
  }
  try {
    gen_noise_matrix(ar1_spec(1.0), 10, 1, {1, 1});
    FAIL("unit root accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::parameter);
  }
}

TEST_CASE("generators are deterministic and column streams are independent of width") {
  NoiseSpec b;
  b.kind = NoiseKind::brownian;
  const auto a1 = gen_noise_matrix(ar1_spec(0.4), 200, 5, {9, 2});
  const auto a2 = gen_noise_matrix(ar1_spec(0.4), 200, 5, {9, 2});
  const auto a3 = gen_noise_matrix(ar1_spec(0.4), 200, 3, {9, 2});
  CHECK(a1.values() == a2.values());
  CHECK(a1.values().leftCols(3) == a3.values());
  CHECK(a1.values() != gen_noise_matrix(ar1_spec(0.4), 200, 5, {9, 3}).values());
  CHECK(gen_noise_matrix(b, 100, 2, {1, 1}).values() == gen_noise_matrix(b, 100, 2, {1, 1}).values());
}

TEST_CASE("Brownian variance grows linearly with the prefix length") {
  NoiseSpec b;
  b.kind = NoiseKind::brownian;
  const auto m = gen_noise_matrix(b, 2000, 100, {5, 1});
  std::vector<double> ts, vs;
  for (int t = 100; t <= 2000; t += 100) {
    double v = 0;
    for (Eigen::Index j = 0; j < 100; ++j) v += variance(m.values().col(j).data(), static_cast<std::size_t>(t)) / 100;
    ts.push_back(t);
    vs.push_back(v);
  }
  const double r = pearson(ts.data(), vs.data(), ts.size());
  const double slope = r * std::sqrt(variance(vs.data(), vs.size()) / variance(ts.data(), ts.size()));
  CHECK(slope > 0.0);
  CHECK(r * r > 0.9);
  // standardized over every year
  CHECK(variance(m.values().col(0).data(), 2000) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("Tingley proxies") {
  const auto y = target_series(149, 3);
  const auto exact = gen_tingley(y, {0.0, 0.0, 4, 1.0}, {1, 1});
  for (Eigen::Index j = 0; j < 4; ++j)
    for (Eigen::Index i = 0; i < 149; ++i) CHECK(exact.values()(i, j) == y.values()[static_cast<std::size_t>(i)]);

  // the column mean sharpens toward the target as the network grows
  double prev = -1.0;
  for (int n : {10, 100, 1138}) {
    const auto x = gen_tingley(y, {2.0, 0.0, n, 1.0}, {2, 1});
    const Eigen::VectorXd mean = x.values().rowwise().mean();
    const double c = pearson(mean.data(), y.values().data(), 149);
    CHECK(c > 0.0);
    CHECK(c > prev);
    prev = c;
  }

  const auto perturbed = gen_tingley(y, {1.0, 3.0, 20, 1.0}, {3, 1});
  CHECK(perturbed.columns()[0].generator.find("beta=") != std::string::npos);
}

TEST_CASE("corruption variants") {
  const auto y = target_series(1000, 8);
  Eigen::MatrixXd t(1000, 283);
  const auto z = testing_support::gaussian_matrix(1000, 283, 4);
  for (Eigen::Index j = 0; j < 283; ++j)
    for (Eigen::Index i = 0; i < 1000; ++i) t(i, j) = 0.6 * y.values()[static_cast<std::size_t>(i)] + 0.8 * z(i, j);
  std::vector<data::SeriesMeta> cols(283);
  for (std::size_t j = 0; j < cols.size(); ++j) {
    cols[j].name = "t" + std::to_string(j);
    cols[j].latitude = 40.0;
    cols[j].kind = data::SeriesKind::local_temperature;
  }
  const ProxyMatrix local(1, cols, t);

  for (auto v : {CorruptionVariant::snr_mix, CorruptionVariant::column_append, CorruptionVariant::random_slope}) {
    CorruptionSpec none;
    none.variant = v;
    CHECK(corrupt_temperatures(local, none, {1, 1}).values() == local.values());
  }

  CorruptionSpec append{0.5, NoiseColor::white, 0.4, CorruptionVariant::column_append, 0.0};
  const auto wide = corrupt_temperatures(local, append, {1, 2});
  CHECK(wide.n_series() == 566);
  CHECK(wide.values().leftCols(283) == local.values());

  for (auto color : {NoiseColor::white, NoiseColor::red}) {
    CorruptionSpec mix{0.94, color, 0.4, CorruptionVariant::snr_mix, 0.0};
    const auto noisy = corrupt_temperatures(local, mix, {1, 3});
    // single-column correlations carry ~0.03 sampling error at n=1000; average them
    double mean_c = 0.0;
    for (Eigen::Index j = 0; j < 283; ++j) {
      mean_c += pearson(noisy.values().col(j).data(), t.col(j).data(), 1000) / 283;
      const Eigen::VectorXd nu = noisy.values().col(j) - t.col(j);
      const double share = variance(nu.data(), 1000) / (variance(t.col(j).data(), 1000) + variance(nu.data(), 1000));
      CHECK(std::abs(share - 0.94) < 0.02);
    }
    CHECK(std::abs(mean_c - std::sqrt(0.06)) < 0.02);
  }

  CorruptionSpec all{1.0, NoiseColor::white, 0.4, CorruptionVariant::snr_mix, 0.0};
  CHECK_THROWS_AS(corrupt_temperatures(local, all, {1, 1}), Error);
}
