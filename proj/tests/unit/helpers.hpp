#pragma once

#include <random>
#include <vector>

#include <Eigen/Dense>

#include "paleo/rng.hpp"

namespace testing_support {

inline Eigen::MatrixXd gaussian_matrix(int rows, int cols, std::uint64_t seed) {
  paleo::Engine engine = paleo::make_engine({seed, 0});
  std::normal_distribution<double> z;
  Eigen::MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = z(engine);
  return m;
}

inline std::vector<double> simulate_arma(std::vector<double> phi, std::vector<double> theta, int n,
                                         std::uint64_t seed, double sd = 1.0) {
  paleo::Engine engine = paleo::make_engine({seed, 7});
  std::normal_distribution<double> z(0.0, sd);
  const int burn = 500;
  std::vector<double> y(n + burn, 0.0), e(n + burn, 0.0);
  for (int t = 0; t < n + burn; ++t) {
    e[t] = z(engine);
    double v = e[t];
    for (std::size_t i = 0; i < phi.size(); ++i)
      if (t - 1 - static_cast<int>(i) >= 0) v += phi[i] * y[t - 1 - i];
    for (std::size_t j = 0; j < theta.size(); ++j)
      if (t - 1 - static_cast<int>(j) >= 0) v += theta[j] * e[t - 1 - j];
    y[t] = v;
  }
  return {y.begin() + burn, y.end()};
}

}  // namespace testing_support
