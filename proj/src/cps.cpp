#include <cmath>
#include <numbers>

#include "paleo/solvers.hpp"

namespace paleo::solvers {

std::string_view to_string(WeightMode mode) {
  switch (mode) {
    case WeightMode::latitude_cosine: return "latitude_cosine";
    case WeightMode::abs_correlation: return "abs_correlation";
    case WeightMode::uniform: return "uniform";
  }
  return "uniform";
}

WeightMode parse_weight_mode(std::string_view text) {
  if (text == "latitude_cosine" || text == "cos_lat") return WeightMode::latitude_cosine;
  if (text == "abs_correlation" || text == "correlation") return WeightMode::abs_correlation;
  if (text == "uniform") return WeightMode::uniform;
  throw Error(ErrorCode::configuration, "unknown weight mode '" + std::string(text) + "'");
}

VectorXd CpsModel::composite(const MatrixXd& x) const {
  if (x.cols() != weights.size())
    throw Error(ErrorCode::configuration, "composite input width differs from model width");
  VectorXd out = VectorXd::Zero(x.rows());
  double total = 0.0;
  for (Index j = 0; j < x.cols(); ++j) {
    if (weights(j) == 0.0) continue;
    out += weights(j) * ((x.col(j).array() - column_means(j)) / column_sds(j)).matrix();
    total += weights(j);
  }
  return out / total;
}

VectorXd CpsModel::predict(const MatrixXd& x) const {
  const VectorXd c = composite(x);
  if (scale == CpsScale::regression) return (slope * c.array() + offset).matrix();
  return (target_mean + target_sd * (c.array() - composite_mean) / composite_sd).matrix();
}

CpsModel fit_cps(const MatrixXd& x, const VectorXd& y, std::span<const double> latitudes,
                 WeightMode mode, CpsScale scale) {
  const Index n = x.rows();
  if (n != y.size()) throw Error(ErrorCode::configuration, "design rows differ from target length");
  if (static_cast<Index>(latitudes.size()) != x.cols())
    throw Error(ErrorCode::configuration, "one latitude per column is required");
  if (n < 3) throw Error(ErrorCode::insufficient_data, "composite needs at least three rows");
  if (!x.allFinite() || !y.allFinite()) throw Error(ErrorCode::numeric, "non-finite composite input");

  auto sample_sd = [&](const VectorXd& v) {
    return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(n - 1));
  };

  CpsModel m;
  m.weight_mode = mode;
  m.scale = scale;
  m.column_means = x.colwise().mean().transpose();
  m.column_sds = VectorXd::Zero(x.cols());
  m.weights = VectorXd::Zero(x.cols());
  m.target_mean = y.mean();
  m.target_sd = sample_sd(y);
  for (Index j = 0; j < x.cols(); ++j) {
    const double sd = sample_sd(x.col(j));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(m.column_means(j))))) {
      m.dropped.push_back(j);
      continue;
    }
    m.column_sds(j) = sd;
    double w = 1.0;
    switch (mode) {
      case WeightMode::latitude_cosine: {
        const double lat = latitudes[static_cast<std::size_t>(j)];
        w = lat >= 0.0 ? std::cos(lat * std::numbers::pi / 180.0) : 0.0;
        break;
      }
      case WeightMode::abs_correlation: {
        if (!(m.target_sd > 0.0)) throw Error(ErrorCode::degenerate, "constant calibration target");
        const double cov = ((x.col(j).array() - m.column_means(j)) * (y.array() - m.target_mean)).sum() /
                           static_cast<double>(n - 1);
        w = std::abs(cov / (sd * m.target_sd));
        break;
      }
      case WeightMode::uniform: break;
    }
    m.weights(j) = w;
  }
  if (!(m.weights.sum() > 0.0))
    throw Error(ErrorCode::degenerate, "every composite weight is zero");
  for (Index j : m.dropped) m.column_sds(j) = 1.0;

  const VectorXd c = m.composite(x);
  m.composite_mean = c.mean();
  m.composite_sd = sample_sd(c);
  if (!(m.composite_sd > 0.0)) throw Error(ErrorCode::degenerate, "composite is constant");
  const double cov = ((c.array() - m.composite_mean) * (y.array() - m.target_mean)).sum() /
                     static_cast<double>(n - 1);
  m.slope = cov / (m.composite_sd * m.composite_sd);
  m.offset = m.target_mean - m.slope * m.composite_mean;

  Fingerprint fp;
  fp.add(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
  fp.add(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
  fp.add(latitudes);
  m.input_fingerprint = fp.value();
  return m;
}

}  // namespace paleo::solvers
