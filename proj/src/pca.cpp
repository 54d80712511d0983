#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "paleo/solvers.hpp"

namespace paleo::solvers {

namespace {

void orient(MatrixXd& loadings) {
  for (Index c = 0; c < loadings.cols(); ++c) {
    Index arg = 0;
    loadings.col(c).cwiseAbs().maxCoeff(&arg);
    if (loadings(arg, c) < 0.0) loadings.col(c) *= -1.0;
  }
}

std::uint64_t fingerprint_xy(const MatrixXd& x, const VectorXd& y) {
  Fingerprint fp;
  fp.add(static_cast<std::uint64_t>(x.rows())).add(static_cast<std::uint64_t>(x.cols()));
  fp.add(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
  fp.add(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
  return fp.value();
}

data::ProxyMatrix score_matrix(const data::ProxyMatrix& proxies, const PcBasis& basis,
                               std::span<const Index> columns) {
  if (static_cast<Index>(columns.size()) != basis.loadings.rows())
    throw Error(ErrorCode::configuration, "basis width differs from the selected columns");
  const Index k = basis.loadings.cols();
  Eigen::MatrixXd values = Eigen::MatrixXd::Constant(proxies.n_years(), k,
                                                     std::numeric_limits<double>::quiet_NaN());
  std::vector<int> rows_ok;
  for (int year = proxies.start_year(); year <= proxies.end_year(); ++year) {
    bool ok = true;
    for (Index j : columns)
      if (!proxies.available(year, j)) {
        ok = false;
        break;
      }
    if (ok) rows_ok.push_back(year);
  }
  if (!rows_ok.empty()) {
    const MatrixXd x = data::gather_rows(proxies, rows_ok, columns);
    const MatrixXd s = basis.project(x);
    for (std::size_t r = 0; r < rows_ok.size(); ++r)
      values.row(proxies.row(rows_ok[r])) = s.row(static_cast<Index>(r));
  }
  std::vector<data::SeriesMeta> meta;
  for (Index c = 0; c < k; ++c) {
    data::SeriesMeta m;
    m.name = "PC" + std::to_string(c + 1);
    m.first_year = proxies.start_year();
    m.generator = "pca";
    meta.push_back(std::move(m));
  }
  return {proxies.start_year(), std::move(meta), std::move(values)};
}

}  // namespace

MatrixXd PcBasis::project(const MatrixXd& x) const {
  if (x.cols() != loadings.rows())
    throw Error(ErrorCode::configuration, "projection width differs from basis width");
  const MatrixXd z =
      (x.rowwise() - column_means.transpose()).array().rowwise() / column_sds.transpose().array();
  return z * loadings;
}

PcBasis pca_decompose(const MatrixXd& x, int k) {
  const Index n = x.rows();
  const Index p = x.cols();
  if (n < 2) throw Error(ErrorCode::insufficient_data, "PCA needs at least two rows");
  if (p < 1) throw Error(ErrorCode::insufficient_data, "PCA needs at least one column");
  if (k < 1 || k > std::min(n, p))
    throw Error(ErrorCode::configuration, "PCA component count " + std::to_string(k) +
                                              " outside [1, " + std::to_string(std::min(n, p)) + "]");
  if (!x.allFinite()) throw Error(ErrorCode::numeric, "non-finite value in PCA input");

  PcBasis b;
  b.column_means = x.colwise().mean().transpose();
  b.column_sds.resize(p);
  for (Index j = 0; j < p; ++j) {
    const double ss = (x.col(j).array() - b.column_means(j)).square().sum();
    b.column_sds(j) = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(b.column_sds(j) > 1e-12 * std::max(1.0, std::abs(b.column_means(j)))))
      throw Error(ErrorCode::degenerate, "PCA input column " + std::to_string(j) + " is constant");
  }
  const MatrixXd z =
      (x.rowwise() - b.column_means.transpose()).array().rowwise() / b.column_sds.transpose().array();
  Eigen::BDCSVD<MatrixXd> svd(z, Eigen::ComputeThinV);
  const VectorXd& s = svd.singularValues();
  b.spectrum = VectorXd::Zero(p);
  b.spectrum.head(s.size()) = s.array().square() / static_cast<double>(n - 1);
  b.loadings = svd.matrixV().leftCols(k);
  orient(b.loadings);
  b.scores = z * b.loadings;
  b.eigenvalues = b.spectrum.head(k);
  return b;
}

PcaResult pca_decompose(const data::ProxyMatrix& proxies, int k, const YearRange& period) {
  if (!proxies.years().contains(period))
    throw Error(ErrorCode::coverage, "PCA period " + to_string(period) + " outside matrix " +
                                         to_string(proxies.years()));
  std::vector<int> years;
  for (int y = period.first; y <= period.last; ++y) years.push_back(y);
  auto rows = data::gather_rows(proxies, years);
  if (rows.columns.empty())
    throw Error(ErrorCode::insufficient_data, "no series is complete over " + to_string(period));
  PcaResult out;
  out.basis = pca_decompose(rows.x, k);
  out.columns = rows.columns;
  out.scores = score_matrix(proxies, out.basis, out.columns);
  return out;
}

data::ProxyMatrix pc_scores(const data::ProxyMatrix& proxies, const PcBasis& basis,
                            std::span<const Index> columns) {
  return score_matrix(proxies, basis, columns);
}

LinearModel fit_pc_ols(const MatrixXd& x, const VectorXd& y, int k, std::span<const int> groups) {
  if (x.rows() != y.size())
    throw Error(ErrorCode::configuration, "design rows differ from target length");
  if (!groups.empty() && static_cast<Index>(groups.size()) != x.cols())
    throw Error(ErrorCode::configuration, "group labels must match the column count");

  // Each group contributes up to k components; no labels means one group.
  std::map<int, std::vector<Index>> members;
  for (Index j = 0; j < x.cols(); ++j)
    members[groups.empty() ? 0 : groups[static_cast<std::size_t>(j)]].push_back(j);

  std::vector<std::pair<std::vector<Index>, PcBasis>> parts;
  Index total = 0;
  for (auto& [label, cols] : members) {
    const MatrixXd sub = x(Eigen::all, cols);
    const int kg = static_cast<int>(std::min<Index>(k, std::min<Index>(sub.cols(), x.rows() - 1)));
    if (kg < 1) throw Error(ErrorCode::insufficient_data, "too few rows for principal components");
    PcBasis b = pca_decompose(sub, kg);
    b.group_labels.assign(static_cast<std::size_t>(kg), label);
    total += kg;
    parts.emplace_back(cols, std::move(b));
  }
  if (total + 1 > x.rows())
    throw Error(ErrorCode::insufficient_data, "more pooled components than calibration rows allow");

  MatrixXd pooled(x.rows(), total);
  Index at = 0;
  for (const auto& [cols, b] : parts) {
    pooled.middleCols(at, b.scores.cols()) = b.scores;
    at += b.scores.cols();
  }
  const LinearModel reg = fit_ols(pooled, y);

  LinearModel m;
  m.method = LinearMethod::pc_ols;
  m.components = static_cast<int>(total);
  m.coefficients = VectorXd::Zero(x.cols());
  m.std_coefficients = VectorXd::Zero(x.cols());
  m.column_means = VectorXd::Zero(x.cols());
  m.column_sds = VectorXd::Zero(x.cols());
  m.intercept = reg.intercept;
  at = 0;
  for (const auto& [cols, b] : parts) {
    const VectorXd g = reg.coefficients.segment(at, b.scores.cols());
    const VectorXd std_coef = b.loadings * g;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const Index j = cols[c];
      const auto ci = static_cast<Index>(c);
      m.std_coefficients(j) = std_coef(ci);
      m.coefficients(j) = std_coef(ci) / b.column_sds(ci);
      m.column_means(j) = b.column_means(ci);
      m.column_sds(j) = b.column_sds(ci);
      m.intercept -= m.coefficients(j) * b.column_means(ci);
    }
    at += b.scores.cols();
  }
  m.input_fingerprint = fingerprint_xy(x, y);
  return m;
}

}  // namespace paleo::solvers
