#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "paleo/solvers.hpp"

namespace paleo::solvers {

namespace {

struct Standardized {
  MatrixXd xs;            // kept columns only
  std::vector<Index> kept;
  std::vector<Index> dropped;
  VectorXd means;         // full width
  VectorXd sds;           // full width; 0 for dropped columns
  VectorXd yc;
  double y_mean = 0.0;
  bool noncentral = false;
};

void check_inputs(const MatrixXd& x, const VectorXd& y) {
  if (x.rows() != y.size())
    throw Error(ErrorCode::configuration, "design has " + std::to_string(x.rows()) +
                                              " rows but target has " + std::to_string(y.size()));
  if (y.size() < 2) throw Error(ErrorCode::insufficient_data, "need at least two observations");
  if (!x.allFinite() || !y.allFinite())
    throw Error(ErrorCode::numeric, "non-finite value in regression inputs");
}

Standardized standardize_design(const MatrixXd& x, const VectorXd& y, bool noncentral) {
  check_inputs(x, y);
  Standardized s;
  s.noncentral = noncentral;
  const auto n = static_cast<double>(x.rows());
  s.means = VectorXd::Zero(x.cols());
  s.sds = VectorXd::Zero(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    double scale;
    if (noncentral) {
      scale = std::sqrt(x.col(j).squaredNorm() / n);
    } else {
      scale = std::sqrt((x.col(j).array() - mean).square().sum() / n);
    }
    if (!noncentral) s.means(j) = mean;
    if (scale > 1e-12 * std::max(1.0, std::abs(mean))) {
      s.sds(j) = scale;
      s.kept.push_back(j);
    } else {
      s.dropped.push_back(j);
    }
  }
  s.xs.resize(x.rows(), static_cast<Index>(s.kept.size()));
  for (std::size_t k = 0; k < s.kept.size(); ++k) {
    const Index j = s.kept[k];
    s.xs.col(static_cast<Index>(k)) = (x.col(j).array() - s.means(j)) / s.sds(j);
  }
  if (noncentral) {
    s.yc = y;
  } else {
    s.y_mean = y.mean();
    s.yc = y.array() - s.y_mean;
  }
  return s;
}

double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

// Maps standardized coefficients back to the original columns.
LinearModel assemble(const Standardized& s, const VectorXd& beta, double intercept, LinearMethod method,
                     Penalty penalty, Index width, int sweeps, bool converged) {
  LinearModel m;
  m.method = method;
  m.penalty = penalty;
  m.noncentral = s.noncentral;
  m.column_means = s.means;
  m.column_sds = s.sds;
  m.coefficients = VectorXd::Zero(width);
  m.std_coefficients = VectorXd::Zero(width);
  for (std::size_t k = 0; k < s.kept.size(); ++k) {
    const Index j = s.kept[k];
    m.std_coefficients(j) = beta(static_cast<Index>(k));
    m.coefficients(j) = beta(static_cast<Index>(k)) / s.sds(j);
  }
  m.intercept = s.noncentral ? intercept : s.y_mean - s.means.dot(m.coefficients);
  m.dropped = s.dropped;
  m.sweeps = sweeps;
  m.converged = converged;
  return m;
}

class CdSolver {
 public:
  CdSolver(const Standardized& s, double alpha, const CdOptions& options)
      : s_(s), alpha_(alpha), options_(options), beta_(VectorXd::Zero(s.xs.cols())), r_(s.yc) {
    if (s_.noncentral) {
      intercept_ = r_.mean();
      r_.array() -= intercept_;
    }
  }

  VectorXd gradient() const { return s_.xs.transpose() * r_ / static_cast<double>(r_.size()); }

  void solve(double lambda, const std::vector<Index>& strong) {
    const double n = static_cast<double>(r_.size());
    const double l1 = lambda * alpha_;
    const double l2 = lambda * (1.0 - alpha_);
    const Index p = s_.xs.cols();
    std::vector<char> in_working(static_cast<std::size_t>(p), 0);
    std::vector<Index> working;
    auto add = [&](Index j) {
      if (!in_working[static_cast<std::size_t>(j)]) {
        in_working[static_cast<std::size_t>(j)] = 1;
        working.push_back(j);
      }
    };
    for (Index j = 0; j < p; ++j)
      if (beta_(j) != 0.0) add(j);
    for (Index j : strong) add(j);

    sweeps_ = 0;
    converged_ = false;
    while (true) {
      std::sort(working.begin(), working.end());
      while (true) {
        double max_change = 0.0;
        for (Index j : working) {
          const double g = s_.xs.col(j).dot(r_) / n;
          const double updated = soft_threshold(beta_(j) + g, l1) / (1.0 + l2);
          const double d = updated - beta_(j);
          if (d != 0.0) {
            r_.noalias() -= d * s_.xs.col(j);
            beta_(j) = updated;
            max_change = std::max(max_change, std::abs(d));
          }
        }
        if (s_.noncentral) {
          const double d = r_.mean();
          intercept_ += d;
          r_.array() -= d;
          max_change = std::max(max_change, std::abs(d));
        }
        ++sweeps_;
        if (max_change < options_.tolerance) break;
        if (sweeps_ >= options_.max_sweeps) return;
      }
      bool violated = false;
      for (Index j = 0; j < p; ++j) {
        if (in_working[static_cast<std::size_t>(j)]) continue;
        if (std::abs(s_.xs.col(j).dot(r_) / n) > l1) {
          add(j);
          violated = true;
        }
      }
      if (!violated) {
        converged_ = true;
        return;
      }
    }
  }

  LinearModel model(LinearMethod method, double lambda, Index width) const {
    return assemble(s_, beta_, intercept_, method, {lambda, alpha_}, width, sweeps_, converged_);
  }

 private:
  const Standardized& s_;
  double alpha_;
  CdOptions options_;
  VectorXd beta_;
  VectorXd r_;
  double intercept_ = 0.0;
  int sweeps_ = 0;
  bool converged_ = false;
};

LinearMethod penalized_method(double alpha, bool noncentral) {
  if (noncentral) return LinearMethod::noncentral_lasso;
  if (alpha >= 1.0) return LinearMethod::lasso;
  if (alpha <= 0.0) return LinearMethod::ridge;
  return LinearMethod::elastic_net;
}

std::uint64_t fingerprint_xy(const MatrixXd& x, const VectorXd& y) {
  Fingerprint fp;
  fp.add(static_cast<std::uint64_t>(x.rows())).add(static_cast<std::uint64_t>(x.cols()));
  fp.add(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
  fp.add(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
  return fp.value();
}

double max_abs_gradient(const Standardized& s) {
  if (s.xs.cols() == 0) return 0.0;
  VectorXd r = s.yc;
  if (s.noncentral) r.array() -= r.mean();
  // same per-column arithmetic as the first coordinate sweep, so that
  // lambda_max itself yields an all-zero fit
  double best = 0.0;
  for (Index j = 0; j < s.xs.cols(); ++j)
    best = std::max(best, std::abs(s.xs.col(j).dot(r) / static_cast<double>(r.size())));
  return best;
}

// Exact lasso path by homotopy (LARS with the lasso modification). Between
// events the solution is linear in lambda, so any lambda on the way is solved
// exactly. Columns that would make the active Gram matrix singular are set
// aside: their correlation stays on the boundary until the active set loses
// a member.
class Homotopy {
 public:
  explicit Homotopy(const Standardized& s)
      : s_(s), n_(static_cast<double>(s.xs.rows())), beta_(VectorXd::Zero(s.xs.cols())) {
    z_ = s.xs;
    y_ = s.yc;
    if (s.noncentral) {
      // the unpenalized intercept profiles out as centering
      z_.rowwise() -= z_.colwise().mean();
      y_.array() -= y_.mean();
    }
    in_active_.assign(static_cast<std::size_t>(z_.cols()), 0);
    skipped_.assign(static_cast<std::size_t>(z_.cols()), 0);
    lambda_ = max_abs_gradient(s);
  }

  double lambda() const { return lambda_; }
  int steps() const { return steps_; }

  /// Moves the path down to `target` (no-op when already below).
  void advance(double target) {
    const Index p = z_.cols();
    const int max_steps = 200 * static_cast<int>(std::max<Index>(p, 10));
    Index just_dropped = -1;
    while (lambda_ > target) {
      if (++steps_ > max_steps) throw Error(ErrorCode::numeric, "lasso homotopy did not terminate");
      const VectorXd r = y_ - z_ * beta_;
      VectorXd c(p);
      for (Index j = 0; j < p; ++j) c(j) = s_.xs.col(j).dot(r) / n_;
      if (active_.empty()) {
        Index best = -1;
        for (Index j = 0; j < p; ++j)
          if (!skipped_[static_cast<std::size_t>(j)] && (best < 0 || std::abs(c(j)) > std::abs(c(best)))) best = j;
        if (best < 0 || c(best) == 0.0) {
          lambda_ = target;
          return;
        }
        add(best, c(best) > 0 ? 1.0 : -1.0);
        continue;
      }
      const auto k = static_cast<Index>(active_.size());
      VectorXd sign(k);
      for (Index i = 0; i < k; ++i) sign(i) = signs_[static_cast<std::size_t>(i)];
      VectorXd d = chol_.triangularView<Eigen::Lower>().solve(sign);
      chol_.triangularView<Eigen::Lower>().transpose().solveInPlace(d);
      VectorXd u = VectorXd::Zero(z_.rows());
      for (Index i = 0; i < k; ++i) u.noalias() += d(i) * z_.col(active_[static_cast<std::size_t>(i)]);
      const VectorXd a = z_.transpose() * u / n_;

      double gamma = lambda_ - target;
      int event = 0;  // 0 target, 1 join, 2 drop
      Index who = -1;
      const double tiny = 1e-14 * std::max(lambda_, 1e-300);
      for (Index j = 0; j < p; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        if (in_active_[uj] || skipped_[uj] || j == just_dropped) continue;
        for (double sgn : {1.0, -1.0}) {
          const double den = 1.0 - sgn * a(j);
          if (den <= 1e-12) continue;
          const double g = (lambda_ - sgn * c(j)) / den;
          if (g > tiny && g < gamma) {
            gamma = g;
            event = 1;
            who = j;
          }
        }
      }
      for (Index i = 0; i < k; ++i) {
        const Index j = active_[static_cast<std::size_t>(i)];
        if (d(i) == 0.0) continue;
        const double g = -beta_(j) / d(i);
        if (g > tiny && g < gamma) {
          gamma = g;
          event = 2;
          who = i;
        }
      }
      for (Index i = 0; i < k; ++i) beta_(active_[static_cast<std::size_t>(i)]) += gamma * d(i);
      lambda_ -= gamma;
      just_dropped = -1;
      if (event == 0) {
        lambda_ = target;
      } else if (event == 1) {
        const double cj = c(who) - gamma * a(who);
        add(who, cj > 0 ? 1.0 : -1.0);
      } else {
        const Index j = active_[static_cast<std::size_t>(who)];
        beta_(j) = 0.0;
        active_.erase(active_.begin() + who);
        signs_.erase(signs_.begin() + who);
        in_active_[static_cast<std::size_t>(j)] = 0;
        std::fill(skipped_.begin(), skipped_.end(), 0);
        just_dropped = j;
        rebuild();
      }
    }
  }

  const VectorXd& beta() const { return beta_; }

  double intercept() const {
    // noncentral: b0 = mean(y) - mean(xs) . beta on the rms-scaled columns
    if (!s_.noncentral) return 0.0;
    return s_.yc.mean() - (s_.xs.colwise().mean() * beta_)(0);
  }

 private:
  void add(Index j, double sign) {
    const auto k = static_cast<Index>(active_.size());
    const double gjj = z_.col(j).squaredNorm() / n_;
    VectorXd g(k);
    for (Index i = 0; i < k; ++i) g(i) = z_.col(active_[static_cast<std::size_t>(i)]).dot(z_.col(j)) / n_;
    VectorXd w = k ? VectorXd(chol_.triangularView<Eigen::Lower>().solve(g)) : VectorXd();
    const double pivot = gjj - w.squaredNorm();
    if (!(pivot > 1e-10 * gjj)) {
      skipped_[static_cast<std::size_t>(j)] = 1;
      return;
    }
    MatrixXd next = MatrixXd::Zero(k + 1, k + 1);
    next.topLeftCorner(k, k) = chol_;
    if (k) next.block(k, 0, 1, k) = w.transpose();
    next(k, k) = std::sqrt(pivot);
    chol_ = std::move(next);
    active_.push_back(j);
    signs_.push_back(sign);
    in_active_[static_cast<std::size_t>(j)] = 1;
  }

  void rebuild() {
    const auto k = static_cast<Index>(active_.size());
    MatrixXd g(k, k);
    for (Index a = 0; a < k; ++a)
      for (Index b = 0; b <= a; ++b)
        g(a, b) = g(b, a) = z_.col(active_[static_cast<std::size_t>(a)]).dot(z_.col(active_[static_cast<std::size_t>(b)])) / n_;
    Eigen::LLT<MatrixXd> llt(g);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::numeric, "lasso homotopy lost positive definiteness");
    chol_ = llt.matrixL();
  }

  const Standardized& s_;
  double n_;
  MatrixXd z_;
  VectorXd y_;
  VectorXd beta_;
  double lambda_ = 0.0;
  std::vector<Index> active_;
  std::vector<double> signs_;
  std::vector<char> in_active_;
  std::vector<char> skipped_;
  MatrixXd chol_;
  int steps_ = 0;
};

}  // namespace

std::string_view to_string(LinearMethod method) {
  switch (method) {
    case LinearMethod::intercept: return "intercept";
    case LinearMethod::ols: return "ols";
    case LinearMethod::lasso: return "lasso";
    case LinearMethod::elastic_net: return "elastic_net";
    case LinearMethod::ridge: return "ridge";
    case LinearMethod::noncentral_lasso: return "noncentral_lasso";
    case LinearMethod::pc_ols: return "pc_ols";
  }
  return "linear";
}

VectorXd LinearModel::predict(const MatrixXd& x) const {
  if (coefficients.size() == 0) return VectorXd::Constant(x.rows(), intercept);
  if (x.cols() != coefficients.size())
    throw Error(ErrorCode::configuration, "prediction matrix width differs from model width");
  return (x * coefficients).array() + intercept;
}

Index LinearModel::active_count() const {
  return (coefficients.array() != 0.0).count();
}

std::vector<LinearModel> fit_path(const MatrixXd& x, const VectorXd& y,
                                  std::span<const double> lambdas, double alpha,
                                  const CdOptions& options) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw Error(ErrorCode::parameter, "alpha must lie in [0, 1]");
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    if (!(lambdas[k] >= 0.0) || !std::isfinite(lambdas[k]))
      throw Error(ErrorCode::parameter, "lambda must be finite and nonnegative");
    if (k > 0 && lambdas[k] > lambdas[k - 1])
      throw Error(ErrorCode::configuration, "lambda path must be nonincreasing");
  }
  const Standardized s = standardize_design(x, y, options.noncentral);
  const auto fp = fingerprint_xy(x, y);
  std::vector<LinearModel> out;
  out.reserve(lambdas.size());
  if (alpha == 1.0 && options.exact_lasso) {
    Homotopy path(s);
    for (double lambda : lambdas) {
      path.advance(lambda);
      LinearModel m = assemble(s, path.beta(), path.intercept(), penalized_method(alpha, options.noncentral),
                               {lambda, alpha}, x.cols(), path.steps(), true);
      m.input_fingerprint = fp;
      out.push_back(std::move(m));
    }
    return out;
  }
  CdSolver solver(s, alpha, options);
  double previous = alpha > 0.0 ? max_abs_gradient(s) / alpha : 0.0;
  for (double lambda : lambdas) {
    std::vector<Index> strong;
    if (alpha > 0.0) {
      // Sequential strong rule; violations are caught by the full KKT pass.
      const double threshold = alpha * (2.0 * lambda - previous);
      const VectorXd g = solver.gradient();
      for (Index j = 0; j < g.size(); ++j)
        if (std::abs(g(j)) >= threshold) strong.push_back(j);
    }
    solver.solve(lambda, strong);
    LinearModel m = solver.model(penalized_method(alpha, options.noncentral), lambda, x.cols());
    m.input_fingerprint = fp;
    out.push_back(std::move(m));
    previous = lambda;
  }
  return out;
}

LinearModel fit_elastic_net(const MatrixXd& x, const VectorXd& y, double lambda, double alpha,
                            const CdOptions& options) {
  const double l[] = {lambda};
  return fit_path(x, y, l, alpha, options).front();
}

LinearModel fit_lasso(const MatrixXd& x, const VectorXd& y, double lambda, const CdOptions& options) {
  return fit_elastic_net(x, y, lambda, 1.0, options);
}

double lambda_max(const MatrixXd& x, const VectorXd& y, double alpha, bool noncentral) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw Error(ErrorCode::parameter, "lambda_max needs alpha in (0, 1]");
  const Standardized s = standardize_design(x, y, noncentral);
  const double y_spread = (y.array() - y.mean()).abs().maxCoeff();
  if (!(y_spread > 1e-14 * std::max(1.0, std::abs(y.mean()))))
    throw Error(ErrorCode::degenerate, "lambda_max of a constant response");
  return max_abs_gradient(s) / alpha;
}

double tingley_lambda(const MatrixXd& x, const VectorXd& y) { return 0.05 * lambda_max(x, y); }

std::vector<double> lambda_grid(const MatrixXd& x, const VectorXd& y, int size, double min_ratio,
                                double alpha) {
  if (size < 1) throw Error(ErrorCode::configuration, "lambda grid needs at least one point");
  if (!(min_ratio > 0.0 && min_ratio < 1.0))
    throw Error(ErrorCode::configuration, "lambda grid ratio must lie in (0, 1)");
  const double top = lambda_max(x, y, std::max(alpha, 1e-3));
  std::vector<double> grid(static_cast<std::size_t>(size));
  for (int k = 0; k < size; ++k) {
    const double frac = size == 1 ? 0.0 : static_cast<double>(k) / (size - 1);
    grid[static_cast<std::size_t>(k)] = top * std::pow(min_ratio, frac);
  }
  return grid;
}

KktReport kkt_check(const MatrixXd& x, const VectorXd& y, const LinearModel& model) {
  check_inputs(x, y);
  const double n = static_cast<double>(x.rows());
  const double l1 = model.penalty.lambda * model.penalty.alpha;
  const double l2 = model.penalty.lambda * (1.0 - model.penalty.alpha);
  const VectorXd r = y - model.predict(x);
  KktReport report;
  double penalty = 0.0;
  for (Index j = 0; j < x.cols(); ++j) {
    const double sd = model.column_sds(j);
    if (sd == 0.0) continue;
    const double b = model.std_coefficients(j);
    const double g = ((x.col(j).array() - model.column_means(j)) / sd).matrix().dot(r) / n;
    const double violation =
        b != 0.0 ? std::abs(g - l2 * b - l1 * (b > 0 ? 1.0 : -1.0)) : std::max(0.0, std::abs(g) - l1);
    report.max_violation = std::max(report.max_violation, violation);
    penalty += l1 * std::abs(b) + 0.5 * l2 * b * b;
  }
  if (model.noncentral) report.max_violation = std::max(report.max_violation, std::abs(r.mean()));
  report.objective = r.squaredNorm() / (2.0 * n) + penalty;
  return report;
}

CvResult select_lambda_cv(const MatrixXd& x, const VectorXd& y, const CvOptions& options,
                          const Seed& seed) {
  check_inputs(x, y);
  if (options.folds < 2) throw Error(ErrorCode::configuration, "cross-validation needs >= 2 folds");
  if (options.repetitions < 1) throw Error(ErrorCode::configuration, "repetitions must be >= 1");
  if (x.rows() < options.folds)
    throw Error(ErrorCode::insufficient_data, "fewer observations than folds");

  CvResult result;
  result.grid = options.grid.empty()
                    ? lambda_grid(x, y, options.grid_size, options.min_ratio, options.alpha)
                    : options.grid;
  if (result.grid.empty()) throw Error(ErrorCode::configuration, "empty lambda grid");
  std::sort(result.grid.begin(), result.grid.end(), std::greater<>());

  const auto n = static_cast<std::size_t>(x.rows());
  const std::size_t g = result.grid.size();
  std::vector<std::vector<double>> fold_mse;
  for (int rep = 0; rep < options.repetitions; ++rep) {
    std::vector<Index> perm(n);
    std::iota(perm.begin(), perm.end(), Index{0});
    Engine engine = make_engine(seed.child(static_cast<std::uint64_t>(rep)));
    std::shuffle(perm.begin(), perm.end(), engine);
    for (int fold = 0; fold < options.folds; ++fold) {
      std::vector<Index> train, test;
      for (std::size_t i = 0; i < n; ++i)
        (static_cast<int>(i % static_cast<std::size_t>(options.folds)) == fold ? test : train)
            .push_back(perm[i]);
      std::sort(train.begin(), train.end());
      std::sort(test.begin(), test.end());
      const MatrixXd xtr = x(train, Eigen::all);
      const VectorXd ytr = y(train);
      const MatrixXd xte = x(test, Eigen::all);
      const VectorXd yte = y(test);
      auto path = fit_path(xtr, ytr, result.grid, options.alpha, options.cd);
      std::vector<double> mse(g);
      for (std::size_t k = 0; k < g; ++k)
        mse[k] = (path[k].predict(xte) - yte).squaredNorm() / static_cast<double>(test.size());
      fold_mse.push_back(std::move(mse));
    }
  }

  const auto count = static_cast<double>(fold_mse.size());
  result.mean_mse.assign(g, 0.0);
  result.se.assign(g, 0.0);
  for (std::size_t k = 0; k < g; ++k) {
    for (const auto& m : fold_mse) result.mean_mse[k] += m[k];
    result.mean_mse[k] /= count;
    double ss = 0.0;
    for (const auto& m : fold_mse) ss += (m[k] - result.mean_mse[k]) * (m[k] - result.mean_mse[k]);
    result.se[k] = count > 1 ? std::sqrt(ss / (count - 1.0) / count) : 0.0;
  }
  result.best_index = 0;
  for (std::size_t k = 1; k < g; ++k)
    if (result.mean_mse[k] < result.mean_mse[result.best_index]) result.best_index = k;
  result.lambda = result.grid[result.best_index];
  return result;
}

LinearModel fit_ols(const MatrixXd& x, const VectorXd& y) {
  check_inputs(x, y);
  MatrixXd design(x.rows(), x.cols() + 1);
  design << VectorXd::Ones(x.rows()), x;
  const VectorXd coef = design.completeOrthogonalDecomposition().solve(y);
  LinearModel m;
  m.method = LinearMethod::ols;
  m.intercept = coef(0);
  m.coefficients = coef.tail(x.cols());
  m.column_means = x.colwise().mean().transpose();
  m.column_sds = VectorXd::Ones(x.cols());
  m.std_coefficients = m.coefficients;
  m.input_fingerprint = fingerprint_xy(x, y);
  return m;
}

LinearModel fit_intercept(const VectorXd& y) {
  if (y.size() < 1) throw Error(ErrorCode::insufficient_data, "intercept model needs data");
  if (!y.allFinite()) throw Error(ErrorCode::numeric, "non-finite target value");
  LinearModel m;
  m.method = LinearMethod::intercept;
  m.intercept = y.mean();
  Fingerprint fp;
  fp.add(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
  m.input_fingerprint = fp.value();
  return m;
}

}  // namespace paleo::solvers
