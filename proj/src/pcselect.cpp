#include "paleo/pcselect.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "paleo/common.hpp"

namespace paleo::pcselect {

std::string_view to_string(Criterion criterion) {
  switch (criterion) {
    case Criterion::variance_threshold: return "variance_threshold";
    case Criterion::variance_threshold_squared_bug: return "variance_threshold_squared_BUG";
    case Criterion::broken_stick: return "broken_stick";
    case Criterion::scree_gap: return "scree_gap";
  }
  return "variance_threshold";
}

Criterion parse_criterion(std::string_view text) {
  for (Criterion c : kAllCriteria)
    if (to_string(c) == text) return c;
  if (text == "squared_BUG" || text == "squared_bug") return Criterion::variance_threshold_squared_bug;
  throw Error(ErrorCode::configuration, "unknown PC criterion '" + std::string(text) + "'");
}

Spectrum::Spectrum(std::vector<double> eigenvalues) : values_(std::move(eigenvalues)) {
  if (values_.empty()) throw Error(ErrorCode::parameter, "empty eigenvalue spectrum");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i]) || values_[i] < 0.0)
      throw Error(ErrorCode::parameter, "eigenvalues must be finite and nonnegative");
    if (i > 0 && values_[i] > values_[i - 1])
      throw Error(ErrorCode::parameter, "eigenvalues must be sorted nonincreasing");
  }
  if (!(values_.front() > 0.0)) throw Error(ErrorCode::parameter, "spectrum has no positive eigenvalue");
}

std::vector<double> Spectrum::shares() const {
  const double total = std::accumulate(values_.begin(), values_.end(), 0.0);
  std::vector<double> out;
  out.reserve(values_.size());
  for (double v : values_) out.push_back(v / total);
  return out;
}

namespace {

int threshold_rule(const std::vector<double>& v, double threshold) {
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  double cum = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    cum += v[k];
    if (cum / total >= threshold - 1e-12) return static_cast<int>(k + 1);
  }
  return static_cast<int>(v.size());
}

}  // namespace

int select_k(const Spectrum& spectrum, Criterion criterion, double threshold) {
  const auto& v = spectrum.eigenvalues();
  const std::size_t p = v.size();
  switch (criterion) {
    case Criterion::variance_threshold:
    case Criterion::variance_threshold_squared_bug: {
      if (!(threshold > 0.0 && threshold <= 1.0))
        throw Error(ErrorCode::configuration, "threshold must lie in (0, 1]");
      if (criterion == Criterion::variance_threshold) return threshold_rule(v, threshold);
      std::vector<double> sq;
      for (double x : v) sq.push_back(x * x);
      return threshold_rule(sq, threshold);
    }
    case Criterion::broken_stick: {
      const auto shares = spectrum.shares();
      int k = 0;
      for (std::size_t i = 0; i < p; ++i) {
        double expected = 0.0;
        for (std::size_t j = i; j < p; ++j) expected += 1.0 / static_cast<double>(j + 1);
        expected /= static_cast<double>(p);
        if (shares[i] > expected) ++k;
        else break;
      }
      return std::max(k, 1);
    }
    case Criterion::scree_gap: {
      if (p == 1) return 1;
      std::size_t best = 0;
      for (std::size_t i = 1; i + 1 < p; ++i)
        if (v[i] - v[i + 1] > v[best] - v[best + 1]) best = i;
      return static_cast<int>(best + 1);
    }
  }
  return 1;
}

std::vector<SelectionRow> selection_table(const Spectrum& spectrum, std::span<const double> thresholds) {
  std::vector<SelectionRow> rows;
  for (Criterion c : {Criterion::variance_threshold, Criterion::variance_threshold_squared_bug})
    for (double t : thresholds) rows.push_back({c, t, select_k(spectrum, c, t)});
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (Criterion c : {Criterion::broken_stick, Criterion::scree_gap})
    rows.push_back({c, nan, select_k(spectrum, c)});
  return rows;
}

std::string format_table_csv(std::span<const SelectionRow> rows) {
  std::ostringstream out;
  out << "criterion,threshold,k\n";
  for (const auto& r : rows)
    out << to_string(r.criterion) << ',' << (std::isnan(r.threshold) ? "" : format_double(r.threshold))
        << ',' << r.k << '\n';
  return out.str();
}

}  // namespace paleo::pcselect
