#pragma once

#include <span>
#include <string>
#include <vector>

namespace paleo::pcselect {

enum class Criterion { variance_threshold, variance_threshold_squared_bug, broken_stick, scree_gap };
std::string_view to_string(Criterion criterion);
Criterion parse_criterion(std::string_view text);
inline constexpr Criterion kAllCriteria[] = {Criterion::variance_threshold,
                                             Criterion::variance_threshold_squared_bug,
                                             Criterion::broken_stick, Criterion::scree_gap};

/// Eigenvalues, nonincreasing and nonnegative with at least one positive.
class Spectrum {
 public:
  explicit Spectrum(std::vector<double> eigenvalues);
  const std::vector<double>& eigenvalues() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  /// lambda_i / sum lambda.
  std::vector<double> shares() const;

 private:
  std::vector<double> values_;
};

/// Number of leading components to keep. Threshold rules keep the smallest K
/// whose cumulative share reaches the threshold; the squared variant applies
/// the same rule to squared eigenvalues (the documented mistake).
int select_k(const Spectrum& spectrum, Criterion criterion, double threshold = 0.8);

struct SelectionRow {
  Criterion criterion;
  double threshold;  // NaN for criteria that ignore it
  int k;
};
std::vector<SelectionRow> selection_table(const Spectrum& spectrum, std::span<const double> thresholds);
std::string format_table_csv(std::span<const SelectionRow> rows);

}  // namespace paleo::pcselect
