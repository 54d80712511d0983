#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "paleo/common.hpp"

namespace paleo::data {

using MissingMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Year-indexed scalar series with an explicit missing mask. Missing entries
/// hold NaN in values() but statistics always consult the mask.
class AnnualSeries {
 public:
  AnnualSeries() = default;
  AnnualSeries(int start_year, std::vector<double> values, std::vector<std::uint8_t> missing = {});

  /// Builds a series marking non-finite values as missing.
  static AnnualSeries from_values(int start_year, std::vector<double> values);

  int start_year() const noexcept { return start_year_; }
  int end_year() const noexcept { return start_year_ + static_cast<int>(values_.size()) - 1; }
  YearRange years() const noexcept { return {start_year(), end_year()}; }
  std::size_t size() const noexcept { return values_.size(); }

  bool covers(int year) const noexcept { return years().contains(year); }
  bool missing(int year) const;
  bool available(int year) const noexcept;
  double at(int year) const;

  std::span<const double> values() const noexcept { return values_; }
  std::span<const std::uint8_t> missing_mask() const noexcept { return missing_; }
  std::size_t count_available() const noexcept;

  AnnualSeries slice(const YearRange& range) const;
  /// Copy with every year inside `range` marked missing.
  AnnualSeries masked(const YearRange& range) const;
  /// Copy with a constant added to every available entry.
  AnnualSeries shifted(double offset) const;

  /// Free-form provenance label; center_fitted_bug sets it.
  const std::string& note() const noexcept { return note_; }
  AnnualSeries with_note(std::string note) const;

 private:
  int start_year_ = 0;
  std::vector<double> values_;
  std::vector<std::uint8_t> missing_;
  std::string note_;
};

enum class SeriesKind { proxy, pseudoproxy, local_temperature, external_prediction };

std::string_view to_string(SeriesKind kind);
SeriesKind parse_series_kind(std::string_view text);

struct SeriesMeta {
  std::string name;
  double latitude = 0.0;
  double longitude = 0.0;
  SeriesKind kind = SeriesKind::proxy;
  int first_year = 0;
  /// Generator description for synthetic columns (e.g. "tingley beta=1.37").
  std::string generator;

  bool northern() const noexcept { return latitude >= 0.0; }
};

/// Year x series matrix with per-column metadata.
class ProxyMatrix {
 public:
  ProxyMatrix() = default;
  ProxyMatrix(int start_year, std::vector<SeriesMeta> columns, Eigen::MatrixXd values,
              MissingMask missing = {});

  int start_year() const noexcept { return start_year_; }
  int end_year() const noexcept { return start_year_ + static_cast<int>(values_.rows()) - 1; }
  YearRange years() const noexcept { return {start_year(), end_year()}; }
  Eigen::Index n_years() const noexcept { return values_.rows(); }
  Eigen::Index n_series() const noexcept { return values_.cols(); }

  const std::vector<SeriesMeta>& columns() const noexcept { return columns_; }
  const Eigen::MatrixXd& values() const noexcept { return values_; }
  const MissingMask& missing() const noexcept { return missing_; }

  Eigen::Index row(int year) const;
  bool available(int year, Eigen::Index column) const;
  AnnualSeries column(Eigen::Index j) const;

  ProxyMatrix slice(const YearRange& range) const;
  ProxyMatrix select_columns(std::span<const Eigen::Index> columns) const;
  /// Concatenates columns of two matrices sharing the same year range.
  ProxyMatrix append_columns(const ProxyMatrix& other) const;
  ProxyMatrix with_columns(std::vector<SeriesMeta> columns) const;

  Fingerprint fingerprint() const;

 private:
  int start_year_ = 0;
  std::vector<SeriesMeta> columns_;
  Eigen::MatrixXd values_;
  MissingMask missing_;
};

/// Rows of a ProxyMatrix for an explicit list of years, restricted to the
/// columns that are complete on those years.
struct DesignRows {
  Eigen::MatrixXd x;
  std::vector<Eigen::Index> columns;  // indices into the source matrix
  std::vector<Eigen::Index> dropped;  // columns with a missing value in `years`
};

DesignRows gather_rows(const ProxyMatrix& matrix, std::span<const int> years);
Eigen::MatrixXd gather_rows(const ProxyMatrix& matrix, std::span<const int> years,
                            std::span<const Eigen::Index> columns);
std::vector<double> gather_values(const AnnualSeries& series, std::span<const int> years);

enum class HoldoutMode { front, interior, back };
std::string_view to_string(HoldoutMode mode);

struct HoldoutBlock {
  YearRange years;
  HoldoutMode mode = HoldoutMode::interior;
  bool operator==(const HoldoutBlock&) const = default;
};

/// Which block positions to keep: interpolated = interior only,
/// extrapolated = front and back.
enum class BlockFilter { all, interpolated, extrapolated };
std::string_view to_string(BlockFilter filter);
BlockFilter parse_block_filter(std::string_view text);

class HoldoutScheme {
 public:
  HoldoutScheme(YearRange calibration, std::vector<HoldoutBlock> blocks);

  const YearRange& calibration() const noexcept { return calibration_; }
  const std::vector<HoldoutBlock>& blocks() const noexcept { return blocks_; }
  int block_length() const noexcept;

 private:
  YearRange calibration_;
  std::vector<HoldoutBlock> blocks_;
};

HoldoutScheme make_holdout_blocks(const YearRange& calibration, int length, int stride = 1,
                                  BlockFilter filter = BlockFilter::all);

enum class CenteringMode { none, anomaly_vs_observed, anomaly_vs_fitted_bug };
std::string_view to_string(CenteringMode mode);
CenteringMode parse_centering_mode(std::string_view text);

struct CenteringSpec {
  YearRange reference_period;
  CenteringMode mode = CenteringMode::anomaly_vs_observed;
};

/// Mean over the available entries of `series` inside `range`.
double mean_over(const AnnualSeries& series, const YearRange& range);

/// series - mean(series over reference).
AnnualSeries center_anomaly(const AnnualSeries& series, const CenteringSpec& spec);
/// series - mean(reference_source over reference): centers predictions
/// against the observed target.
AnnualSeries center_anomaly(const AnnualSeries& series, const CenteringSpec& spec,
                            const AnnualSeries& reference_source);

/// The erroneous procedure: subtracts each model's own mean fitted value over
/// the reference period. The result is tagged in note().
AnnualSeries center_fitted_bug(const AnnualSeries& predictions, const CenteringSpec& spec);

/// Mean 0 and sample standard deviation 1 over `period`.
AnnualSeries standardize(const AnnualSeries& series, const YearRange& period);

// CSV ---------------------------------------------------------------------

struct LoadOptions {
  /// Metadata sidecar with columns name,latitude,longitude,kind,first_year.
  std::optional<std::filesystem::path> metadata;
  /// Keep only these series, in this order. Empty keeps all.
  std::vector<std::string> select;
  SeriesKind default_kind = SeriesKind::proxy;
};

ProxyMatrix load_matrix(const std::filesystem::path& path, const LoadOptions& options = {});
ProxyMatrix parse_matrix(std::string_view csv, const LoadOptions& options = {});

std::string format_matrix(const ProxyMatrix& matrix);
void write_matrix(const ProxyMatrix& matrix, const std::filesystem::path& path);

std::string format_metadata(const ProxyMatrix& matrix);
void write_metadata(const ProxyMatrix& matrix, const std::filesystem::path& path);
std::vector<SeriesMeta> parse_metadata(std::string_view csv);

/// A two-column year,value CSV (or the named column of a wider matrix).
AnnualSeries load_series(const std::filesystem::path& path, const std::string& column = {});
std::string format_series(const AnnualSeries& series, const std::string& name = "value");

}  // namespace paleo::data
