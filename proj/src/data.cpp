#include "paleo/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace paleo::data {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << text;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = end + 1;
  }
  return lines;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t pos = 0;
  while (true) {
    std::size_t end = line.find(',', pos);
    if (end == std::string_view::npos) {
      cells.push_back(trim(line.substr(pos)));
      break;
    }
    cells.push_back(trim(line.substr(pos, end - pos)));
    pos = end + 1;
  }
  return cells;
}

bool is_missing_token(std::string_view cell) {
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan";
}

std::optional<double> parse_double(std::string_view cell) {
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value))
    return std::nullopt;
  return value;
}

std::optional<int> parse_int(std::string_view cell) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) return std::nullopt;
  return value;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

// AnnualSeries --------------------------------------------------------------

AnnualSeries::AnnualSeries(int start_year, std::vector<double> values,
                           std::vector<std::uint8_t> missing)
    : start_year_(start_year), values_(std::move(values)), missing_(std::move(missing)) {
  if (values_.empty()) throw Error(ErrorCode::configuration, "series must have at least one year");
  if (missing_.empty()) missing_.assign(values_.size(), 0);
  if (missing_.size() != values_.size())
    throw Error(ErrorCode::configuration, "missing mask length differs from values length");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (missing_[i]) {
      values_[i] = kNaN;
    } else if (!std::isfinite(values_[i])) {
      throw Error(ErrorCode::numeric,
                  "non-finite value at year " + std::to_string(start_year_ + static_cast<int>(i)));
    }
  }
}

AnnualSeries AnnualSeries::from_values(int start_year, std::vector<double> values) {
  std::vector<std::uint8_t> missing(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) missing[i] = !std::isfinite(values[i]);
  return AnnualSeries(start_year, std::move(values), std::move(missing));
}

bool AnnualSeries::missing(int year) const {
  if (!covers(year)) return true;
  return missing_[static_cast<std::size_t>(year - start_year_)] != 0;
}

bool AnnualSeries::available(int year) const noexcept {
  return covers(year) && missing_[static_cast<std::size_t>(year - start_year_)] == 0;
}

double AnnualSeries::at(int year) const {
  if (!available(year))
    throw Error(ErrorCode::coverage, "no value for year " + std::to_string(year));
  return values_[static_cast<std::size_t>(year - start_year_)];
}

std::size_t AnnualSeries::count_available() const noexcept {
  return static_cast<std::size_t>(std::count(missing_.begin(), missing_.end(), 0));
}

AnnualSeries AnnualSeries::slice(const YearRange& range) const {
  if (range.empty() || !years().contains(range))
    throw Error(ErrorCode::coverage,
                "slice " + to_string(range) + " outside series " + to_string(years()));
  auto off = static_cast<std::size_t>(range.first - start_year_);
  auto len = static_cast<std::size_t>(range.length());
  AnnualSeries out(range.first,
                   std::vector<double>(values_.begin() + off, values_.begin() + off + len),
                   std::vector<std::uint8_t>(missing_.begin() + off, missing_.begin() + off + len));
  out.note_ = note_;
  return out;
}

AnnualSeries AnnualSeries::masked(const YearRange& range) const {
  AnnualSeries out = *this;
  for (int y = std::max(range.first, start_year()); y <= std::min(range.last, end_year()); ++y) {
    auto i = static_cast<std::size_t>(y - start_year_);
    out.missing_[i] = 1;
    out.values_[i] = kNaN;
  }
  return out;
}

AnnualSeries AnnualSeries::shifted(double offset) const {
  AnnualSeries out = *this;
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (!missing_[i]) out.values_[i] += offset;
  return out;
}

AnnualSeries AnnualSeries::with_note(std::string note) const {
  AnnualSeries out = *this;
  out.note_ = std::move(note);
  return out;
}

// Metadata ---------------------------------------------------------------

std::string_view to_string(SeriesKind kind) {
  switch (kind) {
    case SeriesKind::proxy: return "proxy";
    case SeriesKind::pseudoproxy: return "pseudoproxy";
    case SeriesKind::local_temperature: return "local_temperature";
    case SeriesKind::external_prediction: return "external_prediction";
  }
  return "proxy";
}

SeriesKind parse_series_kind(std::string_view text) {
  for (auto k : {SeriesKind::proxy, SeriesKind::pseudoproxy, SeriesKind::local_temperature,
                 SeriesKind::external_prediction})
    if (text == to_string(k)) return k;
  throw Error(ErrorCode::parse, "unknown series kind '" + std::string(text) + "'");
}

// ProxyMatrix --------------------------------------------------------------

ProxyMatrix::ProxyMatrix(int start_year, std::vector<SeriesMeta> columns, Eigen::MatrixXd values,
                         MissingMask missing)
    : start_year_(start_year),
      columns_(std::move(columns)),
      values_(std::move(values)),
      missing_(std::move(missing)) {
  if (static_cast<Eigen::Index>(columns_.size()) != values_.cols())
    throw Error(ErrorCode::configuration, "column metadata count differs from matrix width");
  if (missing_.size() == 0) missing_ = MissingMask::Constant(values_.rows(), values_.cols(), false);
  if (missing_.rows() != values_.rows() || missing_.cols() != values_.cols())
    throw Error(ErrorCode::configuration, "missing mask shape differs from matrix shape");
  for (Eigen::Index j = 0; j < values_.cols(); ++j) {
    const auto& meta = columns_[static_cast<std::size_t>(j)];
    if (!(meta.latitude >= -90.0 && meta.latitude <= 90.0))
      throw Error(ErrorCode::configuration, "latitude of '" + meta.name + "' outside [-90, 90]");
    for (Eigen::Index i = 0; i < values_.rows(); ++i) {
      if (missing_(i, j)) {
        values_(i, j) = kNaN;
      } else if (!std::isfinite(values_(i, j))) {
        missing_(i, j) = true;
        values_(i, j) = kNaN;
      }
    }
  }
}

Eigen::Index ProxyMatrix::row(int year) const {
  if (!years().contains(year))
    throw Error(ErrorCode::coverage, "year " + std::to_string(year) + " outside matrix " +
                                         paleo::to_string(years()));
  return year - start_year_;
}

bool ProxyMatrix::available(int year, Eigen::Index column) const {
  return years().contains(year) && !missing_(year - start_year_, column);
}

AnnualSeries ProxyMatrix::column(Eigen::Index j) const {
  std::vector<double> v(static_cast<std::size_t>(n_years()));
  std::vector<std::uint8_t> m(v.size());
  for (Eigen::Index i = 0; i < n_years(); ++i) {
    v[static_cast<std::size_t>(i)] = values_(i, j);
    m[static_cast<std::size_t>(i)] = missing_(i, j);
  }
  return AnnualSeries(start_year_, std::move(v), std::move(m))
      .with_note(columns_[static_cast<std::size_t>(j)].name);
}

ProxyMatrix ProxyMatrix::slice(const YearRange& range) const {
  if (range.empty() || !years().contains(range))
    throw Error(ErrorCode::coverage,
                "slice " + paleo::to_string(range) + " outside matrix " + paleo::to_string(years()));
  const Eigen::Index off = range.first - start_year_;
  return ProxyMatrix(range.first, columns_, values_.middleRows(off, range.length()),
                     missing_.middleRows(off, range.length()));
}

ProxyMatrix ProxyMatrix::select_columns(std::span<const Eigen::Index> columns) const {
  std::vector<SeriesMeta> meta;
  Eigen::MatrixXd v(n_years(), static_cast<Eigen::Index>(columns.size()));
  MissingMask m(n_years(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t k = 0; k < columns.size(); ++k) {
    meta.push_back(columns_.at(static_cast<std::size_t>(columns[k])));
    v.col(static_cast<Eigen::Index>(k)) = values_.col(columns[k]);
    m.col(static_cast<Eigen::Index>(k)) = missing_.col(columns[k]);
  }
  return ProxyMatrix(start_year_, std::move(meta), std::move(v), std::move(m));
}

ProxyMatrix ProxyMatrix::append_columns(const ProxyMatrix& other) const {
  if (other.years() != years())
    throw Error(ErrorCode::configuration, "append_columns requires identical year ranges");
  std::vector<SeriesMeta> meta = columns_;
  meta.insert(meta.end(), other.columns_.begin(), other.columns_.end());
  Eigen::MatrixXd v(n_years(), n_series() + other.n_series());
  v << values_, other.values_;
  MissingMask m(n_years(), n_series() + other.n_series());
  m << missing_, other.missing_;
  return ProxyMatrix(start_year_, std::move(meta), std::move(v), std::move(m));
}

ProxyMatrix ProxyMatrix::with_columns(std::vector<SeriesMeta> columns) const {
  return ProxyMatrix(start_year_, std::move(columns), values_, missing_);
}

Fingerprint ProxyMatrix::fingerprint() const {
  Fingerprint fp;
  fp.add(static_cast<std::uint64_t>(start_year_ + (1LL << 32)));
  fp.add(static_cast<std::uint64_t>(n_years())).add(static_cast<std::uint64_t>(n_series()));
  for (Eigen::Index j = 0; j < n_series(); ++j) {
    fp.add(columns_[static_cast<std::size_t>(j)].name);
    for (Eigen::Index i = 0; i < n_years(); ++i)
      fp.add(missing_(i, j) ? std::numeric_limits<double>::infinity() : values_(i, j));
  }
  return fp;
}

DesignRows gather_rows(const ProxyMatrix& matrix, std::span<const int> years) {
  DesignRows out;
  for (Eigen::Index j = 0; j < matrix.n_series(); ++j) {
    bool complete = true;
    for (int y : years) {
      if (!matrix.available(y, j)) {
        complete = false;
        break;
      }
    }
    (complete ? out.columns : out.dropped).push_back(j);
  }
  out.x = gather_rows(matrix, years, out.columns);
  return out;
}

Eigen::MatrixXd gather_rows(const ProxyMatrix& matrix, std::span<const int> years,
                            std::span<const Eigen::Index> columns) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(years.size()),
                    static_cast<Eigen::Index>(columns.size()));
  for (std::size_t r = 0; r < years.size(); ++r) {
    const Eigen::Index i = matrix.row(years[r]);
    for (std::size_t c = 0; c < columns.size(); ++c)
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = matrix.values()(i, columns[c]);
  }
  return x;
}

std::vector<double> gather_values(const AnnualSeries& series, std::span<const int> years) {
  std::vector<double> out;
  out.reserve(years.size());
  for (int y : years) out.push_back(series.at(y));
  return out;
}

// Holdout blocks ---------------------------------------------------------

std::string_view to_string(HoldoutMode mode) {
  switch (mode) {
    case HoldoutMode::front: return "front";
    case HoldoutMode::interior: return "interior";
    case HoldoutMode::back: return "back";
  }
  return "interior";
}

std::string_view to_string(BlockFilter filter) {
  switch (filter) {
    case BlockFilter::all: return "all";
    case BlockFilter::interpolated: return "interpolated";
    case BlockFilter::extrapolated: return "extrapolated";
  }
  return "all";
}

BlockFilter parse_block_filter(std::string_view text) {
  for (auto f : {BlockFilter::all, BlockFilter::interpolated, BlockFilter::extrapolated})
    if (text == to_string(f)) return f;
  throw Error(ErrorCode::configuration, "unknown block mode '" + std::string(text) + "'");
}

HoldoutScheme::HoldoutScheme(YearRange calibration, std::vector<HoldoutBlock> blocks)
    : calibration_(calibration), blocks_(std::move(blocks)) {
  if (calibration_.empty()) throw Error(ErrorCode::configuration, "empty calibration range");
  for (const auto& b : blocks_) {
    if (b.years.empty() || !calibration_.contains(b.years))
      throw Error(ErrorCode::configuration, "holdout block " + paleo::to_string(b.years) +
                                                " outside calibration " +
                                                paleo::to_string(calibration_));
    if (b.years.length() != blocks_.front().years.length())
      throw Error(ErrorCode::configuration, "holdout blocks must share one length");
  }
}

int HoldoutScheme::block_length() const noexcept {
  return blocks_.empty() ? 0 : blocks_.front().years.length();
}

HoldoutScheme make_holdout_blocks(const YearRange& calibration, int length, int stride,
                                  BlockFilter filter) {
  if (calibration.empty()) throw Error(ErrorCode::configuration, "empty calibration range");
  if (length < 1 || length > calibration.length())
    throw Error(ErrorCode::configuration, "block length " + std::to_string(length) +
                                              " does not fit calibration " +
                                              paleo::to_string(calibration));
  if (stride < 1) throw Error(ErrorCode::configuration, "stride must be >= 1");

  std::vector<HoldoutBlock> blocks;
  for (int start = calibration.first; start + length - 1 <= calibration.last; start += stride)
    blocks.push_back({{start, start + length - 1}, HoldoutMode::interior});
  // a coarse stride still ends with a block flush against the last year
  if (blocks.back().years.last < calibration.last)
    blocks.push_back({{calibration.last - length + 1, calibration.last}, HoldoutMode::interior});
  for (auto& b : blocks) {
    if (b.years.first == calibration.first) b.mode = HoldoutMode::front;
    else if (b.years.last == calibration.last) b.mode = HoldoutMode::back;
  }

  if (filter != BlockFilter::all) {
    const bool keep_interior = filter == BlockFilter::interpolated;
    std::erase_if(blocks, [&](const HoldoutBlock& b) {
      return (b.mode == HoldoutMode::interior) != keep_interior;
    });
  }
  return HoldoutScheme(calibration, std::move(blocks));
}

// Centering ----------------------------------------------------------------

std::string_view to_string(CenteringMode mode) {
  switch (mode) {
    case CenteringMode::none: return "none";
    case CenteringMode::anomaly_vs_observed: return "anomaly_vs_observed";
    case CenteringMode::anomaly_vs_fitted_bug: return "anomaly_vs_fitted_BUG";
  }
  return "none";
}

CenteringMode parse_centering_mode(std::string_view text) {
  if (text == "none") return CenteringMode::none;
  if (text == "anomaly_vs_observed" || text == "observed") return CenteringMode::anomaly_vs_observed;
  if (text == "anomaly_vs_fitted_BUG" || text == "anomaly_vs_fitted_bug" || text == "fitted_bug")
    return CenteringMode::anomaly_vs_fitted_bug;
  throw Error(ErrorCode::configuration, "unknown centering mode '" + std::string(text) + "'");
}

double mean_over(const AnnualSeries& series, const YearRange& range) {
  double sum = 0.0;
  std::size_t n = 0;
  for (int y = range.first; y <= range.last; ++y) {
    if (series.available(y)) {
      sum += series.at(y);
      ++n;
    }
  }
  if (n == 0)
    throw Error(ErrorCode::degenerate,
                "no available values in reference period " + paleo::to_string(range));
  return sum / static_cast<double>(n);
}

namespace {

void check_reference(const AnnualSeries& series, const CenteringSpec& spec) {
  if (spec.reference_period.empty() || !series.years().contains(spec.reference_period))
    throw Error(ErrorCode::degenerate, "reference period " + paleo::to_string(spec.reference_period) +
                                           " outside series " + paleo::to_string(series.years()));
}

}  // namespace

AnnualSeries center_anomaly(const AnnualSeries& series, const CenteringSpec& spec) {
  return center_anomaly(series, spec, series);
}

AnnualSeries center_anomaly(const AnnualSeries& series, const CenteringSpec& spec,
                            const AnnualSeries& reference_source) {
  if (spec.mode != CenteringMode::anomaly_vs_observed)
    throw Error(ErrorCode::configuration, "center_anomaly requires mode anomaly_vs_observed");
  check_reference(reference_source, spec);
  return series.shifted(-mean_over(reference_source, spec.reference_period));
}

AnnualSeries center_fitted_bug(const AnnualSeries& predictions, const CenteringSpec& spec) {
  if (spec.mode != CenteringMode::anomaly_vs_fitted_bug)
    throw Error(ErrorCode::configuration, "center_fitted_bug requires mode anomaly_vs_fitted_BUG");
  check_reference(predictions, spec);
  return predictions.shifted(-mean_over(predictions, spec.reference_period))
      .with_note("ERRONEOUS: centered on the model's own fitted-value mean over " +
                 paleo::to_string(spec.reference_period));
}

AnnualSeries standardize(const AnnualSeries& series, const YearRange& period) {
  std::vector<double> v;
  for (int y = period.first; y <= period.last; ++y)
    if (series.available(y)) v.push_back(series.at(y));
  if (v.size() < 2)
    throw Error(ErrorCode::insufficient_data,
                "standardize needs two values in " + paleo::to_string(period));
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  if (!(sd > 0.0)) throw Error(ErrorCode::degenerate, "zero variance over " + paleo::to_string(period));
  std::vector<double> out(series.values().begin(), series.values().end());
  std::vector<std::uint8_t> mask(series.missing_mask().begin(), series.missing_mask().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!mask[i]) out[i] = (out[i] - mean) / sd;
  return AnnualSeries(series.start_year(), std::move(out), std::move(mask)).with_note(series.note());
}

// CSV ------------------------------------------------------------------------

ProxyMatrix parse_matrix(std::string_view csv, const LoadOptions& options) {
  auto lines = split_lines(csv);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw Error(ErrorCode::format, "empty CSV");

  auto header = split_cells(lines.front());
  if (header.size() < 2 || lower(header.front()) != "year")
    throw Error(ErrorCode::format, "first header cell must be 'year' followed by series names");
  const std::size_t width = header.size() - 1;

  struct Row {
    int year;
    std::vector<double> values;
  };
  std::vector<Row> rows;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;
    if (lines[li].empty()) continue;
    auto cells = split_cells(lines[li]);
    if (cells.size() != header.size())
      throw Error(ErrorCode::format, "row " + std::to_string(line_no) + " has " +
                                         std::to_string(cells.size()) + " cells, expected " +
                                         std::to_string(header.size()));
    auto year = parse_int(cells[0]);
    if (!year)
      throw Error(ErrorCode::parse, "row " + std::to_string(line_no) + ", column 1 (year): '" +
                                        std::string(cells[0]) + "' is not an integer year");
    if (!rows.empty() && *year <= rows.back().year)
      throw Error(ErrorCode::format, "row " + std::to_string(line_no) + ": year " +
                                         std::to_string(*year) + " is not increasing");
    Row row{*year, std::vector<double>(width, kNaN)};
    for (std::size_t c = 0; c < width; ++c) {
      std::string_view cell = cells[c + 1];
      if (is_missing_token(cell)) continue;
      auto value = parse_double(cell);
      if (!value)
        throw Error(ErrorCode::parse, "row " + std::to_string(line_no) + ", column " +
                                          std::to_string(c + 2) + " (" + std::string(header[c + 1]) +
                                          "): '" + std::string(cell) + "' is not numeric");
      row.values[c] = *value;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::format, "CSV has no data rows");

  const int start = rows.front().year;
  const int n_years = rows.back().year - start + 1;
  Eigen::MatrixXd values = Eigen::MatrixXd::Constant(n_years, static_cast<Eigen::Index>(width), kNaN);
  MissingMask missing = MissingMask::Constant(n_years, static_cast<Eigen::Index>(width), true);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < width; ++c) {
      if (std::isfinite(row.values[c])) {
        values(row.year - start, static_cast<Eigen::Index>(c)) = row.values[c];
        missing(row.year - start, static_cast<Eigen::Index>(c)) = false;
      }
    }
  }

  std::vector<SeriesMeta> meta(width);
  for (std::size_t c = 0; c < width; ++c) {
    meta[c].name = std::string(header[c + 1]);
    meta[c].kind = options.default_kind;
    meta[c].first_year = start;
    for (Eigen::Index i = 0; i < n_years; ++i) {
      if (!missing(i, static_cast<Eigen::Index>(c))) {
        meta[c].first_year = start + static_cast<int>(i);
        break;
      }
    }
  }
  if (options.metadata) {
    auto sidecar = parse_metadata(read_file(*options.metadata));
    std::map<std::string, SeriesMeta> by_name;
    for (auto& m : sidecar) by_name[m.name] = m;
    for (auto& m : meta) {
      auto it = by_name.find(m.name);
      if (it == by_name.end())
        throw Error(ErrorCode::format, "metadata sidecar lacks series '" + m.name + "'");
      m = it->second;
    }
  }

  ProxyMatrix matrix(start, std::move(meta), std::move(values), std::move(missing));
  if (options.select.empty()) return matrix;
  std::vector<Eigen::Index> keep;
  for (const auto& name : options.select) {
    auto it = std::find_if(matrix.columns().begin(), matrix.columns().end(),
                           [&](const SeriesMeta& m) { return m.name == name; });
    if (it == matrix.columns().end())
      throw Error(ErrorCode::format, "series '" + name + "' not found");
    keep.push_back(it - matrix.columns().begin());
  }
  return matrix.select_columns(keep);
}

ProxyMatrix load_matrix(const std::filesystem::path& path, const LoadOptions& options) {
  return parse_matrix(read_file(path), options);
}

std::string format_matrix(const ProxyMatrix& matrix) {
  std::string out = "year";
  for (const auto& c : matrix.columns()) out += "," + c.name;
  out += '\n';
  for (Eigen::Index i = 0; i < matrix.n_years(); ++i) {
    out += std::to_string(matrix.start_year() + static_cast<int>(i));
    for (Eigen::Index j = 0; j < matrix.n_series(); ++j) {
      out += ',';
      if (!matrix.missing()(i, j)) out += format_double(matrix.values()(i, j));
    }
    out += '\n';
  }
  return out;
}

void write_matrix(const ProxyMatrix& matrix, const std::filesystem::path& path) {
  write_file(path, format_matrix(matrix));
}

std::string format_metadata(const ProxyMatrix& matrix) {
  const bool with_generator = std::any_of(matrix.columns().begin(), matrix.columns().end(),
                                          [](const SeriesMeta& m) { return !m.generator.empty(); });
  std::string out = "name,latitude,longitude,kind,first_year";
  if (with_generator) out += ",generator";
  out += '\n';
  for (const auto& m : matrix.columns()) {
    out += m.name + "," + format_double(m.latitude) + "," + format_double(m.longitude) + "," +
           std::string(to_string(m.kind)) + "," + std::to_string(m.first_year);
    if (with_generator) out += "," + m.generator;
    out += '\n';
  }
  return out;
}

void write_metadata(const ProxyMatrix& matrix, const std::filesystem::path& path) {
  write_file(path, format_metadata(matrix));
}

std::vector<SeriesMeta> parse_metadata(std::string_view csv) {
  auto lines = split_lines(csv);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw Error(ErrorCode::format, "empty metadata CSV");
  auto header = split_cells(lines.front());
  const std::vector<std::string> expected{"name", "latitude", "longitude", "kind", "first_year"};
  if (header.size() < expected.size())
    throw Error(ErrorCode::format, "metadata header must be name,latitude,longitude,kind,first_year");
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (lower(header[i]) != expected[i])
      throw Error(ErrorCode::format, "metadata column " + std::to_string(i + 1) + " must be '" +
                                         expected[i] + "'");
  std::vector<SeriesMeta> out;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    const std::string row = "metadata row " + std::to_string(li + 1);
    auto cells = split_cells(lines[li]);
    if (cells.size() < expected.size()) throw Error(ErrorCode::format, row + " is short");
    SeriesMeta m;
    m.name = std::string(cells[0]);
    auto lat = parse_double(cells[1]);
    auto lon = parse_double(cells[2]);
    auto first = parse_int(cells[4]);
    if (!lat) throw Error(ErrorCode::parse, row + ", column 2 (latitude) is not numeric");
    if (!lon) throw Error(ErrorCode::parse, row + ", column 3 (longitude) is not numeric");
    if (!first) throw Error(ErrorCode::parse, row + ", column 5 (first_year) is not an integer");
    m.latitude = *lat;
    m.longitude = *lon;
    m.kind = parse_series_kind(cells[3]);
    m.first_year = *first;
    if (cells.size() > expected.size()) {
      // The generator description may itself contain commas.
      std::string gen;
      for (std::size_t c = expected.size(); c < cells.size(); ++c) {
        if (c > expected.size()) gen += ',';
        gen += cells[c];
      }
      m.generator = gen;
    }
    out.push_back(std::move(m));
  }
  return out;
}

AnnualSeries load_series(const std::filesystem::path& path, const std::string& column) {
  auto matrix = load_matrix(path);
  Eigen::Index j = 0;
  if (column.empty()) {
    if (matrix.n_series() != 1)
      throw Error(ErrorCode::format, path.string() + " has several series; name one");
  } else {
    auto it = std::find_if(matrix.columns().begin(), matrix.columns().end(),
                           [&](const SeriesMeta& m) { return m.name == column; });
    if (it == matrix.columns().end())
      throw Error(ErrorCode::format, "series '" + column + "' not found in " + path.string());
    j = it - matrix.columns().begin();
  }
  return matrix.column(j);
}

std::string format_series(const AnnualSeries& series, const std::string& name) {
  std::string out = "year," + name + "\n";
  for (int y = series.start_year(); y <= series.end_year(); ++y) {
    out += std::to_string(y) + ",";
    if (series.available(y)) out += format_double(series.at(y));
    out += '\n';
  }
  return out;
}

}  // namespace paleo::data
