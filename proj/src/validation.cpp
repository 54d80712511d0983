#include "paleo/validation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "paleo/parallel.hpp"

namespace paleo::validation {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const std::map<std::string, MethodKind, std::less<>>& method_names() {
  static const std::map<std::string, MethodKind, std::less<>> names{
      {"intercept", MethodKind::intercept},
      {"arma", MethodKind::arma},
      {"ols", MethodKind::ols},
      {"lasso_cv", MethodKind::lasso_cv},
      {"lasso_tingley", MethodKind::lasso_tingley},
      {"lasso", MethodKind::lasso_fixed},
      {"enet_cv", MethodKind::elastic_net_cv},
      {"ridge_cv", MethodKind::ridge_cv},
      {"noncentral_lasso_cv", MethodKind::noncentral_lasso_cv},
      {"pc_ols", MethodKind::pc_ols},
      {"cps", MethodKind::cps},
      {"composite_regression", MethodKind::composite_regression},
  };
  return names;
}

std::string_view kind_name(MethodKind kind) {
  for (const auto& [name, k] : method_names())
    if (k == kind) return name;
  return "unknown";
}

bool uses_cv(MethodKind kind) {
  return kind == MethodKind::lasso_cv || kind == MethodKind::elastic_net_cv ||
         kind == MethodKind::ridge_cv || kind == MethodKind::noncentral_lasso_cv;
}

double parse_number(std::string_view text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(std::string(text), &used);
    if (used != text.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::configuration, "bad " + what + " '" + std::string(text) + "'");
  }
}

// Training-only view of the target: every year outside `train` is missing.
data::AnnualSeries training_history(const data::AnnualSeries& target, std::span<const int> train,
                                    const YearRange& span) {
  std::vector<double> values(static_cast<std::size_t>(span.length()), kNaN);
  for (int y : train) values[static_cast<std::size_t>(y - span.first)] = target.at(y);
  return data::AnnualSeries::from_values(span.first, std::move(values));
}

nlohmann::json summary_json(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }), v.end());
  nlohmann::json j;
  j["n"] = v.size();
  if (v.empty()) return j;
  double sum = 0.0;
  for (double x : v) sum += x;
  j["mean"] = sum / static_cast<double>(v.size());
  j["median"] = quantile(v, 0.5);
  j["q025"] = quantile(v, 0.025);
  j["q975"] = quantile(v, 0.975);
  return j;
}

}  // namespace

std::string MethodConfig::tag() const {
  std::ostringstream out;
  out << kind_name(kind);
  switch (kind) {
    case MethodKind::lasso_fixed: out << ':' << format_double(lambda); break;
    case MethodKind::elastic_net_cv: out << ':' << format_double(alpha); break;
    case MethodKind::pc_ols: out << ':' << components; break;
    case MethodKind::cps: out << ':' << solvers::to_string(weight_mode); break;
    case MethodKind::arma: out << ':' << arma_p << '/' << arma_q; break;
    default: break;
  }
  // tags end up in CSV cells, so no commas; default CV settings are left out
  if (uses_cv(kind)) {
    const MethodConfig defaults;
    std::vector<std::string> cv;
    if (folds != defaults.folds) cv.push_back("folds=" + std::to_string(folds));
    if (repetitions != defaults.repetitions) cv.push_back("reps=" + std::to_string(repetitions));
    if (grid_size != defaults.grid_size) cv.push_back("grid=" + std::to_string(grid_size));
    for (std::size_t i = 0; i < cv.size(); ++i) out << (i ? '/' : '@') << cv[i];
  }
  if (kind == MethodKind::pc_ols && !groups.empty()) {
    out << "#groups=";
    for (std::size_t i = 0; i < groups.size(); ++i) out << (i ? "/" : "") << groups[i];
  }
  return out.str();
}

MethodConfig parse_method(std::string_view text) {
  MethodConfig m;
  std::string_view head = text;
  std::string_view cv;
  if (const auto at = text.find('@'); at != std::string_view::npos) {
    head = text.substr(0, at);
    cv = text.substr(at + 1);
  }
  std::string_view name = head;
  std::string_view arg;
  if (const auto colon = head.find(':'); colon != std::string_view::npos) {
    name = head.substr(0, colon);
    arg = head.substr(colon + 1);
  }
  const auto it = method_names().find(name);
  if (it == method_names().end())
    throw Error(ErrorCode::configuration, "unknown method '" + std::string(name) + "'");
  m.kind = it->second;
  switch (m.kind) {
    case MethodKind::lasso_fixed:
      if (arg.empty()) throw Error(ErrorCode::configuration, "lasso needs a lambda: lasso:<value>");
      m.lambda = parse_number(arg, "lambda");
      if (!(m.lambda >= 0.0)) throw Error(ErrorCode::configuration, "lambda must be nonnegative");
      break;
    case MethodKind::elastic_net_cv:
      if (!arg.empty()) m.alpha = parse_number(arg, "alpha");
      if (!(m.alpha > 0.0 && m.alpha <= 1.0))
        throw Error(ErrorCode::configuration, "elastic net alpha must lie in (0, 1]");
      break;
    case MethodKind::pc_ols:
      if (!arg.empty()) m.components = static_cast<int>(parse_number(arg, "component count"));
      if (m.components < 1) throw Error(ErrorCode::configuration, "pc_ols needs K >= 1");
      break;
    case MethodKind::cps:
      if (!arg.empty()) m.weight_mode = solvers::parse_weight_mode(arg);
      break;
    case MethodKind::arma:
      if (!arg.empty()) {
        const auto comma = arg.find_first_of(",/");
        if (comma == std::string_view::npos) throw Error(ErrorCode::configuration, "arma needs p/q");
        m.arma_p = static_cast<int>(parse_number(arg.substr(0, comma), "AR order"));
        m.arma_q = static_cast<int>(parse_number(arg.substr(comma + 1), "MA order"));
      }
      break;
    default:
      if (!arg.empty())
        throw Error(ErrorCode::configuration, "method '" + std::string(name) + "' takes no argument");
  }
  while (!cv.empty()) {
    const auto comma = cv.find_first_of(",/");
    const auto item = cv.substr(0, comma);
    cv = comma == std::string_view::npos ? std::string_view{} : cv.substr(comma + 1);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw Error(ErrorCode::configuration, "bad CV option '" + std::string(item) + "'");
    const auto key = item.substr(0, eq);
    const int value = static_cast<int>(parse_number(item.substr(eq + 1), "CV option"));
    if (key == "folds") m.folds = value;
    else if (key == "reps") m.repetitions = value;
    else if (key == "grid") m.grid_size = value;
    else throw Error(ErrorCode::configuration, "unknown CV option '" + std::string(key) + "'");
  }
  if (m.folds < 2 || m.repetitions < 1 || m.grid_size < 1)
    throw Error(ErrorCode::configuration, "invalid cross-validation settings");
  return m;
}

TrainedModel fit_method(const MethodConfig& method, const data::ProxyMatrix& proxies,
                        const data::AnnualSeries& target, std::span<const int> train_years,
                        const Seed& seed) {
  if (train_years.empty()) throw Error(ErrorCode::coverage, "empty training set");
  const auto [lo, hi] = std::minmax_element(train_years.begin(), train_years.end());
  const YearRange span{*lo, *hi};
  TrainedModel out;

  if (method.kind == MethodKind::intercept || method.kind == MethodKind::arma) {
    const auto values = data::gather_values(target, train_years);
    Fingerprint fp;
    fp.add(std::span<const double>(values));
    for (int y : train_years) fp.add(static_cast<std::uint64_t>(static_cast<std::int64_t>(y)));
    out.training_fingerprint = fp.value();
    if (method.kind == MethodKind::intercept) {
      auto m = solvers::fit_intercept(Eigen::Map<const Eigen::VectorXd>(values.data(),
                                                                        static_cast<Eigen::Index>(values.size())));
      m.calibration = span;
      out.model = std::move(m);
    } else {
      out.model = solvers::fit_arma(training_history(target, train_years, span), span, method.arma_p,
                                    method.arma_q);
    }
    return out;
  }

  const auto d = solvers::make_design(proxies, target, train_years);
  out.training_fingerprint = d.fingerprint;
  if (d.columns.empty())
    throw Error(ErrorCode::insufficient_data, "no proxy column is complete over the training years");

  auto finish = [&](auto model) {
    std::vector<Eigen::Index> dropped = d.dropped;
    for (Eigen::Index j : model.dropped) dropped.push_back(d.columns[static_cast<std::size_t>(j)]);
    std::sort(dropped.begin(), dropped.end());
    model.dropped = std::move(dropped);
    model.source_columns = d.columns;
    model.calibration = span;
    out.model = std::move(model);
    return out;
  };

  solvers::CvOptions cv;
  cv.folds = method.folds;
  cv.repetitions = method.repetitions;
  cv.grid_size = method.grid_size;

  switch (method.kind) {
    case MethodKind::ols: return finish(solvers::fit_ols(d.x, d.y));
    case MethodKind::lasso_tingley:
      return finish(solvers::fit_lasso(d.x, d.y, solvers::tingley_lambda(d.x, d.y)));
    case MethodKind::lasso_fixed: return finish(solvers::fit_lasso(d.x, d.y, method.lambda));
    case MethodKind::lasso_cv:
    case MethodKind::elastic_net_cv:
    case MethodKind::ridge_cv:
    case MethodKind::noncentral_lasso_cv: {
      cv.alpha = method.kind == MethodKind::lasso_cv || method.kind == MethodKind::noncentral_lasso_cv ? 1.0
                 : method.kind == MethodKind::ridge_cv                                                 ? 0.0
                                                                                                       : method.alpha;
      if (method.kind == MethodKind::noncentral_lasso_cv) {
        cv.cd.noncentral = true;
        const double top = solvers::lambda_max(d.x, d.y, 1.0, true);
        for (int k = 0; k < cv.grid_size; ++k)
          cv.grid.push_back(top * std::pow(cv.min_ratio, cv.grid_size == 1 ? 0.0 : double(k) / (cv.grid_size - 1)));
      }
      const auto res = solvers::select_lambda_cv(d.x, d.y, cv, seed);
      out.cv_lambda = res.lambda;
      return finish(solvers::fit_elastic_net(d.x, d.y, res.lambda, cv.alpha, cv.cd));
    }
    case MethodKind::pc_ols: {
      std::vector<int> groups;
      if (!method.groups.empty()) {
        if (static_cast<Eigen::Index>(method.groups.size()) != proxies.n_series())
          throw Error(ErrorCode::configuration, "pc_ols groups must label every proxy column");
        for (Eigen::Index j : d.columns) groups.push_back(method.groups[static_cast<std::size_t>(j)]);
      }
      const int k = std::min<int>(method.components, static_cast<int>(d.columns.size()));
      return finish(solvers::fit_pc_ols(d.x, d.y, k, groups));
    }
    case MethodKind::cps:
      return finish(solvers::fit_cps(d.x, d.y, d.latitudes, method.weight_mode, solvers::CpsScale::variance_match));
    case MethodKind::composite_regression:
      return finish(solvers::fit_cps(d.x, d.y, d.latitudes, solvers::WeightMode::uniform,
                                     solvers::CpsScale::regression));
    default: break;
  }
  throw Error(ErrorCode::configuration, "unhandled method " + method.tag());
}

HoldoutResult holdout_rmse(const MethodConfig& method, const data::ProxyMatrix& proxies,
                           const data::AnnualSeries& target, const data::HoldoutBlock& block,
                           const YearRange& calibration, const Seed& seed, const HoldoutOptions& options) {
  if (block.years.empty()) throw Error(ErrorCode::configuration, "empty holdout block");
  std::vector<int> train;
  for (int y = calibration.first; y <= calibration.last; ++y)
    if (!block.years.contains(y) && target.available(y)) train.push_back(y);
  if (train.empty()) throw Error(ErrorCode::coverage, "no training years outside the holdout block");

  const TrainedModel trained = fit_method(method, proxies, target, train, seed);
  HoldoutResult out;
  out.training_fingerprint = trained.training_fingerprint;
  out.cv_lambda = trained.cv_lambda;

  YearRange span{std::min(calibration.first, block.years.first), std::max(calibration.last, block.years.last)};
  const data::AnnualSeries history = training_history(target, train, span);
  const solvers::PredictionInputs inputs{&proxies, &history};
  const auto pred = solvers::predict(trained.model, inputs, block.years);

  double pred_offset = 0.0;
  double obs_offset = 0.0;
  if (options.centering && options.centering->mode != data::CenteringMode::none) {
    const YearRange ref = options.centering->reference_period;
    std::vector<int> ref_years;
    for (int y : train)
      if (ref.contains(y)) ref_years.push_back(y);
    if (ref_years.empty())
      throw Error(ErrorCode::coverage, "reference period " + to_string(ref) + " has no training years");
    double sum = 0.0;
    for (int y : ref_years) sum += target.at(y);
    obs_offset = sum / static_cast<double>(ref_years.size());
    if (options.centering->mode == data::CenteringMode::anomaly_vs_observed) {
      pred_offset = obs_offset;
    } else {
      // the erroneous variant: center predictions on their own mean over the
      // reference period instead of the observed one
      const YearRange ref_span{std::max(ref.first, span.first), std::min(ref.last, span.last)};
      const auto fitted = solvers::predict(trained.model, inputs, ref_span);
      pred_offset = data::mean_over(fitted, ref_span);
    }
  }

  double ss = 0.0;
  int n = 0;
  for (int y = block.years.first; y <= block.years.last; ++y) {
    if (!target.available(y) || !pred.available(y)) continue;
    const double e = (pred.at(y) - pred_offset) - (target.at(y) - obs_offset);
    ss += e * e;
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::coverage, "no scorable years in block " + to_string(block.years));
  out.rmse = std::sqrt(ss / n);
  out.n_years = n;
  return out;
}

bool RmseReport::ok() const { return failures() == 0; }

std::size_t RmseReport::failures() const {
  return static_cast<std::size_t>(
      std::count_if(per_block.begin(), per_block.end(), [](const BlockRmse& b) { return !b.error.empty(); }));
}

nlohmann::json to_json(const RmseReport& report) {
  nlohmann::json j;
  j["method"] = report.method;
  j["predictor_source"] = report.predictor_source;
  j["replication_id"] = report.replication_id;
  j["seed"] = {report.seed.master, report.seed.stream};
  auto blocks = nlohmann::json::array();
  for (const auto& b : report.per_block) {
    nlohmann::json e{{"first", b.block.years.first},
                     {"last", b.block.years.last},
                     {"position", data::to_string(b.block.mode)},
                     {"n_years", b.n_years}};
    e["rmse"] = std::isfinite(b.rmse) ? nlohmann::json(b.rmse) : nlohmann::json(nullptr);
    if (!b.error.empty()) e["error"] = b.error;
    blocks.push_back(std::move(e));
  }
  j["blocks"] = std::move(blocks);
  j["mean"] = std::isfinite(report.mean) ? nlohmann::json(report.mean) : nlohmann::json(nullptr);
  j["median"] = std::isfinite(report.median) ? nlohmann::json(report.median) : nlohmann::json(nullptr);
  j["failures"] = report.failures();
  return j;
}

RmseReport rmse_profile(const MethodConfig& method, const data::ProxyMatrix& proxies,
                        const data::AnnualSeries& target, const data::HoldoutScheme& scheme,
                        const Seed& seed, const std::string& predictor_source,
                        const HoldoutOptions& options, unsigned threads) {
  RmseReport report;
  report.method = method.tag();
  report.predictor_source = predictor_source;
  report.seed = seed;
  const auto& blocks = scheme.blocks();
  report.per_block.resize(blocks.size());
  parallel_for(blocks.size(), threads, [&](std::size_t b) {
    BlockRmse& slot = report.per_block[b];
    slot.block = blocks[b];
    try {
      const auto res = holdout_rmse(method, proxies, target, blocks[b], scheme.calibration(),
                                    seed.child(static_cast<std::uint64_t>(b)), options);
      slot.rmse = res.rmse;
      slot.n_years = res.n_years;
    } catch (const std::exception& e) {
      slot.rmse = kNaN;
      slot.error = e.what();
    }
  });
  std::vector<double> ok;
  for (const auto& b : report.per_block)
    if (b.error.empty()) ok.push_back(b.rmse);
  if (ok.empty()) {
    report.mean = report.median = kNaN;
  } else {
    double sum = 0.0;
    for (double v : ok) sum += v;
    report.mean = sum / static_cast<double>(ok.size());
    report.median = quantile(ok, 0.5);
  }
  return report;
}

std::vector<std::vector<double>> NullSamples::per_block() const {
  std::vector<std::vector<double>> out(blocks.size());
  for (const auto& rep : replications)
    for (std::size_t b = 0; b < rep.per_block.size() && b < out.size(); ++b)
      out[b].push_back(rep.per_block[b].rmse);
  return out;
}

std::vector<double> NullSamples::aggregates() const {
  std::vector<double> out;
  for (const auto& rep : replications) out.push_back(rep.mean);
  return out;
}

NullSamples null_distribution(const MethodConfig& method, const NullGenerator& generator,
                              const data::AnnualSeries& target, const data::HoldoutScheme& scheme,
                              int n_replications, const Seed& seed, unsigned threads) {
  if (n_replications < 1) throw Error(ErrorCode::configuration, "null distribution needs >= 1 replication");
  pseudoproxy::NoiseSpec spec = generator.spec;
  const YearRange cal = scheme.calibration();
  if (spec.kind == pseudoproxy::NoiseKind::ar1_empirical && spec.empirical.empty()) {
    if (generator.template_proxies == nullptr)
      throw Error(ErrorCode::configuration, "AR1(Empirical) nulls need fitted parameters or template proxies");
    const YearRange window{std::max(cal.first, generator.template_proxies->start_year()),
                           std::min(cal.last, generator.template_proxies->end_year())};
    spec.empirical = pseudoproxy::fit_ar1_columns(*generator.template_proxies, window);
  }
  int n_series = generator.n_series;
  if (n_series <= 0) {
    if (!spec.empirical.empty()) n_series = static_cast<int>(spec.empirical.size());
    else if (generator.template_proxies) n_series = static_cast<int>(generator.template_proxies->n_series());
    else throw Error(ErrorCode::configuration, "null generator needs a series count");
  }

  NullSamples out;
  out.method = method.tag();
  out.generator = spec.label();
  out.blocks = scheme.blocks();
  out.replications.resize(static_cast<std::size_t>(n_replications));
  parallel_for(out.replications.size(), threads, [&](std::size_t r) {
    const Seed rs = seed.child(static_cast<std::uint64_t>(r));
    auto matrix = pseudoproxy::gen_noise_matrix(spec, cal.length(), n_series, rs.child(0), cal.first);
    if (generator.template_proxies) matrix = pseudoproxy::with_locations(matrix, *generator.template_proxies);
    auto report = rmse_profile(method, matrix, target, scheme, rs.child(1), out.generator, {}, 1);
    report.replication_id = static_cast<int>(r);
    out.replications[r] = std::move(report);
  });
  return out;
}

NullBand null_band(const NullSamples& null, double level) {
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::configuration, "band level must lie in (0, 1)");
  NullBand band;
  band.level = level;
  band.n_replications = static_cast<int>(null.replications.size());
  for (auto samples : null.per_block()) {
    samples.erase(std::remove_if(samples.begin(), samples.end(), [](double x) { return !std::isfinite(x); }),
                  samples.end());
    if (samples.empty()) {
      band.lower.push_back(kNaN);
      band.median.push_back(kNaN);
      band.upper.push_back(kNaN);
      continue;
    }
    band.lower.push_back(quantile(samples, (1.0 - level) / 2.0));
    band.median.push_back(quantile(samples, 0.5));
    band.upper.push_back(quantile(samples, (1.0 + level) / 2.0));
  }
  return band;
}

double Exceedance::fraction() const { return n > 0 ? static_cast<double>(count_le) / n : kNaN; }
double Exceedance::p_value() const { return static_cast<double>(count_le + 1) / (n + 1); }

std::vector<Exceedance> significance(const RmseReport& real, const NullSamples& null, SignificanceMode mode) {
  if (null.replications.empty()) throw Error(ErrorCode::configuration, "empty null distribution");
  auto count = [](double value, const std::vector<double>& samples) {
    Exceedance e;
    for (double s : samples) {
      if (!std::isfinite(s)) continue;
      ++e.n;
      if (s <= value) ++e.count_le;
    }
    return e;
  };
  std::vector<Exceedance> out;
  if (mode == SignificanceMode::aggregate) {
    out.push_back(count(real.mean, null.aggregates()));
    return out;
  }
  const auto per_block = null.per_block();
  if (per_block.size() != real.per_block.size())
    throw Error(ErrorCode::configuration, "real and null profiles cover different blocks");
  for (std::size_t b = 0; b < per_block.size(); ++b) out.push_back(count(real.per_block[b].rmse, per_block[b]));
  return out;
}

double quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw Error(ErrorCode::insufficient_data, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * std::clamp(prob, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

// Grid ---------------------------------------------------------------------------

std::size_t GridResult::failures() const {
  std::size_t n = 0;
  for (const auto& c : cells)
    if (!c.error.empty() || c.report.value("failures", 0) > 0) ++n;
  return n;
}

namespace {

struct CellPlan {
  const MethodConfig* method;
  const NullSource* source;
  int length;
  data::BlockFilter mode;
  const NamedTarget* target;
  std::string key;
};

std::string cell_key(const CellPlan& c, const GridSpec& spec, std::uint64_t proxies_fp, std::uint64_t master) {
  Fingerprint fp;
  fp.add(std::string_view("paleorecon.cell/1"));
  fp.add(std::string_view(c.method->tag()));
  fp.add(std::string_view(c.source->label));
  if (c.source->noise) fp.add(std::string_view(c.source->noise->label()));
  fp.add(static_cast<std::uint64_t>(c.source->n_series));
  fp.add(static_cast<std::uint64_t>(c.length));
  fp.add(data::to_string(c.mode));
  fp.add(static_cast<std::uint64_t>(spec.stride));
  fp.add(static_cast<std::uint64_t>(spec.n_replications));
  fp.add(std::string_view(c.target->name));
  fp.add(c.target->series.values());
  for (auto m : c.target->series.missing_mask()) fp.add(static_cast<std::uint64_t>(m));
  fp.add(static_cast<std::uint64_t>(static_cast<std::int64_t>(c.target->series.start_year())));
  fp.add(static_cast<std::uint64_t>(static_cast<std::int64_t>(spec.calibration.first)));
  fp.add(static_cast<std::uint64_t>(static_cast<std::int64_t>(spec.calibration.last)));
  fp.add(proxies_fp);
  fp.add(master);
  return fp.hex();
}

nlohmann::json run_cell(const CellPlan& c, const GridSpec& spec, std::uint64_t master) {
  const auto scheme = data::make_holdout_blocks(spec.calibration, c.length, spec.stride, c.mode);
  const Seed seed{master, std::stoull(c.key, nullptr, 16)};
  nlohmann::json doc;
  doc["version"] = "paleorecon.cell/1";
  doc["key"] = c.key;
  doc["method"] = c.method->tag();
  doc["source"] = c.source->label;
  doc["block_length"] = c.length;
  doc["mode"] = data::to_string(c.mode);
  doc["target"] = c.target->name;
  doc["stride"] = spec.stride;
  doc["seed"] = {seed.master, seed.stream};
  std::vector<RmseReport> reps;
  if (c.source->noise) {
    NullGenerator gen{*c.source->noise, c.source->n_series, spec.proxies};
    auto null = null_distribution(*c.method, gen, c.target->series, scheme, spec.n_replications, seed, 1);
    reps = std::move(null.replications);
  } else {
    if (spec.proxies == nullptr) throw Error(ErrorCode::configuration, "grid source 'proxy' needs a proxy matrix");
    reps.push_back(rmse_profile(*c.method, *spec.proxies, c.target->series, scheme, seed, c.source->label));
  }
  auto arr = nlohmann::json::array();
  std::vector<double> pooled, means;
  std::size_t failures = 0;
  for (const auto& r : reps) {
    arr.push_back(to_json(r));
    for (const auto& b : r.per_block) pooled.push_back(b.rmse);
    means.push_back(r.mean);
    failures += r.failures();
  }
  doc["replications"] = std::move(arr);
  doc["aggregate"] = {{"pooled_blocks", summary_json(pooled)}, {"replication_means", summary_json(means)}};
  doc["failures"] = failures;
  return doc;
}

void write_atomic(const std::filesystem::path& path, const std::string& text, const std::string& unique) {
  const auto tmp = path.string() + ".tmp." + unique;
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write " + tmp);
    out << text;
    if (!out) throw Error(ErrorCode::io, "write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

GridResult robustness_grid(const GridSpec& spec, std::uint64_t master_seed,
                           const std::optional<std::filesystem::path>& cache_dir, unsigned threads) {
  if (spec.methods.empty() || spec.sources.empty() || spec.block_lengths.empty() || spec.modes.empty() ||
      spec.targets.empty())
    throw Error(ErrorCode::configuration, "every grid axis needs at least one entry");
  const std::uint64_t proxies_fp = spec.proxies ? spec.proxies->fingerprint().value() : 0;
  std::vector<CellPlan> plan;
  for (const auto& t : spec.targets)
    for (const auto& m : spec.methods)
      for (const auto& s : spec.sources)
        for (int len : spec.block_lengths)
          for (auto mode : spec.modes) {
            CellPlan c{&m, &s, len, mode, &t, {}};
            c.key = cell_key(c, spec, proxies_fp, master_seed);
            plan.push_back(std::move(c));
          }
  if (cache_dir) std::filesystem::create_directories(*cache_dir);

  GridResult result;
  result.cells.resize(plan.size());
  parallel_for(plan.size(), threads, [&](std::size_t i) {
    CellResult& cell = result.cells[i];
    cell.key = plan[i].key;
    const auto path = cache_dir ? std::optional(*cache_dir / (cell.key + ".json")) : std::nullopt;
    if (path && std::filesystem::exists(*path)) {
      std::ifstream in(*path, std::ios::binary);
      try {
        cell.report = nlohmann::json::parse(in);
        cell.cached = true;
        return;
      } catch (const nlohmann::json::exception&) {
        // unreadable cache entry: recompute
      }
    }
    try {
      cell.report = run_cell(plan[i], spec, master_seed);
      if (path) write_atomic(*path, cell.report.dump(2) + "\n", std::to_string(i));
    } catch (const std::exception& e) {
      cell.error = e.what();
      cell.report = {{"key", cell.key}, {"method", plan[i].method->tag()}, {"source", plan[i].source->label},
                     {"block_length", plan[i].length}, {"mode", data::to_string(plan[i].mode)},
                     {"target", plan[i].target->name}, {"error", cell.error}};
    }
  });
  return result;
}

std::string grid_csv(const GridResult& grid) {
  std::ostringstream out;
  out << "cell,method,source,block_length,mode,target,replication,block_first,block_last,position,rmse\n";
  for (const auto& c : grid.cells) {
    const auto& r = c.report;
    if (!r.contains("replications")) continue;
    for (const auto& rep : r["replications"])
      for (const auto& b : rep["blocks"]) {
        out << c.key << ',' << r["method"].get<std::string>() << ',' << r["source"].get<std::string>() << ','
            << r["block_length"].get<int>() << ',' << r["mode"].get<std::string>() << ','
            << r["target"].get<std::string>() << ',' << rep["replication_id"].get<int>() << ','
            << b["first"].get<int>() << ',' << b["last"].get<int>() << ',' << b["position"].get<std::string>()
            << ',' << (b["rmse"].is_null() ? std::string() : format_double(b["rmse"].get<double>())) << '\n';
      }
  }
  return out.str();
}

}  // namespace paleo::validation
