#include <cmath>
#include <functional>
#include <limits>

#include "paleo/solvers.hpp"

namespace paleo::solvers {

using nlohmann::json;

namespace {

constexpr const char* kModelVersion = "paleorecon.model/1";

std::vector<double> to_vec(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

VectorXd from_json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

json range_json(const YearRange& r) { return json::array({r.first, r.last}); }

YearRange range_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::format, "calibration must be [first, last]");
  return {j[0].get<int>(), j[1].get<int>()};
}

std::uint64_t parse_hex(const json& j) {
  if (!j.is_string()) return 0;
  try {
    return std::stoull(j.get<std::string>(), nullptr, 16);
  } catch (const std::exception&) {
    throw Error(ErrorCode::format, "bad fingerprint '" + j.get<std::string>() + "'");
  }
}

LinearMethod parse_linear_method(std::string_view text) {
  for (auto m : {LinearMethod::intercept, LinearMethod::ols, LinearMethod::lasso,
                 LinearMethod::elastic_net, LinearMethod::ridge, LinearMethod::noncentral_lasso,
                 LinearMethod::pc_ols})
    if (to_string(m) == text) return m;
  throw Error(ErrorCode::format, "unknown model method '" + std::string(text) + "'");
}

// Rows are masked when any column carrying weight is missing.
data::AnnualSeries predict_rows(const data::ProxyMatrix* proxies, const VectorXd& weights,
                                const std::vector<Index>& source_columns, const YearRange& years,
                                const std::function<VectorXd(const MatrixXd&)>& apply) {
  if (proxies == nullptr) throw Error(ErrorCode::coverage, "model needs a proxy matrix to predict");
  if (!proxies->years().contains(years))
    throw Error(ErrorCode::coverage, "prediction years " + to_string(years) + " outside proxies " +
                                         to_string(proxies->years()));
  std::vector<Index> cols = source_columns;
  if (cols.empty()) {
    if (proxies->n_series() != weights.size())
      throw Error(ErrorCode::configuration, "proxy matrix width differs from model width");
    for (Index j = 0; j < weights.size(); ++j) cols.push_back(j);
  }
  if (static_cast<Index>(cols.size()) != weights.size())
    throw Error(ErrorCode::configuration, "model column map differs from coefficient count");
  for (Index j : cols)
    if (j < 0 || j >= proxies->n_series())
      throw Error(ErrorCode::configuration, "model refers to a column outside the proxy matrix");

  std::vector<int> usable;
  for (int y = years.first; y <= years.last; ++y) {
    bool ok = true;
    for (std::size_t c = 0; c < cols.size() && ok; ++c)
      if (weights(static_cast<Index>(c)) != 0.0 && !proxies->available(y, cols[c])) ok = false;
    if (ok) usable.push_back(y);
  }
  std::vector<double> out(static_cast<std::size_t>(years.length()),
                          std::numeric_limits<double>::quiet_NaN());
  if (!usable.empty()) {
    MatrixXd x = data::gather_rows(*proxies, usable, cols);
    // Zero-weight columns may be missing; their value does not matter.
    for (Index c = 0; c < x.cols(); ++c)
      if (weights(c) == 0.0) x.col(c).setZero();
    const VectorXd pred = apply(x);
    for (std::size_t r = 0; r < usable.size(); ++r)
      out[static_cast<std::size_t>(usable[r] - years.first)] = pred(static_cast<Index>(r));
  }
  return data::AnnualSeries::from_values(years.first, std::move(out));
}

}  // namespace

Design make_design(const data::ProxyMatrix& proxies, const data::AnnualSeries& target,
                   std::span<const int> years) {
  if (years.empty()) throw Error(ErrorCode::insufficient_data, "no training years");
  for (int y : years) {
    if (!proxies.years().contains(y))
      throw Error(ErrorCode::coverage, "training year " + std::to_string(y) + " outside proxies");
    if (!target.available(y))
      throw Error(ErrorCode::coverage, "target missing in training year " + std::to_string(y));
  }
  auto rows = data::gather_rows(proxies, years);
  Design d;
  d.x = std::move(rows.x);
  d.columns = std::move(rows.columns);
  d.dropped = std::move(rows.dropped);
  d.years.assign(years.begin(), years.end());
  const auto yv = data::gather_values(target, years);
  d.y = Eigen::Map<const VectorXd>(yv.data(), static_cast<Index>(yv.size()));
  for (Index j : d.columns) d.latitudes.push_back(proxies.columns()[static_cast<std::size_t>(j)].latitude);
  Fingerprint fp;
  fp.add(std::span<const double>(d.x.data(), static_cast<std::size_t>(d.x.size())));
  fp.add(std::span<const double>(d.y.data(), static_cast<std::size_t>(d.y.size())));
  for (int y : d.years) fp.add(static_cast<std::uint64_t>(static_cast<std::int64_t>(y)));
  for (Index j : d.columns) fp.add(static_cast<std::uint64_t>(j));
  d.fingerprint = fp.value();
  return d;
}

data::AnnualSeries predict(const FittedModel& model, const PredictionInputs& inputs,
                           const YearRange& years) {
  if (years.empty()) throw Error(ErrorCode::configuration, "empty prediction range");
  if (const auto* lin = std::get_if<LinearModel>(&model)) {
    if (lin->method == LinearMethod::intercept || lin->coefficients.size() == 0)
      return data::AnnualSeries(years.first,
                                std::vector<double>(static_cast<std::size_t>(years.length()), lin->intercept));
    return predict_rows(inputs.proxies, lin->coefficients, lin->source_columns, years,
                        [&](const MatrixXd& x) { return lin->predict(x); });
  }
  if (const auto* cps = std::get_if<CpsModel>(&model))
    return predict_rows(inputs.proxies, cps->weights, cps->source_columns, years,
                        [&](const MatrixXd& x) { return cps->predict(x); });
  const auto& arma = std::get<ArmaModel>(model);
  if (inputs.history == nullptr)
    throw Error(ErrorCode::coverage, "ARMA prediction needs the observed history");
  return predict_arma(arma, *inputs.history, years);
}

std::string method_tag(const FittedModel& model) {
  if (const auto* lin = std::get_if<LinearModel>(&model)) return std::string(to_string(lin->method));
  if (std::holds_alternative<CpsModel>(model)) return "cps";
  const auto& a = std::get<ArmaModel>(model);
  return "arma(" + std::to_string(a.p) + "," + std::to_string(a.q) + ")";
}

json to_json(const FittedModel& model) {
  json doc;
  doc["version"] = kModelVersion;
  if (const auto* lin = std::get_if<LinearModel>(&model)) {
    doc["method"] = to_string(lin->method);
    doc["intercept"] = lin->intercept;
    doc["coefficients"] = to_vec(lin->coefficients);
    doc["std_coefficients"] = to_vec(lin->std_coefficients);
    doc["column_means"] = to_vec(lin->column_means);
    doc["column_sds"] = to_vec(lin->column_sds);
    doc["hyperparameters"] = {{"lambda", lin->penalty.lambda},
                              {"alpha", lin->penalty.alpha},
                              {"noncentral", lin->noncentral},
                              {"components", lin->components}};
    doc["source_columns"] = lin->source_columns;
    doc["dropped"] = lin->dropped;
    doc["sweeps"] = lin->sweeps;
    doc["converged"] = lin->converged;
    doc["calibration"] = range_json(lin->calibration);
    doc["input_fingerprint"] = hex64(lin->input_fingerprint);
  } else if (const auto* cps = std::get_if<CpsModel>(&model)) {
    doc["method"] = "cps";
    doc["weights"] = to_vec(cps->weights);
    doc["column_means"] = to_vec(cps->column_means);
    doc["column_sds"] = to_vec(cps->column_sds);
    doc["hyperparameters"] = {{"weight_mode", to_string(cps->weight_mode)},
                              {"scale", cps->scale == CpsScale::regression ? "regression" : "variance_match"}};
    doc["composite_mean"] = cps->composite_mean;
    doc["composite_sd"] = cps->composite_sd;
    doc["target_mean"] = cps->target_mean;
    doc["target_sd"] = cps->target_sd;
    doc["slope"] = cps->slope;
    doc["offset"] = cps->offset;
    doc["source_columns"] = cps->source_columns;
    doc["dropped"] = cps->dropped;
    doc["calibration"] = range_json(cps->calibration);
    doc["input_fingerprint"] = hex64(cps->input_fingerprint);
  } else {
    const auto& a = std::get<ArmaModel>(model);
    doc["method"] = "arma";
    doc["hyperparameters"] = {{"p", a.p}, {"q", a.q}};
    doc["ar"] = a.ar;
    doc["ma"] = a.ma;
    doc["mean"] = a.intercept;
    doc["innovation_sd"] = a.innovation_sd;
    doc["log_likelihood"] = a.log_likelihood;
    doc["projected"] = a.projected;
    doc["calibration"] = range_json(a.calibration);
  }
  return doc;
}

FittedModel model_from_json(const json& doc) {
  try {
    if (doc.value("version", std::string{}) != kModelVersion)
      throw Error(ErrorCode::format, "unsupported model document version");
    const std::string method = doc.at("method").get<std::string>();
    const auto& hp = doc.at("hyperparameters");
    if (method == "cps") {
      CpsModel m;
      m.weights = from_json_vec(doc.at("weights"));
      m.column_means = from_json_vec(doc.at("column_means"));
      m.column_sds = from_json_vec(doc.at("column_sds"));
      m.weight_mode = parse_weight_mode(hp.at("weight_mode").get<std::string>());
      m.scale = hp.at("scale").get<std::string>() == "regression" ? CpsScale::regression
                                                                  : CpsScale::variance_match;
      m.composite_mean = doc.at("composite_mean").get<double>();
      m.composite_sd = doc.at("composite_sd").get<double>();
      m.target_mean = doc.at("target_mean").get<double>();
      m.target_sd = doc.at("target_sd").get<double>();
      m.slope = doc.at("slope").get<double>();
      m.offset = doc.at("offset").get<double>();
      m.source_columns = doc.at("source_columns").get<std::vector<Index>>();
      m.dropped = doc.at("dropped").get<std::vector<Index>>();
      m.calibration = range_from(doc.at("calibration"));
      m.input_fingerprint = parse_hex(doc.at("input_fingerprint"));
      return m;
    }
    if (method == "arma") {
      ArmaModel m;
      m.p = hp.at("p").get<int>();
      m.q = hp.at("q").get<int>();
      m.ar = doc.at("ar").get<std::vector<double>>();
      m.ma = doc.at("ma").get<std::vector<double>>();
      if (static_cast<int>(m.ar.size()) != m.p || static_cast<int>(m.ma.size()) != m.q)
        throw Error(ErrorCode::format, "ARMA coefficient counts differ from the orders");
      m.intercept = doc.at("mean").get<double>();
      m.innovation_sd = doc.at("innovation_sd").get<double>();
      m.log_likelihood = doc.at("log_likelihood").get<double>();
      m.projected = doc.at("projected").get<bool>();
      m.calibration = range_from(doc.at("calibration"));
      return m;
    }
    LinearModel m;
    m.method = parse_linear_method(method);
    m.intercept = doc.at("intercept").get<double>();
    m.coefficients = from_json_vec(doc.at("coefficients"));
    m.std_coefficients = from_json_vec(doc.at("std_coefficients"));
    m.column_means = from_json_vec(doc.at("column_means"));
    m.column_sds = from_json_vec(doc.at("column_sds"));
    m.penalty = {hp.at("lambda").get<double>(), hp.at("alpha").get<double>()};
    m.noncentral = hp.at("noncentral").get<bool>();
    m.components = hp.at("components").get<int>();
    m.source_columns = doc.at("source_columns").get<std::vector<Index>>();
    m.dropped = doc.at("dropped").get<std::vector<Index>>();
    m.sweeps = doc.at("sweeps").get<int>();
    m.converged = doc.at("converged").get<bool>();
    m.calibration = range_from(doc.at("calibration"));
    m.input_fingerprint = parse_hex(doc.at("input_fingerprint"));
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format, std::string("malformed model document: ") + e.what());
  }
}

}  // namespace paleo::solvers
