#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "paleo/common.hpp"
#include "paleo/data.hpp"
#include "paleo/experiments.hpp"
#include "paleo/pcselect.hpp"
#include "paleo/pseudoproxy.hpp"
#include "paleo/solvers.hpp"
#include "paleo/validation.hpp"

namespace py = pybind11;
using namespace paleo;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

data::ProxyMatrix to_matrix(const MatrixXd& x, int start_year, const std::vector<double>& latitudes) {
  if (!latitudes.empty() && static_cast<Eigen::Index>(latitudes.size()) != x.cols())
    throw Error(ErrorCode::configuration, "latitudes must match the number of columns");
  std::vector<data::SeriesMeta> cols(static_cast<std::size_t>(x.cols()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    cols[j].name = "x" + std::to_string(j + 1);
    cols[j].first_year = start_year;
    if (!latitudes.empty()) cols[j].latitude = latitudes[j];
  }
  data::MissingMask missing = x.array().isNaN();
  return data::ProxyMatrix(start_year, std::move(cols), x, missing);
}

py::dict lasso_dict(const MatrixXd& x, const VectorXd& y, const solvers::LinearModel& m) {
  const auto kkt = solvers::kkt_check(x, y, m);
  py::dict d;
  d["lambda"] = m.penalty.lambda;
  d["intercept"] = m.intercept;
  d["coefficients"] = m.coefficients;
  d["active"] = m.active_count();
  d["kkt_violation"] = kkt.max_violation;
  d["objective"] = kkt.objective;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of paleorecon";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def("build_id", &experiments::build_id);

  m.def("lambda_max", [](const MatrixXd& x, const VectorXd& y) { return solvers::lambda_max(x, y); },
        py::arg("x"), py::arg("y"));
  m.def("tingley_lambda", &solvers::tingley_lambda, py::arg("x"), py::arg("y"));

  m.def(
      "fit_lasso",
      [](const MatrixXd& x, const VectorXd& y, double lambda) {
        py::gil_scoped_release release;
        auto model = solvers::fit_lasso(x, y, lambda);
        py::gil_scoped_acquire acquire;
        return lasso_dict(x, y, model);
      },
      py::arg("x"), py::arg("y"), py::arg("lam"),
      "Lasso on standardized columns; returns coefficients on the original scale plus the KKT check.");

  m.def(
      "select_lambda_cv",
      [](const MatrixXd& x, const VectorXd& y, int folds, int repetitions, int grid_size, std::uint64_t seed) {
        solvers::CvOptions o;
        o.folds = folds;
        o.repetitions = repetitions;
        o.grid_size = grid_size;
        py::gil_scoped_release release;
        return solvers::select_lambda_cv(x, y, o, Seed{seed, 0}).lambda;
      },
      py::arg("x"), py::arg("y"), py::arg("folds") = 5, py::arg("repetitions") = 10, py::arg("grid_size") = 50,
      py::arg("seed") = 0);

  m.def(
      "fit_cps",
      [](const MatrixXd& x, const VectorXd& y, const std::vector<double>& latitudes, const std::string& weights) {
        const auto model = solvers::fit_cps(x, y, latitudes, solvers::parse_weight_mode(weights));
        py::dict d;
        d["weights"] = model.weights;
        d["fitted"] = model.predict(x);
        return d;
      },
      py::arg("x"), py::arg("y"), py::arg("latitudes"), py::arg("weights") = "latitude_cosine");

  m.def(
      "select_k",
      [](const std::vector<double>& eigenvalues, const std::string& criterion, double threshold) {
        return pcselect::select_k(pcselect::Spectrum(eigenvalues), pcselect::parse_criterion(criterion), threshold);
      },
      py::arg("eigenvalues"), py::arg("criterion"), py::arg("threshold") = 0.8);

  m.def(
      "generate_noise",
      [](const std::string& kind, int n_years, int n_series, std::uint64_t seed) {
        const auto spec = experiments::parse_null(kind);
        if (spec.kind == pseudoproxy::NoiseKind::ar1_empirical)
          throw Error(ErrorCode::configuration, "ar1_empirical needs template proxies");
        return pseudoproxy::gen_noise_matrix(spec, n_years, n_series, Seed{seed, 0}).values();
      },
      py::arg("kind"), py::arg("n_years"), py::arg("n_series"), py::arg("seed") = 0,
      "Pseudoproxy noise matrix (years x series). kind: white, ar1:PHI or brownian.");

  m.def(
      "rmse_profile",
      [](const std::string& method, const MatrixXd& x, const VectorXd& y, int start_year,
         const std::vector<double>& latitudes, int block_length, int stride, const std::string& filter,
         std::uint64_t seed, unsigned threads) {
        std::string out;
        {
          py::gil_scoped_release release;
          const auto proxies = to_matrix(x, start_year, latitudes);
          const auto target = data::AnnualSeries::from_values(start_year, {y.data(), y.data() + y.size()});
          const auto scheme = data::make_holdout_blocks(target.years(), block_length, stride,
                                                        data::parse_block_filter(filter));
          const auto report = validation::rmse_profile(validation::parse_method(method), proxies, target, scheme,
                                                       Seed{seed, 0}, "proxy", {}, threads);
          out = validation::to_json(report).dump();
        }
        return out;
      },
      py::arg("method"), py::arg("x"), py::arg("y"), py::arg("start_year") = 1,
      py::arg("latitudes") = std::vector<double>{}, py::arg("block_length") = 30, py::arg("stride") = 1,
      py::arg("filter") = "all", py::arg("seed") = 0, py::arg("threads") = 1,
      "Holdout-block RMSE report as a JSON string.");

  m.def(
      "run_experiment",
      [](const std::string& recipe, const std::map<std::string, std::string>& parameters, std::uint64_t seed,
         unsigned threads, const std::string& output_dir) {
        experiments::ExperimentSpec spec;
        spec.recipe = experiments::parse_recipe(recipe);
        spec.parameters = experiments::Parameters(parameters);
        spec.seed = seed;
        spec.threads = threads;
        experiments::Bundle bundle;
        {
          py::gil_scoped_release release;
          bundle = experiments::run(spec);
          if (!output_dir.empty()) bundle.write(output_dir);
        }
        py::dict reports, tables;
        for (const auto& [k, v] : bundle.reports) reports[py::str(k)] = experiments::dump_json(v);
        for (const auto& [k, v] : bundle.tables) tables[py::str(k)] = v;
        py::dict d;
        d["manifest"] = experiments::dump_json(bundle.manifest);
        d["reports"] = reports;
        d["tables"] = tables;
        return d;
      },
      py::arg("recipe"), py::arg("parameters") = std::map<std::string, std::string>{}, py::arg("seed") = 0,
      py::arg("threads") = 1, py::arg("output_dir") = "",
      "Synthetic-mode recipe run. JSON documents come back as strings.");
}
