// paleorecon command-line driver.
//
// Settings come from three layers: an INI config (--config), --set key=value
// overrides, then explicit flags. Top-level INI keys are the global options,
// a [<subcommand>] section holds that subcommand's flags (dashes become
// underscores), and [parameters] passes recipe parameters through verbatim.

#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "paleo/common.hpp"
#include "paleo/data.hpp"
#include "paleo/experiments.hpp"
#include "paleo/parallel.hpp"
#include "paleo/pseudoproxy.hpp"
#include "paleo/validation.hpp"

namespace fs = std::filesystem;
namespace ex = paleo::experiments;
using paleo::Error;
using paleo::ErrorCode;

namespace {

constexpr int kOk = 0;
constexpr int kFatal = 1;
constexpr int kPartial = 2;

using StringMap = std::map<std::string, std::string>;

struct ConfigFile {
  StringMap globals;
  std::map<std::string, StringMap> sections;
};

ConfigFile read_config(const fs::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorCode::configuration, "config " + path.string() + ": " + e.message() + " (line " +
                                              std::to_string(e.line()) + ")");
  }
  ConfigFile out;
  for (const auto& [key, node] : tree) {
    if (node.empty())
      out.globals[key] = node.data();
    else
      for (const auto& [k, v] : node) out.sections[key][k] = v.data();
  }
  return out;
}

std::pair<std::string, std::string> split_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error(ErrorCode::configuration, "--set expects key=value, got '" + text + "'");
  return {text.substr(0, eq), text.substr(eq + 1)};
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string key_of(std::string flag) {
  while (!flag.empty() && flag.front() == '-') flag.erase(flag.begin());
  for (auto& c : flag)
    if (c == '-') c = '_';
  return flag;
}

// A subcommand flag routed to a recipe parameter (or an input file).
struct Mapped {
  CLI::Option* option = nullptr;
  std::string config_key;  // name inside the [subcommand] section
  std::string parameter;   // parameter key, or "input:<role>"
  char sep = 0;            // repeated values are joined with this
  std::vector<std::string> values;
};

struct Command {
  CLI::App* app = nullptr;
  std::deque<Mapped> mapped;

  void param(const std::string& flag, const std::string& parameter, const std::string& help, char sep = 0) {
    auto& m = mapped.emplace_back();
    m.config_key = key_of(flag);
    m.parameter = parameter;
    m.sep = sep;
    m.option = app->add_option(flag, m.values, help);
    if (sep == 0) m.option->expected(1);
  }
  void input(const std::string& flag, const std::string& role, const std::string& help) {
    param(flag, "input:" + role, help);
    mapped.back().option->check(CLI::ExistingFile);
  }
};

struct Globals {
  std::optional<fs::path> config;
  std::vector<std::string> overrides;
  unsigned threads = 0;
  std::uint64_t seed = 0;
  std::string output_dir = "paleorecon-out";
  std::string log_level = "info";
};

struct Resolved {
  StringMap parameters;
  ex::Inputs inputs;
};

// config section < [parameters] < --set < flags
Resolved resolve(const Command& cmd, const ConfigFile& cfg, const Globals& g) {
  Resolved r;
  auto route = [&](const std::string& parameter, const std::string& value) {
    if (parameter.rfind("input:", 0) == 0) {
      const auto role = parameter.substr(6);
      if (role == "target") r.inputs.target = value;
      else if (role == "proxies") r.inputs.proxies = value;
      else if (role == "metadata") r.inputs.metadata = value;
      else if (role == "local_temperatures") r.inputs.local_temperatures = value;
      else if (role == "pcs") r.inputs.pcs = value;
    } else {
      r.parameters[parameter] = value;
    }
  };
  if (auto it = cfg.sections.find(cmd.app->get_name()); it != cfg.sections.end()) {
    for (const auto& [k, v] : it->second) {
      const Mapped* hit = nullptr;
      for (const auto& m : cmd.mapped)
        if (m.config_key == k) hit = &m;
      if (!hit) throw Error(ErrorCode::configuration, "unknown key '" + k + "' in [" + cmd.app->get_name() + "]");
      route(hit->parameter, v);
    }
  }
  if (auto it = cfg.sections.find("parameters"); it != cfg.sections.end())
    for (const auto& [k, v] : it->second) r.parameters[k] = v;
  for (const auto& s : g.overrides) {
    auto [k, v] = split_assignment(s);
    r.parameters[k] = v;
  }
  for (const auto& m : cmd.mapped)
    if (m.option->count() > 0) route(m.parameter, m.sep ? join(m.values, m.sep) : m.values.back());
  return r;
}

void apply_globals(const ConfigFile& cfg, CLI::App& app, Globals& g) {
  for (const auto& [k, v] : cfg.globals) {
    auto given = [&](const char* flag) { return app.get_option(flag)->count() > 0; };
    try {
      if (k == "threads") {
        if (!given("--threads")) g.threads = static_cast<unsigned>(std::stoul(v));
      } else if (k == "seed") {
        if (!given("--seed")) g.seed = std::stoull(v);
      } else if (k == "output_dir") {
        if (!given("--output-dir")) g.output_dir = v;
      } else if (k == "log_level") {
        if (!given("--log-level")) g.log_level = v;
      } else {
        throw Error(ErrorCode::configuration, "unknown top-level config key '" + k + "'");
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::configuration, "bad value for config key '" + k + "': " + v);
    }
  }
}

std::string file_fingerprint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return paleo::Fingerprint().add(std::string_view(ss.str())).hex();
}

paleo::YearRange read_range(ex::Parameters& p, const std::string& key, paleo::YearRange fallback) {
  const auto v = p.get_doubles(key, {double(fallback.first), double(fallback.last)});
  if (v.size() != 2) throw Error(ErrorCode::configuration, key + " needs two years");
  return {static_cast<int>(v[0]), static_cast<int>(v[1])};
}

// validate / nulls ----------------------------------------------------------------

ex::Bundle run_grid(const std::string& command, Resolved r, const Globals& g, bool with_nulls) {
  if (!r.inputs.target || !r.inputs.proxies)
    throw Error(ErrorCode::configuration, command + " needs --target and --proxies");
  ex::Parameters p(r.parameters);
  paleo::data::LoadOptions lo;
  lo.metadata = r.inputs.metadata;
  const auto proxies = paleo::data::load_matrix(*r.inputs.proxies, lo);
  const auto target_full = paleo::data::load_series(*r.inputs.target);

  paleo::YearRange cal{std::max(target_full.start_year(), proxies.start_year()),
                       std::min(target_full.end_year(), proxies.end_year())};
  cal = read_range(p, "calibration", cal);

  paleo::validation::GridSpec spec;
  for (const auto& m : p.get_strings("methods", {"lasso_cv"})) spec.methods.push_back(paleo::validation::parse_method(m));
  spec.sources.push_back({"proxy", std::nullopt, 0});
  std::vector<std::string> nulls;
  if (with_nulls) {
    nulls = p.get_strings("nulls", {"white", "ar1:0.25", "ar1:0.4", "ar1_empirical", "brownian"});
    for (const auto& n : nulls)
      spec.sources.push_back({n, ex::parse_null(n), static_cast<int>(proxies.n_series())});
    spec.n_replications = p.get_int("n_null", 100);
  }
  spec.block_lengths.clear();
  for (double l : p.get_doubles("holdout.length", {30})) spec.block_lengths.push_back(static_cast<int>(l));
  spec.modes.clear();
  for (const auto& m : p.get_strings("holdout.filter", {"interpolated", "extrapolated"}))
    spec.modes.push_back(paleo::data::parse_block_filter(m));
  spec.stride = p.get_int("holdout.stride", 1);
  spec.calibration = cal;
  spec.targets.push_back({fs::path(*r.inputs.target).stem().string(), target_full.slice(cal)});
  spec.proxies = &proxies;
  const std::string cache = p.get_string("cache_dir", "");
  p.check_unused();

  const auto threads = paleo::resolve_threads(g.threads);
  spdlog::info("{}: {} cells over calibration {}", command,
               spec.methods.size() * spec.sources.size() * spec.block_lengths.size() * spec.modes.size(),
               paleo::to_string(cal));
  const auto grid = paleo::validation::robustness_grid(
      spec, g.seed, cache.empty() ? std::nullopt : std::optional<fs::path>(cache), threads);

  ex::Bundle b;
  nlohmann::json cells = nlohmann::json::array();
  std::size_t failed_cells = 0, failed_blocks = 0, cached = 0;
  for (const auto& c : grid.cells) {
    b.reports["cell_" + c.key] = c.report;
    cells.push_back({{"key", c.key}, {"status", c.error.empty() ? "ok" : "failed"}, {"error", c.error}});
    failed_cells += !c.error.empty();
    cached += c.cached;
    if (c.report.contains("failures")) failed_blocks += c.report["failures"].get<std::size_t>();
  }
  b.tables["grid"] = paleo::validation::grid_csv(grid);

  if (with_nulls) {
    // aggregate exceedance of the real RMSE against each null source
    std::ostringstream ss;
    ss << "method,block_length,mode,null,real_rmse,count_le,n,fraction,p_value\n";
    auto find = [&](const std::string& method, const std::string& source, int len, const std::string& mode) {
      for (const auto& c : grid.cells) {
        const auto& r = c.report;
        if (c.error.empty() && r["method"] == method && r["source"] == source && r["block_length"] == len &&
            r["mode"] == mode)
          return &r;
      }
      return static_cast<const nlohmann::json*>(nullptr);
    };
    for (const auto& m : spec.methods)
      for (int len : spec.block_lengths)
        for (auto mode : spec.modes) {
          const std::string ms(paleo::data::to_string(mode));
          const auto* real = find(m.tag(), "proxy", len, ms);
          if (!real || (*real)["replications"][0]["mean"].is_null()) continue;
          const double real_mean = (*real)["replications"][0]["mean"].get<double>();
          for (const auto& n : nulls) {
            const auto* null = find(m.tag(), n, len, ms);
            if (!null) continue;
            paleo::validation::Exceedance e;
            for (const auto& rep : (*null)["replications"]) {
              if (rep["mean"].is_null()) continue;
              ++e.n;
              e.count_le += rep["mean"].get<double>() <= real_mean;
            }
            ss << m.tag() << ',' << len << ',' << ms << ',' << n << ',' << paleo::format_double(real_mean) << ','
               << e.count_le << ',' << e.n << ',' << paleo::format_double(e.fraction()) << ','
               << paleo::format_double(e.p_value()) << '\n';
          }
        }
    b.tables["significance"] = ss.str();
  }

  nlohmann::json inputs = nlohmann::json::array();
  for (auto [role, path] : {std::pair{"target", r.inputs.target}, std::pair{"proxies", r.inputs.proxies},
                            std::pair{"metadata", r.inputs.metadata}})
    if (path) inputs.push_back({{"role", role}, {"path", path->generic_string()}, {"fingerprint", file_fingerprint(*path)}});
  nlohmann::json reports = nlohmann::json::array(), tables = nlohmann::json::array();
  for (const auto& [name, doc] : b.reports) reports.push_back("reports/" + name + ".json");
  for (const auto& [name, text] : b.tables) tables.push_back("tables/" + name + ".csv");
  const std::size_t failures = failed_cells + failed_blocks;
  b.stages.push_back({command, failures ? std::to_string(failed_cells) + " cells and " +
                                              std::to_string(failed_blocks) + " blocks failed"
                                        : std::string()});
  b.manifest = {{"format", "paleorecon.bundle/1"},
                {"build", ex::build_id()},
                {"command", command},
                {"mode", "real"},
                {"seed", g.seed},
                {"parameters", p.resolved()},
                {"inputs", inputs},
                {"cells", cells},
                {"stages", {{{"name", command}, {"status", failures ? "failed" : "ok"}, {"error", b.stages[0].error}}}},
                {"failures", failures},
                {"reports", reports},
                {"tables", tables}};
  if (cached) spdlog::info("{} cells reused from cache", cached);
  return b;
}

// generate ------------------------------------------------------------------------

int run_generate(Resolved r, const Globals& g, const std::string& out_path, const std::string& metadata_out) {
  ex::Parameters p(r.parameters);
  const std::string kind = p.get_string("kind", "white");
  const int years = p.get_int("years", 149);
  const int series = p.get_int("series", 93);
  const int start = p.get_int("start_year", 1);
  if (years < 2 || series < 1) throw Error(ErrorCode::configuration, "need years >= 2 and series >= 1");
  const paleo::Seed seed{g.seed, 0};

  std::string text;
  std::optional<paleo::data::ProxyMatrix> matrix;
  if (kind == "target") {
    ex::TargetSpec t;
    t.first_year = start;
    t.n_years = years;
    t.phi1 = p.get_double("phi1", t.phi1);
    t.phi2 = p.get_double("phi2", t.phi2);
    t.trend = p.get_double("trend", t.trend);
    p.check_unused();
    text = paleo::data::format_series(ex::synthetic_target(t, seed), "temperature");
  } else if (kind == "tingley") {
    paleo::data::AnnualSeries target;
    if (r.inputs.target) {
      target = paleo::data::load_series(*r.inputs.target);
    } else {
      ex::TargetSpec t;
      t.first_year = start;
      t.n_years = years;
      target = ex::synthetic_target(t, seed.child(0));
    }
    ex::ProxySpec s;
    s.n_series = series;
    s.sigma_omega = p.get_double("sigma_omega", s.sigma_omega);
    s.sigma_beta = p.get_double("sigma_beta", s.sigma_beta);
    s.noise_phi = p.get_double("phi", 0.0);
    p.check_unused();
    matrix = ex::signal_proxies(target, s, seed.child(1));
  } else {
    std::string label = kind;
    if (kind == "ar1") label = "ar1:" + p.get_string("phi", "0.25");
    auto spec = ex::parse_null(label);
    std::optional<paleo::data::ProxyMatrix> templ;
    if (r.inputs.proxies) {
      paleo::data::LoadOptions lo;
      lo.metadata = r.inputs.metadata;
      templ = paleo::data::load_matrix(*r.inputs.proxies, lo);
    }
    int width = series;
    if (spec.kind == paleo::pseudoproxy::NoiseKind::ar1_empirical) {
      if (!templ) throw Error(ErrorCode::configuration, "ar1_empirical needs --template proxies");
      spec.empirical = paleo::pseudoproxy::fit_ar1_columns(*templ);
      width = static_cast<int>(templ->n_series());
    }
    p.check_unused();
    auto m = paleo::pseudoproxy::gen_noise_matrix(spec, years, width, seed, start);
    matrix = templ ? paleo::pseudoproxy::with_locations(m, *templ) : m;
  }
  if (matrix) text = paleo::data::format_matrix(*matrix);

  if (out_path.empty()) {
    std::cout << text;
    std::cout.flush();
  } else {
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text)) throw Error(ErrorCode::io, "cannot write " + out_path);
    spdlog::info("wrote {}", out_path);
  }
  if (!metadata_out.empty()) {
    if (!matrix) throw Error(ErrorCode::configuration, "--metadata-out applies to matrix kinds only");
    paleo::data::write_metadata(*matrix, metadata_out);
  }
  return kOk;
}

int finish(const ex::Bundle& bundle, const Globals& g) {
  bundle.write(g.output_dir);
  for (const auto& s : bundle.stages) {
    if (s.error.empty()) spdlog::info("stage {}: ok", s.name);
    else spdlog::warn("stage {}: {}", s.name, s.error);
  }
  spdlog::info("bundle written to {}", g.output_dir);
  return bundle.failures() ? kPartial : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("paleorecon");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);

  CLI::App app{"Proxy-based temperature reconstruction: holdout validation, null benchmarks, simulation studies "
               "and Bayesian backcasts.",
               "paleorecon"};
  app.set_version_flag("--version", ex::build_id());
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  Globals g;
  std::string config_path;
  app.add_option("--config", config_path, "INI config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Parameter override key=value (repeatable)");
  app.add_option("--threads", g.threads, "Worker threads, 0 = hardware concurrency");
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--output-dir", g.output_dir, "Bundle directory")->envname("PALEO_OUTPUT_DIR");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off");

  std::map<std::string, Command> cmds;
  auto add = [&](const std::string& name, const std::string& help) -> Command& {
    auto& c = cmds[name];
    c.app = app.add_subcommand(name, help);
    return c;
  };

  {
    auto& c = add("validate", "Holdout-block RMSE of reconstruction methods on real data");
    c.input("--target", "target", "Target CSV (year,value)");
    c.input("--proxies", "proxies", "Proxy matrix CSV");
    c.input("--metadata", "metadata", "Proxy metadata CSV");
    c.param("--method", "methods", "Method tag (repeatable), e.g. lasso_cv, cps, pc_ols:4", ';');
    c.param("--block-length", "holdout.length", "Block lengths, comma separated");
    c.param("--mode", "holdout.filter", "Block filters: interpolated, extrapolated or all (repeatable)", ';');
    c.param("--stride", "holdout.stride", "Years between block starts");
    c.param("--calibration", "calibration", "FIRST,LAST");
    c.param("--cache-dir", "cache_dir", "Reuse and store grid cells here");
  }
  {
    auto& c = add("nulls", "Real RMSE against pseudoproxy null benchmarks");
    c.input("--target", "target", "Target CSV (year,value)");
    c.input("--proxies", "proxies", "Proxy matrix CSV");
    c.input("--metadata", "metadata", "Proxy metadata CSV");
    c.param("--method", "methods", "Method tag (repeatable)", ';');
    c.param("--generator", "nulls", "white, ar1:PHI, ar1_empirical or brownian (repeatable)", ';');
    c.param("--replications", "n_null", "Null replications per cell");
    c.param("--block-length", "holdout.length", "Block lengths, comma separated");
    c.param("--mode", "holdout.filter", "Block filters (repeatable)", ';');
    c.param("--stride", "holdout.stride", "Years between block starts");
    c.param("--calibration", "calibration", "FIRST,LAST");
    c.param("--cache-dir", "cache_dir", "Reuse and store grid cells here");
  }
  {
    auto& c = add("bayes", "Bayesian AR+PC backcast with uncertainty decomposition");
    c.input("--target", "target", "Target CSV; omit for a synthetic run");
    c.input("--proxies", "proxies", "Proxy matrix CSV (PCs are extracted)");
    c.input("--pcs", "pcs", "Principal component scores CSV");
    c.param("--k", "k", "Leading PCs used");
    c.param("--ar-order", "ar_orders", "AR orders to fit (repeatable)", ',');
    c.param("--calibration", "calibration", "FIRST,LAST");
    c.param("--backcast-first", "backcast_first", "First backcast year");
    c.param("--iterations", "mcmc.iterations", "Gibbs iterations per chain");
    c.param("--burn-in", "mcmc.burn_in", "Discarded iterations per chain");
    c.param("--thin", "mcmc.thin", "Keep every n-th draw");
    c.param("--chains", "mcmc.chains", "Chains");
    c.param("--max-draws", "max_draws", "Posterior draws used for paths");
    c.param("--smoothing", "smoothing", "Odd moving-average window");
  }
  std::vector<std::string> eigen_raw;
  {
    auto& c = add("pcselect", "Number of PCs retained under each selection rule");
    c.input("--proxies", "proxies", "Proxy matrix CSV (eigenvalues from its PCA)");
    c.param("--eigenvalues", "eigenvalues", "Comma-separated eigenvalues");
    c.param("--threshold", "thresholds", "Variance thresholds (repeatable or comma separated)", ',');
    c.param("--period", "period", "FIRST,LAST for the PCA");
  }
  {
    auto& c = add("diagnose", "Simulation fidelity: real proxies against AR1(Empirical) simulations");
    c.input("--target", "target", "Target CSV");
    c.input("--proxies", "proxies", "Proxy matrix CSV");
    c.input("--metadata", "metadata", "Proxy metadata CSV");
    c.param("--n-boot", "bootstrap.n_boot", "Bootstrap replicates per series");
    c.param("--bootstrap-block", "bootstrap.block_length", "Mean stationary-bootstrap block length");
    c.param("--max-lag", "max_lag", "Lags in the target ACF/PACF table");
  }
  std::string recipe_name;
  {
    auto& c = add("experiment", "Run a packaged experiment recipe");
    c.param("--recipe", "recipe", "cps_nulls, tingley, tingley_perturbed, smerdon_snr, smerdon_append, "
                                        "smerdon_slope, centering_bug, bayes_backcast, pc_criteria, sim_fidelity");
    c.input("--target", "target", "Target CSV");
    c.input("--proxies", "proxies", "Proxy matrix CSV");
    c.input("--metadata", "metadata", "Proxy metadata CSV");
    c.input("--local-temperatures", "local_temperatures", "Local temperature matrix CSV");
    c.input("--pcs", "pcs", "Principal component scores CSV");
  }
  std::string out_path, metadata_out;
  {
    auto& c = add("generate", "Write synthetic series as CSV");
    c.param("--kind", "kind", "white, ar1, ar1_empirical, brownian, tingley or target");
    c.param("--years", "years", "Number of years");
    c.param("--series", "series", "Number of columns");
    c.param("--start-year", "start_year", "First year");
    c.param("--phi", "phi", "AR(1) coefficient for ar1 and tingley noise");
    c.param("--sigma-omega", "sigma_omega", "Noise sd for tingley");
    c.param("--sigma-beta", "sigma_beta", "Slope sd for tingley");
    c.input("--target", "target", "Target for tingley proxies");
    c.input("--template", "proxies", "Proxies for ar1_empirical fits and locations");
    c.input("--metadata", "metadata", "Metadata for --template");
    c.app->add_option("--out", out_path, "Output file (default standard output)");
    c.app->add_option("--metadata-out", metadata_out, "Also write column metadata here");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kFatal;
  }

  try {
    ConfigFile cfg;
    if (!config_path.empty()) cfg = read_config(config_path);
    apply_globals(cfg, app, g);
    for (const auto& [name, section] : cfg.sections)
      if (name != "parameters" && !cmds.count(name))
        throw Error(ErrorCode::configuration, "unknown config section [" + name + "]");
    const auto level = spdlog::level::from_str(g.log_level);
    if (level == spdlog::level::off && g.log_level != "off")
      throw Error(ErrorCode::configuration, "unknown log level '" + g.log_level + "'");
    spdlog::set_level(level);

    const auto it = std::find_if(cmds.begin(), cmds.end(), [](const auto& kv) { return kv.second.app->parsed(); });
    const std::string& name = it->first;
    Resolved r = resolve(it->second, cfg, g);
    const unsigned threads = paleo::resolve_threads(g.threads);
    spdlog::debug("{} with seed {} on {} threads", name, g.seed, threads);

    if (name == "validate" || name == "nulls") return finish(run_grid(name, r, g, name == "nulls"), g);
    if (name == "generate") return run_generate(r, g, out_path, metadata_out);

    ex::ExperimentSpec spec;
    if (name == "experiment") {
      auto rec = r.parameters.find("recipe");
      if (rec == r.parameters.end()) throw Error(ErrorCode::configuration, "experiment needs --recipe");
      spec.recipe = ex::parse_recipe(rec->second);
      r.parameters.erase(rec);
    } else if (name == "bayes") {
      spec.recipe = ex::Recipe::bayes_backcast;
    } else if (name == "pcselect") {
      spec.recipe = ex::Recipe::pc_criteria;
    } else {
      spec.recipe = ex::Recipe::sim_fidelity;
    }
    spec.inputs = r.inputs;
    spec.parameters = ex::Parameters(r.parameters);
    spec.seed = g.seed;
    spec.threads = threads;
    spdlog::info("running {}", ex::to_string(spec.recipe));
    const auto bundle = ex::run(spec);
    if (name == "pcselect" && bundle.tables.count("pc_selection")) std::cout << bundle.tables.at("pc_selection");
    return finish(bundle, g);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kFatal;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFatal;
  }
}
