#pragma once

#include <optional>
#include <string>
#include <vector>

#include "paleo/data.hpp"
#include "paleo/rng.hpp"

namespace paleo::pseudoproxy {

struct Ar1Params {
  double phi = 0.0;
  double innovation_sd = 1.0;
  double mean = 0.0;

  /// Throws ErrorCode::parameter unless |phi| < 1 and innovation_sd > 0.
  void validate() const;
  double marginal_sd() const;
};

enum class NoiseKind { white, ar1, ar1_empirical, brownian };
std::string_view to_string(NoiseKind kind);
NoiseKind parse_noise_kind(std::string_view text);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::white;
  Ar1Params ar1;                       // kind == ar1
  std::vector<Ar1Params> empirical;    // kind == ar1_empirical, one per column
  std::optional<YearRange> standardize_window;  // brownian; defaults to every year

  /// Short label such as "AR1(0.25)" or "Brownian".
  std::string label() const;
};

/// Independent pseudoproxy columns; column j draws from seed.child(j).
data::ProxyMatrix gen_noise_matrix(const NoiseSpec& spec, int n_years, int n_series,
                                   const Seed& seed, int start_year = 1);

/// Stationary AR(1) draw (the first value comes from the marginal law).
std::vector<double> simulate_ar1(const Ar1Params& params, std::size_t n, Engine& engine);

/// Lag-one fit on the longest run of consecutive available values.
Ar1Params fit_ar1(const data::AnnualSeries& series);

/// fit_ar1 for every column, optionally restricted to `window`.
std::vector<Ar1Params> fit_ar1_columns(const data::ProxyMatrix& matrix,
                                       std::optional<YearRange> window = std::nullopt);

/// Copies latitude/longitude from `source` onto the columns of `generated`,
/// cycling through the source columns if the widths differ.
data::ProxyMatrix with_locations(const data::ProxyMatrix& generated, const data::ProxyMatrix& source);

struct TingleyConfig {
  double sigma_omega = 1.0;
  double sigma_beta = 0.0;
  int n_series = 1;
  double slope_mean = 1.0;
};

/// Signal proxies x_{t,i} = beta_i * y_t + omega_{t,i}.
data::ProxyMatrix gen_tingley(const data::AnnualSeries& target, const TingleyConfig& config,
                              const Seed& seed);

enum class NoiseColor { white, red };
enum class CorruptionVariant { snr_mix, column_append, random_slope };
std::string_view to_string(NoiseColor color);
std::string_view to_string(CorruptionVariant variant);

struct CorruptionSpec {
  double noise_fraction = 0.0;
  NoiseColor color = NoiseColor::white;
  double red_phi = 0.4;
  CorruptionVariant variant = CorruptionVariant::snr_mix;
  double sigma_beta = 0.0;  // random_slope only

  std::string label() const;
};

/// Corrupted local temperatures. `window` is the experiment window over which
/// variances are measured; it must be free of missing values.
data::ProxyMatrix corrupt_temperatures(const data::ProxyMatrix& local, const CorruptionSpec& spec,
                                       const Seed& seed,
                                       std::optional<YearRange> window = std::nullopt);

}  // namespace paleo::pseudoproxy
