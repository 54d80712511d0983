#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "paleo/common.hpp"
#include "paleo/pcselect.hpp"
#include "paleo/rng.hpp"

using namespace paleo;
using namespace paleo::pcselect;

namespace {

std::vector<double> random_spectrum(Engine& engine) {
  std::uniform_int_distribution<int> len(2, 40);
  std::exponential_distribution<double> gap(1.0);
  std::vector<double> v(static_cast<std::size_t>(len(engine)));
  double level = 0.01 + gap(engine);
  for (auto it = v.rbegin(); it != v.rend(); ++it) *it = (level += 0.01 + gap(engine));
  return v;
}

// cumulative-share rule written out directly
int smallest_k(std::vector<double> w, double threshold) {
  double total = 0;
  for (double x : w) total += x;
  double cum = 0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    cum += w[k];
    if (cum / total >= threshold - 1e-12) return static_cast<int>(k + 1);
  }
  return static_cast<int>(w.size());
}

}  // namespace

TEST_CASE("hand examples") {
  const Spectrum s({4, 3, 2, 1});
  CHECK(select_k(s, Criterion::variance_threshold, 0.8) == 3);
  CHECK(select_k(s, Criterion::variance_threshold_squared_bug, 0.8) == 2);

  const Spectrum flat({1, 1, 1, 1});
  CHECK(select_k(flat, Criterion::variance_threshold, 0.5) == 2);
  CHECK(select_k(flat, Criterion::variance_threshold_squared_bug, 0.5) == 2);

  const Spectrum one({2.5, 0, 0});
  for (auto c : kAllCriteria) CHECK(select_k(one, c, 0.9) == 1);

  // exactly reaching the threshold stops there (ties go to the smaller K)
  CHECK(select_k(Spectrum({1, 1, 1, 1}), Criterion::variance_threshold, 0.75) == 3);
}

TEST_CASE("broken stick and scree gap") {
  // shares 0.5, 0.3, 0.1, 0.1; broken-stick expectations for p=4: 0.521, 0.271, 0.146, 0.0625
  CHECK(select_k(Spectrum({5, 3, 1, 1}), Criterion::broken_stick) == 1);
  CHECK(select_k(Spectrum({6, 3, 0.5, 0.5}), Criterion::broken_stick) == 2);
  CHECK(select_k(Spectrum({10, 9, 8, 2, 1}), Criterion::scree_gap) == 3);
  CHECK(select_k(Spectrum({10, 2, 1.5, 1}), Criterion::scree_gap) == 1);
}

TEST_CASE("threshold rules agree with the direct cumulative-share oracle") {
  Engine engine = make_engine({17, 0});
  for (int rep = 0; rep < 200; ++rep) {
    const auto v = random_spectrum(engine);
    const Spectrum s(v);
    std::vector<double> sq(v);
    for (auto& x : sq) x *= x;
    for (double t : {0.5, 0.7, 0.8, 0.9, 0.99, 1.0}) {
      CHECK(select_k(s, Criterion::variance_threshold, t) == smallest_k(v, t));
      CHECK(select_k(s, Criterion::variance_threshold_squared_bug, t) == smallest_k(sq, t));
    }
  }
}

TEST_CASE("monotone in threshold, dominance of the squared rule, K in range") {
  Engine engine = make_engine({18, 0});
  int strict_reps = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const Spectrum s(random_spectrum(engine));
    int prev = 0;
    bool strict = false;
    for (int i = 1; i <= 100; ++i) {
      const double t = i / 100.0;
      const int k = select_k(s, Criterion::variance_threshold, t);
      const int kb = select_k(s, Criterion::variance_threshold_squared_bug, t);
      CHECK(k >= prev);
      CHECK(kb <= k);
      strict |= kb < k;
      prev = k;
    }
    strict_reps += strict;
    for (auto c : kAllCriteria) {
      const int k = select_k(s, c, 0.8);
      CHECK(k >= 1);
      CHECK(k <= static_cast<int>(s.size()));
    }
  }
  // the 0.01 threshold grid can step over a narrow disagreement window
  CHECK(strict_reps >= 180);
}

TEST_CASE("spectrum validation and table") {
  CHECK_THROWS_AS(Spectrum({1, 2}), Error);
  CHECK_THROWS_AS(Spectrum({0, 0}), Error);
  CHECK_THROWS_AS(Spectrum({1, -0.5}), Error);
  CHECK_THROWS_AS(Spectrum({}), Error);
  CHECK_THROWS_AS(select_k(Spectrum({1}), Criterion::variance_threshold, 0.0), Error);

  const std::vector<double> thresholds{0.8};
  const auto rows = selection_table(Spectrum({4, 3, 2, 1}), thresholds);
  const auto csv = format_table_csv(rows);
  CHECK(csv.find("variance_threshold,0.8,3") != std::string::npos);
  CHECK(csv.find("variance_threshold_squared_BUG,0.8,2") != std::string::npos);
  CHECK(parse_criterion(to_string(Criterion::variance_threshold_squared_bug)) ==
        Criterion::variance_threshold_squared_bug);
}
