#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "hl/humanline.hpp"
#include "hl/policy.hpp"
#include "hl/rng.hpp"

using namespace hl::humanline;
using hl::policy::Policy;
using hl::policy::Vocabulary;
using hl::rng::Purpose;
using hl::rng::Stream;

namespace {

const Vocabulary kVocab{4, 2, 3};

/** Policy whose single-state row has exactly the given probabilities. */
Policy policy_with_probs(const std::vector<double>& probs) {
  Policy pol(kVocab, 1);
  for (std::size_t state = 0; state < pol.num_states(); ++state) {
    for (int tok = 0; tok < kVocab.size; ++tok) {
      pol.set_logit(state, tok, std::log(probs[tok]));
    }
  }
  return pol;
}

HumanlineConfig clipping_cfg(double lo, double hi) {
  HumanlineConfig cfg;
  cfg.mode = Mode::clipping;
  cfg.log_eps_p = lo;
  cfg.log_eps_r = hi;
  return cfg;
}

}  // namespace

// ============================================================================
// Ratio bounds
// ============================================================================

TEST_CASE("identical policies give unit bounds up to the strictness slack") {
  Policy pol(kVocab, 1);
  auto b = compute_ratio_bounds(pol, pol, 0);
  CHECK(b.ratio_cap == doctest::Approx(1.000001).epsilon(1e-12));
  CHECK(b.inverse_cap == doctest::Approx(1.000001).epsilon(1e-12));
}

TEST_CASE("bounds match a hand-built probability pair") {
  // Row probabilities (0.4, 0.1, 0.4, 0.1) against the uniform 0.25: the
  // largest ratio is 1.6 and the largest inverse ratio 2.5.
  Policy pol = policy_with_probs({0.4, 0.1, 0.4, 0.1});
  Policy ref(kVocab, 1);
  auto b = compute_ratio_bounds(pol, ref, 0);
  CHECK(b.ratio_cap == doctest::Approx(1.6 * 1.000001).epsilon(1e-9));
  CHECK(b.inverse_cap == doctest::Approx(2.5 * 1.000001).epsilon(1e-9));
}

TEST_CASE("bounds dominate every token ratio") {
  Stream i1(1, Purpose::policy_init, 0), i2(2, Purpose::policy_init, 0);
  Policy pol = Policy::random(kVocab, 1, 1.5, i1);
  Policy ref = Policy::random(kVocab, 1, 1.5, i2);
  std::vector<double> prow(kVocab.size), rrow(kVocab.size);
  for (std::size_t state = 0; state < pol.num_states(); ++state) {
    auto b = compute_ratio_bounds(pol, ref, state);
    CHECK(b.ratio_cap >= 1.0);
    CHECK(b.inverse_cap >= 1.0);
    pol.row_log_probs(state, prow);
    ref.row_log_probs(state, rrow);
    for (int tok = 0; tok < kVocab.size; ++tok) {
      const double ratio = std::exp(prow[tok] - rrow[tok]);
      CHECK(ratio < b.ratio_cap);
      CHECK(1.0 / ratio < b.inverse_cap);
    }
  }
}

TEST_CASE("sequence bounds are the elementwise max over states") {
  Stream i1(3, Purpose::policy_init, 0), i2(4, Purpose::policy_init, 0);
  Policy pol = Policy::random(kVocab, 1, 1.0, i1);
  Policy ref = Policy::random(kVocab, 1, 1.0, i2);
  std::vector<std::size_t> states{0, 1, 3};
  auto combined = sequence_ratio_bounds(pol, ref, states);
  double max_p = 0.0, max_r = 0.0;
  for (std::size_t s : states) {
    auto b = compute_ratio_bounds(pol, ref, s);
    max_p = std::max(max_p, b.ratio_cap);
    max_r = std::max(max_r, b.inverse_cap);
  }
  CHECK(combined.ratio_cap == max_p);
  CHECK(combined.inverse_cap == max_r);

  CHECK_THROWS_AS(sequence_ratio_bounds(pol, ref, {}), std::invalid_argument);
}

TEST_CASE("ratio bounds reject mismatched shapes") {
  Policy pol(kVocab, 1);
  Policy deeper(kVocab, 2);
  CHECK_THROWS_AS(compute_ratio_bounds(pol, deeper, 0), std::invalid_argument);
}

// ============================================================================
// Clipping
// ============================================================================

TEST_CASE("clip clamps to the band and is the identity inside it") {
  auto cfg = clipping_cfg(-1.5, 1.5);
  CHECK(clip_log_ratio(2.0, cfg) == 1.5);
  CHECK(clip_log_ratio(-2.0, cfg) == -1.5);
  CHECK(clip_log_ratio(0.0, cfg) == 0.0);
  CHECK(clip_log_ratio(1.5, cfg) == 1.5);
  CHECK(clip_log_ratio(0.7, cfg) == 0.7);
}

TEST_CASE("vector clip preserves order and is idempotent") {
  auto cfg = clipping_cfg(-1.5, 1.5);
  std::vector<double> in{-3.0, -1.0, 0.0, 1.0, 3.0};
  auto once = humanline_clip(in, cfg);
  std::vector<double> expect{-1.5, -1.0, 0.0, 1.0, 1.5};
  CHECK(once == expect);
  auto twice = humanline_clip(once, cfg);
  CHECK(twice == once);
}

TEST_CASE("clip validates the band and its input") {
  auto inverted = clipping_cfg(1.0, -1.0);
  CHECK_THROWS_AS(clip_log_ratio(0.0, inverted), std::invalid_argument);
  auto cfg = clipping_cfg(-1.5, 1.5);
  CHECK_THROWS_AS(clip_log_ratio(std::numeric_limits<double>::quiet_NaN(), cfg),
                  std::invalid_argument);
  std::vector<double> bad{std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(humanline_clip(bad, cfg), std::invalid_argument);
}

// ============================================================================
// Rejection predicate and sampling masks
// ============================================================================

TEST_CASE("a ratio exactly at the threshold is kept") {
  CHECK(!rejects(1.0, 1.0, 1.0));
  CHECK(rejects(0.999, 1.0, 1.0));
  CHECK(!rejects(1.2, 1.0, 1.0));
}

TEST_CASE("a ratio at the bound is never detached") {
  HumanlineConfig cfg;
  cfg.mode = Mode::sampling;
  cfg.gamma_p = 1.0;
  cfg.beta_p = 1.0;
  // Make the upper side inert: B_R ~ Beta(1, 1e9) is essentially zero, so
  // 1/ratio < M_R * B_R never fires at these magnitudes.
  cfg.gamma_r = 1.0;
  cfg.beta_r = 1e9;
  // Pin the cap to the exact round-tripped ratio so the token sits precisely
  // on the threshold.
  RatioBounds bounds{std::exp(std::log(2.0)), 2.0};
  std::vector<double> at_bound{std::log(2.0)};
  Stream lower(5, Purpose::beta_lower, 0);
  Stream upper(5, Purpose::beta_upper, 0);
  for (int i = 0; i < 10000; ++i) {
    auto mask = humanline_sample_mask(at_bound, bounds, cfg, lower, upper);
    REQUIRE(mask.size() == 1);
    CHECK(mask[0] == 0);
  }
}

TEST_CASE("uniform thresholds reject at the expected rate") {
  // ratio = 1 against M_P = 2 with B_P ~ Beta(1, 1) rejects iff B_P > 0.5.
  HumanlineConfig cfg;
  cfg.mode = Mode::sampling;
  cfg.gamma_p = 1.0;
  cfg.beta_p = 1.0;
  cfg.gamma_r = 1.0;
  cfg.beta_r = 1e9;
  RatioBounds bounds{2.0, 2.0};
  std::vector<double> unit{0.0};
  Stream lower(6, Purpose::beta_lower, 0);
  Stream upper(6, Purpose::beta_upper, 0);
  const int n = 100000;
  int detached = 0;
  for (int i = 0; i < n; ++i) {
    detached += humanline_sample_mask(unit, bounds, cfg, lower, upper)[0];
  }
  const double p = 0.5;
  const double tol = 4.0 * std::sqrt(p * (1.0 - p) / n);
  CHECK(std::abs(static_cast<double>(detached) / n - p) < tol);
}

TEST_CASE("beta(1/2, 1) acceptance follows the square-root law") {
  // With B_P ~ Beta(0.5, 1), P(keep) = P(B_P <= r/M) = sqrt(r/M). Here
  // r/M = 0.5, so acceptance is 0.5^0.5.
  HumanlineConfig cfg;
  cfg.mode = Mode::sampling;
  cfg.gamma_p = 0.5;
  cfg.beta_p = 1.0;
  cfg.gamma_r = 1.0;
  cfg.beta_r = 1e9;
  RatioBounds bounds{2.0, 2.0};
  std::vector<double> unit{0.0};
  Stream lower(7, Purpose::beta_lower, 0);
  Stream upper(7, Purpose::beta_upper, 0);
  const int n = 100000;
  int kept = 0;
  for (int i = 0; i < n; ++i) {
    kept += 1 - humanline_sample_mask(unit, bounds, cfg, lower, upper)[0];
  }
  const double p = std::pow(0.5, 0.5);
  const double tol = 3.0 * std::sqrt(p * (1.0 - p) / n);
  CHECK(std::abs(static_cast<double>(kept) / n - p) < tol);
}

TEST_CASE("mask length matches the input and both sides can fire") {
  HumanlineConfig cfg;
  cfg.mode = Mode::sampling;
  RatioBounds bounds{4.0, 4.0};
  std::vector<double> lrs{-1.0, 0.0, 1.0};
  Stream lower(8, Purpose::beta_lower, 0);
  Stream upper(8, Purpose::beta_upper, 0);
  int low_hits = 0, high_hits = 0;
  for (int i = 0; i < 2000; ++i) {
    auto mask = humanline_sample_mask(lrs, bounds, cfg, lower, upper);
    REQUIRE(mask.size() == 3);
    low_hits += mask[0];
    high_hits += mask[2];
  }
  CHECK(low_hits > 0);
  CHECK(high_hits > 0);
}

TEST_CASE("sample mask validates ratios against the stated bounds") {
  HumanlineConfig cfg;
  cfg.mode = Mode::sampling;
  Stream lower(9, Purpose::beta_lower, 0);
  Stream upper(9, Purpose::beta_upper, 0);
  RatioBounds small{1.5, 1.5};
  std::vector<double> too_big{std::log(3.0)};
  CHECK_THROWS_AS(humanline_sample_mask(too_big, small, cfg, lower, upper),
                  std::invalid_argument);
  std::vector<double> nan{std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS_AS(humanline_sample_mask(nan, small, cfg, lower, upper),
                  std::invalid_argument);
  RatioBounds degenerate{0.5, 1.5};
  std::vector<double> fine{0.0};
  CHECK_THROWS_AS(humanline_sample_mask(fine, degenerate, cfg, lower, upper),
                  std::invalid_argument);
}

// ============================================================================
// Concentration construction
// ============================================================================

TEST_CASE("clip-limit shapes match the closed form") {
  RatioBounds bounds{10.0, 10.0};
  auto shapes = clip_limit_beta_params(1000.0, 0.22, 1.5, bounds);
  // Lower side: mean eps_p / M_P = 0.022, shapes k*mean and k*(1-mean).
  CHECK(shapes.gamma_p == doctest::Approx(22.0).epsilon(1e-12));
  CHECK(shapes.beta_p == doctest::Approx(978.0).epsilon(1e-12));
  const double mean_p = shapes.gamma_p / (shapes.gamma_p + shapes.beta_p);
  CHECK(mean_p == doctest::Approx(0.022).epsilon(1e-12));
  // Upper side: mean 1 / (eps_r * M_R).
  const double mean_r = shapes.gamma_r / (shapes.gamma_r + shapes.beta_r);
  CHECK(mean_r == doctest::Approx(1.0 / 15.0).epsilon(1e-12));
  CHECK(shapes.gamma_r + shapes.beta_r == doctest::Approx(1000.0).epsilon(1e-12));
}

TEST_CASE("clip-limit variance shrinks as one over k") {
  RatioBounds bounds{3.0, 3.0};
  for (double k : {100.0, 10000.0}) {
    auto s = clip_limit_beta_params(k, 0.8, 1.2, bounds);
    const double mean = s.gamma_p / (s.gamma_p + s.beta_p);
    const double var = mean * (1.0 - mean) / (s.gamma_p + s.beta_p + 1.0);
    CHECK(var == doctest::Approx(mean * (1.0 - mean) / (k + 1.0)).epsilon(1e-12));
  }
}

TEST_CASE("concentrated thresholds cluster near the clip limits") {
  RatioBounds bounds{3.0, 3.0};
  auto s = clip_limit_beta_params(100000.0, 0.8, 1.2, bounds);
  Stream lower(10, Purpose::beta_lower, 0);
  const int n = 20000;
  int outside = 0;
  for (int i = 0; i < n; ++i) {
    const double threshold = bounds.ratio_cap * lower.beta(s.gamma_p, s.beta_p);
    if (std::abs(threshold - 0.8) > 0.01) ++outside;
  }
  CHECK(static_cast<double>(outside) / n < 0.01);
}

TEST_CASE("clip-limit construction rejects unreachable limits") {
  RatioBounds bounds{2.0, 2.0};
  CHECK_THROWS_AS(clip_limit_beta_params(0.0, 0.5, 1.5, bounds), std::invalid_argument);
  CHECK_THROWS_AS(clip_limit_beta_params(10.0, 2.5, 1.5, bounds), std::invalid_argument);
  CHECK_THROWS_AS(clip_limit_beta_params(10.0, 0.5, 0.4, bounds), std::invalid_argument);
}

// ============================================================================
// Sync schedule
// ============================================================================

TEST_CASE("sync fires at multiples of k only") {
  std::vector<long long> fired;
  for (long long step = 1; step <= 9; ++step) {
    if (sync_due(step, 4)) fired.push_back(step);
  }
  CHECK(fired == std::vector<long long>{4, 8});

  for (long long step = 1; step <= 5; ++step) {
    CHECK(sync_due(step, 1));
    CHECK(!sync_due(step, 0));
    CHECK(!sync_due(step, -2));
  }
  CHECK_THROWS_AS(sync_due(0, 4), std::invalid_argument);
}
