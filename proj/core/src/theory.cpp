#include "hl/theory.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "hl/humanline.hpp"
#include "hl/objectives.hpp"
#include "hl/policy.hpp"
#include "hl/prospect.hpp"
#include "hl/rng.hpp"

namespace hl::theory {

namespace {

using policy::Policy;
using policy::Sequence;

std::string format_detail(const std::ostringstream& s) { return s.str(); }

// ============================================================================
// Utility-gap bound sweep
// ============================================================================

TheoryCheck pinsker_sweep(std::uint64_t seed) {
  rng::Stream stream(seed, rng::Purpose::theory, 1);
  constexpr int kTrials = 1000;
  int violations = 0;
  double worst_margin = std::numeric_limits<double>::infinity();

  for (int trial = 0; trial < kTrials; ++trial) {
    const int n = 2 + static_cast<int>(stream.uniform_below(7));
    std::vector<double> outcomes(n);
    double z = -3.0 + 3.0 * stream.uniform01();
    for (int i = 0; i < n; ++i) {
      z += 0.1 + 0.9 * stream.uniform01();
      outcomes[i] = z;
    }
    auto simplex = [&](double floor) {
      std::vector<double> p(n);
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        p[i] = floor + stream.gamma(1.0);
        total += p[i];
      }
      for (double& v : p) v /= total;
      return p;
    };
    prospect::OutcomeDistribution omega{outcomes, simplex(0.0)};
    prospect::OutcomeDistribution nominal{outcomes, simplex(1e-3)};

    prospect::ProspectParams params;
    params.alpha = 0.3 + 0.7 * stream.uniform01();
    params.lambda = 1.0 + 1.5 * stream.uniform01();
    params.ref_point = -1.0 + 2.0 * stream.uniform01();

    const auto bound = prospect::utility_gap_bound(omega, nominal, params);
    if (!bound.holds) ++violations;
    worst_margin = std::min(worst_margin, bound.rhs - bound.lhs);
  }

  std::ostringstream d;
  d << violations << " violations in " << kTrials << " trials; tightest slack " << worst_margin;
  return {"utility_gap_bound_sweep", violations == 0, format_detail(d)};
}

// ============================================================================
// Rejection law
// ============================================================================

TheoryCheck rejection_acceptance_law(std::uint64_t seed) {
  rng::Stream stream(seed, rng::Purpose::theory, 2);
  constexpr int kTrials = 100000;
  constexpr double kCap = 2.0;  // M'
  const double gammas[] = {0.3, 0.6, 1.0};
  const double targets[] = {0.2, 0.5, 0.9};  // intended acceptance probabilities

  bool ok = true;
  double worst_sigmas = 0.0;
  for (const double gamma : gammas) {
    for (const double target : targets) {
      // ratio chosen so (ratio / cap)^gamma == target exactly
      const double ratio = kCap * std::pow(target, 1.0 / gamma);
      int accepted = 0;
      for (int i = 0; i < kTrials; ++i) {
        const double b = stream.beta(gamma, 1.0);
        if (!humanline::rejects(ratio, kCap, b)) ++accepted;
      }
      const double expect = std::pow(ratio / kCap, gamma);
      const double sigma = std::sqrt(expect * (1.0 - expect) / kTrials);
      const double dev = std::abs(accepted / static_cast<double>(kTrials) - expect);
      worst_sigmas = std::max(worst_sigmas, dev / sigma);
      if (dev > 4.0 * sigma) ok = false;
    }
  }
  std::ostringstream d;
  d << "worst deviation " << worst_sigmas << " sigma across " << 9 << " (gamma, ratio) cells";
  return {"rejection_acceptance_law", ok, format_detail(d)};
}

TheoryCheck accepted_token_distribution(std::uint64_t seed) {
  rng::Stream stream(seed, rng::Purpose::theory, 3);
  constexpr int kVocab = 8;
  constexpr int kTrials = 100000;
  constexpr double kGamma = 0.6;

  // Random reference and policy categoricals over kVocab outcomes.
  std::vector<double> ref(kVocab), pol(kVocab);
  double ref_total = 0.0, pol_total = 0.0;
  for (int v = 0; v < kVocab; ++v) {
    ref[v] = std::exp(0.7 * stream.normal());
    pol[v] = std::exp(0.7 * stream.normal());
    ref_total += ref[v];
    pol_total += pol[v];
  }
  for (int v = 0; v < kVocab; ++v) {
    ref[v] /= ref_total;
    pol[v] /= pol_total;
  }

  std::vector<double> ratio(kVocab);
  double cap = 0.0;
  for (int v = 0; v < kVocab; ++v) {
    ratio[v] = pol[v] / ref[v];
    cap = std::max(cap, ratio[v]);
  }
  cap *= 1.000001;

  // Tilted law the accepted tokens should follow.
  std::vector<double> expected(kVocab);
  double z = 0.0;
  for (int v = 0; v < kVocab; ++v) {
    expected[v] = ref[v] * std::pow(ratio[v] / cap, kGamma);
    z += expected[v];
  }
  for (double& e : expected) e /= z;

  std::vector<double> cum(kVocab);
  double acc = 0.0;
  for (int v = 0; v < kVocab; ++v) {
    acc += ref[v];
    cum[v] = acc;
  }
  cum.back() = 1.0;

  std::vector<long long> counts(kVocab, 0);
  long long accepted = 0;
  for (int i = 0; i < kTrials; ++i) {
    const double u = stream.uniform01();
    const int v = static_cast<int>(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
    const double b = stream.beta(kGamma, 1.0);
    if (!humanline::rejects(ratio[v], cap, b)) {
      ++counts[v];
      ++accepted;
    }
  }

  double chi2 = 0.0;
  for (int v = 0; v < kVocab; ++v) {
    const double e = expected[v] * static_cast<double>(accepted);
    const double diff = static_cast<double>(counts[v]) - e;
    chi2 += diff * diff / e;
  }
  const boost::math::chi_squared dist(kVocab - 1);
  const double p = boost::math::cdf(boost::math::complement(dist, chi2));

  std::ostringstream d;
  d << "chi2 " << chi2 << " on " << (kVocab - 1) << " dof, p " << p << ", " << accepted
    << " accepted of " << kTrials;
  return {"accepted_token_distribution", p > 0.01, format_detail(d)};
}

// ============================================================================
// Concentrated-Beta limit
// ============================================================================

TheoryCheck clip_limit_variance(std::uint64_t seed) {
  rng::Stream stream(seed, rng::Purpose::theory, 4);
  constexpr double kConcentration = 1e5;
  constexpr int kDraws = 100000;
  const humanline::RatioBounds bounds{3.0, 3.0};
  const auto shapes = humanline::clip_limit_beta_params(kConcentration, 0.8, 1.2, bounds);

  const double mean = 0.8 / bounds.ratio_cap;
  const double want = mean * (1.0 - mean) / (kConcentration + 1.0);

  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < kDraws; ++i) {
    const double b = stream.beta(shapes.gamma_p, shapes.beta_p);
    sum += b;
    sum_sq += b * b;
  }
  const double m = sum / kDraws;
  const double var = sum_sq / kDraws - m * m;
  const double rel = std::abs(var - want) / want;

  std::ostringstream d;
  d << "empirical Var " << var << " vs " << want << " (relative error " << rel << ")";
  return {"clip_limit_beta_variance", rel <= 0.10, format_detail(d)};
}

TheoryCheck clip_limit_detach_agreement(std::uint64_t seed) {
  rng::Stream lower(seed, rng::Purpose::theory, 5);
  rng::Stream upper(seed, rng::Purpose::theory, 6);
  rng::Stream gen(seed, rng::Purpose::theory, 7);
  constexpr double kConcentration = 1e5;
  constexpr int kTokens = 100000;
  constexpr double kEpsP = 0.8, kEpsR = 1.2;
  const humanline::RatioBounds bounds{3.0, 3.0};
  const auto shapes = humanline::clip_limit_beta_params(kConcentration, kEpsP, kEpsR, bounds);

  humanline::HumanlineConfig cfg;
  cfg.mode = humanline::Mode::sampling;
  cfg.gamma_p = shapes.gamma_p;
  cfg.beta_p = shapes.beta_p;
  cfg.gamma_r = shapes.gamma_r;
  cfg.beta_r = shapes.beta_r;

  std::vector<double> log_ratios(kTokens);
  const double lo = -std::log(bounds.inverse_cap), hi = std::log(bounds.ratio_cap);
  for (int i = 0; i < kTokens; ++i) log_ratios[i] = lo + (hi - lo) * gen.uniform01();

  const auto mask = humanline::humanline_sample_mask(log_ratios, bounds, cfg, lower, upper);

  int agree = 0;
  for (int i = 0; i < kTokens; ++i) {
    const double ratio = std::exp(log_ratios[i]);
    const bool outside_clip = ratio < kEpsP || ratio > kEpsR;
    if (outside_clip == (mask[i] != 0)) ++agree;
  }
  const double fraction = agree / static_cast<double>(kTokens);

  std::ostringstream d;
  d << "detach set matches the [" << kEpsP << ", " << kEpsR << "] clip-complement on "
    << fraction * 100.0 << "% of " << kTokens << " tokens";
  return {"clip_limit_detach_agreement", fraction >= 0.995, format_detail(d)};
}

// ============================================================================
// Gradient spot checks
// ============================================================================

double fd_slope(const std::function<double()>& f, Policy& pol, std::size_t i, double h) {
  auto logits = pol.mutable_logits();
  const double orig = logits[i];
  logits[i] = orig + h;
  const double fp = f();
  logits[i] = orig - h;
  const double fm = f();
  logits[i] = orig;
  return (fp - fm) / (2.0 * h);
}

double max_rel_error(const policy::GradTape& tape, const std::function<double()>& f,
                     Policy& pol) {
  constexpr double kH = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < tape.grad.size(); ++i) {
    const double numeric = fd_slope(f, pol, i, kH);
    const double analytic = tape.grad[i];
    const double rel =
        std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
    worst = std::max(worst, rel);
  }
  return worst;
}

Sequence random_sequence(const policy::Vocabulary& vocab, rng::Stream& stream) {
  Sequence seq;
  seq.context = {static_cast<int>(stream.uniform_below(static_cast<std::uint64_t>(vocab.bos)))};
  const int body = 1 + static_cast<int>(stream.uniform_below(3));
  for (int t = 0; t < body; ++t) {
    seq.output.push_back(
        static_cast<int>(stream.uniform_below(static_cast<std::uint64_t>(vocab.bos))));
  }
  seq.output.push_back(vocab.eos);
  return seq;
}

TheoryCheck gradient_spot_checks(std::uint64_t seed) {
  rng::Stream stream(seed, rng::Purpose::theory, 8);
  const policy::Vocabulary vocab{6, 4, 5};
  constexpr double kTol = 1e-6;
  constexpr int kInstances = 3;

  double worst = 0.0;
  std::string worst_site = "none";
  auto note = [&](const std::string& site, double err) {
    if (err > worst) {
      worst = err;
      worst_site = site;
    }
  };

  for (int inst = 0; inst < kInstances; ++inst) {
    Policy pol = Policy::random(vocab, 1, 0.6, stream);
    const Policy ref = Policy::random(vocab, 1, 0.6, stream);

    for (const bool clipping : {false, true}) {
      humanline::HumanlineConfig hl;
      hl.mode = clipping ? humanline::Mode::clipping : humanline::Mode::off;
      hl.log_eps_p = -0.4;
      hl.log_eps_r = 0.4;

      {
        objectives::LossConfig cfg;
        cfg.objective = objectives::Objective::dpo;
        cfg.beta = 0.5;
        const Sequence w = random_sequence(vocab, stream);
        Sequence l = random_sequence(vocab, stream);
        while (l.context == w.context && l.output == w.output) l = random_sequence(vocab, stream);
        policy::GradTape tape(pol);
        objectives::dpo_loss(w, l, pol, ref, cfg, hl, {}, {}, &tape, 1.0);
        note("dpo" + std::string(clipping ? "+clip" : ""),
             max_rel_error(
                 tape, [&] { return objectives::dpo_loss(w, l, pol, ref, cfg, hl).loss; }, pol));
      }
      {
        objectives::LossConfig cfg;
        cfg.objective = objectives::Objective::kto;
        cfg.beta = 0.5;
        std::vector<objectives::KtoExample> batch = {
            {random_sequence(vocab, stream), true},
            {random_sequence(vocab, stream), false},
        };
        const std::vector<Sequence> mismatched = {random_sequence(vocab, stream)};
        const double z0 = objectives::kto_reward_shift(mismatched, pol, ref, cfg, hl);
        policy::GradTape tape(pol);
        objectives::kto_loss_with_shift(batch, z0, pol, ref, cfg, hl, {}, &tape, 1.0);
        note("kto" + std::string(clipping ? "+clip" : ""),
             max_rel_error(
                 tape,
                 [&] {
                   return objectives::kto_loss_with_shift(batch, z0, pol, ref, cfg, hl).mean_loss;
                 },
                 pol));
      }
      {
        objectives::LossConfig cfg;
        cfg.objective = objectives::Objective::grpo;
        cfg.beta = 0.1;
        cfg.clip_epsilon = 0.2;
        objectives::Group group;
        const Sequence a = random_sequence(vocab, stream);
        group.context = a.context;
        group.outputs = {a, Sequence{a.context, random_sequence(vocab, stream).output}};
        group.rewards = {1.0, 0.25};
        group.advantages = objectives::group_advantages(group.rewards);
        policy::GradTape tape(pol);
        objectives::grpo_loss(group, pol, ref, ref, cfg, hl, {}, &tape, 1.0);
        note("grpo" + std::string(clipping ? "+clip" : ""),
             max_rel_error(
                 tape, [&] { return objectives::grpo_loss(group, pol, ref, ref, cfg, hl).loss; },
                 pol));
      }
    }
  }

  std::ostringstream d;
  d << "max relative error " << worst << " at " << worst_site << " (tolerance " << kTol << ")";
  return {"gradient_finite_difference", worst <= kTol, format_detail(d)};
}

}  // namespace

TheoryReport run_theory_suite(std::uint64_t seed) {
  TheoryReport report;
  report.checks.push_back(pinsker_sweep(seed));
  report.checks.push_back(rejection_acceptance_law(seed));
  report.checks.push_back(accepted_token_distribution(seed));
  report.checks.push_back(clip_limit_variance(seed));
  report.checks.push_back(clip_limit_detach_agreement(seed));
  report.checks.push_back(gradient_spot_checks(seed));
  return report;
}

}  // namespace hl::theory
