#include "hl/prospect.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace hl::prospect {

namespace {

constexpr double kProbSumTol = 1e-12;

void validate_params(const ProspectParams& p) {
  if (!(p.alpha > 0.0) || p.alpha > 1.0) {
    throw std::invalid_argument("ProspectParams: alpha must be in (0, 1]");
  }
  if (!(p.lambda >= 1.0)) throw std::invalid_argument("ProspectParams: lambda must be >= 1");
  if (!(p.gamma_gain > 0.0) || p.gamma_gain > 1.0 || !(p.gamma_loss > 0.0) ||
      p.gamma_loss > 1.0) {
    throw std::invalid_argument("ProspectParams: gamma must be in (0, 1]");
  }
}

double powi_safe(double base, double expo) {
  // pow(x, 1) is exact in theory but not guaranteed by every libm; the alpha=1
  // fast path keeps the acceptance-grade identities bit-exact.
  return expo == 1.0 ? base : std::pow(base, expo);
}

}  // namespace

// ============================================================================
// Distributions
// ============================================================================

void validate_distribution(const OutcomeDistribution& dist) {
  if (dist.outcomes.empty() || dist.outcomes.size() != dist.probs.size()) {
    throw std::invalid_argument("OutcomeDistribution: empty or mismatched arrays");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < dist.outcomes.size(); ++i) {
    if (!std::isfinite(dist.outcomes[i])) {
      throw std::invalid_argument("OutcomeDistribution: non-finite outcome");
    }
    if (!(dist.probs[i] >= 0.0)) {
      throw std::invalid_argument("OutcomeDistribution: negative probability");
    }
    if (i > 0 && !(dist.outcomes[i] > dist.outcomes[i - 1])) {
      throw std::invalid_argument("OutcomeDistribution: outcomes must be strictly ascending");
    }
    sum += dist.probs[i];
  }
  if (std::abs(sum - 1.0) > kProbSumTol) {
    throw std::invalid_argument("OutcomeDistribution: probabilities must sum to 1");
  }
}

OutcomeDistribution make_distribution(std::vector<double> outcomes, std::vector<double> probs) {
  if (outcomes.size() != probs.size() || outcomes.empty()) {
    throw std::invalid_argument("make_distribution: mismatched or empty arrays");
  }
  std::map<double, double> merged;
  for (std::size_t i = 0; i < outcomes.size(); ++i) merged[outcomes[i]] += probs[i];
  OutcomeDistribution dist;
  for (const auto& [z, p] : merged) {
    dist.outcomes.push_back(z);
    dist.probs.push_back(p);
  }
  validate_distribution(dist);
  return dist;
}

// ============================================================================
// Value and capacity
// ============================================================================

double value(double z, const ProspectParams& params) {
  validate_params(params);
  if (!std::isfinite(z)) throw std::invalid_argument("value: outcome must be finite");
  const double d = z - params.ref_point;
  if (d >= 0.0) return powi_safe(d, params.alpha);
  return -params.lambda * powi_safe(-d, params.alpha);
}

double capacity(double a, double g) {
  if (!(a >= 0.0) || !(a <= 1.0)) throw std::invalid_argument("capacity: a must be in [0, 1]");
  if (!(g > 0.0) || g > 1.0) throw std::invalid_argument("capacity: gamma must be in (0, 1]");
  if (g == 1.0) return a;             // identity distortion, kept exact
  if (a == 0.0 || a == 1.0) return a;  // fixed points for every gamma
  const double num = std::pow(a, g);
  const double den = std::pow(num + std::pow(1.0 - a, g), 1.0 / g);
  return num / den;
}

// ============================================================================
// Decision weights and utility
// ============================================================================

std::vector<double> weights(const OutcomeDistribution& dist, double ref_point,
                            const CapacityFn& cap_gain, const CapacityFn& cap_loss) {
  validate_distribution(dist);
  const std::size_t n = dist.outcomes.size();

  // Outcomes are ascending: losses form a prefix, gains (z >= ref) a suffix.
  std::size_t first_gain = 0;
  while (first_gain < n && dist.outcomes[first_gain] < ref_point) ++first_gain;

  std::vector<double> w(n, 0.0);

  // Gain side, from the most positive outcome down: the weight of z_i is the
  // perceived probability of "z_i or better" minus that of "strictly better".
  double tail = 0.0;
  double cap_tail = cap_gain(0.0);
  for (std::size_t i = n; i > first_gain; --i) {
    tail = std::min(1.0, tail + dist.probs[i - 1]);
    const double cap_here = cap_gain(tail);
    w[i - 1] = cap_here - cap_tail;
    cap_tail = cap_here;
  }

  // Loss side mirrored: "z_i or worse" minus "strictly worse".
  double head = 0.0;
  double cap_head = cap_loss(0.0);
  for (std::size_t i = 0; i < first_gain; ++i) {
    head = std::min(1.0, head + dist.probs[i]);
    const double cap_here = cap_loss(head);
    w[i] = cap_here - cap_head;
    cap_head = cap_here;
  }
  return w;
}

std::vector<double> weights(const OutcomeDistribution& dist, const ProspectParams& params) {
  validate_params(params);
  const double gg = params.gamma_gain;
  const double gl = params.gamma_loss;
  return weights(
      dist, params.ref_point, [gg](double a) { return capacity(a, gg); },
      [gl](double a) { return capacity(a, gl); });
}

double utility(const OutcomeDistribution& dist, const ProspectParams& params) {
  const std::vector<double> w = weights(dist, params);
  double u = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) u += w[i] * value(dist.outcomes[i], params);
  return u;
}

// ============================================================================
// Perception-gap bound
// ============================================================================

GapBound utility_gap_bound(const OutcomeDistribution& dist_omega,
                           const OutcomeDistribution& dist_q,
                           const ProspectParams& params) {
  validate_distribution(dist_omega);
  validate_distribution(dist_q);
  if (dist_omega.outcomes != dist_q.outcomes) {
    throw std::invalid_argument("utility_gap_bound: outcome lists must match");
  }

  double u_omega = 0.0;
  double u_q = 0.0;
  double v_inf = 0.0;
  double kl = 0.0;
  for (std::size_t i = 0; i < dist_omega.outcomes.size(); ++i) {
    const double v = value(dist_omega.outcomes[i], params);
    v_inf = std::max(v_inf, std::abs(v));
    const double po = dist_omega.probs[i];
    const double pq = dist_q.probs[i];
    u_omega += po * v;
    u_q += pq * v;
    if (po > 0.0) {
      if (pq == 0.0) {
        throw std::invalid_argument(
            "utility_gap_bound: KL(omega||q) undefined (omega puts mass where q has none)");
      }
      kl += po * std::log(po / pq);
    }
  }
  kl = std::max(kl, 0.0);  // guards tiny negative rounding when omega ~ q

  GapBound out;
  out.lhs = std::abs(u_omega - u_q);
  out.rhs = std::sqrt(2.0 * kl) * v_inf;
  out.holds = out.lhs <= out.rhs;
  return out;
}

}  // namespace hl::prospect
