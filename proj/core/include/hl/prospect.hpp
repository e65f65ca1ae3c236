#pragma once

#include <functional>
#include <vector>

namespace hl::prospect {

// ============================================================================
// Types
// ============================================================================

/** Subjective-value and probability-distortion parameters.
 *
 *  alpha in (0, 1]: diminishing-sensitivity exponent.
 *  lambda >= 1: loss-aversion multiplier.
 *  gamma_gain / gamma_loss in (0, 1]: distortion strength per sign side
 *    (1 = objective probabilities).
 *  ref_point: the outcome experienced as neutral (z0).
 */
struct ProspectParams {
  double alpha = 1.0;
  double lambda = 1.0;
  double gamma_gain = 1.0;
  double gamma_loss = 1.0;
  double ref_point = 0.0;
};

/** Finite outcome distribution: parallel arrays of outcomes and
 *  probabilities. Ops require outcomes strictly ascending and probabilities
 *  nonnegative, summing to 1 within 1e-12. */
struct OutcomeDistribution {
  std::vector<double> outcomes;
  std::vector<double> probs;
};

/** Builds a valid distribution from unordered entries: sorts by outcome,
 *  merges duplicate outcomes by summing probability, validates the total. */
OutcomeDistribution make_distribution(std::vector<double> outcomes,
                                      std::vector<double> probs);

/** Throws std::invalid_argument if dist violates the ordering, range, or
 *  normalization invariants. */
void validate_distribution(const OutcomeDistribution& dist);

// ============================================================================
// Value and capacity
// ============================================================================

/** Subjective value of outcome z relative to the reference point:
 *  (z - z0)^alpha for gains, -lambda * (z0 - z)^alpha for losses. Exactly 0
 *  at the reference point; monotone nondecreasing in z. */
double value(double z, const ProspectParams& params);

/** Probability distortion a^g / (a^g + (1-a)^g)^(1/g) on [0, 1].
 *  Identity at g = 1; fixes 0 and 1 for every g in (0, 1]. Rejects a outside
 *  [0, 1] or g outside (0, 1]. */
double capacity(double a, double g);

// ============================================================================
// Decision weights and utility
// ============================================================================

/** Capacity function type for weight computation: maps a cumulative
 *  probability in [0, 1] to a perceived cumulative in [0, 1]. */
using CapacityFn = std::function<double(double)>;

/**
 * Cumulative decision weights for a sorted outcome distribution.
 *
 * Outcomes at or above the reference point are weighted by differences of the
 * gain-side capacity applied to "probability of doing this well or better"
 * (cumulative over the gain side from the top); outcomes below the reference
 * point mirror this with the loss-side capacity over "this badly or worse".
 * The gain-side weights therefore sum to cap_gain(total gain probability) and
 * the loss side to cap_loss(total loss probability).
 */
std::vector<double> weights(const OutcomeDistribution& dist, const ProspectParams& params);

/** Same telescoping construction with caller-supplied capacity functions, for
 *  injected perceived cumulatives. */
std::vector<double> weights(const OutcomeDistribution& dist, double ref_point,
                            const CapacityFn& cap_gain, const CapacityFn& cap_loss);

/** Expected subjective utility: sum_i weight_i * value(z_i). */
double utility(const OutcomeDistribution& dist, const ProspectParams& params);

// ============================================================================
// Perception-gap bound
// ============================================================================

struct GapBound {
  double lhs = 0.0;   // |E_omega[v] - E_q[v]|
  double rhs = 0.0;   // sqrt(2 * KL(omega || q)) * max_i |v(z_i)|
  bool holds = false;
};

/**
 * Pinsker-style bound on the utility gap between a perceived distribution and
 * a reference distribution over the same outcomes.
 *
 * Both arguments are treated as the weights themselves (plain expectations;
 * no additional distortion is applied).  KL is in nats.  Rejects pairs with
 * mismatched outcome lists and pairs where KL(omega || q) is not finite
 * (some omega_i > 0 where q_i = 0).
 */
GapBound utility_gap_bound(const OutcomeDistribution& dist_omega,
                           const OutcomeDistribution& dist_q,
                           const ProspectParams& params);

}  // namespace hl::prospect
