#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hl/policy.hpp"
#include "hl/rng.hpp"

namespace hl::humanline {

// ============================================================================
// Configuration
// ============================================================================

/** How the policy/reference ratio path is treated inside a loss. */
enum class Mode {
  off,       // raw log-ratios, no masking
  clipping,  // clamp per-token log-ratios to [log_eps_p, log_eps_r]
  sampling,  // keep raw values; stochastically detach out-of-band tokens
};

/**
 * Humanline knobs shared by all objectives.
 *
 * k is the reference-sync period in optimizer steps (k <= 0 disables
 * syncing).  The four Beta shapes drive sampling mode; clip_limit_beta_params
 * derives shapes that concentrate the thresholds at fixed ratio limits.
 */
struct HumanlineConfig {
  Mode mode = Mode::off;
  double log_eps_p = -1.5;  // lower clip bound on log(pi/ref)
  double log_eps_r = 1.5;   // upper clip bound on log(pi/ref)
  long long k = 0;
  double gamma_p = 1.0;
  double beta_p = 1.0;
  double gamma_r = 1.0;
  double beta_r = 1.0;
};

/** Finite per-context ratio bounds: ratio_cap dominates pi/ref over the
 *  vocabulary, inverse_cap dominates ref/pi. Both are >= 1 by construction
 *  (the distributions share total mass). */
struct RatioBounds {
  double ratio_cap = 1.0;    // M_P
  double inverse_cap = 1.0;  // M_R
};

// ============================================================================
// Bounds
// ============================================================================

/** Exact vocabulary enumeration of max pi/ref and max ref/pi at one context
 *  state, inflated by a 1e-6 relative slack so the bound is strict. */
RatioBounds compute_ratio_bounds(const policy::Policy& pol, const policy::Policy& ref,
                                 std::size_t state);

/** Elementwise max of compute_ratio_bounds over several states, for one bound
 *  pair that dominates a whole sequence. */
RatioBounds sequence_ratio_bounds(const policy::Policy& pol, const policy::Policy& ref,
                                  std::span<const std::size_t> states);

// ============================================================================
// Clipping and sampling
// ============================================================================

/** Clamp of one log-ratio to [log_eps_p, log_eps_r]. */
double clip_log_ratio(double log_ratio, const HumanlineConfig& cfg);

/** Vector form; output order matches input. Idempotent. */
std::vector<double> humanline_clip(std::span<const double> log_ratios,
                                   const HumanlineConfig& cfg);

/** One-sided rejection predicate: a token with the given probability ratio is
 *  rejected against bound m and Beta draw b iff ratio < m * b (strict, so a
 *  ratio exactly at the bound is always kept). */
inline bool rejects(double ratio, double m, double b) { return ratio < m * b; }

/**
 * Stochastic detach mask for one sequence of per-token log-ratios.
 *
 * Per token, fresh draws B_P ~ Beta(gamma_p, beta_p) (lower side, taken from
 * stream_lower) and B_R ~ Beta(gamma_r, beta_r) (upper side, stream_upper)
 * are tested with the strict predicate above; mask[t] = 1 marks the token as
 * detached (zero gradient downstream).  Tokens stay in the sequence either
 * way.  Rejects non-finite log-ratios and non-dominating bounds.
 */
std::vector<std::uint8_t> humanline_sample_mask(std::span<const double> log_ratios,
                                                const RatioBounds& bounds,
                                                const HumanlineConfig& cfg,
                                                rng::Stream& stream_lower,
                                                rng::Stream& stream_upper);

// ============================================================================
// Concentration construction
// ============================================================================

/** Beta shapes returned by clip_limit_beta_params. */
struct ClipLimitShapes {
  double gamma_p = 1.0;
  double beta_p = 1.0;
  double gamma_r = 1.0;
  double beta_r = 1.0;
};

/**
 * Beta shapes whose rejection thresholds concentrate, as k grows, at fixed
 * ratio limits: the lower-side threshold M_P * B_P at eps_p and the
 * upper-side threshold at 1/eps_r, making sampling converge to hard clipping
 * to [eps_p, eps_r].
 *
 * Closed forms: B_P ~ Beta(k*eps_p/M_P, k*(1 - eps_p/M_P)) has mean eps_p/M_P
 * and variance mean*(1-mean)/(k+1); the upper side mirrors with mean
 * 1/(eps_r*M_R).  Requires eps_p < M_P and eps_r > 1/M_R (otherwise the limit
 * lies outside the representable threshold range) and k > 0.
 */
ClipLimitShapes clip_limit_beta_params(double k, double eps_p, double eps_r,
                                       const RatioBounds& bounds);

// ============================================================================
// Sync schedule
// ============================================================================

/** True when the reference should be refreshed at this optimizer step (steps
 *  are 1-based; fires at multiples of k; k <= 0 never fires). */
bool sync_due(long long step, long long k);

}  // namespace hl::humanline
