#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hl/humanline.hpp"
#include "hl/policy.hpp"

namespace hl::objectives {

// ============================================================================
// Configuration and shared types
// ============================================================================

enum class Objective { dpo, kto, grpo };

/** Loss hyperparameters. beta is the preference temperature for DPO/KTO and
 *  the KL coefficient for GRPO. */
struct LossConfig {
  Objective objective = Objective::dpo;
  double beta = 0.1;
  double desirable_weight = 1.0;    // KTO lambda_D
  double undesirable_weight = 1.0;  // KTO lambda_U
  double clip_epsilon = 0.15;       // GRPO surrogate clip radius
  bool length_normalized = false;
  bool pin_baseline_to_init = false;  // GRPO KL baseline: initial policy instead of reference
};

void validate_loss_config(const LossConfig& cfg);

/** Optional per-sequence detach masks (humanline sampling mode); empty inner
 *  vector = nothing detached for that sequence. */
using DetachMask = std::vector<std::uint8_t>;

/** One group of G outputs for a shared context. Rewards are raw scores;
 *  advantages must be filled (group_advantages) before grpo_loss. */
struct Group {
  std::vector<int> context;
  std::vector<policy::Sequence> outputs;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

/** Labeled example for KTO. */
struct KtoExample {
  policy::Sequence seq;
  bool desirable = true;
};

// ============================================================================
// Sequence rewards
// ============================================================================

/**
 * Per-sequence surprisal reward: sum over tokens of the (humanline-treated)
 * log-ratio log pi_theta - log pi_ref.
 *
 * Clipping mode clamps each token's log-ratio to [log_eps_p, log_eps_r]
 * before summing; off and sampling modes sum raw values (sampling affects
 * gradients only, via detach masks).  With length_normalized, the sum is
 * divided by the number of tokens whose clipped log-ratio is nonzero
 * (at least 1).
 */
double sequence_reward(std::span<const double> policy_logps,
                       std::span<const double> reference_logps,
                       const humanline::HumanlineConfig& hl, bool length_normalized);

// ============================================================================
// DPO
// ============================================================================

struct DpoOutputs {
  double loss = 0.0;
  double chosen_reward = 0.0;    // detached diagnostic
  double rejected_reward = 0.0;  // detached diagnostic
};

/**
 * Paired preference loss -log sigmoid(beta * (r_w - r_l)) with r the sequence
 * rewards above.
 *
 * When tape is non-null, grad_scale * d(loss)/d(logits) is accumulated into
 * it.  Detach masks, when supplied, zero the gradient of the masked tokens
 * without changing the loss value (humanline sampling semantics).
 */
DpoOutputs dpo_loss(const policy::Sequence& chosen, const policy::Sequence& rejected,
                    const policy::Policy& pol, const policy::Policy& ref,
                    const LossConfig& cfg, const humanline::HumanlineConfig& hl,
                    std::span<const std::uint8_t> chosen_mask = {},
                    std::span<const std::uint8_t> rejected_mask = {},
                    policy::GradTape* tape = nullptr, double grad_scale = 1.0);

// ============================================================================
// KTO
// ============================================================================

struct KtoOutputs {
  std::vector<double> losses;  // aligned with the batch
  double mean_loss = 0.0;
  double reward_shift = 0.0;  // batch-shared z0, always >= 0, no gradient
};

/**
 * Unpaired desirable/undesirable loss with a batch-shared reward shift.
 *
 * The shift z0 is the mean sequence reward of the mismatched (context,
 * foreign output) pairs, counting only nonzero rewards in the denominator
 * (min 1) and clamped to >= 0; no gradient flows through it or through the
 * mismatched sequences.  Humanline clipping applies to the mismatched-pair
 * tokens exactly as to the batch tokens.  Per example:
 * desirable  lambda_D * (1 - sigmoid(beta * (r - z0)))
 * undesirable lambda_U * (1 - sigmoid(beta * (z0 - r))).
 * Gradient accumulation covers d(mean loss)/d(logits).
 */
KtoOutputs kto_loss(std::span<const KtoExample> batch,
                    std::span<const policy::Sequence> mismatched,
                    const policy::Policy& pol, const policy::Policy& ref,
                    const LossConfig& cfg, const humanline::HumanlineConfig& hl,
                    std::span<const DetachMask> batch_masks = {},
                    policy::GradTape* tape = nullptr, double grad_scale = 1.0);

/** kto_loss with the shift supplied directly instead of computed from
 *  mismatched pairs.  Because the shift carries no gradient, this is the
 *  exact function the analytic gradient differentiates; finite-difference
 *  checks must go through here with a fixed shift. */
KtoOutputs kto_loss_with_shift(std::span<const KtoExample> batch, double reward_shift,
                               const policy::Policy& pol, const policy::Policy& ref,
                               const LossConfig& cfg, const humanline::HumanlineConfig& hl,
                               std::span<const DetachMask> batch_masks = {},
                               policy::GradTape* tape = nullptr, double grad_scale = 1.0);

/** The batch-shared KTO shift on its own: mean of the nonzero mismatched-pair
 *  sequence rewards (denominator at least 1), clamped to >= 0. */
double kto_reward_shift(std::span<const policy::Sequence> mismatched, const policy::Policy& pol,
                        const policy::Policy& ref, const LossConfig& cfg,
                        const humanline::HumanlineConfig& hl);

// ============================================================================
// GRPO
// ============================================================================

/** Standardized advantages (R - mean) / population-std. G must be >= 2.
 *  A std below 1e-8 yields all zeros; a distinct G=2 pair yields exactly
 *  (+1, -1) up to order. */
std::vector<double> group_advantages(std::span<const double> rewards);

struct GrpoOutputs {
  double loss = 0.0;
  double mean_kl = 0.0;      // per-token KL estimate, averaged over tokens
  double mean_ratio = 0.0;   // diagnostic
  double clipped_fraction = 0.0;
  std::size_t token_count = 0;
};

/**
 * Clipped-surrogate group loss with a per-token KL penalty, averaged over all
 * tokens of the group (token-mean normalization rather than per-sequence).
 *
 * Per token: -min(r*A, clip(r, 1-eps, 1+eps)*A) + beta * (exp(d) - d - 1)
 * with r = exp(log-ratio vs the reference), the log-ratio clamped first in
 * humanline clipping mode, and d = log pi_0 - log pi_theta computed from raw
 * log-probs (the KL path is never humanline-clipped).  Detach masks zero the
 * whole token's gradient, value unchanged.
 */
GrpoOutputs grpo_loss(const Group& group, const policy::Policy& pol,
                      const policy::Policy& ref, const policy::Policy& base,
                      const LossConfig& cfg, const humanline::HumanlineConfig& hl,
                      std::span<const DetachMask> output_masks = {},
                      policy::GradTape* tape = nullptr, double grad_scale = 1.0);

// ============================================================================
// Shared numeric helpers
// ============================================================================

/** Numerically stable logistic sigmoid. */
double sigmoid(double x);

/** Numerically stable -log sigmoid(x) = softplus(-x). */
double neg_log_sigmoid(double x);

}  // namespace hl::objectives
