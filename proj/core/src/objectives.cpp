#include "hl/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hl::objectives {

using humanline::HumanlineConfig;
using humanline::Mode;
using policy::GradTape;
using policy::Policy;
using policy::Sequence;

void validate_loss_config(const LossConfig& cfg) {
  if (!(cfg.beta > 0.0)) throw std::invalid_argument("LossConfig: beta must be > 0");
  if (!(cfg.desirable_weight > 0.0) || !(cfg.undesirable_weight > 0.0)) {
    throw std::invalid_argument("LossConfig: KTO weights must be > 0");
  }
  if (!(cfg.clip_epsilon > 0.0)) {
    throw std::invalid_argument("LossConfig: clip epsilon must be > 0");
  }
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double neg_log_sigmoid(double x) {
  // softplus(-x), branch chosen to avoid exp overflow
  if (x >= 0.0) return std::log1p(std::exp(-x));
  return -x + std::log1p(std::exp(x));
}

// ============================================================================
// Sequence rewards
// ============================================================================

namespace {

/** Value and per-token derivative of the sequence reward. The derivative with
 *  respect to a token's policy log-prob is 1/norm inside the clip band, 0
 *  outside; detached tokens get 0 regardless. */
struct SeqReward {
  double value = 0.0;
  std::vector<double> dvalue_dlogp;
};

SeqReward seq_reward_parts(std::span<const double> pol_lp, std::span<const double> ref_lp,
                           const HumanlineConfig& hl, bool length_normalized,
                           std::span<const std::uint8_t> detach_mask) {
  if (pol_lp.size() != ref_lp.size()) {
    throw std::invalid_argument("sequence_reward: per-token vectors must align");
  }
  if (!detach_mask.empty() && detach_mask.size() != pol_lp.size()) {
    throw std::invalid_argument("sequence_reward: detach mask length mismatch");
  }
  const bool clipping = hl.mode == Mode::clipping;

  SeqReward out;
  out.dvalue_dlogp.assign(pol_lp.size(), 0.0);
  double sum = 0.0;
  std::size_t nonzero = 0;
  for (std::size_t t = 0; t < pol_lp.size(); ++t) {
    const double d = pol_lp[t] - ref_lp[t];
    double c = d;
    double dc = 1.0;
    if (clipping) {
      c = std::clamp(d, hl.log_eps_p, hl.log_eps_r);
      dc = (d >= hl.log_eps_p && d <= hl.log_eps_r) ? 1.0 : 0.0;
    }
    sum += c;
    if (c != 0.0) ++nonzero;
    if (!detach_mask.empty() && detach_mask[t]) dc = 0.0;
    out.dvalue_dlogp[t] = dc;
  }

  double norm = 1.0;
  if (length_normalized) {
    // The token count is a step function of the parameters; it is treated as
    // a constant in the gradient, matching autograd through an integer count.
    norm = static_cast<double>(std::max<std::size_t>(nonzero, 1));
  }
  out.value = sum / norm;
  for (double& g : out.dvalue_dlogp) g /= norm;
  return out;
}

}  // namespace

double sequence_reward(std::span<const double> policy_logps,
                       std::span<const double> reference_logps,
                       const HumanlineConfig& hl, bool length_normalized) {
  return seq_reward_parts(policy_logps, reference_logps, hl, length_normalized, {}).value;
}

// ============================================================================
// DPO
// ============================================================================

DpoOutputs dpo_loss(const Sequence& chosen, const Sequence& rejected, const Policy& pol,
                    const Policy& ref, const LossConfig& cfg, const HumanlineConfig& hl,
                    std::span<const std::uint8_t> chosen_mask,
                    std::span<const std::uint8_t> rejected_mask, GradTape* tape,
                    double grad_scale) {
  validate_loss_config(cfg);
  if (chosen.output == rejected.output && chosen.context == rejected.context) {
    throw std::invalid_argument("dpo_loss: chosen and rejected must differ");
  }

  const auto lp_w = policy::log_prob(pol, chosen);
  const auto lp_l = policy::log_prob(pol, rejected);
  const auto rp_w = policy::log_prob(ref, chosen);
  const auto rp_l = policy::log_prob(ref, rejected);

  const SeqReward r_w = seq_reward_parts(lp_w, rp_w, hl, cfg.length_normalized, chosen_mask);
  const SeqReward r_l = seq_reward_parts(lp_l, rp_l, hl, cfg.length_normalized, rejected_mask);

  const double u = cfg.beta * (r_w.value - r_l.value);

  DpoOutputs out;
  out.loss = neg_log_sigmoid(u);
  out.chosen_reward = cfg.beta * r_w.value;
  out.rejected_reward = cfg.beta * r_l.value;

  if (tape != nullptr) {
    // d(-log sigmoid(u))/du = sigmoid(u) - 1
    const double dl_du = sigmoid(u) - 1.0;
    std::vector<double> w(lp_w.size());
    for (std::size_t t = 0; t < w.size(); ++t) {
      w[t] = grad_scale * dl_du * cfg.beta * r_w.dvalue_dlogp[t];
    }
    policy::accumulate_log_prob_grad(pol, chosen, w, {}, *tape);
    std::vector<double> l(lp_l.size());
    for (std::size_t t = 0; t < l.size(); ++t) {
      l[t] = grad_scale * -dl_du * cfg.beta * r_l.dvalue_dlogp[t];
    }
    policy::accumulate_log_prob_grad(pol, rejected, l, {}, *tape);
  }
  return out;
}

// ============================================================================
// KTO
// ============================================================================

double kto_reward_shift(std::span<const Sequence> mismatched, const Policy& pol,
                        const Policy& ref, const LossConfig& cfg, const HumanlineConfig& hl) {
  if (mismatched.empty()) {
    throw std::invalid_argument("kto_loss: need at least one mismatched pair for the shift");
  }
  // Mean of the nonzero mismatched-pair rewards (denominator at least 1),
  // clamped to >= 0. Frozen: no gradient.
  double shift_sum = 0.0;
  std::size_t shift_nonzero = 0;
  for (const Sequence& seq : mismatched) {
    const auto lp = policy::log_prob(pol, seq);
    const auto rp = policy::log_prob(ref, seq);
    const double r = sequence_reward(lp, rp, hl, cfg.length_normalized);
    shift_sum += r;
    if (r != 0.0) ++shift_nonzero;
  }
  return std::max(0.0, shift_sum / static_cast<double>(std::max<std::size_t>(shift_nonzero, 1)));
}

KtoOutputs kto_loss(std::span<const KtoExample> batch, std::span<const Sequence> mismatched,
                    const Policy& pol, const Policy& ref, const LossConfig& cfg,
                    const HumanlineConfig& hl, std::span<const DetachMask> batch_masks,
                    GradTape* tape, double grad_scale) {
  const double z0 = kto_reward_shift(mismatched, pol, ref, cfg, hl);
  return kto_loss_with_shift(batch, z0, pol, ref, cfg, hl, batch_masks, tape, grad_scale);
}

KtoOutputs kto_loss_with_shift(std::span<const KtoExample> batch, double z0, const Policy& pol,
                               const Policy& ref, const LossConfig& cfg,
                               const HumanlineConfig& hl, std::span<const DetachMask> batch_masks,
                               GradTape* tape, double grad_scale) {
  validate_loss_config(cfg);
  if (batch.empty()) throw std::invalid_argument("kto_loss: empty batch");
  if (!batch_masks.empty() && batch_masks.size() != batch.size()) {
    throw std::invalid_argument("kto_loss: batch mask count mismatch");
  }
  if (!(z0 >= 0.0)) throw std::invalid_argument("kto_loss: reward shift must be >= 0");

  KtoOutputs out;
  out.reward_shift = z0;
  out.losses.reserve(batch.size());
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const KtoExample& ex = batch[i];
    const auto lp = policy::log_prob(pol, ex.seq);
    const auto rp = policy::log_prob(ref, ex.seq);
    std::span<const std::uint8_t> mask =
        batch_masks.empty() ? std::span<const std::uint8_t>{} : std::span(batch_masks[i]);
    const SeqReward r = seq_reward_parts(lp, rp, hl, cfg.length_normalized, mask);

    double loss, dl_dr;
    if (ex.desirable) {
      const double u = cfg.beta * (r.value - z0);
      const double s = sigmoid(u);
      loss = cfg.desirable_weight * (1.0 - s);
      dl_dr = cfg.desirable_weight * -s * (1.0 - s) * cfg.beta;
    } else {
      const double u = cfg.beta * (z0 - r.value);
      const double s = sigmoid(u);
      loss = cfg.undesirable_weight * (1.0 - s);
      dl_dr = cfg.undesirable_weight * s * (1.0 - s) * cfg.beta;
    }
    out.losses.push_back(loss);
    out.mean_loss += loss * inv_b;

    if (tape != nullptr) {
      std::vector<double> w(lp.size());
      for (std::size_t t = 0; t < w.size(); ++t) {
        w[t] = grad_scale * inv_b * dl_dr * r.dvalue_dlogp[t];
      }
      policy::accumulate_log_prob_grad(pol, ex.seq, w, {}, *tape);
    }
  }
  return out;
}

// ============================================================================
// GRPO
// ============================================================================

std::vector<double> group_advantages(std::span<const double> rewards) {
  const std::size_t g = rewards.size();
  if (g < 2) throw std::invalid_argument("group_advantages: need at least 2 rewards");
  constexpr double kStdFloor = 1e-8;

  if (g == 2) {
    // Algebraically, deviations are +-|gap|/2 and the population std is
    // |gap|/2, so standardization is exactly the sign of the gap. Evaluating
    // that reduced form keeps the +-1 identity exact in floating point.
    const double gap = rewards[0] - rewards[1];
    if (std::abs(gap) / 2.0 < kStdFloor) return {0.0, 0.0};
    return gap > 0.0 ? std::vector<double>{1.0, -1.0} : std::vector<double>{-1.0, 1.0};
  }

  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(g);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(g);
  const double sd = std::sqrt(var);
  std::vector<double> adv(g, 0.0);
  if (sd < kStdFloor) return adv;
  for (std::size_t i = 0; i < g; ++i) adv[i] = (rewards[i] - mean) / sd;
  return adv;
}

GrpoOutputs grpo_loss(const Group& group, const Policy& pol, const Policy& ref,
                      const Policy& base, const LossConfig& cfg, const HumanlineConfig& hl,
                      std::span<const DetachMask> output_masks, GradTape* tape,
                      double grad_scale) {
  validate_loss_config(cfg);
  if (group.outputs.empty()) throw std::invalid_argument("grpo_loss: empty group");
  if (group.advantages.size() != group.outputs.size()) {
    throw std::invalid_argument("grpo_loss: advantages missing or misaligned");
  }
  if (!output_masks.empty() && output_masks.size() != group.outputs.size()) {
    throw std::invalid_argument("grpo_loss: mask count mismatch");
  }

  const bool clipping = hl.mode == Mode::clipping;
  const double lo = 1.0 - cfg.clip_epsilon;
  const double hi = 1.0 + cfg.clip_epsilon;

  std::size_t total_tokens = 0;
  for (const Sequence& y : group.outputs) total_tokens += y.output.size();

  GrpoOutputs out;
  out.token_count = total_tokens;
  const double inv_t = 1.0 / static_cast<double>(total_tokens);
  std::size_t clipped = 0;

  for (std::size_t i = 0; i < group.outputs.size(); ++i) {
    Sequence seq = group.outputs[i];
    seq.context = group.context;
    const double adv = group.advantages[i];
    const auto lp = policy::log_prob(pol, seq);
    const auto rp = policy::log_prob(ref, seq);
    const auto bp = policy::log_prob(base, seq);
    std::span<const std::uint8_t> mask =
        output_masks.empty() ? std::span<const std::uint8_t>{} : std::span(output_masks[i]);

    std::vector<double> w(lp.size(), 0.0);
    for (std::size_t t = 0; t < lp.size(); ++t) {
      const double d = lp[t] - rp[t];
      double c = d;
      double dc = 1.0;
      if (clipping) {
        c = std::clamp(d, hl.log_eps_p, hl.log_eps_r);
        dc = (d >= hl.log_eps_p && d <= hl.log_eps_r) ? 1.0 : 0.0;
      }
      const double ratio = std::exp(c);
      const double unclipped = ratio * adv;
      const double ratio_clipped = std::clamp(ratio, lo, hi);
      const double clipped_term = ratio_clipped * adv;

      double surrogate, dsur_dlogp;
      if (unclipped <= clipped_term) {
        surrogate = -unclipped;
        dsur_dlogp = -adv * ratio * dc;
      } else {
        surrogate = -clipped_term;
        const double dclip = (ratio >= lo && ratio <= hi) ? 1.0 : 0.0;
        dsur_dlogp = -adv * dclip * ratio * dc;
      }
      if (ratio < lo || ratio > hi) ++clipped;

      const double delta = bp[t] - lp[t];
      const double kl = std::exp(delta) - delta - 1.0;
      const double dkl_dlogp = 1.0 - std::exp(delta);

      out.loss += (surrogate + cfg.beta * kl) * inv_t;
      out.mean_kl += kl * inv_t;
      out.mean_ratio += ratio * inv_t;

      double g = (dsur_dlogp + cfg.beta * dkl_dlogp) * inv_t;
      if (!mask.empty() && mask[t]) g = 0.0;  // detached token: value kept, gradient dropped
      w[t] = grad_scale * g;
    }
    if (tape != nullptr) {
      policy::accumulate_log_prob_grad(pol, seq, w, {}, *tape);
    }
  }
  out.clipped_fraction = static_cast<double>(clipped) / static_cast<double>(total_tokens);
  return out;
}

}  // namespace hl::objectives
