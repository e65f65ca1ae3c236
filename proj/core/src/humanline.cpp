#include "hl/humanline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hl::humanline {

namespace {

constexpr double kBoundSlack = 1e-6;

void validate_clip_range(const HumanlineConfig& cfg) {
  if (!(cfg.log_eps_p <= cfg.log_eps_r)) {
    throw std::invalid_argument("humanline: log_eps_p must not exceed log_eps_r");
  }
  if (!std::isfinite(cfg.log_eps_p) || !std::isfinite(cfg.log_eps_r)) {
    throw std::invalid_argument("humanline: clip bounds must be finite");
  }
}

}  // namespace

// ============================================================================
// Bounds
// ============================================================================

RatioBounds compute_ratio_bounds(const policy::Policy& pol, const policy::Policy& ref,
                                 std::size_t state) {
  const int v = pol.vocab().size;
  if (ref.vocab().size != v || ref.order() != pol.order()) {
    throw std::invalid_argument("compute_ratio_bounds: policy/reference shape mismatch");
  }
  std::vector<double> lp_pol(static_cast<std::size_t>(v));
  std::vector<double> lp_ref(static_cast<std::size_t>(v));
  pol.row_log_probs(state, lp_pol);
  ref.row_log_probs(state, lp_ref);

  double max_diff = -std::numeric_limits<double>::infinity();
  double min_diff = std::numeric_limits<double>::infinity();
  for (int i = 0; i < v; ++i) {
    const double d = lp_pol[i] - lp_ref[i];
    max_diff = std::max(max_diff, d);
    min_diff = std::min(min_diff, d);
  }
  RatioBounds b;
  b.ratio_cap = std::exp(max_diff) * (1.0 + kBoundSlack);
  b.inverse_cap = std::exp(-min_diff) * (1.0 + kBoundSlack);
  return b;
}

RatioBounds sequence_ratio_bounds(const policy::Policy& pol, const policy::Policy& ref,
                                  std::span<const std::size_t> states) {
  if (states.empty()) {
    throw std::invalid_argument("sequence_ratio_bounds: need at least one state");
  }
  RatioBounds out{0.0, 0.0};
  for (std::size_t s : states) {
    const RatioBounds b = compute_ratio_bounds(pol, ref, s);
    out.ratio_cap = std::max(out.ratio_cap, b.ratio_cap);
    out.inverse_cap = std::max(out.inverse_cap, b.inverse_cap);
  }
  return out;
}

// ============================================================================
// Clipping and sampling
// ============================================================================

double clip_log_ratio(double log_ratio, const HumanlineConfig& cfg) {
  validate_clip_range(cfg);
  if (!std::isfinite(log_ratio)) {
    throw std::invalid_argument("humanline_clip: non-finite log-ratio");
  }
  return std::clamp(log_ratio, cfg.log_eps_p, cfg.log_eps_r);
}

std::vector<double> humanline_clip(std::span<const double> log_ratios,
                                   const HumanlineConfig& cfg) {
  validate_clip_range(cfg);
  std::vector<double> out;
  out.reserve(log_ratios.size());
  for (double r : log_ratios) out.push_back(clip_log_ratio(r, cfg));
  return out;
}

std::vector<std::uint8_t> humanline_sample_mask(std::span<const double> log_ratios,
                                                const RatioBounds& bounds,
                                                const HumanlineConfig& cfg,
                                                rng::Stream& stream_lower,
                                                rng::Stream& stream_upper) {
  if (!(bounds.ratio_cap >= 1.0) || !(bounds.inverse_cap >= 1.0)) {
    throw std::invalid_argument("humanline_sample_mask: bounds must be >= 1");
  }
  std::vector<std::uint8_t> mask;
  mask.reserve(log_ratios.size());
  for (double lr : log_ratios) {
    if (!std::isfinite(lr)) {
      throw std::invalid_argument("humanline_sample_mask: non-finite log-ratio");
    }
    const double ratio = std::exp(lr);
    if (ratio > bounds.ratio_cap) {
      throw std::invalid_argument("humanline_sample_mask: ratio exceeds stated bound");
    }
    if (1.0 / ratio > bounds.inverse_cap) {
      throw std::invalid_argument("humanline_sample_mask: inverse ratio exceeds stated bound");
    }
    const double b_p = stream_lower.beta(cfg.gamma_p, cfg.beta_p);
    const double b_r = stream_upper.beta(cfg.gamma_r, cfg.beta_r);
    const bool drop = rejects(ratio, bounds.ratio_cap, b_p) ||
                      rejects(1.0 / ratio, bounds.inverse_cap, b_r);
    mask.push_back(drop ? 1 : 0);
  }
  return mask;
}

// ============================================================================
// Concentration construction
// ============================================================================

ClipLimitShapes clip_limit_beta_params(double k, double eps_p, double eps_r,
                                       const RatioBounds& bounds) {
  if (!(k > 0.0)) throw std::invalid_argument("clip_limit_beta_params: k must be positive");
  if (!(eps_p > 0.0) || !(eps_r > 0.0)) {
    throw std::invalid_argument("clip_limit_beta_params: ratio limits must be positive");
  }
  if (!(eps_p < bounds.ratio_cap)) {
    throw std::invalid_argument("clip_limit_beta_params: requires eps_p < ratio_cap");
  }
  if (!(eps_r > 1.0 / bounds.inverse_cap)) {
    throw std::invalid_argument("clip_limit_beta_params: requires eps_r > 1/inverse_cap");
  }
  ClipLimitShapes s;
  const double mean_p = eps_p / bounds.ratio_cap;
  const double mean_r = 1.0 / (eps_r * bounds.inverse_cap);
  s.gamma_p = k * mean_p;
  s.beta_p = k * (1.0 - mean_p);
  s.gamma_r = k * mean_r;
  s.beta_r = k * (1.0 - mean_r);
  return s;
}

// ============================================================================
// Sync schedule
// ============================================================================

bool sync_due(long long step, long long k) {
  if (k <= 0) return false;
  if (step < 1) throw std::invalid_argument("sync_due: steps are 1-based");
  return step % k == 0;
}

}  // namespace hl::humanline
