#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hl/data.hpp"
#include "hl/humanline.hpp"
#include "hl/objectives.hpp"
#include "hl/policy.hpp"

namespace hl::trainer {

// ============================================================================
// Configuration
// ============================================================================

/** AdamW-style optimizer settings with linear warmup. */
struct OptimizerConfig {
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-5;
  double weight_decay = 1e-2;
  double warmup_frac = 0.1;   // fraction of total steps ramped linearly
  double max_grad_norm = 1.0;
};

void validate_optimizer(const OptimizerConfig& cfg);

/** Loop shape shared by offline and online runs. */
struct LoopConfig {
  long long steps = 200;
  std::size_t batch_size = 16;  // preference records per step
  // Online only: fresh round every sample_period steps from round_contexts
  // contexts (1 = fully online; large values = increasingly off-policy).
  long long sample_period = 1;
  std::size_t round_contexts = 64;
  long long trust_region_period = 0;  // post-update reference sync; 0 = off
  int eval_samples = 32;              // per-step true-reward sample count
  double eval_temperature = 0.7;
  double eval_top_p = 0.95;
  // Which contexts the per-step mean_reward metric samples: "eval" (held-out,
  // the preference-experiment default) or "train" (the contexts being trained
  // on, the usual curve for reward-maximizing RL runs).
  std::string measure_split = "eval";
  int collapse_window = 50;  // consecutive below-initial steps before abort
  std::string variant_label = "offline";
};

// ============================================================================
// State
// ============================================================================

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long long t = 0;
};

/** Everything one training run owns. The reference and initial policies are
 *  written only by sync operations, never by gradient updates. */
struct TrainState {
  policy::Policy pol;
  policy::Policy reference;
  policy::Policy initial;
  AdamState opt;

  OptimizerConfig opt_cfg;
  objectives::LossConfig loss_cfg;
  humanline::HumanlineConfig hl;
  LoopConfig loop;
  data::TaskSpec task;
  data::GenParams gen;
  std::uint64_t master_seed = 0;

  long long step = 0;
  long long round = 0;
  std::uint64_t sequences_consumed = 0;

  double initial_reward = 0.0;
  int below_initial_streak = 0;
  std::size_t empty_round_resamples = 0;
};

TrainState make_state(const policy::Policy& start, const OptimizerConfig& opt,
                      const objectives::LossConfig& loss,
                      const humanline::HumanlineConfig& hl, const LoopConfig& loop,
                      const data::TaskSpec& task, const data::GenParams& gen,
                      std::uint64_t master_seed);

// ============================================================================
// Failure reporting
// ============================================================================

/** Raised when training must stop: non-finite loss/gradient, sustained reward
 *  collapse, or a round that stays empty after bounded resampling. The
 *  message carries step-level diagnostics. */
class TrainAbort : public std::runtime_error {
 public:
  enum class Kind { non_finite, collapse, empty_rounds };
  TrainAbort(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// ============================================================================
// Steps and runs
// ============================================================================

struct StepMetrics {
  long long step = 0;
  double loss = 0.0;
  double mean_reward = 0.0;
  double grad_norm = 0.0;  // pre-clip global norm
  double kl = 0.0;         // mean per-token KL estimate vs the reference
  bool synced = false;
};

/**
 * One optimizer step on a batch of preference records.
 *
 * Order: loss + gradient accumulation, non-finite guard, global-norm clip,
 * humanline reference sync when due (copying the PRE-update policy), then the
 * AdamW update, then the trust-region ablation sync (post-update) when
 * enabled.  mean_reward is left at 0; run loops fill it.
 */
StepMetrics train_step(TrainState& state, std::span<const data::PreferenceRecord> batch);

/** Mean true reward of samples drawn from pol on the given contexts,
 *  deterministic in (master_seed, stream_instance). */
double policy_mean_reward(const policy::Policy& pol, const data::TaskSpec& task,
                          std::span<const std::vector<int>> contexts, int samples,
                          double temperature, double top_p, std::uint64_t master_seed,
                          std::uint64_t stream_instance);

/**
 * Offline run: shuffled epochs over a fixed record set; the reference stays
 * at the initial policy unless humanline syncing or the trust-region ablation
 * rewrites it.  Per-step metrics go to history and, when metrics_out is
 * non-null, to one JSONL row per step with keys
 * {step, loss, mean_reward, grad_norm, kl, synced, variant}.
 */
std::vector<StepMetrics> run_offline(TrainState& state,
                                     std::span<const data::PreferenceRecord> records,
                                     std::ostream* metrics_out = nullptr);

/**
 * Online run: every sample_period steps draws a fresh buffer from the CURRENT
 * policy via online_round on train-split contexts.  At each round boundary
 * the reference is synced to the policy (the sampling-time snapshot) unless
 * humanline syncing owns the schedule (hl.k >= 1).  Empty filtered rounds are
 * resampled with fresh contexts up to 16 times; after that the previous
 * round's buffer is reused, and only a first round with no buffer to fall
 * back on aborts.
 */
std::vector<StepMetrics> run_online(TrainState& state, std::ostream* metrics_out = nullptr);

// ============================================================================
// Internals exposed for tests
// ============================================================================

/** Global-norm clip in place; returns the pre-clip norm. */
double clip_gradient_norm(policy::GradTape& tape, double max_norm);

/** Learning rate at a 1-based step under linear warmup over total_steps. */
double lr_at_step(const OptimizerConfig& cfg, long long step, long long total_steps);

/** Post-update reference sync at the given period (trust-region style, for
 *  ablations against the pre-update humanline placement). No-op unless
 *  period >= 1 and the state's step is a multiple of it. */
void trust_region_sync(TrainState& state, long long period);

}  // namespace hl::trainer
