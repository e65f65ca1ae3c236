#include "hl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string_view>

#include <nlohmann/json.hpp>

#include "hl/rng.hpp"

namespace hl::trainer {

namespace {

bool verbose_logging() {
  const char* v = std::getenv("HL_LOG");
  return v != nullptr && *v != '\0' && std::string_view(v) != "0";
}

void validate_loop(const LoopConfig& loop) {
  if (loop.steps < 1) throw std::invalid_argument("loop: steps must be >= 1");
  if (loop.batch_size < 1) throw std::invalid_argument("loop: batch_size must be >= 1");
  if (loop.sample_period < 1) throw std::invalid_argument("loop: sample_period must be >= 1");
  if (loop.round_contexts < 1) throw std::invalid_argument("loop: round_contexts must be >= 1");
  if (loop.trust_region_period < 0)
    throw std::invalid_argument("loop: trust_region_period must be >= 0");
  if (loop.eval_samples < 1) throw std::invalid_argument("loop: eval_samples must be >= 1");
  if (!(loop.eval_temperature > 0.0))
    throw std::invalid_argument("loop: eval_temperature must be > 0");
  if (!(loop.eval_top_p > 0.0) || loop.eval_top_p > 1.0)
    throw std::invalid_argument("loop: eval_top_p must be in (0, 1]");
  if (loop.measure_split != "eval" && loop.measure_split != "train")
    throw std::invalid_argument("loop: measure_split must be \"eval\" or \"train\"");
  if (loop.collapse_window < 1)
    throw std::invalid_argument("loop: collapse_window must be >= 1");
}

/** Detach mask for one sequence under humanline sampling; empty otherwise. */
objectives::DetachMask draw_detach_mask(const TrainState& state, const policy::Sequence& seq,
                                        rng::Stream& lower, rng::Stream& upper) {
  if (state.hl.mode != humanline::Mode::sampling) return {};
  const auto pol_lp = policy::log_prob(state.pol, seq);
  const auto ref_lp = policy::log_prob(state.reference, seq);
  std::vector<double> log_ratios(pol_lp.size());
  for (std::size_t t = 0; t < pol_lp.size(); ++t) log_ratios[t] = pol_lp[t] - ref_lp[t];
  const auto states = policy::output_states(state.pol, seq);
  const auto bounds = humanline::sequence_ratio_bounds(state.pol, state.reference, states);
  return humanline::humanline_sample_mask(log_ratios, bounds, state.hl, lower, upper);
}

/** Token-mean of the KL estimator exp(d) - d - 1, d = log ref - log pol. */
double kl_estimate(const policy::Policy& pol, const policy::Policy& ref,
                   std::span<const policy::Sequence> seqs) {
  double sum = 0.0;
  std::size_t tokens = 0;
  for (const auto& seq : seqs) {
    const auto pol_lp = policy::log_prob(pol, seq);
    const auto ref_lp = policy::log_prob(ref, seq);
    for (std::size_t t = 0; t < pol_lp.size(); ++t) {
      const double d = ref_lp[t] - pol_lp[t];
      sum += std::expm1(d) - d;
    }
    tokens += pol_lp.size();
  }
  return tokens == 0 ? 0.0 : sum / static_cast<double>(tokens);
}

struct BatchOutputs {
  double loss = 0.0;
  double kl = 0.0;
};

/** Loss and gradient accumulation for one batch, dispatched on objective.
 *  Detach-mask randomness is keyed to the step so reruns are bit-identical. */
BatchOutputs accumulate_batch(TrainState& state, std::span<const data::PreferenceRecord> batch,
                              long long step, policy::GradTape& tape) {
  rng::Stream lower(state.master_seed, rng::Purpose::beta_lower,
                    static_cast<std::uint64_t>(step));
  rng::Stream upper(state.master_seed, rng::Purpose::beta_upper,
                    static_cast<std::uint64_t>(step));

  BatchOutputs out;
  const std::size_t b = batch.size();

  switch (state.loss_cfg.objective) {
    case objectives::Objective::dpo: {
      const double inv_b = 1.0 / static_cast<double>(b);
      std::vector<policy::Sequence> seqs;
      seqs.reserve(2 * b);
      for (const auto& rec : batch) {
        policy::Sequence chosen{rec.x, rec.y_w};
        policy::Sequence rejected{rec.x, rec.y_l};
        const auto mask_w = draw_detach_mask(state, chosen, lower, upper);
        const auto mask_l = draw_detach_mask(state, rejected, lower, upper);
        const auto dpo = objectives::dpo_loss(chosen, rejected, state.pol, state.reference,
                                              state.loss_cfg, state.hl, mask_w, mask_l, &tape,
                                              inv_b);
        out.loss += dpo.loss * inv_b;
        seqs.push_back(std::move(chosen));
        seqs.push_back(std::move(rejected));
      }
      out.kl = kl_estimate(state.pol, state.reference, seqs);
      break;
    }
    case objectives::Objective::kto: {
      std::vector<objectives::KtoExample> examples;
      std::vector<policy::Sequence> mismatched;
      std::vector<objectives::DetachMask> masks;
      examples.reserve(2 * b);
      masks.reserve(2 * b);
      for (const auto& rec : batch) {
        examples.push_back({policy::Sequence{rec.x, rec.y_w}, true});
        examples.push_back({policy::Sequence{rec.x, rec.y_l}, false});
      }
      for (std::size_t i = 0; i < b; ++i) {
        // Foreign output for the shared reward shift; a singleton batch has
        // no foreign record, so its own rejected output stands in.
        const auto& donor = batch[(i + 1) % b];
        mismatched.push_back(policy::Sequence{batch[i].x, b > 1 ? donor.y_w : batch[i].y_l});
      }
      for (const auto& ex : examples)
        masks.push_back(draw_detach_mask(state, ex.seq, lower, upper));
      const auto kto = objectives::kto_loss(examples, mismatched, state.pol, state.reference,
                                            state.loss_cfg, state.hl, masks, &tape, 1.0);
      out.loss = kto.mean_loss;
      std::vector<policy::Sequence> seqs;
      seqs.reserve(examples.size());
      for (const auto& ex : examples) seqs.push_back(ex.seq);
      out.kl = kl_estimate(state.pol, state.reference, seqs);
      break;
    }
    case objectives::Objective::grpo: {
      const auto groups = data::offline_groups(batch);
      const policy::Policy& base =
          state.loss_cfg.pin_baseline_to_init ? state.initial : state.reference;
      std::size_t total_tokens = 0;
      std::vector<std::size_t> group_tokens(groups.size(), 0);
      for (std::size_t g = 0; g < groups.size(); ++g) {
        for (const auto& seq : groups[g].outputs) group_tokens[g] += seq.output.size();
        total_tokens += group_tokens[g];
      }
      for (std::size_t g = 0; g < groups.size(); ++g) {
        std::vector<objectives::DetachMask> masks;
        masks.reserve(groups[g].outputs.size());
        for (const auto& seq : groups[g].outputs)
          masks.push_back(draw_detach_mask(state, seq, lower, upper));
        const double weight =
            static_cast<double>(group_tokens[g]) / static_cast<double>(total_tokens);
        const auto grpo = objectives::grpo_loss(groups[g], state.pol, state.reference, base,
                                                state.loss_cfg, state.hl, masks, &tape, weight);
        out.loss += grpo.loss * weight;
        out.kl += grpo.mean_kl * weight;
      }
      break;
    }
  }
  return out;
}

void adamw_apply(TrainState& state, const policy::GradTape& tape, double lr_t) {
  auto& opt = state.opt;
  const auto& cfg = state.opt_cfg;
  opt.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.t));
  auto logits = state.pol.mutable_logits();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double g = tape.grad[i];
    opt.m[i] = cfg.beta1 * opt.m[i] + (1.0 - cfg.beta1) * g;
    opt.v[i] = cfg.beta2 * opt.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = opt.m[i] / bc1;
    const double vhat = opt.v[i] / bc2;
    logits[i] -= lr_t * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * logits[i]);
  }
}

[[noreturn]] void abort_non_finite(const TrainState& state, long long step, double loss,
                                   const policy::GradTape& tape) {
  std::size_t bad = tape.grad.size();
  for (std::size_t i = 0; i < tape.grad.size(); ++i) {
    if (!std::isfinite(tape.grad[i])) {
      bad = i;
      break;
    }
  }
  std::ostringstream msg;
  msg << "non-finite training signal at step " << step << ": loss=" << loss;
  if (bad < tape.grad.size())
    msg << ", first bad gradient at flat index " << bad << " (value " << tape.grad[bad] << ")";
  msg << "; objective=" << static_cast<int>(state.loss_cfg.objective)
      << ", lr=" << state.opt_cfg.lr;
  throw TrainAbort(TrainAbort::Kind::non_finite, msg.str());
}

void emit_metrics_row(std::ostream& out, const StepMetrics& m, const std::string& variant) {
  nlohmann::ordered_json row;
  row["step"] = m.step;
  row["loss"] = m.loss;
  row["mean_reward"] = m.mean_reward;
  row["grad_norm"] = m.grad_norm;
  row["kl"] = m.kl;
  row["synced"] = m.synced;
  row["variant"] = variant;
  out << row.dump() << '\n';
}

/** The configured measurement split; falls back to the train contexts when
 *  "eval" is requested but the held-out split is empty (tiny tasks). */
std::vector<std::vector<int>> measurement_contexts(const data::TaskSpec& task,
                                                   const LoopConfig& loop) {
  auto split = data::context_split(task);
  if (loop.measure_split == "train" || split.eval.empty()) return std::move(split.train);
  return std::move(split.eval);
}

/** Per-step epilogue shared by both run loops: reward measurement, collapse
 *  accounting, metrics emission. */
void finish_step(TrainState& state, StepMetrics& m,
                 std::span<const std::vector<int>> reward_contexts,
                 std::vector<StepMetrics>& history, std::ostream* metrics_out) {
  m.mean_reward = policy_mean_reward(
      state.pol, state.task, reward_contexts, state.loop.eval_samples,
      state.loop.eval_temperature, state.loop.eval_top_p, state.master_seed,
      static_cast<std::uint64_t>(state.step));
  if (m.mean_reward < state.initial_reward) {
    state.below_initial_streak += 1;
  } else {
    state.below_initial_streak = 0;
  }
  history.push_back(m);
  if (metrics_out != nullptr) emit_metrics_row(*metrics_out, m, state.loop.variant_label);
  if (state.below_initial_streak >= state.loop.collapse_window) {
    std::ostringstream msg;
    msg << "reward collapse: mean reward below the initial policy's " << state.initial_reward
        << " for " << state.below_initial_streak << " consecutive steps (step " << state.step
        << ", current " << m.mean_reward << ")";
    throw TrainAbort(TrainAbort::Kind::collapse, msg.str());
  }
}

void measure_initial_reward(TrainState& state,
                            std::span<const std::vector<int>> reward_contexts) {
  state.initial_reward = policy_mean_reward(
      state.pol, state.task, reward_contexts, state.loop.eval_samples,
      state.loop.eval_temperature, state.loop.eval_top_p, state.master_seed, 0);
  state.below_initial_streak = 0;
}

}  // namespace

// ============================================================================
// Configuration and state
// ============================================================================

void validate_optimizer(const OptimizerConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("optimizer: lr must be > 0");
  if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0)
    throw std::invalid_argument("optimizer: beta1 must be in [0, 1)");
  if (cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
    throw std::invalid_argument("optimizer: beta2 must be in [0, 1)");
  if (!(cfg.eps > 0.0)) throw std::invalid_argument("optimizer: eps must be > 0");
  if (cfg.weight_decay < 0.0)
    throw std::invalid_argument("optimizer: weight_decay must be >= 0");
  if (cfg.warmup_frac < 0.0 || cfg.warmup_frac > 1.0)
    throw std::invalid_argument("optimizer: warmup_frac must be in [0, 1]");
  if (!(cfg.max_grad_norm > 0.0))
    throw std::invalid_argument("optimizer: max_grad_norm must be > 0");
}

TrainState make_state(const policy::Policy& start, const OptimizerConfig& opt,
                      const objectives::LossConfig& loss,
                      const humanline::HumanlineConfig& hl, const LoopConfig& loop,
                      const data::TaskSpec& task, const data::GenParams& gen,
                      std::uint64_t master_seed) {
  validate_optimizer(opt);
  objectives::validate_loss_config(loss);
  validate_loop(loop);
  data::validate_task(task);
  TrainState state{start, start, start, AdamState{}, opt,  loss, hl,
                   loop,  task,  gen,   master_seed, 0,    0,    0,
                   0.0,   0,     0};
  state.opt.m.assign(start.logits().size(), 0.0);
  state.opt.v.assign(start.logits().size(), 0.0);
  return state;
}

// ============================================================================
// Internals exposed for tests
// ============================================================================

double clip_gradient_norm(policy::GradTape& tape, double max_norm) {
  const double norm = std::sqrt(tape.squared_norm());
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& g : tape.grad) g *= scale;
  }
  return norm;
}

double lr_at_step(const OptimizerConfig& cfg, long long step, long long total_steps) {
  const long long warmup = std::llround(cfg.warmup_frac * static_cast<double>(total_steps));
  if (warmup <= 0 || step >= warmup) return cfg.lr;
  return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup);
}

void trust_region_sync(TrainState& state, long long period) {
  if (period < 1) return;
  if (state.step >= 1 && state.step % period == 0) state.reference.load_params(state.pol);
}

// ============================================================================
// Steps
// ============================================================================

StepMetrics train_step(TrainState& state, std::span<const data::PreferenceRecord> batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: batch must be non-empty");
  const long long step = state.step + 1;

  policy::GradTape tape(state.pol);
  const BatchOutputs batch_out = accumulate_batch(state, batch, step, tape);
  state.sequences_consumed += 2 * batch.size();

  bool finite = std::isfinite(batch_out.loss);
  if (finite) {
    for (const double g : tape.grad) {
      if (!std::isfinite(g)) {
        finite = false;
        break;
      }
    }
  }
  if (!finite) abort_non_finite(state, step, batch_out.loss, tape);

  const double grad_norm = clip_gradient_norm(tape, state.opt_cfg.max_grad_norm);

  // Humanline sync copies the PRE-update parameters, so the reference trails
  // the policy by exactly one optimizer update at every sync step.
  const bool synced = humanline::sync_due(step, state.hl.k);
  if (synced) state.reference.load_params(state.pol);

  const double lr_t = lr_at_step(state.opt_cfg, step, state.loop.steps);
  adamw_apply(state, tape, lr_t);
  state.step = step;

  trust_region_sync(state, state.loop.trust_region_period);

  StepMetrics m;
  m.step = step;
  m.loss = batch_out.loss;
  m.grad_norm = grad_norm;
  m.kl = batch_out.kl;
  m.synced = synced;
  return m;
}

double policy_mean_reward(const policy::Policy& pol, const data::TaskSpec& task,
                          std::span<const std::vector<int>> contexts, int samples,
                          double temperature, double top_p, std::uint64_t master_seed,
                          std::uint64_t stream_instance) {
  if (contexts.empty()) throw std::invalid_argument("policy_mean_reward: no contexts");
  rng::Stream stream(master_seed, rng::Purpose::eval, stream_instance);
  double sum = 0.0;
  for (int i = 0; i < samples; ++i) {
    const auto& ctx = contexts[static_cast<std::size_t>(i) % contexts.size()];
    const auto seq = policy::sample(pol, ctx, temperature, top_p, stream, task.max_len);
    sum += data::true_reward(task, ctx, seq.output);
  }
  return sum / static_cast<double>(samples);
}

// ============================================================================
// Run loops
// ============================================================================

std::vector<StepMetrics> run_offline(TrainState& state,
                                     std::span<const data::PreferenceRecord> records,
                                     std::ostream* metrics_out) {
  if (records.empty()) throw std::invalid_argument("run_offline: empty record set");
  const auto reward_contexts = measurement_contexts(state.task, state.loop);
  measure_initial_reward(state, reward_contexts);

  std::vector<StepMetrics> history;
  history.reserve(static_cast<std::size_t>(state.loop.steps));

  std::vector<std::size_t> order(records.size());
  std::uint64_t epoch = 0;
  // Shuffle instances partition the stream space: corpus generation owns
  // instance 0, online rounds own 2^32 + round, epochs own 2^33 + epoch.
  auto reshuffle = [&] {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng::Stream s(state.master_seed, rng::Purpose::shuffle, (1ull << 33) + epoch);
    rng::shuffle_indices(order, s);
  };
  reshuffle();
  std::size_t cursor = 0;

  std::vector<data::PreferenceRecord> batch;
  for (long long step = 1; step <= state.loop.steps; ++step) {
    batch.clear();
    for (std::size_t i = 0; i < state.loop.batch_size; ++i) {
      if (cursor == order.size()) {
        ++epoch;
        reshuffle();
        cursor = 0;
      }
      batch.push_back(records[order[cursor++]]);
    }
    StepMetrics m = train_step(state, batch);
    finish_step(state, m, reward_contexts, history, metrics_out);
  }
  return history;
}

std::vector<StepMetrics> run_online(TrainState& state, std::ostream* metrics_out) {
  const auto split = data::context_split(state.task);
  const auto& pool = split.train;
  if (pool.empty()) throw std::invalid_argument("run_online: empty train context pool");
  const auto reward_contexts = measurement_contexts(state.task, state.loop);
  measure_initial_reward(state, reward_contexts);

  std::vector<StepMetrics> history;
  history.reserve(static_cast<std::size_t>(state.loop.steps));

  std::vector<data::PreferenceRecord> buffer;
  std::vector<data::PreferenceRecord> previous;
  std::size_t cursor = 0;
  constexpr int kMaxResamples = 16;

  for (long long step = 1; step <= state.loop.steps; ++step) {
    if ((step - 1) % state.loop.sample_period == 0) {
      const std::uint64_t round = static_cast<std::uint64_t>(state.round);
      // Round boundary: the reference becomes the sampling-time policy
      // snapshot unless the humanline k-schedule owns reference updates.
      if (state.hl.k < 1) state.reference.load_params(state.pol);

      rng::Stream shuffle_stream(state.master_seed, rng::Purpose::shuffle,
                                 (1ull << 32) + round);
      rng::Stream sample_stream(state.master_seed, rng::Purpose::sampling, round);
      std::vector<std::size_t> pool_order(pool.size());
      std::vector<std::vector<int>> round_contexts(state.loop.round_contexts);

      int attempts = 0;
      while (true) {
        for (std::size_t i = 0; i < pool_order.size(); ++i) pool_order[i] = i;
        rng::shuffle_indices(pool_order, shuffle_stream);
        for (std::size_t i = 0; i < round_contexts.size(); ++i)
          round_contexts[i] = pool[pool_order[i % pool_order.size()]];

        data::RoundStats stats;
        buffer = data::online_round(state.pol, state.task, round_contexts, state.gen,
                                    sample_stream, &stats);
        if (verbose_logging()) {
          std::fprintf(stderr, "[humanline-lab] round %llu: %zu records from %zu contexts\n",
                       static_cast<unsigned long long>(round), stats.emitted, stats.contexts);
        }
        if (!buffer.empty()) break;
        ++attempts;
        ++state.empty_round_resamples;
        if (verbose_logging()) {
          std::fprintf(stderr, "[humanline-lab] round %llu: empty after filtering, resample %d\n",
                       static_cast<unsigned long long>(round), attempts);
        }
        if (attempts >= kMaxResamples) {
          // A policy that answers every context one way produces no contrast
          // pairs. Keep training on the previous round's buffer when one
          // exists; abort only when the very first round stays empty.
          if (!previous.empty()) {
            buffer = previous;
            if (verbose_logging()) {
              std::fprintf(stderr,
                           "[humanline-lab] round %llu: reusing the previous buffer (%zu records)\n",
                           static_cast<unsigned long long>(round), buffer.size());
            }
            break;
          }
          std::ostringstream msg;
          msg << "online round " << round << " produced no preference pairs after " << attempts
              << " resampling attempts (tau=" << state.gen.tau << ", G=" << state.gen.group_size
              << "); the policy emits no contrasting outputs and no earlier buffer exists";
          throw TrainAbort(TrainAbort::Kind::empty_rounds, msg.str());
        }
      }
      previous = buffer;
      cursor = 0;
      state.round += 1;
    }

    std::vector<data::PreferenceRecord> batch;
    batch.reserve(state.loop.batch_size);
    for (std::size_t i = 0; i < state.loop.batch_size; ++i) {
      batch.push_back(buffer[cursor % buffer.size()]);
      ++cursor;
    }
    StepMetrics m = train_step(state, batch);
    finish_step(state, m, reward_contexts, history, metrics_out);
  }
  return history;
}

}  // namespace hl::trainer
