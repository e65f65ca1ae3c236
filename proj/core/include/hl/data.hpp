#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hl/objectives.hpp"
#include "hl/policy.hpp"
#include "hl/rng.hpp"

namespace hl::data {

// ============================================================================
// Synthetic tasks
// ============================================================================

enum class TaskKind { verifiable, scored };

/**
 * Sequence space shared by both tasks: contexts are fixed-length digit
 * strings over an alphabet of `digits` symbols; outputs are digit strings
 * terminated by eos.  Token ids: digits at [0, digits), bos = digits,
 * eos = digits + 1.
 */
struct TaskSpec {
  TaskKind kind = TaskKind::scored;
  int digits = 4;
  int context_len = 3;
  int max_len = 8;  // output cap, counting eos

  policy::Vocabulary vocab() const;
  /** Sorted copy of the context digits followed by eos: the verifiable-task
   *  target output. */
  std::vector<int> target_output(std::span<const int> context) const;
};

void validate_task(const TaskSpec& task);

/** All digits^context_len contexts in lexicographic order. */
std::vector<std::vector<int>> enumerate_contexts(const TaskSpec& task);

/** Deterministic train/eval partition of the full context space.  Contexts
 *  whose digit sum is congruent to digits - 1 (mod digits) are held out, so
 *  every family of contexts sharing a suffix keeps members on both sides and
 *  no initial n-gram state is starved of training signal. */
struct ContextSplit {
  std::vector<std::vector<int>> train;
  std::vector<std::vector<int>> eval;
};
ContextSplit context_split(const TaskSpec& task);

// ============================================================================
// Rewards
// ============================================================================

struct VerifiableComponents {
  double format = 0.0;    // correct output length (eos placement)
  double accuracy = 0.0;  // exact match with the sorted target
  double total = 0.0;     // (1*format + 8*accuracy) / 9
};

/** Deterministic checker for the sort-the-digits task. */
VerifiableComponents verifiable_reward(const TaskSpec& task, std::span<const int> context,
                                       std::span<const int> output);

/**
 * Smooth score in [0, 1] standing in for a learned reward model: weighted sum
 * of target-length proximity (linear ramp up to the context length, gentle
 * decay past it, so undershooting costs more than overshooting), sortedness
 * (fraction of nondecreasing adjacent digit pairs; neutral 0.5 below two
 * digits), and token diversity relative to the context length.  Weights
 * 0.5 / 0.3 / 0.2.  Deterministic; improving any one feature with the others
 * fixed never lowers the score.
 */
double scored_reward(const TaskSpec& task, std::span<const int> context,
                     std::span<const int> output);

/** Unified scalar reward for either task kind. */
double true_reward(const TaskSpec& task, std::span<const int> context,
                   std::span<const int> output);

// ============================================================================
// Records and rounds
// ============================================================================

struct PreferenceRecord {
  std::vector<int> x;
  std::vector<int> y_w;
  std::vector<int> y_l;
  std::optional<double> r_w;
  std::optional<double> r_l;
};

/** Generation hyperparameters shared by online rounds and corpus building. */
struct GenParams {
  int group_size = 8;  // G
  double tau = 0.01;   // min score gap for an emitted pair
  double temperature = 0.7;
  double top_p = 0.95;
};

struct RoundStats {
  std::size_t contexts = 0;
  std::size_t emitted = 0;
  double filtered_fraction = 0.0;
};

/**
 * One sampling round: per context draw G outputs from pol, score them, and
 * emit the (best, worst) pair iff best - worst >= tau.  Ties resolve to the
 * lowest sample index on both sides.
 */
std::vector<PreferenceRecord> online_round(const policy::Policy& pol, const TaskSpec& task,
                                           std::span<const std::vector<int>> contexts,
                                           const GenParams& gen, rng::Stream& stream,
                                           RoundStats* stats = nullptr);

/** Each record becomes a two-output group; rewards are the raw scores when
 *  present, else (1, 0); advantages are filled. */
std::vector<objectives::Group> offline_groups(std::span<const PreferenceRecord> records);

// ============================================================================
// Corpus generation and persistence
// ============================================================================

struct DatasetManifest {
  std::string sampler_id;
  TaskSpec task;
  GenParams gen;
  std::uint64_t seed = 0;
  std::size_t contexts = 0;
  std::size_t records = 0;
  double oversample = 1.0;
};

/**
 * Offline corpus: the online_round pipeline frozen to a fixed sampler policy.
 * Contexts are drawn (with reshuffle cycling) from the train split until
 * ceil(target_pairs * oversample) contexts have been sampled.  Writes
 * corpus_<sampler_id>_seed<seed>.jsonl plus a .manifest.json next to it
 * (skipped when out_dir is empty) and returns the records.
 */
std::vector<PreferenceRecord> make_offline_corpus(const policy::Policy& sampler,
                                                  const TaskSpec& task, const GenParams& gen,
                                                  std::size_t target_pairs, double oversample,
                                                  std::uint64_t seed,
                                                  const std::string& sampler_id,
                                                  const std::string& out_dir,
                                                  DatasetManifest* manifest_out = nullptr);

/** JSONL round trip. Writers emit keys in the documented order
 *  (x, y_w, y_l, r_w, r_l); the reader rejects malformed lines with the
 *  1-based line number in the error message. */
void save_records_jsonl(std::span<const PreferenceRecord> records, const std::string& path);
std::vector<PreferenceRecord> load_records_jsonl(const std::string& path);

void save_manifest(const DatasetManifest& manifest, const std::string& path);

// ============================================================================
// Sampler variants
// ============================================================================

/** Copy of base with i.i.d. normal(0, sigma) logit noise: the "worse"
 *  corpus sampler. */
policy::Policy noised_sampler(const policy::Policy& base, double sigma, rng::Stream& stream);

/**
 * Copy of base pre-optimized on the true reward: the "better" corpus
 * sampler.  Plain stochastic policy-gradient ascent on group-standardized
 * rewards (sample G per context, weight log-likelihood by advantage) for the
 * given number of iterations.
 */
policy::Policy improved_sampler(const policy::Policy& base, const TaskSpec& task,
                                std::span<const std::vector<int>> contexts, int iterations,
                                double lr, const GenParams& gen, rng::Stream& stream);

}  // namespace hl::data
