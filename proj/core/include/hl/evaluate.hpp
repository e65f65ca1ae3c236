#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hl/data.hpp"
#include "hl/policy.hpp"

namespace hl::evaluate {

/** Per-seed scores with their mean and standard error (sample std over
 *  sqrt(seeds); 0 when fewer than 2 seeds). */
struct EvalReport {
  std::string metric;  // "winrate" or "pass_rate"
  std::vector<double> per_seed;
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t contexts = 0;  // comparisons per seed
};

/**
 * Head-to-head winrate of pol against baseline on held-out contexts under the
 * task's true reward: strictly higher score counts 1, ties count 0.5.
 *
 * Both policies sample with identical per-(seed, context) random draws
 * (common random numbers), which makes the comparison antisymmetric exactly:
 * winrate(A, B) + winrate(B, A) = 1, and winrate(A, A) = 0.5 with zero
 * variance.
 */
EvalReport winrate(const policy::Policy& pol, const policy::Policy& baseline,
                   const data::TaskSpec& task, int n_contexts,
                   std::span<const std::uint64_t> seeds, double temperature, double top_p);

/** Fraction of held-out contexts where a sampled output matches the
 *  verifiable task's target exactly. Rejects non-verifiable tasks. */
EvalReport pass_rate(const policy::Policy& pol, const data::TaskSpec& task, int n_contexts,
                     std::span<const std::uint64_t> seeds, double temperature, double top_p);

/** Mean and sample-std-based standard error of a score vector. */
void summarize(EvalReport& report);

}  // namespace hl::evaluate
