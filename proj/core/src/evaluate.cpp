#include "hl/evaluate.hpp"

#include <cmath>
#include <stdexcept>

#include "hl/rng.hpp"

namespace hl::evaluate {

namespace {

/** Held-out contexts cycled up to n; falls back to the train split for tasks
 *  too small to hold anything out. */
std::vector<std::vector<int>> eval_contexts(const data::TaskSpec& task, int n) {
  if (n < 1) throw std::invalid_argument("eval: n_contexts must be >= 1");
  auto split = data::context_split(task);
  const auto& pool = split.eval.empty() ? split.train : split.eval;
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(pool[static_cast<std::size_t>(i) % pool.size()]);
  return out;
}

policy::Sequence sample_with(const policy::Policy& pol, std::span<const int> ctx,
                             const data::TaskSpec& task, double temperature, double top_p,
                             std::uint64_t seed, std::uint64_t instance) {
  rng::Stream stream(seed, rng::Purpose::eval, instance);
  return policy::sample(pol, ctx, temperature, top_p, stream, task.max_len);
}

}  // namespace

void summarize(EvalReport& report) {
  const std::size_t n = report.per_seed.size();
  if (n == 0) {
    report.mean = 0.0;
    report.std_error = 0.0;
    return;
  }
  double sum = 0.0;
  for (const double v : report.per_seed) sum += v;
  report.mean = sum / static_cast<double>(n);
  if (n < 2) {
    report.std_error = 0.0;
    return;
  }
  double ss = 0.0;
  for (const double v : report.per_seed) ss += (v - report.mean) * (v - report.mean);
  const double sample_std = std::sqrt(ss / static_cast<double>(n - 1));
  report.std_error = sample_std / std::sqrt(static_cast<double>(n));
}

EvalReport winrate(const policy::Policy& pol, const policy::Policy& baseline,
                   const data::TaskSpec& task, int n_contexts,
                   std::span<const std::uint64_t> seeds, double temperature, double top_p) {
  if (seeds.empty()) throw std::invalid_argument("winrate: need at least one seed");
  const auto contexts = eval_contexts(task, n_contexts);

  EvalReport report;
  report.metric = "winrate";
  report.contexts = contexts.size();
  for (const std::uint64_t seed : seeds) {
    double wins = 0.0;
    for (std::size_t c = 0; c < contexts.size(); ++c) {
      // Identical draws for both policies: the comparison differs only
      // through the policies themselves.
      const auto ours =
          sample_with(pol, contexts[c], task, temperature, top_p, seed, c);
      const auto theirs =
          sample_with(baseline, contexts[c], task, temperature, top_p, seed, c);
      const double score_ours = data::true_reward(task, contexts[c], ours.output);
      const double score_theirs = data::true_reward(task, contexts[c], theirs.output);
      if (score_ours > score_theirs) {
        wins += 1.0;
      } else if (score_ours == score_theirs) {
        wins += 0.5;
      }
    }
    report.per_seed.push_back(wins / static_cast<double>(contexts.size()));
  }
  summarize(report);
  return report;
}

EvalReport pass_rate(const policy::Policy& pol, const data::TaskSpec& task, int n_contexts,
                     std::span<const std::uint64_t> seeds, double temperature, double top_p) {
  if (task.kind != data::TaskKind::verifiable)
    throw std::invalid_argument("pass_rate: requires the verifiable task");
  if (seeds.empty()) throw std::invalid_argument("pass_rate: need at least one seed");
  const auto contexts = eval_contexts(task, n_contexts);

  EvalReport report;
  report.metric = "pass_rate";
  report.contexts = contexts.size();
  for (const std::uint64_t seed : seeds) {
    double passes = 0.0;
    for (std::size_t c = 0; c < contexts.size(); ++c) {
      const auto seq = sample_with(pol, contexts[c], task, temperature, top_p, seed, c);
      const auto parts = data::verifiable_reward(task, contexts[c], seq.output);
      if (parts.accuracy == 1.0) passes += 1.0;
    }
    report.per_seed.push_back(passes / static_cast<double>(contexts.size()));
  }
  summarize(report);
  return report;
}

}  // namespace hl::evaluate
