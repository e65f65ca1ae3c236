#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace hl::plotdata {

/** One tidy observation: (variant, seed, step, metric, value). */
struct PlotRow {
  std::string variant;
  std::uint64_t seed = 0;
  long long step = 0;
  std::string metric;
  double value = 0.0;
};

/** Seed tag recovered from a metrics path: the digits of the last
 *  "seed<digits>" occurrence, or 0 when the path carries none. */
std::uint64_t seed_from_path(const std::string& path);

/**
 * Flattens per-step metrics JSONL files into tidy rows, one per numeric
 * metric (loss, mean_reward, grad_norm, kl).  The variant comes from each
 * row's own field; the seed from the file name.  Malformed lines raise
 * std::runtime_error naming the file and 1-based line number.
 */
std::vector<PlotRow> tidy_metrics(std::span<const std::string> paths);

/** CSV with the stable header variant,seed,step,metric,value; doubles in
 *  shortest round-trip form. Always writes the header. */
void write_csv(std::span<const PlotRow> rows, std::ostream& out);

}  // namespace hl::plotdata
