#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hl/data.hpp"
#include "hl/humanline.hpp"
#include "hl/objectives.hpp"
#include "hl/trainer.hpp"

namespace hl::config {

/** Anything wrong with a config file: unreadable, unparsable, unknown keys,
 *  out-of-range values, or variant/humanline contradictions. The CLI maps
 *  this to exit code 2. */
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ============================================================================
// Sections
// ============================================================================

/** Corpus generation and offline-data settings. With an empty path, offline
 *  runs synthesize their corpus in-memory from the run seed. */
struct DataConfig {
  std::string path;
  data::GenParams gen;
  std::size_t target_pairs = 256;
  double oversample = 2.0;
  std::string sampler = "base";  // base | noised | improved
  double sampler_sigma = 0.5;    // noised: logit noise scale
  int sampler_iterations = 200;  // improved: ascent iterations
  double sampler_lr = 0.2;       // improved: ascent rate
  std::string sampler_id;        // corpus filename tag; defaults to sampler
};

struct PolicyConfig {
  int order = 2;
  double init_sigma = 0.1;
  // When positive, every arm starts from a policy pre-trained on the task
  // reward over the training contexts (score-weighted ascent for this many
  // iterations) instead of from raw random logits.  Sparse-reward tasks need
  // this: a random policy almost never emits a correctly formatted output,
  // so preference pairs carry no signal until formatting is roughly in place.
  int warm_start_iterations = 0;
  double warm_start_lr = 0.1;
};

struct EvalConfig {
  std::string checkpoint;
  std::string baseline;
  int contexts = 64;  // held-out contexts compared per seed (cycled)
  double temperature = 0.7;
  double top_p = 0.95;
};

struct PlotConfig {
  std::vector<std::string> metrics;  // JSONL files to tidy into one CSV
};

// ============================================================================
// RunConfig
// ============================================================================

/**
 * One experiment description: task, objective, variant, seeds, and every
 * module's knobs.  A "presets" section keyed by variant name is deep-merged
 * over the base document before parsing, so one file can carry coherent
 * settings for several variants.
 */
struct RunConfig {
  data::TaskSpec task;
  objectives::LossConfig loss;
  humanline::HumanlineConfig hl;
  trainer::OptimizerConfig optimizer;
  trainer::LoopConfig loop;
  PolicyConfig policy;
  DataConfig data;
  EvalConfig eval;
  PlotConfig plot;
  std::string variant = "offline";
  std::vector<std::uint64_t> seeds = {1};
  std::string base_dir;  // directory of the config file; anchors relative paths
};

/** True for the online and online+humanline variants. */
bool variant_is_online(const RunConfig& cfg);

/** True for the offline+humanline and online+humanline variants. */
bool variant_uses_humanline(const RunConfig& cfg);

/** Parses and validates a config document. base_dir anchors relative paths
 *  referenced by the document (corpus, checkpoints, metrics). */
RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir = "");

/** Reads the file and parses it; base_dir is taken from the file location. */
RunConfig load_run_config(const std::string& path);

/** path unchanged when absolute or when base_dir is empty, else joined onto
 *  base_dir. */
std::string resolve_path(const std::string& base_dir, const std::string& path);

}  // namespace hl::config
