#include "hl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace hl::data {

using json = nlohmann::ordered_json;
using policy::Policy;
using policy::Sequence;

// ============================================================================
// Tasks
// ============================================================================

void validate_task(const TaskSpec& task) {
  if (task.digits < 2 || task.digits > 62) {
    throw std::invalid_argument("TaskSpec: digits must be in [2, 62]");
  }
  if (task.context_len < 1) throw std::invalid_argument("TaskSpec: context_len must be >= 1");
  if (task.max_len < task.context_len + 1) {
    throw std::invalid_argument("TaskSpec: max_len must fit the sorted target plus eos");
  }
}

policy::Vocabulary TaskSpec::vocab() const {
  validate_task(*this);
  return policy::Vocabulary(digits + 2, digits, digits + 1);
}

std::vector<int> TaskSpec::target_output(std::span<const int> context) const {
  std::vector<int> target(context.begin(), context.end());
  std::sort(target.begin(), target.end());
  target.push_back(vocab().eos);
  return target;
}

std::vector<std::vector<int>> enumerate_contexts(const TaskSpec& task) {
  validate_task(task);
  std::size_t count = 1;
  for (int i = 0; i < task.context_len; ++i) count *= static_cast<std::size_t>(task.digits);
  std::vector<std::vector<int>> contexts;
  contexts.reserve(count);
  std::vector<int> cur(static_cast<std::size_t>(task.context_len), 0);
  for (std::size_t n = 0; n < count; ++n) {
    std::size_t rem = n;
    for (int i = task.context_len - 1; i >= 0; --i) {
      cur[static_cast<std::size_t>(i)] = static_cast<int>(rem % task.digits);
      rem /= static_cast<std::size_t>(task.digits);
    }
    contexts.push_back(cur);
  }
  return contexts;
}

ContextSplit context_split(const TaskSpec& task) {
  ContextSplit split;
  const auto all = enumerate_contexts(task);
  // Stratify by digit sum so every family of contexts sharing a suffix (and
  // therefore an initial n-gram state) keeps members on both sides.  A plain
  // lexicographic stride would hold out every context ending in one digit,
  // starving those initial states of training signal entirely and turning
  // the eval split into a measurement of untrained states.
  for (const auto& ctx : all) {
    long long sum = 0;
    for (int d : ctx) sum += d;
    if (sum % static_cast<long long>(task.digits) == static_cast<long long>(task.digits) - 1) {
      split.eval.push_back(ctx);
    } else {
      split.train.push_back(ctx);
    }
  }
  return split;
}

// ============================================================================
// Rewards
// ============================================================================

namespace {

/** Output digits with the terminal eos removed. */
std::span<const int> body_of(const TaskSpec& task, std::span<const int> output) {
  if (output.empty() || output.back() != task.digits + 1) {
    throw std::invalid_argument("reward: output must end with eos");
  }
  return output.subspan(0, output.size() - 1);
}

}  // namespace

VerifiableComponents verifiable_reward(const TaskSpec& task, std::span<const int> context,
                                       std::span<const int> output) {
  validate_task(task);
  const auto body = body_of(task, output);
  const auto target = task.target_output(context);

  VerifiableComponents c;
  c.format = (body.size() == static_cast<std::size_t>(task.context_len)) ? 1.0 : 0.0;
  const bool match = output.size() == target.size() &&
                     std::equal(output.begin(), output.end(), target.begin());
  c.accuracy = match ? 1.0 : 0.0;
  c.total = (1.0 * c.format + 8.0 * c.accuracy) / 9.0;
  return c;
}

double scored_reward(const TaskSpec& task, std::span<const int> context,
                     std::span<const int> output) {
  validate_task(task);
  (void)context;  // the score depends on output shape only
  const auto body = body_of(task, output);
  const std::size_t len = body.size();

  // Outputs too short to witness an ordering get the neutral 0.5, not full
  // credit: otherwise near-empty outputs become a degenerate attractor for
  // preference optimization.
  double sortedness = 0.5;
  if (len >= 2) {
    std::size_t good = 0;
    for (std::size_t i = 0; i + 1 < len; ++i) {
      if (body[i + 1] >= body[i]) ++good;
    }
    sortedness = static_cast<double>(good) / static_cast<double>(len - 1);
  }

  // Target-length proximity, asymmetric on purpose: undershoot falls off
  // steeply (an empty output scores zero here) while overshoot decays gently
  // over the remaining budget.  Short outputs must lose their group reliably,
  // or best/worst pairing teaches early termination and the policy collapses
  // to emitting eos.
  const double target_len = static_cast<double>(task.context_len);
  const double flen = static_cast<double>(len);
  const double overshoot_span =
      std::max(1.0, static_cast<double>(task.max_len - 1) - target_len);
  const double length_score = flen <= target_len
                                  ? flen / target_len
                                  : std::max(0.0, 1.0 - (flen - target_len) / overshoot_span);

  // Distinct tokens relative to the target length (capped by the alphabet),
  // so brevity cannot buy trivial diversity.
  const std::set<int> distinct(body.begin(), body.end());
  const double diversity =
      static_cast<double>(distinct.size()) /
      static_cast<double>(std::min<std::size_t>(static_cast<std::size_t>(task.context_len),
                                                static_cast<std::size_t>(task.digits)));

  return 0.5 * length_score + 0.3 * sortedness + 0.2 * std::min(1.0, diversity);
}

double true_reward(const TaskSpec& task, std::span<const int> context,
                   std::span<const int> output) {
  if (task.kind == TaskKind::verifiable) {
    return verifiable_reward(task, context, output).total;
  }
  return scored_reward(task, context, output);
}

// ============================================================================
// Rounds and groups
// ============================================================================

std::vector<PreferenceRecord> online_round(const Policy& pol, const TaskSpec& task,
                                           std::span<const std::vector<int>> contexts,
                                           const GenParams& gen, rng::Stream& stream,
                                           RoundStats* stats) {
  if (gen.group_size < 2) throw std::invalid_argument("online_round: group size must be >= 2");
  if (!(gen.tau >= 0.0)) throw std::invalid_argument("online_round: tau must be >= 0");

  std::vector<PreferenceRecord> records;
  for (const auto& x : contexts) {
    std::vector<Sequence> samples;
    std::vector<double> scores;
    samples.reserve(static_cast<std::size_t>(gen.group_size));
    for (int g = 0; g < gen.group_size; ++g) {
      Sequence s = policy::sample(pol, x, gen.temperature, gen.top_p, stream, task.max_len);
      scores.push_back(true_reward(task, x, s.output));
      samples.push_back(std::move(s));
    }
    // Strict comparisons keep the lowest index on ties, both sides.
    std::size_t best = 0, worst = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
      if (scores[i] > scores[best]) best = i;
      if (scores[i] < scores[worst]) worst = i;
    }
    if (scores[best] - scores[worst] >= gen.tau) {
      PreferenceRecord rec;
      rec.x = x;
      rec.y_w = samples[best].output;
      rec.y_l = samples[worst].output;
      rec.r_w = scores[best];
      rec.r_l = scores[worst];
      records.push_back(std::move(rec));
    }
  }
  if (stats != nullptr) {
    stats->contexts = contexts.size();
    stats->emitted = records.size();
    stats->filtered_fraction =
        contexts.empty()
            ? 0.0
            : 1.0 - static_cast<double>(records.size()) / static_cast<double>(contexts.size());
  }
  return records;
}

std::vector<objectives::Group> offline_groups(std::span<const PreferenceRecord> records) {
  if (records.empty()) throw std::invalid_argument("offline_groups: no records");
  std::vector<objectives::Group> groups;
  groups.reserve(records.size());
  for (const auto& rec : records) {
    objectives::Group g;
    g.context = rec.x;
    g.outputs.resize(2);
    g.outputs[0].output = rec.y_w;
    g.outputs[1].output = rec.y_l;
    const double rw = rec.r_w.value_or(1.0);
    const double rl = rec.r_l.value_or(0.0);
    g.rewards = {rw, rl};
    g.advantages = objectives::group_advantages(g.rewards);
    groups.push_back(std::move(g));
  }
  return groups;
}

// ============================================================================
// Corpus generation and persistence
// ============================================================================

std::vector<PreferenceRecord> make_offline_corpus(const Policy& sampler, const TaskSpec& task,
                                                  const GenParams& gen, std::size_t target_pairs,
                                                  double oversample, std::uint64_t seed,
                                                  const std::string& sampler_id,
                                                  const std::string& out_dir,
                                                  DatasetManifest* manifest_out) {
  if (target_pairs == 0) throw std::invalid_argument("make_offline_corpus: need target_pairs > 0");
  if (!(oversample >= 1.0)) {
    throw std::invalid_argument("make_offline_corpus: oversample must be >= 1");
  }

  const ContextSplit split = context_split(task);
  rng::Stream sample_stream(seed, rng::Purpose::data_gen, 0);
  rng::Stream shuffle_stream(seed, rng::Purpose::shuffle, 0);

  const std::size_t budget =
      static_cast<std::size_t>(std::ceil(static_cast<double>(target_pairs) * oversample));

  std::vector<PreferenceRecord> records;
  std::vector<std::size_t> order(split.train.size());
  std::size_t cursor = order.size();  // forces an initial shuffle
  std::size_t sampled_contexts = 0;
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  while (records.size() < target_pairs && sampled_contexts < budget) {
    if (cursor == order.size()) {
      rng::shuffle_indices(order, shuffle_stream);
      cursor = 0;
    }
    const auto& x = split.train[order[cursor++]];
    ++sampled_contexts;
    const std::vector<std::vector<int>> one{x};
    auto out = online_round(sampler, task, one, gen, sample_stream, nullptr);
    for (auto& r : out) records.push_back(std::move(r));
  }

  DatasetManifest manifest;
  manifest.sampler_id = sampler_id;
  manifest.task = task;
  manifest.gen = gen;
  manifest.seed = seed;
  manifest.contexts = sampled_contexts;
  manifest.records = records.size();
  manifest.oversample = oversample;
  if (!out_dir.empty()) {
    const std::string base = out_dir + "/corpus_" + sampler_id + "_seed" + std::to_string(seed);
    save_records_jsonl(records, base + ".jsonl");
    save_manifest(manifest, base + ".manifest.json");
  }
  if (manifest_out != nullptr) *manifest_out = manifest;
  return records;
}

void save_records_jsonl(std::span<const PreferenceRecord> records, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("save_records_jsonl: cannot open " + path);
  for (const auto& rec : records) {
    json row;
    row["x"] = rec.x;
    row["y_w"] = rec.y_w;
    row["y_l"] = rec.y_l;
    if (rec.r_w) row["r_w"] = *rec.r_w;
    if (rec.r_l) row["r_l"] = *rec.r_l;
    out << row.dump() << '\n';
  }
  if (!out) throw std::runtime_error("save_records_jsonl: write failed: " + path);
}

std::vector<PreferenceRecord> load_records_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_records_jsonl: cannot open " + path);
  std::vector<PreferenceRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
      PreferenceRecord rec;
      rec.x = row.at("x").get<std::vector<int>>();
      rec.y_w = row.at("y_w").get<std::vector<int>>();
      rec.y_l = row.at("y_l").get<std::vector<int>>();
      if (row.contains("r_w")) rec.r_w = row["r_w"].get<double>();
      if (row.contains("r_l")) rec.r_l = row["r_l"].get<double>();
      records.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw std::runtime_error("load_records_jsonl: " + path + ": line " +
                               std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  json j;
  j["source_model"] = manifest.sampler_id;
  j["task"] = {
      {"kind", manifest.task.kind == TaskKind::verifiable ? "verifiable" : "scored"},
      {"digits", manifest.task.digits},
      {"context_len", manifest.task.context_len},
      {"max_len", manifest.task.max_len},
  };
  j["temperature"] = manifest.gen.temperature;
  j["top_p"] = manifest.gen.top_p;
  j["G"] = manifest.gen.group_size;
  j["tau"] = manifest.gen.tau;
  j["seed"] = manifest.seed;
  j["contexts"] = manifest.contexts;
  j["records"] = manifest.records;
  j["oversample"] = manifest.oversample;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("save_manifest: cannot open " + path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("save_manifest: write failed: " + path);
}

// ============================================================================
// Sampler variants
// ============================================================================

Policy noised_sampler(const Policy& base, double sigma, rng::Stream& stream) {
  Policy p = base;
  p.perturb(sigma, stream);
  return p;
}

Policy improved_sampler(const Policy& base, const TaskSpec& task,
                        std::span<const std::vector<int>> contexts, int iterations, double lr,
                        const GenParams& gen, rng::Stream& stream) {
  if (iterations < 0) throw std::invalid_argument("improved_sampler: iterations must be >= 0");
  if (contexts.empty()) throw std::invalid_argument("improved_sampler: no contexts");

  Policy pol = base;
  policy::GradTape tape(pol);
  for (int it = 0; it < iterations; ++it) {
    tape.zero();
    const auto& x = contexts[static_cast<std::size_t>(stream.uniform_below(contexts.size()))];
    std::vector<Sequence> samples;
    std::vector<double> scores;
    for (int g = 0; g < gen.group_size; ++g) {
      Sequence s = policy::sample(pol, x, gen.temperature, gen.top_p, stream, task.max_len);
      scores.push_back(true_reward(task, x, s.output));
      samples.push_back(std::move(s));
    }
    const auto adv = objectives::group_advantages(scores);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (adv[i] == 0.0) continue;
      const std::vector<double> w(samples[i].output.size(),
                                  adv[i] / static_cast<double>(samples.size()));
      policy::accumulate_log_prob_grad(pol, samples[i], w, {}, tape);
    }
    auto logits = pol.mutable_logits();
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += lr * tape.grad[i];
  }
  return pol;
}

}  // namespace hl::data
