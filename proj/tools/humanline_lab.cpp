// Command-line front door for the humanline laboratory: dataset generation,
// training across variants, head-to-head evaluation, the theory-verification
// suite, and tidy plot-data emission.
//
// Exit codes: 0 success, 2 config/input error, 3 numerical abort or reward
// collapse, 4 theory-suite failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hl/config.hpp"
#include "hl/data.hpp"
#include "hl/evaluate.hpp"
#include "hl/plotdata.hpp"
#include "hl/policy.hpp"
#include "hl/rng.hpp"
#include "hl/theory.hpp"
#include "hl/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitTheory = 4;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
  auto* config = cmd->add_option("--config", args.config_path, "experiment config (JSON)");
  if (config_required) config->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "master seed (overrides the config's seed list)")
      ->each([&args](const std::string&) { args.seed_given = true; });
  cmd->add_option("--out", args.out_dir, "output directory")->required();
}

std::vector<std::uint64_t> effective_seeds(const hl::config::RunConfig& cfg,
                                           const CommonArgs& args) {
  if (args.seed_given) return {args.seed};
  return cfg.seeds;
}

void ensure_out_dir(const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw hl::config::ConfigError("cannot create output directory " + out_dir + ": " +
                                  ec.message());
  }
}

hl::policy::Policy initial_policy(const hl::config::RunConfig& cfg, std::uint64_t seed) {
  hl::rng::Stream stream(seed, hl::rng::Purpose::policy_init, 0);
  hl::policy::Policy pol = hl::policy::Policy::random(cfg.task.vocab(), cfg.policy.order,
                                                      cfg.policy.init_sigma, stream);
  if (cfg.policy.warm_start_iterations > 0) {
    hl::rng::Stream warm(seed, hl::rng::Purpose::noise, 2);
    const auto split = hl::data::context_split(cfg.task);
    pol = hl::data::improved_sampler(pol, cfg.task, split.train, cfg.policy.warm_start_iterations,
                                     cfg.policy.warm_start_lr, cfg.data.gen, warm);
  }
  return pol;
}

hl::policy::Policy corpus_sampler(const hl::config::RunConfig& cfg, std::uint64_t seed) {
  hl::policy::Policy base = initial_policy(cfg, seed);
  if (cfg.data.sampler == "base") return base;
  if (cfg.data.sampler == "noised") {
    hl::rng::Stream stream(seed, hl::rng::Purpose::noise, 0);
    return hl::data::noised_sampler(base, cfg.data.sampler_sigma, stream);
  }
  hl::rng::Stream stream(seed, hl::rng::Purpose::noise, 1);
  const auto split = hl::data::context_split(cfg.task);
  return hl::data::improved_sampler(base, cfg.task, split.train, cfg.data.sampler_iterations,
                                    cfg.data.sampler_lr, cfg.data.gen, stream);
}

// ============================================================================
// generate-data
// ============================================================================

int cmd_generate_data(const hl::config::RunConfig& cfg, const CommonArgs& args) {
  ensure_out_dir(args.out_dir);
  for (const std::uint64_t seed : effective_seeds(cfg, args)) {
    const auto sampler = corpus_sampler(cfg, seed);
    hl::data::DatasetManifest manifest;
    hl::data::make_offline_corpus(sampler, cfg.task, cfg.data.gen, cfg.data.target_pairs,
                                  cfg.data.oversample, seed, cfg.data.sampler_id, args.out_dir,
                                  &manifest);
    std::cout << "wrote " << args.out_dir << "/corpus_" << cfg.data.sampler_id << "_seed" << seed
              << ".jsonl (" << manifest.records << " records from " << manifest.contexts
              << " contexts)\n";
  }
  return kExitOk;
}

// ============================================================================
// train
// ============================================================================

std::vector<hl::data::PreferenceRecord> offline_records(const hl::config::RunConfig& cfg,
                                                        std::uint64_t seed) {
  if (!cfg.data.path.empty()) {
    return hl::data::load_records_jsonl(hl::config::resolve_path(cfg.base_dir, cfg.data.path));
  }
  // No corpus on disk: synthesize the same corpus generate-data would write.
  const auto sampler = corpus_sampler(cfg, seed);
  return hl::data::make_offline_corpus(sampler, cfg.task, cfg.data.gen, cfg.data.target_pairs,
                                       cfg.data.oversample, seed, cfg.data.sampler_id, "",
                                       nullptr);
}

void write_train_summary(const std::string& path, const hl::trainer::TrainState& state,
                         const hl::config::RunConfig& cfg, std::uint64_t seed,
                         const std::vector<hl::trainer::StepMetrics>& history) {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["variant"] = cfg.variant;
  j["steps"] = state.step;
  j["rounds"] = state.round;
  j["sequences_consumed"] = state.sequences_consumed;
  j["empty_round_resamples"] = state.empty_round_resamples;
  j["initial_reward"] = state.initial_reward;
  j["final_reward"] = history.empty() ? state.initial_reward : history.back().mean_reward;
  j["final_loss"] = history.empty() ? 0.0 : history.back().loss;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

int cmd_train(const hl::config::RunConfig& cfg, const CommonArgs& args) {
  ensure_out_dir(args.out_dir);
  const bool online = hl::config::variant_is_online(cfg);

  for (const std::uint64_t seed : effective_seeds(cfg, args)) {
    auto state = hl::trainer::make_state(initial_policy(cfg, seed), cfg.optimizer, cfg.loss,
                                         cfg.hl, cfg.loop, cfg.task, cfg.data.gen, seed);

    const std::string tag = "_seed" + std::to_string(seed);
    const std::string metrics_path = args.out_dir + "/metrics" + tag + ".jsonl";
    std::ofstream metrics(metrics_path, std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write " + metrics_path);

    std::vector<hl::trainer::StepMetrics> history;
    if (online) {
      history = hl::trainer::run_online(state, &metrics);
    } else {
      const auto records = offline_records(cfg, seed);
      history = hl::trainer::run_offline(state, records, &metrics);
    }

    hl::policy::save_checkpoint(state.pol, args.out_dir + "/checkpoint" + tag + ".bin");
    write_train_summary(args.out_dir + "/summary" + tag + ".json", state, cfg, seed, history);
    std::cout << "seed " << seed << ": " << state.step << " steps, mean reward "
              << state.initial_reward << " -> "
              << (history.empty() ? state.initial_reward : history.back().mean_reward) << "\n";
  }
  return kExitOk;
}

// ============================================================================
// eval
// ============================================================================

int cmd_eval(const hl::config::RunConfig& cfg, const CommonArgs& args) {
  if (cfg.eval.checkpoint.empty() || cfg.eval.baseline.empty()) {
    throw hl::config::ConfigError("eval requires eval.checkpoint and eval.baseline paths");
  }
  const auto pol =
      hl::policy::load_checkpoint(hl::config::resolve_path(cfg.base_dir, cfg.eval.checkpoint));
  const auto baseline =
      hl::policy::load_checkpoint(hl::config::resolve_path(cfg.base_dir, cfg.eval.baseline));
  ensure_out_dir(args.out_dir);

  const auto seeds = effective_seeds(cfg, args);
  nlohmann::ordered_json j;

  const auto win = hl::evaluate::winrate(pol, baseline, cfg.task, cfg.eval.contexts, seeds,
                                         cfg.eval.temperature, cfg.eval.top_p);
  j["winrate"] = {{"mean", win.mean},
                  {"std_error", win.std_error},
                  {"per_seed", win.per_seed},
                  {"contexts", win.contexts}};
  std::cout << "winrate " << win.mean << " +- " << win.std_error << " over " << win.contexts
            << " contexts, " << seeds.size() << " seeds\n";

  if (cfg.task.kind == hl::data::TaskKind::verifiable) {
    const auto pass = hl::evaluate::pass_rate(pol, cfg.task, cfg.eval.contexts, seeds,
                                              cfg.eval.temperature, cfg.eval.top_p);
    j["pass_rate"] = {{"mean", pass.mean},
                      {"std_error", pass.std_error},
                      {"per_seed", pass.per_seed},
                      {"contexts", pass.contexts}};
    std::cout << "pass-rate " << pass.mean << " +- " << pass.std_error << "\n";
  }

  const std::string path = args.out_dir + "/eval_report.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
  std::cout << "wrote " << path << "\n";
  return kExitOk;
}

// ============================================================================
// verify-theory
// ============================================================================

int cmd_verify_theory(const CommonArgs& args) {
  const std::uint64_t seed = args.seed_given ? args.seed : 1;
  const auto report = hl::theory::run_theory_suite(seed);

  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["checks"] = nlohmann::ordered_json::array();
  for (const auto& check : report.checks) {
    std::cout << (check.passed ? "[PASS] " : "[FAIL] ") << check.name << ": " << check.detail
              << "\n";
    j["checks"].push_back(
        {{"name", check.name}, {"passed", check.passed}, {"detail", check.detail}});
  }
  j["all_passed"] = report.all_passed();

  ensure_out_dir(args.out_dir);
  const std::string path = args.out_dir + "/theory_report.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';

  return report.all_passed() ? kExitOk : kExitTheory;
}

// ============================================================================
// plot-data
// ============================================================================

int cmd_plot_data(const hl::config::RunConfig& cfg, const CommonArgs& args) {
  if (cfg.plot.metrics.empty()) {
    throw hl::config::ConfigError("plot-data requires a plot.metrics list of JSONL files");
  }
  std::vector<std::string> paths;
  paths.reserve(cfg.plot.metrics.size());
  for (const auto& p : cfg.plot.metrics) {
    paths.push_back(hl::config::resolve_path(cfg.base_dir, p));
  }
  const auto rows = hl::plotdata::tidy_metrics(paths);

  ensure_out_dir(args.out_dir);
  const std::string path = args.out_dir + "/plot.csv";
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  hl::plotdata::write_csv(rows, out);
  std::cout << "wrote " << path << " (" << rows.size() << " rows)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"humanline-lab: prospect-theoretic alignment experiments at desk scale"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, theory_args, plot_args;
  auto* gen = app.add_subcommand("generate-data", "sample an offline preference corpus");
  add_common(gen, gen_args, true);
  auto* train = app.add_subcommand("train", "run one variant across seeds");
  add_common(train, train_args, true);
  auto* eval = app.add_subcommand("eval", "winrate/pass-rate of a checkpoint vs a baseline");
  add_common(eval, eval_args, true);
  auto* theory = app.add_subcommand("verify-theory", "run the theory-verification suite");
  add_common(theory, theory_args, false);
  auto* plot = app.add_subcommand("plot-data", "flatten metrics JSONL into tidy CSV");
  add_common(plot, plot_args, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) {
      return cmd_generate_data(hl::config::load_run_config(gen_args.config_path), gen_args);
    }
    if (train->parsed()) {
      return cmd_train(hl::config::load_run_config(train_args.config_path), train_args);
    }
    if (eval->parsed()) {
      return cmd_eval(hl::config::load_run_config(eval_args.config_path), eval_args);
    }
    if (theory->parsed()) {
      return cmd_verify_theory(theory_args);
    }
    if (plot->parsed()) {
      return cmd_plot_data(hl::config::load_run_config(plot_args.config_path), plot_args);
    }
  } catch (const hl::trainer::TrainAbort& e) {
    std::cerr << "abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const hl::config::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
