#include "hl/config.hpp"

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <nlohmann/json.hpp>

namespace hl::config {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw ConfigError("config: " + msg); }

/** Overlay wins; objects merge recursively, everything else replaces. */
void deep_merge(json& base, const json& overlay) {
  if (!base.is_object() || !overlay.is_object()) {
    base = overlay;
    return;
  }
  for (const auto& [key, value] : overlay.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object()) {
      deep_merge(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

void check_keys(const json& obj, const std::string& section,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) fail("unknown key \"" + key + "\" in section \"" + section + "\"");
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(std::string("bad value for \"") + key + "\": " + e.what());
  }
}

data::TaskKind parse_task_kind(const std::string& s) {
  if (s == "scored") return data::TaskKind::scored;
  if (s == "verifiable") return data::TaskKind::verifiable;
  fail("task.kind must be \"scored\" or \"verifiable\", got \"" + s + "\"");
}

objectives::Objective parse_objective(const std::string& s) {
  if (s == "dpo") return objectives::Objective::dpo;
  if (s == "kto") return objectives::Objective::kto;
  if (s == "grpo") return objectives::Objective::grpo;
  fail("objective must be \"dpo\", \"kto\", or \"grpo\", got \"" + s + "\"");
}

humanline::Mode parse_mode(const std::string& s) {
  if (s == "off") return humanline::Mode::off;
  if (s == "clipping") return humanline::Mode::clipping;
  if (s == "sampling") return humanline::Mode::sampling;
  fail("humanline.mode must be \"off\", \"clipping\", or \"sampling\", got \"" + s + "\"");
}

void parse_task(const json& obj, data::TaskSpec& task) {
  check_keys(obj, "task", {"kind", "digits", "context_len", "max_len"});
  if (obj.contains("kind")) task.kind = parse_task_kind(obj.at("kind").get<std::string>());
  task.digits = get_or(obj, "digits", task.digits);
  task.context_len = get_or(obj, "context_len", task.context_len);
  task.max_len = get_or(obj, "max_len", task.max_len);
}

void parse_loss(const json& obj, objectives::LossConfig& loss) {
  check_keys(obj, "loss",
             {"beta", "desirable_weight", "undesirable_weight", "clip_epsilon",
              "length_normalized", "pin_baseline_to_init"});
  loss.beta = get_or(obj, "beta", loss.beta);
  loss.desirable_weight = get_or(obj, "desirable_weight", loss.desirable_weight);
  loss.undesirable_weight = get_or(obj, "undesirable_weight", loss.undesirable_weight);
  loss.clip_epsilon = get_or(obj, "clip_epsilon", loss.clip_epsilon);
  loss.length_normalized = get_or(obj, "length_normalized", loss.length_normalized);
  loss.pin_baseline_to_init = get_or(obj, "pin_baseline_to_init", loss.pin_baseline_to_init);
}

void parse_humanline(const json& obj, humanline::HumanlineConfig& hl) {
  check_keys(obj, "humanline",
             {"mode", "log_eps_P", "log_eps_R", "k", "gamma_P", "beta_P", "gamma_R", "beta_R"});
  if (obj.contains("mode")) hl.mode = parse_mode(obj.at("mode").get<std::string>());
  hl.log_eps_p = get_or(obj, "log_eps_P", hl.log_eps_p);
  hl.log_eps_r = get_or(obj, "log_eps_R", hl.log_eps_r);
  hl.k = get_or(obj, "k", hl.k);
  hl.gamma_p = get_or(obj, "gamma_P", hl.gamma_p);
  hl.beta_p = get_or(obj, "beta_P", hl.beta_p);
  hl.gamma_r = get_or(obj, "gamma_R", hl.gamma_r);
  hl.beta_r = get_or(obj, "beta_R", hl.beta_r);
}

void parse_optimizer(const json& obj, trainer::OptimizerConfig& opt) {
  check_keys(obj, "optimizer",
             {"lr", "beta1", "beta2", "eps", "weight_decay", "warmup_frac", "max_grad_norm"});
  opt.lr = get_or(obj, "lr", opt.lr);
  opt.beta1 = get_or(obj, "beta1", opt.beta1);
  opt.beta2 = get_or(obj, "beta2", opt.beta2);
  opt.eps = get_or(obj, "eps", opt.eps);
  opt.weight_decay = get_or(obj, "weight_decay", opt.weight_decay);
  opt.warmup_frac = get_or(obj, "warmup_frac", opt.warmup_frac);
  opt.max_grad_norm = get_or(obj, "max_grad_norm", opt.max_grad_norm);
}

void parse_train(const json& obj, trainer::LoopConfig& loop) {
  check_keys(obj, "train",
             {"steps", "batch_size", "sample_period", "round_contexts", "trust_region_period",
              "eval_samples", "eval_temperature", "eval_top_p", "measure_split",
              "collapse_window"});
  loop.steps = get_or(obj, "steps", loop.steps);
  loop.batch_size = get_or(obj, "batch_size", loop.batch_size);
  loop.sample_period = get_or(obj, "sample_period", loop.sample_period);
  loop.round_contexts = get_or(obj, "round_contexts", loop.round_contexts);
  loop.trust_region_period = get_or(obj, "trust_region_period", loop.trust_region_period);
  loop.eval_samples = get_or(obj, "eval_samples", loop.eval_samples);
  loop.eval_temperature = get_or(obj, "eval_temperature", loop.eval_temperature);
  loop.eval_top_p = get_or(obj, "eval_top_p", loop.eval_top_p);
  loop.measure_split = get_or(obj, "measure_split", loop.measure_split);
  loop.collapse_window = get_or(obj, "collapse_window", loop.collapse_window);
}

void parse_policy(const json& obj, PolicyConfig& pol) {
  check_keys(obj, "policy",
             {"order", "init_sigma", "warm_start_iterations", "warm_start_lr"});
  pol.order = get_or(obj, "order", pol.order);
  pol.init_sigma = get_or(obj, "init_sigma", pol.init_sigma);
  pol.warm_start_iterations = get_or(obj, "warm_start_iterations", pol.warm_start_iterations);
  pol.warm_start_lr = get_or(obj, "warm_start_lr", pol.warm_start_lr);
}

void parse_data(const json& obj, DataConfig& dat) {
  check_keys(obj, "data",
             {"path", "group_size", "tau", "temperature", "top_p", "target_pairs", "oversample",
              "sampler", "sampler_sigma", "sampler_iterations", "sampler_lr", "sampler_id"});
  dat.path = get_or<std::string>(obj, "path", dat.path);
  dat.gen.group_size = get_or(obj, "group_size", dat.gen.group_size);
  dat.gen.tau = get_or(obj, "tau", dat.gen.tau);
  dat.gen.temperature = get_or(obj, "temperature", dat.gen.temperature);
  dat.gen.top_p = get_or(obj, "top_p", dat.gen.top_p);
  dat.target_pairs = get_or(obj, "target_pairs", dat.target_pairs);
  dat.oversample = get_or(obj, "oversample", dat.oversample);
  dat.sampler = get_or<std::string>(obj, "sampler", dat.sampler);
  dat.sampler_sigma = get_or(obj, "sampler_sigma", dat.sampler_sigma);
  dat.sampler_iterations = get_or(obj, "sampler_iterations", dat.sampler_iterations);
  dat.sampler_lr = get_or(obj, "sampler_lr", dat.sampler_lr);
  dat.sampler_id = get_or<std::string>(obj, "sampler_id", dat.sampler_id);
}

void parse_eval(const json& obj, EvalConfig& ev) {
  check_keys(obj, "eval", {"checkpoint", "baseline", "contexts", "temperature", "top_p"});
  ev.checkpoint = get_or<std::string>(obj, "checkpoint", ev.checkpoint);
  ev.baseline = get_or<std::string>(obj, "baseline", ev.baseline);
  ev.contexts = get_or(obj, "contexts", ev.contexts);
  ev.temperature = get_or(obj, "temperature", ev.temperature);
  ev.top_p = get_or(obj, "top_p", ev.top_p);
}

void parse_plot(const json& obj, PlotConfig& plot) {
  check_keys(obj, "plot", {"metrics"});
  plot.metrics = get_or(obj, "metrics", plot.metrics);
}

void validate_variant_constraints(const RunConfig& cfg) {
  const bool humanline_on = variant_uses_humanline(cfg);
  const bool hl_active = cfg.hl.mode != humanline::Mode::off || cfg.hl.k >= 1;
  if (!humanline_on && hl_active) {
    fail("variant \"" + cfg.variant +
         "\" forbids humanline settings (mode must be \"off\" and k must be 0)");
  }
  if (humanline_on && !hl_active) {
    fail("variant \"" + cfg.variant +
         "\" requires humanline settings (mode != \"off\" or k >= 1)");
  }
  if (humanline_on && cfg.loop.trust_region_period >= 1) {
    fail("trust_region_period and humanline syncing cannot both own the reference");
  }
  if (variant_is_online(cfg) && cfg.loop.trust_region_period >= 1) {
    fail("trust_region_period is an offline-only ablation (online rounds already sync)");
  }
}

void validate_values(const RunConfig& cfg) {
  try {
    data::validate_task(cfg.task);
    objectives::validate_loss_config(cfg.loss);
    trainer::validate_optimizer(cfg.optimizer);
  } catch (const std::exception& e) {
    fail(e.what());
  }
  if (!(cfg.hl.log_eps_p <= cfg.hl.log_eps_r))
    fail("humanline: log_eps_P must be <= log_eps_R");
  if (!(cfg.hl.gamma_p > 0.0) || !(cfg.hl.beta_p > 0.0) || !(cfg.hl.gamma_r > 0.0) ||
      !(cfg.hl.beta_r > 0.0))
    fail("humanline: Beta shapes must be > 0");
  if (cfg.policy.order < 1) fail("policy.order must be >= 1");
  if (cfg.policy.init_sigma < 0.0) fail("policy.init_sigma must be >= 0");
  if (cfg.policy.warm_start_iterations < 0) fail("policy.warm_start_iterations must be >= 0");
  if (!(cfg.policy.warm_start_lr > 0.0)) fail("policy.warm_start_lr must be > 0");
  if (cfg.data.gen.group_size < 2) fail("data.group_size must be >= 2");
  if (cfg.data.gen.tau < 0.0) fail("data.tau must be >= 0");
  if (cfg.data.sampler != "base" && cfg.data.sampler != "noised" &&
      cfg.data.sampler != "improved")
    fail("data.sampler must be \"base\", \"noised\", or \"improved\"");
  if (cfg.eval.contexts < 1) fail("eval.contexts must be >= 1");
  if (cfg.seeds.empty()) fail("seeds must be non-empty");
}

}  // namespace

// ============================================================================
// Public interface
// ============================================================================

bool variant_is_online(const RunConfig& cfg) {
  return cfg.variant == "online" || cfg.variant == "online+humanline";
}

bool variant_uses_humanline(const RunConfig& cfg) {
  return cfg.variant == "offline+humanline" || cfg.variant == "online+humanline";
}

std::string resolve_path(const std::string& base_dir, const std::string& path) {
  if (path.empty() || base_dir.empty()) return path;
  std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  return (std::filesystem::path(base_dir) / p).string();
}

RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) fail("top-level document must be a JSON object");

  RunConfig cfg;
  cfg.base_dir = base_dir;
  cfg.variant = get_or<std::string>(doc, "variant", cfg.variant);
  if (cfg.variant != "offline" && cfg.variant != "online" &&
      cfg.variant != "offline+humanline" && cfg.variant != "online+humanline") {
    fail("variant must be one of offline, online, offline+humanline, online+humanline; got \"" +
         cfg.variant + "\"");
  }

  // A preset matching the active variant overrides the base document, so a
  // single file can describe a whole sweep coherently.
  if (doc.contains("presets")) {
    const json& presets = doc.at("presets");
    if (!presets.is_object()) fail("presets must be an object keyed by variant");
    if (presets.contains(cfg.variant)) {
      json overlay = presets.at(cfg.variant);
      if (!overlay.is_object()) fail("preset \"" + cfg.variant + "\" must be an object");
      if (overlay.contains("variant") || overlay.contains("presets"))
        fail("a preset cannot change \"variant\" or nest \"presets\"");
      deep_merge(doc, overlay);
    }
    doc.erase("presets");
  }

  check_keys(doc, "(top level)",
             {"task", "objective", "variant", "seeds", "data", "loss", "humanline", "optimizer",
              "train", "policy", "eval", "plot"});

  if (doc.contains("objective"))
    cfg.loss.objective = parse_objective(doc.at("objective").get<std::string>());
  cfg.seeds = get_or(doc, "seeds", cfg.seeds);

  const bool clip_epsilon_given =
      doc.contains("loss") && doc.at("loss").is_object() && doc.at("loss").contains("clip_epsilon");

  if (doc.contains("task")) parse_task(doc.at("task"), cfg.task);
  if (doc.contains("loss")) parse_loss(doc.at("loss"), cfg.loss);
  if (doc.contains("humanline")) parse_humanline(doc.at("humanline"), cfg.hl);
  if (doc.contains("optimizer")) parse_optimizer(doc.at("optimizer"), cfg.optimizer);
  if (doc.contains("train")) parse_train(doc.at("train"), cfg.loop);
  if (doc.contains("policy")) parse_policy(doc.at("policy"), cfg.policy);
  if (doc.contains("data")) parse_data(doc.at("data"), cfg.data);
  if (doc.contains("eval")) parse_eval(doc.at("eval"), cfg.eval);
  if (doc.contains("plot")) parse_plot(doc.at("plot"), cfg.plot);

  // A wide surrogate-clip radius is the stable default for off-policy GRPO
  // without humanline treatment; on-policy and humanline runs use the tight
  // radius. An explicit clip_epsilon always wins.
  if (cfg.loss.objective == objectives::Objective::grpo && !clip_epsilon_given) {
    const bool plain_offline = !variant_is_online(cfg) && !variant_uses_humanline(cfg);
    cfg.loss.clip_epsilon = plain_offline ? 0.50 : 0.15;
  }

  cfg.loop.variant_label = cfg.variant;
  if (cfg.data.sampler_id.empty()) cfg.data.sampler_id = cfg.data.sampler;

  validate_variant_constraints(cfg);
  validate_values(cfg);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string base_dir = std::filesystem::path(path).parent_path().string();
  return parse_run_config(buf.str(), base_dir);
}

}  // namespace hl::config
