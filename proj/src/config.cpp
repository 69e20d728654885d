#include "h2e/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "h2e/error.hpp"

namespace h2e::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

template <typename T>
T parse_num(const std::string& key, const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(key + ": '" + v + "' is not a valid number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define H2E_NUM(KEY, MEMBER, TYPE)                                                         \
  Field {                                                                                  \
    KEY, [](const ExperimentConfig& c) { return fmt(static_cast<double>(c.MEMBER)); },     \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_num<TYPE>(KEY, v); } \
  }
#define H2E_INT(KEY, MEMBER, TYPE)                                                         \
  Field {                                                                                  \
    KEY, [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); },               \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_num<TYPE>(KEY, v); } \
  }
#define H2E_BOOL(KEY, MEMBER)                                                              \
  Field {                                                                                  \
    KEY, [](const ExperimentConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }, \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_bool(KEY, v); }   \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      H2E_INT("seed", seed, std::uint64_t),
      H2E_INT("data.class_count", class_count, int),
      H2E_INT("data.feature_dim", feature_dim, int),
      H2E_INT("data.context_count", context_count, int),
      H2E_INT("data.n_max", n_max, int),
      H2E_NUM("data.eta", eta, double),
      H2E_NUM("data.rho", rho, double),
      H2E_NUM("data.blue_fraction", blue_fraction, double),
      H2E_NUM("data.signal_scale", signal_scale, double),
      H2E_NUM("data.context_scale", context_scale, double),
      H2E_NUM("data.noise_scale", noise_scale, double),
      H2E_NUM("data.head_context_entropy", head_context_entropy, double),
      H2E_NUM("data.tail_context_entropy", tail_context_entropy, double),
      H2E_INT("data.test_per_class", test_per_class, int),
      H2E_INT("train.epochs", epochs, int),
      H2E_INT("train.iterations", iterations, int),
      H2E_INT("train.batch_size", batch_size, int),
      H2E_NUM("train.lr", lr, double),
      H2E_NUM("train.momentum", momentum, double),
      H2E_NUM("train.weight_decay", weight_decay, double),
      H2E_BOOL("train.cosine", cosine),
      Field{"train.hidden", [](const ExperimentConfig& c) { return join(c.hidden); },
            [](ExperimentConfig& c, const std::string& v) {
              c.hidden.clear();
              for (const auto& t : split_list(v)) c.hidden.push_back(parse_num<int>("train.hidden", t));
            }},
      H2E_INT("train.warmup_epochs", warmup_epochs, int),
      H2E_INT("train.stage2_epochs", stage2_epochs, int),
      H2E_NUM("train.w_min", w_min, double),
      H2E_BOOL("train.density_weighting", density_weighting),
      H2E_NUM("train.theta_floor", theta_floor, double),
      H2E_NUM("train.initial_w", initial_w, double),
      H2E_BOOL("train.scalar_w", scalar_w),
      H2E_BOOL("train.drop_flagged", drop_flagged),
      H2E_NUM("irm.lambda", irm_lambda, double),
      H2E_INT("irm.warm_steps", irm_warm_steps, int),
      H2E_INT("irm.steps", irm_steps, int),
      H2E_INT("irm.batch_size", irm_batch_size, int),
      H2E_NUM("irm.lr", irm_lr, double),
      H2E_NUM("irm.momentum", irm_momentum, double),
      H2E_INT("env.count", env_count, int),
      Field{"env.samplers", [](const ExperimentConfig& c) { return join(c.env_samplers); },
            [](ExperimentConfig& c, const std::string& v) { c.env_samplers = split_list(v); }},
      Field{"env.aug_tiers", [](const ExperimentConfig& c) { return join(c.env_aug_tiers); },
            [](ExperimentConfig& c, const std::string& v) { c.env_aug_tiers = split_list(v); }},
      H2E_NUM("env.simple_jitter", tiers.simple_jitter, double),
      H2E_NUM("env.strong_jitter", tiers.strong_jitter, double),
      H2E_NUM("env.strong_dropout", tiers.strong_dropout, double),
      H2E_NUM("env.strong_scale_lo", tiers.strong_scale_lo, double),
      H2E_NUM("env.strong_scale_hi", tiers.strong_scale_hi, double),
      Field{"eval.budget",
            [](const ExperimentConfig& c) { return c.flag_budget == 0 ? std::string("noise") : std::to_string(c.flag_budget); },
            [](ExperimentConfig& c, const std::string& v) {
              c.flag_budget = v == "noise" ? 0 : parse_num<std::size_t>("eval.budget", v);
            }},
      Field{"eval.threshold",
            [](const ExperimentConfig& c) { return c.flag_threshold ? fmt(*c.flag_threshold) : std::string("none"); },
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "none") c.flag_threshold.reset();
              else c.flag_threshold = parse_num<double>("eval.threshold", v);
            }},
      Field{"eval.baselines", [](const ExperimentConfig& c) { return join(c.baselines); },
            [](ExperimentConfig& c, const std::string& v) { c.baselines = split_list(v); }},
      H2E_INT("eval.smallloss_warmup_epochs", smallloss_warmup_epochs, int),
      Field{"eval.smallloss_drop_rate",
            [](const ExperimentConfig& c) { return c.smallloss_drop_rate ? fmt(*c.smallloss_drop_rate) : std::string("rho"); },
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "rho") c.smallloss_drop_rate.reset();
              else c.smallloss_drop_rate = parse_num<double>("eval.smallloss_drop_rate", v);
            }},
      Field{"output.dir", [](const ExperimentConfig& c) { return c.output_dir; },
            [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; }},
  };
  return table;
}

#undef H2E_NUM
#undef H2E_INT
#undef H2E_BOOL

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

void ExperimentConfig::validate() const {
  require(class_count >= 2, "data.class_count: must be >= 2");
  require(feature_dim >= 1, "data.feature_dim: must be >= 1");
  require(context_count >= 1, "data.context_count: must be >= 1");
  require(n_max >= 1, "data.n_max: must be >= 1");
  require(eta >= 1.0, "data.eta: must be >= 1");
  require(n_max / eta >= 1.0 - 1e-12, "data.n_max: n_max / eta must be >= 1");
  require(rho >= 0.0 && rho < 1.0, "data.rho: must lie in [0, 1)");
  require(blue_fraction >= 0.0 && blue_fraction <= 1.0, "data.blue_fraction: must lie in [0, 1]");
  require(blue_fraction == 1.0 || rho == 0.0 || feature_dim > class_count,
          "data.feature_dim: red noise needs feature_dim > class_count");
  require(signal_scale >= 0.0 && context_scale >= 0.0 && noise_scale >= 0.0, "data.*_scale: must be >= 0");
  require(head_context_entropy >= 0.0 && head_context_entropy <= 1.0, "data.head_context_entropy: must lie in [0, 1]");
  require(tail_context_entropy >= 0.0 && tail_context_entropy <= 1.0, "data.tail_context_entropy: must lie in [0, 1]");
  require(test_per_class >= 1, "data.test_per_class: must be >= 1");
  require(iterations >= 1, "train.iterations: must be >= 1");
  require(batch_size >= 1, "train.batch_size: must be >= 1");
  require(lr > 0.0, "train.lr: must be > 0");
  require(momentum >= 0.0 && momentum < 1.0, "train.momentum: must lie in [0, 1)");
  require(weight_decay >= 0.0, "train.weight_decay: must be >= 0");
  require(!hidden.empty(), "train.hidden: need at least one hidden layer");
  for (int h : hidden) require(h >= 1, "train.hidden: widths must be >= 1");
  require(warmup_epochs >= 1, "train.warmup_epochs: must be >= 1");
  require(stage2_epochs >= 0, "train.stage2_epochs: must be >= 0");
  require(mixup_epochs() >= 0, "train.epochs: budget smaller than warm-up plus stage-2 epochs");
  require(w_min >= 0.0 && w_min <= 1.0, "train.w_min: must lie in [0, 1]");
  require(theta_floor > 0.0 && theta_floor < 1.0, "train.theta_floor: must lie in (0, 1)");
  require(std::isfinite(initial_w), "train.initial_w: must be finite");
  require(std::isfinite(irm_lambda) && irm_lambda >= 0.0, "irm.lambda: must be finite and >= 0");
  require(irm_warm_steps >= 0, "irm.warm_steps: must be >= 0");
  require(irm_steps >= 0, "irm.steps: must be >= 0");
  require(irm_batch_size >= 1, "irm.batch_size: must be >= 1");
  require(irm_lr > 0.0, "irm.lr: must be > 0");
  require(irm_momentum >= 0.0 && irm_momentum < 1.0, "irm.momentum: must lie in [0, 1)");
  require(env_count >= 2 && env_count <= 4, "env.count: must be between 2 and 4");
  if (!env_samplers.empty() || !env_aug_tiers.empty()) {
    require(env_samplers.size() == static_cast<std::size_t>(env_count),
            "env.samplers: need one sampler per environment");
    require(env_aug_tiers.size() == static_cast<std::size_t>(env_count),
            "env.aug_tiers: need one tier per environment");
    for (const auto& s : env_samplers) envs::sampler_from_string(s);
    for (const auto& t : env_aug_tiers) envs::tier_from_string(t);
  }
  for (auto k : {envs::TierKind::kSimple, envs::TierKind::kStrong}) envs::make_tier(k, noise_scale, tiers);
  if (flag_threshold) require(*flag_threshold > 0.0 && *flag_threshold <= 1.0, "eval.threshold: must lie in (0, 1]");
  for (const auto& b : baselines)
    require(b == "ce" || b == "la" || b == "smallloss", "eval.baselines: unknown baseline '" + b + "'");
  require(smallloss_warmup_epochs >= 0 && smallloss_warmup_epochs <= epochs,
          "eval.smallloss_warmup_epochs: must lie in [0, train.epochs]");
  if (smallloss_drop_rate)
    require(*smallloss_drop_rate >= 0.0 && *smallloss_drop_rate < 1.0, "eval.smallloss_drop_rate: must lie in [0, 1)");
  require(!output_dir.empty(), "output.dir: must not be empty");
}

data::GeneratorParams ExperimentConfig::generator_params() const {
  return {class_count, context_count, feature_dim, signal_scale, context_scale, noise_scale,
          head_context_entropy, tail_context_entropy};
}

data::BundleParams ExperimentConfig::bundle_params() const {
  return {eta, n_max, rho, blue_fraction, test_per_class};
}

pipeline::H2EConfig ExperimentConfig::h2e_config() const {
  pipeline::H2EConfig h;
  h.seed = seed;
  h.iterations = iterations;
  h.train.batch_size = batch_size;
  h.train.sgd = {lr, momentum, weight_decay};
  h.train.cosine = cosine;
  h.warmup.epochs = warmup_epochs;
  h.warmup.hidden = hidden;
  h.warmup.w_min = w_min;
  h.warmup.density_weighting = density_weighting;
  h.mixup_epochs = mixup_epochs();
  h.irm = {irm_lambda, irm_warm_steps, irm_steps, irm_batch_size, irm_lr, irm_momentum};
  h.initial_w = initial_w;
  h.scalar_w = scalar_w;
  h.stage2.epochs = stage2_epochs;
  h.stage2.theta_floor = theta_floor;
  h.env_count = env_count;
  for (std::size_t e = 0; e < env_samplers.size(); ++e)
    h.env_specs.push_back({envs::sampler_from_string(env_samplers[e]), envs::tier_from_string(env_aug_tiers[e])});
  h.tier_params = tiers;
  h.noise_scale = noise_scale;
  h.drop_flagged = drop_flagged;
  h.flag_budget = flag_budget;
  h.flag_threshold = flag_threshold;
  return h;
}

eval::BaselineConfig ExperimentConfig::baseline_config() const {
  eval::BaselineConfig b;
  b.epochs = epochs;
  b.hidden = hidden;
  b.train.batch_size = batch_size;
  b.train.sgd = {lr, momentum, weight_decay};
  b.train.cosine = cosine;
  b.smallloss_warmup_epochs = smallloss_warmup_epochs;
  b.drop_rate = smallloss_drop_rate.value_or(rho);
  b.flag_budget = flag_budget;
  return b;
}

ExperimentConfig ExperimentConfig::reference() { return ExperimentConfig{}; }

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    if (it == table.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "key '" + key + "' given twice");
    try {
      it->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string echo(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

data::GenerativeSpec make_spec(const ExperimentConfig& cfg) {
  Rng rng = Rng::stream(cfg.seed, "data.spec");
  return data::make_generative_spec(cfg.generator_params(), rng);
}

data::DatasetBundle make_bundle(const ExperimentConfig& cfg) {
  return data::build_bundle(make_spec(cfg), cfg.bundle_params(), cfg.seed);
}

}  // namespace h2e::config
