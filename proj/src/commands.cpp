#include "h2e/commands.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "h2e/config.hpp"
#include "h2e/error.hpp"
#include "h2e/eval.hpp"
#include "h2e/pipeline.hpp"
#include "json.hpp"

namespace h2e::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

config::ExperimentConfig resolve_config(const CommandOptions& opts) {
  config::ExperimentConfig cfg =
      opts.config_path.empty() ? config::ExperimentConfig::reference() : config::load_config(opts.config_path);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.out) cfg.output_dir = *opts.out;
  cfg.validate();
  return cfg;
}

std::string digest(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const pipeline::StageError& e) {
    err << "stage failure " << e.what() << '\n';
    return kExitStage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

std::map<std::string, std::string> read_echo(const fs::path& p) {
  std::map<std::string, std::string> kv;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string pct(const ordered_json& v) {
  if (!v.is_number()) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v.get<double>();
  return os.str();
}

const std::vector<std::string> kReportColumns = {"top1.overall", "top1.many", "top1.medium", "top1.few",
                                                 "noise.precision.overall", "noise.precision.few"};

}  // namespace

int cmd_generate(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto cfg = resolve_config(opts);
    const fs::path dir = opts.out ? fs::path(*opts.out) : fs::path(cfg.output_dir) / "data";
    if (opts.dry_run) {
      out << "would write bundle to " << dir.string() << '\n';
      return kExitOk;
    }
    const auto bundle = config::make_bundle(cfg);
    data::write_bundle(bundle, dir);

    std::vector<int> noise(bundle.class_count(), 0);
    for (const auto& r : bundle.train)
      if (r.is_noise) ++noise[r.noise_kind == data::NoiseKind::kBlue ? r.clean_label : r.observed_label];
    out << "class  clean  observed  noise  rate\n";
    for (int c = 0; c < bundle.class_count(); ++c) {
      const int n = bundle.meta.clean_counts[c];
      out << std::setw(5) << c << std::setw(7) << n << std::setw(10) << bundle.class_counts[c] << std::setw(7)
          << noise[c] << "  " << std::fixed << std::setprecision(4) << (n ? static_cast<double>(noise[c]) / n : 0.0)
          << '\n';
    }
    out << std::defaultfloat << "train=" << bundle.train.size() << " test=" << bundle.test.size()
        << " noise=" << bundle.noise_count() << " -> " << dir.string() << '\n';
    return kExitOk;
  });
}

int cmd_train(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto cfg = resolve_config(opts);
    std::string method = opts.method.value_or("");
    if (!method.empty() && method != "h2e" && method != "ce" && method != "la" && method != "smallloss")
      throw ConfigError("--method: expected h2e, ce, la or smallloss, got '" + method + "'");
    const bool run_h2e = method.empty() || method == "h2e";
    std::set<std::string> baselines;
    if (method.empty()) baselines.insert(cfg.baselines.begin(), cfg.baselines.end());
    else if (method != "h2e") baselines.insert(method);

    const auto h2e = cfg.h2e_config();
    h2e.validate();
    if (opts.dry_run) {
      out << "config ok\n"
          << "stage0 warm-up: " << cfg.warmup_epochs << " epochs\n";
      int epoch = cfg.warmup_epochs;
      for (int t = 1; t <= cfg.iterations; ++t) {
        const int m = h2e.mixup_epochs_for(t);
        out << "stage1 iteration " << t << ": identifier " << cfg.irm_steps << " steps x " << h2e.env_count
            << " environments, mixup epochs " << epoch << "-" << (epoch + m - 1) << " (" << m << ")\n";
        epoch += m;
      }
      out << "stage2 head: " << cfg.stage2_epochs << " epochs\n"
          << "network epoch budget: " << cfg.epochs << '\n'
          << "methods:" << (run_h2e ? " h2e" : "");
      for (const auto& b : baselines) out << ' ' << b;
      out << '\n';
      return kExitOk;
    }

    const fs::path dir(cfg.output_dir);
    fs::create_directories(dir / "checkpoints");
    const std::string echo = config::echo(cfg);
    write_text(dir / "config.echo", echo);
    std::ofstream log_file(dir / "log.txt", std::ios::binary);
    const LogFn log = [&](const std::string& line) {
      log_file << line << '\n';
      spdlog::debug("{}", line);
    };

    const auto bundle = config::make_bundle(cfg);
    data::write_bundle(bundle, dir / "data");

    ordered_json report;
    report["seed"] = cfg.seed;
    auto located = cfg;
    located.output_dir.clear();
    report["config"] = digest(config::echo(located));
    report["methods"] = ordered_json::object();

    if (run_h2e) {
      spdlog::info("h2e: T={} epochs={}", cfg.iterations, cfg.epochs);
      const auto result = pipeline::run_h2e(bundle, h2e, dir, log);
      report["methods"]["h2e"] = result.report.to_json();
    }
    const auto bc = cfg.baseline_config();
    if (baselines.count("ce") || baselines.count("la")) {
      spdlog::info("baseline ce/la");
      const auto ce = eval::baseline_ce(bundle, bc, cfg.seed, log);
      nn::save_checkpoint(ce.net, (dir / "checkpoints" / "ce.txt").string());
      if (baselines.count("ce")) report["methods"]["ce"] = ce.report.to_json();
      if (baselines.count("la")) report["methods"]["la"] = eval::logit_adjusted_report(ce.net, bundle, cfg.seed).to_json();
    }
    if (baselines.count("smallloss")) {
      spdlog::info("baseline smallloss");
      const auto sl = eval::baseline_smallloss(bundle, bc, cfg.seed, log);
      nn::save_checkpoint(sl.net, (dir / "checkpoints" / "smallloss.txt").string());
      report["methods"]["smallloss"] = sl.report.to_json();
    }
    write_text(dir / "report.json", report.dump(2) + "\n");

    for (const auto& [name, m] : report["methods"].items())
      out << std::setw(10) << std::left << name << " top1=" << pct(m["top1.overall"]) << " few=" << pct(m["top1.few"])
          << '\n';
    out << "run directory: " << dir.string() << '\n';
    return kExitOk;
  });
}

int cmd_eval(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opts.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
    const auto cfg = resolve_config(opts);
    const auto bundle = opts.data_dir.empty() ? config::make_bundle(cfg) : data::read_bundle(opts.data_dir);
    const auto net = nn::load_checkpoint(opts.checkpoint);
    if (net.feature_dim() != bundle.feature_dim() || net.class_count() != bundle.class_count())
      throw ShapeError("eval: checkpoint dimensions do not match the bundle");
    const bool la = opts.method && *opts.method == "la";
    auto report = la ? eval::logit_adjusted_report(net, bundle, cfg.seed) : eval::evaluate("checkpoint", net, bundle);
    report.seed = cfg.seed;
    out << report.to_json().dump(2) << '\n';
    return kExitOk;
  });
}

int cmd_report(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    struct Run {
      std::string name;
      ordered_json report;
      std::map<std::string, std::string> echo;
    };
    std::vector<Run> runs;
    for (const auto& d : opts.run_dirs) {
      const fs::path p(d);
      std::ifstream in(p / "report.json");
      if (!in) {
        err << "warning: no report.json in " << d << ", skipped\n";
        continue;
      }
      Run r;
      r.name = p.filename().empty() ? p.parent_path().filename().string() : p.filename().string();
      try {
        r.report = ordered_json::parse(in);
      } catch (const std::exception& e) {
        err << "warning: unreadable report.json in " << d << " (" << e.what() << "), skipped\n";
        continue;
      }
      r.echo = read_echo(p / "config.echo");
      runs.push_back(std::move(r));
    }
    if (runs.empty()) {
      err << "error: no reports found\n";
      return kExitFailure;
    }

    std::set<std::string> diff_keys;
    for (std::size_t i = 1; i < runs.size(); ++i) {
      std::set<std::string> keys;
      for (const auto& [k, v] : runs[0].echo) keys.insert(k);
      for (const auto& [k, v] : runs[i].echo) keys.insert(k);
      for (const auto& k : keys) {
        if (k == "seed" || k == "output.dir") continue;
        auto a = runs[0].echo.find(k);
        auto b = runs[i].echo.find(k);
        if (a == runs[0].echo.end() || b == runs[i].echo.end() || a->second != b->second) diff_keys.insert(k);
      }
    }
    if (!diff_keys.empty()) {
      out << "WARNING: runs were produced from different configurations; differing keys:";
      for (const auto& k : diff_keys) out << ' ' << k;
      out << '\n';
    }

    const int wname = 16, wmethod = 10, wcol = 14;
    out << std::left << std::setw(wname) << "run" << std::setw(wmethod) << "method";
    for (const auto& c : kReportColumns) out << std::right << std::setw(wcol) << c;
    out << '\n';

    std::ofstream csv;
    if (!opts.csv_path.empty()) {
      csv.open(opts.csv_path);
      if (!csv) throw Error("cannot write " + opts.csv_path);
      csv << "run,method";
      for (const auto& c : kReportColumns) csv << ',' << c;
      csv << '\n' << std::setprecision(17);
    }

    std::vector<std::string> method_order;
    std::map<std::string, std::map<std::string, std::vector<double>>> samples;
    for (const auto& r : runs) {
      if (!r.report.contains("methods")) continue;
      for (const auto& [method, m] : r.report["methods"].items()) {
        if (std::find(method_order.begin(), method_order.end(), method) == method_order.end())
          method_order.push_back(method);
        out << std::left << std::setw(wname) << r.name << std::setw(wmethod) << method;
        if (csv.is_open()) csv << r.name << ',' << method;
        for (const auto& c : kReportColumns) {
          const auto v = m.contains(c) ? m[c] : ordered_json(nullptr);
          out << std::right << std::setw(wcol) << pct(v);
          if (csv.is_open()) {
            csv << ',';
            if (v.is_number()) csv << v.get<double>();
          }
          if (v.is_number()) samples[method][c].push_back(v.get<double>());
        }
        out << '\n';
        if (csv.is_open()) csv << '\n';
      }
    }

    std::set<std::string> seeds;
    for (const auto& r : runs) seeds.insert(r.echo.count("seed") ? r.echo.at("seed") : r.name);
    if (runs.size() > 1 && diff_keys.empty() && seeds.size() > 1) {
      for (const auto& method : method_order) {
        out << std::left << std::setw(wname) << "mean+-std" << std::setw(wmethod) << method;
        for (const auto& c : kReportColumns) {
          const auto& xs = samples[method][c];
          if (xs.empty()) {
            out << std::right << std::setw(wcol) << "-";
            continue;
          }
          double mean = 0.0;
          for (double x : xs) mean += x;
          mean /= static_cast<double>(xs.size());
          double var = 0.0;
          for (double x : xs) var += (x - mean) * (x - mean);
          const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
          std::ostringstream cell;
          cell << std::fixed << std::setprecision(2) << 100.0 * mean << "+-" << 100.0 * sd;
          out << std::right << std::setw(wcol) << cell.str();
        }
        out << '\n';
      }
    }
    return kExitOk;
  });
}

}  // namespace h2e::cli
