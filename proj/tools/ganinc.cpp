// Incremental GAN-image detection experiments.
//
//   ganinc gen-data  [flags]      generate the synthetic dataset
//   ganinc run       [flags]      one incremental run, CSV + SVG outputs
//   ganinc budget-sweep [flags]   variant x budget grid (--budgets)
//   ganinc ablate    [flags]      lambda x temperature grid (--lambdas, --temperatures)
//   ganinc eval      [flags]      metrics from a saved checkpoint (--out names the run dir)
//
// Common flags: --config <path>, --out <dir>, --seed <u64>, --set key=value,
// --jobs <n>. Exit status: 0 ok, 2 bad configuration, 1 runtime failure.

#include <cstdio>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "ganinc/experiment.hpp"

using namespace ganinc;

namespace {

int usage(std::ostream& os) {
  os << "usage: ganinc <gen-data|run|budget-sweep|ablate|eval> [flags]\n"
        "flags:\n"
        "  --config <path>        key = value configuration file\n"
        "  --out <dir>            output directory (overrides output_dir)\n"
        "  --seed <u64>           run seed (overrides seed)\n"
        "  --set <key=value>      override any config key; repeatable\n"
        "  --jobs <n>             parallel cells for sweeps (default: hardware)\n"
        "  --budgets <list>       budget-sweep budgets, e.g. inf,128,32,0\n"
        "  --lambdas <list>       ablation lambdas, e.g. 0.25,0.5,1\n"
        "  --temperatures <list>  ablation temperatures, e.g. 1,2,3\n";
  return 2;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<Budget> parse_budgets(const std::string& s) {
  std::vector<Budget> out;
  for (const auto& tok : split_csv(s)) {
    if (tok == "inf")
      out.push_back(Budget::infinite());
    else
      out.push_back(Budget::of(config_detail::parse_int("budgets", tok)));
  }
  return out;
}

std::vector<double> parse_reals(const std::string& key, const std::string& s) {
  std::vector<double> out;
  for (const auto& tok : split_csv(s)) out.push_back(config_detail::parse_real(key, tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) return usage(std::cerr);
  std::string command = argv[1];

  std::string config_path, out_dir, seed_str;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::vector<Budget> budgets = {Budget::infinite(), Budget::of(128), Budget::of(32),
                                 Budget::of(0)};
  std::vector<double> lambdas = {0.25, 0.5, 1.0};
  std::vector<double> temperatures = {1.0, 2.0, 3.0};
  int jobs = int(std::thread::hardware_concurrency());
  if (jobs < 1) jobs = 1;

  try {
    for (int i = 2; i < argc; ++i) {
      std::string flag = argv[i];
      auto need_value = [&]() -> std::string {
        if (i + 1 >= argc) throw config_error("missing value for " + flag);
        return argv[++i];
      };
      if (flag == "--config") config_path = need_value();
      else if (flag == "--out") out_dir = need_value();
      else if (flag == "--seed") seed_str = need_value();
      else if (flag == "--set") {
        std::string kv = need_value();
        size_t eq = kv.find('=');
        if (eq == std::string::npos) throw config_error("--set expects key=value, got '" + kv + "'");
        overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
      } else if (flag == "--jobs") jobs = int(config_detail::parse_int("jobs", need_value()));
      else if (flag == "--budgets") budgets = parse_budgets(need_value());
      else if (flag == "--lambdas") lambdas = parse_reals("lambdas", need_value());
      else if (flag == "--temperatures") temperatures = parse_reals("temperatures", need_value());
      else if (flag == "--help" || flag == "-h") { usage(std::cout); return 0; }
      else throw config_error("unknown flag: " + flag);
    }

    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{}
                                               : ExperimentConfig::from_file(config_path);
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    if (!seed_str.empty()) cfg.set("seed", seed_str);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    cfg.resolve();

    if (command == "gen-data") cmd_gen_data(cfg, std::cout);
    else if (command == "run") cmd_run(cfg, std::cout);
    else if (command == "budget-sweep")
      cmd_budget_sweep(cfg, budgets, declared_variants(), jobs, std::cout);
    else if (command == "ablate") cmd_ablate(cfg, lambdas, temperatures, jobs, std::cout);
    else if (command == "eval")
      cmd_eval(cfg, out_dir.empty() ? fs::path(cfg.output_dir) : fs::path(out_dir), std::cout);
    else {
      std::cerr << "unknown command: " << command << "\n";
      return usage(std::cerr);
    }
  } catch (const config_error& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
