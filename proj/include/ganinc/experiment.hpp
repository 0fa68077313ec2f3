#pragma once

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ganinc/config.hpp"
#include "ganinc/learner.hpp"
#include "ganinc/report.hpp"
#include "ganinc/tensor_io.hpp"

namespace ganinc {

namespace fs = std::filesystem;

struct RunResult {
  std::vector<StepRow> rows;
  std::vector<StepReport> reports;
};

// One full incremental run: initialization on the first architecture, then
// one increment per remaining architecture, evaluating after every step.
// Exemplar-store invariants are asserted after every step.
inline RunResult run_experiment(const ExperimentConfig& cfg, const DatasetContainer& data,
                                Learner* out_learner = nullptr) {
  cfg.validate();
  Learner learner(data, cfg.learner_config());
  RunResult result;
  auto record = [&](StepReport report) {
    learner.check_store_invariants();
    StepRow row;
    row.step = report.step;
    row.seen_architectures = learner.registry().architecture_count();
    row.metrics = learner.evaluate();
    row.epochs_run = report.epochs_run;
    result.rows.push_back(std::move(row));
    result.reports.push_back(std::move(report));
  };
  record(learner.initialize({0}));
  for (int arch = 1; arch < cfg.architectures; ++arch) record(learner.increment(arch));
  if (out_learner) *out_learner = std::move(learner);
  return result;
}

// ---- checkpointing ----

inline void save_checkpoint(const fs::path& dir, const Learner& learner) {
  fs::create_directories(dir / "model");
  std::ostringstream manifest;
  manifest << "# name,value,first_moment,second_moment\n";
  manifest << "adam_step = " << learner.model().params.step() << '\n';
  for (const auto& e : learner.model().params.entries()) {
    std::string base = e.name;
    for (auto& ch : base)
      if (ch == '.') ch = '_';
    write_tensor(dir / "model" / (base + ".iltf"), e.value);
    write_tensor(dir / "model" / (base + ".m.iltf"), e.m);
    write_tensor(dir / "model" / (base + ".v.iltf"), e.v);
    manifest << e.name << ",model/" << base << ".iltf,model/" << base << ".m.iltf,model/" << base
             << ".v.iltf\n";
  }
  write_text_file(dir / "model_manifest.txt", manifest.str());

  std::ostringstream reg;
  reg << "# class_id,architecture,origin\n";
  for (int c = 0; c < learner.registry().size(); ++c)
    reg << c << ',' << learner.registry().architecture_of(c) << ','
        << origin_token(learner.registry().origin_of(c)) << '\n';
  write_text_file(dir / "registry.csv", reg.str());

  std::ostringstream ex;
  ex << "# class_id,sample_path\n";
  for (int c = 0; c < learner.store().num_classes(); ++c)
    for (const auto& e : learner.store().exemplars(c))
      ex << c << ',' << learner.data().sample(e.sample_index).rel_path << '\n';
  write_text_file(dir / "exemplars.csv", ex.str());
}

inline Learner load_checkpoint(const fs::path& dir, const ExperimentConfig& cfg,
                               const DatasetContainer& data) {
  std::ifstream manifest(dir / "model_manifest.txt");
  if (!manifest) throw format_error("missing checkpoint manifest: " + dir.string());
  ParameterSet<float> params;
  int64_t adam_step_count = 0;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("adam_step", 0) == 0) {
      adam_step_count = std::stoll(line.substr(line.find('=') + 1));
      continue;
    }
    std::istringstream ls(line);
    std::string name, vp, mp, vvp;
    if (!std::getline(ls, name, ',') || !std::getline(ls, vp, ',') || !std::getline(ls, mp, ',') ||
        !std::getline(ls, vvp))
      throw format_error("checkpoint manifest: bad line '" + line + "'");
    params.add(name, read_tensor(dir / vp));
    auto* e = params.find(name);
    e->m = read_tensor(dir / mp);
    e->v = read_tensor(dir / vvp);
  }

  std::ifstream reg(dir / "registry.csv");
  if (!reg) throw format_error("missing checkpoint registry: " + dir.string());
  std::vector<int> architectures;
  int class_count = 0;
  while (std::getline(reg, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id_s, arch_s, origin_s;
    if (!std::getline(ls, id_s, ',') || !std::getline(ls, arch_s, ',') ||
        !std::getline(ls, origin_s))
      throw format_error("checkpoint registry: bad line '" + line + "'");
    ++class_count;
    if (origin_s == "G") architectures.push_back(std::stoi(arch_s));
  }
  if (class_count != int(architectures.size()) * 2)
    throw format_error("checkpoint registry: classes are not paired per architecture");

  std::vector<std::vector<int>> exemplar_ids(static_cast<size_t>(class_count));
  std::ifstream ex(dir / "exemplars.csv");
  if (!ex) throw format_error("missing checkpoint exemplar manifest: " + dir.string());
  while (std::getline(ex, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id_s, path;
    if (!std::getline(ls, id_s, ',') || !std::getline(ls, path))
      throw format_error("checkpoint exemplar manifest: bad line '" + line + "'");
    int cid = std::stoi(id_s);
    if (cid < 0 || cid >= class_count)
      throw format_error("checkpoint exemplar manifest: class id out of range: " + id_s);
    exemplar_ids[size_t(cid)].push_back(data.find_by_path(path));
  }
  return Learner::restore(data, cfg.learner_config(), std::move(params), adam_step_count,
                          architectures, exemplar_ids);
}

// ---- run output files ----

inline std::vector<int> planned_architectures(const ExperimentConfig& cfg) {
  std::vector<int> archs(size_t(cfg.architectures));
  for (int i = 0; i < cfg.architectures; ++i) archs[size_t(i)] = i;
  return archs;
}

inline void write_run_outputs(const fs::path& dir, const ExperimentConfig& cfg,
                              const RunResult& result, const Learner& learner) {
  fs::create_directories(dir);
  bool with_aux = cfg.variant == Variant::mt_mc;
  write_text_file(dir / "metrics.csv", run_csv(result.rows, planned_architectures(cfg), with_aux));
  write_text_file(dir / "confusion.csv", confusion_csv(result.rows.back().metrics));
  std::vector<CurveSeries> series(1);
  series[0].name = std::string(variant_name(cfg.variant)) + " M=" + cfg.memory_budget.str();
  for (const auto& row : result.rows)
    series[0].points.emplace_back(row.step, row.metrics.detection_acc);
  if (with_aux) {
    CurveSeries aux;
    aux.name = "mt_mc detector head";
    for (const auto& row : result.rows)
      aux.points.emplace_back(row.step, row.metrics.aux_detector_acc.value_or(0.0));
    series.push_back(std::move(aux));
  }
  write_text_file(dir / "curve.svg", emit_svg_curve(series));
  write_text_file(dir / "config_resolved.txt", cfg.serialize());
  save_checkpoint(dir / "checkpoint", learner);
}

// ---- CLI command cores ----

inline fs::path dataset_dir(const ExperimentConfig& cfg) {
  return fs::path(cfg.output_dir) / "dataset";
}

inline void cmd_gen_data(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  auto data = generate_dataset(cfg.architecture_specs(), cfg.image_shape(), cfg.split_counts(),
                               cfg.seed);
  write_container(dataset_dir(cfg), data);
  for (int arch = 0; arch < cfg.architectures; ++arch) {
    log << "arch " << arch << ": ";
    for (Origin o : {Origin::gan, Origin::real})
      for (Split s : {Split::train, Split::val, Split::test})
        log << origin_token(o) << '/' << split_token(s) << '='
            << data.indices(arch, o, s).size() << ' ';
    log << '\n';
  }
  log << "dataset written to " << dataset_dir(cfg).string() << "\n";
}

inline DatasetContainer load_dataset(const ExperimentConfig& cfg) {
  fs::path dir = dataset_dir(cfg);
  if (!fs::exists(dir / "manifest.txt"))
    throw config_error("dataset not found at " + dir.string() + " (run gen-data first)");
  return read_container(dir);
}

inline void cmd_run(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  auto data = load_dataset(cfg);
  Learner learner(data, cfg.learner_config());
  auto result = run_experiment(cfg, data, &learner);
  write_run_outputs(cfg.output_dir, cfg, result, learner);
  for (const auto& row : result.rows)
    log << "step " << row.step << ": detection " << csv_real(row.metrics.detection_acc)
        << ", classification " << csv_real(row.metrics.classification_acc) << ", epochs "
        << row.epochs_run << '\n';
  log << "outputs written to " << cfg.output_dir << '\n';
}

inline void cmd_eval(const ExperimentConfig& cfg, const fs::path& run_dir, std::ostream& log) {
  cfg.validate();
  auto data = load_dataset(cfg);
  Learner learner = load_checkpoint(run_dir / "checkpoint", cfg, data);
  MetricsReport m = learner.evaluate();
  StepRow row;
  row.step = learner.registry().architecture_count();
  row.seen_architectures = learner.registry().architecture_count();
  row.metrics = m;
  row.epochs_run = 0;
  std::vector<int> archs = learner.registry().architectures();
  write_text_file(run_dir / "eval_metrics.csv",
                  run_csv({row}, archs, cfg.variant == Variant::mt_mc));
  write_text_file(run_dir / "eval_confusion.csv", confusion_csv(m));
  log << "detection " << csv_real(m.detection_acc) << ", classification "
      << csv_real(m.classification_acc) << " over " << archs.size() << " architectures\n";
}

// Runs tasks on up to `jobs` worker threads; rethrows the first failure.
inline void run_parallel(int jobs, std::vector<std::function<void()>>& tasks) {
  jobs = std::max(1, std::min<int>(jobs, int(tasks.size())));
  if (jobs == 1) {
    for (auto& t : tasks) t();
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> workers;
  for (int w = 0; w < jobs; ++w)
    workers.emplace_back([&] {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= tasks.size()) return;
        try {
          tasks[i]();
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

inline const std::vector<Variant>& declared_variants() {
  static const std::vector<Variant> v = {Variant::base_icarl, Variant::mt_mc, Variant::mt_sc,
                                         Variant::finetune};
  return v;
}

// Final detection accuracy per (variant, budget) cell at a constant seed.
inline void cmd_budget_sweep(const ExperimentConfig& cfg, const std::vector<Budget>& budgets,
                             const std::vector<Variant>& variants, int jobs, std::ostream& log) {
  cfg.validate();
  if (budgets.empty()) throw config_error("budget sweep: empty budget list");
  auto data = load_dataset(cfg);
  struct Cell {
    Variant variant;
    Budget budget;
    double final_acc = 0;
  };
  std::vector<Cell> cells;
  for (Variant v : variants)
    for (const Budget& b : budgets) cells.push_back({v, b, 0});

  std::vector<std::function<void()>> tasks;
  for (size_t i = 0; i < cells.size(); ++i)
    tasks.push_back([&, i] {
      ExperimentConfig cell_cfg = cfg;
      cell_cfg.variant = cells[i].variant;
      cell_cfg.memory_budget = cells[i].budget;
      cell_cfg.lambda = -1;
      cell_cfg.resolve();
      fs::path cell_dir = fs::path(cfg.output_dir) / "sweep" /
                          (std::string(variant_name(cells[i].variant)) + "_M" +
                           cells[i].budget.str());
      cell_cfg.output_dir = cell_dir.string();
      Learner learner(data, cell_cfg.learner_config());
      auto result = run_experiment(cell_cfg, data, &learner);
      fs::path tmp = cell_dir;
      tmp += ".tmp";
      fs::remove_all(tmp);
      write_run_outputs(tmp, cell_cfg, result, learner);
      fs::remove_all(cell_dir);
      fs::rename(tmp, cell_dir);
      cells[i].final_acc = result.rows.back().metrics.detection_acc;
    });
  run_parallel(jobs, tasks);

  std::ostringstream os;
  os << "variant";
  for (const Budget& b : budgets) os << ",M_" << b.str();
  os << '\n';
  for (Variant v : variants) {
    os << variant_name(v);
    for (const Budget& b : budgets)
      for (const Cell& c : cells)
        if (c.variant == v && c.budget.unlimited == b.unlimited && c.budget.total == b.total)
          os << ',' << csv_real(c.final_acc);
    os << '\n';
  }
  fs::create_directories(cfg.output_dir);
  write_text_file(fs::path(cfg.output_dir) / "budget_sweep.csv", os.str());
  log << os.str();
}

// Lambda/temperature grid for the two multi-task variants, stopping after
// the third architecture.
inline void cmd_ablate(const ExperimentConfig& cfg, const std::vector<double>& lambdas,
                       const std::vector<double>& temperatures, int jobs, std::ostream& log) {
  cfg.validate();
  if (lambdas.empty() || temperatures.empty())
    throw config_error("ablate: empty lambda or temperature list");
  ExperimentConfig base = cfg;
  base.architectures = std::min(cfg.architectures, 3);
  auto data = load_dataset(cfg);

  const std::vector<Variant> variants = {Variant::mt_sc, Variant::mt_mc};
  struct Cell {
    Variant variant;
    double lambda, temperature;
    double final_acc = 0;
  };
  std::vector<Cell> cells;
  for (Variant v : variants)
    for (double t : temperatures)
      for (double l : lambdas) cells.push_back({v, l, t, 0});

  std::vector<std::function<void()>> tasks;
  for (size_t i = 0; i < cells.size(); ++i)
    tasks.push_back([&, i] {
      ExperimentConfig cell_cfg = base;
      cell_cfg.variant = cells[i].variant;
      cell_cfg.lambda = cells[i].lambda;
      cell_cfg.temperature = cells[i].temperature;
      std::ostringstream name;
      name << variant_name(cells[i].variant) << "_l" << config_detail::real_str(cells[i].lambda)
           << "_T" << config_detail::real_str(cells[i].temperature);
      fs::path cell_dir = fs::path(cfg.output_dir) / "ablate" / name.str();
      cell_cfg.output_dir = cell_dir.string();
      Learner learner(data, cell_cfg.learner_config());
      auto result = run_experiment(cell_cfg, data, &learner);
      fs::path tmp = cell_dir;
      tmp += ".tmp";
      fs::remove_all(tmp);
      write_run_outputs(tmp, cell_cfg, result, learner);
      fs::remove_all(cell_dir);
      fs::rename(tmp, cell_dir);
      cells[i].final_acc = result.rows.back().metrics.detection_acc;
    });
  run_parallel(jobs, tasks);

  std::ostringstream os;
  os << "variant,temperature";
  for (double l : lambdas) os << ",lambda_" << config_detail::real_str(l);
  os << ",argmax\n";
  for (Variant v : variants) {
    double best = -1;
    double best_l = 0, best_t = 0;
    for (const Cell& c : cells)
      if (c.variant == v && c.final_acc > best) {
        best = c.final_acc;
        best_l = c.lambda;
        best_t = c.temperature;
      }
    for (double t : temperatures) {
      os << variant_name(v) << ',' << config_detail::real_str(t);
      for (double l : lambdas)
        for (const Cell& c : cells)
          if (c.variant == v && c.temperature == t && c.lambda == l)
            os << ',' << csv_real(c.final_acc);
      if (t == best_t)
        os << ",lambda=" << config_detail::real_str(best_l) << " T="
           << config_detail::real_str(best_t);
      else
        os << ',';
      os << '\n';
    }
  }
  fs::create_directories(cfg.output_dir);
  write_text_file(fs::path(cfg.output_dir) / "ablation.csv", os.str());
  log << os.str();
}

}  // namespace ganinc
