// fairscl command-line entry point: generate, train, evaluate, sweep, report.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fairscl/experiment.hpp"

namespace fs = std::filesystem;
using namespace fairscl;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  std::optional<int> workers;
  std::string out;
  std::vector<std::string> methods;
};

void add_common(CLI::App* cmd, Overrides& o, bool with_methods) {
  cmd->add_option("--config", o.config, "experiment config (JSON); defaults apply when omitted")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "base seed");
  cmd->add_option("--out", o.out, "output directory");
  if (with_methods) {
    cmd->add_option("--runs", o.runs, "runs per method (seeds base..base+runs-1)");
    cmd->add_option("--workers", o.workers, "parallel worker threads");
    cmd->add_option("--method", o.methods, "method tag: ce, inlp, adv, con, con_ft, ce+scl, ce-fcl")
        ->delimiter(',');
  }
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_experiment_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.runs) cfg.runs = *o.runs;
  if (o.workers) cfg.workers = *o.workers;
  if (!o.out.empty()) cfg.out = o.out;
  if (!o.methods.empty()) {
    cfg.methods.clear();
    for (const auto& m : o.methods) cfg.methods.push_back(method_from_string(m));
  }
  cfg.validate();
  return cfg;
}

std::pair<SweepAxis, std::vector<double>> parse_sweep(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw ValidationError("--sweep expects <axis>=<v1,v2,...>, got '" + spec + "'");
  const SweepAxis axis = sweep_axis_from_string(spec.substr(0, eq));
  std::vector<double> values;
  std::stringstream list(spec.substr(eq + 1));
  std::string item;
  while (std::getline(list, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ValidationError("--sweep: bad value '" + item + "'");
    values.push_back(v);
  }
  if (values.empty()) throw ValidationError("--sweep: empty value list");
  return {axis, values};
}

void print_comparison(const std::vector<MethodSummary>& summary) { std::cout << comparison_csv(summary); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fair supervised contrastive learning on fixed embeddings"};
  app.require_subcommand(1);

  Overrides gen_o, train_o, eval_o, sweep_o, report_o;

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset as train.csv, dev.csv, test.csv");
  add_common(gen, gen_o, false);

  auto* tr = app.add_subcommand("train", "train and evaluate every method for each run seed");
  add_common(tr, train_o, true);

  auto* ev = app.add_subcommand("evaluate", "evaluate a saved checkpoint on the configured dataset");
  add_common(ev, eval_o, false);
  std::string checkpoint, split = "test";
  ev->add_option("--checkpoint", checkpoint, "model checkpoint written by train")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--split", split, "dev or test")->check(CLI::IsMember({"dev", "test"}));

  auto* sw = app.add_subcommand("sweep", "sweep one method's most sensitive hyperparameter");
  add_common(sw, sweep_o, true);
  std::string sweep_spec;
  sw->add_option("--sweep", sweep_spec, "<axis>=<comma-list>, axis in beta, lambda, iterations")->required();

  auto* rep = app.add_subcommand("report", "compile run records into a comparison table");
  std::vector<std::string> report_dirs;
  rep->add_option("dirs", report_dirs, "directories holding run_<seed>.json files")->required();
  rep->add_option("--out", report_o.out, "write summary.json and comparison.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      const ExperimentConfig cfg = resolve(gen_o);
      if (!cfg.dataset.synthetic) throw ValidationError("generate needs a synthetic dataset source");
      const SplitDataset data = load_dataset(cfg);
      fs::create_directories(cfg.out);
      write_embeddings(cfg.out / "train.csv", data.dim, data.num_classes, data.train);
      write_embeddings(cfg.out / "dev.csv", data.dim, data.num_classes, data.dev);
      write_embeddings(cfg.out / "test.csv", data.dim, data.num_classes, data.test);
      std::cout << "wrote " << data.train.size() << '/' << data.dev.size() << '/' << data.test.size()
                << " rows to " << cfg.out.string() << '\n';
    } else if (*tr) {
      const ExperimentConfig cfg = resolve(train_o);
      const ExperimentResult result = run_experiment(cfg);
      print_comparison(result.summary);
    } else if (*ev) {
      const ExperimentConfig cfg = resolve(eval_o);
      const SplitDataset data = load_dataset(cfg);
      const TrainedModel model = from_checkpoint(load_checkpoint(checkpoint));
      EvalOptions opts;
      opts.probe = cfg.probe;
      opts.seed = cfg.seed;
      const FairnessReport report =
          evaluate(model, data, split == "dev" ? EvalSplit::kDev : EvalSplit::kTest, opts);
      Json j = to_json(report);
      j.erase("tradeoff");  // cross-model; see `report`
      j.erase("time_ratio");
      j.erase("time_seconds");
      std::cout << j.dump(2) << '\n';
    } else if (*sw) {
      const ExperimentConfig cfg = resolve(sweep_o);
      const auto [axis, values] = parse_sweep(sweep_spec);
      const SweepResult result = run_sweep(cfg, axis, values);
      std::printf("%s,accuracy,leakage_h,gap,on_frontier\n", to_string(axis).c_str());
      for (std::size_t p = 0; p < result.points.size(); ++p) {
        const auto& sp = result.points[p];
        const bool front =
            std::find(result.frontier.begin(), result.frontier.end(), p) != result.frontier.end();
        std::printf("%g,%.4f,%.4f,%.4f,%d\n", sp.value, sp.test_mean.accuracy, sp.test_mean.leakage_h,
                    sp.test_mean.gap, front ? 1 : 0);
      }
      std::printf("selected %s=%g\n", to_string(axis).c_str(), result.points[result.selected].value);
    } else if (*rep) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      const auto records = collect_run_records(dirs);
      if (records.empty()) throw ValidationError("report: no run_*.json records found");
      const auto summary = summarize(records);
      if (!report_o.out.empty()) {
        write_text(fs::path(report_o.out) / "summary.json", summary_json(summary).dump(2) + "\n");
        write_text(fs::path(report_o.out) / "comparison.csv", comparison_csv(summary));
      }
      print_comparison(summary);
    }
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
