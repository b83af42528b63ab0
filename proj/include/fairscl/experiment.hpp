#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairscl/dataset.hpp"
#include "fairscl/evaluation.hpp"
#include "fairscl/trainers.hpp"

namespace fairscl {

using Json = nlohmann::json;

struct DatasetSource {
  bool synthetic = true;
  SkewSpec skew;
  SplitSizes sizes;
  std::optional<std::uint64_t> seed;  // defaults to the experiment's base seed
  std::filesystem::path train_file, dev_file, test_file;
};

struct ExperimentConfig {
  DatasetSource dataset;
  std::vector<Method> methods = {Method::kCe};
  TrainConfig train;  // shared hyperparameters; method and seed are set per run
  InlpOptions inlp;
  AdvOptions adv;
  ProbeConfig probe;
  double select_epsilon = 0.01;
  bool export_representations = true;
  std::uint64_t seed = 0;
  int runs = 10;
  int workers = 1;
  std::filesystem::path out = "results";

  void validate() const;
};

// Rejects unknown keys, naming the offending path (e.g. "train.betaa").
ExperimentConfig config_from_json(const Json& j);
Json to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

SplitDataset load_dataset(const ExperimentConfig& cfg);
TrainConfig make_train_config(const ExperimentConfig& cfg, Method method, std::uint64_t seed);
std::uint64_t run_seed(const ExperimentConfig& cfg, int run);

Json to_json(const TrainConfig& cfg);
Json to_json(const FairnessReport& r);
FairnessReport report_from_json(const Json& j);
Json to_json(const EpochRecord& r);

struct RunRecord {
  Method method = Method::kCe;
  std::uint64_t seed = 0;
  TrainConfig config;
  FairnessReport test;
  FairnessReport dev;
  std::vector<EpochRecord> history;
  std::vector<InlpStep> inlp_trace;
  int best_epoch = 0;
  double train_seconds = 0.0;
  std::string checkpoint;
};

Json to_json(const RunRecord& r);
RunRecord run_record_from_json(const Json& j);

struct MetricStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

struct MethodSummary {
  Method method = Method::kCe;
  int runs = 0;
  MetricStats accuracy, gap, leakage_h, leakage_yhat;
  std::optional<double> tradeoff;
  double mean_seconds = 0.0;
  std::optional<double> time_ratio;  // mean seconds relative to ce
};

MetricStats mean_std(const std::vector<double>& values);

// Groups runs by method (in first-seen order), averages metrics, and computes
// Tradeoff across the method means and each method's time relative to ce.
std::vector<MethodSummary> summarize(const std::vector<RunRecord>& runs);

// Wall-clock timing is left out so identical inputs give identical bytes.
Json summary_json(const std::vector<MethodSummary>& summary);

// Table-1 ordered columns; rates scaled to percentages, time as "<ratio>x".
std::string comparison_csv(const std::vector<MethodSummary>& summary);

struct ExperimentResult {
  std::vector<RunRecord> runs;
  std::vector<MethodSummary> summary;
};

// Trains and evaluates every (method, run) pair, writing
//   <out>/<method>/run_<seed>.json, <out>/<method>/model_<seed>.ckpt,
//   <out>/<method>/reps_<split>.csv (first run), <out>/summary.json and
//   <out>/comparison.csv.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

enum class SweepAxis { kBeta, kLambda, kIterations };

std::string to_string(SweepAxis axis);
SweepAxis sweep_axis_from_string(const std::string& name);
// Throws ValidationError unless the axis is the method's sensitive knob.
void check_sweep_axis(Method method, SweepAxis axis);

struct SweepPoint {
  double value = 0.0;
  std::vector<RunRecord> runs;
  FairnessReport test_mean;
  FairnessReport dev_mean;
};

struct SweepResult {
  Method method = Method::kCon;
  SweepAxis axis = SweepAxis::kBeta;
  std::vector<SweepPoint> points;
  std::vector<std::size_t> frontier;  // indices into points, by test (accuracy, leakage_h)
  std::size_t selected = 0;           // select_model over dev means
};

// Writes <out>/sweep.json, <out>/sweep_points.csv and <out>/frontier.csv.
SweepResult run_sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<double>& values);

// Reads every run_*.json under the given directories (recursively).
std::vector<RunRecord> collect_run_records(const std::vector<std::filesystem::path>& dirs);

void write_text(const std::filesystem::path& path, const std::string& content);

}  // namespace fairscl
