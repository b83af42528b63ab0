#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairscl/dataset.hpp"
#include "fairscl/model.hpp"

namespace fairscl {

struct GapResult {
  double gap = 0.0;
  std::vector<std::optional<double>> per_class;  // nullopt where a (class, attribute) cell is empty
  std::vector<std::string> warnings;
};

// Root mean square over classes of |TPR(a, y) - TPR(not a, y)|. Classes with
// an empty cell are excluded from the mean and reported in warnings.
GapResult compute_gap(std::span<const int> predictions, std::span<const int> gold,
                      std::span<const int> protected_attrs, int num_classes);

double accuracy(std::span<const int> predictions, std::span<const int> gold);

struct ProbeConfig {
  int max_epochs = 30;
  int patience = 3;
  std::size_t batch_size = 128;
  double learning_rate = 1e-2;
  double margin_penalty = 1e-4;
  double dev_fraction = 0.1;
};

// Linear separator sign(w . x + b) over raw representations.
struct ProbeModel {
  Vector weights;
  double bias = 0.0;
};

// Hinge-loss linear probe trained by Adam on standardized features, with early
// stopping on a held-out slice of the training representations.
ProbeModel train_probe(const Matrix& reps, std::span<const int> attrs, const ProbeConfig& cfg,
                       std::uint64_t seed);
double probe_accuracy(const ProbeModel& probe, const Matrix& reps, std::span<const int> attrs);
std::vector<int> probe_predict(const ProbeModel& probe, const Matrix& reps);

struct FairnessReport {
  double accuracy = 0.0;
  double gap = 0.0;
  double leakage_h = 0.0;
  double leakage_yhat = 0.0;
  std::optional<double> tradeoff;
  double time_seconds = 0.0;
  std::optional<double> time_ratio;
  std::vector<std::optional<double>> per_class_gap;
  std::vector<std::string> warnings;
};

// Fills tradeoff = 1/2 N(acc) + 1/4 N(1 - gap) + 1/8 N(1 - leak_h) + 1/8 N(1 - leak_yhat),
// where N divides by the maximum over the given set.
std::vector<FairnessReport> tradeoff_scores(std::vector<FairnessReport> reports);

struct TradeoffPoint {
  double accuracy = 0.0;
  double leakage = 0.0;
};

// Indices of points not strictly dominated (higher accuracy and lower leakage
// at once) by any other point, in input order.
std::vector<std::size_t> pareto_frontier_indices(std::span<const TradeoffPoint> points);
std::vector<TradeoffPoint> pareto_frontier(std::span<const TradeoffPoint> points);

enum class EvalSplit { kDev, kTest };

struct EvalOptions {
  ProbeConfig probe;
  std::uint64_t seed = 0;
  std::optional<double> baseline_seconds;
};

// Accuracy, GAP and both leakages on the chosen split. Probes always train on
// train-split outputs and score on the chosen split.
FairnessReport evaluate(const TrainedModel& model, const SplitDataset& data, EvalSplit split,
                        const EvalOptions& opts);

}  // namespace fairscl
