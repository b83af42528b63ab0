#include "fairscl/evaluation.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <numeric>

#include "fairscl/seeding.hpp"

namespace fairscl {

Projector Projector::identity(int dim) { return {Matrix::Identity(dim, dim), 0}; }

Matrix model_representations(const TrainedModel& model, const Matrix& x) {
  Matrix h = encode_batch(model.encoder, x);
  if (model.projector) h = h * model.projector->matrix;  // P is symmetric
  return h;
}

Matrix model_logits(const TrainedModel& model, const Matrix& x) {
  return logits_batch(model.head, model_representations(model, x));
}

std::vector<int> model_predictions(const TrainedModel& model, const Matrix& x) {
  return predict_batch(model.head, model_representations(model, x));
}

Checkpoint to_checkpoint(const TrainedModel& model) {
  Checkpoint ckpt{model.encoder, model.head, std::nullopt};
  if (model.projector) ckpt.projector = model.projector->matrix;
  return ckpt;
}

TrainedModel from_checkpoint(const Checkpoint& ckpt) {
  TrainedModel model;
  model.encoder = ckpt.encoder;
  model.head = ckpt.head;
  if (ckpt.projector) model.projector = Projector{*ckpt.projector, 0};
  return model;
}

double accuracy(std::span<const int> predictions, std::span<const int> gold) {
  if (predictions.size() != gold.size()) throw DimensionError("accuracy: length mismatch");
  if (gold.empty()) throw DimensionError("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predictions[i] == gold[i];
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

GapResult compute_gap(std::span<const int> predictions, std::span<const int> gold,
                      std::span<const int> protected_attrs, int num_classes) {
  if (predictions.size() != gold.size() || gold.size() != protected_attrs.size()) {
    throw DimensionError("compute_gap: label arrays are not aligned");
  }
  if (num_classes < 1) throw ValidationError("compute_gap: need at least one class");
  const auto classes = static_cast<std::size_t>(num_classes);
  std::vector<std::array<std::size_t, 2>> total(classes, {0, 0});
  std::vector<std::array<std::size_t, 2>> correct(classes, {0, 0});
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const int y = gold[i];
    const int a = protected_attrs[i];
    if (y < 0 || y >= num_classes) throw ValidationError("compute_gap: gold label out of range");
    if (a != 0 && a != 1) throw ValidationError("compute_gap: protected attribute must be 0 or 1");
    total[y][a] += 1;
    correct[y][a] += predictions[i] == y;
  }

  GapResult out;
  out.per_class.resize(classes);
  double sum_sq = 0.0;
  std::size_t defined = 0;
  for (std::size_t y = 0; y < classes; ++y) {
    if (total[y][0] == 0 || total[y][1] == 0) {
      out.warnings.push_back("class " + std::to_string(y) +
                             " has an empty protected-attribute cell; excluded from GAP");
      continue;
    }
    const double tpr0 = static_cast<double>(correct[y][0]) / static_cast<double>(total[y][0]);
    const double tpr1 = static_cast<double>(correct[y][1]) / static_cast<double>(total[y][1]);
    const double g = std::abs(tpr1 - tpr0);
    out.per_class[y] = g;
    sum_sq += g * g;
    ++defined;
  }
  if (defined == 0) throw ValidationError("compute_gap: no class has both attribute values");
  out.gap = std::sqrt(sum_sq / static_cast<double>(defined));
  return out;
}

namespace {

void check_probe_inputs(const Matrix& reps, std::span<const int> attrs) {
  if (static_cast<Eigen::Index>(attrs.size()) != reps.rows()) {
    throw DimensionError("probe: representation and attribute counts differ");
  }
  for (int a : attrs) {
    if (a != 0 && a != 1) throw ValidationError("probe: attribute must be 0 or 1");
  }
}

}  // namespace

std::vector<int> probe_predict(const ProbeModel& probe, const Matrix& reps) {
  if (reps.cols() != probe.weights.size()) throw DimensionError("probe: representation dimension mismatch");
  const Vector scores = reps * probe.weights;
  std::vector<int> out(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index i = 0; i < scores.size(); ++i) out[i] = scores[i] + probe.bias > 0.0 ? 1 : 0;
  return out;
}

double probe_accuracy(const ProbeModel& probe, const Matrix& reps, std::span<const int> attrs) {
  check_probe_inputs(reps, attrs);
  return accuracy(probe_predict(probe, reps), attrs);
}

ProbeModel train_probe(const Matrix& reps, std::span<const int> attrs, const ProbeConfig& cfg,
                       std::uint64_t seed) {
  check_probe_inputs(reps, attrs);
  const std::size_t n = attrs.size();
  const auto ones = static_cast<std::size_t>(std::count(attrs.begin(), attrs.end(), 1));
  if (ones == 0 || ones == n) {
    throw ValidationError("probe: training data must contain both attribute values");
  }
  if (cfg.batch_size < 1 || cfg.max_epochs < 1 || cfg.patience < 1) {
    throw ValidationError("probe: bad training budget");
  }

  // Hold out a slice for early stopping; tiny sets stop on their own fit.
  Rng rng = make_rng(seed, Stream::kProbe);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_dev = static_cast<std::size_t>(std::floor(cfg.dev_fraction * static_cast<double>(n)));
  if (n < 20) n_dev = 0;
  const std::span<const std::size_t> fit_rows(order.data() + n_dev, n - n_dev);
  const std::span<const std::size_t> dev_rows =
      n_dev ? std::span<const std::size_t>(order.data(), n_dev) : fit_rows;

  const Eigen::Index dim = reps.cols();
  Vector mean = Vector::Zero(dim);
  for (std::size_t r : fit_rows) mean += reps.row(static_cast<Eigen::Index>(r)).transpose();
  mean /= static_cast<double>(fit_rows.size());
  Vector scale = Vector::Zero(dim);
  for (std::size_t r : fit_rows) {
    scale += (reps.row(static_cast<Eigen::Index>(r)).transpose() - mean).cwiseAbs2();
  }
  scale = (scale / static_cast<double>(fit_rows.size())).cwiseSqrt();
  for (Eigen::Index k = 0; k < dim; ++k) {
    if (!(scale[k] > 1e-12)) scale[k] = 1.0;
  }
  Matrix standardized = reps.rowwise() - mean.transpose();
  standardized = standardized.array().rowwise() / scale.transpose().array();
  auto dev_accuracy = [&](const Vector& params) {
    std::size_t hits = 0;
    for (std::size_t r : dev_rows) {
      const double s = standardized.row(static_cast<Eigen::Index>(r)).dot(params.head(dim)) + params[dim];
      hits += (s > 0.0 ? 1 : 0) == attrs[r];
    }
    return static_cast<double>(hits) / static_cast<double>(dev_rows.size());
  };

  Vector params = Vector::Zero(dim + 1);  // [w; b]
  AdamState adam = AdamState::zeros(dim + 1, cfg.learning_rate);
  Vector best = params;
  double best_acc = -1.0;
  int stale = 0;
  std::vector<std::size_t> shuffled(fit_rows.begin(), fit_rows.end());
  Vector grad(dim + 1);
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (std::size_t start = 0; start < shuffled.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(shuffled.size(), start + cfg.batch_size);
      const double count = static_cast<double>(end - start);
      grad.setZero();
      grad.head(dim) = cfg.margin_penalty * params.head(dim);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t r = shuffled[k];
        const auto x = standardized.row(static_cast<Eigen::Index>(r));
        const double sign = attrs[r] == 1 ? 1.0 : -1.0;
        if (sign * (x.dot(params.head(dim)) + params[dim]) < 1.0) {
          grad.head(dim) -= sign * x.transpose() / count;
          grad[dim] -= sign / count;
        }
      }
      adam_update(adam, params, grad);
    }
    if (!params.allFinite()) throw DegenerateInputError("probe: training diverged");
    const double acc = dev_accuracy(params);
    if (acc > best_acc) {
      best_acc = acc;
      best = params;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }

  // Fold the standardization into the raw-space separator.
  ProbeModel probe;
  probe.weights = best.head(dim).cwiseQuotient(scale);
  probe.bias = best[dim] - probe.weights.dot(mean);
  return probe;
}

std::vector<FairnessReport> tradeoff_scores(std::vector<FairnessReport> reports) {
  if (reports.empty()) throw ValidationError("tradeoff_scores: empty report set");
  double max_acc = 0.0, max_gap = 0.0, max_h = 0.0, max_y = 0.0;
  for (const auto& r : reports) {
    max_acc = std::max(max_acc, r.accuracy);
    max_gap = std::max(max_gap, 1.0 - r.gap);
    max_h = std::max(max_h, 1.0 - r.leakage_h);
    max_y = std::max(max_y, 1.0 - r.leakage_yhat);
  }
  if (!(max_acc > 0.0) || !(max_gap > 0.0) || !(max_h > 0.0) || !(max_y > 0.0)) {
    throw ValidationError("tradeoff_scores: a normalized quantity has zero maximum");
  }
  for (auto& r : reports) {
    r.tradeoff = 0.5 * (r.accuracy / max_acc) + 0.25 * ((1.0 - r.gap) / max_gap) +
                 0.125 * ((1.0 - r.leakage_h) / max_h) + 0.125 * ((1.0 - r.leakage_yhat) / max_y);
  }
  return reports;
}

std::vector<std::size_t> pareto_frontier_indices(std::span<const TradeoffPoint> points) {
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return points[a].accuracy > points[b].accuracy;
  });
  // Sweep from high to low accuracy, tracking the lowest leakage among points
  // with strictly higher accuracy.
  std::vector<bool> keep(points.size(), false);
  double best_leak_above = std::numeric_limits<double>::infinity();
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    double group_min = std::numeric_limits<double>::infinity();
    while (j < order.size() && points[order[j]].accuracy == points[order[i]].accuracy) {
      keep[order[j]] = !(best_leak_above < points[order[j]].leakage);
      group_min = std::min(group_min, points[order[j]].leakage);
      ++j;
    }
    best_leak_above = std::min(best_leak_above, group_min);
    i = j;
  }
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < points.size(); ++k)
    if (keep[k]) out.push_back(k);
  return out;
}

std::vector<TradeoffPoint> pareto_frontier(std::span<const TradeoffPoint> points) {
  std::vector<TradeoffPoint> out;
  for (std::size_t k : pareto_frontier_indices(points)) out.push_back(points[k]);
  return out;
}

FairnessReport evaluate(const TrainedModel& model, const SplitDataset& data, EvalSplit split,
                        const EvalOptions& opts) {
  const auto& target = split == EvalSplit::kTest ? data.test : data.dev;
  if (target.empty()) throw ValidationError("evaluate: evaluation split is empty");
  const PackedSplit train = pack(data.train, data.dim);
  const PackedSplit eval = pack(target, data.dim);

  const Matrix train_h = model_representations(model, train.x);
  const Matrix eval_h = model_representations(model, eval.x);
  const Matrix train_logits = logits_batch(model.head, train_h);
  const Matrix eval_logits = logits_batch(model.head, eval_h);

  std::vector<int> predictions(eval.size());
  for (Eigen::Index i = 0; i < eval_logits.rows(); ++i) {
    Eigen::Index best = 0;
    eval_logits.row(i).maxCoeff(&best);
    predictions[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }

  FairnessReport report;
  report.accuracy = accuracy(predictions, eval.labels);
  GapResult gap = compute_gap(predictions, eval.labels, eval.protected_attrs, data.num_classes);
  report.gap = gap.gap;
  report.per_class_gap = std::move(gap.per_class);
  report.warnings = std::move(gap.warnings);

  const ProbeModel probe_h = train_probe(train_h, train.protected_attrs, opts.probe, derive_seed(opts.seed, Stream::kProbe, 1));
  const ProbeModel probe_y = train_probe(train_logits, train.protected_attrs, opts.probe, derive_seed(opts.seed, Stream::kProbe, 2));
  report.leakage_h = probe_accuracy(probe_h, eval_h, eval.protected_attrs);
  report.leakage_yhat = probe_accuracy(probe_y, eval_logits, eval.protected_attrs);

  report.time_seconds = model.train_seconds;
  if (opts.baseline_seconds && *opts.baseline_seconds > 0.0) {
    report.time_ratio = model.train_seconds / *opts.baseline_seconds;
  }
  return report;
}

}  // namespace fairscl
