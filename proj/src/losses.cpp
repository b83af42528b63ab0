#include "fairscl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fairscl {

void LossConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("loss config: tau must be > 0");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("loss config: alpha must be >= 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ValidationError("loss config: beta must be >= 0");
}

LossTerms terms_for(LossMode mode) {
  switch (mode) {
    case LossMode::kCe: return {true, false, false};
    case LossMode::kCeScl: return {true, true, false};
    case LossMode::kCeFcl: return {true, false, true};
    case LossMode::kFull: return {true, true, true};
    case LossMode::kSclFcl: return {false, true, true};
  }
  return {};
}

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::kCe: return "ce";
    case LossMode::kCeScl: return "ce+scl";
    case LossMode::kCeFcl: return "ce-fcl";
    case LossMode::kFull: return "full";
    case LossMode::kSclFcl: return "scl-fcl";
  }
  return "?";
}

namespace {

void check_labels(Eigen::Index rows, std::span<const int> gold, Eigen::Index classes) {
  if (static_cast<Eigen::Index>(gold.size()) != rows) {
    throw DimensionError("cross entropy: label count does not match batch size");
  }
  for (int g : gold) {
    if (g < 0 || g >= classes) throw ValidationError("cross entropy: gold label out of range");
  }
}

}  // namespace

double cross_entropy(const Matrix& probs, std::span<const int> gold) {
  if (probs.rows() == 0) throw DimensionError("cross entropy: empty batch");
  check_labels(probs.rows(), gold, probs.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    total -= std::log(std::max(probs(i, gold[static_cast<std::size_t>(i)]), kProbabilityFloor));
  }
  return total / static_cast<double>(probs.rows());
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Vector row = logits.row(i).transpose();
    const double lse = logsumexp(row);
    out.row(i) = (row.array() - lse).exp().transpose();
  }
  return out;
}

LossWithGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> gold) {
  if (logits.rows() == 0) throw DimensionError("cross entropy: empty batch");
  check_labels(logits.rows(), gold, logits.cols());
  const double n = static_cast<double>(logits.rows());
  const double ceiling = -std::log(kProbabilityFloor);

  LossWithGrad out;
  out.grad.resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Vector row = logits.row(i).transpose();
    const double lse = logsumexp(row);
    const int g = gold[static_cast<std::size_t>(i)];
    const double nll = lse - row[g];
    if (nll > ceiling) {
      out.value += ceiling;
      out.grad.row(i).setZero();
      continue;
    }
    out.value += nll;
    out.grad.row(i) = (row.array() - lse).exp().transpose() / n;
    out.grad(i, g) -= 1.0 / n;
  }
  out.value /= n;
  return out;
}

ContrastiveIndex make_contrastive_index(std::span<const int> groups) {
  const int n = static_cast<int>(groups.size());
  ContrastiveIndex index;
  index.positives.resize(groups.size());
  index.candidates.resize(groups.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      index.candidates[i].push_back(j);
      if (groups[j] == groups[i]) index.positives[i].push_back(j);
    }
  }
  return index;
}

namespace {

struct Normalized {
  Matrix unit;   // rows scaled to unit norm
  Vector norms;  // divisor actually used per row
  std::vector<bool> clamped;
};

// A row whose norm is below tolerance (e.g. every ReLU unit dead) is divided by
// the tolerance instead, so it sits near the origin with similarity ~0 to all.
Normalized normalize_rows(const Matrix& reps) {
  Normalized out{reps, reps.rowwise().norm(), std::vector<bool>(static_cast<std::size_t>(reps.rows()), false)};
  for (Eigen::Index i = 0; i < reps.rows(); ++i) {
    if (!std::isfinite(out.norms[i])) throw DegenerateInputError("contrastive loss: non-finite representation");
    if (!(out.norms[i] > kZeroNormTolerance)) {
      out.norms[i] = kZeroNormTolerance;
      out.clamped[static_cast<std::size_t>(i)] = true;
    }
    out.unit.row(i) /= out.norms[i];
  }
  return out;
}

// One grouping's positives as a 0/1 matrix, column i marking P(i), plus the
// per-anchor weight 1/|P(i)| (0 when P(i) is empty).
struct Positives {
  Matrix mask;
  Eigen::RowVectorXd inv_count;
};

Positives positives_of(std::span<const int> groups) {
  const Eigen::Index n = static_cast<Eigen::Index>(groups.size());
  const Eigen::Map<const Eigen::VectorXi> g(groups.data(), n);
  Positives p;
  p.mask = (g.replicate(1, n).array() == g.transpose().replicate(n, 1).array()).cast<double>().matrix();
  p.mask.diagonal().setZero();
  p.inv_count = p.mask.colwise().sum();
  for (Eigen::Index i = 0; i < n; ++i) p.inv_count[i] = p.inv_count[i] > 0.0 ? 1.0 / p.inv_count[i] : 0.0;
  return p;
}

// sum_i [P(i) nonempty] (lse_i - mean_{p in P(i)} sim_pi)
double grouping_loss(const Matrix& sim, const Eigen::RowVectorXd& lse, const Positives& pos) {
  const Eigen::RowVectorXd pos_mean = sim.cwiseProduct(pos.mask).colwise().sum().cwiseProduct(pos.inv_count);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < sim.cols(); ++i) {
    if (pos.inv_count[i] > 0.0) loss += lse[i] - pos_mean[i];
  }
  return loss;
}

void check_batch(const Matrix& reps, std::span<const int> groups, double tau) {
  if (reps.rows() < 2) throw DimensionError("contrastive loss: batch needs at least 2 rows");
  if (static_cast<Eigen::Index>(groups.size()) != reps.rows()) {
    throw DimensionError("contrastive loss: group count does not match batch size");
  }
  if (!(tau > 0.0)) throw ValidationError("contrastive loss: tau must be > 0");
}

}  // namespace

ContrastiveEval contrastive_terms(const Matrix& reps, std::span<const int> labels,
                                  std::span<const int> protected_attrs, double tau,
                                  double scl_weight, double fcl_weight, bool want_grad) {
  check_batch(reps, labels, tau);
  check_batch(reps, protected_attrs, tau);
  const Eigen::Index n = reps.rows();
  const Normalized z = normalize_rows(reps);
  // Symmetric, so column i holds anchor i's similarities.
  Matrix lower = Matrix::Zero(n, n);
  lower.selfadjointView<Eigen::Lower>().rankUpdate(z.unit, 1.0 / tau);
  const Matrix sim = lower.selfadjointView<Eigen::Lower>();

  // Candidate-set log-normalizer per anchor; Q(i) excludes the anchor itself.
  // prob(j, i) is the softmax weight of candidate j for anchor i.
  Eigen::RowVectorXd lse(n);
  Matrix prob(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto col = prob.col(i);
    col = sim.col(i);
    col[i] = -std::numeric_limits<double>::infinity();
    const double top = col.maxCoeff();
    col = (col.array() - top).exp().matrix();
    const double sum = col.sum();
    lse[i] = top + std::log(sum);
    col /= sum;
  }

  const Positives by_label = positives_of(labels);
  const Positives by_attr = positives_of(protected_attrs);
  ContrastiveEval out;
  out.scl = grouping_loss(sim, lse, by_label);
  out.fcl = grouping_loss(sim, lse, by_attr);
  if (!want_grad) return out;

  // d/d sim(j, i) for anchor i: w * (prob(j, i) - [j in P(i)] / |P(i)|), active anchors only.
  Eigen::RowVectorXd prob_weight(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    prob_weight[i] = (by_label.inv_count[i] > 0.0 ? scl_weight : 0.0) +
                     (by_attr.inv_count[i] > 0.0 ? fcl_weight : 0.0);
  }
  const Matrix dsim = prob * prob_weight.asDiagonal() -
                      by_label.mask * (scl_weight * by_label.inv_count).asDiagonal() -
                      by_attr.mask * (fcl_weight * by_attr.inv_count).asDiagonal();

  // sim = Z Z^T / tau, then back through the row normalization.
  const Matrix sym = (dsim + dsim.transpose()) / tau;
  const Matrix dunit = sym.selfadjointView<Eigen::Lower>() * z.unit;
  out.grad.resize(n, reps.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double radial = z.clamped[static_cast<std::size_t>(i)] ? 0.0 : z.unit.row(i).dot(dunit.row(i));
    out.grad.row(i) = (dunit.row(i) - radial * z.unit.row(i)) / z.norms[i];
  }
  return out;
}

double group_contrastive(const Matrix& reps, std::span<const int> groups, double tau) {
  check_batch(reps, groups, tau);
  return contrastive_terms(reps, groups, groups, tau, 0.0, 0.0, false).scl;
}

double combined_objective(double ce, double scl, double fcl, const LossConfig& cfg) {
  return cfg.alpha * ce + cfg.beta * (scl - fcl);
}

double combined_objective(double ce, double scl, double fcl, const LossConfig& cfg, LossMode mode) {
  const LossTerms t = terms_for(mode);
  return combined_objective(t.ce ? ce : 0.0, t.scl ? scl : 0.0, t.fcl ? fcl : 0.0, cfg);
}

}  // namespace fairscl
