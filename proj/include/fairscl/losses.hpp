#pragma once

#include <span>
#include <string>
#include <vector>

#include "fairscl/numkit.hpp"

namespace fairscl {

struct LossConfig {
  double alpha = 1.0;
  double beta = 0.1;
  double tau = 0.07;

  void validate() const;
};

// Which terms of alpha*ce + beta*(scl - fcl) participate.
enum class LossMode {
  kCe,      // alpha * ce
  kCeScl,   // alpha * ce + beta * scl
  kCeFcl,   // alpha * ce - beta * fcl
  kFull,    // alpha * ce + beta * (scl - fcl)
  kSclFcl,  // beta * (scl - fcl), encoder-only pretraining
};

struct LossTerms {
  bool ce = false;
  bool scl = false;
  bool fcl = false;
};

LossTerms terms_for(LossMode mode);
std::string to_string(LossMode mode);

// Gold probabilities are clamped here before the log.
inline constexpr double kProbabilityFloor = 1e-12;

// Mean negative log-probability of the gold class. probs is N x Y.
double cross_entropy(const Matrix& probs, std::span<const int> gold);

struct LossWithGrad {
  double value = 0.0;
  Matrix grad;
};

// Cross-entropy of softmax(logits), with its gradient w.r.t. the logits.
LossWithGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> gold);

// Row-wise softmax; each row is a probability vector.
Matrix softmax_rows(const Matrix& logits);

// Positive and candidate sets for every anchor of a batch: Q(i) is the batch
// without i, P(i) the members of Q(i) sharing i's grouping label.
struct ContrastiveIndex {
  std::vector<std::vector<int>> positives;
  std::vector<std::vector<int>> candidates;
};

ContrastiveIndex make_contrastive_index(std::span<const int> groups);

// Contrastive loss over l2-normalized rows of reps (N x k), summed over
// anchors without a 1/N factor. Anchors with no positive contribute zero.
double group_contrastive(const Matrix& reps, std::span<const int> groups, double tau);

struct ContrastiveEval {
  double scl = 0.0;
  double fcl = 0.0;
  Matrix grad;  // d(scl_weight * scl + fcl_weight * fcl) / d reps; empty when not requested
};

// Evaluates the main-label and protected-label instances of the contrastive
// loss on one shared similarity matrix. A zero weight skips that term's
// gradient but its value is still reported.
ContrastiveEval contrastive_terms(const Matrix& reps, std::span<const int> labels,
                                  std::span<const int> protected_attrs, double tau,
                                  double scl_weight, double fcl_weight, bool want_grad);

double combined_objective(double ce, double scl, double fcl, const LossConfig& cfg);
double combined_objective(double ce, double scl, double fcl, const LossConfig& cfg, LossMode mode);

}  // namespace fairscl
