#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fairscl/dataset.hpp"
#include "fairscl/evaluation.hpp"
#include "fairscl/losses.hpp"
#include "fairscl/model.hpp"
#include "fairscl/network.hpp"

namespace fairscl {

enum class Method {
  kCe,     // cross-entropy only
  kInlp,   // ce, then iterative nullspace projection
  kAdv,    // ce with an ensemble of adversarial discriminators
  kCon,    // joint alpha*ce + beta*(scl - fcl)
  kConFt,  // encoder on beta*(scl - fcl), then a classifier on frozen outputs
  kCeScl,  // ablation without the fair term
  kCeFcl,  // ablation without the supervised term
};

std::string to_string(Method m);
Method method_from_string(const std::string& name);

struct InlpOptions {
  int iterations = 50;
  // Stop once the probe's dev accuracy is within this margin of the majority rate.
  double chance_tolerance = 0.01;
  ProbeConfig probe;
};

struct AdvOptions {
  int discriminators = 3;
  double lambda = 1.0;
  double orthogonality = 0.1;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  Method method = Method::kCe;
  LossConfig loss;
  int hidden = 300;
  Activation activation = Activation::kRelu;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  int max_epochs = 20;
  int patience = 5;
  std::uint64_t seed = 0;
  std::optional<InlpOptions> inlp;  // present iff method is inlp
  std::optional<AdvOptions> adv;    // present iff method is adv

  void validate() const;
};

// Loss mode driving train_joint for each joint method.
LossMode joint_mode(Method m);

// ce, con, ce+scl and ce-fcl: end-to-end training with early stopping on dev accuracy.
TrainedModel train_joint(const SplitDataset& data, const TrainConfig& cfg);

// con_ft: stage 1 fits the encoder on beta*(scl - fcl) with early stopping on the
// dev value of that objective; stage 2 fits a softmax classifier on frozen outputs.
TrainedModel train_pipelined(const SplitDataset& data, const TrainConfig& cfg);

struct Discriminator {
  Matrix w1;  // hidden x input
  Vector b1;
  Vector w2;
  double b2 = 0.0;
};

// Sum over discriminator pairs of the squared Frobenius inner product of their
// first-layer weights.
double orthogonality_penalty(std::span<const Discriminator> discs);

// adv: per batch, discriminators learn the protected attribute from h while the
// encoder receives their gradient reversed and scaled by lambda.
TrainedModel train_adversarial(const SplitDataset& data, const TrainConfig& cfg);

// Iteratively removes linearly decodable protected information from a trained
// model's representations, then refits the classifier on projected outputs.
// With zero iterations, or if the first probe is already at chance, the model
// is returned with an identity projector and its original classifier.
TrainedModel run_inlp(const TrainedModel& model, const SplitDataset& data, int iterations,
                      const TrainConfig& cfg);

// Dispatches on cfg.method.
TrainedModel train(const SplitDataset& data, const TrainConfig& cfg);

struct HeadFit {
  ClassifierHead head;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

// Softmax classifier on fixed representations, early-stopped on dev accuracy.
HeadFit train_head(const Matrix& train_reps, std::span<const int> train_labels,
                   const Matrix& dev_reps, std::span<const int> dev_labels, int num_classes,
                   const TrainConfig& cfg);

struct Candidate {
  TrainConfig config;
  FairnessReport dev;
};

// Among candidates whose dev accuracy is within epsilon of the best, the one
// with the lowest GAP; ties go to higher accuracy, then lower leakage_h, then
// the earliest candidate. Returns its index.
std::size_t select_model(std::span<const Candidate> candidates, double epsilon = 0.01);

}  // namespace fairscl
