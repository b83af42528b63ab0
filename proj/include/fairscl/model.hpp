#pragma once

#include <optional>
#include <vector>

#include "fairscl/network.hpp"

namespace fairscl {

// Symmetric idempotent matrix removing the protected directions found by INLP.
struct Projector {
  Matrix matrix;
  int iterations = 0;

  static Projector identity(int dim);
  int rank() const { return projector_rank(matrix); }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double ce = 0.0;
  double scl = 0.0;
  double fcl = 0.0;
  double adversarial = 0.0;
  double dev_metric = 0.0;  // dev accuracy, or the dev contrastive objective in pipelined stage 1
  std::string stage;
};

struct InlpStep {
  int iteration = 0;
  double probe_dev_accuracy = 0.0;
  int rank_after = 0;
};

struct TrainedModel {
  EncoderParams encoder;
  ClassifierHead head;
  std::optional<Projector> projector;
  double train_seconds = 0.0;
  std::vector<EpochRecord> history;
  std::vector<InlpStep> inlp_trace;
  int best_epoch = 0;
};

// Final hidden representation, with the INLP projection applied when present.
Matrix model_representations(const TrainedModel& model, const Matrix& x);
Matrix model_logits(const TrainedModel& model, const Matrix& x);
std::vector<int> model_predictions(const TrainedModel& model, const Matrix& x);

Checkpoint to_checkpoint(const TrainedModel& model);
TrainedModel from_checkpoint(const Checkpoint& ckpt);

}  // namespace fairscl
