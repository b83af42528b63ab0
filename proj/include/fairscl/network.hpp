#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "fairscl/dataset.hpp"
#include "fairscl/losses.hpp"
#include "fairscl/numkit.hpp"
#include "fairscl/seeding.hpp"

namespace fairscl {

enum class Activation { kRelu, kTanh };

std::string to_string(Activation act);
Activation activation_from_string(const std::string& name);

// h = W2 * act(W1 * e + b1) + b2
struct EncoderParams {
  Matrix w1;  // hidden x d
  Vector b1;
  Matrix w2;  // hidden x hidden
  Vector b2;
  Activation activation = Activation::kRelu;

  int input_dim() const { return static_cast<int>(w1.cols()); }
  int hidden() const { return static_cast<int>(w1.rows()); }
  Eigen::Index parameter_count() const;
  static EncoderParams zeros_like(const EncoderParams& other);
};

struct ClassifierHead {
  Matrix w;  // Y x hidden
  Vector b;

  int num_classes() const { return static_cast<int>(w.rows()); }
  int input_dim() const { return static_cast<int>(w.cols()); }
  Eigen::Index parameter_count() const { return w.size() + b.size(); }
  static ClassifierHead zeros_like(const ClassifierHead& other);
};

// He-style uniform initialization, U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
EncoderParams init_encoder(int input_dim, int hidden, Activation act, Rng& rng);
// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
ClassifierHead init_head(int hidden, int num_classes, Rng& rng);

Vector encode(const EncoderParams& params, const Vector& e);
Matrix encode_batch(const EncoderParams& params, const Matrix& x);

Vector logits(const ClassifierHead& head, const Vector& h);
Matrix logits_batch(const ClassifierHead& head, const Matrix& h);
Vector classify(const ClassifierHead& head, const Vector& h);
Matrix classify_batch(const ClassifierHead& head, const Matrix& h);
std::vector<int> predict_batch(const ClassifierHead& head, const Matrix& h);

// Forward intermediates kept for the reverse pass.
struct EncoderTrace {
  Matrix pre_activation;  // N x hidden, W1 x + b1
  Matrix activated;       // N x hidden
  Matrix output;          // N x hidden, h
};

EncoderTrace encode_traced(const EncoderParams& params, const Matrix& x);

// Gradients of a scalar loss w.r.t. the encoder given dL/dh for every row.
EncoderParams encoder_backward(const EncoderParams& params, const Matrix& x,
                               const EncoderTrace& trace, const Matrix& grad_h);

struct GradientBundle {
  EncoderParams encoder;
  ClassifierHead head;
  double loss = 0.0;
  double ce = 0.0;
  double scl = 0.0;
  double fcl = 0.0;
};

// Exact gradients of the mode-selected objective on one batch. With beta = 0
// the contrastive terms are not evaluated at all, so the result is the
// cross-entropy gradient verbatim.
GradientBundle backward(const EncoderParams& params, const ClassifierHead& head,
                        const PackedSplit& batch, const LossConfig& cfg, LossMode mode);

Vector flatten(const EncoderParams& params);
Vector flatten(const ClassifierHead& head);
void unflatten(const Vector& flat, EncoderParams& params);
void unflatten(const Vector& flat, ClassifierHead& head);

struct Checkpoint {
  EncoderParams encoder;
  ClassifierHead head;
  std::optional<Matrix> projector;
};

// Text format with hexadecimal floats; load(save(p)) reproduces p bit for bit.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fairscl
