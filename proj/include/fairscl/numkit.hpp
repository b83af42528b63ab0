#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace fairscl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Norms below this are treated as zero by l2_normalize and the projector.
inline constexpr double kZeroNormTolerance = 1e-12;

double logsumexp(std::span<const double> values);
double logsumexp(const Vector& values);

Vector l2_normalize(const Vector& v);

// P = I - w w^T / |w|^2, the orthogonal projector onto the hyperplane w^T x = 0.
Matrix rank1_nullspace_projector(const Vector& w);

// Numerical rank of a projection matrix, read off its trace.
int projector_rank(const Matrix& p);

bool all_finite(const Matrix& m);

void require_same_shape(const Matrix& a, const Matrix& b, const std::string& what);

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  std::int64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState zeros(Eigen::Index size, double learning_rate);
};

struct AdamResult {
  Vector params;
  AdamState state;
};

// Bias-corrected Adam update. Pure: inputs are left untouched.
AdamResult adam_step(const AdamState& state, const Vector& params, const Vector& grads);

// In-place variant used by the training loops; identical arithmetic.
void adam_update(AdamState& state, Eigen::Ref<Vector> params, const Vector& grads);

}  // namespace fairscl
