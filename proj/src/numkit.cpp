#include "fairscl/numkit.hpp"

#include <algorithm>
#include <cmath>

namespace fairscl {

double logsumexp(std::span<const double> values) {
  if (values.empty()) throw DimensionError("logsumexp: empty input");
  const double top = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(top)) throw DegenerateInputError("logsumexp: non-finite input");
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - top);
  return top + std::log(sum);
}

double logsumexp(const Vector& values) {
  return logsumexp(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
}

Vector l2_normalize(const Vector& v) {
  const double norm = v.norm();
  if (!(norm > kZeroNormTolerance)) {
    throw DegenerateInputError("l2_normalize: norm below tolerance");
  }
  return v / norm;
}

Matrix rank1_nullspace_projector(const Vector& w) {
  const Vector unit = l2_normalize(w);
  Matrix p = -unit * unit.transpose();
  p.diagonal().array() += 1.0;
  return p;
}

int projector_rank(const Matrix& p) {
  if (p.rows() != p.cols()) throw DimensionError("projector_rank: matrix not square");
  return static_cast<int>(std::lround(p.trace()));
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

void require_same_shape(const Matrix& a, const Matrix& b, const std::string& what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(what + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
  }
}

AdamState AdamState::zeros(Eigen::Index size, double learning_rate) {
  AdamState s;
  s.first_moment = Vector::Zero(size);
  s.second_moment = Vector::Zero(size);
  s.learning_rate = learning_rate;
  return s;
}

void adam_update(AdamState& state, Eigen::Ref<Vector> params, const Vector& grads) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw DimensionError("adam: parameter, gradient and moment sizes differ");
  }
  if (!grads.allFinite()) throw DegenerateInputError("adam: non-finite gradient");

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);

  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseProduct(grads);

  params.array() -= state.learning_rate * (state.first_moment.array() / correction1) /
                    ((state.second_moment.array() / correction2).sqrt() + state.epsilon);
}

AdamResult adam_step(const AdamState& state, const Vector& params, const Vector& grads) {
  AdamResult out{params, state};
  adam_update(out.state, out.params, grads);
  return out;
}

}  // namespace fairscl
