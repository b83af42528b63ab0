#include "fairscl/network.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fairscl {

std::string to_string(Activation act) { return act == Activation::kRelu ? "relu" : "tanh"; }

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw ValidationError("unknown activation '" + name + "'");
}

Eigen::Index EncoderParams::parameter_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size();
}

EncoderParams EncoderParams::zeros_like(const EncoderParams& other) {
  EncoderParams p;
  p.w1 = Matrix::Zero(other.w1.rows(), other.w1.cols());
  p.b1 = Vector::Zero(other.b1.size());
  p.w2 = Matrix::Zero(other.w2.rows(), other.w2.cols());
  p.b2 = Vector::Zero(other.b2.size());
  p.activation = other.activation;
  return p;
}

ClassifierHead ClassifierHead::zeros_like(const ClassifierHead& other) {
  return {Matrix::Zero(other.w.rows(), other.w.cols()), Vector::Zero(other.b.size())};
}

namespace {

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double limit, Rng& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  // Row-major fill order so the draw sequence does not depend on storage order.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

Matrix apply_activation(const Matrix& pre, Activation act) {
  if (act == Activation::kRelu) return pre.cwiseMax(0.0);
  return pre.array().tanh().matrix();
}

Matrix activation_derivative(const Matrix& pre, const Matrix& activated, Activation act) {
  if (act == Activation::kRelu) return (pre.array() > 0.0).cast<double>().matrix();
  return (1.0 - activated.array().square()).matrix();
}

void check_input(const EncoderParams& params, Eigen::Index cols) {
  if (cols != params.w1.cols()) {
    throw DimensionError("encoder: input dimension " + std::to_string(cols) + " but expected " +
                         std::to_string(params.w1.cols()));
  }
}

void check_hidden(const ClassifierHead& head, Eigen::Index cols) {
  if (cols != head.w.cols()) {
    throw DimensionError("classifier: representation dimension " + std::to_string(cols) +
                         " but expected " + std::to_string(head.w.cols()));
  }
}

}  // namespace

EncoderParams init_encoder(int input_dim, int hidden, Activation act, Rng& rng) {
  if (input_dim <= 0 || hidden <= 0) throw ValidationError("init_encoder: sizes must be positive");
  EncoderParams p;
  p.activation = act;
  p.w1 = uniform_matrix(hidden, input_dim, std::sqrt(6.0 / input_dim), rng);
  p.b1 = Vector::Zero(hidden);
  p.w2 = uniform_matrix(hidden, hidden, std::sqrt(6.0 / hidden), rng);
  p.b2 = Vector::Zero(hidden);
  return p;
}

ClassifierHead init_head(int hidden, int num_classes, Rng& rng) {
  if (hidden <= 0 || num_classes < 2) throw ValidationError("init_head: bad sizes");
  return {uniform_matrix(num_classes, hidden, 1.0 / std::sqrt(hidden), rng), Vector::Zero(num_classes)};
}

EncoderTrace encode_traced(const EncoderParams& params, const Matrix& x) {
  check_input(params, x.cols());
  EncoderTrace t;
  t.pre_activation = x * params.w1.transpose();
  t.pre_activation.rowwise() += params.b1.transpose();
  t.activated = apply_activation(t.pre_activation, params.activation);
  t.output = t.activated * params.w2.transpose();
  t.output.rowwise() += params.b2.transpose();
  return t;
}

Matrix encode_batch(const EncoderParams& params, const Matrix& x) {
  return encode_traced(params, x).output;
}

Vector encode(const EncoderParams& params, const Vector& e) {
  check_input(params, e.size());
  Vector a = params.w1 * e + params.b1;
  a = apply_activation(a, params.activation);
  return params.w2 * a + params.b2;
}

Vector logits(const ClassifierHead& head, const Vector& h) {
  check_hidden(head, h.size());
  return head.w * h + head.b;
}

Matrix logits_batch(const ClassifierHead& head, const Matrix& h) {
  check_hidden(head, h.cols());
  Matrix out = h * head.w.transpose();
  out.rowwise() += head.b.transpose();
  return out;
}

Vector classify(const ClassifierHead& head, const Vector& h) {
  const Vector z = logits(head, h);
  return (z.array() - logsumexp(z)).exp().matrix();
}

Matrix classify_batch(const ClassifierHead& head, const Matrix& h) {
  return softmax_rows(logits_batch(head, h));
}

std::vector<int> predict_batch(const ClassifierHead& head, const Matrix& h) {
  const Matrix z = logits_batch(head, h);
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index best = 0;
    z.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

EncoderParams encoder_backward(const EncoderParams& params, const Matrix& x,
                               const EncoderTrace& trace, const Matrix& grad_h) {
  require_same_shape(trace.output, grad_h, "encoder_backward");
  EncoderParams g;
  g.activation = params.activation;
  g.w2 = grad_h.transpose() * trace.activated;
  g.b2 = grad_h.colwise().sum().transpose();
  const Matrix grad_pre = (grad_h * params.w2).cwiseProduct(
      activation_derivative(trace.pre_activation, trace.activated, params.activation));
  g.w1 = grad_pre.transpose() * x;
  g.b1 = grad_pre.colwise().sum().transpose();
  return g;
}

GradientBundle backward(const EncoderParams& params, const ClassifierHead& head,
                        const PackedSplit& batch, const LossConfig& cfg, LossMode mode) {
  cfg.validate();
  const LossTerms terms = terms_for(mode);
  const EncoderTrace trace = encode_traced(params, batch.x);
  const Matrix& h = trace.output;
  Matrix grad_h = Matrix::Zero(h.rows(), h.cols());

  GradientBundle out;
  out.head = ClassifierHead::zeros_like(head);
  if (terms.ce) {
    check_hidden(head, h.cols());
    const LossWithGrad ce = softmax_cross_entropy(logits_batch(head, h), batch.labels);
    out.ce = ce.value;
    const Matrix grad_logits = cfg.alpha * ce.grad;
    out.head.w = grad_logits.transpose() * h;
    out.head.b = grad_logits.colwise().sum().transpose();
    grad_h += grad_logits * head.w;
  }
  if ((terms.scl || terms.fcl) && cfg.beta != 0.0) {
    const ContrastiveEval con =
        contrastive_terms(h, batch.labels, batch.protected_attrs, cfg.tau,
                          terms.scl ? cfg.beta : 0.0, terms.fcl ? -cfg.beta : 0.0, true);
    if (terms.scl) out.scl = con.scl;
    if (terms.fcl) out.fcl = con.fcl;
    grad_h += con.grad;
  }
  out.loss = combined_objective(out.ce, out.scl, out.fcl, cfg, mode);
  out.encoder = encoder_backward(params, batch.x, trace, grad_h);
  return out;
}

Vector flatten(const EncoderParams& p) {
  Vector flat(p.parameter_count());
  Eigen::Index at = 0;
  flat.segment(at, p.w1.size()) = p.w1.reshaped();
  at += p.w1.size();
  flat.segment(at, p.b1.size()) = p.b1;
  at += p.b1.size();
  flat.segment(at, p.w2.size()) = p.w2.reshaped();
  at += p.w2.size();
  flat.segment(at, p.b2.size()) = p.b2;
  return flat;
}

Vector flatten(const ClassifierHead& head) {
  Vector flat(head.parameter_count());
  flat.head(head.w.size()) = head.w.reshaped();
  flat.tail(head.b.size()) = head.b;
  return flat;
}

void unflatten(const Vector& flat, EncoderParams& p) {
  if (flat.size() != p.parameter_count()) throw DimensionError("unflatten: encoder size mismatch");
  Eigen::Index at = 0;
  p.w1.reshaped() = flat.segment(at, p.w1.size());
  at += p.w1.size();
  p.b1 = flat.segment(at, p.b1.size());
  at += p.b1.size();
  p.w2.reshaped() = flat.segment(at, p.w2.size());
  at += p.w2.size();
  p.b2 = flat.segment(at, p.b2.size());
}

void unflatten(const Vector& flat, ClassifierHead& head) {
  if (flat.size() != head.parameter_count()) throw DimensionError("unflatten: head size mismatch");
  head.w.reshaped() = flat.head(head.w.size());
  head.b = flat.tail(head.b.size());
}

namespace {

constexpr const char* kCheckpointMagic = "fairscl-checkpoint";
constexpr int kCheckpointVersion = 1;

void write_array(std::ostream& out, const std::string& name, const Matrix& m) {
  out << "array " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  char buf[40];
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%a", m(r, c));
      out << (c ? " " : "") << buf;
    }
    out << '\n';
  }
}

Matrix read_array(std::istream& in, const std::string& expected, const std::string& path) {
  std::string tag, name;
  Eigen::Index rows = 0, cols = 0;
  if (!(in >> tag >> name >> rows >> cols) || tag != "array" || name != expected || rows < 0 || cols < 0) {
    throw ValidationError(path + ": expected array '" + expected + "'");
  }
  Matrix m(rows, cols);
  std::string token;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!(in >> token)) throw ValidationError(path + ": truncated array '" + expected + "'");
      char* end = nullptr;
      m(r, c) = std::strtod(token.c_str(), &end);
      if (end != token.c_str() + token.size()) {
        throw ValidationError(path + ": bad value in array '" + expected + "'");
      }
    }
  }
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "activation " << to_string(ckpt.encoder.activation) << '\n';
  write_array(out, "encoder.w1", ckpt.encoder.w1);
  write_array(out, "encoder.b1", ckpt.encoder.b1);
  write_array(out, "encoder.w2", ckpt.encoder.w2);
  write_array(out, "encoder.b2", ckpt.encoder.b2);
  write_array(out, "head.w", ckpt.head.w);
  write_array(out, "head.b", ckpt.head.b);
  out << "projector " << (ckpt.projector ? 1 : 0) << '\n';
  if (ckpt.projector) write_array(out, "projector", *ckpt.projector);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  const std::string name = path.string();
  if (!in) throw ValidationError("cannot open checkpoint " + name);
  std::string magic, key, act;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic) {
    throw ValidationError(name + ": not a checkpoint file");
  }
  if (version != kCheckpointVersion) {
    throw ValidationError(name + ": unsupported checkpoint version " + std::to_string(version));
  }
  if (!(in >> key >> act) || key != "activation") throw ValidationError(name + ": missing activation");

  Checkpoint ckpt;
  ckpt.encoder.activation = activation_from_string(act);
  ckpt.encoder.w1 = read_array(in, "encoder.w1", name);
  ckpt.encoder.b1 = read_array(in, "encoder.b1", name);
  ckpt.encoder.w2 = read_array(in, "encoder.w2", name);
  ckpt.encoder.b2 = read_array(in, "encoder.b2", name);
  ckpt.head.w = read_array(in, "head.w", name);
  ckpt.head.b = read_array(in, "head.b", name);
  int has_projector = 0;
  if (!(in >> key >> has_projector) || key != "projector") {
    throw ValidationError(name + ": missing projector flag");
  }
  if (has_projector) ckpt.projector = read_array(in, "projector", name);

  const int hidden = ckpt.encoder.hidden();
  if (ckpt.encoder.b1.size() != hidden || ckpt.encoder.w2.rows() != hidden ||
      ckpt.encoder.w2.cols() != hidden || ckpt.encoder.b2.size() != hidden ||
      ckpt.head.w.cols() != hidden || ckpt.head.b.size() != ckpt.head.w.rows() ||
      (ckpt.projector && (ckpt.projector->rows() != hidden || ckpt.projector->cols() != hidden))) {
    throw DimensionError(name + ": inconsistent array shapes");
  }
  return ckpt;
}

}  // namespace fairscl
