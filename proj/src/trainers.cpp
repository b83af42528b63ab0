#include "fairscl/trainers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "fairscl/seeding.hpp"

namespace fairscl {

std::string to_string(Method m) {
  switch (m) {
    case Method::kCe: return "ce";
    case Method::kInlp: return "inlp";
    case Method::kAdv: return "adv";
    case Method::kCon: return "con";
    case Method::kConFt: return "con_ft";
    case Method::kCeScl: return "ce+scl";
    case Method::kCeFcl: return "ce-fcl";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  for (Method m : {Method::kCe, Method::kInlp, Method::kAdv, Method::kCon, Method::kConFt,
                   Method::kCeScl, Method::kCeFcl}) {
    if (to_string(m) == name) return m;
  }
  throw ValidationError("unknown method '" + name + "' (expected ce, inlp, adv, con, con_ft, ce+scl, ce-fcl)");
}

void TrainConfig::validate() const {
  loss.validate();
  if (hidden <= 0) throw ValidationError("train config: hidden size must be positive");
  if (!(learning_rate > 0.0)) throw ValidationError("train config: learning rate must be > 0");
  if (batch_size < 2) throw ValidationError("train config: batch size must be at least 2");
  if (max_epochs < 1) throw ValidationError("train config: max_epochs must be >= 1");
  if (patience < 1) throw ValidationError("train config: patience must be >= 1");
  if ((method == Method::kInlp) != inlp.has_value()) {
    throw ValidationError("train config: inlp options must be present exactly when method is inlp");
  }
  if ((method == Method::kAdv) != adv.has_value()) {
    throw ValidationError("train config: adv options must be present exactly when method is adv");
  }
  if (inlp && inlp->iterations < 0) throw ValidationError("train config: inlp iterations must be >= 0");
  if (adv) {
    if (adv->discriminators < 1) throw ValidationError("train config: need at least one discriminator");
    if (!(adv->lambda >= 0.0)) throw ValidationError("train config: adversarial lambda must be >= 0");
    if (!(adv->orthogonality >= 0.0)) throw ValidationError("train config: orthogonality weight must be >= 0");
  }
}

LossMode joint_mode(Method m) {
  switch (m) {
    case Method::kCe: return LossMode::kCe;
    case Method::kCon: return LossMode::kFull;
    case Method::kCeScl: return LossMode::kCeScl;
    case Method::kCeFcl: return LossMode::kCeFcl;
    default: break;
  }
  throw ValidationError("method " + to_string(m) + " is not trained jointly");
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  const double s = std::chrono::duration<double>(Clock::now() - start).count();
  return std::max(s, 1e-9);
}

struct Optimizer {
  AdamState encoder;
  AdamState head;

  Optimizer(const EncoderParams& enc, const ClassifierHead& h, double lr)
      : encoder(AdamState::zeros(enc.parameter_count(), lr)),
        head(AdamState::zeros(h.parameter_count(), lr)) {}

  void step_encoder(EncoderParams& params, const EncoderParams& grad) {
    Vector flat = flatten(params);
    adam_update(encoder, flat, flatten(grad));
    unflatten(flat, params);
  }
  void step_head(ClassifierHead& params, const ClassifierHead& grad) {
    Vector flat = flatten(params);
    adam_update(head, flat, flatten(grad));
    unflatten(flat, params);
  }
};

void require_finite(const GradientBundle& g, int epoch) {
  const auto where = " at epoch " + std::to_string(epoch);
  if (!std::isfinite(g.ce)) throw DivergenceError("non-finite cross-entropy term" + where);
  if (!std::isfinite(g.scl)) throw DivergenceError("non-finite supervised contrastive term" + where);
  if (!std::isfinite(g.fcl)) throw DivergenceError("non-finite fair contrastive term" + where);
  if (!flatten(g.encoder).allFinite() || !flatten(g.head).allFinite()) {
    throw DivergenceError("non-finite gradient" + where);
  }
}

double split_accuracy(const EncoderParams& enc, const ClassifierHead& head, const PackedSplit& split) {
  return accuracy(predict_batch(head, encode_batch(enc, split.x)), split.labels);
}

struct Averages {
  double loss = 0.0, ce = 0.0, scl = 0.0, fcl = 0.0, adversarial = 0.0;
  int count = 0;

  void add(const GradientBundle& g) {
    loss += g.loss;
    ce += g.ce;
    scl += g.scl;
    fcl += g.fcl;
    ++count;
  }
  EpochRecord record(int epoch, double dev, const std::string& stage) const {
    const double n = std::max(count, 1);
    return {epoch, loss / n, ce / n, scl / n, fcl / n, adversarial / n, dev, stage};
  }
};

void check_data(const SplitDataset& data) {
  data.validate();
}

}  // namespace

TrainedModel train_joint(const SplitDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  check_data(data);
  const LossMode mode = joint_mode(cfg.method);
  const auto start = Clock::now();

  const PackedSplit train = pack(data.train, data.dim);
  const PackedSplit dev = pack(data.dev, data.dim);
  Rng enc_rng = make_rng(cfg.seed, Stream::kEncoderInit);
  Rng head_rng = make_rng(cfg.seed, Stream::kHeadInit);
  TrainedModel model;
  model.encoder = init_encoder(data.dim, cfg.hidden, cfg.activation, enc_rng);
  model.head = init_head(cfg.hidden, data.num_classes, head_rng);
  Optimizer opt(model.encoder, model.head, cfg.learning_rate);

  EncoderParams best_enc = model.encoder;
  ClassifierHead best_head = model.head;
  double best_dev = -1.0;
  int stale = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Averages avg;
    for (const Batch& rows : make_batches(train.size(), cfg.batch_size, cfg.seed, epoch)) {
      const PackedSplit batch = pack_rows(train, rows);
      const GradientBundle g = backward(model.encoder, model.head, batch, cfg.loss, mode);
      require_finite(g, epoch);
      opt.step_encoder(model.encoder, g.encoder);
      opt.step_head(model.head, g.head);
      avg.add(g);
    }
    const double dev_acc = split_accuracy(model.encoder, model.head, dev);
    model.history.push_back(avg.record(epoch, dev_acc, "joint"));
    if (dev_acc > best_dev) {
      best_dev = dev_acc;
      best_enc = model.encoder;
      best_head = model.head;
      model.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  model.encoder = std::move(best_enc);
  model.head = std::move(best_head);
  model.train_seconds = seconds_since(start);
  return model;
}

HeadFit train_head(const Matrix& train_reps, std::span<const int> train_labels,
                   const Matrix& dev_reps, std::span<const int> dev_labels, int num_classes,
                   const TrainConfig& cfg) {
  if (static_cast<Eigen::Index>(train_labels.size()) != train_reps.rows() ||
      static_cast<Eigen::Index>(dev_labels.size()) != dev_reps.rows()) {
    throw DimensionError("train_head: label counts do not match representations");
  }
  Rng head_rng = make_rng(cfg.seed, Stream::kHeadInit);
  HeadFit fit;
  fit.head = init_head(static_cast<int>(train_reps.cols()), num_classes, head_rng);
  AdamState adam = AdamState::zeros(fit.head.parameter_count(), cfg.learning_rate);
  const std::uint64_t batch_seed = derive_seed(cfg.seed, Stream::kBatches, 1);

  ClassifierHead best = fit.head;
  double best_dev = -1.0;
  int stale = 0;
  std::vector<int> labels;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    int batches = 0;
    for (const Batch& rows : make_batches(train_labels.size(), cfg.batch_size, batch_seed, epoch)) {
      Matrix reps(static_cast<Eigen::Index>(rows.size()), train_reps.cols());
      labels.resize(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        reps.row(static_cast<Eigen::Index>(i)) = train_reps.row(static_cast<Eigen::Index>(rows[i]));
        labels[i] = train_labels[rows[i]];
      }
      const LossWithGrad ce = softmax_cross_entropy(logits_batch(fit.head, reps), labels);
      if (!std::isfinite(ce.value)) {
        throw DivergenceError("non-finite cross-entropy term in classifier fit at epoch " + std::to_string(epoch));
      }
      ClassifierHead grad{ce.grad.transpose() * reps, ce.grad.colwise().sum().transpose()};
      Vector flat = flatten(fit.head);
      adam_update(adam, flat, flatten(grad));
      unflatten(flat, fit.head);
      loss_sum += ce.value;
      ++batches;
    }
    const double dev_acc = accuracy(predict_batch(fit.head, dev_reps), dev_labels);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = rec.ce = loss_sum / std::max(batches, 1);
    rec.dev_metric = dev_acc;
    rec.stage = "classifier";
    fit.history.push_back(rec);
    if (dev_acc > best_dev) {
      best_dev = dev_acc;
      best = fit.head;
      fit.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  fit.head = std::move(best);
  return fit;
}

TrainedModel train_pipelined(const SplitDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.method != Method::kConFt) throw ValidationError("train_pipelined expects method con_ft");
  check_data(data);
  const auto start = Clock::now();

  const PackedSplit train = pack(data.train, data.dim);
  const PackedSplit dev = pack(data.dev, data.dim);
  Rng enc_rng = make_rng(cfg.seed, Stream::kEncoderInit);
  TrainedModel model;
  model.encoder = init_encoder(data.dim, cfg.hidden, cfg.activation, enc_rng);
  // Placeholder head; the contrastive stage never reads it.
  model.head = ClassifierHead{Matrix::Zero(data.num_classes, cfg.hidden), Vector::Zero(data.num_classes)};
  Optimizer opt(model.encoder, model.head, cfg.learning_rate);

  const std::vector<Batch> dev_batches = sequential_batches(dev.size(), cfg.batch_size);
  auto dev_objective = [&](const EncoderParams& enc) {
    double total = 0.0;
    for (const Batch& rows : dev_batches) {
      const PackedSplit b = pack_rows(dev, rows);
      const ContrastiveEval c = contrastive_terms(encode_batch(enc, b.x), b.labels, b.protected_attrs,
                                                  cfg.loss.tau, 0.0, 0.0, false);
      total += c.scl - c.fcl;
    }
    return total / static_cast<double>(std::max<std::size_t>(dev_batches.size(), 1));
  };

  EncoderParams best_enc = model.encoder;
  double best_obj = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Averages avg;
    for (const Batch& rows : make_batches(train.size(), cfg.batch_size, cfg.seed, epoch)) {
      const PackedSplit batch = pack_rows(train, rows);
      const GradientBundle g = backward(model.encoder, model.head, batch, cfg.loss, LossMode::kSclFcl);
      require_finite(g, epoch);
      opt.step_encoder(model.encoder, g.encoder);
      avg.add(g);
    }
    const double obj = dev_objective(model.encoder);
    if (!std::isfinite(obj)) throw DivergenceError("non-finite dev contrastive objective at epoch " + std::to_string(epoch));
    model.history.push_back(avg.record(epoch, obj, "encoder"));
    if (obj < best_obj) {
      best_obj = obj;
      best_enc = model.encoder;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  model.encoder = std::move(best_enc);

  const Matrix train_h = encode_batch(model.encoder, train.x);
  const Matrix dev_h = encode_batch(model.encoder, dev.x);
  HeadFit fit = train_head(train_h, train.labels, dev_h, dev.labels, data.num_classes, cfg);
  model.head = std::move(fit.head);
  model.best_epoch = fit.best_epoch;
  model.history.insert(model.history.end(), fit.history.begin(), fit.history.end());
  model.train_seconds = seconds_since(start);
  return model;
}

double orthogonality_penalty(std::span<const Discriminator> discs) {
  double total = 0.0;
  for (std::size_t k = 0; k < discs.size(); ++k) {
    for (std::size_t l = k + 1; l < discs.size(); ++l) {
      require_same_shape(discs[k].w1, discs[l].w1, "orthogonality_penalty");
      const double inner = discs[k].w1.cwiseProduct(discs[l].w1).sum();
      total += inner * inner;
    }
  }
  return total;
}

namespace {

Eigen::Index disc_size(const Discriminator& d) { return d.w1.size() + d.b1.size() + d.w2.size() + 1; }

Vector flatten(const Discriminator& d) {
  Vector flat(disc_size(d));
  Eigen::Index at = 0;
  flat.segment(at, d.w1.size()) = d.w1.reshaped();
  at += d.w1.size();
  flat.segment(at, d.b1.size()) = d.b1;
  at += d.b1.size();
  flat.segment(at, d.w2.size()) = d.w2;
  at += d.w2.size();
  flat[at] = d.b2;
  return flat;
}

void unflatten(const Vector& flat, Discriminator& d) {
  Eigen::Index at = 0;
  d.w1.reshaped() = flat.segment(at, d.w1.size());
  at += d.w1.size();
  d.b1 = flat.segment(at, d.b1.size());
  at += d.b1.size();
  d.w2 = flat.segment(at, d.w2.size());
  at += d.w2.size();
  d.b2 = flat[at];
}

Discriminator init_discriminator(int input_dim, int hidden, Rng& rng) {
  std::uniform_real_distribution<double> first(-std::sqrt(6.0 / input_dim), std::sqrt(6.0 / input_dim));
  std::uniform_real_distribution<double> second(-1.0 / std::sqrt(hidden), 1.0 / std::sqrt(hidden));
  Discriminator d;
  d.w1.resize(hidden, input_dim);
  for (Eigen::Index r = 0; r < d.w1.rows(); ++r)
    for (Eigen::Index c = 0; c < d.w1.cols(); ++c) d.w1(r, c) = first(rng);
  d.b1 = Vector::Zero(hidden);
  d.w2.resize(hidden);
  for (Eigen::Index r = 0; r < hidden; ++r) d.w2[r] = second(rng);
  return d;
}

struct DiscriminatorPass {
  double loss = 0.0;
  Discriminator grad;
  Matrix grad_h;
};

// Logistic loss on the protected attribute, averaged over the batch.
DiscriminatorPass discriminator_pass(const Discriminator& d, const Matrix& h, std::span<const int> attrs) {
  const double n = static_cast<double>(h.rows());
  Matrix pre = h * d.w1.transpose();
  pre.rowwise() += d.b1.transpose();
  const Matrix act = pre.cwiseMax(0.0);
  const Vector score = (act * d.w2).array() + d.b2;

  DiscriminatorPass out;
  Vector dscore(score.size());
  for (Eigen::Index i = 0; i < score.size(); ++i) {
    const double s = score[i];
    const double y = attrs[static_cast<std::size_t>(i)];
    // softplus(s) - y*s, evaluated stably
    out.loss += std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s))) - y * s;
    dscore[i] = (1.0 / (1.0 + std::exp(-s)) - y) / n;
  }
  out.loss /= n;
  out.grad.w2 = act.transpose() * dscore;
  out.grad.b2 = dscore.sum();
  const Matrix dpre = (dscore * d.w2.transpose()).cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
  out.grad.w1 = dpre.transpose() * h;
  out.grad.b1 = dpre.colwise().sum().transpose();
  out.grad_h = dpre * d.w1;
  return out;
}

}  // namespace

TrainedModel train_adversarial(const SplitDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.method != Method::kAdv) throw ValidationError("train_adversarial expects method adv");
  check_data(data);
  const AdvOptions& adv = *cfg.adv;
  const auto start = Clock::now();

  const PackedSplit train = pack(data.train, data.dim);
  const PackedSplit dev = pack(data.dev, data.dim);
  Rng enc_rng = make_rng(cfg.seed, Stream::kEncoderInit);
  Rng head_rng = make_rng(cfg.seed, Stream::kHeadInit);
  Rng disc_rng = make_rng(cfg.seed, Stream::kDiscriminators);
  TrainedModel model;
  model.encoder = init_encoder(data.dim, cfg.hidden, cfg.activation, enc_rng);
  model.head = init_head(cfg.hidden, data.num_classes, head_rng);
  Optimizer opt(model.encoder, model.head, cfg.learning_rate);

  std::vector<Discriminator> discs;
  std::vector<AdamState> disc_opt;
  for (int k = 0; k < adv.discriminators; ++k) {
    discs.push_back(init_discriminator(cfg.hidden, cfg.hidden, disc_rng));
    disc_opt.push_back(AdamState::zeros(disc_size(discs.back()), cfg.learning_rate));
  }

  EncoderParams best_enc = model.encoder;
  ClassifierHead best_head = model.head;
  double best_dev = -1.0;
  int stale = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Averages avg;
    for (const Batch& rows : make_batches(train.size(), cfg.batch_size, cfg.seed, epoch)) {
      const PackedSplit batch = pack_rows(train, rows);
      GradientBundle g = backward(model.encoder, model.head, batch, cfg.loss, LossMode::kCe);
      require_finite(g, epoch);

      const EncoderTrace trace = encode_traced(model.encoder, batch.x);
      const Matrix& h = trace.output;
      Matrix reversed = Matrix::Zero(h.rows(), h.cols());
      std::vector<Discriminator> grads;
      double adv_loss = 0.0;
      for (const Discriminator& d : discs) {
        DiscriminatorPass pass = discriminator_pass(d, h, batch.protected_attrs);
        if (!std::isfinite(pass.loss)) {
          throw DivergenceError("non-finite discriminator loss at epoch " + std::to_string(epoch));
        }
        adv_loss += pass.loss;
        reversed -= pass.grad_h;
        grads.push_back(std::move(pass.grad));
      }
      if (adv.orthogonality != 0.0) {
        for (std::size_t k = 0; k < discs.size(); ++k) {
          for (std::size_t l = k + 1; l < discs.size(); ++l) {
            const double inner = discs[k].w1.cwiseProduct(discs[l].w1).sum();
            grads[k].w1 += adv.orthogonality * 2.0 * inner * discs[l].w1;
            grads[l].w1 += adv.orthogonality * 2.0 * inner * discs[k].w1;
          }
        }
      }

      // Gradient reversal: the encoder ascends the discriminators' loss.
      if (adv.lambda != 0.0) {
        const EncoderParams rev = encoder_backward(model.encoder, batch.x, trace, adv.lambda * reversed);
        g.encoder.w1 += rev.w1;
        g.encoder.b1 += rev.b1;
        g.encoder.w2 += rev.w2;
        g.encoder.b2 += rev.b2;
      }
      opt.step_encoder(model.encoder, g.encoder);
      opt.step_head(model.head, g.head);
      for (std::size_t k = 0; k < discs.size(); ++k) {
        Vector flat = flatten(discs[k]);
        adam_update(disc_opt[k], flat, flatten(grads[k]));
        unflatten(flat, discs[k]);
      }
      avg.add(g);
      avg.adversarial += adv_loss / static_cast<double>(discs.size());
    }
    const double dev_acc = split_accuracy(model.encoder, model.head, dev);
    model.history.push_back(avg.record(epoch, dev_acc, "adversarial"));
    if (dev_acc > best_dev) {
      best_dev = dev_acc;
      best_enc = model.encoder;
      best_head = model.head;
      model.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  model.encoder = std::move(best_enc);
  model.head = std::move(best_head);
  model.train_seconds = seconds_since(start);
  return model;
}

TrainedModel run_inlp(const TrainedModel& base, const SplitDataset& data, int iterations,
                      const TrainConfig& cfg) {
  if (iterations < 0) throw ValidationError("run_inlp: iterations must be >= 0");
  check_data(data);
  const InlpOptions opts = cfg.inlp.value_or(InlpOptions{});
  const auto start = Clock::now();

  const PackedSplit train = pack(data.train, data.dim);
  const PackedSplit dev = pack(data.dev, data.dim);
  TrainedModel base_plain = base;
  base_plain.projector.reset();
  const Matrix train_h = model_representations(base_plain, train.x);
  const Matrix dev_h = model_representations(base_plain, dev.x);
  const int hidden = static_cast<int>(train_h.cols());

  const double dev_ones = static_cast<double>(std::count(dev.protected_attrs.begin(), dev.protected_attrs.end(), 1)) /
                          static_cast<double>(dev.size());
  const double chance = std::max(dev_ones, 1.0 - dev_ones);

  TrainedModel model = base_plain;
  Projector proj = Projector::identity(hidden);
  for (int it = 1; it <= iterations; ++it) {
    const Matrix projected_train = train_h * proj.matrix;
    const ProbeModel probe =
        train_probe(projected_train, train.protected_attrs, opts.probe, derive_seed(cfg.seed, Stream::kInlp, it));
    if (!probe.weights.allFinite() || !std::isfinite(probe.bias)) {
      throw DivergenceError("run_inlp: probe training produced non-finite weights");
    }
    const double dev_acc = probe_accuracy(probe, dev_h * proj.matrix, dev.protected_attrs);
    model.inlp_trace.push_back({it, dev_acc, proj.rank()});
    if (dev_acc <= chance + opts.chance_tolerance) break;

    // The probe only sees P h, so its effective direction in h-space is P w.
    const Vector direction = proj.matrix * probe.weights;
    if (!(direction.norm() > kZeroNormTolerance)) break;
    Matrix next = rank1_nullspace_projector(direction) * proj.matrix;
    proj.matrix = 0.5 * (next + next.transpose());
    proj.iterations = it;
    model.inlp_trace.back().rank_after = proj.rank();
  }

  if (proj.iterations > 0) {
    const HeadFit fit = train_head(train_h * proj.matrix, train.labels, dev_h * proj.matrix, dev.labels,
                                   data.num_classes, cfg);
    model.head = fit.head;
  }
  model.projector = std::move(proj);
  model.train_seconds = base.train_seconds + seconds_since(start);
  return model;
}

TrainedModel train(const SplitDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  switch (cfg.method) {
    case Method::kCe:
    case Method::kCon:
    case Method::kCeScl:
    case Method::kCeFcl:
      return train_joint(data, cfg);
    case Method::kConFt:
      return train_pipelined(data, cfg);
    case Method::kAdv:
      return train_adversarial(data, cfg);
    case Method::kInlp: {
      TrainConfig base_cfg = cfg;
      base_cfg.method = Method::kCe;
      base_cfg.inlp.reset();
      const TrainedModel base = train_joint(data, base_cfg);
      return run_inlp(base, data, cfg.inlp->iterations, cfg);
    }
  }
  throw ValidationError("unhandled method");
}

std::size_t select_model(std::span<const Candidate> candidates, double epsilon) {
  if (candidates.empty()) throw ValidationError("select_model: no candidates");
  if (!(epsilon >= 0.0)) throw ValidationError("select_model: epsilon must be >= 0");
  double best_acc = -std::numeric_limits<double>::infinity();
  for (const auto& c : candidates) best_acc = std::max(best_acc, c.dev.accuracy);

  std::size_t chosen = candidates.size();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const FairnessReport& r = candidates[i].dev;
    if (r.accuracy < best_acc - epsilon) continue;
    if (chosen == candidates.size()) {
      chosen = i;
      continue;
    }
    const FairnessReport& c = candidates[chosen].dev;
    const bool better = r.gap < c.gap ||
                        (r.gap == c.gap && (r.accuracy > c.accuracy ||
                                            (r.accuracy == c.accuracy && r.leakage_h < c.leakage_h)));
    if (better) chosen = i;
  }
  return chosen;
}

}  // namespace fairscl
