#include <algorithm>
#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "fairscl/trainers.hpp"

using namespace fairscl;

namespace {

const SplitDataset& small_data() {
  static const SplitDataset data = generate_synthetic(SkewSpec{}, {1500, 400, 400}, 21);
  return data;
}

TrainConfig small_config(Method m) {
  TrainConfig cfg;
  cfg.method = m;
  cfg.hidden = 16;
  cfg.batch_size = 128;
  cfg.max_epochs = 4;
  cfg.seed = 5;
  if (m == Method::kInlp) cfg.inlp = InlpOptions{};
  if (m == Method::kAdv) cfg.adv = AdvOptions{};
  return cfg;
}

bool same_weights(const TrainedModel& a, const TrainedModel& b) {
  return a.encoder.w1 == b.encoder.w1 && a.encoder.b1 == b.encoder.b1 && a.encoder.w2 == b.encoder.w2 &&
         a.encoder.b2 == b.encoder.b2 && a.head.w == b.head.w && a.head.b == b.head.b;
}

}  // namespace

TEST(Method, NamesRoundTrip) {
  for (Method m : {Method::kCe, Method::kInlp, Method::kAdv, Method::kCon, Method::kConFt, Method::kCeScl,
                   Method::kCeFcl}) {
    EXPECT_EQ(method_from_string(to_string(m)), m);
  }
  EXPECT_THROW(method_from_string("svm"), ValidationError);
}

TEST(TrainConfig, OptionsMustMatchMethod) {
  TrainConfig cfg = small_config(Method::kCe);
  EXPECT_NO_THROW(cfg.validate());
  cfg.method = Method::kInlp;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = small_config(Method::kCe);
  cfg.adv = AdvOptions{};
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = small_config(Method::kCe);
  cfg.batch_size = 1;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Joint, DeterministicForFixedSeed) {
  const auto a = train(small_data(), small_config(Method::kCon));
  const auto b = train(small_data(), small_config(Method::kCon));
  EXPECT_TRUE(same_weights(a, b));
  EXPECT_FALSE(a.history.empty());
}

TEST(Joint, ZeroBetaReducesToCrossEntropy) {
  TrainConfig con = small_config(Method::kCon);
  con.loss.beta = 0.0;
  const auto ce = train(small_data(), small_config(Method::kCe));
  const auto c = train(small_data(), con);
  EXPECT_TRUE(same_weights(ce, c));
  ASSERT_EQ(ce.history.size(), c.history.size());
  for (std::size_t i = 0; i < ce.history.size(); ++i) EXPECT_EQ(ce.history[i].train_loss, c.history[i].train_loss);
}

TEST(Joint, RecordsContrastiveTermsPerMode) {
  const auto scl = train(small_data(), small_config(Method::kCeScl));
  EXPECT_GT(scl.history.front().scl, 0.0);
  EXPECT_EQ(scl.history.front().fcl, 0.0);
  const auto fcl = train(small_data(), small_config(Method::kCeFcl));
  EXPECT_EQ(fcl.history.front().scl, 0.0);
  EXPECT_GT(fcl.history.front().fcl, 0.0);
}

TEST(Adversarial, ZeroLambdaReducesToCrossEntropy) {
  TrainConfig adv = small_config(Method::kAdv);
  adv.adv->lambda = 0.0;
  const auto ce = train(small_data(), small_config(Method::kCe));
  const auto a = train(small_data(), adv);
  EXPECT_TRUE(same_weights(ce, a));
}

TEST(Adversarial, OrthogonalityPenaltyByHand) {
  Discriminator a, b, c;
  a.w1 = Matrix::Identity(2, 2);
  b.w1 = Matrix::Ones(2, 2);
  c.w1 = Matrix::Zero(2, 2);
  c.w1(0, 1) = 3.0;
  const std::vector<Discriminator> ds = {a, b, c};
  // <a,b> = 2, <a,c> = 0, <b,c> = 3
  EXPECT_DOUBLE_EQ(orthogonality_penalty(ds), 4.0 + 0.0 + 9.0);
  EXPECT_EQ(orthogonality_penalty(std::vector<Discriminator>{a}), 0.0);
}

TEST(Pipelined, ClassifierSeesFrozenBestEncoder) {
  const TrainConfig cfg = small_config(Method::kConFt);
  const auto model = train(small_data(), cfg);
  const auto stage1 = std::count_if(model.history.begin(), model.history.end(),
                                    [](const EpochRecord& r) { return r.stage == "encoder"; });
  EXPECT_GT(stage1, 0);
  EXPECT_EQ(model.history.back().stage, "classifier");

  // The returned encoder is the best stage-1 snapshot...
  const PackedSplit dev = pack(small_data().dev, small_data().dim);
  double obj = 0.0;
  const auto batches = sequential_batches(dev.size(), cfg.batch_size);
  for (const Batch& rows : batches) {
    const PackedSplit b = pack_rows(dev, rows);
    const auto c = contrastive_terms(encode_batch(model.encoder, b.x), b.labels, b.protected_attrs, cfg.loss.tau,
                                     0.0, 0.0, false);
    obj += c.scl - c.fcl;
  }
  obj /= static_cast<double>(batches.size());
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : model.history)
    if (r.stage == "encoder") best = std::min(best, r.dev_metric);
  EXPECT_EQ(obj, best);

  // ...and stage 2 is exactly a classifier fit on its frozen outputs.
  const PackedSplit train_split = pack(small_data().train, small_data().dim);
  const HeadFit fit = train_head(encode_batch(model.encoder, train_split.x), train_split.labels,
                                 encode_batch(model.encoder, dev.x), dev.labels, 2, cfg);
  EXPECT_EQ(fit.head.w, model.head.w);
  EXPECT_EQ(fit.head.b, model.head.b);
}

TEST(Inlp, ZeroIterationsIsIdentity) {
  const auto ce = train(small_data(), small_config(Method::kCe));
  const auto out = run_inlp(ce, small_data(), 0, small_config(Method::kInlp));
  ASSERT_TRUE(out.projector.has_value());
  EXPECT_EQ(out.projector->matrix, Matrix::Identity(16, 16));
  EXPECT_EQ(out.head.w, ce.head.w);
  EXPECT_TRUE(out.inlp_trace.empty());
}

TEST(Inlp, RankFallsByAtMostOnePerIteration) {
  const auto model = train(small_data(), small_config(Method::kInlp));
  ASSERT_TRUE(model.projector.has_value());
  ASSERT_FALSE(model.inlp_trace.empty());
  int prev = 16;
  for (const auto& step : model.inlp_trace) {
    EXPECT_LE(step.rank_after, prev);
    EXPECT_GE(step.rank_after, prev - 1);
    prev = step.rank_after;
  }
  EXPECT_EQ(model.projector->rank(), prev);
  EXPECT_LT((model.projector->matrix * model.projector->matrix - model.projector->matrix).norm(), 1e-8);
}

TEST(Inlp, RemovesLinearLeakage) {
  const auto ce = train(small_data(), small_config(Method::kCe));
  const auto inlp = train(small_data(), small_config(Method::kInlp));
  const auto r_ce = evaluate(ce, small_data(), EvalSplit::kTest, EvalOptions{});
  const auto r_inlp = evaluate(inlp, small_data(), EvalSplit::kTest, EvalOptions{});
  EXPECT_LT(r_inlp.leakage_h, r_ce.leakage_h);
  EXPECT_LE(r_inlp.leakage_h, 0.6);
}

TEST(TrainHead, LearnsLinearlySeparableLabels) {
  Matrix x(200, 2);
  std::vector<int> y(200);
  for (int i = 0; i < 200; ++i) {
    y[i] = i % 2;
    x(i, 0) = y[i] ? 1.0 + 0.01 * i : -1.0 - 0.01 * i;
    x(i, 1) = 0.5;
  }
  TrainConfig cfg = small_config(Method::kCe);
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 20;
  const HeadFit fit = train_head(x, y, x, y, 2, cfg);
  EXPECT_EQ(accuracy(predict_batch(fit.head, x), y), 1.0);
}
