#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>

#include <gtest/gtest.h>

#include "fairscl/dataset.hpp"
#include "fairscl/evaluation.hpp"

using namespace fairscl;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& content) {
  const fs::path dir = fs::temp_directory_path() / "fairscl_dataset_tests";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p) << content;
  return p;
}

std::size_t parse_error_line(const fs::path& p) {
  try {
    load_embeddings(p);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST(Batches, DropsOnlySingletonTail) {
  auto b = make_batches(10, 4, 1, 0);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].size(), 4u);
  EXPECT_EQ(b[1].size(), 4u);
  EXPECT_EQ(b[2].size(), 2u);

  b = make_batches(9, 4, 1, 0);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0].size() + b[1].size(), 8u);
}

TEST(Batches, PermutationAndDeterminism) {
  const auto a = make_batches(100, 7, 42, 3);
  const auto b = make_batches(100, 7, 42, 3);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, make_batches(100, 7, 42, 4));
  std::set<std::size_t> seen;
  for (const auto& batch : a) seen.insert(batch.begin(), batch.end());
  EXPECT_EQ(seen.size(), 100u);  // 14 full batches plus a tail of 2
  EXPECT_EQ(make_batches(99, 7, 42, 3).size(), 14u);  // tail of 1 is dropped
  EXPECT_THROW(make_batches(10, 1, 0, 0), ValidationError);
}

TEST(Batches, Sequential) {
  const auto b = sequential_batches(7, 3);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0], (Batch{0, 1, 2}));
  EXPECT_EQ(b[1], (Batch{3, 4, 5}));
}

TEST(Synthetic, TrainSkewMatchesJointWithinTolerance) {
  const SkewSpec spec;
  const auto data = generate_synthetic(spec, {10000, 2000, 2000}, 7);
  std::array<double, 4> counts{};
  for (const auto& inst : data.train) counts[static_cast<std::size_t>(inst.main_label * 2 + inst.protected_attr)] += 1;
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(counts[k] / 10000.0, spec.joint[k], 0.02);
  EXPECT_EQ(data.dim, 16);
  EXPECT_EQ(data.num_classes, 2);
}

TEST(Synthetic, BalancedEvaluationSplits) {
  const auto data = generate_synthetic(SkewSpec{}, {2000, 2000, 2000}, 7);
  std::array<double, 4> counts{};
  for (const auto& inst : data.test) counts[static_cast<std::size_t>(inst.main_label * 2 + inst.protected_attr)] += 1;
  for (double c : counts) EXPECT_NEAR(c / 2000.0, 0.25, 0.03);
}

TEST(Synthetic, SameSeedSameData) {
  const auto a = generate_synthetic(SkewSpec{}, {50, 20, 20}, 5);
  const auto b = generate_synthetic(SkewSpec{}, {50, 20, 20}, 5);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].embedding, b.train[i].embedding);
    EXPECT_EQ(a.train[i].main_label, b.train[i].main_label);
  }
}

TEST(Synthetic, ZeroShiftLeavesAttributeUndecodable) {
  SkewSpec spec;
  spec.protected_shift = 0.0;
  spec.joint = {0.25, 0.25, 0.25, 0.25};
  const auto data = generate_synthetic(spec, {4000, 500, 2000}, 11);
  const auto train = pack(data.train, data.dim);
  const auto test = pack(data.test, data.dim);
  const auto probe = train_probe(train.x, train.protected_attrs, ProbeConfig{}, 1);
  EXPECT_NEAR(probe_accuracy(probe, test.x, test.protected_attrs), 0.5, 0.03);
}

TEST(Synthetic, InvalidSpecRejected) {
  SkewSpec spec;
  spec.joint = {0.5, 0.5, 0.5, 0.5};
  EXPECT_THROW(spec.validate(), ValidationError);
  spec = SkewSpec{};
  spec.dim = 2;
  EXPECT_THROW(spec.validate(), ValidationError);
  EXPECT_NO_THROW(SkewSpec::diagonal(4, 0.8).validate());
}

TEST(EmbeddingFile, RoundTripIsExact) {
  const auto data = generate_synthetic(SkewSpec{}, {30, 10, 10}, 2);
  const fs::path p = fs::temp_directory_path() / "fairscl_dataset_tests" / "roundtrip.csv";
  fs::create_directories(p.parent_path());
  write_embeddings(p, data.dim, data.num_classes, data.train);
  const auto file = load_embeddings(p);
  ASSERT_EQ(file.instances.size(), data.train.size());
  EXPECT_EQ(file.dim, 16);
  for (std::size_t i = 0; i < file.instances.size(); ++i) {
    EXPECT_EQ(file.instances[i].embedding, data.train[i].embedding);
    EXPECT_EQ(file.instances[i].main_label, data.train[i].main_label);
    EXPECT_EQ(file.instances[i].protected_attr, data.train[i].protected_attr);
  }
}

TEST(EmbeddingFile, ParsesWellFormedInput) {
  const auto file = load_embeddings(temp_file("ok.csv", "2,2\n0,1,0.5,-1e-3\n1,0,2,3\n"));
  ASSERT_EQ(file.instances.size(), 2u);
  EXPECT_DOUBLE_EQ(file.instances[0].embedding[1], -1e-3);
  EXPECT_EQ(file.instances[1].main_label, 1);
}

TEST(EmbeddingFile, ErrorsCarryLineNumbers) {
  EXPECT_EQ(parse_error_line(temp_file("h.csv", "two,2\n")), 1u);
  EXPECT_EQ(parse_error_line(temp_file("cols.csv", "2,2\n0,1,0.5,1\n0,1,0.5\n")), 3u);
  EXPECT_EQ(parse_error_line(temp_file("num.csv", "2,2\n0,1,0.5,abc\n")), 2u);
  EXPECT_EQ(parse_error_line(temp_file("label.csv", "2,2\n0,1,0.5,1\n1,0,0,0\n2,0,1,1\n")), 4u);
  EXPECT_EQ(parse_error_line(temp_file("attr.csv", "2,2\n0,2,0.5,1\n")), 2u);
  EXPECT_THROW(load_embeddings(temp_file("empty.csv", "")), ParseError);
}

TEST(EmbeddingFile, SplitsMustAgree) {
  const fs::path a = temp_file("a.csv", "2,2\n0,0,1,2\n1,1,1,2\n");
  const fs::path b = temp_file("b.csv", "3,2\n0,0,1,2,3\n");
  EXPECT_THROW(load_split_dataset(a, a, b), ValidationError);
  EXPECT_NO_THROW(load_split_dataset(a, a, a));
}

TEST(Pack, RowsSelectsSubset) {
  const auto data = generate_synthetic(SkewSpec{}, {20, 10, 10}, 2);
  const auto packed = pack(data.train, data.dim);
  const std::vector<std::size_t> rows = {3, 0, 7};
  const auto sub = pack_rows(packed, rows);
  ASSERT_EQ(sub.size(), 3u);
  EXPECT_EQ(sub.x.row(0), packed.x.row(3));
  EXPECT_EQ(sub.labels[2], packed.labels[7]);
}
