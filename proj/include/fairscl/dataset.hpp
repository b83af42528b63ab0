#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fairscl/numkit.hpp"

namespace fairscl {

struct LabeledInstance {
  Vector embedding;
  int main_label = 0;
  int protected_attr = 0;
};

enum class EvalSampling { kBalanced, kSkewed };

// Generative knobs for the synthetic biased-embedding data.
//
// joint[y * 2 + a] is the training-set probability of the (class y,
// attribute a) cell. Class means sit at class_separation * e_y, the protected
// attribute shifts the mean by +-protected_shift / 2 along e_Y (a direction
// orthogonal to every class mean), and each instance adds isotropic Gaussian
// noise with standard deviation noise.
struct SkewSpec {
  int num_classes = 2;
  int dim = 16;
  std::vector<double> joint = {0.4, 0.1, 0.1, 0.4};
  double class_separation = 1.5;
  double protected_shift = 3.0;
  double noise = 1.0;
  EvalSampling eval_sampling = EvalSampling::kBalanced;

  // Each class y is paired with attribute (y % 2) at rate `agreement`.
  static SkewSpec diagonal(int num_classes, double agreement);

  void validate() const;
};

struct SplitSizes {
  std::size_t train = 10000;
  std::size_t dev = 2000;
  std::size_t test = 2000;
};

struct SplitDataset {
  std::vector<LabeledInstance> train;
  std::vector<LabeledInstance> dev;
  std::vector<LabeledInstance> test;
  int dim = 0;
  int num_classes = 0;

  void validate() const;
};

// Row-stacked view of a split used by the training loops.
struct PackedSplit {
  Matrix x;  // n x dim
  std::vector<int> labels;
  std::vector<int> protected_attrs;

  std::size_t size() const { return labels.size(); }
};

PackedSplit pack(const std::vector<LabeledInstance>& instances, int dim);
PackedSplit pack_rows(const PackedSplit& split, std::span<const std::size_t> rows);

SplitDataset generate_synthetic(const SkewSpec& spec, const SplitSizes& sizes, std::uint64_t seed);

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct EmbeddingFile {
  int dim = 0;
  int num_classes = 0;
  std::vector<LabeledInstance> instances;
};

// Format: first line "<d>,<Y>", then one "label,protected,v1,...,vd" row
// per instance. Values are written with 17 significant digits so that a
// write/read cycle reproduces every double exactly.
EmbeddingFile load_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path, int dim, int num_classes,
                      std::span<const LabeledInstance> instances);

SplitDataset load_split_dataset(const std::filesystem::path& train, const std::filesystem::path& dev,
                                const std::filesystem::path& test);

using Batch = std::vector<std::size_t>;

// Seeded permutation of [0, n) chunked into batches; a trailing batch with
// fewer than two rows is dropped since contrastive pairs need a partner.
std::vector<Batch> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                std::uint64_t epoch);

// In-order chunking with the same drop rule, for deterministic evaluation passes.
std::vector<Batch> sequential_batches(std::size_t n, std::size_t batch_size);

}  // namespace fairscl
