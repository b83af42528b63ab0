#include "fairscl/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "fairscl/seeding.hpp"

namespace fairscl {

SkewSpec SkewSpec::diagonal(int num_classes, double agreement) {
  SkewSpec spec;
  spec.num_classes = num_classes;
  spec.joint.assign(static_cast<std::size_t>(num_classes) * 2, 0.0);
  for (int y = 0; y < num_classes; ++y) {
    const int paired = y % 2;
    spec.joint[y * 2 + paired] = agreement / num_classes;
    spec.joint[y * 2 + (1 - paired)] = (1.0 - agreement) / num_classes;
  }
  return spec;
}

void SkewSpec::validate() const {
  if (num_classes < 2) throw ValidationError("skew spec: need at least 2 classes");
  if (dim < num_classes + 1) {
    throw ValidationError("skew spec: dim must exceed the number of classes (one extra "
                          "direction carries the protected shift)");
  }
  if (joint.size() != static_cast<std::size_t>(num_classes) * 2) {
    throw ValidationError("skew spec: joint table must have 2 * num_classes entries");
  }
  double total = 0.0;
  for (double p : joint) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError("skew spec: negative proportion");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("skew spec: proportions must sum to 1");
  if (!(noise > 0.0)) throw ValidationError("skew spec: noise must be positive");
  if (!(class_separation >= 0.0) || !(protected_shift >= 0.0)) {
    throw ValidationError("skew spec: scales must be non-negative");
  }
}

void SplitDataset::validate() const {
  if (dim <= 0 || num_classes < 2) throw ValidationError("dataset: bad declared dimensions");
  for (const auto* split : {&train, &dev, &test}) {
    if (split->empty()) throw ValidationError("dataset: empty split");
    for (const auto& inst : *split) {
      if (inst.embedding.size() != dim) throw DimensionError("dataset: embedding dimension mismatch");
      if (inst.main_label < 0 || inst.main_label >= num_classes) {
        throw ValidationError("dataset: main label out of range");
      }
      if (inst.protected_attr != 0 && inst.protected_attr != 1) {
        throw ValidationError("dataset: protected attribute must be 0 or 1");
      }
    }
  }
}

PackedSplit pack(const std::vector<LabeledInstance>& instances, int dim) {
  PackedSplit out;
  out.x.resize(static_cast<Eigen::Index>(instances.size()), dim);
  out.labels.reserve(instances.size());
  out.protected_attrs.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (instances[i].embedding.size() != dim) throw DimensionError("pack: embedding dimension mismatch");
    out.x.row(static_cast<Eigen::Index>(i)) = instances[i].embedding.transpose();
    out.labels.push_back(instances[i].main_label);
    out.protected_attrs.push_back(instances[i].protected_attr);
  }
  return out;
}

PackedSplit pack_rows(const PackedSplit& split, std::span<const std::size_t> rows) {
  PackedSplit out;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), split.x.cols());
  out.labels.reserve(rows.size());
  out.protected_attrs.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = split.x.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(split.labels[rows[i]]);
    out.protected_attrs.push_back(split.protected_attrs[rows[i]]);
  }
  return out;
}

namespace {

std::vector<LabeledInstance> sample_split(const SkewSpec& spec, const std::vector<double>& cells,
                                          std::size_t count, Rng& rng) {
  std::discrete_distribution<int> pick_cell(cells.begin(), cells.end());
  std::normal_distribution<double> gauss(0.0, spec.noise);
  std::vector<LabeledInstance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int cell = pick_cell(rng);
    LabeledInstance inst;
    inst.main_label = cell / 2;
    inst.protected_attr = cell % 2;
    inst.embedding.resize(spec.dim);
    for (int k = 0; k < spec.dim; ++k) inst.embedding[k] = gauss(rng);
    inst.embedding[inst.main_label] += spec.class_separation;
    inst.embedding[spec.num_classes] += (inst.protected_attr == 1 ? 0.5 : -0.5) * spec.protected_shift;
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace

SplitDataset generate_synthetic(const SkewSpec& spec, const SplitSizes& sizes, std::uint64_t seed) {
  spec.validate();
  if (sizes.train == 0 || sizes.dev == 0 || sizes.test == 0) {
    throw ValidationError("generate_synthetic: split sizes must be positive");
  }
  const std::vector<double> uniform(spec.joint.size(), 1.0 / static_cast<double>(spec.joint.size()));
  const auto& eval_cells = spec.eval_sampling == EvalSampling::kBalanced ? uniform : spec.joint;

  SplitDataset data;
  data.dim = spec.dim;
  data.num_classes = spec.num_classes;
  Rng train_rng = make_rng(seed, Stream::kData, 0);
  Rng dev_rng = make_rng(seed, Stream::kData, 1);
  Rng test_rng = make_rng(seed, Stream::kData, 2);
  data.train = sample_split(spec, spec.joint, sizes.train, train_rng);
  data.dev = sample_split(spec, eval_cells, sizes.dev, dev_rng);
  data.test = sample_split(spec, eval_cells, sizes.test, test_rng);
  return data;
}

ParseError::ParseError(const std::string& path, std::size_t line, const std::string& what)
    : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                         : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <typename T>
bool parse_number(std::string_view field, T& out) {
  while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\r')) field.remove_suffix(1);
  if (field.empty()) return false;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
  return ec == std::errc() && ptr == field.data() + field.size();
}

}  // namespace

EmbeddingFile load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  const std::string name = path.string();
  if (!in) throw ParseError(name, 0, "cannot open file");

  EmbeddingFile file;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_commas(line);
    if (!have_header) {
      if (fields.size() != 2 || !parse_number(fields[0], file.dim) ||
          !parse_number(fields[1], file.num_classes)) {
        throw ParseError(name, line_no, "expected header line '<d>,<Y>'");
      }
      if (file.dim <= 0) throw ParseError(name, line_no, "dimension must be positive");
      if (file.num_classes < 2) throw ParseError(name, line_no, "need at least 2 classes");
      have_header = true;
      continue;
    }
    if (fields.size() != static_cast<std::size_t>(file.dim) + 2) {
      throw ParseError(name, line_no,
                       "expected " + std::to_string(file.dim + 2) + " fields, found " +
                           std::to_string(fields.size()));
    }
    LabeledInstance inst;
    if (!parse_number(fields[0], inst.main_label)) throw ParseError(name, line_no, "bad label");
    if (inst.main_label < 0 || inst.main_label >= file.num_classes) {
      throw ParseError(name, line_no, "label out of range");
    }
    if (!parse_number(fields[1], inst.protected_attr) ||
        (inst.protected_attr != 0 && inst.protected_attr != 1)) {
      throw ParseError(name, line_no, "protected attribute must be 0 or 1");
    }
    inst.embedding.resize(file.dim);
    for (int k = 0; k < file.dim; ++k) {
      double value = 0.0;
      if (!parse_number(fields[static_cast<std::size_t>(k) + 2], value) || !std::isfinite(value)) {
        throw ParseError(name, line_no, "bad value in column " + std::to_string(k + 3));
      }
      inst.embedding[k] = value;
    }
    file.instances.push_back(std::move(inst));
  }
  if (!have_header) throw ParseError(name, line_no, "missing header line");
  return file;
}

void write_embeddings(const std::filesystem::path& path, int dim, int num_classes,
                      std::span<const LabeledInstance> instances) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << dim << ',' << num_classes << '\n';
  char buf[32];
  for (const auto& inst : instances) {
    if (inst.embedding.size() != dim) throw DimensionError("write_embeddings: dimension mismatch");
    out << inst.main_label << ',' << inst.protected_attr;
    for (int k = 0; k < dim; ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", inst.embedding[k]);
      out << ',' << buf;
    }
    out << '\n';
  }
}

SplitDataset load_split_dataset(const std::filesystem::path& train, const std::filesystem::path& dev,
                                const std::filesystem::path& test) {
  EmbeddingFile tr = load_embeddings(train);
  EmbeddingFile dv = load_embeddings(dev);
  EmbeddingFile te = load_embeddings(test);
  if (dv.dim != tr.dim || te.dim != tr.dim || dv.num_classes != tr.num_classes ||
      te.num_classes != tr.num_classes) {
    throw ValidationError("embedding files disagree on d or Y");
  }
  SplitDataset data;
  data.dim = tr.dim;
  data.num_classes = tr.num_classes;
  data.train = std::move(tr.instances);
  data.dev = std::move(dv.instances);
  data.test = std::move(te.instances);
  data.validate();
  return data;
}

std::vector<Batch> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                std::uint64_t epoch) {
  if (batch_size < 2) throw ValidationError("make_batches: batch size must be at least 2");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, Stream::kBatches, epoch);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (end - start < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<Batch> sequential_batches(std::size_t n, std::size_t batch_size) {
  if (batch_size < 2) throw ValidationError("sequential_batches: batch size must be at least 2");
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (end - start < 2) break;
    Batch b(end - start);
    std::iota(b.begin(), b.end(), start);
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace fairscl
