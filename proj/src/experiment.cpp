#include "fairscl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "fairscl/seeding.hpp"

namespace fairscl {

namespace {

// Walks one JSON object, recording which keys were consumed so that leftovers
// can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("config: '" + display() + "' must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("config: '" + child_path(key) + "' has the wrong type");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  ObjectReader child(const std::string& key) {
    seen_.insert(key);
    return ObjectReader(j_.at(key), child_path(key));
  }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string child_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ValidationError("config: unknown key '" + child_path(item.key()) + "'");
    }
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_probe(ObjectReader r, ProbeConfig& p) {
  r.get("max_epochs", p.max_epochs);
  r.get("patience", p.patience);
  r.get("batch_size", p.batch_size);
  r.get("learning_rate", p.learning_rate);
  r.get("margin_penalty", p.margin_penalty);
  r.get("dev_fraction", p.dev_fraction);
  r.finish();
}

Json probe_json(const ProbeConfig& p) {
  return {{"max_epochs", p.max_epochs},         {"patience", p.patience},
          {"batch_size", p.batch_size},         {"learning_rate", p.learning_rate},
          {"margin_penalty", p.margin_penalty}, {"dev_fraction", p.dev_fraction}};
}

std::string eval_sampling_name(EvalSampling s) { return s == EvalSampling::kBalanced ? "balanced" : "skewed"; }

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset.synthetic) {
    dataset.skew.validate();
    if (dataset.sizes.train == 0 || dataset.sizes.dev == 0 || dataset.sizes.test == 0) {
      throw ValidationError("config: dataset sizes must be positive");
    }
  } else if (dataset.train_file.empty() || dataset.dev_file.empty() || dataset.test_file.empty()) {
    throw ValidationError("config: dataset.files needs train, dev and test paths");
  }
  if (methods.empty()) throw ValidationError("config: train.methods must not be empty");
  if (runs < 1) throw ValidationError("config: runs must be >= 1");
  if (workers < 1) throw ValidationError("config: workers must be >= 1");
  if (!(select_epsilon >= 0.0)) throw ValidationError("config: evaluation.select_epsilon must be >= 0");
  for (Method m : methods) make_train_config(*this, m, seed).validate();
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig cfg;
  ObjectReader root(j, "");
  root.get("seed", cfg.seed);
  root.get("runs", cfg.runs);
  root.get("workers", cfg.workers);
  std::string out = cfg.out.string();
  root.get("out", out);
  cfg.out = out;

  if (root.has("dataset")) {
    ObjectReader ds = root.child("dataset");
    std::string source = "synthetic";
    ds.get("source", source);
    if (source != "synthetic" && source != "files") {
      throw ValidationError("config: 'dataset.source' must be 'synthetic' or 'files'");
    }
    cfg.dataset.synthetic = source == "synthetic";
    if (ds.has("synthetic")) {
      ObjectReader s = ds.child("synthetic");
      SkewSpec& k = cfg.dataset.skew;
      s.get("num_classes", k.num_classes);
      if (s.has("joint")) {
        s.get("joint", k.joint);
      } else if (k.num_classes != 2) {
        k.joint = SkewSpec::diagonal(k.num_classes, 0.8).joint;
      }
      s.get("dim", k.dim);
      s.get("class_separation", k.class_separation);
      s.get("protected_shift", k.protected_shift);
      s.get("noise", k.noise);
      std::string sampling = eval_sampling_name(k.eval_sampling);
      s.get("eval_sampling", sampling);
      if (sampling != "balanced" && sampling != "skewed") {
        throw ValidationError("config: 'dataset.synthetic.eval_sampling' must be 'balanced' or 'skewed'");
      }
      k.eval_sampling = sampling == "balanced" ? EvalSampling::kBalanced : EvalSampling::kSkewed;
      s.get("train_size", cfg.dataset.sizes.train);
      s.get("dev_size", cfg.dataset.sizes.dev);
      s.get("test_size", cfg.dataset.sizes.test);
      if (s.has("seed")) {
        std::uint64_t seed = 0;
        s.get("seed", seed);
        cfg.dataset.seed = seed;
      }
      s.finish();
    }
    if (ds.has("files")) {
      ObjectReader f = ds.child("files");
      std::string train, dev, test;
      f.get("train", train);
      f.get("dev", dev);
      f.get("test", test);
      f.finish();
      cfg.dataset.train_file = train;
      cfg.dataset.dev_file = dev;
      cfg.dataset.test_file = test;
    }
    ds.finish();
  }

  if (root.has("train")) {
    ObjectReader t = root.child("train");
    if (t.has("methods")) {
      std::vector<std::string> names;
      t.get("methods", names);
      cfg.methods.clear();
      for (const auto& n : names) cfg.methods.push_back(method_from_string(n));
    }
    TrainConfig& tc = cfg.train;
    t.get("alpha", tc.loss.alpha);
    t.get("beta", tc.loss.beta);
    t.get("tau", tc.loss.tau);
    t.get("hidden", tc.hidden);
    std::string act = to_string(tc.activation);
    t.get("activation", act);
    tc.activation = activation_from_string(act);
    t.get("learning_rate", tc.learning_rate);
    t.get("batch_size", tc.batch_size);
    t.get("max_epochs", tc.max_epochs);
    t.get("patience", tc.patience);
    if (t.has("inlp")) {
      ObjectReader r = t.child("inlp");
      r.get("iterations", cfg.inlp.iterations);
      r.get("chance_tolerance", cfg.inlp.chance_tolerance);
      if (r.has("probe")) read_probe(r.child("probe"), cfg.inlp.probe);
      r.finish();
    }
    if (t.has("adv")) {
      ObjectReader r = t.child("adv");
      r.get("discriminators", cfg.adv.discriminators);
      r.get("lambda", cfg.adv.lambda);
      r.get("orthogonality", cfg.adv.orthogonality);
      r.finish();
    }
    t.finish();
  }

  if (root.has("evaluation")) {
    ObjectReader e = root.child("evaluation");
    if (e.has("probe")) read_probe(e.child("probe"), cfg.probe);
    e.get("select_epsilon", cfg.select_epsilon);
    e.get("export_representations", cfg.export_representations);
    e.finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

Json to_json(const ExperimentConfig& cfg) {
  Json ds;
  ds["source"] = cfg.dataset.synthetic ? "synthetic" : "files";
  if (cfg.dataset.synthetic) {
    const SkewSpec& k = cfg.dataset.skew;
    ds["synthetic"] = {{"num_classes", k.num_classes},
                       {"dim", k.dim},
                       {"joint", k.joint},
                       {"class_separation", k.class_separation},
                       {"protected_shift", k.protected_shift},
                       {"noise", k.noise},
                       {"eval_sampling", eval_sampling_name(k.eval_sampling)},
                       {"train_size", cfg.dataset.sizes.train},
                       {"dev_size", cfg.dataset.sizes.dev},
                       {"test_size", cfg.dataset.sizes.test}};
    if (cfg.dataset.seed) ds["synthetic"]["seed"] = *cfg.dataset.seed;
  } else {
    ds["files"] = {{"train", cfg.dataset.train_file.string()},
                   {"dev", cfg.dataset.dev_file.string()},
                   {"test", cfg.dataset.test_file.string()}};
  }
  std::vector<std::string> methods;
  for (Method m : cfg.methods) methods.push_back(to_string(m));
  const TrainConfig& tc = cfg.train;
  Json train = {{"methods", methods},
                {"alpha", tc.loss.alpha},
                {"beta", tc.loss.beta},
                {"tau", tc.loss.tau},
                {"hidden", tc.hidden},
                {"activation", to_string(tc.activation)},
                {"learning_rate", tc.learning_rate},
                {"batch_size", tc.batch_size},
                {"max_epochs", tc.max_epochs},
                {"patience", tc.patience},
                {"inlp",
                 {{"iterations", cfg.inlp.iterations},
                  {"chance_tolerance", cfg.inlp.chance_tolerance},
                  {"probe", probe_json(cfg.inlp.probe)}}},
                {"adv",
                 {{"discriminators", cfg.adv.discriminators},
                  {"lambda", cfg.adv.lambda},
                  {"orthogonality", cfg.adv.orthogonality}}}};
  return {{"dataset", ds},
          {"train", train},
          {"evaluation",
           {{"probe", probe_json(cfg.probe)},
            {"select_epsilon", cfg.select_epsilon},
            {"export_representations", cfg.export_representations}}},
          {"seed", cfg.seed},
          {"runs", cfg.runs},
          {"workers", cfg.workers},
          {"out", cfg.out.string()}};
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

SplitDataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset.synthetic) {
    return generate_synthetic(cfg.dataset.skew, cfg.dataset.sizes, cfg.dataset.seed.value_or(cfg.seed));
  }
  return load_split_dataset(cfg.dataset.train_file, cfg.dataset.dev_file, cfg.dataset.test_file);
}

TrainConfig make_train_config(const ExperimentConfig& cfg, Method method, std::uint64_t seed) {
  TrainConfig tc = cfg.train;
  tc.method = method;
  tc.seed = seed;
  tc.inlp.reset();
  tc.adv.reset();
  if (method == Method::kInlp) tc.inlp = cfg.inlp;
  if (method == Method::kAdv) tc.adv = cfg.adv;
  return tc;
}

std::uint64_t run_seed(const ExperimentConfig& cfg, int run) { return cfg.seed + static_cast<std::uint64_t>(run); }

Json to_json(const TrainConfig& cfg) {
  Json j = {{"method", to_string(cfg.method)},
            {"alpha", cfg.loss.alpha},
            {"beta", cfg.loss.beta},
            {"tau", cfg.loss.tau},
            {"hidden", cfg.hidden},
            {"activation", to_string(cfg.activation)},
            {"learning_rate", cfg.learning_rate},
            {"batch_size", cfg.batch_size},
            {"max_epochs", cfg.max_epochs},
            {"patience", cfg.patience},
            {"seed", cfg.seed}};
  if (cfg.inlp) {
    j["inlp"] = {{"iterations", cfg.inlp->iterations},
                 {"chance_tolerance", cfg.inlp->chance_tolerance},
                 {"probe", probe_json(cfg.inlp->probe)}};
  }
  if (cfg.adv) {
    j["adv"] = {{"discriminators", cfg.adv->discriminators},
                {"lambda", cfg.adv->lambda},
                {"orthogonality", cfg.adv->orthogonality}};
  }
  return j;
}

namespace {

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig tc;
  tc.method = method_from_string(j.at("method").get<std::string>());
  tc.loss.alpha = j.at("alpha").get<double>();
  tc.loss.beta = j.at("beta").get<double>();
  tc.loss.tau = j.at("tau").get<double>();
  tc.hidden = j.at("hidden").get<int>();
  tc.activation = activation_from_string(j.at("activation").get<std::string>());
  tc.learning_rate = j.at("learning_rate").get<double>();
  tc.batch_size = j.at("batch_size").get<std::size_t>();
  tc.max_epochs = j.at("max_epochs").get<int>();
  tc.patience = j.at("patience").get<int>();
  tc.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("inlp")) {
    InlpOptions o;
    o.iterations = j["inlp"].at("iterations").get<int>();
    o.chance_tolerance = j["inlp"].at("chance_tolerance").get<double>();
    read_probe(ObjectReader(j["inlp"].at("probe"), "inlp.probe"), o.probe);
    tc.inlp = o;
  }
  if (j.contains("adv")) {
    AdvOptions o;
    o.discriminators = j["adv"].at("discriminators").get<int>();
    o.lambda = j["adv"].at("lambda").get<double>();
    o.orthogonality = j["adv"].at("orthogonality").get<double>();
    tc.adv = o;
  }
  return tc;
}

}  // namespace

Json to_json(const FairnessReport& r) {
  Json per_class = Json::array();
  for (const auto& g : r.per_class_gap) per_class.push_back(g ? Json(*g) : Json(nullptr));
  Json j = {{"accuracy", r.accuracy},
            {"gap", r.gap},
            {"leakage_h", r.leakage_h},
            {"leakage_yhat", r.leakage_yhat},
            {"tradeoff", r.tradeoff ? Json(*r.tradeoff) : Json(nullptr)},
            {"time_seconds", r.time_seconds},
            {"time_ratio", r.time_ratio ? Json(*r.time_ratio) : Json(nullptr)},
            {"per_class_gap", per_class},
            {"warnings", r.warnings}};
  return j;
}

FairnessReport report_from_json(const Json& j) {
  FairnessReport r;
  r.accuracy = j.at("accuracy").get<double>();
  r.gap = j.at("gap").get<double>();
  r.leakage_h = j.at("leakage_h").get<double>();
  r.leakage_yhat = j.at("leakage_yhat").get<double>();
  if (j.contains("tradeoff") && !j["tradeoff"].is_null()) r.tradeoff = j["tradeoff"].get<double>();
  if (j.contains("time_seconds")) r.time_seconds = j["time_seconds"].get<double>();
  if (j.contains("time_ratio") && !j["time_ratio"].is_null()) r.time_ratio = j["time_ratio"].get<double>();
  if (j.contains("per_class_gap")) {
    for (const auto& g : j["per_class_gap"]) {
      r.per_class_gap.push_back(g.is_null() ? std::nullopt : std::optional<double>(g.get<double>()));
    }
  }
  if (j.contains("warnings")) r.warnings = j["warnings"].get<std::vector<std::string>>();
  return r;
}

Json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"stage", r.stage}, {"train_loss", r.train_loss}, {"ce", r.ce},
          {"scl", r.scl},     {"fcl", r.fcl},     {"adversarial", r.adversarial}, {"dev_metric", r.dev_metric}};
}

Json to_json(const RunRecord& r) {
  Json history = Json::array();
  for (const auto& e : r.history) history.push_back(to_json(e));
  Json inlp = Json::array();
  for (const auto& s : r.inlp_trace) {
    inlp.push_back({{"iteration", s.iteration}, {"probe_dev_accuracy", s.probe_dev_accuracy}, {"rank_after", s.rank_after}});
  }
  return {{"method", to_string(r.method)},
          {"seed", r.seed},
          {"config", to_json(r.config)},
          {"test", to_json(r.test)},
          {"dev", to_json(r.dev)},
          {"history", history},
          {"inlp_trace", inlp},
          {"best_epoch", r.best_epoch},
          {"train_seconds", r.train_seconds},
          {"checkpoint", r.checkpoint}};
}

RunRecord run_record_from_json(const Json& j) {
  RunRecord r;
  r.method = method_from_string(j.at("method").get<std::string>());
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config = train_config_from_json(j.at("config"));
  r.test = report_from_json(j.at("test"));
  r.dev = report_from_json(j.at("dev"));
  for (const auto& e : j.at("history")) {
    EpochRecord rec;
    rec.epoch = e.at("epoch").get<int>();
    rec.stage = e.at("stage").get<std::string>();
    rec.train_loss = e.at("train_loss").get<double>();
    rec.ce = e.at("ce").get<double>();
    rec.scl = e.at("scl").get<double>();
    rec.fcl = e.at("fcl").get<double>();
    rec.adversarial = e.at("adversarial").get<double>();
    rec.dev_metric = e.at("dev_metric").get<double>();
    r.history.push_back(rec);
  }
  if (j.contains("inlp_trace")) {
    for (const auto& s : j["inlp_trace"]) {
      r.inlp_trace.push_back({s.at("iteration").get<int>(), s.at("probe_dev_accuracy").get<double>(),
                              s.at("rank_after").get<int>()});
    }
  }
  r.best_epoch = j.at("best_epoch").get<int>();
  r.train_seconds = j.at("train_seconds").get<double>();
  r.checkpoint = j.at("checkpoint").get<std::string>();
  return r;
}

MetricStats mean_std(const std::vector<double>& values) {
  MetricStats s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

std::vector<MethodSummary> summarize(const std::vector<RunRecord>& runs) {
  std::vector<Method> order;
  std::map<Method, std::vector<const RunRecord*>> groups;
  for (const auto& r : runs) {
    if (!groups.count(r.method)) order.push_back(r.method);
    groups[r.method].push_back(&r);
  }
  std::vector<MethodSummary> out;
  std::vector<FairnessReport> means;
  for (Method m : order) {
    const auto& group = groups[m];
    std::vector<double> acc, gap, lh, ly, secs;
    for (const RunRecord* r : group) {
      acc.push_back(r->test.accuracy);
      gap.push_back(r->test.gap);
      lh.push_back(r->test.leakage_h);
      ly.push_back(r->test.leakage_yhat);
      secs.push_back(r->train_seconds);
    }
    MethodSummary s;
    s.method = m;
    s.runs = static_cast<int>(group.size());
    s.accuracy = mean_std(acc);
    s.gap = mean_std(gap);
    s.leakage_h = mean_std(lh);
    s.leakage_yhat = mean_std(ly);
    s.mean_seconds = mean_std(secs).mean;
    out.push_back(s);

    FairnessReport mean;
    mean.accuracy = s.accuracy.mean;
    mean.gap = s.gap.mean;
    mean.leakage_h = s.leakage_h.mean;
    mean.leakage_yhat = s.leakage_yhat.mean;
    means.push_back(mean);
  }
  if (!means.empty()) {
    const auto scored = tradeoff_scores(means);
    for (std::size_t i = 0; i < out.size(); ++i) out[i].tradeoff = scored[i].tradeoff;
  }
  const auto ce = std::find_if(out.begin(), out.end(), [](const MethodSummary& s) { return s.method == Method::kCe; });
  if (ce != out.end() && ce->mean_seconds > 0.0) {
    for (auto& s : out) s.time_ratio = s.mean_seconds / ce->mean_seconds;
  }
  return out;
}

Json summary_json(const std::vector<MethodSummary>& summary) {
  auto stats = [](const MetricStats& s) { return Json{{"mean", s.mean}, {"std", s.std}}; };
  Json methods = Json::array();
  for (const auto& s : summary) {
    methods.push_back({{"method", to_string(s.method)},
                       {"runs", s.runs},
                       {"accuracy", stats(s.accuracy)},
                       {"gap", stats(s.gap)},
                       {"leakage_h", stats(s.leakage_h)},
                       {"leakage_yhat", stats(s.leakage_yhat)},
                       {"tradeoff", s.tradeoff ? Json(*s.tradeoff) : Json(nullptr)}});
  }
  return {{"methods", methods}};
}

std::string comparison_csv(const std::vector<MethodSummary>& summary) {
  std::ostringstream out;
  out << "model,accuracy,accuracy_std,gap,gap_std,leakage_h,leakage_h_std,leakage_yhat,leakage_yhat_std,tradeoff,time\n";
  char buf[64];
  auto pct = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return std::string(buf);
  };
  for (const auto& s : summary) {
    out << to_string(s.method) << ',' << pct(s.accuracy.mean) << ',' << pct(s.accuracy.std) << ','
        << pct(s.gap.mean) << ',' << pct(s.gap.std) << ',' << pct(s.leakage_h.mean) << ','
        << pct(s.leakage_h.std) << ',' << pct(s.leakage_yhat.mean) << ',' << pct(s.leakage_yhat.std) << ',';
    if (s.tradeoff) {
      std::snprintf(buf, sizeof buf, "%.2f", *s.tradeoff);
      out << buf;
    }
    out << ',';
    if (s.time_ratio) {
      std::snprintf(buf, sizeof buf, "%.2fx", *s.time_ratio);
      out << buf;
    } else {
      out << "--";
    }
    out << '\n';
  }
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

namespace {

struct Job {
  Method method;
  std::uint64_t seed;
  TrainConfig config;
  std::filesystem::path dir;
  bool export_reps;
};

RunRecord execute(const Job& job, const SplitDataset& data, const ExperimentConfig& cfg) {
  const TrainedModel model = train(data, job.config);
  EvalOptions eo;
  eo.probe = cfg.probe;
  eo.seed = job.seed;

  RunRecord rec;
  rec.method = job.method;
  rec.seed = job.seed;
  rec.config = job.config;
  rec.test = evaluate(model, data, EvalSplit::kTest, eo);
  rec.dev = evaluate(model, data, EvalSplit::kDev, eo);
  rec.history = model.history;
  rec.inlp_trace = model.inlp_trace;
  rec.best_epoch = model.best_epoch;
  rec.train_seconds = model.train_seconds;
  rec.checkpoint = "model_" + std::to_string(job.seed) + ".ckpt";

  std::filesystem::create_directories(job.dir);
  save_checkpoint(job.dir / rec.checkpoint, to_checkpoint(model));
  write_text(job.dir / ("run_" + std::to_string(job.seed) + ".json"), to_json(rec).dump(2) + "\n");
  if (job.export_reps) {
    const std::pair<const char*, const std::vector<LabeledInstance>*> splits[] = {
        {"train", &data.train}, {"dev", &data.dev}, {"test", &data.test}};
    for (const auto& [name, instances] : splits) {
      const PackedSplit packed = pack(*instances, data.dim);
      const Matrix h = model_representations(model, packed.x);
      std::vector<LabeledInstance> reps(instances->size());
      for (std::size_t i = 0; i < reps.size(); ++i) {
        reps[i].embedding = h.row(static_cast<Eigen::Index>(i)).transpose();
        reps[i].main_label = packed.labels[i];
        reps[i].protected_attr = packed.protected_attrs[i];
      }
      write_embeddings(job.dir / (std::string("reps_") + name + ".csv"), static_cast<int>(h.cols()),
                       data.num_classes, reps);
    }
  }
  return rec;
}

std::vector<RunRecord> execute_all(const std::vector<Job>& jobs, const SplitDataset& data,
                                   const ExperimentConfig& cfg) {
  std::vector<RunRecord> records(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        records[i] = execute(jobs[i], data, cfg);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(jobs.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return records;
}

std::string method_dir(Method m) {
  std::string name = to_string(m);
  std::replace(name.begin(), name.end(), '+', 'p');
  std::replace(name.begin(), name.end(), '-', 'm');
  return name;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const SplitDataset data = load_dataset(cfg);
  std::vector<Job> jobs;
  for (Method m : cfg.methods) {
    for (int r = 0; r < cfg.runs; ++r) {
      const std::uint64_t seed = run_seed(cfg, r);
      jobs.push_back({m, seed, make_train_config(cfg, m, seed), cfg.out / method_dir(m),
                      cfg.export_representations && r == 0});
    }
  }
  ExperimentResult result;
  result.runs = execute_all(jobs, data, cfg);
  result.summary = summarize(result.runs);
  write_text(cfg.out / "summary.json", summary_json(result.summary).dump(2) + "\n");
  write_text(cfg.out / "comparison.csv", comparison_csv(result.summary));
  return result;
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kBeta: return "beta";
    case SweepAxis::kLambda: return "lambda";
    case SweepAxis::kIterations: return "iterations";
  }
  return "?";
}

SweepAxis sweep_axis_from_string(const std::string& name) {
  if (name == "beta") return SweepAxis::kBeta;
  if (name == "lambda") return SweepAxis::kLambda;
  if (name == "iterations") return SweepAxis::kIterations;
  throw ValidationError("unknown sweep axis '" + name + "' (expected beta, lambda or iterations)");
}

void check_sweep_axis(Method method, SweepAxis axis) {
  bool ok = false;
  switch (method) {
    case Method::kInlp: ok = axis == SweepAxis::kIterations; break;
    case Method::kAdv: ok = axis == SweepAxis::kLambda; break;
    case Method::kCon:
    case Method::kConFt:
    case Method::kCeScl:
    case Method::kCeFcl: ok = axis == SweepAxis::kBeta; break;
    case Method::kCe: ok = false; break;
  }
  if (!ok) {
    throw ValidationError("sweep axis '" + to_string(axis) + "' does not apply to method '" + to_string(method) +
                          "' (inlp: iterations, adv: lambda, con/con_ft/ce+scl/ce-fcl: beta)");
  }
}

SweepResult run_sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<double>& values) {
  base.validate();
  if (base.methods.size() != 1) throw ValidationError("sweep: exactly one method must be selected");
  if (values.empty()) throw ValidationError("sweep: no values given");
  const Method method = base.methods.front();
  check_sweep_axis(method, axis);
  if (axis == SweepAxis::kIterations) {
    for (double v : values) {
      if (v < 0.0 || v != std::floor(v)) throw ValidationError("sweep: iterations must be non-negative integers");
    }
  }
  const SplitDataset data = load_dataset(base);

  SweepResult result;
  result.method = method;
  result.axis = axis;
  std::vector<Job> jobs;
  std::vector<ExperimentConfig> point_cfgs;
  for (std::size_t p = 0; p < values.size(); ++p) {
    ExperimentConfig cfg = base;
    switch (axis) {
      case SweepAxis::kBeta: cfg.train.loss.beta = values[p]; break;
      case SweepAxis::kLambda: cfg.adv.lambda = values[p]; break;
      case SweepAxis::kIterations: cfg.inlp.iterations = static_cast<int>(values[p]); break;
    }
    cfg.validate();
    for (int r = 0; r < cfg.runs; ++r) {
      const std::uint64_t seed = run_seed(cfg, r);
      jobs.push_back({method, seed, make_train_config(cfg, method, seed),
                      base.out / ("point_" + std::to_string(p)), false});
    }
    point_cfgs.push_back(std::move(cfg));
  }
  const std::vector<RunRecord> records = execute_all(jobs, data, base);

  std::vector<TradeoffPoint> points;
  std::vector<Candidate> candidates;
  for (std::size_t p = 0; p < values.size(); ++p) {
    SweepPoint sp;
    sp.value = values[p];
    std::vector<double> ta, tg, th, ty, da, dg, dh, dy;
    for (int r = 0; r < base.runs; ++r) {
      const RunRecord& rec = records[p * static_cast<std::size_t>(base.runs) + static_cast<std::size_t>(r)];
      sp.runs.push_back(rec);
      ta.push_back(rec.test.accuracy);
      tg.push_back(rec.test.gap);
      th.push_back(rec.test.leakage_h);
      ty.push_back(rec.test.leakage_yhat);
      da.push_back(rec.dev.accuracy);
      dg.push_back(rec.dev.gap);
      dh.push_back(rec.dev.leakage_h);
      dy.push_back(rec.dev.leakage_yhat);
    }
    sp.test_mean.accuracy = mean_std(ta).mean;
    sp.test_mean.gap = mean_std(tg).mean;
    sp.test_mean.leakage_h = mean_std(th).mean;
    sp.test_mean.leakage_yhat = mean_std(ty).mean;
    sp.dev_mean.accuracy = mean_std(da).mean;
    sp.dev_mean.gap = mean_std(dg).mean;
    sp.dev_mean.leakage_h = mean_std(dh).mean;
    sp.dev_mean.leakage_yhat = mean_std(dy).mean;
    points.push_back({sp.test_mean.accuracy, sp.test_mean.leakage_h});
    candidates.push_back({make_train_config(point_cfgs[p], method, base.seed), sp.dev_mean});
    result.points.push_back(std::move(sp));
  }
  result.frontier = pareto_frontier_indices(points);
  result.selected = select_model(candidates, base.select_epsilon);

  Json pts = Json::array();
  for (std::size_t p = 0; p < result.points.size(); ++p) {
    const auto& sp = result.points[p];
    pts.push_back({{"value", sp.value},
                   {"test", to_json(sp.test_mean)},
                   {"dev", to_json(sp.dev_mean)},
                   {"on_frontier", std::count(result.frontier.begin(), result.frontier.end(), p) > 0}});
  }
  Json sweep = {{"method", to_string(method)},
                {"axis", to_string(axis)},
                {"runs_per_point", base.runs},
                {"select_epsilon", base.select_epsilon},
                {"points", pts},
                {"frontier", result.frontier},
                {"selected", {{"index", result.selected},
                              {"value", result.points[result.selected].value},
                              {"config", to_json(candidates[result.selected].config)}}}};
  write_text(base.out / "sweep.json", sweep.dump(2) + "\n");

  char buf[256];
  std::string all = "value,accuracy,leakage_h,gap,leakage_yhat,dev_accuracy,dev_gap,on_frontier,selected\n";
  for (std::size_t p = 0; p < result.points.size(); ++p) {
    const auto& sp = result.points[p];
    const bool front = std::count(result.frontier.begin(), result.frontier.end(), p) > 0;
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d\n", sp.value,
                  sp.test_mean.accuracy, sp.test_mean.leakage_h, sp.test_mean.gap, sp.test_mean.leakage_yhat,
                  sp.dev_mean.accuracy, sp.dev_mean.gap, front ? 1 : 0, p == result.selected ? 1 : 0);
    all += buf;
  }
  write_text(base.out / "sweep_points.csv", all);
  std::string front = "value,accuracy,leakage_h\n";
  for (std::size_t p : result.frontier) {
    const auto& sp = result.points[p];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", sp.value, sp.test_mean.accuracy, sp.test_mean.leakage_h);
    front += buf;
  }
  write_text(base.out / "frontier.csv", front);
  return result;
}

std::vector<RunRecord> collect_run_records(const std::vector<std::filesystem::path>& dirs) {
  std::vector<std::filesystem::path> files;
  for (const auto& dir : dirs) {
    if (!std::filesystem::is_directory(dir)) throw ValidationError("report: not a directory: " + dir.string());
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (entry.is_regular_file() && name.rfind("run_", 0) == 0 && entry.path().extension() == ".json") {
        files.push_back(entry.path());
      }
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> records;
  for (const auto& f : files) {
    std::ifstream in(f);
    try {
      records.push_back(run_record_from_json(Json::parse(in)));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("report: " + f.string() + ": " + e.what());
    }
  }
  // Keep ce first so time ratios and table order read like the usual comparison.
  std::stable_sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
    return static_cast<int>(a.method) < static_cast<int>(b.method);
  });
  return records;
}

}  // namespace fairscl
