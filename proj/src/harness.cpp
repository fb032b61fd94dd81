#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "advids/harness.hpp"
#include "csv_util.hpp"
#include "json.hpp"

namespace advids {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
}

std::string num(double v) { return detail::format_double(v); }

// ---- config JSON -----------------------------------------------------------

void reject_unknown(const json& j, std::initializer_list<std::string_view> known,
                    const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      fail(ErrorKind::config, where + ": unknown key '" + key + "'");
    }
  }
}

json synth_to_json(const SynthSpec& s) {
  return json{{"n", s.n},
              {"informative", s.informative},
              {"coarse", s.coarse},
              {"noise", s.noise},
              {"separation", s.separation},
              {"spread", s.spread},
              {"coarse_separation", s.coarse_separation},
              {"coarse_spread", s.coarse_spread},
              {"outlier_rate", s.outlier_rate},
              {"attack_fraction", s.attack_fraction},
              {"categorical", s.categorical},
              {"seed", s.seed}};
}

SynthSpec synth_from_json(const json& j) {
  reject_unknown(j,
                 {"n", "informative", "coarse", "noise", "separation", "spread",
                  "coarse_separation", "coarse_spread", "outlier_rate", "attack_fraction",
                  "categorical", "seed"},
                 "synthetic");
  SynthSpec s;
  s.n = j.value("n", s.n);
  s.informative = j.value("informative", s.informative);
  s.coarse = j.value("coarse", s.coarse);
  s.noise = j.value("noise", s.noise);
  s.separation = j.value("separation", s.separation);
  s.spread = j.value("spread", s.spread);
  s.coarse_separation = j.value("coarse_separation", s.coarse_separation);
  s.coarse_spread = j.value("coarse_spread", s.coarse_spread);
  s.outlier_rate = j.value("outlier_rate", s.outlier_rate);
  s.attack_fraction = j.value("attack_fraction", s.attack_fraction);
  s.categorical = j.value("categorical", s.categorical);
  s.seed = j.value("seed", s.seed);
  return s;
}

json dataset_to_json(const DatasetSource& d) {
  json j{{"id", d.id}, {"schema", d.schema ? to_string(*d.schema) : "synthetic"}};
  if (d.is_synthetic()) {
    j["synthetic"] = synth_to_json(d.synthetic);
  } else {
    j["path"] = d.path.string();
    if (!d.test_path.empty()) j["test_path"] = d.test_path.string();
  }
  return j;
}

DatasetSource dataset_from_json(const json& j) {
  reject_unknown(j, {"id", "schema", "path", "test_path", "synthetic"}, "dataset");
  DatasetSource d;
  d.id = j.at("id").get<std::string>();
  const std::string schema = j.value("schema", std::string("synthetic"));
  if (schema != "synthetic") d.schema = schema_from_string(schema);
  if (j.contains("path")) d.path = j.at("path").get<std::string>();
  if (j.contains("test_path")) d.test_path = j.at("test_path").get<std::string>();
  if (j.contains("synthetic")) d.synthetic = synth_from_json(j.at("synthetic"));
  return d;
}

// ---- shared command plumbing ---------------------------------------------------

ProcessedDataset load_split(const OutputLayout& layout, const std::string& dataset,
                            std::string_view split) {
  const fs::path path = layout.split_file(dataset, split);
  if (!fs::exists(path)) {
    fail(ErrorKind::missing_splits,
         "missing " + std::string(split) + " split for '" + dataset + "' at " + path.string() +
             " (run preprocess first)");
  }
  return read_processed_csv(path);
}

Network load_matching(const fs::path& path, Family family, std::size_t width) {
  if (!fs::exists(path)) {
    fail(ErrorKind::missing_splits, "missing checkpoint " + path.string() + " (run train first)");
  }
  Network net = load_checkpoint(path);
  if (net.spec().family != family) {
    fail(ErrorKind::checkpoint_mismatch, path.string() + " holds a " +
                                             to_string(net.spec().family) + " network, expected " +
                                             to_string(family));
  }
  if (net.input_features() != width) {
    fail(ErrorKind::checkpoint_mismatch,
         path.string() + " expects " + std::to_string(net.input_features()) +
             " features but the processed data has " + std::to_string(width));
  }
  return net;
}

std::string file_stem(const std::string& dataset, const std::string& model,
                      const std::string& attack, PerturbScope scope) {
  std::string stem = dataset + "__" + model + "__" + attack;
  if (scope == PerturbScope::attack_only) stem += "__attack-only";
  return stem;
}

void write_attack_csv(const OutputLayout& layout, const std::string& dataset, const std::string& model,
                      const std::string& attack, PerturbScope scope, const AdversarialBatch& batch,
                      const std::vector<std::string>& feature_names) {
  fs::create_directories(layout.adversarial_dir());
  write_adversarial_csv(layout.adversarial_dir() / (file_stem(dataset, model, attack, scope) + ".csv"),
                        batch, feature_names);
}

void write_report(const OutputLayout& layout, const EvalReport& report, PerturbScope scope) {
  const fs::path path =
      layout.reports_dir() / (file_stem(report.dataset_id, report.model_id, report.attack, scope) +
                              ".json");
  write_text(path, report_to_json(report));
}

std::string reports_csv(const std::vector<EvalReport>& reports) {
  std::string text = report_csv_header() + "\n";
  for (const auto& r : reports) text += report_csv_row(r) + "\n";
  return text;
}

AttackConfig seeded(const AttackConfig& attack, const SeedPlan& seeds) {
  AttackConfig c = attack;
  c.seed = attack.seed + seeds.attack;
  return c;
}

std::string clean_config(const ExperimentConfig& config, const Network& net) {
  const SeedPlan seeds = seed_plan(config.seed);
  const json j{{"train",
                {{"learning_rate", config.train.learning_rate},
                 {"epochs", config.train.epochs},
                 {"batch_size", config.train.batch_size},
                 {"seed", seeds.train}}},
               {"network_seed", net.seed()},
               {"seed", config.seed}};
  return j.dump();
}

std::string attacked_config(const AttackConfig& attack, const ExperimentConfig& config) {
  json j = json::parse(attack_config_to_json(attack));
  j["experiment_seed"] = config.seed;
  return j.dump();
}

Network train_baseline(const ExperimentConfig& config, const ProcessedDataset& train,
                       const ProcessedDataset& val, Family family, TrainingLog* log) {
  const SeedPlan seeds = seed_plan(config.seed);
  Network net = Network::build(NetworkSpec::defaults(family, train.width()), seeds.network);
  TrainConfig tc = config.train;
  tc.seed = seeds.train;
  TrainingLog result = fit(net, train, val, tc);
  if (log) *log = std::move(result);
  return net;
}

std::string training_log_json(const TrainingLog& log) {
  return json{{"train_loss", log.train_loss}, {"val_accuracy", log.val_accuracy}}.dump(2);
}

struct Task {
  const DatasetSource* dataset;
  Family family;
};

std::vector<Task> dataset_family_tasks(const ExperimentConfig& config) {
  std::vector<Task> tasks;
  for (const auto& d : config.datasets) {
    for (Family f : config.families) tasks.push_back({&d, f});
  }
  return tasks;
}

// Baseline training for one dataset and family, shared by train and
// advtrain. Returns the clean test report.
EvalReport run_baseline(const ExperimentConfig& config, const OutputLayout& layout,
                        const std::string& dataset, Family family) {
  const ProcessedDataset train = load_split(layout, dataset, "train");
  const ProcessedDataset val = load_split(layout, dataset, "val");
  const ProcessedDataset test = load_split(layout, dataset, "test");
  TrainingLog log;
  const Network net = train_baseline(config, train, val, family, &log);
  const fs::path checkpoint = layout.baseline_checkpoint(dataset, family);
  fs::create_directories(checkpoint.parent_path());
  save_checkpoint(net, checkpoint);
  write_text(fs::path(checkpoint).replace_extension(".log.json"), training_log_json(log));

  EvalReport report = evaluate(net, test.features(), test.labels());
  report.model_id = model_id(family);
  report.dataset_id = dataset;
  report.config_json = clean_config(config, net);
  write_report(layout, report, PerturbScope::all);
  return report;
}

void check_sources(const ExperimentConfig& config) {
  for (const auto& d : config.datasets) {
    if (d.is_synthetic()) continue;
    if (!fs::exists(d.path)) fail(ErrorKind::io, "dataset file not found: " + d.path.string());
    if (!d.test_path.empty() && !fs::exists(d.test_path)) {
      fail(ErrorKind::io, "test file not found: " + d.test_path.string());
    }
  }
}

json provenance_json(const Provenance& p, const ProcessedSplits& splits,
                     const DatasetSource& source, const PreprocessOptions& options) {
  json encoder = json::object();
  for (const auto& [column, values] : p.encoder.categories) encoder[column] = values;
  json j{{"dataset", dataset_to_json(source)},
         {"seed", options.seed},
         {"test_fraction", options.test_fraction},
         {"val_fraction", options.val_fraction},
         {"rows", {{"train", splits.train.rows()}, {"val", splits.val.rows()}, {"test", splits.test.rows()}}},
         {"scaler", {{"min", p.scaler.min}, {"max", p.scaler.max}}},
         {"encoder", encoder},
         {"selection", to_string(p.method)},
         {"k", options.k},
         {"source_features", p.source_features},
         {"features", splits.train.feature_names()},
         {"kept", p.kept},
         {"eliminated", p.eliminated}};
  if (p.pca) {
    std::vector<std::vector<double>> rows;
    const std::size_t k = p.pca->components.dim(0), d = p.pca->components.dim(1);
    for (std::size_t r = 0; r < k; ++r) {
      rows.emplace_back(&p.pca->components[r * d], &p.pca->components[r * d] + d);
    }
    j["pca"] = {{"mean", p.pca->mean},
                {"components", rows},
                {"explained_variance", p.pca->explained_variance},
                {"projection_min", p.pca->projection_scaler.min},
                {"projection_max", p.pca->projection_scaler.max}};
  }
  return j;
}

struct Loaded {
  RawDataset raw;
  std::optional<RawDataset> test;
};

Loaded load_source(const DatasetSource& d) {
  Loaded l;
  if (d.is_synthetic()) {
    l.raw = synth_generate(d.synthetic);
    return l;
  }
  l.raw = load_csv(d.path, *d.schema);
  if (!d.test_path.empty()) l.test = load_csv(d.test_path, *d.schema);
  return l;
}

json cell_to_json(const CellStatus& c) {
  json j{{"dataset", c.dataset},
         {"family", to_string(c.family)},
         {"status", c.status},
         {"checkpoint", c.checkpoint},
         {"clean_accuracy", c.clean_accuracy},
         {"seconds", c.seconds}};
  if (c.attack) {
    j["attack"] = to_string(*c.attack);
    j["robust_accuracy"] = c.robust_accuracy;
    j["baseline_clean_accuracy"] = c.baseline_clean_accuracy;
    j["baseline_robust_accuracy"] = c.baseline_robust_accuracy;
  }
  if (!c.error.empty()) j["error"] = c.error;
  return j;
}

CellStatus cell_from_json(const json& j) {
  CellStatus c;
  c.dataset = j.at("dataset").get<std::string>();
  c.family = family_from_string(j.at("family").get<std::string>());
  c.status = j.at("status").get<std::string>();
  c.checkpoint = j.value("checkpoint", std::string());
  c.clean_accuracy = j.value("clean_accuracy", 0.0);
  c.seconds = j.value("seconds", 0.0);
  if (j.contains("attack")) {
    c.attack = attack_from_string(j.at("attack").get<std::string>());
    c.robust_accuracy = j.value("robust_accuracy", 0.0);
    c.baseline_clean_accuracy = j.value("baseline_clean_accuracy", 0.0);
    c.baseline_robust_accuracy = j.value("baseline_robust_accuracy", 0.0);
  }
  c.error = j.value("error", std::string());
  return c;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

// ---- config --------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (datasets.empty()) fail(ErrorKind::config, "config lists no datasets");
  std::set<std::string> ids;
  for (const auto& d : datasets) {
    if (d.id.empty() || d.id.find_first_of("/\\ ") != std::string::npos ||
        d.id.find("__") != std::string::npos) {
      fail(ErrorKind::config, "dataset id '" + d.id + "' must be a plain non-empty name");
    }
    if (!ids.insert(d.id).second) fail(ErrorKind::config, "duplicate dataset id '" + d.id + "'");
    if (!d.is_synthetic() && d.path.empty()) {
      fail(ErrorKind::config, "dataset '" + d.id + "' needs a path");
    }
  }
  if (families.empty()) fail(ErrorKind::config, "config lists no model families");
  if (scopes.empty()) fail(ErrorKind::config, "config lists no perturbation scopes");
  if (selection.method != SelectionMethod::none && selection.k == 0) {
    fail(ErrorKind::config, "feature selection needs k >= 1");
  }
  if (parallel == 0) fail(ErrorKind::config, "parallel must be >= 1");
  train.validate();
  std::set<AttackMethod> methods;
  for (const auto& a : attacks) {
    a.validate();
    if (a.method == AttackMethod::none) fail(ErrorKind::config, "attack list may not contain none");
    if (!methods.insert(a.method).second) {
      fail(ErrorKind::config, "attack '" + to_string(a.method) + "' is listed twice");
    }
  }
  if (!(advtrain.mix_ratio >= 0.0 && advtrain.mix_ratio <= 1.0)) {
    fail(ErrorKind::config, "advtrain mix_ratio must lie in [0, 1]");
  }
  for (const auto& [method, iterations] : advtrain.iterations) {
    attack_from_string(method);
    if (iterations == 0) fail(ErrorKind::config, "advtrain iterations must be >= 1");
  }
}

ExperimentConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::parse, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::config, "config must be a JSON object");
  ExperimentConfig c;
  try {
    reject_unknown(j,
                   {"datasets", "selection", "test_fraction", "val_fraction", "families", "train",
                    "attacks", "scopes", "advtrain", "out", "seed", "parallel",
                    "write_adversarial"},
                   "config");
    if (j.contains("datasets")) {
      for (const auto& d : j.at("datasets")) c.datasets.push_back(dataset_from_json(d));
    }
    if (j.contains("selection")) {
      const json& s = j.at("selection");
      reject_unknown(s, {"method", "k", "compare"}, "selection");
      c.selection.method = selection_from_string(s.value("method", std::string("none")));
      c.selection.k = s.value("k", c.selection.k);
      c.selection.compare = s.value("compare", false);
    }
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    if (j.contains("families")) {
      c.families.clear();
      for (const auto& f : j.at("families")) c.families.push_back(family_from_string(f.get<std::string>()));
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      reject_unknown(t, {"learning_rate", "epochs", "batch_size"}, "train");
      c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
    }
    if (j.contains("attacks")) {
      for (const auto& a : j.at("attacks")) c.attacks.push_back(attack_config_from_json(a.dump()));
    }
    if (j.contains("scopes")) {
      c.scopes.clear();
      for (const auto& s : j.at("scopes")) c.scopes.push_back(scope_from_string(s.get<std::string>()));
    }
    if (j.contains("advtrain")) {
      const json& a = j.at("advtrain");
      reject_unknown(a, {"mix_ratio", "iterations"}, "advtrain");
      c.advtrain.mix_ratio = a.value("mix_ratio", c.advtrain.mix_ratio);
      if (a.contains("iterations")) {
        c.advtrain.iterations = a.at("iterations").get<std::map<std::string, std::size_t>>();
      }
    }
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    c.seed = j.value("seed", c.seed);
    c.parallel = j.value("parallel", c.parallel);
    c.write_adversarial = j.value("write_adversarial", c.write_adversarial);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  json datasets = json::array();
  for (const auto& d : c.datasets) datasets.push_back(dataset_to_json(d));
  json families = json::array();
  for (Family f : c.families) families.push_back(to_string(f));
  json attacks = json::array();
  for (const auto& a : c.attacks) attacks.push_back(json::parse(attack_config_to_json(a)));
  json scopes = json::array();
  for (PerturbScope s : c.scopes) scopes.push_back(to_string(s));
  const json j{
      {"datasets", datasets},
      {"selection",
       {{"method", to_string(c.selection.method)}, {"k", c.selection.k}, {"compare", c.selection.compare}}},
      {"test_fraction", c.test_fraction},
      {"val_fraction", c.val_fraction},
      {"families", families},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size}}},
      {"attacks", attacks},
      {"scopes", scopes},
      {"advtrain", {{"mix_ratio", c.advtrain.mix_ratio}, {"iterations", c.advtrain.iterations}}},
      {"out", c.out.string()},
      {"seed", c.seed},
      {"parallel", c.parallel},
      {"write_adversarial", c.write_adversarial},
  };
  return j.dump(2);
}

ExperimentConfig load_config(const fs::path& path) { return config_from_json(read_text(path)); }

ExperimentConfig benchmark_config() {
  ExperimentConfig c;
  DatasetSource d;
  d.id = "synthetic";
  // One wide-margin feature keeps the clean task easy; six tight features
  // with small class offsets carry most of the confidence and are what an
  // L-inf budget of 0.1 can erase.
  d.synthetic.n = 1000;
  d.synthetic.coarse = 1;
  d.synthetic.informative = 6;
  d.synthetic.noise = 0;
  d.synthetic.coarse_separation = 3.33;
  d.synthetic.coarse_spread = 0.12;
  d.synthetic.separation = 3.0;
  d.synthetic.spread = 0.02;
  d.synthetic.outlier_rate = 0.01;
  d.synthetic.categorical = false;
  d.synthetic.seed = 1;
  c.datasets.push_back(d);
  for (AttackMethod m : all_attacks) {
    AttackConfig a;
    a.method = m;
    a.epsilon = 0.1;
    c.attacks.push_back(a);
  }
  c.advtrain.mix_ratio = 0.5;
  c.advtrain.iterations = {{"cw", 20}, {"deepfool", 10}};
  c.out = "runs/benchmark";
  return c;
}

ExperimentConfig resolve_config(const std::optional<fs::path>& config_path,
                                const Overrides& o) {
  ExperimentConfig c = config_path ? load_config(*config_path) : benchmark_config();
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out = *o.out;
  if (o.parallel) c.parallel = *o.parallel;
  if (o.dataset) {
    DatasetSource d;
    d.id = o.dataset->stem().string();
    if (!o.schema || *o.schema == "synthetic") {
      fail(ErrorKind::config, "--dataset needs --schema unsw, nslkdd or generic");
    }
    d.schema = schema_from_string(*o.schema);
    d.path = *o.dataset;
    c.datasets = {d};
  } else if (o.schema) {
    if (*o.schema != "synthetic") {
      fail(ErrorKind::config, "--schema " + *o.schema + " needs --dataset");
    }
    c.datasets = benchmark_config().datasets;
  }
  c.validate();
  return c;
}

SeedPlan seed_plan(std::uint64_t seed) {
  // Fixed offsets keep the stage streams apart.
  return SeedPlan{seed + 3, seed + 7, seed + 11, seed + 5};
}

// ---- layout ------------------------------------------------------------------------

OutputLayout::OutputLayout(fs::path root) : root_(std::move(root)) {}

fs::path OutputLayout::data_dir(const std::string& dataset) const { return root_ / "data" / dataset; }

fs::path OutputLayout::split_file(const std::string& dataset, std::string_view split) const {
  return data_dir(dataset) / (std::string(split) + ".csv");
}

fs::path OutputLayout::models_dir() const { return root_ / "models"; }
fs::path OutputLayout::reports_dir() const { return root_ / "reports"; }
fs::path OutputLayout::adversarial_dir() const { return root_ / "adversarial"; }
fs::path OutputLayout::plots_dir() const { return root_ / "plots"; }
fs::path OutputLayout::matrix_status() const { return root_ / "matrix_status.json"; }

fs::path OutputLayout::baseline_checkpoint(const std::string& dataset, Family family) const {
  return models_dir() / (dataset + "__" + model_id(family) + ".json");
}

fs::path OutputLayout::hardened_checkpoint(const std::string& dataset, Family family,
                                           AttackMethod attack) const {
  return models_dir() / (dataset + "__" + model_id(family, attack) + ".json");
}

std::string model_id(Family family, std::optional<AttackMethod> hardened_against) {
  std::string id = to_string(family);
  if (hardened_against) id += "+" + to_string(*hardened_against);
  return id;
}

// ---- matrix status -----------------------------------------------------------------

bool MatrixStatus::full_grid() const {
  std::set<AttackMethod> methods(attacks.begin(), attacks.end());
  return datasets.size() == 2 && families.size() == 3 && methods.size() == 5;
}

std::string MatrixStatus::to_json() const {
  json fams = json::array();
  for (Family f : families) fams.push_back(to_string(f));
  json atks = json::array();
  for (AttackMethod a : attacks) atks.push_back(to_string(a));
  json base = json::array();
  for (const auto& c : baselines) base.push_back(cell_to_json(c));
  json hard = json::array();
  for (const auto& c : cells) hard.push_back(cell_to_json(c));
  const json j{{"datasets", datasets},
               {"families", fams},
               {"attacks", atks},
               {"full_grid", full_grid()},
               {"baseline_count", baselines.size()},
               {"hardened_count", cells.size()},
               {"baselines", base},
               {"cells", hard}};
  return j.dump(2);
}

MatrixStatus matrix_status_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::parse, std::string("matrix status is not valid JSON: ") + e.what());
  }
  try {
    MatrixStatus m;
    m.datasets = j.at("datasets").get<std::vector<std::string>>();
    for (const auto& f : j.at("families")) m.families.push_back(family_from_string(f.get<std::string>()));
    for (const auto& a : j.at("attacks")) m.attacks.push_back(attack_from_string(a.get<std::string>()));
    for (const auto& c : j.at("baselines")) m.baselines.push_back(cell_from_json(c));
    for (const auto& c : j.at("cells")) m.cells.push_back(cell_from_json(c));
    return m;
  } catch (const json::exception& e) {
    fail(ErrorKind::parse, std::string("malformed matrix status: ") + e.what());
  }
}

// ---- commands --------------------------------------------------------------------

void cmd_preprocess(const ExperimentConfig& config) {
  config.validate();
  check_sources(config);
  const OutputLayout layout(config.out);
  const SeedPlan seeds = seed_plan(config.seed);
  std::string comparison =
      "dataset,method,k,features,logistic_val_accuracy,logistic_test_accuracy\n";

  for (const auto& source : config.datasets) {
    const Loaded loaded = load_source(source);
    const RawDataset* test = loaded.test ? &*loaded.test : nullptr;
    PreprocessOptions options;
    options.method = config.selection.method;
    options.k = config.selection.k;
    options.test_fraction = config.test_fraction;
    options.val_fraction = config.val_fraction;
    options.seed = seeds.preprocess;
    const ProcessedSplits splits = preprocess(loaded.raw, options, test);

    fs::create_directories(layout.data_dir(source.id));
    write_processed_csv(layout.split_file(source.id, "train"), splits.train);
    write_processed_csv(layout.split_file(source.id, "val"), splits.val);
    write_processed_csv(layout.split_file(source.id, "test"), splits.test);
    write_text(layout.data_dir(source.id) / "provenance.json",
               provenance_json(*splits.train.provenance(), splits, source, options).dump(2));

    if (!config.selection.compare) continue;
    for (SelectionMethod method : {SelectionMethod::rfe, SelectionMethod::pca}) {
      PreprocessOptions o = options;
      o.method = method;
      const ProcessedSplits s = preprocess(loaded.raw, o, test);
      const LogisticModel model = fit_logistic(s.train.features(), s.train.labels());
      std::string names;
      for (const auto& n : s.train.feature_names()) names += (names.empty() ? "" : ";") + n;
      comparison += source.id + "," + to_string(method) + "," + std::to_string(o.k) + "," + names +
                    "," + num(logistic_accuracy(model, s.val.features(), s.val.labels())) + "," +
                    num(logistic_accuracy(model, s.test.features(), s.test.labels())) + "\n";
    }
  }
  if (config.selection.compare) write_text(layout.root() / "selection_comparison.csv", comparison);
}

void cmd_train(const ExperimentConfig& config) {
  config.validate();
  const OutputLayout layout(config.out);
  const std::vector<Task> tasks = dataset_family_tasks(config);
  std::vector<EvalReport> reports(tasks.size());
  parallel_for(tasks.size(), config.parallel, [&](std::size_t i) {
    reports[i] = run_baseline(config, layout, tasks[i].dataset->id, tasks[i].family);
  });
  write_text(layout.root() / "baseline_reports.csv", reports_csv(reports));
}

void cmd_attack(const ExperimentConfig& config) {
  config.validate();
  if (config.attacks.empty()) fail(ErrorKind::config, "config lists no attacks");
  const OutputLayout layout(config.out);
  const SeedPlan seeds = seed_plan(config.seed);
  const std::vector<Task> tasks = dataset_family_tasks(config);
  std::vector<AttackConfig> attacks;
  for (const auto& a : config.attacks) attacks.push_back(seeded(a, seeds));

  std::vector<std::vector<EvalReport>> per_task(tasks.size());
  parallel_for(tasks.size(), config.parallel, [&](std::size_t i) {
    const std::string& dataset = tasks[i].dataset->id;
    const Family family = tasks[i].family;
    const ProcessedDataset test = load_split(layout, dataset, "test");
    const Network net = load_matching(layout.baseline_checkpoint(dataset, family), family, test.width());
    for (PerturbScope scope : config.scopes) {
      RobustnessResult result = evaluate_robustness(net, test, attacks, scope);
      for (std::size_t a = 0; a < attacks.size(); ++a) {
        EvalReport& r = result.attacked[a];
        r.model_id = model_id(family);
        r.dataset_id = dataset;
        r.config_json = attacked_config(attacks[a], config);
        write_report(layout, r, scope);
        if (config.write_adversarial) {
          write_attack_csv(layout, dataset, r.model_id, r.attack, scope, result.batches[a],
                           test.feature_names());
        }
        per_task[i].push_back(r);
      }
      per_task[i].push_back(result.clean);
    }
  });

  std::string plot =
      "dataset,family,attack,scope,clean_accuracy,adversarial_accuracy,accuracy_drop,success_rate,"
      "mean_linf,mean_l2\n";
  std::vector<EvalReport> all;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& rows = per_task[i];
    std::size_t start = 0;
    for (std::size_t s = 0; s < config.scopes.size(); ++s) {
      const EvalReport& clean = rows[start + attacks.size()];
      for (std::size_t a = 0; a < attacks.size(); ++a) {
        const EvalReport& r = rows[start + a];
        plot += r.dataset_id + "," + to_string(tasks[i].family) + "," + r.attack + "," + r.scope +
                "," + num(clean.rates.accuracy) + "," + num(r.rates.accuracy) + "," +
                num(clean.rates.accuracy - r.rates.accuracy) + "," + num(r.success_rate) + "," +
                num(r.mean_linf) + "," + num(r.mean_l2) + "\n";
        all.push_back(r);
      }
      start += attacks.size() + 1;
    }
  }
  write_text(layout.plots_dir() / "attack_accuracy.csv", plot);
  write_text(layout.root() / "attack_reports.csv", reports_csv(all));
}

MatrixStatus cmd_advtrain(const ExperimentConfig& config) {
  config.validate();
  if (config.attacks.empty()) fail(ErrorKind::config, "config lists no attacks");
  const OutputLayout layout(config.out);
  const SeedPlan seeds = seed_plan(config.seed);

  MatrixStatus status;
  for (const auto& d : config.datasets) status.datasets.push_back(d.id);
  status.families = config.families;
  for (const auto& a : config.attacks) status.attacks.push_back(a.method);
  const auto relative = [&](const fs::path& p) { return p.lexically_relative(layout.root()).string(); };
  for (const Task& t : dataset_family_tasks(config)) {
    CellStatus b;
    b.dataset = t.dataset->id;
    b.family = t.family;
    b.checkpoint = relative(layout.baseline_checkpoint(b.dataset, b.family));
    status.baselines.push_back(b);
    for (const auto& a : config.attacks) {
      CellStatus c = b;
      c.attack = a.method;
      c.checkpoint = relative(layout.hardened_checkpoint(c.dataset, c.family, a.method));
      status.cells.push_back(c);
    }
  }
  write_text(layout.matrix_status(), status.to_json());

  auto record_failure = [](CellStatus& cell, const std::exception& e) {
    cell.status = "failed";
    cell.error = e.what();
  };

  // Baselines first, so hardened cells of one family never race to create
  // the same checkpoint.
  const auto baseline_task = [&](std::size_t i) {
    CellStatus& cell = status.baselines[i];
    const auto start = std::chrono::steady_clock::now();
    try {
      const fs::path path = layout.baseline_checkpoint(cell.dataset, cell.family);
      const ProcessedDataset test = load_split(layout, cell.dataset, "test");
      if (fs::exists(path)) {
        const Network net = load_matching(path, cell.family, test.width());
        cell.clean_accuracy = accuracy(net, test.features(), test.labels());
      } else {
        cell.clean_accuracy = run_baseline(config, layout, cell.dataset, cell.family).rates.accuracy;
      }
      cell.status = "done";
    } catch (const std::exception& e) {
      record_failure(cell, e);
      throw;
    }
    cell.seconds = seconds_since(start);
  };

  std::vector<std::vector<EvalReport>> per_cell(status.cells.size());
  const std::size_t attack_count = config.attacks.size();
  const auto cell_task = [&](std::size_t i) {
    CellStatus& cell = status.cells[i];
    const auto start = std::chrono::steady_clock::now();
    try {
      const AttackConfig eval_attack = seeded(config.attacks[i % attack_count], seeds);
      const ProcessedDataset train = load_split(layout, cell.dataset, "train");
      const ProcessedDataset val = load_split(layout, cell.dataset, "val");
      const ProcessedDataset test = load_split(layout, cell.dataset, "test");
      const Network baseline =
          load_matching(layout.baseline_checkpoint(cell.dataset, cell.family), cell.family, test.width());

      AdvTrainConfig atc;
      atc.train = config.train;
      atc.train.seed = seeds.train;
      atc.attack = eval_attack;
      const auto it = config.advtrain.iterations.find(to_string(eval_attack.method));
      if (it != config.advtrain.iterations.end()) atc.attack.iterations = it->second;
      atc.mix_ratio = config.advtrain.mix_ratio;
      Network hardened = Network::build(NetworkSpec::defaults(cell.family, train.width()), seeds.network);
      const TrainingRunLog log = adversarial_fit(hardened, train, val, atc);
      const fs::path checkpoint = layout.hardened_checkpoint(cell.dataset, cell.family, eval_attack.method);
      save_checkpoint(hardened, checkpoint);
      write_text(fs::path(checkpoint).replace_extension(".log.json"), log.to_json());

      const std::vector<AttackConfig> attacks{eval_attack};
      for (PerturbScope scope : config.scopes) {
        const RobustnessResult before = evaluate_robustness(baseline, test, attacks, scope);
        RobustnessResult after = evaluate_robustness(hardened, test, attacks, scope);
        EvalReport& clean = after.clean;
        EvalReport& attacked = after.attacked[0];
        for (EvalReport* r : {&clean, &attacked}) {
          r->model_id = model_id(cell.family, eval_attack.method);
          r->dataset_id = cell.dataset;
          r->phase = "hardened";
        }
        clean.config_json = clean_config(config, hardened);
        attacked.config_json = attacked_config(eval_attack, config);
        if (scope == config.scopes.front()) write_report(layout, clean, scope);
        write_report(layout, attacked, scope);
        if (config.write_adversarial) {
          write_attack_csv(layout, cell.dataset, attacked.model_id, attacked.attack, scope,
                           after.batches[0], test.feature_names());
        }
        if (scope == config.scopes.front()) {
          cell.clean_accuracy = clean.rates.accuracy;
          cell.robust_accuracy = attacked.rates.accuracy;
          cell.baseline_clean_accuracy = before.clean.rates.accuracy;
          cell.baseline_robust_accuracy = before.attacked[0].rates.accuracy;
        }
        EvalReport baseline_row = before.attacked[0];
        baseline_row.model_id = model_id(cell.family);
        baseline_row.dataset_id = cell.dataset;
        per_cell[i].push_back(std::move(baseline_row));
        per_cell[i].push_back(attacked);
        per_cell[i].push_back(before.clean);
        per_cell[i].push_back(clean);
      }
      cell.status = "done";
    } catch (const std::exception& e) {
      record_failure(cell, e);
      cell.seconds = seconds_since(start);
      throw;
    }
    cell.seconds = seconds_since(start);
  };

  std::exception_ptr failure;
  try {
    parallel_for(status.baselines.size(), config.parallel, baseline_task);
    parallel_for(status.cells.size(), config.parallel, cell_task);
  } catch (...) {
    failure = std::current_exception();
  }
  write_text(layout.matrix_status(), status.to_json());
  if (failure) std::rethrow_exception(failure);

  std::string plot =
      "dataset,family,attack,scope,baseline_clean_accuracy,baseline_robust_accuracy,"
      "hardened_clean_accuracy,hardened_robust_accuracy,robust_gain,clean_change\n";
  std::vector<EvalReport> all;
  for (std::size_t i = 0; i < status.cells.size(); ++i) {
    const auto& rows = per_cell[i];
    for (std::size_t r = 0; r + 3 < rows.size(); r += 4) {
      const EvalReport& before = rows[r];
      const EvalReport& after = rows[r + 1];
      const double base_clean = rows[r + 2].rates.accuracy, hard_clean = rows[r + 3].rates.accuracy;
      plot += status.cells[i].dataset + "," + to_string(status.cells[i].family) + "," +
              after.attack + "," + after.scope + "," + num(base_clean) + "," +
              num(before.rates.accuracy) + "," + num(hard_clean) + "," + num(after.rates.accuracy) +
              "," + num(after.rates.accuracy - before.rates.accuracy) + "," +
              num(hard_clean - base_clean) + "\n";
      all.push_back(after);
    }
  }
  write_text(layout.plots_dir() / "advtrain_before_after.csv", plot);
  write_text(layout.root() / "advtrain_reports.csv", reports_csv(all));
  return status;
}

std::vector<EvalReport> cmd_report(const fs::path& dir) {
  const fs::path reports = fs::is_directory(dir / "reports") ? dir / "reports" : dir;
  std::vector<fs::path> files;
  if (fs::is_directory(reports)) {
    for (const auto& entry : fs::directory_iterator(reports)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
  }
  if (files.empty()) fail(ErrorKind::empty_reports, "no report files under " + reports.string());
  std::sort(files.begin(), files.end());

  std::vector<EvalReport> all;
  for (const auto& f : files) {
    try {
      all.push_back(report_from_json(read_text(f)));
    } catch (const Error& e) {
      fail(e.kind(), f.string() + ": " + e.what());
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const EvalReport& a, const EvalReport& b) {
    return std::tie(a.dataset_id, a.model_id, a.attack, a.phase, a.scope) <
           std::tie(b.dataset_id, b.model_id, b.attack, b.phase, b.scope);
  });
  json array = json::array();
  for (const auto& r : all) array.push_back(json::parse(report_to_json(r)));
  write_text(dir / "summary.json", array.dump(2));
  write_text(dir / "summary.csv", reports_csv(all));
  return all;
}

void run_command(std::string_view command, const ExperimentConfig& config) {
  if (command == "preprocess") return cmd_preprocess(config);
  if (command == "train") return cmd_train(config);
  if (command == "attack") return cmd_attack(config);
  if (command == "advtrain") {
    cmd_advtrain(config);
    return;
  }
  if (command == "report") {
    cmd_report(config.out);
    return;
  }
  fail(ErrorKind::config, "unknown command '" + std::string(command) + "'");
}

void parallel_for(std::size_t count, std::size_t parallel,
                  const std::function<void(std::size_t)>& task) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(std::max<std::size_t>(parallel, 1), count);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parse: return 2;
    case ErrorKind::missing_splits: return 3;
    case ErrorKind::checkpoint_mismatch: return 4;
    case ErrorKind::empty_reports: return 5;
    default: return 1;
  }
}

}  // namespace advids
