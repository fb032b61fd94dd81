#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "advids/harness.hpp"
#include "json.hpp"

using namespace advids;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an advids::Error");
  return ErrorKind::io;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::string without_timestamps(const std::string& text) {
  static const std::regex stamp(R"("timestamp": "[^"]*")");
  return std::regex_replace(text, stamp, R"("timestamp": "")");
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("advids_harness_" + name);
  fs::remove_all(p);
  return p;
}

fs::path fixture(const std::string& name) { return fs::path(ADVIDS_FIXTURE_DIR) / name; }

DatasetSource tiny_synthetic(const std::string& id, std::size_t n, std::uint64_t seed) {
  DatasetSource d;
  d.id = id;
  d.synthetic.n = n;
  d.synthetic.informative = 3;
  d.synthetic.noise = 1;
  d.synthetic.spread = 0.08;
  d.synthetic.seed = seed;
  return d;
}

std::vector<AttackConfig> five_attacks(std::size_t cw_iterations) {
  std::vector<AttackConfig> out;
  for (const char* m : {"fgsm", "bim", "pgd", "cw", "deepfool"}) {
    AttackConfig a;
    a.method = attack_from_string(m);
    a.epsilon = 0.1;
    if (a.method == AttackMethod::cw) a.iterations = cw_iterations;
    out.push_back(a);
  }
  return out;
}

ExperimentConfig small_config(const fs::path& out) {
  ExperimentConfig c;
  c.datasets = {tiny_synthetic("toy", 200, 4)};
  c.families = {Family::ann, Family::cnn};
  c.train.epochs = 2;
  c.attacks = five_attacks(10);
  c.scopes = {PerturbScope::all, PerturbScope::attack_only};
  c.advtrain.iterations = {{"cw", 5}, {"deepfool", 5}};
  c.out = out;
  c.seed = 9;
  return c;
}

void full_pipeline(const ExperimentConfig& c) {
  cmd_preprocess(c);
  cmd_train(c);
  cmd_attack(c);
  cmd_advtrain(c);
  cmd_report(c.out);
}

std::map<std::string, std::string> report_files(const fs::path& out) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(out / "reports")) {
    files[e.path().filename().string()] = without_timestamps(slurp(e.path()));
  }
  return files;
}

}  // namespace

TEST_CASE("configs round trip through JSON") {
  const ExperimentConfig b = benchmark_config();
  CHECK(b.datasets.size() == 1);
  CHECK(b.attacks.size() == 5);
  CHECK(b.families.size() == 3);
  const std::string text = config_to_json(b);
  CHECK(config_to_json(config_from_json(text)) == text);

  ExperimentConfig c = small_config("somewhere");
  c.datasets.push_back({});
  c.datasets.back().id = "kdd";
  c.datasets.back().schema = SchemaKind::nslkdd;
  c.datasets.back().path = "train.csv";
  c.datasets.back().test_path = "test.csv";
  c.selection = {SelectionMethod::rfe, 7, true};
  const std::string again = config_to_json(c);
  CHECK(config_to_json(config_from_json(again)) == again);
}

TEST_CASE("malformed configs are rejected") {
  CHECK(kind_of([] { config_from_json("{"); }) == ErrorKind::parse);
  CHECK(kind_of([] { config_from_json("[]"); }) == ErrorKind::config);
  CHECK(kind_of([] { config_from_json(R"({"datasets":[{"id":"a"}],"colour":1})"); }) ==
        ErrorKind::config);
  CHECK(kind_of([] { config_from_json(R"({"datasets":[]})"); }) == ErrorKind::config);
  CHECK(kind_of([] { config_from_json(R"({"datasets":[{"id":"a"},{"id":"a"}]})"); }) ==
        ErrorKind::config);
  CHECK(kind_of([] {
          config_from_json(R"({"datasets":[{"id":"a"}],"attacks":[{"method":"none"}]})");
        }) == ErrorKind::config);
  CHECK(kind_of([] {
          config_from_json(R"({"datasets":[{"id":"a"}],"attacks":[{"method":"pgd","epsilon":-1}]})");
        }) == ErrorKind::parameter);
  CHECK(kind_of([] { config_from_json(R"({"datasets":[{"id":"a","schema":"kdd99"}]})"); }) ==
        ErrorKind::parameter);
  CHECK(kind_of([] { config_from_json(R"({"datasets":[{"id":"a","schema":"unsw"}]})"); }) ==
        ErrorKind::config);
  CHECK(kind_of([] {
          config_from_json(R"({"datasets":[{"id":"a"}],"advtrain":{"mix_ratio":2}})");
        }) == ErrorKind::config);
}

TEST_CASE("command-line overrides") {
  Overrides o;
  o.seed = 77;
  o.out = "elsewhere";
  o.parallel = 3;
  ExperimentConfig c = resolve_config(std::nullopt, o);
  CHECK(c.seed == 77);
  CHECK(c.out == "elsewhere");
  CHECK(c.parallel == 3);
  CHECK(c.datasets[0].is_synthetic());

  o.dataset = fixture("unsw_sample.csv");
  o.schema = "unsw";
  c = resolve_config(std::nullopt, o);
  REQUIRE(c.datasets.size() == 1);
  CHECK(c.datasets[0].id == "unsw_sample");
  CHECK(c.datasets[0].schema == SchemaKind::unsw);

  o.schema.reset();
  CHECK(kind_of([&] { resolve_config(std::nullopt, o); }) == ErrorKind::config);
  o.dataset.reset();
  o.schema = "nslkdd";
  CHECK(kind_of([&] { resolve_config(std::nullopt, o); }) == ErrorKind::config);
  o.schema = "synthetic";
  CHECK(resolve_config(std::nullopt, o).datasets[0].id == "synthetic");

  const fs::path dir = scratch("override_config");
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << config_to_json(small_config(dir / "out"));
  Overrides none;
  CHECK(resolve_config(dir / "c.json", none).datasets[0].id == "toy");
  fs::remove_all(dir);
}

TEST_CASE("exit codes per failure class") {
  CHECK(exit_code(ErrorKind::parse) == 2);
  CHECK(exit_code(ErrorKind::missing_splits) == 3);
  CHECK(exit_code(ErrorKind::checkpoint_mismatch) == 4);
  CHECK(exit_code(ErrorKind::empty_reports) == 5);
  CHECK(exit_code(ErrorKind::config) == 1);
  CHECK(exit_code(ErrorKind::data) == 1);
}

TEST_CASE("parallel_for runs every task and reports the first failure") {
  for (std::size_t parallel : {1u, 3u}) {
    std::vector<int> hits(20, 0);
    parallel_for(hits.size(), parallel, [&](std::size_t i) { hits[i] += 1; });
    CHECK(std::count(hits.begin(), hits.end(), 1) == 20);

    std::vector<int> ran(10, 0);
    const std::string msg = message_of([&] {
      parallel_for(ran.size(), parallel, [&](std::size_t i) {
        ran[i] = 1;
        if (i == 3 || i == 7) fail(ErrorKind::data, "task " + std::to_string(i));
      });
    });
    CHECK(msg == "task 3");
    CHECK(std::count(ran.begin(), ran.end(), 1) == 10);
  }
}

TEST_CASE("end-to-end pipeline on a small synthetic set") {
  const fs::path out = scratch("pipeline");
  const ExperimentConfig c = small_config(out);
  full_pipeline(c);
  const OutputLayout layout(out);

  // preprocess
  for (const char* split : {"train", "val", "test"}) CHECK(fs::exists(layout.split_file("toy", split)));
  const json provenance = json::parse(slurp(layout.data_dir("toy") / "provenance.json"));
  CHECK(provenance["rows"]["train"].get<int>() + provenance["rows"]["val"].get<int>() +
            provenance["rows"]["test"].get<int>() ==
        200);
  CHECK(provenance["selection"] == "none");
  CHECK(provenance["scaler"]["min"].size() == provenance["source_features"].size());

  // train: checkpoints reload to the reported predictions
  const ProcessedDataset test = read_processed_csv(layout.split_file("toy", "test"));
  for (Family f : c.families) {
    const Network net = load_checkpoint(layout.baseline_checkpoint("toy", f));
    const EvalReport report = report_from_json(
        slurp(layout.reports_dir() / ("toy__" + model_id(f) + "__clean.json")));
    CHECK(evaluate(net, test.features(), test.labels()).counts == report.counts);
    CHECK(report.rates.accuracy >= 0.95);
  }
  CHECK(lines(out / "baseline_reports.csv").size() == 3);

  // attack: five attacks, two scopes, two families
  const auto plot = lines(layout.plots_dir() / "attack_accuracy.csv");
  CHECK(plot.size() == 1 + 5 * 2 * 2);
  std::size_t attacked_reports = 0;
  for (const auto& e : fs::directory_iterator(layout.reports_dir())) {
    const EvalReport r = report_from_json(slurp(e.path()));
    if (r.phase == "baseline" && r.attack != "clean") ++attacked_reports;
  }
  CHECK(attacked_reports == 20);

  // every sign-gradient sample honours the budget and the box
  for (const char* attack : {"fgsm", "bim", "pgd"}) {
    const auto rows = lines(layout.adversarial_dir() / (std::string("toy__ann__") + attack + ".csv"));
    REQUIRE(rows.size() == test.rows() + 1);
    const std::size_t d = test.width();
    for (std::size_t r = 1; r < rows.size(); ++r) {
      std::vector<double> cells;
      std::stringstream ss(rows[r]);
      for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(std::stod(cell));
      REQUIRE(cells.size() == 2 * d + 4);
      for (std::size_t j = 0; j < d; ++j) {
        CHECK(cells[d + j] >= 0.0);
        CHECK(cells[d + j] <= 1.0);
        CHECK(std::abs(cells[d + j] - cells[j]) <= 0.1 + 1e-9);
      }
    }
  }
  // attack-only scope perturbs label-1 rows only
  std::size_t positives = 0;
  for (int y : test.labels()) positives += y == 1;
  CHECK(lines(layout.adversarial_dir() / "toy__ann__pgd__attack-only.csv").size() == positives + 1);

  // advtrain
  const MatrixStatus status = matrix_status_from_json(slurp(layout.matrix_status()));
  CHECK(status.baselines.size() == 2);
  CHECK(status.cells.size() == 10);
  CHECK_FALSE(status.full_grid());
  for (const auto& cell : status.cells) {
    CHECK(cell.status == "done");
    CHECK(fs::exists(out / cell.checkpoint));
  }
  CHECK(lines(layout.plots_dir() / "advtrain_before_after.csv").size() == 1 + 10 * 2);
  CHECK(fs::exists(layout.models_dir() / "toy__cnn+deepfool.log.json"));

  // report: one row per report file, sorted, values copied verbatim
  const auto summary = lines(out / "summary.csv");
  const std::size_t files = report_files(out).size();
  CHECK(summary.size() == files + 1);
  const json merged = json::parse(slurp(out / "summary.json"));
  REQUIRE(merged.size() == files);
  for (const auto& row : merged) {
    const fs::path source =
        layout.reports_dir() /
        (row["dataset_id"].get<std::string>() + "__" + row["model_id"].get<std::string>() + "__" +
         row["attack"].get<std::string>() + (row["scope"] == "attack-only" ? "__attack-only" : "") +
         ".json");
    REQUIRE(fs::exists(source));
    CHECK(json::parse(slurp(source)) == row);
  }
  std::vector<std::vector<std::string>> keys;
  for (const auto& row : merged) {
    keys.push_back({});
    for (const char* field : {"dataset_id", "model_id", "attack", "phase", "scope"}) {
      keys.back().push_back(row[field].get<std::string>());
    }
  }
  CHECK(std::is_sorted(keys.begin(), keys.end()));

  // rerun with the same seed, serially and in parallel
  for (std::size_t parallel : {1u, 2u}) {
    ExperimentConfig again = c;
    again.out = scratch("pipeline_rerun");
    again.parallel = parallel;
    full_pipeline(again);
    CHECK(report_files(again.out) == report_files(out));
    CHECK(slurp(again.out / "plots" / "attack_accuracy.csv") ==
          slurp(layout.plots_dir() / "attack_accuracy.csv"));
    CHECK(slurp(again.out / "data" / "toy" / "train.csv") == slurp(layout.split_file("toy", "train")));
    fs::remove_all(again.out);
  }
  fs::remove_all(out);
}

TEST_CASE("a zero-budget attack leaves accuracy unchanged") {
  const fs::path out = scratch("zero_budget");
  ExperimentConfig c = small_config(out);
  c.families = {Family::ann};
  c.scopes = {PerturbScope::all};
  c.attacks.resize(1);
  c.attacks[0].method = AttackMethod::pgd;
  c.attacks[0].epsilon = 0.0;
  c.attacks[0].step_size = 0.01;
  cmd_preprocess(c);
  cmd_train(c);
  cmd_attack(c);
  const auto plot = lines(out / "plots" / "attack_accuracy.csv");
  REQUIRE(plot.size() == 2);
  CHECK(plot[1].find("toy,ann,pgd,all,") == 0);
  const EvalReport clean = report_from_json(slurp(out / "reports" / "toy__ann__clean.json"));
  const EvalReport attacked = report_from_json(slurp(out / "reports" / "toy__ann__pgd.json"));
  CHECK(attacked.counts == clean.counts);
  CHECK(attacked.mean_linf == 0.0);
  fs::remove_all(out);
}

TEST_CASE("commands fail with their own error classes") {
  const fs::path out = scratch("errors");
  ExperimentConfig c = small_config(out);
  c.families = {Family::ann};
  c.attacks.resize(1);

  CHECK(kind_of([&] { cmd_train(c); }) == ErrorKind::missing_splits);
  CHECK(kind_of([&] { cmd_report(out); }) == ErrorKind::empty_reports);
  cmd_preprocess(c);
  CHECK(kind_of([&] { cmd_attack(c); }) == ErrorKind::missing_splits);
  cmd_train(c);

  // A cnn checkpoint where the ann baseline should be.
  const OutputLayout layout(out);
  const ProcessedDataset train = read_processed_csv(layout.split_file("toy", "train"));
  save_checkpoint(Network::build(NetworkSpec::cnn(train.width()), 1),
                  layout.baseline_checkpoint("toy", Family::ann));
  CHECK(kind_of([&] { cmd_attack(c); }) == ErrorKind::checkpoint_mismatch);
  save_checkpoint(Network::build(NetworkSpec::ann(train.width() + 1), 1),
                  layout.baseline_checkpoint("toy", Family::ann));
  CHECK(kind_of([&] { cmd_attack(c); }) == ErrorKind::checkpoint_mismatch);
  CHECK(kind_of([&] { cmd_advtrain(c); }) == ErrorKind::checkpoint_mismatch);
  const MatrixStatus status = matrix_status_from_json(slurp(layout.matrix_status()));
  CHECK(status.baselines[0].status == "failed");
  CHECK_FALSE(status.baselines[0].error.empty());

  // Attack-free adversarial training is a config error.
  ExperimentConfig none = c;
  none.attacks[0].method = AttackMethod::none;
  CHECK(kind_of([&] { cmd_advtrain(none); }) == ErrorKind::config);

  // Broken input names the offending line.
  const fs::path bad = out / "bad.csv";
  std::ofstream(bad) << "a,b,label\n0.1,0.2,0\n0.3,1\n";
  ExperimentConfig broken = c;
  broken.datasets = {{}};
  broken.datasets[0].id = "bad";
  broken.datasets[0].schema = SchemaKind::generic;
  broken.datasets[0].path = bad;
  CHECK(kind_of([&] { cmd_preprocess(broken); }) == ErrorKind::parse);
  CHECK(message_of([&] { cmd_preprocess(broken); }).find("line 3") != std::string::npos);
  broken.datasets[0].path = out / "absent.csv";
  CHECK(kind_of([&] { cmd_preprocess(broken); }) == ErrorKind::io);

  // A report directory with a corrupt file.
  std::ofstream(layout.reports_dir() / "zz.json") << "{ not json";
  CHECK(kind_of([&] { cmd_report(out); }) == ErrorKind::parse);
  fs::remove_all(out);
}

TEST_CASE("dataset fixtures run through selection") {
  const fs::path out = scratch("fixtures");
  ExperimentConfig c;
  c.datasets.resize(2);
  c.datasets[0].id = "kdd";
  c.datasets[0].schema = SchemaKind::nslkdd;
  c.datasets[0].path = fixture("nslkdd_sample.csv");
  c.datasets[1].id = "unsw";
  c.datasets[1].schema = SchemaKind::unsw;
  c.datasets[1].path = fixture("unsw_sample.csv");
  c.selection = {SelectionMethod::rfe, 7, true};
  c.families = {Family::ann};
  c.train.epochs = 5;
  c.out = out;
  cmd_preprocess(c);
  cmd_train(c);

  const OutputLayout layout(out);
  const ProcessedDataset kdd = read_processed_csv(layout.split_file("kdd", "train"));
  CHECK(kdd.width() == 7);
  const json provenance = json::parse(slurp(layout.data_dir("kdd") / "provenance.json"));
  CHECK(provenance["kept"].size() == 7);
  CHECK(provenance["eliminated"].size() + 7 == provenance["source_features"].size());
  CHECK(provenance["encoder"].contains("protocol_type"));

  const auto table = lines(out / "selection_comparison.csv");
  REQUIRE(table.size() == 5);
  CHECK(table[1].find("kdd,rfe,7,") == 0);
  CHECK(table[2].find("kdd,pca,7,pc0;pc1;pc2;pc3;pc4;pc5;pc6,") == 0);
  CHECK(table[3].find("unsw,rfe,7,") == 0);

  // Five principal components give a five-column matrix.
  ExperimentConfig pca = c;
  pca.selection = {SelectionMethod::pca, 5, false};
  pca.datasets.resize(1);
  pca.out = out / "pca";
  cmd_preprocess(pca);
  const ProcessedDataset projected = read_processed_csv(OutputLayout(pca.out).split_file("kdd", "test"));
  CHECK(projected.width() == 5);
  for (double v : projected.features().data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  fs::remove_all(out);
}

TEST_CASE("the full grid holds 30 hardened cells and 6 baselines") {
  const fs::path out = scratch("grid");
  ExperimentConfig c;
  c.datasets = {tiny_synthetic("left", 100, 1), tiny_synthetic("right", 100, 2)};
  c.train.epochs = 1;
  c.attacks = five_attacks(5);
  for (auto& a : c.attacks) {
    if (a.method == AttackMethod::bim || a.method == AttackMethod::pgd) a.iterations = 3;
    if (a.method == AttackMethod::deepfool) a.iterations = 5;
  }
  c.advtrain.iterations = {{"cw", 3}, {"deepfool", 3}};
  c.write_adversarial = false;
  c.out = out;
  c.parallel = std::max(2u, std::thread::hardware_concurrency());
  cmd_preprocess(c);
  const MatrixStatus status = cmd_advtrain(c);
  CHECK(status.full_grid());
  CHECK(status.baselines.size() == 6);
  CHECK(status.cells.size() == 30);

  const MatrixStatus stored = matrix_status_from_json(slurp(OutputLayout(out).matrix_status()));
  CHECK(stored.full_grid());
  std::set<std::string> checkpoints;
  for (const auto& cell : stored.cells) {
    CHECK(cell.status == "done");
    checkpoints.insert(cell.checkpoint);
  }
  for (const auto& cell : stored.baselines) CHECK(cell.status == "done");
  CHECK(checkpoints.size() == 30);
  std::size_t models = 0;
  for (const auto& e : fs::directory_iterator(OutputLayout(out).models_dir())) {
    models += e.path().extension() == ".json" && e.path().stem().extension() != ".log";
  }
  CHECK(models == 36);
  fs::remove_all(out);
}
