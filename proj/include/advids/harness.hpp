#pragma once

// Experiment orchestration behind the CLI. One JSON config drives feature
// selection, baseline training, attack evaluation and the adversarial
// training grid; every command reads and writes one output directory.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "advids/advtrain.hpp"
#include "advids/attacks.hpp"
#include "advids/data.hpp"
#include "advids/error.hpp"
#include "advids/metrics.hpp"
#include "advids/nn.hpp"

namespace advids {

struct DatasetSource {
  std::string id;
  std::optional<SchemaKind> schema;  // empty for a synthetic source
  std::filesystem::path path;
  std::filesystem::path test_path;  // optional predefined test split
  SynthSpec synthetic;

  bool is_synthetic() const { return !schema.has_value(); }
};

struct SelectionSettings {
  SelectionMethod method = SelectionMethod::none;
  std::size_t k = 5;
  bool compare = false;  // also fit rfe and pca and tabulate both
};

struct AdvTrainSettings {
  double mix_ratio = 1.0;
  // Iterations used when crafting training batches, keyed by method name.
  // Evaluation always uses the attack's own setting.
  std::map<std::string, std::size_t> iterations;
};

struct ExperimentConfig {
  std::vector<DatasetSource> datasets;
  SelectionSettings selection;
  double test_fraction = 0.2;
  double val_fraction = 0.1;
  std::vector<Family> families{Family::ann, Family::cnn, Family::rnn};
  TrainConfig train;  // its seed is derived from `seed`
  std::vector<AttackConfig> attacks;
  std::vector<PerturbScope> scopes{PerturbScope::all};
  AdvTrainSettings advtrain;
  std::filesystem::path out = "runs";
  std::uint64_t seed = 0;
  std::size_t parallel = 1;
  bool write_adversarial = true;

  void validate() const;
};

ExperimentConfig config_from_json(std::string_view text);
std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

// The synthetic three-family, five-attack grid.
ExperimentConfig benchmark_config();

// Command-line settings that replace config values when present.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::size_t> parallel;
  std::optional<std::filesystem::path> dataset;
  std::optional<std::string> schema;  // unsw, nslkdd, generic or synthetic
};

// Starts from `config_path` (or the benchmark when empty) and applies the
// overrides. A --dataset replaces the dataset list with that single file.
ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& config_path,
                                const Overrides& overrides);

// Seeds of the pipeline stages, all derived from the global seed.
struct SeedPlan {
  std::uint64_t preprocess;
  std::uint64_t network;
  std::uint64_t train;
  std::uint64_t attack;  // added to each attack's own seed
};
SeedPlan seed_plan(std::uint64_t seed);

class OutputLayout {
 public:
  explicit OutputLayout(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path data_dir(const std::string& dataset) const;
  std::filesystem::path split_file(const std::string& dataset, std::string_view split) const;
  std::filesystem::path models_dir() const;
  std::filesystem::path reports_dir() const;
  std::filesystem::path adversarial_dir() const;
  std::filesystem::path plots_dir() const;
  std::filesystem::path matrix_status() const;
  std::filesystem::path baseline_checkpoint(const std::string& dataset, Family family) const;
  std::filesystem::path hardened_checkpoint(const std::string& dataset, Family family,
                                            AttackMethod attack) const;

 private:
  std::filesystem::path root_;
};

// Model ids used in reports: "ann" for a baseline, "ann+pgd" once hardened
// against pgd.
std::string model_id(Family family, std::optional<AttackMethod> hardened_against = {});

struct CellStatus {
  std::string dataset;
  Family family = Family::ann;
  std::optional<AttackMethod> attack;  // empty for a baseline
  std::string status = "pending";      // pending, done or failed
  std::string error;
  std::string checkpoint;  // relative to the output directory
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;  // hardened cells: under fresh test samples
  double baseline_clean_accuracy = 0.0;
  double baseline_robust_accuracy = 0.0;
  double seconds = 0.0;
};

struct MatrixStatus {
  std::vector<std::string> datasets;
  std::vector<Family> families;
  std::vector<AttackMethod> attacks;
  std::vector<CellStatus> baselines;
  std::vector<CellStatus> cells;

  // Two datasets, three families and all five attacks.
  bool full_grid() const;
  std::string to_json() const;
};

MatrixStatus matrix_status_from_json(std::string_view text);

// Splits, provenance and (with selection.compare) the rfe/pca table.
void cmd_preprocess(const ExperimentConfig& config);
// Baseline checkpoints and clean test reports for every dataset and family.
void cmd_train(const ExperimentConfig& config);
// Attacked test reports, adversarial CSVs and plots/attack_accuracy.csv.
void cmd_attack(const ExperimentConfig& config);
// The hardened grid, plots/advtrain_before_after.csv and matrix_status.json.
MatrixStatus cmd_advtrain(const ExperimentConfig& config);
// Reads every report under `dir`/reports and writes summary.csv and
// summary.json next to it, sorted by dataset, model, attack, phase, scope.
std::vector<EvalReport> cmd_report(const std::filesystem::path& dir);

// Dispatches preprocess, train, attack, advtrain or report.
void run_command(std::string_view command, const ExperimentConfig& config);

// Runs task(0..count-1) on at most `parallel` threads. After every task has
// finished, the exception of the lowest failing index is rethrown.
void parallel_for(std::size_t count, std::size_t parallel,
                  const std::function<void(std::size_t)>& task);

// Process exit status for a failure class: 2 unparseable input, 3 missing
// prerequisites, 4 checkpoint mismatch, 5 no reports, 1 anything else.
int exit_code(ErrorKind kind);

}  // namespace advids
