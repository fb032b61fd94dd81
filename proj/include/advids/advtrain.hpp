#pragma once

// Min-max adversarial training: every mini-batch is (partly) replaced by
// adversarial versions crafted against the current parameters before the
// Adam step.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advids/attacks.hpp"
#include "advids/data.hpp"
#include "advids/metrics.hpp"
#include "advids/nn.hpp"

namespace advids {

struct AdvTrainConfig {
  TrainConfig train;
  AttackConfig attack;
  // Fraction of each batch replaced by adversarial rows (the leading rows).
  double mix_ratio = 1.0;

  void validate() const;
};

struct EpochRecord {
  double clean_loss = 0.0;        // eval-mode loss on the clean batches
  double adversarial_loss = 0.0;  // train-mode loss on the batches trained on
  double val_clean_accuracy = 0.0;
  double val_robust_accuracy = 0.0;  // freshly crafted validation samples
  double seconds = 0.0;
};

struct TrainingRunLog {
  std::vector<EpochRecord> epochs;
  AttackConfig attack;
  double mix_ratio = 1.0;

  // The fields shared with plain training.
  TrainingLog training_log() const;
  std::string to_json() const;
};

// Handed to the observer after each batch is crafted, before the step.
struct BatchRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::vector<Parameter> parameters;  // snapshot the attack ran against
  AttackConfig attack;                // including the per-batch seed
  std::size_t adversarial_rows = 0;   // leading rows replaced
  Tensor clean;
  Tensor trained;  // rows actually used for the step
  std::vector<int> labels;
  double trained_eval_loss = 0.0;  // eval-mode mean loss on `trained`
};

using BatchObserver = std::function<void(const BatchRecord&)>;

TrainingRunLog adversarial_fit(Network& net, const ProcessedDataset& train,
                               const ProcessedDataset& val, const AdvTrainConfig& config,
                               const BatchObserver& observer = {});

enum class PerturbScope { all, attack_only };

PerturbScope scope_from_string(std::string_view name);
std::string to_string(PerturbScope scope);

struct RobustnessResult {
  EvalReport clean;
  std::vector<EvalReport> attacked;        // one per attack, in order
  std::vector<AdversarialBatch> batches;   // the perturbed rows per attack
};

// Crafts a fresh adversarial test set per attack. With attack_only scope only
// attack-labelled rows are perturbed; metrics always cover every row.
RobustnessResult evaluate_robustness(const Classifier& model, const ProcessedDataset& test,
                                     std::span<const AttackConfig> attacks,
                                     PerturbScope scope = PerturbScope::all);

}  // namespace advids
