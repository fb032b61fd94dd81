#pragma once

// Binary detection metrics with attack (label 1) as the positive class.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "advids/nn.hpp"

namespace advids {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(std::span<const int> predicted, std::span<const int> truth);

// A rate whose denominator is zero is reported as 0 with its flag set.
struct Rates {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double specificity = 0.0;
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool specificity_undefined = false;
  bool operator==(const Rates&) const = default;
};

Rates rates(const ConfusionCounts& counts);

// Area under the ROC curve via average ranks, so tied scores earn half
// credit. Needs both classes.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct EvalReport {
  std::string model_id;
  std::string dataset_id;
  std::string attack = "clean";
  std::string phase = "baseline";
  std::string scope = "all";  // rows evaluated: "all" or "attack-only"
  ConfusionCounts counts;
  Rates rates;
  std::optional<double> auc;  // empty when a class is absent
  // Accuracy on the attack-labelled rows alone.
  std::optional<double> attack_subset_accuracy;
  double mean_linf = 0.0;
  double mean_l2 = 0.0;
  double success_rate = 0.0;
  std::string timestamp;
  std::string config_json = "{}";  // settings snapshot

  bool operator==(const EvalReport&) const = default;
};

// Metrics of `scores` (probability of attack) against `labels`.
EvalReport make_report(std::span<const int> predicted, std::span<const double> scores,
                       std::span<const int> labels);
EvalReport evaluate(const Classifier& model, const Tensor& x, std::span<const int> labels);

// ISO-8601 UTC time of the call.
std::string utc_timestamp();

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(std::string_view text);
std::string report_csv_header();
std::string report_csv_row(const EvalReport& report);

}  // namespace advids
