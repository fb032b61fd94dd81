#pragma once

// White-box evasion attacks against two-class classifiers operating on
// [0,1]-scaled features.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advids/nn.hpp"
#include "advids/tensor.hpp"

namespace advids {

enum class AttackMethod { none, fgsm, bim, pgd, cw, deepfool };

// The five real attacks, in reporting order.
inline constexpr AttackMethod all_attacks[] = {AttackMethod::fgsm, AttackMethod::bim,
                                               AttackMethod::pgd, AttackMethod::cw,
                                               AttackMethod::deepfool};
enum class Norm { linf, l2 };

AttackMethod attack_from_string(std::string_view name);
std::string to_string(AttackMethod method);
Norm norm_from_string(std::string_view name);
std::string to_string(Norm norm);

struct AttackConfig {
  AttackMethod method = AttackMethod::fgsm;
  // Perturbation budget in scaled feature units. cw and deepfool results are
  // projected into the same ball, so epsilon >= 1 leaves them unbounded.
  double epsilon = 0.1;
  std::optional<double> step_size;       // default epsilon / 10
  std::optional<std::size_t> iterations; // default per method
  bool random_start = true;              // pgd
  std::size_t restarts = 1;              // pgd
  double cw_c = 1.0;
  double cw_kappa = 0.0;
  double cw_lr = 0.01;
  double overshoot = 0.02;  // deepfool
  Norm norm = Norm::linf;
  std::uint64_t seed = 0;

  double resolved_step() const;
  std::size_t resolved_iterations() const;
  void validate() const;
  bool operator==(const AttackConfig&) const = default;
};

std::string attack_config_to_json(const AttackConfig& config);
// Missing keys keep their defaults; unknown methods or norms raise.
AttackConfig attack_config_from_json(std::string_view text);

struct AdversarialBatch {
  Tensor original;
  Tensor adversarial;
  std::vector<int> labels;
  std::vector<double> linf;  // per-sample perturbation norms
  std::vector<double> l2;
  // Prediction on the adversarial row differs from the true label.
  std::vector<bool> success;
  // deepfool met a zero gradient at a nonzero margin.
  std::vector<bool> singular;

  std::size_t rows() const { return labels.size(); }
  double success_rate() const;
  double mean_linf() const;
  double mean_l2() const;
};

// Columns: orig_<f>..., adv_<f>..., label, success, linf, l2.
void write_adversarial_csv(const std::filesystem::path& path, const AdversarialBatch& batch,
                           std::span<const std::string> feature_names = {});

AdversarialBatch fgsm(const Classifier& model, const Tensor& x, std::span<const int> y,
                      const AttackConfig& config);
AdversarialBatch bim(const Classifier& model, const Tensor& x, std::span<const int> y,
                     const AttackConfig& config);
AdversarialBatch pgd(const Classifier& model, const Tensor& x, std::span<const int> y,
                     const AttackConfig& config);
AdversarialBatch cw_l2(const Classifier& model, const Tensor& x, std::span<const int> y,
                       const AttackConfig& config);
// Label-free: steps toward the boundary of the model's current decision.
// `y` only feeds the success flags.
AdversarialBatch deepfool(const Classifier& model, const Tensor& x, std::span<const int> y,
                          const AttackConfig& config);

// Dispatches on config.method; `none` returns the batch unchanged.
AdversarialBatch inner_maximize(const Classifier& model, const Tensor& x, std::span<const int> y,
                                const AttackConfig& config);

// Numerically stable per-row cross-entropy from logits.
std::vector<double> logit_losses(const Tensor& logits, std::span<const int> labels);

}  // namespace advids
