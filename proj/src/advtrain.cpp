#include <chrono>
#include <cmath>

#include "advids/advtrain.hpp"
#include "advids/error.hpp"
#include "json.hpp"
#include "train_loop.hpp"

namespace advids {
namespace {

using nlohmann::json;

// Attacks on training batches and on validation data draw from seeds that
// never collide with each other or with the training streams.
AttackConfig batch_attack(const AttackConfig& base, std::size_t epoch, std::size_t batch) {
  AttackConfig c = base;
  c.seed = base.seed * 0x9E3779B97F4A7C15ULL + (epoch << 32) + batch + 1;
  return c;
}

AttackConfig validation_attack(const AttackConfig& base, std::size_t epoch) {
  AttackConfig c = base;
  c.seed = base.seed * 0x9E3779B97F4A7C15ULL + (epoch << 32) + 0xFFFFFFFFULL;
  return c;
}

double mean_loss(const Network& net, const Tensor& x, std::span<const int> y) {
  const std::vector<double> losses = per_sample_loss(net, x, y);
  double s = 0.0;
  for (double v : losses) s += v;
  return losses.empty() ? 0.0 : s / static_cast<double>(losses.size());
}

}  // namespace

void AdvTrainConfig::validate() const {
  train.validate();
  attack.validate();
  if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) {
    fail(ErrorKind::config, "mix_ratio must lie in [0, 1]");
  }
  if (attack.method == AttackMethod::none && mix_ratio > 0.0) {
    fail(ErrorKind::config, "adversarial training needs an attack method when mix_ratio > 0");
  }
}

TrainingLog TrainingRunLog::training_log() const {
  TrainingLog log;
  for (const auto& e : epochs) {
    log.train_loss.push_back(e.adversarial_loss);
    log.val_accuracy.push_back(e.val_clean_accuracy);
  }
  return log;
}

std::string TrainingRunLog::to_json() const {
  json rows = json::array();
  for (const auto& e : epochs) {
    rows.push_back({{"clean_loss", e.clean_loss},
                    {"adversarial_loss", e.adversarial_loss},
                    {"val_clean_accuracy", e.val_clean_accuracy},
                    {"val_robust_accuracy", e.val_robust_accuracy},
                    {"seconds", e.seconds}});
  }
  const json doc{{"attack", json::parse(attack_config_to_json(attack))},
                 {"mix_ratio", mix_ratio},
                 {"epochs", rows}};
  return doc.dump(2);
}

TrainingRunLog adversarial_fit(Network& net, const ProcessedDataset& train,
                               const ProcessedDataset& val, const AdvTrainConfig& config,
                               const BatchObserver& observer) {
  config.validate();
  TrainingRunLog log;
  log.attack = config.attack;
  log.mix_ratio = config.mix_ratio;

  const bool attacking = config.attack.method != AttackMethod::none;
  double clean_total = 0.0;
  std::size_t clean_rows = 0;
  auto epoch_start = std::chrono::steady_clock::now();

  const detail::BatchTransform transform = [&](const detail::BatchContext& ctx, Tensor& x,
                                               std::span<const int> y) {
    const std::size_t count = y.size(), d = x.dim(1);
    const std::vector<double> clean = per_sample_loss(net, x, y);
    for (double v : clean) clean_total += v;
    clean_rows += count;

    const auto k = static_cast<std::size_t>(
        std::llround(config.mix_ratio * static_cast<double>(count)));
    const AttackConfig attack = batch_attack(config.attack, ctx.epoch, ctx.batch);
    BatchRecord record;
    if (observer) {
      record.attack = attack;
      record.adversarial_rows = attacking ? k : 0;
      record.epoch = ctx.epoch;
      record.batch = ctx.batch;
      record.parameters = net.parameters();
      record.clean = x;
      record.labels.assign(y.begin(), y.end());
    }
    if (attacking && k > 0) {
      Tensor head({k, d});
      std::copy_n(&x[0], k * d, &head[0]);
      const AdversarialBatch adv = inner_maximize(net, head, y.first(k), attack);
      std::copy_n(&adv.adversarial[0], k * d, &x[0]);
    }
    if (observer) {
      record.trained = x;
      record.trained_eval_loss = mean_loss(net, x, y);
      observer(record);
    }
  };

  const detail::EpochCallback on_epoch = [&](std::size_t epoch, const detail::EpochResult& r) {
    EpochRecord rec;
    rec.clean_loss = clean_rows ? clean_total / static_cast<double>(clean_rows) : 0.0;
    rec.adversarial_loss = r.train_loss;
    rec.val_clean_accuracy = r.val_accuracy;
    if (attacking) {
      const AdversarialBatch adv = inner_maximize(net, val.features(), val.labels(),
                                                  validation_attack(config.attack, epoch));
      rec.val_robust_accuracy = 1.0 - adv.success_rate();
    } else {
      rec.val_robust_accuracy = r.val_accuracy;
    }
    const auto now = std::chrono::steady_clock::now();
    rec.seconds = std::chrono::duration<double>(now - epoch_start).count();
    epoch_start = now;
    clean_total = 0.0;
    clean_rows = 0;
    log.epochs.push_back(rec);
  };

  detail::train_loop(net, train, val, config.train, transform, on_epoch);
  return log;
}

PerturbScope scope_from_string(std::string_view name) {
  if (name == "all") return PerturbScope::all;
  if (name == "attack-only") return PerturbScope::attack_only;
  fail(ErrorKind::parameter, "unknown perturbation scope '" + std::string(name) + "'");
}

std::string to_string(PerturbScope scope) {
  return scope == PerturbScope::all ? "all" : "attack-only";
}

RobustnessResult evaluate_robustness(const Classifier& model, const ProcessedDataset& test,
                                     std::span<const AttackConfig> attacks, PerturbScope scope) {
  RobustnessResult result;
  result.clean = evaluate(model, test.features(), test.labels());
  result.clean.scope = to_string(scope);

  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < test.rows(); ++r) {
    if (scope == PerturbScope::all || test.labels()[r] == 1) rows.push_back(r);
  }
  const Tensor x = test.gather(rows);
  std::vector<int> y;
  for (std::size_t r : rows) y.push_back(test.labels()[r]);
  const std::size_t d = test.width();

  for (const AttackConfig& attack : attacks) {
    AdversarialBatch batch = inner_maximize(model, x, y, attack);
    Tensor full = test.features();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(&batch.adversarial[i * d], d, &full[rows[i] * d]);
    }
    EvalReport report = evaluate(model, full, test.labels());
    report.attack = to_string(attack.method);
    report.scope = to_string(scope);
    report.mean_linf = batch.mean_linf();
    report.mean_l2 = batch.mean_l2();
    report.success_rate = batch.success_rate();
    report.config_json = attack_config_to_json(attack);
    result.attacked.push_back(std::move(report));
    result.batches.push_back(std::move(batch));
  }
  return result;
}

}  // namespace advids
