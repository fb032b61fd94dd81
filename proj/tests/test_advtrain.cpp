#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "advids/advtrain.hpp"
#include "advids/error.hpp"

using namespace advids;

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

// One wide-margin feature plus several tight ones whose small offsets an
// L-inf step of 0.1 can erase.
ProcessedSplits benchmark(std::size_t n) {
  SynthSpec s;
  s.n = n;
  s.coarse = 1;
  s.informative = 6;
  s.noise = 0;
  s.coarse_separation = 3.33;
  s.coarse_spread = 0.12;
  s.separation = 3.0;
  s.spread = 0.02;
  s.outlier_rate = 0.01;
  s.categorical = false;
  s.seed = 1;
  PreprocessOptions po;
  po.method = SelectionMethod::none;
  po.seed = 3;
  return preprocess(synth_generate(s), po);
}

const ProcessedSplits& small() {
  static const ProcessedSplits splits = benchmark(300);
  return splits;
}

AttackConfig attack(AttackMethod method, double eps) {
  AttackConfig c;
  c.method = method;
  c.epsilon = eps;
  c.seed = 5;
  return c;
}

TrainConfig short_training() {
  TrainConfig t;
  t.epochs = 3;
  t.seed = 11;
  return t;
}

}  // namespace

TEST_CASE("mix_ratio 0 reproduces plain training exactly") {
  const ProcessedSplits& d = small();
  for (Family family : {Family::ann, Family::cnn, Family::rnn}) {
    CAPTURE(to_string(family));
    const NetworkSpec spec = NetworkSpec::defaults(family, d.train.width());
    Network plain = Network::build(spec, 7);
    const TrainingLog expected = fit(plain, d.train, d.val, short_training());

    Network adv = Network::build(spec, 7);
    AdvTrainConfig c;
    c.train = short_training();
    c.attack = attack(AttackMethod::pgd, 0.1);
    c.mix_ratio = 0.0;
    const TrainingRunLog log = adversarial_fit(adv, d.train, d.val, c);
    CHECK(log.training_log() == expected);
    CHECK(log.epochs.size() == 3);
    for (std::size_t i = 0; i < plain.parameters().size(); ++i) {
      CHECK(adv.parameters()[i].value == plain.parameters()[i].value);
    }
  }
}

TEST_CASE("a zero budget reproduces plain training exactly") {
  const ProcessedSplits& d = small();
  for (AttackMethod m : {AttackMethod::fgsm, AttackMethod::bim, AttackMethod::pgd}) {
    CAPTURE(to_string(m));
    const NetworkSpec spec = NetworkSpec::defaults(Family::ann, d.train.width());
    Network plain = Network::build(spec, 7);
    const TrainingLog expected = fit(plain, d.train, d.val, short_training());

    Network adv = Network::build(spec, 7);
    AdvTrainConfig c;
    c.train = short_training();
    c.attack = attack(m, 0.0);
    c.attack.step_size = 0.01;
    const TrainingRunLog log = adversarial_fit(adv, d.train, d.val, c);
    CHECK(log.training_log() == expected);
    for (const EpochRecord& e : log.epochs) CHECK(e.val_robust_accuracy == e.val_clean_accuracy);
  }
}

TEST_CASE("training configuration is validated") {
  const ProcessedSplits& d = small();
  Network net = Network::build(NetworkSpec::ann(d.train.width()), 7);
  AdvTrainConfig c;
  c.attack = attack(AttackMethod::none, 0.1);
  CHECK(kind_of([&] { adversarial_fit(net, d.train, d.val, c); }) == ErrorKind::config);
  c.mix_ratio = 0.0;
  c.train.epochs = 1;
  CHECK_NOTHROW(adversarial_fit(net, d.train, d.val, c));
  c.attack = attack(AttackMethod::fgsm, 0.1);
  c.mix_ratio = 1.5;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::config);
  c.mix_ratio = 0.5;
  c.attack.epsilon = -1.0;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::parameter);
}

TEST_CASE("batches are crafted against the parameters of the moment") {
  const ProcessedSplits& d = small();
  const NetworkSpec spec = NetworkSpec::defaults(Family::ann, d.train.width());
  Network net = Network::build(spec, 7);
  AdvTrainConfig c;
  c.train = short_training();
  c.train.epochs = 2;
  c.attack = attack(AttackMethod::pgd, 0.1);
  c.mix_ratio = 0.5;

  std::vector<BatchRecord> records;
  adversarial_fit(net, d.train, d.val, c, [&](const BatchRecord& r) { records.push_back(r); });
  REQUIRE(records.size() == 2 * ((d.train.rows() + 31) / 32));

  std::size_t changed = 0;
  for (const BatchRecord& r : records) {
    const Network snapshot(spec, 7, r.parameters);
    const std::size_t k = r.adversarial_rows, width = r.clean.dim(1);
    CHECK(k == static_cast<std::size_t>(std::llround(0.5 * static_cast<double>(r.labels.size()))));

    Tensor head({k, width});
    std::copy_n(&r.clean[0], k * width, &head[0]);
    const AdversarialBatch again =
        inner_maximize(snapshot, head, std::span<const int>(r.labels).first(k), r.attack);
    bool same = true;
    for (std::size_t i = 0; i < k * width; ++i) same = same && again.adversarial[i] == r.trained[i];
    for (std::size_t i = k * width; i < r.clean.size(); ++i) same = same && r.clean[i] == r.trained[i];
    CHECK(same);

    const std::vector<double> losses = per_sample_loss(snapshot, r.trained, r.labels);
    double mean = 0.0;
    for (double v : losses) mean += v;
    mean /= static_cast<double>(losses.size());
    CHECK(mean == r.trained_eval_loss);
    if (r.trained != r.clean) ++changed;
  }
  CHECK(changed == records.size());
  // Training moved the parameters between the first and last snapshot.
  CHECK(records.front().parameters[0].value != records.back().parameters[0].value);
}

TEST_CASE("run logs serialise") {
  const ProcessedSplits& d = small();
  Network net = Network::build(NetworkSpec::ann(d.train.width()), 7);
  AdvTrainConfig c;
  c.train = short_training();
  c.attack = attack(AttackMethod::fgsm, 0.1);
  const TrainingRunLog log = adversarial_fit(net, d.train, d.val, c);
  REQUIRE(log.epochs.size() == 3);
  const std::string text = log.to_json();
  CHECK(text.find("\"val_robust_accuracy\"") != std::string::npos);
  CHECK(text.find("\"mix_ratio\": 1.0") != std::string::npos);
  CHECK(text.find("\"method\": \"fgsm\"") != std::string::npos);
  for (const EpochRecord& e : log.epochs) {
    CHECK(e.seconds >= 0.0);
    CHECK(e.clean_loss > 0.0);
    CHECK(e.val_robust_accuracy >= 0.0);
    CHECK(e.val_robust_accuracy <= 1.0);
  }
}

TEST_CASE("pgd hardening lifts robust accuracy on the synthetic benchmark") {
  const ProcessedSplits d = benchmark(1000);
  const NetworkSpec spec = NetworkSpec::defaults(Family::ann, d.train.width());
  TrainConfig t;
  t.seed = 11;
  const AttackConfig pgd = attack(AttackMethod::pgd, 0.1);

  Network baseline = Network::build(spec, 7);
  const TrainingLog plain = fit(baseline, d.train, d.val, t);
  Network hardened = Network::build(spec, 7);
  AdvTrainConfig c;
  c.train = t;
  c.attack = pgd;
  const TrainingRunLog log = adversarial_fit(hardened, d.train, d.val, c);

  // Held-out robust accuracy after the final epoch.
  const double baseline_val =
      1.0 - inner_maximize(baseline, d.val.features(), d.val.labels(), pgd).success_rate();
  CHECK(log.epochs.back().val_robust_accuracy >= baseline_val + 0.15);

  const std::vector<AttackConfig> attacks{pgd};
  const RobustnessResult before = evaluate_robustness(baseline, d.test, attacks);
  const RobustnessResult after = evaluate_robustness(hardened, d.test, attacks);
  CHECK(after.attacked[0].rates.accuracy > before.attacked[0].rates.accuracy + 0.15);
  CHECK(after.clean.rates.accuracy >= before.clean.rates.accuracy - 0.10);
  CHECK(plain.val_accuracy.back() >= 0.95);
}

TEST_CASE("robustness evaluation") {
  const ProcessedSplits& d = small();
  Network net = Network::build(NetworkSpec::ann(d.train.width()), 7);
  TrainConfig t = short_training();
  fit(net, d.train, d.val, t);

  const RobustnessResult clean_only = evaluate_robustness(net, d.test, {});
  CHECK(clean_only.attacked.empty());
  CHECK(clean_only.clean.rates == evaluate(net, d.test.features(), d.test.labels()).rates);

  const std::vector<AttackConfig> attacks{attack(AttackMethod::pgd, 0.1),
                                          attack(AttackMethod::deepfool, 0.1)};
  const RobustnessResult a = evaluate_robustness(net, d.test, attacks);
  const RobustnessResult b = evaluate_robustness(net, d.test, attacks);
  REQUIRE(a.attacked.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    EvalReport x = a.attacked[i], y = b.attacked[i];
    x.timestamp = y.timestamp = "";
    CHECK(x == y);
    CHECK(a.batches[i].adversarial == b.batches[i].adversarial);
  }
  CHECK(a.attacked[0].attack == "pgd");
  CHECK(a.attacked[0].success_rate == a.batches[0].success_rate());

  // Only attack rows move, but every row is scored.
  const RobustnessResult subset =
      evaluate_robustness(net, d.test, attacks, PerturbScope::attack_only);
  std::size_t positives = 0;
  for (int label : d.test.labels()) positives += label == 1;
  CHECK(subset.batches[0].rows() == positives);
  CHECK(subset.attacked[0].counts.total() == d.test.rows());
  CHECK(subset.attacked[0].scope == "attack-only");
  // Benign rows are untouched, so nothing benign can newly flip.
  CHECK(subset.attacked[0].counts.tn == subset.clean.counts.tn);
}
