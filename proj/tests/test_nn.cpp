#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "advids/error.hpp"
#include "advids/nn.hpp"

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

std::size_t dense_count(std::size_t in, std::size_t out) { return in * out + out; }

// Two well separated blobs in two features, label = 1 when x0 + x1 > 1.
ProcessedDataset separable(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({n, 2});
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double centre = label == 1 ? 0.75 : 0.25;
    x.at(i, 0) = std::clamp(centre + 0.08 * standard_normal(rng), 0.0, 1.0);
    x.at(i, 1) = std::clamp(centre + 0.08 * standard_normal(rng), 0.0, 1.0);
    y[i] = label;
  }
  return ProcessedDataset(std::move(x), std::move(y), {"a", "b"});
}

void zero_all(Network& net) {
  for (auto& p : net.parameters()) {
    for (double& v : p.value.values()) v = 0.0;
  }
}

Tensor eval_logits(const Network& net, const Tensor& x) {
  Graph g;
  return net.logits(g, g.constant(x)).value();
}

}  // namespace

TEST_CASE("default parameter counts follow the layer arithmetic") {
  const std::size_t d = 5;
  const std::size_t ann = dense_count(5, 128) + dense_count(128, 96) + dense_count(96, 64) +
                          dense_count(64, 2);
  CHECK(ann == 19490);
  CHECK(Network::build(NetworkSpec::ann(d), 1).parameter_count() == ann);

  // cnn: same padding keeps length 5, pools give ceil(5/2)=3 then ceil(3/2)=2.
  const std::size_t conv = (3 * 1 * 16 + 16) + (3 * 16 * 32 + 32) + (3 * 32 * 64 + 64);
  const std::size_t flat = 2 * 64;
  const std::size_t cnn = conv + dense_count(flat, 64) + dense_count(64, 48) +
                          dense_count(48, 32) + dense_count(32, 16) + dense_count(16, 2);
  CHECK(Network::build(NetworkSpec::cnn(d), 1).parameter_count() == cnn);

  const std::size_t lstm1 = 1 * 256 + 64 * 256 + 256;
  const std::size_t lstm2 = 64 * 256 + 64 * 256 + 256;
  const std::size_t rnn = lstm1 + lstm2 + dense_count(64, 32) + dense_count(32, 2);
  CHECK(Network::build(NetworkSpec::rnn(d), 1).parameter_count() == rnn);
}

TEST_CASE("default layouts") {
  const NetworkSpec ann = NetworkSpec::ann(5);
  CHECK(ann.dense_widths == std::vector<std::size_t>{128, 96, 64});
  const NetworkSpec cnn = NetworkSpec::cnn(5);
  CHECK(cnn.conv_channels.size() == 3);
  CHECK(cnn.pooled_convs == 2);
  CHECK(cnn.dense_widths.size() == 4);
  const NetworkSpec rnn = NetworkSpec::rnn(5);
  CHECK(rnn.lstm_units.size() == 2);
  CHECK(rnn.dense_widths.size() == 1);
}

TEST_CASE("build is deterministic and validates specs") {
  for (Family f : {Family::ann, Family::cnn, Family::rnn}) {
    const NetworkSpec spec = NetworkSpec::defaults(f, 6);
    const Network a = Network::build(spec, 42), b = Network::build(spec, 42);
    REQUIRE(a.parameters().size() == b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
      CHECK(a.parameters()[i].value == b.parameters()[i].value);
    }
  }
  NetworkSpec collapsing = NetworkSpec::cnn(5);
  collapsing.padding = Padding::valid;
  CHECK(kind_of([&] { Network::build(collapsing, 0); }) == ErrorKind::parameter);
  NetworkSpec bad_dropout = NetworkSpec::ann(3);
  bad_dropout.dropout = 1.0;
  CHECK(kind_of([&] { Network::build(bad_dropout, 0); }) == ErrorKind::parameter);
  CHECK(kind_of([] { Network::build(NetworkSpec::ann(0), 0); }) == ErrorKind::parameter);
}

TEST_CASE("zero weights give zero logits") {
  const Tensor x({3, 4}, {0.1, 0.9, 0.3, 0.5, 1, 0, 1, 0, 0.2, 0.2, 0.7, 0.4});
  for (Family f : {Family::ann, Family::cnn, Family::rnn}) {
    Network net = Network::build(NetworkSpec::defaults(f, 4), 3);
    zero_all(net);
    const Tensor z = eval_logits(net, x);
    for (double v : z.values()) CHECK(v == 0.0);
    const Tensor p = probabilities(net, x);
    for (double v : p.values()) CHECK(v == 0.5);
  }
}

TEST_CASE("eval forward is deterministic and checks width") {
  const Tensor x({2, 5}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.9, 0.8, 0.7, 0.6, 0.5});
  for (Family f : {Family::ann, Family::cnn, Family::rnn}) {
    const Network net = Network::build(NetworkSpec::defaults(f, 5), 7);
    CHECK(eval_logits(net, x) == eval_logits(net, x));
    CHECK(kind_of([&] { eval_logits(net, Tensor({2, 4})); }) == ErrorKind::dimension);
  }
}

TEST_CASE("single-feature toy ann matches hand evaluation") {
  NetworkSpec spec;
  spec.family = Family::ann;
  spec.input_features = 1;
  spec.dense_widths = {2};
  Network net = Network::build(spec, 0);
  auto& p = net.parameters();
  p[0].value = Tensor({1, 2}, {1.5, -2.0});
  p[1].value = Tensor({2}, {0.25, 0.5});
  p[2].value = Tensor({2, 2}, {0.3, -0.7, 1.1, 0.2});
  p[3].value = Tensor({2}, {0.05, -0.1});
  for (double x : {0.0, 0.2, 0.9}) {
    const double h0 = std::max(0.0, 1.5 * x + 0.25);
    const double h1 = std::max(0.0, -2.0 * x + 0.5);
    const double z0 = 0.3 * h0 + 1.1 * h1 + 0.05;
    const double z1 = -0.7 * h0 + 0.2 * h1 - 0.1;
    const Tensor z = eval_logits(net, Tensor({1, 1}, {x}));
    CHECK(std::abs(z[0] - z0) < 1e-12);
    CHECK(std::abs(z[1] - z1) < 1e-12);
  }
}

TEST_CASE("input gradients of every family match finite differences") {
  const Tensor x({2, 5}, {0.1, 0.7, 0.3, 0.45, 0.5, 0.9, 0.15, 0.62, 0.33, 0.8});
  for (Family f : {Family::ann, Family::cnn, Family::rnn}) {
    CAPTURE(to_string(f));
    const Network net = Network::build(NetworkSpec::defaults(f, 5), 11);
    const std::vector<int> labels{1, 0};
    CHECK(grad_check([&](Graph& g, Var v) { return loss_ce(softmax(net.logits(g, v)), labels); },
                     x, 1e-5) < 1e-4);
  }
}

TEST_CASE("parameter gradients of the rnn match finite differences") {
  NetworkSpec spec = NetworkSpec::rnn(3);
  spec.lstm_units = {4, 3};
  spec.dense_widths = {3};
  const Network net = Network::build(spec, 5);
  const Tensor x({2, 3}, {0.2, 0.5, 0.9, 0.7, 0.1, 0.4});
  const std::vector<int> labels{0, 1};
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    CAPTURE(net.parameters()[i].name);
    const auto f = [&](Graph& g, Var v) {
      std::vector<Var> params = net.bind(g, false);
      params[i] = v;
      return loss_ce(net.forward(g, g.constant(x), params).probs, labels);
    };
    CHECK(grad_check(f, net.parameters()[i].value, 1e-5) < 1e-4);
  }
}

TEST_CASE("cross-entropy loss") {
  Graph g;
  auto loss = [&](std::vector<double> p, std::vector<int> y) {
    const std::size_t n = y.size();
    return loss_ce(g.constant(Tensor({n, 2}, std::move(p))), y).value()[0];
  };
  CHECK(std::abs(loss({0.5, 0.5}, {0}) - 0.693147) < 1e-6);
  CHECK(loss({1.0, 0.0}, {0}) == doctest::Approx(0.0));
  const double a = loss({0.8, 0.2}, {0}), b = loss({0.3, 0.7}, {0});
  CHECK(std::abs(loss({0.8, 0.2, 0.3, 0.7}, {0, 0}) - (a + b) / 2) < 1e-15);
  CHECK(kind_of([&] { loss({0.5, 0.5}, {-1}); }) == ErrorKind::label);
}

TEST_CASE("adam first steps") {
  std::vector<Parameter> params{{"w", Tensor({4}, {1.0, -2.0, 0.5, 3.0})}};
  const std::vector<Tensor> grads{Tensor({4}, {0.3, -4.0, 1e-3, 0.0})};
  AdamState state;
  const double lr = 0.01;
  adam_step(params, grads, state, lr);
  CHECK(state.t == 1);
  const std::vector<double> start{1.0, -2.0, 0.5, 3.0};
  for (std::size_t i = 0; i < 4; ++i) {
    const double g = grads[0][i];
    const double expected = start[i] - lr * g / (std::abs(g) + 1e-8);
    CHECK(std::abs(params[0].value[i] - expected) < 1e-9);
  }
  CHECK(params[0].value[3] == 3.0);

  // Second identical step: hand-rolled recurrence.
  adam_step(params, grads, state, lr);
  for (std::size_t i = 0; i < 4; ++i) {
    const double g = grads[0][i];
    double theta = start[i], m = 0, v = 0;
    for (int t = 1; t <= 2; ++t) {
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      theta -= lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    CHECK(std::abs(params[0].value[i] - theta) < 1e-12);
    if (g > 0) CHECK(params[0].value[i] < start[i] - lr * 1.5);
    if (g < 0) CHECK(params[0].value[i] > start[i] + lr * 1.5);
  }
  const std::vector<Tensor> wrong{Tensor({3})};
  CHECK(kind_of([&] { adam_step(params, wrong, state, lr); }) == ErrorKind::dimension);
}

TEST_CASE("predictions use argmax with ties toward benign") {
  const Prediction p = predict_from_probs(Tensor({3, 2}, {0.7, 0.3, 0.5, 0.5, 0.2, 0.8}));
  CHECK(p.labels == std::vector<int>{0, 0, 1});
  CHECK(p.scores == std::vector<double>{0.3, 0.5, 0.8});
}

TEST_CASE("inverted dropout preserves the expected activation") {
  NetworkSpec spec;
  spec.family = Family::ann;
  spec.input_features = 3;
  spec.dense_widths = {8};
  spec.dropout = 0.25;
  const Network net = Network::build(spec, 9);
  const Tensor x({1, 3}, {0.9, 0.4, 0.7});
  const Tensor eval = eval_logits(net, x);

  // The output layer is affine in the dropped activation, so mean logits
  // over many train-mode passes approach the eval-mode logits.
  Rng rng = derive_rng(1, 2);
  double acc0 = 0.0, acc1 = 0.0;
  const int passes = 10000;
  for (int i = 0; i < passes; ++i) {
    Graph g;
    Network copy = net;
    copy.set_mode(Mode::train);
    const auto params = copy.bind(g, false);
    const Tensor z = copy.forward(g, g.constant(x), params, &rng).logits.value();
    acc0 += z[0];
    acc1 += z[1];
  }
  CHECK(std::abs(acc0 / passes - eval[0]) <= 0.02 * std::abs(eval[0]));
  CHECK(std::abs(acc1 / passes - eval[1]) <= 0.02 * std::abs(eval[1]));
}

TEST_CASE("fit learns a separable set deterministically") {
  const ProcessedDataset train = separable(400, 1), val = separable(200, 2);
  TrainConfig cfg;
  cfg.seed = 5;
  Network a = Network::build(NetworkSpec::ann(2), 3);
  const TrainingLog log = fit(a, train, val, cfg);
  REQUIRE(log.val_accuracy.size() == 10);
  CHECK(log.val_accuracy.back() >= 0.99);
  CHECK(log.train_loss.back() < log.train_loss.front());
  for (double l : log.train_loss) CHECK(std::isfinite(l));

  Network b = Network::build(NetworkSpec::ann(2), 3);
  CHECK(fit(b, train, val, cfg) == log);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(a.parameters()[i].value == b.parameters()[i].value);
  }

  TrainConfig zero = cfg;
  zero.epochs = 0;
  CHECK(kind_of([&] { fit(b, train, val, zero); }) == ErrorKind::parameter);
  const ProcessedDataset empty(Tensor({0, 2}), {}, {"a", "b"});
  CHECK(kind_of([&] { fit(b, empty, val, cfg); }) == ErrorKind::data);
}

TEST_CASE("cnn and rnn also learn the separable set") {
  const ProcessedDataset train = separable(400, 3), val = separable(200, 4);
  TrainConfig cfg;
  cfg.seed = 6;
  for (Family f : {Family::cnn, Family::rnn}) {
    CAPTURE(to_string(f));
    Network net = Network::build(NetworkSpec::defaults(f, 2), 3);
    const TrainingLog log = fit(net, train, val, cfg);
    CHECK(log.val_accuracy.back() >= 0.99);
    CHECK(log.train_loss.back() < log.train_loss.front());
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  for (Family f : {Family::ann, Family::cnn, Family::rnn}) {
    Network net = Network::build(NetworkSpec::defaults(f, 4), 21);
    net.parameters()[0].value[0] = 0.1 + 0.2;  // not representable in short decimal
    const std::string text = checkpoint_to_string(net);
    const Network back = checkpoint_from_string(text);
    CHECK(back.spec() == net.spec());
    CHECK(back.seed() == net.seed());
    for (std::size_t i = 0; i < net.parameters().size(); ++i) {
      CHECK(back.parameters()[i].name == net.parameters()[i].name);
      CHECK(back.parameters()[i].value == net.parameters()[i].value);
    }
    CHECK(checkpoint_to_string(back) == text);
  }
}

TEST_CASE("checkpoint errors") {
  const Network net = Network::build(NetworkSpec::ann(3), 1);
  std::string text = checkpoint_to_string(net);
  CHECK(kind_of([] { checkpoint_from_string("{not json"); }) == ErrorKind::parse);

  std::string widened = text;
  const auto pos = widened.find("\"input_features\": 3");
  REQUIRE(pos != std::string::npos);
  widened.replace(pos, 19, "\"input_features\": 4");
  CHECK(kind_of([&] { checkpoint_from_string(widened); }) == ErrorKind::checkpoint_mismatch);

  std::string versioned = text;
  const auto vpos = versioned.find("\"format_version\": 1");
  REQUIRE(vpos != std::string::npos);
  versioned.replace(vpos, 19, "\"format_version\": 9");
  CHECK(kind_of([&] { checkpoint_from_string(versioned); }) == ErrorKind::checkpoint_mismatch);
}
