#include <cmath>
#include <numeric>

#include "advids/error.hpp"
#include "advids/nn.hpp"
#include "train_loop.hpp"

namespace advids {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) fail(ErrorKind::parameter, "learning rate must be > 0");
  if (epochs < 1) fail(ErrorKind::parameter, "epochs must be >= 1");
  if (batch_size < 1) fail(ErrorKind::parameter, "batch size must be >= 1");
}

void adam_step(std::vector<Parameter>& params, std::span<const Tensor> grads,
               AdamState& state, double learning_rate) {
  if (grads.size() != params.size()) {
    fail(ErrorKind::dimension, "adam_step: " + std::to_string(grads.size()) +
                                   " gradients for " + std::to_string(params.size()) +
                                   " parameters");
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.size(), 0.0);
      state.v.emplace_back(p.value.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    fail(ErrorKind::dimension, "adam_step: optimizer state does not match parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].value.size() || state.m[i].size() != grads[i].size()) {
      fail(ErrorKind::dimension, "adam_step: gradient " + shape_string(grads[i].shape()) +
                                     " does not match parameter " + params[i].name + " " +
                                     shape_string(params[i].value.shape()));
    }
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(AdamState::beta1, t);
  const double c2 = 1.0 - std::pow(AdamState::beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].value.values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      m[j] = AdamState::beta1 * m[j] + (1.0 - AdamState::beta1) * g[j];
      v[j] = AdamState::beta2 * v[j] + (1.0 - AdamState::beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      values[j] -= learning_rate * m_hat / (std::sqrt(v_hat) + AdamState::epsilon);
    }
  }
}

namespace detail {

std::vector<EpochResult> train_loop(Network& net, const ProcessedDataset& train,
                                    const ProcessedDataset& val, const TrainConfig& config,
                                    const BatchTransform& transform,
                                    const EpochCallback& on_epoch) {
  config.validate();
  if (train.rows() == 0 || val.rows() == 0) {
    fail(ErrorKind::data, "training needs non-empty train and validation sets");
  }
  const std::size_t d = net.spec().input_features;
  if (train.width() != d || val.width() != d) {
    fail(ErrorKind::dimension, "dataset widths " + std::to_string(train.width()) + "/" +
                                   std::to_string(val.width()) + " do not match network input " +
                                   std::to_string(d));
  }

  Rng order_rng = derive_rng(config.seed, 1);
  Rng dropout_rng = derive_rng(config.seed, 2);
  AdamState adam;
  std::vector<std::size_t> order(train.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<EpochResult> results;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(std::span(order), order_rng);
    double loss_total = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      const std::span<const std::size_t> rows(order.data() + start, count);
      Tensor x = train.gather(rows);
      std::vector<int> y(count);
      for (std::size_t i = 0; i < count; ++i) y[i] = train.labels()[rows[i]];
      if (transform) transform(BatchContext{epoch, batch_index, rows}, x, y);

      net.set_mode(Mode::train);
      Graph graph;
      const std::vector<Var> params = net.bind(graph, true);
      const Network::Output out = net.forward(graph, graph.constant(std::move(x)), params, &dropout_rng);
      const Var loss = loss_ce(out.probs, y);
      graph.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(params.size());
      for (const Var& p : params) grads.push_back(graph.grad(p));
      adam_step(net.parameters(), grads, adam, config.learning_rate);
      loss_total += loss.value()[0] * static_cast<double>(count);
    }
    net.set_mode(Mode::eval);
    EpochResult result;
    result.train_loss = loss_total / static_cast<double>(order.size());
    result.val_accuracy = accuracy(net, val.features(), val.labels());
    if (!std::isfinite(result.train_loss)) {
      fail(ErrorKind::contract, "training loss became non-finite in epoch " + std::to_string(epoch));
    }
    results.push_back(result);
    if (on_epoch) on_epoch(epoch, result);
  }
  return results;
}

}  // namespace detail

TrainingLog fit(Network& net, const ProcessedDataset& train, const ProcessedDataset& val,
                const TrainConfig& config) {
  TrainingLog log;
  for (const auto& epoch : detail::train_loop(net, train, val, config)) {
    log.train_loss.push_back(epoch.train_loss);
    log.val_accuracy.push_back(epoch.val_accuracy);
  }
  return log;
}

}  // namespace advids
