#pragma once

#include <functional>

#include "advids/nn.hpp"

namespace advids::detail {

struct BatchContext {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::span<const std::size_t> rows;
};

struct EpochResult {
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

// May rewrite the feature rows of a batch before the optimisation step.
using BatchTransform = std::function<void(const BatchContext&, Tensor& x, std::span<const int> y)>;
using EpochCallback = std::function<void(std::size_t epoch, const EpochResult&)>;

// Shuffled mini-batch Adam on the mean cross-entropy. Shuffling and dropout
// draw from streams derived from config.seed only.
std::vector<EpochResult> train_loop(Network& net, const ProcessedDataset& train,
                                    const ProcessedDataset& val, const TrainConfig& config,
                                    const BatchTransform& transform = {},
                                    const EpochCallback& on_epoch = {});

}  // namespace advids::detail
