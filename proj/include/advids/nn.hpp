#pragma once

// Dense, convolutional and recurrent binary classifiers, Adam, and the clean
// training loop.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advids/data.hpp"
#include "advids/random.hpp"
#include "advids/tensor.hpp"

namespace advids {

enum class Family { ann, cnn, rnn };

Family family_from_string(std::string_view name);
std::string to_string(Family family);

struct NetworkSpec {
  Family family = Family::ann;
  std::size_t input_features = 1;
  // Hidden dense layers (ReLU) before the 2-way output layer.
  std::vector<std::size_t> dense_widths;
  // cnn only.
  std::vector<std::size_t> conv_channels;
  std::size_t kernel_size = 3;
  Padding padding = Padding::same;
  std::size_t pool_window = 2;
  std::size_t pooled_convs = 2;  // a pool follows each of the first N convs
  // rnn only.
  std::vector<std::size_t> lstm_units;
  double dropout = 0.0;
  std::size_t output_classes = 2;

  static NetworkSpec ann(std::size_t features);
  static NetworkSpec cnn(std::size_t features);
  static NetworkSpec rnn(std::size_t features);
  static NetworkSpec defaults(Family family, std::size_t features);

  void validate() const;
  bool operator==(const NetworkSpec&) const = default;
};

struct Parameter {
  std::string name;
  Tensor value;
};

enum class Mode { train, eval };

// Anything that maps inputs [n, d] to two-class logits differentiably.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::size_t input_features() const = 0;
  // Eval-mode logits [n, 2]; parameters enter the graph as constants.
  virtual Var logits(Graph& graph, Var x) const = 0;
};

// logits = [0, w.x + b], so P(attack) = sigmoid(w.x + b).
class LinearClassifier final : public Classifier {
 public:
  LinearClassifier(std::vector<double> weights, double bias);
  std::size_t input_features() const override { return weights_.size(); }
  Var logits(Graph& graph, Var x) const override;
  std::span<const double> weights() const { return weights_; }
  double bias() const { return bias_; }

 private:
  std::vector<double> weights_;
  double bias_;
};

class Network final : public Classifier {
 public:
  struct Output {
    Var logits;
    Var probs;
  };

  static Network build(const NetworkSpec& spec, std::uint64_t seed);

  const NetworkSpec& spec() const noexcept { return spec_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const;

  Mode mode() const noexcept { return mode_; }
  void set_mode(Mode mode) noexcept { mode_ = mode; }

  // Places every parameter on the graph, as leaves when trainable.
  std::vector<Var> bind(Graph& graph, bool trainable) const;

  // Dropout is applied only in train mode and then needs `dropout_rng`.
  Output forward(Graph& graph, Var x, std::span<const Var> params,
                 Rng* dropout_rng = nullptr) const;

  std::size_t input_features() const override { return spec_.input_features; }
  Var logits(Graph& graph, Var x) const override;

  // Restores a parameter set produced elsewhere (checkpoint loading).
  Network(NetworkSpec spec, std::uint64_t seed, std::vector<Parameter> params);

 private:
  Output forward_impl(Graph& graph, Var x, std::span<const Var> params, bool training,
                      Rng* dropout_rng) const;

  NetworkSpec spec_;
  std::uint64_t seed_ = 0;
  std::vector<Parameter> params_;
  Mode mode_ = Mode::eval;
};

Var loss_ce(Var probs, std::span<const int> labels);

struct Prediction {
  std::vector<int> labels;
  std::vector<double> scores;  // probability of class 1 (attack)
};

// Class 1 only when its probability is strictly larger.
Prediction predict_from_probs(const Tensor& probs);
Tensor probabilities(const Classifier& model, const Tensor& x);
Prediction predict(const Classifier& model, const Tensor& x);
double accuracy(const Classifier& model, const Tensor& x, std::span<const int> labels);

// Per-row cross-entropy of the eval-mode model.
std::vector<double> per_sample_loss(const Classifier& model, const Tensor& x,
                                    std::span<const int> labels);

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;

  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

void adam_step(std::vector<Parameter>& params, std::span<const Tensor> grads,
               AdamState& state, double learning_rate);

struct TrainingLog {
  std::vector<double> train_loss;    // mean batch loss per epoch
  std::vector<double> val_accuracy;  // eval-mode, per epoch
  bool operator==(const TrainingLog&) const = default;
};

TrainingLog fit(Network& net, const ProcessedDataset& train, const ProcessedDataset& val,
                const TrainConfig& config);

// ---- checkpoints ---------------------------------------------------------

inline constexpr int checkpoint_format_version = 1;

std::string checkpoint_to_string(const Network& net);
Network checkpoint_from_string(std::string_view text);
void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace advids
