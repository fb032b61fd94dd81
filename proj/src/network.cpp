#include <algorithm>
#include <cmath>

#include "advids/error.hpp"
#include "advids/nn.hpp"

namespace advids {
namespace {

constexpr std::size_t predict_chunk = 512;

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.values()) v = uniform(rng, -limit, limit);
  return t;
}

void add_dense(std::vector<Parameter>& params, const std::string& name, std::size_t in,
               std::size_t out, Rng& rng) {
  params.push_back({name + ".weight", glorot({in, out}, in, out, rng)});
  params.push_back({name + ".bias", Tensor({out})});
}

// Sequence lengths after each conv layer; throws when a layer cannot fit.
std::vector<std::size_t> conv_lengths(const NetworkSpec& spec) {
  std::vector<std::size_t> lengths;
  std::size_t length = spec.input_features;
  const std::size_t pad = spec.padding == Padding::same ? spec.kernel_size - 1 : 0;
  for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
    if (length < 1 || spec.kernel_size > length + pad) {
      fail(ErrorKind::parameter,
           "cnn spec: sequence length " + std::to_string(length) + " before conv layer " +
               std::to_string(i) + " is too short for kernel " +
               std::to_string(spec.kernel_size));
    }
    length = length + pad - spec.kernel_size + 1;
    if (i < spec.pooled_convs) length = (length + spec.pool_window - 1) / spec.pool_window;
    lengths.push_back(length);
  }
  return lengths;
}

Var dropout(Var h, double rate, Rng* rng) {
  if (rate <= 0.0) return h;
  if (rng == nullptr) fail(ErrorKind::contract, "train-mode dropout needs a random stream");
  Tensor mask(h.shape());
  const double keep = 1.0 - rate;
  for (double& m : mask.values()) m = uniform01(*rng) < keep ? 1.0 / keep : 0.0;
  return mul(h, h.graph->constant(std::move(mask)));
}

}  // namespace

Family family_from_string(std::string_view name) {
  if (name == "ann") return Family::ann;
  if (name == "cnn") return Family::cnn;
  if (name == "rnn") return Family::rnn;
  fail(ErrorKind::parameter, "unknown model family '" + std::string(name) + "'");
}

std::string to_string(Family family) {
  switch (family) {
    case Family::ann: return "ann";
    case Family::cnn: return "cnn";
    case Family::rnn: return "rnn";
  }
  return "?";
}

NetworkSpec NetworkSpec::ann(std::size_t features) {
  NetworkSpec spec;
  spec.family = Family::ann;
  spec.input_features = features;
  spec.dense_widths = {128, 96, 64};
  spec.dropout = 0.25;
  return spec;
}

NetworkSpec NetworkSpec::cnn(std::size_t features) {
  NetworkSpec spec;
  spec.family = Family::cnn;
  spec.input_features = features;
  spec.conv_channels = {16, 32, 64};
  spec.kernel_size = 3;
  spec.padding = Padding::same;
  spec.pool_window = 2;
  spec.pooled_convs = 2;
  spec.dense_widths = {64, 48, 32, 16};
  spec.dropout = 0.25;
  return spec;
}

NetworkSpec NetworkSpec::rnn(std::size_t features) {
  NetworkSpec spec;
  spec.family = Family::rnn;
  spec.input_features = features;
  spec.lstm_units = {64, 64};
  spec.dense_widths = {32};
  spec.dropout = 0.5;
  return spec;
}

NetworkSpec NetworkSpec::defaults(Family family, std::size_t features) {
  switch (family) {
    case Family::ann: return ann(features);
    case Family::cnn: return cnn(features);
    case Family::rnn: return rnn(features);
  }
  fail(ErrorKind::parameter, "unknown model family");
}

void NetworkSpec::validate() const {
  if (input_features < 1) fail(ErrorKind::parameter, "network needs at least one input feature");
  if (output_classes != 2) fail(ErrorKind::parameter, "only two-class outputs are supported");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    fail(ErrorKind::parameter, "dropout rate must lie in [0, 1)");
  }
  for (std::size_t w : dense_widths) {
    if (w == 0) fail(ErrorKind::parameter, "dense layer width must be positive");
  }
  switch (family) {
    case Family::ann:
      break;
    case Family::cnn:
      if (conv_channels.empty()) fail(ErrorKind::parameter, "cnn spec needs conv layers");
      if (kernel_size == 0 || pool_window == 0) {
        fail(ErrorKind::parameter, "cnn kernel size and pool window must be positive");
      }
      if (pooled_convs > conv_channels.size()) {
        fail(ErrorKind::parameter, "cnn spec pools after more convs than it has");
      }
      conv_lengths(*this);
      break;
    case Family::rnn:
      if (lstm_units.empty()) fail(ErrorKind::parameter, "rnn spec needs LSTM layers");
      for (std::size_t u : lstm_units) {
        if (u == 0) fail(ErrorKind::parameter, "LSTM width must be positive");
      }
      break;
  }
}

LinearClassifier::LinearClassifier(std::vector<double> weights, double bias)
    : weights_(std::move(weights)), bias_(bias) {
  if (weights_.empty()) fail(ErrorKind::parameter, "linear classifier needs weights");
}

Var LinearClassifier::logits(Graph& graph, Var x) const {
  // Column 0 is identically zero, column 1 carries w.x + b.
  const std::size_t d = weights_.size();
  Tensor w({d, 2});
  for (std::size_t i = 0; i < d; ++i) w.at(i, 1) = weights_[i];
  Var z = matmul(x, graph.constant(std::move(w)));
  return add(z, graph.constant(Tensor({2}, {0.0, bias_})));
}

Network::Network(NetworkSpec spec, std::uint64_t seed, std::vector<Parameter> params)
    : spec_(std::move(spec)), seed_(seed), params_(std::move(params)) {}

Network Network::build(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::vector<Parameter> params;
  std::size_t width = spec.input_features;

  switch (spec.family) {
    case Family::ann:
      break;
    case Family::cnn: {
      std::size_t channels = 1;
      for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
        const std::size_t out = spec.conv_channels[i];
        const std::size_t k = spec.kernel_size;
        const std::string name = "conv" + std::to_string(i);
        params.push_back({name + ".kernel", glorot({k, channels, out}, k * channels, k * out, rng)});
        params.push_back({name + ".bias", Tensor({out})});
        channels = out;
      }
      width = conv_lengths(spec).back() * channels;
      break;
    }
    case Family::rnn: {
      std::size_t in = 1;
      for (std::size_t i = 0; i < spec.lstm_units.size(); ++i) {
        const std::size_t h = spec.lstm_units[i];
        const std::string name = "lstm" + std::to_string(i);
        params.push_back({name + ".w_input", glorot({in, 4 * h}, in, 4 * h, rng)});
        params.push_back({name + ".w_hidden", glorot({h, 4 * h}, h, 4 * h, rng)});
        Tensor bias({4 * h});
        for (std::size_t j = h; j < 2 * h; ++j) bias[j] = 1.0;  // forget gate
        params.push_back({name + ".bias", std::move(bias)});
        in = h;
      }
      width = in;
      break;
    }
  }
  for (std::size_t i = 0; i < spec.dense_widths.size(); ++i) {
    add_dense(params, "dense" + std::to_string(i), width, spec.dense_widths[i], rng);
    width = spec.dense_widths[i];
  }
  add_dense(params, "output", width, spec.output_classes, rng);
  return Network(spec, seed, std::move(params));
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.size();
  return total;
}

std::vector<Var> Network::bind(Graph& graph, bool trainable) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) {
    vars.push_back(trainable ? graph.leaf(p.value) : graph.constant(p.value));
  }
  return vars;
}

Network::Output Network::forward(Graph& graph, Var x, std::span<const Var> params,
                                 Rng* dropout_rng) const {
  return forward_impl(graph, x, params, mode_ == Mode::train, dropout_rng);
}

Network::Output Network::forward_impl(Graph& /*graph*/, Var x, std::span<const Var> params,
                                      bool training, Rng* dropout_rng) const {
  const Tensor& input = x.value();
  if (input.rank() != 2 || input.dim(1) != spec_.input_features) {
    fail(ErrorKind::dimension, "network expects [n, " + std::to_string(spec_.input_features) +
                                   "] inputs, got " + shape_string(input.shape()));
  }
  if (params.size() != params_.size()) {
    fail(ErrorKind::contract, "forward got " + std::to_string(params.size()) +
                                  " parameter nodes, network has " +
                                  std::to_string(params_.size()));
  }
  const double rate = training ? spec_.dropout : 0.0;
  const std::size_t n = input.dim(0);
  std::size_t next = 0;
  auto take = [&] { return params[next++]; };

  Var h = x;
  switch (spec_.family) {
    case Family::ann:
      for (std::size_t i = 0; i < spec_.dense_widths.size(); ++i) {
        Var w = take();
        Var b = take();
        h = dropout(relu(add(matmul(h, w), b)), rate, dropout_rng);
      }
      break;
    case Family::cnn: {
      h = reshape(h, {n, spec_.input_features, 1});
      for (std::size_t i = 0; i < spec_.conv_channels.size(); ++i) {
        Var k = take();
        Var b = take();
        h = relu(add(conv1d(h, k, spec_.padding), b));
        if (i < spec_.pooled_convs) h = maxpool1d(h, spec_.pool_window);
        if (i + 1 == spec_.pooled_convs) h = dropout(h, rate, dropout_rng);
      }
      const Shape& s = h.shape();
      h = reshape(h, {n, s[1] * s[2]});
      break;
    }
    case Family::rnn: {
      std::vector<Var> sequence;
      sequence.reserve(spec_.input_features);
      for (std::size_t t = 0; t < spec_.input_features; ++t) {
        sequence.push_back(slice_columns(x, t, 1));
      }
      for (std::size_t layer = 0; layer < spec_.lstm_units.size(); ++layer) {
        const std::size_t units = spec_.lstm_units[layer];
        Var w_in = take();
        Var w_hid = take();
        Var bias = take();
        std::vector<Var> outputs;
        outputs.reserve(sequence.size());
        Var hidden{}, cell{};
        for (std::size_t t = 0; t < sequence.size(); ++t) {
          Var z = matmul(sequence[t], w_in);
          if (t > 0) z = add(z, matmul(hidden, w_hid));
          z = add(z, bias);
          Var in_gate = sigmoid(slice_columns(z, 0, units));
          Var forget = sigmoid(slice_columns(z, units, units));
          Var candidate = tanh(slice_columns(z, 2 * units, units));
          Var out_gate = sigmoid(slice_columns(z, 3 * units, units));
          Var fresh = mul(in_gate, candidate);
          cell = t > 0 ? add(mul(forget, cell), fresh) : fresh;
          hidden = mul(out_gate, tanh(cell));
          outputs.push_back(hidden);
        }
        sequence = std::move(outputs);
      }
      h = dropout(sequence.back(), rate, dropout_rng);
      break;
    }
  }
  if (spec_.family != Family::ann) {
    for (std::size_t i = 0; i < spec_.dense_widths.size(); ++i) {
      Var w = take();
      Var b = take();
      h = relu(add(matmul(h, w), b));
    }
  }
  Var w = take();
  Var b = take();
  Var logits = add(matmul(h, w), b);
  return Output{logits, softmax(logits)};
}

Var Network::logits(Graph& graph, Var x) const {
  const std::vector<Var> params = bind(graph, false);
  return forward_impl(graph, x, params, false, nullptr).logits;
}

Var loss_ce(Var probs, std::span<const int> labels) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      fail(ErrorKind::label, "label " + std::to_string(labels[i]) + " at row " +
                                 std::to_string(i) + " is not binary");
    }
  }
  return cross_entropy(probs, labels);
}

Prediction predict_from_probs(const Tensor& probs) {
  if (probs.rank() != 2 || probs.dim(1) != 2) {
    fail(ErrorKind::dimension, "expected [n, 2] probabilities, got " + shape_string(probs.shape()));
  }
  Prediction out;
  const std::size_t n = probs.dim(0);
  out.labels.resize(n);
  out.scores.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    out.labels[r] = probs.at(r, 1) > probs.at(r, 0) ? 1 : 0;
    out.scores[r] = probs.at(r, 1);
  }
  return out;
}

Tensor probabilities(const Classifier& model, const Tensor& x) {
  if (x.rank() != 2) fail(ErrorKind::dimension, "expected [n, d] inputs");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor probs({n, 2});
  for (std::size_t start = 0; start < n; start += predict_chunk) {
    const std::size_t rows = std::min(predict_chunk, n - start);
    Tensor chunk({rows, d}, std::vector<double>(x.data().begin() + static_cast<std::ptrdiff_t>(start * d),
                                                x.data().begin() + static_cast<std::ptrdiff_t>((start + rows) * d)));
    Graph graph;
    Var p = softmax(model.logits(graph, graph.constant(std::move(chunk))));
    std::copy(p.value().data().begin(), p.value().data().end(), &probs[start * 2]);
  }
  return probs;
}

Prediction predict(const Classifier& model, const Tensor& x) {
  return predict_from_probs(probabilities(model, x));
}

double accuracy(const Classifier& model, const Tensor& x, std::span<const int> labels) {
  const Prediction pred = predict(model, x);
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += pred.labels[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::vector<double> per_sample_loss(const Classifier& model, const Tensor& x,
                                    std::span<const int> labels) {
  const Tensor probs = probabilities(model, x);
  std::vector<double> out(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    out[r] = -std::log(std::max(probs.at(r, static_cast<std::size_t>(labels[r])), 1e-12));
  }
  return out;
}

}  // namespace advids
