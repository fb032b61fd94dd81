#include <fstream>
#include <sstream>

#include "advids/error.hpp"
#include "advids/nn.hpp"
#include "json.hpp"

namespace advids {
namespace {

using nlohmann::json;

json spec_to_json(const NetworkSpec& spec) {
  return json{
      {"family", to_string(spec.family)},
      {"input_features", spec.input_features},
      {"dense_widths", spec.dense_widths},
      {"conv_channels", spec.conv_channels},
      {"kernel_size", spec.kernel_size},
      {"padding", spec.padding == Padding::same ? "same" : "valid"},
      {"pool_window", spec.pool_window},
      {"pooled_convs", spec.pooled_convs},
      {"lstm_units", spec.lstm_units},
      {"dropout", spec.dropout},
      {"output_classes", spec.output_classes},
  };
}

NetworkSpec spec_from_json(const json& j) {
  NetworkSpec spec;
  spec.family = family_from_string(j.at("family").get<std::string>());
  spec.input_features = j.at("input_features").get<std::size_t>();
  spec.dense_widths = j.at("dense_widths").get<std::vector<std::size_t>>();
  spec.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
  spec.kernel_size = j.at("kernel_size").get<std::size_t>();
  const auto padding = j.at("padding").get<std::string>();
  if (padding != "same" && padding != "valid") {
    fail(ErrorKind::parse, "unknown padding '" + padding + "'");
  }
  spec.padding = padding == "same" ? Padding::same : Padding::valid;
  spec.pool_window = j.at("pool_window").get<std::size_t>();
  spec.pooled_convs = j.at("pooled_convs").get<std::size_t>();
  spec.lstm_units = j.at("lstm_units").get<std::vector<std::size_t>>();
  spec.dropout = j.at("dropout").get<double>();
  spec.output_classes = j.at("output_classes").get<std::size_t>();
  return spec;
}

}  // namespace

std::string checkpoint_to_string(const Network& net) {
  json params = json::object();
  for (const auto& p : net.parameters()) {
    params[p.name] = json{{"shape", p.value.shape()}, {"values", p.value.data()}};
  }
  const json doc{
      {"format_version", checkpoint_format_version},
      {"spec", spec_to_json(net.spec())},
      {"seed", net.seed()},
      {"parameters", std::move(params)},
  };
  return doc.dump(1);
}

Network checkpoint_from_string(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::parse, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    const int version = doc.at("format_version").get<int>();
    if (version != checkpoint_format_version) {
      fail(ErrorKind::checkpoint_mismatch,
           "unsupported checkpoint format_version " + std::to_string(version));
    }
    const NetworkSpec spec = spec_from_json(doc.at("spec"));
    const auto seed = doc.at("seed").get<std::uint64_t>();
    // The freshly built network fixes the expected names, order and shapes.
    Network net = Network::build(spec, seed);
    const json& stored = doc.at("parameters");
    if (stored.size() != net.parameters().size()) {
      fail(ErrorKind::checkpoint_mismatch, "checkpoint holds " + std::to_string(stored.size()) +
                                               " parameters, spec implies " +
                                               std::to_string(net.parameters().size()));
    }
    for (auto& p : net.parameters()) {
      if (!stored.contains(p.name)) {
        fail(ErrorKind::checkpoint_mismatch, "checkpoint lacks parameter " + p.name);
      }
      const json& entry = stored.at(p.name);
      auto shape = entry.at("shape").get<Shape>();
      if (shape != p.value.shape()) {
        fail(ErrorKind::checkpoint_mismatch, "parameter " + p.name + " has shape " +
                                                 shape_string(shape) + ", spec implies " +
                                                 shape_string(p.value.shape()));
      }
      p.value = Tensor(std::move(shape), entry.at("values").get<std::vector<double>>());
    }
    return net;
  } catch (const json::exception& e) {
    fail(ErrorKind::parse, std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write checkpoint " + path.string());
  out << checkpoint_to_string(net) << '\n';
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return checkpoint_from_string(buffer.str());
}

}  // namespace advids
