#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "advids/data.hpp"
#include "advids/error.hpp"
#include "advids/random.hpp"
#include "csv_util.hpp"

namespace advids {
namespace {

Tensor select_columns(const Tensor& x, std::span<const std::size_t> keep) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out({n, keep.size()});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < keep.size(); ++j) out.at(r, j) = x[r * d + keep[j]];
  }
  return out;
}

std::vector<std::string> column_names(const RawDataset& data) {
  std::vector<std::string> names;
  for (const Column& c : data.columns) names.push_back(c.name);
  return names;
}

}  // namespace

// ---- encoding ---------------------------------------------------------------

int EncoderMap::code(const std::string& column, const std::string& value) const {
  const auto it = categories.find(column);
  if (it == categories.end()) {
    fail(ErrorKind::data, "no encoding fitted for column '" + column + "'");
  }
  const auto& values = it->second;
  const auto pos = std::lower_bound(values.begin(), values.end(), value);
  if (pos != values.end() && *pos == value) return static_cast<int>(pos - values.begin());
  return static_cast<int>(values.size());
}

EncoderMap fit_encoder(const RawDataset& train) {
  EncoderMap map;
  for (const Column& col : train.columns) {
    if (col.kind != ColumnKind::categorical) continue;
    std::set<std::string> distinct(col.categorical.begin(), col.categorical.end());
    map.categories[col.name] = std::vector<std::string>(distinct.begin(), distinct.end());
  }
  return map;
}

RawDataset apply_encoder(const EncoderMap& encoder, const RawDataset& data) {
  RawDataset out;
  out.labels = data.labels;
  out.label_name = data.label_name;
  for (const Column& col : data.columns) {
    if (col.kind == ColumnKind::numeric) {
      out.columns.push_back(col);
      continue;
    }
    Column coded{col.name, ColumnKind::numeric, {}, {}};
    coded.numeric.reserve(col.categorical.size());
    for (const auto& v : col.categorical) {
      coded.numeric.push_back(static_cast<double>(encoder.code(col.name, v)));
    }
    out.columns.push_back(std::move(coded));
  }
  return out;
}

EncodeResult encode(const RawDataset& raw) {
  EncoderMap encoder = fit_encoder(raw);
  return EncodeResult{apply_encoder(encoder, raw), std::move(encoder)};
}

Tensor feature_matrix(const RawDataset& data) {
  const std::size_t n = data.rows(), d = data.columns.size();
  Tensor x({n, d});
  for (std::size_t j = 0; j < d; ++j) {
    const Column& col = data.columns[j];
    if (col.kind != ColumnKind::numeric) {
      fail(ErrorKind::data, "column '" + col.name + "' is still categorical");
    }
    if (col.numeric.size() != n) {
      fail(ErrorKind::data, "column '" + col.name + "' has " +
                                std::to_string(col.numeric.size()) + " rows, expected " +
                                std::to_string(n));
    }
    for (std::size_t r = 0; r < n; ++r) x.at(r, j) = col.numeric[r];
  }
  return x;
}

// ---- scaling ------------------------------------------------------------------

ScalerParams fit_scaler(const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) == 0) fail(ErrorKind::data, "scaler needs a non-empty matrix");
  const std::size_t n = x.dim(0), d = x.dim(1);
  ScalerParams p;
  p.min.assign(d, 0.0);
  p.max.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double lo = x[j], hi = x[j];
    for (std::size_t r = 1; r < n; ++r) {
      lo = std::min(lo, x[r * d + j]);
      hi = std::max(hi, x[r * d + j]);
    }
    p.min[j] = lo;
    p.max[j] = hi;
  }
  return p;
}

Tensor apply_scaler(const ScalerParams& params, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != params.min.size()) {
    fail(ErrorKind::dimension, "scaler fitted on " + std::to_string(params.min.size()) +
                                   " features, got " + shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out({n, d});
  for (std::size_t j = 0; j < d; ++j) {
    const double range = params.max[j] - params.min[j];
    for (std::size_t r = 0; r < n; ++r) {
      const double v = range > 0.0 ? (x[r * d + j] - params.min[j]) / range : 0.0;
      out[r * d + j] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

// ---- processed datasets ---------------------------------------------------------

ProcessedDataset::ProcessedDataset(Tensor features, std::vector<int> labels,
                                   std::vector<std::string> feature_names,
                                   std::shared_ptr<const Provenance> provenance)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      names_(std::move(feature_names)),
      provenance_(std::move(provenance)) {
  if (features_.rank() != 2 || features_.dim(0) != labels_.size() ||
      features_.dim(1) != names_.size()) {
    fail(ErrorKind::dimension, "processed dataset: features " + shape_string(features_.shape()) +
                                   " vs " + std::to_string(labels_.size()) + " labels and " +
                                   std::to_string(names_.size()) + " names");
  }
  for (double v : features_.values()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      fail(ErrorKind::data, "processed feature value outside [0, 1]");
    }
  }
  for (int y : labels_) {
    if (y != 0 && y != 1) fail(ErrorKind::label, "labels must be 0 or 1");
  }
}

Tensor ProcessedDataset::gather(std::span<const std::size_t> rows) const {
  const std::size_t d = width();
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(&features_[rows[i] * d], d, &out[i * d]);
  }
  return out;
}

ProcessedDataset ProcessedDataset::subset(std::span<const std::size_t> rows) const {
  std::vector<int> y;
  y.reserve(rows.size());
  for (std::size_t r : rows) y.push_back(labels_.at(r));
  return ProcessedDataset(gather(rows), std::move(y), names_, provenance_);
}

void write_processed_csv(const std::filesystem::path& path, const ProcessedDataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  for (const auto& name : data.feature_names()) out << name << ',';
  out << "label\n";
  const std::size_t d = data.width();
  for (std::size_t r = 0; r < data.rows(); ++r) {
    for (std::size_t j = 0; j < d; ++j) out << detail::format_double(data.features()[r * d + j]) << ',';
    out << data.labels()[r] << '\n';
  }
}

ProcessedDataset read_processed_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::parse, path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> names;
  for (auto cell : detail::split_csv_line(line)) names.emplace_back(cell);
  if (names.size() < 2 || names.back() != "label") {
    fail(ErrorKind::parse, path.string() + ": header must end with a 'label' column");
  }
  names.pop_back();
  const std::size_t d = names.size();
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != d + 1) {
      fail(ErrorKind::parse, path.string() + ": line " + std::to_string(line_no) + ": expected " +
                                 std::to_string(d + 1) + " fields, found " +
                                 std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j <= d; ++j) {
      const auto v = detail::parse_double(cells[j]);
      if (!v) {
        fail(ErrorKind::parse, path.string() + ": line " + std::to_string(line_no) +
                                   ": unparseable value '" + std::string(cells[j]) + "'");
      }
      if (j < d) {
        values.push_back(*v);
      } else {
        labels.push_back(static_cast<int>(*v));
      }
    }
  }
  const std::size_t n = labels.size();
  return ProcessedDataset(Tensor({n, d}, std::move(values)), std::move(labels), std::move(names));
}

// ---- splitting -------------------------------------------------------------------

std::vector<RawDataset> split(const RawDataset& raw, std::span<const double> fractions,
                              std::uint64_t seed) {
  if (fractions.empty()) fail(ErrorKind::parameter, "split needs at least one fraction");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) fail(ErrorKind::parameter, "split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) fail(ErrorKind::parameter, "split fractions must sum to 1");

  const std::size_t n = raw.rows();
  std::vector<std::size_t> counts;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i + 1 < fractions.size(); ++i) {
    counts.push_back(static_cast<std::size_t>(std::floor(fractions[i] * static_cast<double>(n))));
    assigned += counts.back();
  }
  counts.push_back(n - assigned);
  for (std::size_t c : counts) {
    if (c == 0) fail(ErrorKind::parameter, "split would produce an empty partition");
  }

  // Stratified order: each class is shuffled, then classes are interleaved by
  // their relative rank so every contiguous block keeps the label mix.
  Rng rng = derive_rng(seed, 11);
  struct Keyed {
    double key;
    double tiebreak;
    std::size_t row;
  };
  std::vector<Keyed> keyed;
  keyed.reserve(n);
  for (int cls : {0, 1}) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < n; ++r) {
      if (raw.labels[r] == cls) rows.push_back(r);
    }
    shuffle(std::span(rows), rng);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double key = (static_cast<double>(i) + 0.5) / static_cast<double>(rows.size());
      keyed.push_back({key, uniform01(rng), rows[i]});
    }
  }
  std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
    if (a.key != b.key) return a.key < b.key;
    if (a.tiebreak != b.tiebreak) return a.tiebreak < b.tiebreak;
    return a.row < b.row;
  });

  std::vector<RawDataset> parts;
  std::size_t offset = 0;
  for (std::size_t c : counts) {
    std::vector<std::size_t> rows;
    rows.reserve(c);
    for (std::size_t i = offset; i < offset + c; ++i) rows.push_back(keyed[i].row);
    shuffle(std::span(rows), rng);
    parts.push_back(raw.subset(rows));
    offset += c;
  }
  return parts;
}

// ---- full pipeline -------------------------------------------------------------

ProcessedSplits preprocess(const RawDataset& raw, const PreprocessOptions& options,
                           const RawDataset* test) {
  if (!(options.test_fraction > 0.0 && options.test_fraction < 1.0) && test == nullptr) {
    fail(ErrorKind::parameter, "test fraction must lie in (0, 1)");
  }
  if (!(options.val_fraction > 0.0 && options.val_fraction < 1.0)) {
    fail(ErrorKind::parameter, "validation fraction must lie in (0, 1)");
  }
  RawDataset trainval, test_raw;
  if (test != nullptr) {
    trainval = raw;
    test_raw = *test;
  } else {
    const double outer[] = {1.0 - options.test_fraction, options.test_fraction};
    auto parts = split(raw, outer, options.seed);
    trainval = std::move(parts[0]);
    test_raw = std::move(parts[1]);
  }
  const double inner[] = {1.0 - options.val_fraction, options.val_fraction};
  auto parts = split(trainval, inner, options.seed + 1);

  auto provenance = std::make_shared<Provenance>();
  provenance->encoder = fit_encoder(parts[0]);
  const Tensor train_raw_x = feature_matrix(apply_encoder(provenance->encoder, parts[0]));
  const Tensor val_raw_x = feature_matrix(apply_encoder(provenance->encoder, parts[1]));
  const Tensor test_raw_x = feature_matrix(apply_encoder(provenance->encoder, test_raw));
  if (test_raw_x.dim(1) != train_raw_x.dim(1)) {
    fail(ErrorKind::data, "test data has a different column layout than training data");
  }
  provenance->scaler = fit_scaler(train_raw_x);
  Tensor train_x = apply_scaler(provenance->scaler, train_raw_x);
  Tensor val_x = apply_scaler(provenance->scaler, val_raw_x);
  Tensor test_x = apply_scaler(provenance->scaler, test_raw_x);
  provenance->source_features = column_names(parts[0]);
  provenance->method = options.method;

  const std::size_t d = train_x.dim(1);
  std::vector<std::string> names;
  switch (options.method) {
    case SelectionMethod::none:
      names = provenance->source_features;
      provenance->kept.resize(d);
      std::iota(provenance->kept.begin(), provenance->kept.end(), std::size_t{0});
      break;
    case SelectionMethod::rfe: {
      RfeResult result = rfe(train_x, parts[0].labels, options.k);
      provenance->kept = result.selected;
      provenance->eliminated = result.eliminated;
      for (std::size_t j : result.selected) names.push_back(provenance->source_features[j]);
      train_x = select_columns(train_x, result.selected);
      val_x = select_columns(val_x, result.selected);
      test_x = select_columns(test_x, result.selected);
      break;
    }
    case SelectionMethod::pca: {
      PcaModel model = pca_fit(train_x, options.k);
      train_x = pca_transform(model, train_x);
      val_x = pca_transform(model, val_x);
      test_x = pca_transform(model, test_x);
      for (std::size_t j = 0; j < options.k; ++j) names.push_back("pc" + std::to_string(j));
      provenance->pca = std::move(model);
      break;
    }
  }
  std::shared_ptr<const Provenance> shared = std::move(provenance);
  return ProcessedSplits{
      ProcessedDataset(std::move(train_x), parts[0].labels, names, shared),
      ProcessedDataset(std::move(val_x), parts[1].labels, names, shared),
      ProcessedDataset(std::move(test_x), test_raw.labels, names, shared),
  };
}

}  // namespace advids
