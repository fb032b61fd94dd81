#pragma once

// Tabular flow data: CSV ingestion, categorical encoding, min-max scaling,
// stratified splitting, feature selection (RFE, PCA) and a synthetic
// two-class generator.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advids/tensor.hpp"

namespace advids {

enum class ColumnKind { numeric, categorical };

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  std::vector<double> numeric;
  std::vector<std::string> categorical;

  std::size_t size() const {
    return kind == ColumnKind::numeric ? numeric.size() : categorical.size();
  }
};

// Mixed-type rows with a binary label (attack = 1, benign = 0).
struct RawDataset {
  std::vector<Column> columns;
  std::vector<int> labels;
  std::string label_name = "label";

  std::size_t rows() const { return labels.size(); }
  std::optional<std::size_t> find_column(std::string_view name) const;
  RawDataset subset(std::span<const std::size_t> rows) const;
};

enum class SchemaKind { unsw, nslkdd, generic };

SchemaKind schema_from_string(std::string_view name);
std::string to_string(SchemaKind schema);

// Column names of the headerless NSL-KDD layout (41 features, label,
// difficulty) and of the 49-column UNSW-NB15 layout.
std::span<const std::string_view> nslkdd_columns();
std::span<const std::string_view> unsw_columns();

RawDataset load_csv(const std::filesystem::path& path, SchemaKind schema);
RawDataset read_csv(std::istream& in, SchemaKind schema,
                    std::string_view source = "<stream>");
void write_raw_csv(std::ostream& out, const RawDataset& data);

// ---- encoding and scaling ------------------------------------------------

struct EncoderMap {
  // Per categorical column: distinct training values in lexicographic order.
  // A value's code is its index; unseen values map to size().
  std::map<std::string, std::vector<std::string>> categories;

  int code(const std::string& column, const std::string& value) const;
  bool operator==(const EncoderMap&) const = default;
};

EncoderMap fit_encoder(const RawDataset& train);
// Replaces every categorical column with numeric codes.
RawDataset apply_encoder(const EncoderMap& encoder, const RawDataset& data);

struct EncodeResult {
  RawDataset data;
  EncoderMap encoder;
};
EncodeResult encode(const RawDataset& raw);

// All-numeric dataset to an [n, d] matrix.
Tensor feature_matrix(const RawDataset& data);

struct ScalerParams {
  std::vector<double> min;
  std::vector<double> max;
  bool operator==(const ScalerParams&) const = default;
};

ScalerParams fit_scaler(const Tensor& x);
// (v - min) / (max - min), clipped to [0, 1]; constant features map to 0.
Tensor apply_scaler(const ScalerParams& params, const Tensor& x);

// ---- feature selection ---------------------------------------------------

struct LogisticOptions {
  double l2 = 1e-3;
  double learning_rate = 0.5;
  std::size_t iterations = 300;
  bool standardize = true;
};

struct LogisticModel {
  std::vector<double> weights;  // in standardized units when standardized
  double bias = 0.0;
  std::vector<double> center;
  std::vector<double> scale;

  double decision(std::span<const double> row) const;
  int predict(std::span<const double> row) const { return decision(row) > 0.0 ? 1 : 0; }
};

// Full-batch gradient descent on the L2-regularised logistic loss.
LogisticModel fit_logistic(const Tensor& x, std::span<const int> labels,
                           const LogisticOptions& options = {});
double logistic_accuracy(const LogisticModel& model, const Tensor& x,
                         std::span<const int> labels);

struct RfeResult {
  std::vector<std::size_t> selected;    // survivors, largest |weight| first
  std::vector<std::size_t> eliminated;  // in elimination order
};

// Recursive feature elimination down to k features. At most `max_rows`
// evenly spaced rows are used to fit the scorer.
RfeResult rfe(const Tensor& x, std::span<const int> labels, std::size_t k,
              std::size_t max_rows = 10000);

struct PcaModel {
  std::vector<double> mean;
  Tensor components;  // [k, d], orthonormal rows, variance-descending
  std::vector<double> explained_variance;  // fractions of total variance
  ScalerParams projection_scaler;          // fitted on train projections
};

PcaModel pca_fit(const Tensor& x, std::size_t k);
Tensor pca_project(const PcaModel& model, const Tensor& x);
Tensor pca_reconstruct(const PcaModel& model, const Tensor& projections);
// Projection re-scaled into [0, 1] with the train-fitted bounds.
Tensor pca_transform(const PcaModel& model, const Tensor& x);

enum class SelectionMethod { none, rfe, pca };

SelectionMethod selection_from_string(std::string_view name);
std::string to_string(SelectionMethod method);

struct Provenance {
  ScalerParams scaler;
  EncoderMap encoder;
  SelectionMethod method = SelectionMethod::none;
  std::vector<std::string> source_features;  // names before selection
  std::vector<std::size_t> kept;             // rfe: ranked survivors
  std::vector<std::size_t> eliminated;       // rfe
  std::optional<PcaModel> pca;
};

// Feature matrix in [0,1] plus binary labels. Immutable once constructed.
class ProcessedDataset {
 public:
  ProcessedDataset(Tensor features, std::vector<int> labels,
                   std::vector<std::string> feature_names,
                   std::shared_ptr<const Provenance> provenance = nullptr);

  const Tensor& features() const noexcept { return features_; }
  std::span<const int> labels() const noexcept { return labels_; }
  const std::vector<std::string>& feature_names() const noexcept { return names_; }
  const Provenance* provenance() const noexcept { return provenance_.get(); }
  std::shared_ptr<const Provenance> shared_provenance() const { return provenance_; }

  std::size_t rows() const noexcept { return labels_.size(); }
  std::size_t width() const noexcept { return names_.size(); }

  // Rows [x, y] for the given indices.
  Tensor gather(std::span<const std::size_t> rows) const;
  ProcessedDataset subset(std::span<const std::size_t> rows) const;

 private:
  Tensor features_;
  std::vector<int> labels_;
  std::vector<std::string> names_;
  std::shared_ptr<const Provenance> provenance_;
};

void write_processed_csv(const std::filesystem::path& path, const ProcessedDataset& data);
ProcessedDataset read_processed_csv(const std::filesystem::path& path);

// ---- splitting and the full pipeline ------------------------------------

// Seeded stratified shuffle followed by a contiguous partition. Every part
// but the last gets floor(fraction * n) rows; the last gets the remainder.
std::vector<RawDataset> split(const RawDataset& raw, std::span<const double> fractions,
                              std::uint64_t seed);

struct PreprocessOptions {
  SelectionMethod method = SelectionMethod::rfe;
  std::size_t k = 5;
  double test_fraction = 0.2;
  double val_fraction = 0.1;  // of the training part
  std::uint64_t seed = 0;
};

struct ProcessedSplits {
  ProcessedDataset train;
  ProcessedDataset val;
  ProcessedDataset test;
};

// Split, encode, scale and select. When `test` is given it is used as the
// test split and only the validation part is carved from `raw`.
ProcessedSplits preprocess(const RawDataset& raw, const PreprocessOptions& options,
                           const RawDataset* test = nullptr);

// ---- synthetic data ------------------------------------------------------

// Two Gaussian clusters per feature, clipped to [0, 1]. Each informative
// feature has class means 0.5 -/+ separation * spread / 2. "Coarse" features
// use `coarse_spread` and `coarse_separation` instead, which lets a benchmark
// mix a few wide-margin features with many tight, small-offset ones. A
// fraction of values per feature is replaced with uniform outliers.
struct SynthSpec {
  std::size_t n = 2000;
  std::size_t informative = 4;
  std::size_t coarse = 0;
  std::size_t noise = 1;
  double separation = 3.0;
  double spread = 0.1;
  double coarse_separation = 3.0;
  double coarse_spread = 0.1;
  double outlier_rate = 0.0;
  double attack_fraction = 0.5;
  bool categorical = true;
  std::uint64_t seed = 0;
};

RawDataset synth_generate(const SynthSpec& spec);

}  // namespace advids
