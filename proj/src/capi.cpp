#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "advids/advids.h"
#include "advids/harness.hpp"

struct advids_model {
  advids::Network net;
};

namespace {

thread_local std::string last_error;

advids_status status_of(advids::ErrorKind kind) {
  using advids::ErrorKind;
  switch (kind) {
    case ErrorKind::dimension: return ADVIDS_ERR_DIMENSION;
    case ErrorKind::parameter: return ADVIDS_ERR_PARAMETER;
    case ErrorKind::contract: return ADVIDS_ERR_CONTRACT;
    case ErrorKind::label: return ADVIDS_ERR_LABEL;
    case ErrorKind::data: return ADVIDS_ERR_DATA;
    case ErrorKind::parse: return ADVIDS_ERR_PARSE;
    case ErrorKind::config: return ADVIDS_ERR_CONFIG;
    case ErrorKind::metric: return ADVIDS_ERR_METRIC;
    case ErrorKind::missing_splits: return ADVIDS_ERR_MISSING_SPLITS;
    case ErrorKind::checkpoint_mismatch: return ADVIDS_ERR_CHECKPOINT_MISMATCH;
    case ErrorKind::empty_reports: return ADVIDS_ERR_EMPTY_REPORTS;
    case ErrorKind::io: return ADVIDS_ERR_IO;
  }
  return ADVIDS_ERR_INTERNAL;
}

template <class F>
advids_status guarded(F&& f) {
  try {
    f();
    last_error.clear();
    return ADVIDS_OK;
  } catch (const advids::Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown failure";
  }
  return ADVIDS_ERR_INTERNAL;
}

advids_status invalid(const char* what) {
  last_error = what;
  return ADVIDS_ERR_INVALID_ARGUMENT;
}

advids::ExperimentConfig resolve(const advids_run_options* o) {
  advids::Overrides overrides;
  std::optional<std::filesystem::path> config_path;
  if (o != nullptr) {
    if (o->config_path) config_path = o->config_path;
    if (o->has_seed) overrides.seed = o->seed;
    if (o->out) overrides.out = o->out;
    if (o->parallel > 0) overrides.parallel = o->parallel;
    if (o->dataset) overrides.dataset = o->dataset;
    if (o->schema) overrides.schema = o->schema;
  }
  return advids::resolve_config(config_path, overrides);
}

advids::Tensor matrix(const double* x, std::size_t rows, std::size_t cols) {
  return advids::Tensor({rows, cols}, std::vector<double>(x, x + rows * cols));
}

}  // namespace

extern "C" {

const char* advids_version(void) { return "1.0.0"; }

const char* advids_last_error(void) { return last_error.c_str(); }

const char* advids_status_name(advids_status status) {
  switch (status) {
    case ADVIDS_OK: return "ok";
    case ADVIDS_ERR_DIMENSION: return "dimension";
    case ADVIDS_ERR_PARAMETER: return "parameter";
    case ADVIDS_ERR_CONTRACT: return "contract";
    case ADVIDS_ERR_LABEL: return "label";
    case ADVIDS_ERR_DATA: return "data";
    case ADVIDS_ERR_PARSE: return "parse";
    case ADVIDS_ERR_CONFIG: return "config";
    case ADVIDS_ERR_METRIC: return "metric";
    case ADVIDS_ERR_MISSING_SPLITS: return "missing_splits";
    case ADVIDS_ERR_CHECKPOINT_MISMATCH: return "checkpoint_mismatch";
    case ADVIDS_ERR_EMPTY_REPORTS: return "empty_reports";
    case ADVIDS_ERR_IO: return "io";
    case ADVIDS_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case ADVIDS_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

int advids_exit_code(advids_status status) {
  switch (status) {
    case ADVIDS_OK: return 0;
    case ADVIDS_ERR_PARSE: return 2;
    case ADVIDS_ERR_MISSING_SPLITS: return 3;
    case ADVIDS_ERR_CHECKPOINT_MISMATCH: return 4;
    case ADVIDS_ERR_EMPTY_REPORTS: return 5;
    default: return 1;
  }
}

advids_status advids_run(const char* command, const advids_run_options* options) {
  if (command == nullptr) return invalid("command is null");
  return guarded([&] { advids::run_command(command, resolve(options)); });
}

advids_status advids_resolve_config(const advids_run_options* options, char* buffer,
                                    size_t capacity, size_t* length) {
  return guarded([&] {
    const std::string text = advids::config_to_json(resolve(options));
    if (length) *length = text.size();
    if (buffer != nullptr && capacity > 0) {
      const std::size_t n = std::min(capacity - 1, text.size());
      std::memcpy(buffer, text.data(), n);
      buffer[n] = '\0';
    }
  });
}

advids_status advids_model_load(const char* path, advids_model** model) {
  if (path == nullptr || model == nullptr) return invalid("null argument");
  *model = nullptr;
  return guarded([&] { *model = new advids_model{advids::load_checkpoint(path)}; });
}

advids_status advids_model_save(const advids_model* model, const char* path) {
  if (path == nullptr || model == nullptr) return invalid("null argument");
  return guarded([&] { advids::save_checkpoint(model->net, path); });
}

void advids_model_free(advids_model* model) { delete model; }

advids_status advids_model_input_features(const advids_model* model, size_t* features) {
  if (model == nullptr || features == nullptr) return invalid("null argument");
  *features = model->net.input_features();
  last_error.clear();
  return ADVIDS_OK;
}

advids_status advids_model_predict(const advids_model* model, const double* x, size_t rows,
                                   size_t cols, int* labels, double* scores) {
  if (model == nullptr || (x == nullptr && rows > 0)) return invalid("null argument");
  return guarded([&] {
    const advids::Prediction p = advids::predict(model->net, matrix(x, rows, cols));
    if (labels) std::copy(p.labels.begin(), p.labels.end(), labels);
    if (scores) std::copy(p.scores.begin(), p.scores.end(), scores);
  });
}

advids_status advids_attack(const advids_model* model, const char* attack_json, const double* x,
                            const int* y, size_t rows, size_t cols, double* adversarial,
                            int* success) {
  if (model == nullptr || attack_json == nullptr || adversarial == nullptr ||
      ((x == nullptr || y == nullptr) && rows > 0)) {
    return invalid("null argument");
  }
  return guarded([&] {
    const advids::AttackConfig config = advids::attack_config_from_json(attack_json);
    const std::vector<int> labels(y, y + rows);
    const advids::AdversarialBatch b =
        advids::inner_maximize(model->net, matrix(x, rows, cols), labels, config);
    std::copy(b.adversarial.data().begin(), b.adversarial.data().end(), adversarial);
    if (success) {
      for (std::size_t i = 0; i < rows; ++i) success[i] = b.success[i] ? 1 : 0;
    }
  });
}

advids_status advids_roc_auc(const double* scores, const int* labels, size_t n, double* auc) {
  if (auc == nullptr || ((scores == nullptr || labels == nullptr) && n > 0)) {
    return invalid("null argument");
  }
  return guarded([&] {
    *auc = advids::roc_auc(std::span<const double>(scores, n), std::span<const int>(labels, n));
  });
}

}  // extern "C"
