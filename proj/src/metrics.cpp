#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <numeric>

#include "advids/error.hpp"
#include "advids/metrics.hpp"
#include "csv_util.hpp"
#include "json.hpp"

namespace advids {
namespace {

using nlohmann::json;

double ratio(std::size_t num, std::size_t den, bool& undefined) {
  undefined = den == 0;
  return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_optional(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

ConfusionCounts confusion(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    fail(ErrorKind::parameter, "confusion: " + std::to_string(predicted.size()) +
                                   " predictions for " + std::to_string(truth.size()) + " labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = predicted[i], t = truth[i];
    if ((p != 0 && p != 1) || (t != 0 && t != 1)) {
      fail(ErrorKind::label, "confusion: labels must be 0 or 1");
    }
    if (p == 1 && t == 1) ++c.tp;
    if (p == 1 && t == 0) ++c.fp;
    if (p == 0 && t == 0) ++c.tn;
    if (p == 0 && t == 1) ++c.fn;
  }
  return c;
}

Rates rates(const ConfusionCounts& c) {
  if (c.total() == 0) fail(ErrorKind::parameter, "rates: no samples");
  Rates r;
  bool unused = false;
  r.accuracy = ratio(c.tp + c.tn, c.total(), unused);
  r.precision = ratio(c.tp, c.tp + c.fp, r.precision_undefined);
  r.recall = ratio(c.tp, c.tp + c.fn, r.recall_undefined);
  r.specificity = ratio(c.tn, c.tn + c.fp, r.specificity_undefined);
  return r;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    fail(ErrorKind::parameter, "roc_auc: score and label counts differ");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1..j share their average.
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank_sum += rank;
        ++positives;
      } else if (labels[order[k]] != 0) {
        fail(ErrorKind::label, "roc_auc: labels must be 0 or 1");
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) {
    fail(ErrorKind::metric, "roc_auc needs both classes");
  }
  const double p = static_cast<double>(positives), q = static_cast<double>(negatives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

EvalReport make_report(std::span<const int> predicted, std::span<const double> scores,
                       std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    fail(ErrorKind::parameter, "report: score and label counts differ");
  }
  EvalReport report;
  report.counts = confusion(predicted, labels);
  report.rates = rates(report.counts);
  const std::size_t positives = report.counts.tp + report.counts.fn;
  if (positives > 0 && positives < labels.size()) report.auc = roc_auc(scores, labels);
  if (positives > 0) {
    report.attack_subset_accuracy =
        static_cast<double>(report.counts.tp) / static_cast<double>(positives);
  }
  report.timestamp = utc_timestamp();
  return report;
}

EvalReport evaluate(const Classifier& model, const Tensor& x, std::span<const int> labels) {
  const Prediction pred = predict(model, x);
  return make_report(pred.labels, pred.scores, labels);
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string report_to_json(const EvalReport& r) {
  json config = json::parse(r.config_json, nullptr, false);
  if (config.is_discarded()) config = json::object();
  const json j{
      {"model_id", r.model_id},
      {"dataset_id", r.dataset_id},
      {"attack", r.attack},
      {"phase", r.phase},
      {"scope", r.scope},
      {"confusion", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn}, {"fn", r.counts.fn}}},
      {"accuracy", r.rates.accuracy},
      {"precision", r.rates.precision},
      {"recall", r.rates.recall},
      {"specificity", r.rates.specificity},
      {"undefined",
       {{"precision", r.rates.precision_undefined},
        {"recall", r.rates.recall_undefined},
        {"specificity", r.rates.specificity_undefined}}},
      {"auc", optional_number(r.auc)},
      {"attack_subset_accuracy", optional_number(r.attack_subset_accuracy)},
      {"mean_linf", r.mean_linf},
      {"mean_l2", r.mean_l2},
      {"success_rate", r.success_rate},
      {"timestamp", r.timestamp},
      {"config", config},
  };
  return j.dump(2);
}

EvalReport report_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::parse, std::string("report is not valid JSON: ") + e.what());
  }
  try {
    EvalReport r;
    r.model_id = j.at("model_id").get<std::string>();
    r.dataset_id = j.at("dataset_id").get<std::string>();
    r.attack = j.at("attack").get<std::string>();
    r.phase = j.at("phase").get<std::string>();
    r.scope = j.value("scope", std::string("all"));
    const json& c = j.at("confusion");
    r.counts = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(),
                c.at("tn").get<std::size_t>(), c.at("fn").get<std::size_t>()};
    r.rates.accuracy = j.at("accuracy").get<double>();
    r.rates.precision = j.at("precision").get<double>();
    r.rates.recall = j.at("recall").get<double>();
    r.rates.specificity = j.at("specificity").get<double>();
    if (j.contains("undefined")) {
      const json& u = j.at("undefined");
      r.rates.precision_undefined = u.value("precision", false);
      r.rates.recall_undefined = u.value("recall", false);
      r.rates.specificity_undefined = u.value("specificity", false);
    }
    r.auc = read_optional(j, "auc");
    r.attack_subset_accuracy = read_optional(j, "attack_subset_accuracy");
    r.mean_linf = j.value("mean_linf", 0.0);
    r.mean_l2 = j.value("mean_l2", 0.0);
    r.success_rate = j.value("success_rate", 0.0);
    r.timestamp = j.value("timestamp", std::string());
    r.config_json = j.contains("config") ? j.at("config").dump() : "{}";
    return r;
  } catch (const json::exception& e) {
    fail(ErrorKind::parse, std::string("malformed report: ") + e.what());
  }
}

std::string report_csv_header() {
  return "dataset,model,attack,phase,scope,tp,fp,tn,fn,accuracy,precision,recall,specificity,auc,"
         "attack_subset_accuracy,mean_linf,mean_l2,success_rate,timestamp";
}

std::string report_csv_row(const EvalReport& r) {
  auto num = [](double v) { return detail::format_double(v); };
  auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  std::string row;
  bool first = true;
  for (const std::string& cell :
       {csv_cell(r.dataset_id), csv_cell(r.model_id), csv_cell(r.attack), csv_cell(r.phase),
        csv_cell(r.scope), std::to_string(r.counts.tp), std::to_string(r.counts.fp),
        std::to_string(r.counts.tn), std::to_string(r.counts.fn), num(r.rates.accuracy),
        num(r.rates.precision), num(r.rates.recall), num(r.rates.specificity), opt(r.auc),
        opt(r.attack_subset_accuracy), num(r.mean_linf), num(r.mean_l2), num(r.success_rate),
        csv_cell(r.timestamp)}) {
    if (!first) row += ',';
    row += cell;
    first = false;
  }
  return row;
}

}  // namespace advids
