#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>

#include "advids/attacks.hpp"
#include "advids/error.hpp"
#include "advids/random.hpp"
#include "csv_util.hpp"
#include "json.hpp"

namespace advids {
namespace {

using nlohmann::json;

constexpr std::size_t attack_chunk = 256;

struct Evaluation {
  Tensor logits;
  Tensor grad;  // with respect to the input rows
};

void check_inputs(const Classifier& model, const Tensor& x, std::span<const int> y) {
  if (x.rank() != 2 || x.dim(1) != model.input_features()) {
    fail(ErrorKind::dimension, "attack expects [n, " + std::to_string(model.input_features()) +
                                   "] inputs, got " + shape_string(x.shape()));
  }
  if (y.size() != x.dim(0)) {
    fail(ErrorKind::dimension, std::to_string(y.size()) + " labels for " +
                                   std::to_string(x.dim(0)) + " rows");
  }
  for (int label : y) {
    if (label != 0 && label != 1) fail(ErrorKind::label, "attack labels must be 0 or 1");
  }
}

// Differentiates sum_i <coeffs(logits)_i, logits_i> with respect to x. The
// coefficients are computed from the forward values and held constant.
Evaluation differentiate(const Classifier& model, const Tensor& x,
                         const std::function<Tensor(const Tensor&)>& coeffs) {
  Graph graph;
  Var input = graph.leaf(x);
  Var z = model.logits(graph, input);
  const Tensor weights = coeffs(z.value());
  graph.backward(weighted_sum(z, weights));
  return Evaluation{z.value(), graph.grad(input)};
}

Tensor softmax_rows(const Tensor& z) {
  Tensor p(z.shape());
  for (std::size_t r = 0; r < z.dim(0); ++r) {
    const double m = std::max(z.at(r, 0), z.at(r, 1));
    const double e0 = std::exp(z.at(r, 0) - m), e1 = std::exp(z.at(r, 1) - m);
    p.at(r, 0) = e0 / (e0 + e1);
    p.at(r, 1) = e1 / (e0 + e1);
  }
  return p;
}

// Gradient of the summed cross-entropy. d loss / d z = softmax(z) - onehot(y)
// is formed directly so saturated probabilities keep a usable direction.
Evaluation loss_gradient(const Classifier& model, const Tensor& x, std::span<const int> y) {
  return differentiate(model, x, [&](const Tensor& z) {
    Tensor g = softmax_rows(z);
    for (std::size_t r = 0; r < y.size(); ++r) g.at(r, static_cast<std::size_t>(y[r])) -= 1.0;
    return g;
  });
}

int decide(const Tensor& z, std::size_t row) { return z.at(row, 1) > z.at(row, 0) ? 1 : 0; }

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

double row_norm(const double* v, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) s += v[j] * v[j];
  return std::sqrt(s);
}

// Projects `adv` into the norm ball of radius eps around `x`, then into [0,1].
void project(Tensor& adv, const Tensor& x, double eps, Norm norm) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  for (std::size_t r = 0; r < n; ++r) {
    double* a = &adv[r * d];
    const double* o = &x[r * d];
    if (norm == Norm::linf) {
      for (std::size_t j = 0; j < d; ++j) a[j] = clip01(std::clamp(a[j], o[j] - eps, o[j] + eps));
    } else {
      std::vector<double> delta(d);
      for (std::size_t j = 0; j < d; ++j) delta[j] = a[j] - o[j];
      const double len = row_norm(delta.data(), d);
      const double factor = len > eps ? eps / len : 1.0;
      for (std::size_t j = 0; j < d; ++j) a[j] = clip01(o[j] + delta[j] * factor);
    }
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Iterated steepest ascent on the loss, starting from `start`.
Tensor ascend(const Classifier& model, const Tensor& x, std::span<const int> y, Tensor start,
              double alpha, std::size_t iterations, double eps, Norm norm) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor adv = std::move(start);
  for (std::size_t it = 0; it < iterations; ++it) {
    const Evaluation ev = loss_gradient(model, adv, y);
    for (std::size_t r = 0; r < n; ++r) {
      const double* g = &ev.grad[r * d];
      double* a = &adv[r * d];
      if (norm == Norm::linf) {
        for (std::size_t j = 0; j < d; ++j) a[j] = a[j] + alpha * sign(g[j]);
      } else {
        const double len = row_norm(g, d);
        if (len > 0.0) {
          for (std::size_t j = 0; j < d; ++j) a[j] = a[j] + alpha * (g[j] / len);
        }
      }
    }
    project(adv, x, eps, norm);
  }
  return adv;
}

Tensor random_start(const Tensor& x, double eps, Norm norm, Rng& rng) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor start = x;
  for (std::size_t r = 0; r < n; ++r) {
    double* a = &start[r * d];
    if (norm == Norm::linf) {
      for (std::size_t j = 0; j < d; ++j) a[j] = clip01(a[j] + uniform(rng, -eps, eps));
    } else {
      std::vector<double> dir(d);
      for (double& v : dir) v = standard_normal(rng);
      const double len = row_norm(dir.data(), d);
      const double radius = eps * std::pow(uniform01(rng), 1.0 / static_cast<double>(d));
      for (std::size_t j = 0; j < d; ++j) {
        a[j] = clip01(a[j] + (len > 0.0 ? dir[j] / len * radius : 0.0));
      }
    }
  }
  return start;
}

Tensor logits_of(const Classifier& model, const Tensor& x) {
  Graph graph;
  return model.logits(graph, graph.constant(x)).value();
}

struct ChunkResult {
  Tensor adversarial;
  std::vector<bool> singular;
};

using ChunkAttack = std::function<ChunkResult(const Tensor& x, std::span<const int> y)>;

Tensor rows_of(const Tensor& x, std::size_t start, std::size_t count) {
  const std::size_t d = x.dim(1);
  Tensor out({count, d});
  std::copy_n(&x[start * d], count * d, &out[0]);
  return out;
}

AdversarialBatch run_chunked(const Classifier& model, const Tensor& x, std::span<const int> y,
                             const ChunkAttack& attack) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  AdversarialBatch batch;
  batch.original = x;
  batch.adversarial = Tensor({n, d});
  batch.labels.assign(y.begin(), y.end());
  batch.singular.assign(n, false);
  for (std::size_t start = 0; start < n; start += attack_chunk) {
    const std::size_t count = std::min(attack_chunk, n - start);
    ChunkResult part = attack(rows_of(x, start, count), y.subspan(start, count));
    std::copy_n(&part.adversarial[0], count * d, &batch.adversarial[start * d]);
    for (std::size_t i = 0; i < count; ++i) batch.singular[start + i] = part.singular[i];
  }
  batch.linf.assign(n, 0.0);
  batch.l2.assign(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double inf = 0.0, sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double delta = batch.adversarial[r * d + j] - x[r * d + j];
      inf = std::max(inf, std::abs(delta));
      sq += delta * delta;
    }
    batch.linf[r] = inf;
    batch.l2[r] = std::sqrt(sq);
  }
  const Prediction pred = predict(model, batch.adversarial);
  batch.success.assign(n, false);
  for (std::size_t r = 0; r < n; ++r) batch.success[r] = pred.labels[r] != y[r];
  return batch;
}

AttackConfig checked(const AttackConfig& config, AttackMethod method) {
  AttackConfig c = config;
  c.method = method;
  c.validate();
  return c;
}

}  // namespace

AttackMethod attack_from_string(std::string_view name) {
  if (name == "none") return AttackMethod::none;
  if (name == "fgsm") return AttackMethod::fgsm;
  if (name == "bim") return AttackMethod::bim;
  if (name == "pgd") return AttackMethod::pgd;
  if (name == "cw") return AttackMethod::cw;
  if (name == "deepfool") return AttackMethod::deepfool;
  fail(ErrorKind::parameter, "unknown attack method '" + std::string(name) + "'");
}

std::string to_string(AttackMethod method) {
  switch (method) {
    case AttackMethod::none: return "none";
    case AttackMethod::fgsm: return "fgsm";
    case AttackMethod::bim: return "bim";
    case AttackMethod::pgd: return "pgd";
    case AttackMethod::cw: return "cw";
    case AttackMethod::deepfool: return "deepfool";
  }
  return "?";
}

Norm norm_from_string(std::string_view name) {
  if (name == "linf") return Norm::linf;
  if (name == "l2") return Norm::l2;
  fail(ErrorKind::parameter, "unknown norm '" + std::string(name) + "'");
}

std::string to_string(Norm norm) { return norm == Norm::linf ? "linf" : "l2"; }

double AttackConfig::resolved_step() const { return step_size.value_or(epsilon / 10.0); }

std::size_t AttackConfig::resolved_iterations() const {
  if (iterations) return *iterations;
  switch (method) {
    case AttackMethod::none:
    case AttackMethod::fgsm: return 1;
    case AttackMethod::bim:
    case AttackMethod::pgd: return 10;
    case AttackMethod::cw: return 100;
    case AttackMethod::deepfool: return 50;
  }
  return 1;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    fail(ErrorKind::parameter, "attack epsilon must be a finite value >= 0");
  }
  if (resolved_iterations() < 1) fail(ErrorKind::parameter, "attack iterations must be >= 1");
  if (method == AttackMethod::bim || method == AttackMethod::pgd) {
    const double alpha = resolved_step();
    // A zero budget forces a zero default step, which is a valid no-op.
    if (epsilon > 0.0 ? !(alpha > 0.0) : !(alpha >= 0.0)) {
      fail(ErrorKind::parameter, "attack step size must be > 0");
    }
    if (restarts < 1) fail(ErrorKind::parameter, "pgd restarts must be >= 1");
  }
  if (method == AttackMethod::cw) {
    if (!(cw_c > 0.0)) fail(ErrorKind::parameter, "cw constant c must be > 0");
    if (!(cw_lr > 0.0)) fail(ErrorKind::parameter, "cw learning rate must be > 0");
    if (!(cw_kappa >= 0.0)) fail(ErrorKind::parameter, "cw kappa must be >= 0");
  }
  if (method == AttackMethod::deepfool && !(overshoot >= 0.0)) {
    fail(ErrorKind::parameter, "deepfool overshoot must be >= 0");
  }
}

std::string attack_config_to_json(const AttackConfig& c) {
  json j{
      {"method", to_string(c.method)},
      {"epsilon", c.epsilon},
      {"step_size", c.step_size ? json(*c.step_size) : json(nullptr)},
      {"iterations", c.iterations ? json(*c.iterations) : json(nullptr)},
      {"random_start", c.random_start},
      {"restarts", c.restarts},
      {"cw_c", c.cw_c},
      {"cw_kappa", c.cw_kappa},
      {"cw_lr", c.cw_lr},
      {"overshoot", c.overshoot},
      {"norm", to_string(c.norm)},
      {"seed", c.seed},
  };
  return j.dump();
}

AttackConfig attack_config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::parse, std::string("attack config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::config, "attack config must be a JSON object");
  AttackConfig c;
  try {
    if (j.contains("method")) c.method = attack_from_string(j["method"].get<std::string>());
    if (j.contains("epsilon")) c.epsilon = j["epsilon"].get<double>();
    if (j.contains("step_size") && !j["step_size"].is_null()) c.step_size = j["step_size"].get<double>();
    if (j.contains("iterations") && !j["iterations"].is_null()) {
      c.iterations = j["iterations"].get<std::size_t>();
    }
    if (j.contains("random_start")) c.random_start = j["random_start"].get<bool>();
    if (j.contains("restarts")) c.restarts = j["restarts"].get<std::size_t>();
    if (j.contains("cw_c")) c.cw_c = j["cw_c"].get<double>();
    if (j.contains("cw_kappa")) c.cw_kappa = j["cw_kappa"].get<double>();
    if (j.contains("cw_lr")) c.cw_lr = j["cw_lr"].get<double>();
    if (j.contains("overshoot")) c.overshoot = j["overshoot"].get<double>();
    if (j.contains("norm")) c.norm = norm_from_string(j["norm"].get<std::string>());
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("attack config: ") + e.what());
  }
  return c;
}

// ---- batches -----------------------------------------------------------------

double AdversarialBatch::success_rate() const {
  if (success.empty()) return 0.0;
  return static_cast<double>(std::count(success.begin(), success.end(), true)) /
         static_cast<double>(success.size());
}

double AdversarialBatch::mean_linf() const {
  if (linf.empty()) return 0.0;
  double s = 0.0;
  for (double v : linf) s += v;
  return s / static_cast<double>(linf.size());
}

double AdversarialBatch::mean_l2() const {
  if (l2.empty()) return 0.0;
  double s = 0.0;
  for (double v : l2) s += v;
  return s / static_cast<double>(l2.size());
}

void write_adversarial_csv(const std::filesystem::path& path, const AdversarialBatch& batch,
                           std::span<const std::string> feature_names) {
  const std::size_t d = batch.original.rank() == 2 ? batch.original.dim(1) : 0;
  if (!feature_names.empty() && feature_names.size() != d) {
    fail(ErrorKind::dimension, "feature name count does not match the batch width");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  auto name = [&](std::size_t j) {
    return feature_names.empty() ? "f" + std::to_string(j) : feature_names[j];
  };
  for (std::size_t j = 0; j < d; ++j) out << "orig_" << name(j) << ',';
  for (std::size_t j = 0; j < d; ++j) out << "adv_" << name(j) << ',';
  out << "label,success,linf,l2\n";
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    for (std::size_t j = 0; j < d; ++j) out << detail::format_double(batch.original[r * d + j]) << ',';
    for (std::size_t j = 0; j < d; ++j) {
      out << detail::format_double(batch.adversarial[r * d + j]) << ',';
    }
    out << batch.labels[r] << ',' << (batch.success[r] ? 1 : 0) << ','
        << detail::format_double(batch.linf[r]) << ',' << detail::format_double(batch.l2[r]) << '\n';
  }
}

std::vector<double> logit_losses(const Tensor& logits, std::span<const int> labels) {
  std::vector<double> out(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const double z0 = logits.at(r, 0), z1 = logits.at(r, 1);
    const double m = std::max(z0, z1);
    const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
    out[r] = lse - (labels[r] == 1 ? z1 : z0);
  }
  return out;
}

// ---- sign-gradient family ------------------------------------------------------

AdversarialBatch fgsm(const Classifier& model, const Tensor& x, std::span<const int> y,
                      const AttackConfig& config) {
  const AttackConfig c = checked(config, AttackMethod::fgsm);
  check_inputs(model, x, y);
  return run_chunked(model, x, y, [&](const Tensor& xs, std::span<const int> ys) {
    return ChunkResult{ascend(model, xs, ys, xs, c.epsilon, 1, c.epsilon, c.norm),
                       std::vector<bool>(ys.size(), false)};
  });
}

AdversarialBatch bim(const Classifier& model, const Tensor& x, std::span<const int> y,
                     const AttackConfig& config) {
  const AttackConfig c = checked(config, AttackMethod::bim);
  check_inputs(model, x, y);
  return run_chunked(model, x, y, [&](const Tensor& xs, std::span<const int> ys) {
    return ChunkResult{ascend(model, xs, ys, xs, c.resolved_step(), c.resolved_iterations(),
                              c.epsilon, c.norm),
                       std::vector<bool>(ys.size(), false)};
  });
}

AdversarialBatch pgd(const Classifier& model, const Tensor& x, std::span<const int> y,
                     const AttackConfig& config) {
  const AttackConfig c = checked(config, AttackMethod::pgd);
  check_inputs(model, x, y);
  Rng rng = derive_rng(c.seed, 21);
  return run_chunked(model, x, y, [&](const Tensor& xs, std::span<const int> ys) {
    const std::size_t n = xs.dim(0), d = xs.dim(1);
    Tensor best;
    std::vector<double> best_loss;
    for (std::size_t restart = 0; restart < c.restarts; ++restart) {
      Tensor start = c.random_start ? random_start(xs, c.epsilon, c.norm, rng) : xs;
      Tensor adv = ascend(model, xs, ys, std::move(start), c.resolved_step(),
                          c.resolved_iterations(), c.epsilon, c.norm);
      if (c.restarts == 1) return ChunkResult{std::move(adv), std::vector<bool>(n, false)};
      const std::vector<double> loss = logit_losses(logits_of(model, adv), ys);
      if (restart == 0) {
        best = std::move(adv);
        best_loss = loss;
        continue;
      }
      for (std::size_t r = 0; r < n; ++r) {
        if (loss[r] > best_loss[r]) {
          best_loss[r] = loss[r];
          std::copy_n(&adv[r * d], d, &best[r * d]);
        }
      }
    }
    return ChunkResult{std::move(best), std::vector<bool>(n, false)};
  });
}

// ---- Carlini-Wagner L2 -----------------------------------------------------------

AdversarialBatch cw_l2(const Classifier& model, const Tensor& x, std::span<const int> y,
                       const AttackConfig& config) {
  const AttackConfig c = checked(config, AttackMethod::cw);
  check_inputs(model, x, y);
  return run_chunked(model, x, y, [&](const Tensor& xs, std::span<const int> ys) {
    const std::size_t n = xs.dim(0), d = xs.dim(1);
    // x' = (tanh(w) + 1) / 2 keeps every iterate inside the box.
    constexpr double edge = 1.0 - 1e-9;
    std::vector<Parameter> w{{"w", Tensor({n, d})}};
    for (std::size_t i = 0; i < n * d; ++i) {
      w[0].value[i] = std::atanh(std::clamp(2.0 * xs[i] - 1.0, -edge, edge));
    }
    AdamState adam;
    Tensor best = xs;
    std::vector<double> best_dist(n, INFINITY);
    Tensor current;
    const std::size_t steps = c.resolved_iterations();
    for (std::size_t it = 0; it <= steps; ++it) {
      Graph graph;
      Var wv = graph.leaf(w[0].value);
      Var xp = add(scale(tanh(wv), 0.5), graph.constant(Tensor::filled({n, d}, 0.5)));
      Var z = model.logits(graph, xp);
      current = xp.value();
      const Tensor& zv = z.value();
      Tensor margin_weights({n, 2});
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t yi = static_cast<std::size_t>(ys[r]), other = 1 - yi;
        const double margin = zv.at(r, yi) - zv.at(r, other);
        double dist = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double delta = current[r * d + j] - xs[r * d + j];
          dist += delta * delta;
        }
        const bool fooled = decide(zv, r) != ys[r] && -margin >= c.cw_kappa;
        if (fooled && dist < best_dist[r]) {
          best_dist[r] = dist;
          std::copy_n(&current[r * d], d, &best[r * d]);
        }
        if (margin > -c.cw_kappa) {
          margin_weights.at(r, yi) = c.cw_c;
          margin_weights.at(r, other) = -c.cw_c;
        }
      }
      if (it == steps) break;
      Var diff = sub(xp, graph.constant(xs));
      graph.backward(add(sum(mul(diff, diff)), weighted_sum(z, margin_weights)));
      const std::vector<Tensor> grads{graph.grad(wv)};
      adam_step(w, grads, adam, c.cw_lr);
    }
    Tensor out({n, d});
    for (std::size_t r = 0; r < n; ++r) {
      const Tensor& src = std::isfinite(best_dist[r]) ? best : current;
      std::copy_n(&src[r * d], d, &out[r * d]);
    }
    project(out, xs, c.epsilon, c.norm);
    return ChunkResult{std::move(out), std::vector<bool>(n, false)};
  });
}

// ---- DeepFool ----------------------------------------------------------------------

AdversarialBatch deepfool(const Classifier& model, const Tensor& x, std::span<const int> y,
                          const AttackConfig& config) {
  const AttackConfig c = checked(config, AttackMethod::deepfool);
  check_inputs(model, x, y);
  return run_chunked(model, x, y, [&](const Tensor& xs, std::span<const int>) {
    const std::size_t n = xs.dim(0), d = xs.dim(1);
    const auto margin_coeffs = [n](const Tensor&) {
      Tensor m({n, 2});
      for (std::size_t r = 0; r < n; ++r) {
        m.at(r, 0) = -1.0;
        m.at(r, 1) = 1.0;
      }
      return m;
    };
    Tensor total({n, d});
    Tensor point = xs;
    std::vector<int> initial(n, 0);
    std::vector<bool> active(n, true), singular(n, false);
    const std::size_t steps = c.resolved_iterations();
    for (std::size_t it = 0; it < steps; ++it) {
      const Evaluation ev = differentiate(model, point, margin_coeffs);
      bool any = false;
      for (std::size_t r = 0; r < n; ++r) {
        if (!active[r]) continue;
        const double g = ev.logits.at(r, 1) - ev.logits.at(r, 0);
        if (it == 0) initial[r] = decide(ev.logits, r);
        if (decide(ev.logits, r) != initial[r] || g == 0.0) {
          active[r] = false;
          continue;
        }
        const double* grad = &ev.grad[r * d];
        const double norm_sq = row_norm(grad, d) * row_norm(grad, d);
        if (norm_sq == 0.0) {
          singular[r] = true;
          active[r] = false;
          continue;
        }
        for (std::size_t j = 0; j < d; ++j) total[r * d + j] -= g / norm_sq * grad[j];
        any = true;
      }
      if (!any) break;
      for (std::size_t i = 0; i < n * d; ++i) {
        point[i] = clip01(xs[i] + (1.0 + c.overshoot) * total[i]);
      }
    }
    project(point, xs, c.epsilon, c.norm);
    return ChunkResult{std::move(point), std::move(singular)};
  });
}

AdversarialBatch inner_maximize(const Classifier& model, const Tensor& x, std::span<const int> y,
                                const AttackConfig& config) {
  switch (config.method) {
    case AttackMethod::none: {
      config.validate();
      check_inputs(model, x, y);
      return run_chunked(model, x, y, [](const Tensor& xs, std::span<const int> ys) {
        return ChunkResult{xs, std::vector<bool>(ys.size(), false)};
      });
    }
    case AttackMethod::fgsm: return fgsm(model, x, y, config);
    case AttackMethod::bim: return bim(model, x, y, config);
    case AttackMethod::pgd: return pgd(model, x, y, config);
    case AttackMethod::cw: return cw_l2(model, x, y, config);
    case AttackMethod::deepfool: return deepfool(model, x, y, config);
  }
  fail(ErrorKind::parameter, "unknown attack method");
}

}  // namespace advids
