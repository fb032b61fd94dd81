#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "advids/error.hpp"
#include "advids/tensor.hpp"

namespace advids {
namespace {

const Tensor& val(Graph& g, std::size_t id) { return g.value(Var{&g, id}); }

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrix = Eigen::Map<const RowMajor>;
using MutableMatrix = Eigen::Map<RowMajor>;

ConstMatrix const_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatrix(t.data().data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

MutableMatrix matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MutableMatrix(t.values().data(), static_cast<Eigen::Index>(rows),
                       static_cast<Eigen::Index>(cols));
}

void require_same_graph(Var a, Var b) {
  if (a.graph != b.graph) {
    fail(ErrorKind::contract, "operands belong to different graphs");
  }
}

// Equal shapes, or b is a vector broadcast along the last axis of a.
bool is_bias_broadcast(const Shape& a, const Shape& b) {
  return a != b && b.size() == 1 && !a.empty() && a.back() == b[0];
}

void check_binary(const char* op, const Shape& a, const Shape& b) {
  if (a != b && !is_bias_broadcast(a, b)) {
    fail(ErrorKind::dimension, std::string(op) + ": incompatible shapes " +
                                   shape_string(a) + " and " + shape_string(b));
  }
}

template <class Fwd>
Tensor binary_forward(const Tensor& a, const Tensor& b, Fwd fwd) {
  Tensor out(a.shape());
  const std::size_t stride = b.size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = fwd(a[i], b[i % stride]);
  }
  return out;
}

// Accumulates d(out)/d(b) * dy into db, summing over broadcast rows.
template <class Partial>
void accumulate_b(std::vector<double>& db, const std::vector<double>& dy,
                  std::size_t stride, Partial partial) {
  for (std::size_t i = 0; i < dy.size(); ++i) {
    db[i % stride] += partial(i) * dy[i];
  }
}

template <class Fwd>
Var unary(Var a, Fwd fwd, Graph::BackwardFn bwd) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return a.graph->record(std::move(out), {a}, std::move(bwd));
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    fail(ErrorKind::dimension, "matmul: incompatible shapes " +
                                   shape_string(A.shape()) + " and " +
                                   shape_string(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor C({m, n});
  matrix(C, m, n).noalias() = const_matrix(A, m, k) * const_matrix(B, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(std::move(C), {a, b}, [ia, ib, m, k, n](Graph& g, std::size_t self) {
    const ConstMatrix dy(g.output_grad(self).data(), static_cast<Eigen::Index>(m),
                         static_cast<Eigen::Index>(n));
    if (g.needs_grad(ia)) {
      MutableMatrix da(g.grad_buffer(ia).data(), static_cast<Eigen::Index>(m),
                       static_cast<Eigen::Index>(k));
      da.noalias() += dy * const_matrix(val(g, ib), k, n).transpose();
    }
    if (g.needs_grad(ib)) {
      MutableMatrix db(g.grad_buffer(ib).data(), static_cast<Eigen::Index>(k),
                       static_cast<Eigen::Index>(n));
      db.noalias() += const_matrix(val(g, ia), m, k).transpose() * dy;
    }
  });
}

Var add(Var a, Var b) {
  require_same_graph(a, b);
  check_binary("add", a.shape(), b.shape());
  Tensor out = binary_forward(a.value(), b.value(), [](double x, double y) { return x + y; });
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    const auto& dy = g.output_grad(self);
    if (g.needs_grad(ia)) {
      auto& da = g.grad_buffer(ia);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (g.needs_grad(ib)) {
      auto& db = g.grad_buffer(ib);
      accumulate_b(db, dy, db.size(), [](std::size_t) { return 1.0; });
    }
  });
}

Var sub(Var a, Var b) {
  require_same_graph(a, b);
  check_binary("sub", a.shape(), b.shape());
  Tensor out = binary_forward(a.value(), b.value(), [](double x, double y) { return x - y; });
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    const auto& dy = g.output_grad(self);
    if (g.needs_grad(ia)) {
      auto& da = g.grad_buffer(ia);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (g.needs_grad(ib)) {
      auto& db = g.grad_buffer(ib);
      accumulate_b(db, dy, db.size(), [](std::size_t) { return -1.0; });
    }
  });
}

Var mul(Var a, Var b) {
  require_same_graph(a, b);
  check_binary("mul", a.shape(), b.shape());
  Tensor out = binary_forward(a.value(), b.value(), [](double x, double y) { return x * y; });
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    const auto& dy = g.output_grad(self);
    const Tensor& A = val(g, ia);
    const Tensor& B = val(g, ib);
    const std::size_t stride = B.size();
    if (g.needs_grad(ia)) {
      auto& da = g.grad_buffer(ia);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += B[i % stride] * dy[i];
    }
    if (g.needs_grad(ib)) {
      auto& db = g.grad_buffer(ib);
      accumulate_b(db, dy, stride, [&A](std::size_t i) { return A[i]; });
    }
  });
}

Var relu(Var a) {
  const std::size_t ia = a.id;
  return unary(a, [](double v) { return v > 0.0 ? v : 0.0; },
               [ia](Graph& g, std::size_t self) {
                 const auto& dy = g.output_grad(self);
                 const Tensor& x = val(g, ia);
                 auto& da = g.grad_buffer(ia);
                 for (std::size_t i = 0; i < dy.size(); ++i) {
                   if (x[i] > 0.0) da[i] += dy[i];
                 }
               });
}

Var sigmoid(Var a) {
  const std::size_t ia = a.id;
  return unary(a,
               [](double v) {
                 if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                 const double e = std::exp(v);
                 return e / (1.0 + e);
               },
               [ia](Graph& g, std::size_t self) {
                 const auto& dy = g.output_grad(self);
                 const Tensor& y = val(g, self);
                 auto& da = g.grad_buffer(ia);
                 for (std::size_t i = 0; i < dy.size(); ++i) {
                   da[i] += y[i] * (1.0 - y[i]) * dy[i];
                 }
               });
}

Var tanh(Var a) {
  const std::size_t ia = a.id;
  return unary(a, [](double v) { return std::tanh(v); },
               [ia](Graph& g, std::size_t self) {
                 const auto& dy = g.output_grad(self);
                 const Tensor& y = val(g, self);
                 auto& da = g.grad_buffer(ia);
                 for (std::size_t i = 0; i < dy.size(); ++i) {
                   da[i] += (1.0 - y[i] * y[i]) * dy[i];
                 }
               });
}

Var elementwise(Pointwise op, Var a, std::optional<Var> b) {
  const bool binary = op == Pointwise::add || op == Pointwise::sub ||
                      op == Pointwise::mul;
  if (binary != b.has_value()) {
    fail(ErrorKind::parameter, binary ? "binary pointwise op needs two operands"
                                      : "unary pointwise op takes one operand");
  }
  switch (op) {
    case Pointwise::add: return add(a, *b);
    case Pointwise::sub: return sub(a, *b);
    case Pointwise::mul: return mul(a, *b);
    case Pointwise::relu: return relu(a);
    case Pointwise::sigmoid: return sigmoid(a);
    case Pointwise::tanh: return tanh(a);
  }
  fail(ErrorKind::parameter, "unknown pointwise op");
}

Var scale(Var a, double factor) {
  const std::size_t ia = a.id;
  return unary(a, [factor](double v) { return v * factor; },
               [ia, factor](Graph& g, std::size_t self) {
                 const auto& dy = g.output_grad(self);
                 auto& da = g.grad_buffer(ia);
                 for (std::size_t i = 0; i < dy.size(); ++i) da[i] += factor * dy[i];
               });
}

Var softmax(Var z) {
  const Tensor& Z = z.value();
  if (Z.rank() != 2 || Z.dim(1) < 2) {
    fail(ErrorKind::dimension,
         "softmax expects [n, c] with c >= 2, got " + shape_string(Z.shape()));
  }
  const std::size_t n = Z.dim(0), c = Z.dim(1);
  Tensor P(Z.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double* zr = &Z[r * c];
    double* pr = &P[r * c];
    const double top = *std::max_element(zr, zr + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      pr[j] = std::exp(zr[j] - top);
      total += pr[j];
    }
    for (std::size_t j = 0; j < c; ++j) pr[j] /= total;
  }
  const std::size_t iz = z.id;
  return z.graph->record(std::move(P), {z}, [iz, n, c](Graph& g, std::size_t self) {
    const auto& dy = g.output_grad(self);
    const Tensor& P = val(g, self);
    auto& dz = g.grad_buffer(iz);
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += dy[r * c + j] * P[r * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        dz[r * c + j] += P[r * c + j] * (dy[r * c + j] - dot);
      }
    }
  });
}

Var conv1d(Var x, Var kernels, Padding padding) {
  require_same_graph(x, kernels);
  const Tensor& X = x.value();
  const Tensor& W = kernels.value();
  if (X.rank() != 3 || W.rank() != 3 || X.dim(2) != W.dim(1)) {
    fail(ErrorKind::dimension, "conv1d: input " + shape_string(X.shape()) +
                                   " incompatible with kernels " +
                                   shape_string(W.shape()));
  }
  const std::size_t n = X.dim(0), L = X.dim(1), cin = X.dim(2);
  const std::size_t K = W.dim(0), cout = W.dim(2);
  std::size_t pad_left = 0, pad_total = 0;
  if (padding == Padding::same) {
    pad_total = K - 1;
    pad_left = pad_total / 2;
  }
  if (K == 0 || K > L + pad_total) {
    fail(ErrorKind::dimension, "conv1d: kernel length " + std::to_string(K) +
                                   " exceeds padded input length " +
                                   std::to_string(L + pad_total));
  }
  const std::size_t out_len = L + pad_total - K + 1;
  Tensor Y({n, out_len, cout});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t t = 0; t < out_len; ++t) {
      double* yrow = &Y[(b * out_len + t) * cout];
      for (std::size_t j = 0; j < K; ++j) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t + j) -
                                   static_cast<std::ptrdiff_t>(pad_left);
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(L)) continue;
        const double* xrow = &X[(b * L + static_cast<std::size_t>(pos)) * cin];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double xv = xrow[ci];
          if (xv == 0.0) continue;
          const double* wrow = &W[(j * cin + ci) * cout];
          for (std::size_t co = 0; co < cout; ++co) yrow[co] += xv * wrow[co];
        }
      }
    }
  }
  const std::size_t ix = x.id, iw = kernels.id;
  return x.graph->record(
      std::move(Y), {x, kernels},
      [ix, iw, n, L, cin, K, cout, out_len, pad_left](Graph& g, std::size_t self) {
        const auto& dy = g.output_grad(self);
        const Tensor& X = val(g, ix);
        const Tensor& W = val(g, iw);
        const bool gx = g.needs_grad(ix), gw = g.needs_grad(iw);
        std::vector<double>* dx = gx ? &g.grad_buffer(ix) : nullptr;
        std::vector<double>* dw = gw ? &g.grad_buffer(iw) : nullptr;
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t t = 0; t < out_len; ++t) {
            const double* dyrow = &dy[(b * out_len + t) * cout];
            for (std::size_t j = 0; j < K; ++j) {
              const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t + j) -
                                         static_cast<std::ptrdiff_t>(pad_left);
              if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(L)) continue;
              const std::size_t xbase = (b * L + static_cast<std::size_t>(pos)) * cin;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const std::size_t wbase = (j * cin + ci) * cout;
                if (gx) {
                  double acc = 0.0;
                  for (std::size_t co = 0; co < cout; ++co) acc += dyrow[co] * W[wbase + co];
                  (*dx)[xbase + ci] += acc;
                }
                if (gw) {
                  const double xv = X[xbase + ci];
                  if (xv == 0.0) continue;
                  for (std::size_t co = 0; co < cout; ++co) (*dw)[wbase + co] += xv * dyrow[co];
                }
              }
            }
          }
        }
      });
}

Var maxpool1d(Var x, std::size_t window) {
  if (window < 1) fail(ErrorKind::parameter, "maxpool1d window must be >= 1");
  const Tensor& X = x.value();
  if (X.rank() != 3) {
    fail(ErrorKind::dimension,
         "maxpool1d expects [n, L, C], got " + shape_string(X.shape()));
  }
  const std::size_t n = X.dim(0), L = X.dim(1), C = X.dim(2);
  const std::size_t out_len = (L + window - 1) / window;
  Tensor Y({n, out_len, C});
  std::vector<std::size_t> argmax(Y.size());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < out_len; ++o) {
      const std::size_t begin = o * window;
      const std::size_t end = std::min(L, begin + window);
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t best = (b * L + begin) * C + c;
        for (std::size_t t = begin + 1; t < end; ++t) {
          const std::size_t idx = (b * L + t) * C + c;
          if (X[idx] > X[best]) best = idx;
        }
        const std::size_t out = (b * out_len + o) * C + c;
        Y[out] = X[best];
        argmax[out] = best;
      }
    }
  }
  const std::size_t ix = x.id;
  return x.graph->record(std::move(Y), {x},
                         [ix, argmax = std::move(argmax)](Graph& g, std::size_t self) {
                           const auto& dy = g.output_grad(self);
                           auto& dx = g.grad_buffer(ix);
                           for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
                         });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id;
  return a.graph->record(std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    const auto& dy = g.output_grad(self);
    auto& da = g.grad_buffer(ia);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
  });
}

Var slice_columns(Var a, std::size_t start, std::size_t length) {
  const Tensor& A = a.value();
  if (A.rank() != 2 || start + length > A.dim(1) || length == 0) {
    fail(ErrorKind::dimension, "slice_columns: [" + std::to_string(start) + ", " +
                                   std::to_string(start + length) +
                                   ") out of range for " + shape_string(A.shape()));
  }
  const std::size_t rows = A.dim(0), cols = A.dim(1);
  Tensor out({rows, length});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(&A[r * cols + start], length, &out[r * length]);
  }
  const std::size_t ia = a.id;
  return a.graph->record(std::move(out), {a},
                         [ia, rows, cols, start, length](Graph& g, std::size_t self) {
                           const auto& dy = g.output_grad(self);
                           auto& da = g.grad_buffer(ia);
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t j = 0; j < length; ++j) {
                               da[r * cols + start + j] += dy[r * length + j];
                             }
                           }
                         });
}

Var sum(Var a) {
  const Tensor& A = a.value();
  double total = 0.0;
  for (double v : A.values()) total += v;
  const std::size_t ia = a.id;
  return a.graph->record(Tensor({1}, {total}), {a}, [ia](Graph& g, std::size_t self) {
    const double d = g.output_grad(self)[0];
    auto& da = g.grad_buffer(ia);
    for (double& v : da) v += d;
  });
}

Var mean(Var a) {
  const double count = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / count);
}

Var weighted_sum(Var a, const Tensor& weights) {
  const Tensor& A = a.value();
  if (A.shape() != weights.shape()) {
    fail(ErrorKind::dimension, "weighted_sum: shapes " + shape_string(A.shape()) +
                                   " and " + shape_string(weights.shape()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) total += A[i] * weights[i];
  const std::size_t ia = a.id;
  return a.graph->record(Tensor({1}, {total}), {a},
                         [ia, weights](Graph& g, std::size_t self) {
                           const double d = g.output_grad(self)[0];
                           auto& da = g.grad_buffer(ia);
                           for (std::size_t i = 0; i < da.size(); ++i) da[i] += d * weights[i];
                         });
}

Var cross_entropy(Var probs, std::span<const int> labels) {
  constexpr double floor_prob = 1e-12;
  const Tensor& P = probs.value();
  if (P.rank() != 2 || P.dim(0) != labels.size() || P.dim(0) == 0) {
    fail(ErrorKind::dimension, "cross_entropy: probabilities " +
                                   shape_string(P.shape()) + " vs " +
                                   std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = P.dim(0), c = P.dim(1);
  std::vector<int> owned(labels.begin(), labels.end());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = owned[r];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      fail(ErrorKind::label, "label " + std::to_string(y) + " at row " +
                                 std::to_string(r) + " outside [0, " +
                                 std::to_string(c) + ")");
    }
    total -= std::log(std::max(P[r * c + static_cast<std::size_t>(y)], floor_prob));
  }
  const std::size_t ip = probs.id;
  return probs.graph->record(
      Tensor({1}, {total / static_cast<double>(n)}), {probs},
      [ip, n, c, owned = std::move(owned)](Graph& g, std::size_t self) {
        const double d = g.output_grad(self)[0] / static_cast<double>(n);
        const Tensor& P = val(g, ip);
        auto& dp = g.grad_buffer(ip);
        for (std::size_t r = 0; r < n; ++r) {
          const std::size_t idx = r * c + static_cast<std::size_t>(owned[r]);
          if (P[idx] > floor_prob) dp[idx] -= d / P[idx];
        }
      });
}

}  // namespace advids
