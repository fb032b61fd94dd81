#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "advids/error.hpp"
#include "advids/random.hpp"
#include "advids/tensor.hpp"

using namespace advids;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an advids::Error");
  return ErrorKind::io;
}

}  // namespace

TEST_CASE("tensor construction checks sizes") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(kind_of([] { Tensor({2, 2}, {1.0, 2.0, 3.0}); }) == ErrorKind::dimension);
}

TEST_CASE("matmul small cases") {
  Graph g;
  Var eye = g.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  Var b = g.constant(Tensor({2, 2}, {3, 4, 5, 6}));
  CHECK(matmul(eye, b).value().data() == std::vector<double>{3, 4, 5, 6});
  Var row = g.constant(Tensor({1, 2}, {1, 2}));
  Var col = g.constant(Tensor({2, 1}, {3, 4}));
  CHECK(matmul(row, col).value()[0] == 11.0);
  CHECK(kind_of([&] { matmul(row, row); }) == ErrorKind::dimension);
}

TEST_CASE("matmul matches a triple loop") {
  const Tensor a = random_tensor({3, 4}, 1), b = random_tensor({4, 2}, 2);
  Graph g;
  const Tensor c = matmul(g.constant(a), g.constant(b)).value();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < 4; ++p) s += a.at(i, p) * b.at(p, j);
      CHECK(std::abs(c.at(i, j) - s) < 1e-12);
    }
  }
}

TEST_CASE("pointwise operations") {
  Graph g;
  CHECK(relu(g.constant(Tensor({3}, {-1, 0, 2}))).value().data() == std::vector<double>{0, 0, 2});
  CHECK(sigmoid(g.constant(Tensor({1}, {0}))).value()[0] == 0.5);
  CHECK(tanh(g.constant(Tensor({1}, {0.5}))).value()[0] == doctest::Approx(std::tanh(0.5)).epsilon(1e-15));
  CHECK(std::abs(tanh(g.constant(Tensor({1}, {0.5}))).value()[0] - 0.46211715726000974) < 1e-15);

  Var a = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var bias = g.constant(Tensor({2}, {10, 20}));
  CHECK(add(a, bias).value().data() == std::vector<double>{11, 22, 13, 24});
  CHECK(elementwise(Pointwise::sub, a, a).value().data() == std::vector<double>(4, 0.0));
  CHECK(elementwise(Pointwise::mul, a, a).value().data() == std::vector<double>{1, 4, 9, 16});
  Var wrong = g.constant(Tensor({3}, {1, 2, 3}));
  CHECK(kind_of([&] { add(a, wrong); }) == ErrorKind::dimension);
}

TEST_CASE("softmax values and stability") {
  Graph g;
  auto sm = [&](std::vector<double> z) {
    const std::size_t c = z.size();
    return softmax(g.constant(Tensor({1, c}, std::move(z)))).value();
  };
  CHECK(sm({0, 0}).data() == std::vector<double>{0.5, 0.5});
  CHECK(sm({1000, 1000}).data() == std::vector<double>{0.5, 0.5});
  const Tensor p = sm({1, 2});
  const double e1 = std::exp(1.0), e2 = std::exp(2.0);
  CHECK(std::abs(p[0] - e1 / (e1 + e2)) < 1e-12);
  CHECK(std::abs(p[0] - 0.26894) < 1e-5);
  CHECK(std::abs(p[1] - 0.73106) < 1e-5);

  const Tensor z = random_tensor({5, 3}, 3, -5, 5);
  Tensor shifted = z;
  for (double& v : shifted.values()) v += 123.25;
  const Tensor a = softmax(g.constant(z)).value();
  const Tensor b = softmax(g.constant(shifted)).value();
  for (std::size_t r = 0; r < 5; ++r) {
    CHECK(std::abs(a.at(r, 0) + a.at(r, 1) + a.at(r, 2) - 1.0) < 1e-9);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(a.at(r, c) - b.at(r, c)) < 1e-9);
  }
}

TEST_CASE("conv1d against a direct loop nest") {
  Graph g;
  Var x = g.constant(Tensor({1, 3, 1}, {1, 2, 3}));
  Var k = g.constant(Tensor({3, 1, 1}, {1, 0, -1}));
  CHECK(conv1d(x, k, Padding::valid).value().data() == std::vector<double>{-2});
  CHECK(conv1d(x, g.constant(Tensor({3, 1, 1})), Padding::same).value().data() ==
        std::vector<double>(3, 0.0));
  CHECK(kind_of([&] { conv1d(x, g.constant(Tensor({4, 1, 1})), Padding::valid); }) ==
        ErrorKind::dimension);

  for (Padding pad : {Padding::valid, Padding::same}) {
    const std::size_t n = 2, L = 6, cin = 2, cout = 3, K = 4;
    const Tensor xv = random_tensor({n, L, cin}, 4), kv = random_tensor({K, cin, cout}, 5);
    const Tensor y = conv1d(g.constant(xv), g.constant(kv), pad).value();
    const std::size_t left = pad == Padding::same ? (K - 1) / 2 : 0;
    const std::size_t out_len = pad == Padding::same ? L : L - K + 1;
    REQUIRE(y.shape() == Shape{n, out_len, cout});
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t t = 0; t < out_len; ++t) {
        for (std::size_t o = 0; o < cout; ++o) {
          double s = 0.0;
          for (std::size_t q = 0; q < K; ++q) {
            const long pos = static_cast<long>(t + q) - static_cast<long>(left);
            if (pos < 0 || pos >= static_cast<long>(L)) continue;
            for (std::size_t c = 0; c < cin; ++c) {
              s += xv[(b * L + static_cast<std::size_t>(pos)) * cin + c] * kv[(q * cin + c) * cout + o];
            }
          }
          CHECK(std::abs(y[(b * out_len + t) * cout + o] - s) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("maxpool1d values, partial window and gradient routing") {
  Graph g;
  CHECK(maxpool1d(g.constant(Tensor({1, 4, 1}, {1, 3, 2, 0})), 2).value().data() ==
        std::vector<double>{3, 2});
  CHECK(maxpool1d(g.constant(Tensor({1, 1, 1}, {5})), 2).value().data() == std::vector<double>{5});
  CHECK(kind_of([&] { maxpool1d(g.constant(Tensor({1, 1, 1}, {5})), 0); }) == ErrorKind::parameter);

  Var x = g.leaf(Tensor({1, 4, 1}, {1, 3, 2, 0}));
  g.backward(sum(maxpool1d(x, 2)));
  CHECK(g.grad(x).data() == std::vector<double>{0, 1, 1, 0});

  Graph ties;
  Var t = ties.leaf(Tensor({1, 2, 1}, {4, 4}));
  ties.backward(sum(maxpool1d(t, 2)));
  CHECK(ties.grad(t).data() == std::vector<double>{1, 0});
}

TEST_CASE("backward basics") {
  Graph g;
  Var x = g.leaf(Tensor({1}, {3}));
  g.backward(mul(x, x));
  CHECK(g.grad(x)[0] == 6.0);
  // A second call without reset accumulates into the leaf.
  g.backward(mul(x, x));
  CHECK(g.grad(x)[0] == 12.0);
  g.zero_grad();
  CHECK(g.grad(x)[0] == 0.0);

  Graph c;
  Var y = c.leaf(Tensor({1}, {3}));
  c.backward(c.constant(Tensor({1}, {7})));
  CHECK(c.grad(y)[0] == 0.0);

  Graph m;
  Var v = m.leaf(Tensor({2}, {1, 2}));
  CHECK(kind_of([&] { m.backward(v); }) == ErrorKind::contract);
}

TEST_CASE("two-layer network gradients match finite differences") {
  const Tensor w1 = random_tensor({3, 4}, 6), b1 = random_tensor({4}, 7);
  const Tensor w2 = random_tensor({4, 2}, 8);
  const Tensor x = random_tensor({5, 3}, 9);
  const std::vector<int> labels{0, 1, 1, 0, 1};
  auto net = [&](Graph& g, Var in, Var W1, Var W2) {
    Var h = tanh(add(matmul(in, W1), g.constant(b1)));
    return cross_entropy(softmax(matmul(h, W2)), labels);
  };
  // Gradient with respect to each argument in turn.
  CHECK(grad_check([&](Graph& g, Var p) { return net(g, p, g.constant(w1), g.constant(w2)); }, x,
                   1e-5) < 1e-4);
  CHECK(grad_check([&](Graph& g, Var p) { return net(g, g.constant(x), p, g.constant(w2)); }, w1,
                   1e-5) < 1e-4);
  CHECK(grad_check([&](Graph& g, Var p) { return net(g, g.constant(x), g.constant(w1), p); }, w2,
                   1e-5) < 1e-4);
}

TEST_CASE("every differentiable op passes a gradient check") {
  const Tensor x = random_tensor({2, 6}, 10, 0.1, 1.0);
  const Tensor other = random_tensor({2, 6}, 11, 0.1, 1.0);
  const Tensor weights = random_tensor({2, 6}, 12);
  auto ws = [&](Var v) { return weighted_sum(v, weights); };
  const std::vector<std::pair<const char*, ScalarFunction>> cases = {
      {"add", [&](Graph& g, Var v) { return ws(add(v, g.constant(other))); }},
      {"sub", [&](Graph& g, Var v) { return ws(sub(g.constant(other), v)); }},
      {"mul", [&](Graph& g, Var v) { return ws(mul(v, v)); }},
      {"bias", [&](Graph& g, Var v) {
         return ws(add(g.constant(other), reshape(slice_columns(reshape(v, {1, 12}), 0, 6), {6})));
       }},
      {"sigmoid", [&](Graph&, Var v) { return ws(sigmoid(v)); }},
      {"tanh", [&](Graph&, Var v) { return ws(tanh(v)); }},
      {"relu", [&](Graph&, Var v) { return ws(relu(v)); }},
      {"scale", [&](Graph&, Var v) { return ws(scale(v, -2.5)); }},
      {"softmax", [&](Graph&, Var v) { return ws(softmax(v)); }},
      {"slice", [&](Graph&, Var v) { return mean(mul(slice_columns(v, 2, 3), slice_columns(v, 1, 3))); }},
      {"conv", [&](Graph& g, Var v) {
         Var k = g.constant(random_tensor({3, 2, 2}, 13));
         return sum(mul(conv1d(reshape(v, {2, 3, 2}), k, Padding::same),
                        conv1d(reshape(v, {2, 3, 2}), k, Padding::same)));
       }},
      {"pool", [&](Graph&, Var v) { return sum(mul(maxpool1d(reshape(v, {2, 6, 1}), 4), maxpool1d(reshape(v, {2, 6, 1}), 4))); }},
      {"xent", [&](Graph&, Var v) { return cross_entropy(softmax(v), std::vector<int>{2, 5}); }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    CHECK(grad_check(f, x, 1e-5) < 1e-4);
  }
}

TEST_CASE("conv kernel gradient matches finite differences") {
  const Tensor x = random_tensor({2, 5, 2}, 14);
  const Tensor k = random_tensor({3, 2, 3}, 15);
  CHECK(grad_check(
            [&](Graph& g, Var v) {
              Var y = conv1d(g.constant(x), v, Padding::valid);
              return sum(mul(y, y));
            },
            k, 1e-5) < 1e-4);
}

TEST_CASE("grad_check utility") {
  const Tensor x = random_tensor({7}, 16);
  CHECK(grad_check([](Graph&, Var v) { return sum(mul(v, v)); }, x, 1e-5) < 1e-6);
  CHECK(grad_check([](Graph&, Var v) { return sum(relu(v)); }, Tensor({3}, {-0.7, 0.4, 1.2}), 1e-5) < 1e-6);
  CHECK(grad_check([](Graph& g, Var) { return g.constant(Tensor({1}, {4.0})); }, x, 1e-5) == 0.0);
}

TEST_CASE("cross entropy clamps and validates labels") {
  Graph g;
  Var p = g.constant(Tensor({2, 2}, {0.5, 0.5, 1.0, 0.0}));
  const double loss = cross_entropy(p, std::vector<int>{0, 0}).value()[0];
  CHECK(std::abs(loss - std::log(2.0) / 2.0) < 1e-12);
  CHECK(kind_of([&] { cross_entropy(p, std::vector<int>{0, 2}); }) == ErrorKind::label);
}
