// SPDX-License-Identifier: Apache-2.0
#include "dynenc/grad_cases.hpp"

#include <cmath>
#include <memory>

#include "dynenc/ops.hpp"

namespace dynenc::grad {

Tensor random_tensor(Rng& rng, Shape shape, double sigma) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = sigma * normal(rng);
  return t;
}

Var weighted_sum(Var out, Rng& rng) {
  Tensor w = random_tensor(rng, out.shape());
  return sum_all(mul(out, out.tape->constant(std::move(w))));
}

namespace {

std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + uniform_index(rng, hi - lo + 1);
}

// Pushes entries at least `margin` away from every kink location.
Tensor away_from(Tensor t, std::initializer_list<double> kinks, double margin) {
  for (double& v : t.data) {
    for (double k : kinks) {
      if (std::fabs(v - k) < margin) v = v >= k ? k + margin : k - margin;
    }
  }
  return t;
}

Segments random_segments(Rng& rng, std::size_t count, std::size_t max_len) {
  Segments s;
  for (std::size_t i = 0; i < count; ++i) s.lengths.push_back(draw(rng, 1, max_len));
  return s;
}

// Wraps f so the scalarizing weights are identical on every evaluation.
ScalarFunction scalarized(std::uint64_t seed, std::function<Var(Tape&, Var)> body) {
  return [seed, body](Tape& tape, Var x) {
    Rng rng(seed);
    return weighted_sum(body(tape, x), rng);
  };
}

}  // namespace

std::vector<GradCase> primitive_grad_cases(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x9bad));
  std::vector<GradCase> cases;
  auto next_seed = [&] { return static_cast<std::uint64_t>(rng()); };
  auto add_case = [&](std::string name, std::string op, Tensor input,
                      std::function<Var(Tape&, Var)> body) {
    cases.push_back({std::move(name), std::move(op), std::move(input),
                     scalarized(next_seed(), std::move(body))});
  };

  const std::size_t r = draw(rng, 1, 5), c = draw(rng, 2, 6), k = draw(rng, 1, 5);

  {
    Tensor b = random_tensor(rng, {c, k});
    add_case("matmul/lhs", "matmul", random_tensor(rng, {r, c}),
             [b](Tape& t, Var x) { return matmul(x, t.constant(b)); });
    Tensor a = random_tensor(rng, {r, c});
    add_case("matmul/rhs", "matmul", random_tensor(rng, {c, k}),
             [a](Tape& t, Var x) { return matmul(t.constant(a), x); });
  }
  {
    Tensor other = random_tensor(rng, {r, c});
    add_case("add", "add", random_tensor(rng, {r, c}),
             [other](Tape& t, Var x) { return add(x, t.constant(other)); });
    Tensor row = random_tensor(rng, {c});
    add_case("add/broadcast-lhs", "add", random_tensor(rng, {r, c}),
             [row](Tape& t, Var x) { return add(x, t.constant(row)); });
    Tensor mat = random_tensor(rng, {r, c});
    add_case("add/broadcast-rhs", "add", random_tensor(rng, {c}),
             [mat](Tape& t, Var x) { return add(t.constant(mat), x); });
  }
  {
    Tensor other = random_tensor(rng, {r, c});
    add_case("mul", "mul", random_tensor(rng, {r, c}),
             [other](Tape& t, Var x) { return mul(x, t.constant(other)); });
    Tensor s = random_tensor(rng, {1});
    add_case("mul_scalar/tensor", "mul_scalar", random_tensor(rng, {r, c}),
             [s](Tape& t, Var x) { return mul_scalar(x, t.constant(s)); });
    Tensor m = random_tensor(rng, {r, c});
    add_case("mul_scalar/scalar", "mul_scalar", random_tensor(rng, {1}),
             [m](Tape& t, Var x) { return mul_scalar(t.constant(m), x); });
    const double alpha = normal(rng);
    add_case("scale", "scale", random_tensor(rng, {r, c}),
             [alpha](Tape&, Var x) { return scale(x, alpha); });
    add_case("add_scalar", "add_scalar", random_tensor(rng, {r, c}),
             [alpha](Tape&, Var x) { return add_scalar(x, alpha); });
  }
  {
    Tensor w = random_tensor(rng, {c, k}), b = random_tensor(rng, {k}),
           x0 = random_tensor(rng, {r, c});
    add_case("linear/input", "linear", x0, [w, b](Tape& t, Var x) {
      return linear(x, t.constant(w), t.constant(b));
    });
    add_case("linear/weight", "linear", w, [x0, b](Tape& t, Var x) {
      return linear(t.constant(x0), x, t.constant(b));
    });
    add_case("linear/bias", "linear", b, [x0, w](Tape& t, Var x) {
      return linear(t.constant(x0), t.constant(w), x);
    });
  }
  {
    Tensor g = random_tensor(rng, {c}), b = random_tensor(rng, {c}),
           x0 = random_tensor(rng, {r, c});
    add_case("layernorm/input", "layernorm", x0, [g, b](Tape& t, Var x) {
      return layernorm(x, t.constant(g), t.constant(b));
    });
    add_case("layernorm/gamma", "layernorm", g, [x0, b](Tape& t, Var x) {
      return layernorm(t.constant(x0), x, t.constant(b));
    });
    add_case("layernorm/beta", "layernorm", b, [x0, g](Tape& t, Var x) {
      return layernorm(t.constant(x0), t.constant(g), x);
    });
    add_case("layernorm/plain", "layernorm", random_tensor(rng, {r, c}),
             [](Tape&, Var x) { return layernorm(x); });
  }
  {
    const std::size_t d3 = draw(rng, 2, 4);
    add_case("softmax/last", "softmax", random_tensor(rng, {r, c}),
             [](Tape&, Var x) { return softmax(x, 1); });
    add_case("softmax/middle", "softmax", random_tensor(rng, {r, c, d3}),
             [](Tape&, Var x) { return softmax(x, 1); });
    add_case("log_softmax/last", "log_softmax", random_tensor(rng, {r, c}),
             [](Tape&, Var x) { return log_softmax(x, 1); });
    add_case("log_softmax/first", "log_softmax", random_tensor(rng, {r + 1, c}),
             [](Tape&, Var x) { return log_softmax(x, 0); });
  }
  add_case("sigmoid", "sigmoid", random_tensor(rng, {r, c}, 2.0),
           [](Tape&, Var x) { return sigmoid(x); });
  add_case("swish", "swish", random_tensor(rng, {r, c}, 2.0),
           [](Tape&, Var x) { return swish(x); });
  add_case("relu", "relu", away_from(random_tensor(rng, {r, c}), {0.0}, 0.05),
           [](Tape&, Var x) { return relu(x); });
  add_case("abs", "abs", away_from(random_tensor(rng, {r, c}), {0.0}, 0.05),
           [](Tape&, Var x) { return abs(x); });
  {
    Tensor pos = random_tensor(rng, {r, c});
    for (double& v : pos.data) v = 0.2 + std::fabs(v);
    add_case("log", "log", pos, [](Tape&, Var x) { return log(x, 1e-12); });
  }
  add_case("clamp", "clamp", away_from(random_tensor(rng, {r, c}), {-0.5, 0.5}, 0.05),
           [](Tape&, Var x) { return clamp(x, -0.5, 0.5); });
  add_case("glu", "glu", random_tensor(rng, {r, 2 * c}),
           [](Tape&, Var x) { return glu(x); });
  {
    const std::size_t kernel = 2 * draw(rng, 0, 2) + 1;
    Segments seg = random_segments(rng, draw(rng, 1, 3), 6);
    const std::size_t n = seg.total();
    Tensor x0 = random_tensor(rng, {n, c}), w = random_tensor(rng, {kernel, c}),
           b = random_tensor(rng, {c});
    add_case("depthwise_conv1d/input", "depthwise_conv1d", x0, [w, b, seg](Tape& t, Var x) {
      return depthwise_conv1d(x, t.constant(w), t.constant(b), seg);
    });
    add_case("depthwise_conv1d/weight", "depthwise_conv1d", w, [x0, b, seg](Tape& t, Var x) {
      return depthwise_conv1d(t.constant(x0), x, t.constant(b), seg);
    });
    add_case("depthwise_conv1d/bias", "depthwise_conv1d", b, [x0, w, seg](Tape& t, Var x) {
      return depthwise_conv1d(t.constant(x0), t.constant(w), x, seg);
    });
    const std::size_t stride = draw(rng, 1, 3);
    add_case("unfold", "unfold", random_tensor(rng, {n, c}), [seg, kernel, stride](Tape&, Var x) {
      return unfold(x, seg, kernel, stride);
    });
  }
  {
    const std::size_t heads = draw(rng, 1, 2);
    const std::size_t d = heads * draw(rng, 1, 3);
    Segments seg = random_segments(rng, draw(rng, 1, 3), 5);
    const std::size_t n = seg.total();
    Tensor q = random_tensor(rng, {n, d}), kk = random_tensor(rng, {n, d}),
           v = random_tensor(rng, {n, d});
    add_case("attention/query", "attention", q, [kk, v, seg, heads](Tape& t, Var x) {
      return attention(x, t.constant(kk), t.constant(v), seg, heads);
    });
    add_case("attention/key", "attention", kk, [q, v, seg, heads](Tape& t, Var x) {
      return attention(t.constant(q), x, t.constant(v), seg, heads);
    });
    add_case("attention/value", "attention", v, [q, kk, seg, heads](Tape& t, Var x) {
      return attention(t.constant(q), t.constant(kk), x, seg, heads);
    });
  }
  add_case("transpose", "transpose", random_tensor(rng, {r, c}),
           [](Tape&, Var x) { return transpose(x); });
  {
    const std::size_t start = draw(rng, 0, c - 1);
    const std::size_t len = draw(rng, 1, c - start);
    add_case("slice", "slice", random_tensor(rng, {r, c}),
             [start, len](Tape&, Var x) { return slice(x, 1, start, len); });
    Tensor other = random_tensor(rng, {r, k});
    add_case("concat", "concat", random_tensor(rng, {r, c}), [other](Tape& t, Var x) {
      return concat({t.constant(other), x, x}, 1);
    });
  }
  add_case("sum", "sum", random_tensor(rng, {r, c}), [](Tape&, Var x) { return sum(x, 0); });
  add_case("mean", "mean", random_tensor(rng, {r, c}), [](Tape&, Var x) { return mean(x, 1); });
  add_case("sum_all", "sum_all", random_tensor(rng, {r, c}), [](Tape&, Var x) { return sum_all(x); });
  {
    const std::uint64_t mask_seed = next_seed();
    add_case("dropout", "dropout", random_tensor(rng, {r, c}), [mask_seed](Tape&, Var x) {
      Rng mask_rng(mask_seed);
      return dropout(x, 0.3, mask_rng, true);
    });
  }
  return cases;
}

}  // namespace dynenc::grad
