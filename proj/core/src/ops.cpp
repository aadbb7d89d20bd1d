// SPDX-License-Identifier: Apache-2.0
#include "dynenc/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>

namespace dynenc::grad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;

ConstMatMap as_mat(const Tensor& t) {
  return ConstMatMap(t.data.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}
MatMap as_mat(Tensor& t) {
  return MatMap(t.data.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}
ConstMatMap as_mat(std::span<const double> s, std::size_t r, std::size_t c) {
  return ConstMatMap(s.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MatMap as_mat(std::span<double> s, std::size_t r, std::size_t c) {
  return MatMap(s.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

[[noreturn]] void shape_error(const char* op, const std::string& what, const Shape& a) {
  throw ShapeError(std::string(op) + ": " + what + ", got shape " + to_string(a));
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) shape_error(op, "expected a rank-2 tensor", t.shape);
}

void require_same_tape(const char* op, Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

// Decomposes a shape around one axis as [outer, n, inner].
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) shape_error(op, "axis " + std::to_string(axis) + " out of range", shape);
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Records an elementwise unary op given value and derivative functions.
template <typename F, typename D>
Var unary(const char* op, Var x, F f, D dfdx) {
  const Tensor& in = x.value();
  Tensor out(in.shape);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return x.tape->record(op, std::move(out), {x}, [dfdx](BackwardContext& ctx) {
    auto gx = ctx.input_grad(0);
    if (gx.empty()) return;
    const auto& xv = ctx.input(0);
    const auto& yv = ctx.out_value();
    auto gy = ctx.out_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace

std::size_t Segments::total() const {
  return std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
}

std::vector<std::size_t> Segments::offsets() const {
  std::vector<std::size_t> off(lengths.size());
  std::size_t acc = 0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    off[i] = acc;
    acc += lengths[i];
  }
  return off;
}

Segments Segments::strided(std::size_t stride) const {
  Segments s;
  s.lengths.reserve(lengths.size());
  for (std::size_t t : lengths) s.lengths.push_back((t + stride - 1) / stride);
  return s;
}

Var matmul(Var a, Var b) {
  require_same_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    shape_error("matmul", av.shape, bv.shape);
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  as_mat(out).noalias() = as_mat(av) * as_mat(bv);
  return a.tape->record("matmul", std::move(out), {a, b}, [m, k, n](BackwardContext& ctx) {
    auto gy = as_mat(ctx.out_grad(), m, n);
    if (auto ga = ctx.input_grad(0); !ga.empty()) {
      as_mat(ga, m, k).noalias() += gy * as_mat(ctx.input(1)).transpose();
    }
    if (auto gb = ctx.input_grad(1); !gb.empty()) {
      as_mat(gb, k, n).noalias() += as_mat(ctx.input(0)).transpose() * gy;
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape("add", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape == bv.shape) {
    Tensor out(av.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return a.tape->record("add", std::move(out), {a, b}, [](BackwardContext& ctx) {
      auto gy = ctx.out_grad();
      for (std::size_t in = 0; in < 2; ++in) {
        auto g = ctx.input_grad(in);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
      }
    });
  }
  if (bv.rank() == 1 && av.rank() >= 1 && bv.size() == av.cols()) {
    const std::size_t rows = av.rows(), cols = av.cols();
    Tensor out(av.shape);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = av[r * cols + c] + bv[c];
    }
    return a.tape->record("add", std::move(out), {a, b}, [rows, cols](BackwardContext& ctx) {
      auto gy = ctx.out_grad();
      if (auto ga = ctx.input_grad(0); !ga.empty()) {
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
      }
      if (auto gb = ctx.input_grad(1); !gb.empty()) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) gb[c] += gy[r * cols + c];
        }
      }
    });
  }
  shape_error("add", av.shape, bv.shape);
}

Var mul(Var a, Var b) {
  require_same_tape("mul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape != bv.shape) shape_error("mul", av.shape, bv.shape);
  Tensor out(av.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape->record("mul", std::move(out), {a, b}, [](BackwardContext& ctx) {
    auto gy = ctx.out_grad();
    const auto& av = ctx.input(0);
    const auto& bv = ctx.input(1);
    if (auto ga = ctx.input_grad(0); !ga.empty()) {
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (auto gb = ctx.input_grad(1); !gb.empty()) {
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

Var mul_scalar(Var x, Var s) {
  require_same_tape("mul_scalar", x, s);
  const Tensor& xv = x.value();
  if (s.value().size() != 1) shape_error("mul_scalar", xv.shape, s.shape());
  const double c = s.value()[0];
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
  return x.tape->record("mul_scalar", std::move(out), {x, s}, [](BackwardContext& ctx) {
    auto gy = ctx.out_grad();
    const auto& xv = ctx.input(0);
    const double c = ctx.input(1)[0];
    if (auto gx = ctx.input_grad(0); !gx.empty()) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * c;
    }
    if (auto gs = ctx.input_grad(1); !gs.empty()) {
      double acc = 0.0;
      for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * xv[i];
      gs[0] += acc;
    }
  });
}

Var scale(Var x, double c) {
  return unary("scale", x, [c](double v) { return c * v; },
               [c](double, double) { return c; });
}

Var add_scalar(Var x, double c) {
  return unary("add_scalar", x, [c](double v) { return v + c; },
               [](double, double) { return 1.0; });
}

Var linear(Var x, Var weight, Var bias) {
  require_same_tape("linear", x, weight);
  require_same_tape("linear", x, bias);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  require_rank2("linear", xv);
  if (wv.rank() != 2 || wv.dim(0) != xv.dim(1)) shape_error("linear", xv.shape, wv.shape);
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(1)) shape_error("linear", wv.shape, bv.shape);
  const std::size_t n = xv.dim(0), in = wv.dim(0), out_dim = wv.dim(1);
  Tensor out({n, out_dim});
  auto y = as_mat(out);
  y.noalias() = as_mat(xv) * as_mat(wv);
  y.rowwise() += ConstVecMap(bv.data.data(), static_cast<Eigen::Index>(out_dim));
  return x.tape->record(
      "linear", std::move(out), {x, weight, bias}, [n, in, out_dim](BackwardContext& ctx) {
        auto gy = as_mat(ctx.out_grad(), n, out_dim);
        if (auto gx = ctx.input_grad(0); !gx.empty()) {
          as_mat(gx, n, in).noalias() += gy * as_mat(ctx.input(1)).transpose();
        }
        if (auto gw = ctx.input_grad(1); !gw.empty()) {
          as_mat(gw, in, out_dim).noalias() += as_mat(ctx.input(0)).transpose() * gy;
        }
        if (auto gb = ctx.input_grad(2); !gb.empty()) {
          // Plain loop: Eigen's vectorized column sums round differently
          // depending on buffer alignment.
          const std::span<const double> g = ctx.out_grad();
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < out_dim; ++c) gb[c] += g[r * out_dim + c];
          }
        }
      });
}

namespace {

struct LayerNormCache {
  std::vector<double> xhat;
  std::vector<double> rstd;
};

Var layernorm_impl(Var x, const Var* gamma, const Var* beta, double eps) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || xv.cols() == 0) shape_error("layernorm", "expected a non-empty last axis", xv.shape);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (gamma) {
    require_same_tape("layernorm", x, *gamma);
    if (gamma->shape() != Shape{cols}) shape_error("layernorm", xv.shape, gamma->shape());
    if (beta->shape() != Shape{cols}) shape_error("layernorm", xv.shape, beta->shape());
  }
  auto cache = std::make_shared<LayerNormCache>();
  cache->xhat.resize(xv.size());
  cache->rstd.resize(rows);
  Tensor out(xv.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += row[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(cols);
    const double rstd = 1.0 / std::sqrt(var + eps);
    cache->rstd[r] = rstd;
    for (std::size_t c = 0; c < cols; ++c) {
      const double xh = (row[c] - mu) * rstd;
      cache->xhat[r * cols + c] = xh;
      out[r * cols + c] = gamma ? xh * gamma->value()[c] + beta->value()[c] : xh;
    }
  }
  std::vector<Var> inputs{x};
  if (gamma) {
    inputs.push_back(*gamma);
    inputs.push_back(*beta);
  }
  const bool affine = gamma != nullptr;
  return x.tape->record("layernorm", std::move(out), inputs,
                        [cache, rows, cols, affine](BackwardContext& ctx) {
    auto gy = ctx.out_grad();
    const auto& xhat = cache->xhat;
    if (affine) {
      if (auto gg = ctx.input_grad(1); !gg.empty()) {
        for (std::size_t i = 0; i < gy.size(); ++i) gg[i % cols] += gy[i] * xhat[i];
      }
      if (auto gb = ctx.input_grad(2); !gb.empty()) {
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i % cols] += gy[i];
      }
    }
    auto gx = ctx.input_grad(0);
    if (gx.empty()) return;
    const double* gamma_v = affine ? ctx.input(1).data.data() : nullptr;
    std::vector<double> dxhat(cols);
    for (std::size_t r = 0; r < rows; ++r) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        dxhat[c] = gy[i] * (gamma_v ? gamma_v[c] : 1.0);
        m1 += dxhat[c];
        m2 += dxhat[c] * xhat[i];
      }
      m1 /= static_cast<double>(cols);
      m2 /= static_cast<double>(cols);
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        gx[i] += cache->rstd[r] * (dxhat[c] - m1 - xhat[i] * m2);
      }
    }
  });
}

}  // namespace

Var layernorm(Var x, Var gamma, Var beta, double eps) {
  return layernorm_impl(x, &gamma, &beta, eps);
}

Var layernorm(Var x, double eps) { return layernorm_impl(x, nullptr, nullptr, eps); }

Var softmax(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis("softmax", xv.shape, axis);
  Tensor out(xv.shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(xv[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= z;
    }
  }
  return x.tape->record("softmax", std::move(out), {x}, [s](BackwardContext& ctx) {
    auto gx = ctx.input_grad(0);
    if (gx.empty()) return;
    auto gy = ctx.out_grad();
    const auto& y = ctx.out_value();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) dot += gy[base + j * s.inner] * y[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t i = base + j * s.inner;
          gx[i] += y[i] * (gy[i] - dot);
        }
      }
    }
  });
}

Var log_softmax(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis("log_softmax", xv.shape, axis);
  Tensor out(xv.shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) z += std::exp(xv[base + j * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] = xv[base + j * s.inner] - lse;
    }
  }
  return x.tape->record("log_softmax", std::move(out), {x}, [s](BackwardContext& ctx) {
    auto gx = ctx.input_grad(0);
    if (gx.empty()) return;
    auto gy = ctx.out_grad();
    const auto& y = ctx.out_value();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double total = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) total += gy[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t i = base + j * s.inner;
          gx[i] += gy[i] - std::exp(y[i]) * total;
        }
      }
    }
  });
}

Var sigmoid(Var x) {
  return unary("sigmoid", x, sigmoid_scalar,
               [](double, double y) { return y * (1.0 - y); });
}

Var swish(Var x) {
  return unary("swish", x, [](double v) { return v * sigmoid_scalar(v); },
               [](double v, double) {
                 const double s = sigmoid_scalar(v);
                 return s + v * s * (1.0 - s);
               });
}

Var relu(Var x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var abs(Var x) {
  return unary("abs", x, [](double v) { return std::fabs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var log(Var x, double floor) {
  return unary("log", x, [floor](double v) { return std::log(std::max(v, floor)); },
               [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Var clamp(Var x, double lo, double hi) {
  return unary("clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Var glu(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || xv.cols() % 2 != 0) {
    shape_error("glu", "last axis must have even extent", xv.shape);
  }
  const std::size_t rows = xv.rows(), half = xv.cols() / 2;
  Shape oshape = xv.shape;
  oshape.back() = half;
  Tensor out(oshape);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < half; ++c) {
      out[r * half + c] = xv[r * 2 * half + c] * sigmoid_scalar(xv[r * 2 * half + half + c]);
    }
  }
  return x.tape->record("glu", std::move(out), {x}, [rows, half](BackwardContext& ctx) {
    auto gx = ctx.input_grad(0);
    if (gx.empty()) return;
    auto gy = ctx.out_grad();
    const auto& xv = ctx.input(0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < half; ++c) {
        const std::size_t ia = r * 2 * half + c, ib = ia + half;
        const double s = sigmoid_scalar(xv[ib]);
        const double g = gy[r * half + c];
        gx[ia] += g * s;
        gx[ib] += g * xv[ia] * s * (1.0 - s);
      }
    }
  });
}

Var depthwise_conv1d(Var x, Var weight, Var bias, const Segments& segments) {
  require_same_tape("depthwise_conv1d", x, weight);
  require_same_tape("depthwise_conv1d", x, bias);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  require_rank2("depthwise_conv1d", xv);
  const std::size_t n = xv.dim(0), ch = xv.dim(1);
  if (wv.rank() != 2 || wv.dim(1) != ch || wv.dim(0) % 2 == 0) {
    shape_error("depthwise_conv1d", xv.shape, wv.shape);
  }
  if (bv.shape != Shape{ch}) shape_error("depthwise_conv1d", xv.shape, bv.shape);
  if (segments.total() != n) {
    shape_error("depthwise_conv1d", "segment lengths sum to " + std::to_string(segments.total()),
                xv.shape);
  }
  const std::size_t kernel = wv.dim(0);
  const long pad = static_cast<long>((kernel - 1) / 2);
  const auto offsets = segments.offsets();
  Tensor out({n, ch});
  for (std::size_t s = 0; s < segments.count(); ++s) {
    const long len = static_cast<long>(segments.lengths[s]);
    const std::size_t off = offsets[s];
    for (long t = 0; t < len; ++t) {
      double* y = out.data.data() + (off + t) * ch;
      for (std::size_t c = 0; c < ch; ++c) y[c] = bv[c];
      for (std::size_t k = 0; k < kernel; ++k) {
        const long src = t + static_cast<long>(k) - pad;
        if (src < 0 || src >= len) continue;
        const double* xr = xv.data.data() + (off + src) * ch;
        const double* wr = wv.data.data() + k * ch;
        for (std::size_t c = 0; c < ch; ++c) y[c] += wr[c] * xr[c];
      }
    }
  }
  return x.tape->record(
      "depthwise_conv1d", std::move(out), {x, weight, bias},
      [segments, offsets, ch, kernel, pad](BackwardContext& ctx) {
        auto gy = ctx.out_grad();
        const auto& xv = ctx.input(0);
        const auto& wv = ctx.input(1);
        auto gx = ctx.input_grad(0);
        auto gw = ctx.input_grad(1);
        auto gb = ctx.input_grad(2);
        for (std::size_t s = 0; s < segments.count(); ++s) {
          const long len = static_cast<long>(segments.lengths[s]);
          const std::size_t off = offsets[s];
          for (long t = 0; t < len; ++t) {
            const double* g = gy.data() + (off + t) * ch;
            if (!gb.empty()) {
              for (std::size_t c = 0; c < ch; ++c) gb[c] += g[c];
            }
            for (std::size_t k = 0; k < kernel; ++k) {
              const long src = t + static_cast<long>(k) - pad;
              if (src < 0 || src >= len) continue;
              const std::size_t xi = (off + src) * ch;
              if (!gx.empty()) {
                for (std::size_t c = 0; c < ch; ++c) gx[xi + c] += g[c] * wv[k * ch + c];
              }
              if (!gw.empty()) {
                for (std::size_t c = 0; c < ch; ++c) gw[k * ch + c] += g[c] * xv[xi + c];
              }
            }
          }
        }
      });
}

Var unfold(Var x, const Segments& segments, std::size_t kernel, std::size_t stride) {
  const Tensor& xv = x.value();
  require_rank2("unfold", xv);
  if (kernel == 0 || stride == 0) shape_error("unfold", "kernel and stride must be positive", xv.shape);
  if (segments.total() != xv.dim(0)) {
    shape_error("unfold", "segment lengths sum to " + std::to_string(segments.total()), xv.shape);
  }
  const std::size_t ch = xv.dim(1);
  const Segments out_seg = segments.strided(stride);
  const auto in_off = segments.offsets();
  const auto out_off = out_seg.offsets();
  const long pad = static_cast<long>((kernel - 1) / 2);
  // Source row per (output row, tap); -1 marks zero padding.
  auto src_rows = std::make_shared<std::vector<long>>(out_seg.total() * kernel, -1);
  for (std::size_t s = 0; s < segments.count(); ++s) {
    const long len = static_cast<long>(segments.lengths[s]);
    for (std::size_t t = 0; t < out_seg.lengths[s]; ++t) {
      for (std::size_t k = 0; k < kernel; ++k) {
        const long src = static_cast<long>(t * stride + k) - pad;
        if (src >= 0 && src < len) {
          (*src_rows)[(out_off[s] + t) * kernel + k] = static_cast<long>(in_off[s]) + src;
        }
      }
    }
  }
  Tensor out({out_seg.total(), kernel * ch});
  for (std::size_t r = 0; r < out_seg.total(); ++r) {
    for (std::size_t k = 0; k < kernel; ++k) {
      const long src = (*src_rows)[r * kernel + k];
      if (src < 0) continue;
      std::copy_n(xv.data.data() + static_cast<std::size_t>(src) * ch, ch,
                  out.data.data() + (r * kernel + k) * ch);
    }
  }
  return x.tape->record("unfold", std::move(out), {x}, [src_rows, ch](BackwardContext& ctx) {
    auto gx = ctx.input_grad(0);
    if (gx.empty()) return;
    auto gy = ctx.out_grad();
    const std::size_t slots = src_rows->size();
    for (std::size_t i = 0; i < slots; ++i) {
      const long src = (*src_rows)[i];
      if (src < 0) continue;
      const double* g = gy.data() + i * ch;
      double* dst = gx.data() + static_cast<std::size_t>(src) * ch;
      for (std::size_t c = 0; c < ch; ++c) dst[c] += g[c];
    }
  });
}

Var attention(Var q, Var k, Var v, const Segments& segments, std::size_t heads) {
  require_same_tape("attention", q, k);
  require_same_tape("attention", q, v);
  const Tensor& qv = q.value();
  require_rank2("attention", qv);
  if (k.shape() != qv.shape) shape_error("attention", qv.shape, k.shape());
  if (v.shape() != qv.shape) shape_error("attention", qv.shape, v.shape());
  const std::size_t n = qv.dim(0), d = qv.dim(1);
  if (heads == 0 || d % heads != 0) {
    shape_error("attention", "model dim not divisible by " + std::to_string(heads) + " heads", qv.shape);
  }
  if (segments.total() != n) {
    shape_error("attention", "segment lengths sum to " + std::to_string(segments.total()), qv.shape);
  }
  const std::size_t dh = d / heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto offsets = segments.offsets();
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));

  // Attention weights per (segment, head), kept for the backward pass.
  auto probs = std::make_shared<std::vector<RowMat>>(segments.count() * heads);
  Tensor out({n, d});
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  for (std::size_t s = 0; s < segments.count(); ++s) {
    const auto len = static_cast<Eigen::Index>(segments.lengths[s]);
    if (len == 0) continue;
    const std::size_t base = offsets[s] * d;
    for (std::size_t h = 0; h < heads; ++h) {
      const auto dhi = static_cast<Eigen::Index>(dh);
      ConstStridedMap qs(qv.data.data() + base + h * dh, len, dhi, stride);
      ConstStridedMap ks(kv.data.data() + base + h * dh, len, dhi, stride);
      ConstStridedMap vs(vv.data.data() + base + h * dh, len, dhi, stride);
      RowMat& p = (*probs)[s * heads + h];
      p.noalias() = (qs * ks.transpose()) * scl;
      for (Eigen::Index r = 0; r < len; ++r) {
        const double mx = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
      }
      StridedMap os(out.data.data() + base + h * dh, len, dhi, stride);
      os.noalias() = p * vs;
    }
  }
  return q.tape->record(
      "attention", std::move(out), {q, k, v},
      [probs, segments, offsets, heads, d, dh, scl](BackwardContext& ctx) {
        auto gy = ctx.out_grad();
        const auto& qv = ctx.input(0);
        const auto& kv = ctx.input(1);
        const auto& vv = ctx.input(2);
        auto gq = ctx.input_grad(0);
        auto gk = ctx.input_grad(1);
        auto gv = ctx.input_grad(2);
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
        const auto dhi = static_cast<Eigen::Index>(dh);
        for (std::size_t s = 0; s < segments.count(); ++s) {
          const auto len = static_cast<Eigen::Index>(segments.lengths[s]);
          if (len == 0) continue;
          const std::size_t base = offsets[s] * d;
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t at = base + h * dh;
            const RowMat& p = (*probs)[s * heads + h];
            ConstStridedMap go(gy.data() + at, len, dhi, stride);
            ConstStridedMap qs(qv.data.data() + at, len, dhi, stride);
            ConstStridedMap ks(kv.data.data() + at, len, dhi, stride);
            ConstStridedMap vs(vv.data.data() + at, len, dhi, stride);
            if (!gv.empty()) {
              StridedMap(gv.data() + at, len, dhi, stride).noalias() += p.transpose() * go;
            }
            if (gq.empty() && gk.empty()) continue;
            RowMat dp = go * vs.transpose();
            for (Eigen::Index r = 0; r < len; ++r) {
              const double dot = dp.row(r).dot(p.row(r));
              dp.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
            }
            if (!gq.empty()) {
              StridedMap(gq.data() + at, len, dhi, stride).noalias() += (dp * ks) * scl;
            }
            if (!gk.empty()) {
              StridedMap(gk.data() + at, len, dhi, stride).noalias() += (dp.transpose() * qs) * scl;
            }
          }
        }
      });
}

Var transpose(Var x) {
  const Tensor& xv = x.value();
  require_rank2("transpose", xv);
  const std::size_t r = xv.dim(0), c = xv.dim(1);
  Tensor out({c, r});
  as_mat(out) = as_mat(xv).transpose();
  return x.tape->record("transpose", std::move(out), {x}, [r, c](BackwardContext& ctx) {
    auto gx = ctx.input_grad(0);
    if (gx.empty()) return;
    as_mat(gx, r, c) += as_mat(ctx.out_grad(), c, r).transpose();
  });
}

Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length) {
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis("slice", xv.shape, axis);
  if (start + length > s.n) {
    shape_error("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") exceeds axis " + std::to_string(axis),
                xv.shape);
  }
  Shape oshape = xv.shape;
  oshape[axis] = length;
  Tensor out(oshape);
  const std::size_t chunk = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data.data() + (o * s.n + start) * s.inner, chunk, out.data.data() + o * chunk);
  }
  return x.tape->record("slice", std::move(out), {x}, [s, start, chunk](BackwardContext& ctx) {
    auto gx = ctx.input_grad(0);
    if (gx.empty()) return;
    auto gy = ctx.out_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = gx.data() + (o * s.n + start) * s.inner;
      const double* src = gy.data() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
}

Var concat(const std::vector<Var>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = xs.front().shape();
  split_axis("concat", first, axis);
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const Var& v : xs) {
    require_same_tape("concat", xs.front(), v);
    const Shape& sh = v.shape();
    bool ok = sh.size() == first.size();
    for (std::size_t i = 0; ok && i < sh.size(); ++i) ok = (i == axis) || sh[i] == first[i];
    if (!ok) shape_error("concat", first, sh);
    extents.push_back(sh[axis]);
    total += sh[axis];
  }
  Shape oshape = first;
  oshape[axis] = total;
  const AxisSplit os = split_axis("concat", oshape, axis);
  Tensor out(oshape);
  std::size_t at = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor& xv = xs[i].value();
    const std::size_t chunk = extents[i] * os.inner;
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(xv.data.data() + o * chunk, chunk, out.data.data() + (o * total + at) * os.inner);
    }
    at += extents[i];
  }
  return xs.front().tape->record("concat", std::move(out), xs,
                                 [extents, os, total](BackwardContext& ctx) {
    auto gy = ctx.out_grad();
    std::size_t at = 0;
    for (std::size_t i = 0; i < extents.size(); ++i) {
      const std::size_t chunk = extents[i] * os.inner;
      if (auto gx = ctx.input_grad(i); !gx.empty()) {
        for (std::size_t o = 0; o < os.outer; ++o) {
          const double* src = gy.data() + (o * total + at) * os.inner;
          for (std::size_t j = 0; j < chunk; ++j) gx[o * chunk + j] += src[j];
        }
      }
      at += extents[i];
    }
  });
}

namespace {

Var reduce_axis(const char* op, Var x, std::size_t axis, double factor) {
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis(op, xv.shape, axis);
  Tensor out(drop_axis(xv.shape, axis));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.n; ++j) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        out[o * s.inner + in] += xv[(o * s.n + j) * s.inner + in];
      }
    }
  }
  for (double& v : out.data) v *= factor;
  return x.tape->record(op, std::move(out), {x}, [s, factor](BackwardContext& ctx) {
    auto gx = ctx.input_grad(0);
    if (gx.empty()) return;
    auto gy = ctx.out_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < s.n; ++j) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          gx[(o * s.n + j) * s.inner + in] += gy[o * s.inner + in] * factor;
        }
      }
    }
  });
}

}  // namespace

Var sum(Var x, std::size_t axis) { return reduce_axis("sum", x, axis, 1.0); }

Var mean(Var x, std::size_t axis) {
  const AxisSplit s = split_axis("mean", x.shape(), axis);
  if (s.n == 0) shape_error("mean", "cannot average an empty axis", x.shape());
  return reduce_axis("mean", x, axis, 1.0 / static_cast<double>(s.n));
}

Var sum_all(Var x) {
  const Tensor& xv = x.value();
  double acc = 0.0;
  for (double v : xv.data) acc += v;
  return x.tape->record("sum_all", Tensor::scalar(acc), {x}, [](BackwardContext& ctx) {
    auto gx = ctx.input_grad(0);
    const double g = ctx.out_grad()[0];
    for (double& v : gx) v += g;
  });
}

Var dropout(Var x, double p, Rng& rng, bool train) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must lie in [0, 1)");
  if (!train || p == 0.0) return x;
  const Tensor& xv = x.value();
  const double keep = 1.0 - p;
  auto mask = std::make_shared<std::vector<double>>(xv.size());
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    (*mask)[i] = uniform01(rng) < keep ? 1.0 / keep : 0.0;
    out[i] = xv[i] * (*mask)[i];
  }
  return x.tape->record("dropout", std::move(out), {x}, [mask](BackwardContext& ctx) {
    auto gx = ctx.input_grad(0);
    auto gy = ctx.out_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * (*mask)[i];
  });
}

}  // namespace dynenc::grad
