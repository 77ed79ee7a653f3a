#pragma once

// Differentiable op vocabulary. Every op takes and returns rank-2 values.
// Binary elementwise ops broadcast a dimension of size 1 against the other
// operand (row vectors, column vectors and 1x1 scalars).

#include <cmath>
#include <string>
#include <vector>

#include "prefdiff/autodiff/tape.hpp"

namespace prefdiff::ops {

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("ops: operands recorded on different tapes");
  return *a.tape;
}

struct Broadcast {
  std::size_t rows, cols;
  std::size_t ar, ac, br, bc;
};

inline Broadcast broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  const std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  auto dim = [&](std::size_t x, std::size_t y) -> std::size_t {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    throw ShapeError(std::string(op) + ": cannot broadcast " + a.shape_string() + " with " + b.shape_string());
  };
  return {dim(ar, br), dim(ac, bc), ar, ac, br, bc};
}

// Sum a full-size gradient down to an operand's (possibly broadcast) shape.
inline Tensor reduce_to(const Tensor& g, std::size_t rows, std::size_t cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Tensor out = Tensor::zeros(rows, cols);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t c = 0; c < g.cols(); ++c) out(rows == 1 ? 0 : r, cols == 1 ? 0 : c) += g(r, c);
  }
  return out;
}

template <class Fn>
Tensor map(const Tensor& x, Fn fn) {
  Tensor out = Tensor::zeros(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = fn(x.data[i]);
  return out;
}

}  // namespace detail

/// a @ b for [n x k] and [k x m].
inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: " + av.shape_string() + " @ " + bv.shape_string());
  }
  Tensor out = Tensor::zeros(av.rows(), bv.cols());
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  const int ai = a.id, bi = b.id;
  return t.push(std::move(out), t.requires_grad(ai) || t.requires_grad(bi), [ai, bi](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(ai);
    const Tensor& bv = tp.value(bi);
    if (tp.requires_grad(ai)) {
      Tensor ga = Tensor::zeros(av.rows(), av.cols());
      as_matrix(ga).noalias() = as_matrix(g) * as_matrix(bv).transpose();
      tp.accumulate(ai, ga);
    }
    if (tp.requires_grad(bi)) {
      Tensor gb = Tensor::zeros(bv.rows(), bv.cols());
      as_matrix(gb).noalias() = as_matrix(av).transpose() * as_matrix(g);
      tp.accumulate(bi, gb);
    }
  });
}

/// x @ w + b with b a [1 x m] row broadcast over rows.
inline Var affine(Var x, Var w, Var b) {
  Tape& t = detail::same_tape(x, w);
  detail::same_tape(x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw ShapeError("affine: input " + xv.shape_string() + ", weight " + wv.shape_string() + ", bias " +
                     bv.shape_string());
  }
  Tensor out = Tensor::zeros(xv.rows(), wv.cols());
  auto om = as_matrix(out);
  om.noalias() = as_matrix(xv) * as_matrix(wv);
  om.rowwise() += as_matrix(bv).row(0);
  const int xi = x.id, wi = w.id, bi = b.id;
  const bool rg = t.requires_grad(xi) || t.requires_grad(wi) || t.requires_grad(bi);
  return t.push(std::move(out), rg, [xi, wi, bi](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(xi);
    const Tensor& wv = tp.value(wi);
    auto gm = as_matrix(g);
    if (tp.requires_grad(xi)) {
      Tensor gx = Tensor::zeros(xv.rows(), xv.cols());
      as_matrix(gx).noalias() = gm * as_matrix(wv).transpose();
      tp.accumulate(xi, gx);
    }
    if (tp.requires_grad(wi)) {
      Tensor gw = Tensor::zeros(wv.rows(), wv.cols());
      as_matrix(gw).noalias() = as_matrix(xv).transpose() * gm;
      tp.accumulate(wi, gw);
    }
    if (tp.requires_grad(bi)) {
      Tensor gb = Tensor::zeros(1, wv.cols());
      as_matrix(gb) = gm.colwise().sum();
      tp.accumulate(bi, gb);
    }
  });
}

namespace detail {

template <class Fwd, class DA, class DB>
Var binary(Var a, Var b, const char* name, Fwd fwd, DA da, DB db) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast s = broadcast_shape(av, bv, name);
  Tensor out = Tensor::zeros(s.rows, s.cols);
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t c = 0; c < s.cols; ++c) {
      out(r, c) = fwd(av(s.ar == 1 ? 0 : r, s.ac == 1 ? 0 : c), bv(s.br == 1 ? 0 : r, s.bc == 1 ? 0 : c));
    }
  }
  const int ai = a.id, bi = b.id;
  const bool rg = t.requires_grad(ai) || t.requires_grad(bi);
  return t.push(std::move(out), rg, [ai, bi, s, da, db](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(ai);
    const Tensor& bv = tp.value(bi);
    const bool ga_on = tp.requires_grad(ai), gb_on = tp.requires_grad(bi);
    Tensor ga = ga_on ? Tensor::zeros(s.rows, s.cols) : Tensor{};
    Tensor gb = gb_on ? Tensor::zeros(s.rows, s.cols) : Tensor{};
    for (std::size_t r = 0; r < s.rows; ++r) {
      for (std::size_t c = 0; c < s.cols; ++c) {
        const double x = av(s.ar == 1 ? 0 : r, s.ac == 1 ? 0 : c);
        const double y = bv(s.br == 1 ? 0 : r, s.bc == 1 ? 0 : c);
        if (ga_on) ga(r, c) = g(r, c) * da(x, y);
        if (gb_on) gb(r, c) = g(r, c) * db(x, y);
      }
    }
    if (ga_on) tp.accumulate(ai, reduce_to(ga, s.ar, s.ac));
    if (gb_on) tp.accumulate(bi, reduce_to(gb, s.br, s.bc));
  });
}

template <class Fwd, class Deriv>
Var elementwise(Var x, Fwd fwd, Deriv deriv) {
  Tape& t = *x.tape;
  const int xi = x.id;
  Tensor out = map(x.value(), fwd);
  return t.push(std::move(out), t.requires_grad(xi), [xi, deriv](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(xi);
    Tensor gx = Tensor::zeros(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) gx.data[i] = g.data[i] * deriv(xv.data[i]);
    tp.accumulate(xi, gx);
  });
}

inline double softplus_value(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}
inline Var sub(Var a, Var b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}
inline Var mul(Var a, Var b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Var scale(Var x, double c) {
  return detail::elementwise(x, [c](double v) { return c * v; }, [c](double) { return c; });
}
inline Var shift(Var x, double c) {
  return detail::elementwise(x, [c](double v) { return v + c; }, [](double) { return 1.0; });
}
/// ReLU with subgradient 0 at the kink.
inline Var relu(Var x) {
  return detail::elementwise(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v) { return v > 0 ? 1.0 : 0.0; });
}
inline Var tanh(Var x) {
  return detail::elementwise(
      x, [](double v) { return std::tanh(v); },
      [](double v) {
        const double th = std::tanh(v);
        return 1.0 - th * th;
      });
}
inline Var softplus(Var x) {
  return detail::elementwise(x, detail::softplus_value, detail::sigmoid_value);
}
/// log(sigmoid(x)) = -softplus(-x), computed stably.
inline Var log_sigmoid(Var x) {
  return detail::elementwise(
      x, [](double v) { return -detail::softplus_value(-v); }, [](double v) { return detail::sigmoid_value(-v); });
}
inline Var square(Var x) {
  return detail::elementwise(x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}
inline Var sqrt(Var x) {
  return detail::elementwise(
      x,
      [](double v) {
        if (v < 0) throw std::domain_error("sqrt of negative value");
        return std::sqrt(v);
      },
      [](double v) { return 0.5 / std::sqrt(v); });
}
inline Var log(Var x) {
  return detail::elementwise(
      x,
      [](double v) {
        if (v <= 0) throw std::domain_error("log of non-positive value");
        return std::log(v);
      },
      [](double v) { return 1.0 / v; });
}

/// Sum of all entries -> 1x1.
inline Var sum(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = x.value();
  double s = 0;
  for (double v : xv.data) s += v;
  const int xi = x.id;
  return t.push(Tensor::scalar(s), t.requires_grad(xi), [xi](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(xi);
    tp.accumulate(xi, Tensor::filled(xv.rows(), xv.cols(), g.item()));
  });
}

/// Mean of all entries -> 1x1.
inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Per-row sum -> [n x 1].
inline Var row_sum(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = x.value();
  Tensor out = Tensor::zeros(xv.rows(), 1);
  as_matrix(out) = as_matrix(xv).rowwise().sum();
  const int xi = x.id;
  return t.push(std::move(out), t.requires_grad(xi), [xi](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(xi);
    Tensor gx = Tensor::zeros(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r)
      for (std::size_t c = 0; c < xv.cols(); ++c) gx(r, c) = g(r, 0);
    tp.accumulate(xi, gx);
  });
}

/// Per-row mean -> [n x 1].
inline Var row_mean(Var x) { return scale(row_sum(x), 1.0 / static_cast<double>(x.cols())); }

/// Horizontal concatenation of blocks with equal row counts.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& t = *parts.front().tape;
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  bool rg = false;
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    if (p.tape != &t) throw std::invalid_argument("concat_cols: operands recorded on different tapes");
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: row mismatch " + p.value().shape_string() + " vs " + std::to_string(rows) +
                       " rows");
    }
    cols += p.cols();
    rg = rg || t.requires_grad(p.id);
    ids.push_back(p.id);
    widths.push_back(p.cols());
  }
  Tensor out = Tensor::zeros(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, off + c) = v(r, c);
    off += v.cols();
  }
  return t.push(std::move(out), rg, [ids, widths, rows](Tape& tp, const Tensor& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) {
        Tensor gk = Tensor::zeros(rows, widths[k]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) gk(r, c) = g(r, off + c);
        tp.accumulate(ids[k], gk);
      }
      off += widths[k];
    }
  });
}

/// Row-major reinterpretation with the same element count.
inline Var reshape(Var x, std::size_t rows, std::size_t cols) {
  Tape& t = *x.tape;
  const Tensor& xv = x.value();
  if (rows * cols != xv.size()) {
    throw ShapeError("reshape: " + xv.shape_string() + " to [" + std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
  Tensor out({rows, cols}, xv.data);
  const int xi = x.id;
  return t.push(std::move(out), t.requires_grad(xi), [xi](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(xi);
    tp.accumulate(xi, Tensor(xv.shape, g.data));
  });
}

}  // namespace prefdiff::ops
