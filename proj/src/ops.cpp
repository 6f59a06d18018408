#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "dvt/autodiff.hpp"
#include "dvt/error.hpp"

namespace dvt {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

enum class Broadcast { same, leading, scalar };

Broadcast broadcast_kind(std::string_view op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::same;
  if (b.empty()) return Broadcast::scalar;
  if (!a.empty() && b == Shape(a.begin() + 1, a.end())) return Broadcast::leading;
  throw ShapeError(std::string(op) + ": cannot combine shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

void same_tape(std::string_view op, Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw Error(std::string(op) + ": operands live on different tapes");
  }
}

// Index of the right operand element paired with left element i.
inline std::size_t rhs_index(Broadcast kind, std::size_t i, std::size_t b_size) {
  switch (kind) {
    case Broadcast::same:
      return i;
    case Broadcast::leading:
      return i % b_size;
    case Broadcast::scalar:
      return 0;
  }
  return 0;
}

template <typename Fwd, typename Bwd>
Var binary(std::string_view op, Var a, Var b, Fwd fwd, Bwd bwd) {
  same_tape(op, a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast kind = broadcast_kind(op, av.shape(), bv.shape());
  Tensor out(av.shape());
  const std::size_t bs = bv.size();
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[rhs_index(kind, i, bs)]);
  return a.tape->record(
      op, std::move(out), {a, b},
      [kind, bwd](const Tensor& g, const Tensor& y, std::span<const Tensor* const> in,
                  std::span<Tensor* const> gin) {
        const Tensor& x0 = *in[0];
        const Tensor& x1 = *in[1];
        const std::size_t bs = x1.size();
        for (std::size_t i = 0; i < x0.size(); ++i) {
          const std::size_t j = rhs_index(kind, i, bs);
          double da = 0.0, db = 0.0;
          bwd(x0[i], x1[j], y[i], da, db);
          if (gin[0]) (*gin[0])[i] += g[i] * da;
          if (gin[1]) (*gin[1])[j] += g[i] * db;
        }
      });
}

template <typename Fwd, typename Deriv>
Var unary(std::string_view op, Var a, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return a.tape->record(op, std::move(out), {a},
                        [deriv](const Tensor& g, const Tensor& y,
                                std::span<const Tensor* const> in,
                                std::span<Tensor* const> gin) {
                          const Tensor& x = *in[0];
                          Tensor& gx = *gin[0];
                          for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * deriv(x[i], y[i]);
                        });
}

Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

void require_rank(std::string_view op, const Tensor& t, std::size_t min_rank) {
  if (t.rank() < min_rank) {
    throw ShapeError(std::string(op) + ": needs rank >= " + std::to_string(min_rank) +
                     ", got shape " + shape_string(t.shape()));
  }
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double, double& da, double& db) {
        da = 1.0;
        db = 1.0;
      });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double, double& da, double& db) {
        da = 1.0;
        db = -1.0;
      });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double, double& da, double& db) {
        da = y;
        db = x;
      });
}

Var div(Var a, Var b) {
  for (double v : b.value().values()) {
    if (v == 0.0) throw NumericError("div: division by zero");
  }
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double out, double& da, double& db) {
        da = 1.0 / y;
        db = -out / y;
      });
}

Var add_scalar(Var a, double c) {
  return unary(
      "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var mul_scalar(Var a, double c) {
  return unary(
      "mul_scalar", a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Var neg(Var a) { return mul_scalar(a, -1.0); }

Var matmul(Var a, Var b) {
  same_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
                     shape_string(bv.shape()));
  }
  const auto m = static_cast<Eigen::Index>(av.dim(0));
  const auto k = static_cast<Eigen::Index>(av.dim(1));
  const auto n = static_cast<Eigen::Index>(bv.dim(1));
  Tensor out(Shape{av.dim(0), bv.dim(1)});
  MutMap(out.data(), m, n).noalias() = ConstMap(av.data(), m, k) * ConstMap(bv.data(), k, n);
  return a.tape->record("matmul", std::move(out), {a, b},
                        [m, k, n](const Tensor& g, const Tensor&, std::span<const Tensor* const> in,
                                  std::span<Tensor* const> gin) {
                          ConstMap gm(g.data(), m, n);
                          if (gin[0]) {
                            MutMap(gin[0]->data(), m, k).noalias() +=
                                gm * ConstMap(in[1]->data(), k, n).transpose();
                          }
                          if (gin[1]) {
                            MutMap(gin[1]->data(), k, n).noalias() +=
                                ConstMap(in[0]->data(), m, k).transpose() * gm;
                          }
                        });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input " + std::to_string(v));
  }
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Var a) {
  return unary(
      "softplus", a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return stable_sigmoid(x); });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a, [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.values()) s += v;
  return a.tape->record("sum", Tensor::scalar(s), {a},
                        [](const Tensor& g, const Tensor&, std::span<const Tensor* const>,
                           std::span<Tensor* const> gin) {
                          const double gv = g[0];
                          for (double& v : gin[0]->values()) v += gv;
                        });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_last(Var a) {
  const Tensor& av = a.value();
  require_rank("sum_last", av, 1);
  const std::size_t cols = av.cols();
  const std::size_t rows = cols ? av.size() / cols : 0;
  Tensor out(drop_last(av.shape()));
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += av[r * cols + c];
    out[r] = s;
  }
  return a.tape->record("sum_last", std::move(out), {a},
                        [rows, cols](const Tensor& g, const Tensor&,
                                     std::span<const Tensor* const>,
                                     std::span<Tensor* const> gin) {
                          Tensor& gx = *gin[0];
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r];
                          }
                        });
}

Var softmax(Var a) {
  const Tensor& av = a.value();
  require_rank("softmax", av, 1);
  const std::size_t cols = av.cols();
  const std::size_t rows = av.size() / cols;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double* y = out.data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  return a.tape->record("softmax", std::move(out), {a},
                        [rows, cols](const Tensor& g, const Tensor& y,
                                     std::span<const Tensor* const>,
                                     std::span<Tensor* const> gin) {
                          Tensor& gx = *gin[0];
                          for (std::size_t r = 0; r < rows; ++r) {
                            const std::size_t o = r * cols;
                            double dot = 0.0;
                            for (std::size_t c = 0; c < cols; ++c) dot += g[o + c] * y[o + c];
                            for (std::size_t c = 0; c < cols; ++c) {
                              gx[o + c] += y[o + c] * (g[o + c] - dot);
                            }
                          }
                        });
}

Var log_softmax(Var a) {
  const Tensor& av = a.value();
  require_rank("log_softmax", av, 1);
  const std::size_t cols = av.cols();
  const std::size_t rows = av.size() / cols;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double* y = out.data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) y[c] = x[c] - lse;
  }
  return a.tape->record("log_softmax", std::move(out), {a},
                        [rows, cols](const Tensor& g, const Tensor& y,
                                     std::span<const Tensor* const>,
                                     std::span<Tensor* const> gin) {
                          Tensor& gx = *gin[0];
                          for (std::size_t r = 0; r < rows; ++r) {
                            const std::size_t o = r * cols;
                            double gs = 0.0;
                            for (std::size_t c = 0; c < cols; ++c) gs += g[o + c];
                            for (std::size_t c = 0; c < cols; ++c) {
                              gx[o + c] += g[o + c] - std::exp(y[o + c]) * gs;
                            }
                          }
                        });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor& first = parts[0].value();
  require_rank("concat", first, 1);
  const Shape lead = drop_last(first.shape());
  const std::size_t rows = shape_size(lead);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    same_tape("concat", parts[0], p);
    const Tensor& v = p.value();
    if (v.rank() != first.rank() || drop_last(v.shape()) != lead) {
      throw ShapeError("concat: cannot join shapes " + shape_string(first.shape()) + " and " +
                       shape_string(v.shape()));
    }
    widths.push_back(v.cols());
    total += v.cols();
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data() + r * widths[p], widths[p], out.data() + r * total + offset);
    }
    offset += widths[p];
  }
  return parts[0].tape->record(
      "concat", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
      [rows, total, widths](const Tensor& g, const Tensor&, std::span<const Tensor* const>,
                            std::span<Tensor* const> gin) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < widths.size(); ++p) {
          if (gin[p]) {
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t c = 0; c < widths[p]; ++c) {
                (*gin[p])[r * widths[p] + c] += g[r * total + offset + c];
              }
            }
          }
          offset += widths[p];
        }
      });
}

Var slice_last(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  require_rank("slice_last", av, 1);
  const std::size_t cols = av.cols();
  if (begin > end || end > cols) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for shape " + shape_string(av.shape()));
  }
  const std::size_t width = end - begin;
  const std::size_t rows = av.size() / cols;
  Shape out_shape = drop_last(av.shape());
  out_shape.push_back(width);
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * cols + begin, width, out.data() + r * width);
  }
  return a.tape->record("slice_last", std::move(out), {a},
                        [rows, cols, begin, width](const Tensor& g, const Tensor&,
                                                   std::span<const Tensor* const>,
                                                   std::span<Tensor* const> gin) {
                          Tensor& gx = *gin[0];
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t c = 0; c < width; ++c) {
                              gx[r * cols + begin + c] += g[r * width + c];
                            }
                          }
                        });
}

Var segment(Var flat, std::size_t offset, Shape shape) {
  const Tensor& fv = flat.value();
  if (fv.rank() != 1) throw ShapeError("segment: source must be a flat vector");
  const std::size_t n = shape_size(shape);
  if (offset + n > fv.size()) {
    throw ShapeError("segment: [" + std::to_string(offset) + ", " + std::to_string(offset + n) +
                     ") exceeds length " + std::to_string(fv.size()));
  }
  std::vector<double> values(fv.data() + offset, fv.data() + offset + n);
  return flat.tape->record("segment", Tensor(std::move(shape), std::move(values)), {flat},
                           [offset, n](const Tensor& g, const Tensor&,
                                       std::span<const Tensor* const>,
                                       std::span<Tensor* const> gin) {
                             for (std::size_t i = 0; i < n; ++i) (*gin[0])[offset + i] += g[i];
                           });
}

Var broadcast_last(Var a, std::size_t n) {
  const Tensor& av = a.value();
  Shape out_shape = av.shape();
  out_shape.push_back(n);
  Tensor out(out_shape);
  for (std::size_t i = 0; i < av.size(); ++i) std::fill_n(out.data() + i * n, n, av[i]);
  return a.tape->record("broadcast_last", std::move(out), {a},
                        [n](const Tensor& g, const Tensor&, std::span<const Tensor* const>,
                            std::span<Tensor* const> gin) {
                          Tensor& gx = *gin[0];
                          for (std::size_t i = 0; i < gx.size(); ++i) {
                            for (std::size_t c = 0; c < n; ++c) gx[i] += g[i * n + c];
                          }
                        });
}

Var sq_dist_to_rows(Var a, const Tensor& centers) {
  const Tensor& av = a.value();
  if (av.rank() != 2 || centers.rank() != 2 || av.dim(1) != centers.dim(1)) {
    throw ShapeError("sq_dist_to_rows: incompatible shapes " + shape_string(av.shape()) +
                     " and " + shape_string(centers.shape()));
  }
  const std::size_t b = av.dim(0), j = av.dim(1), k = centers.dim(0);
  Tensor out(Shape{b, k});
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t d = 0; d < j; ++d) {
        const double diff = av[r * j + d] - centers[c * j + d];
        s += diff * diff;
      }
      out[r * k + c] = s;
    }
  }
  return a.tape->record("sq_dist_to_rows", std::move(out), {a},
                        [centers, b, j, k](const Tensor& g, const Tensor&,
                                           std::span<const Tensor* const> in,
                                           std::span<Tensor* const> gin) {
                          const Tensor& x = *in[0];
                          Tensor& gx = *gin[0];
                          for (std::size_t r = 0; r < b; ++r) {
                            for (std::size_t c = 0; c < k; ++c) {
                              const double gv = 2.0 * g[r * k + c];
                              for (std::size_t d = 0; d < j; ++d) {
                                gx[r * j + d] += gv * (x[r * j + d] - centers[c * j + d]);
                              }
                            }
                          }
                        });
}

Var straight_through(Var relaxed, const Tensor& anchor) {
  const Tensor& rv = relaxed.value();
  require_rank("straight_through", rv, 1);
  if (anchor.shape() != rv.shape()) {
    throw ShapeError("straight_through: anchor shape " + shape_string(anchor.shape()) +
                     " vs relaxed shape " + shape_string(rv.shape()));
  }
  const std::size_t cols = rv.cols();
  const std::size_t rows = rv.size() / cols;
  Tensor out(rv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = anchor.data() + r * cols;
    // max_element returns the first maximum, which is the lowest-index tie.
    const std::size_t hot = static_cast<std::size_t>(std::max_element(row, row + cols) - row);
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      out[i] = (c == hot ? 1.0 : 0.0) + (rv[i] - anchor[i]);
    }
  }
  return relaxed.tape->record("straight_through", std::move(out), {relaxed},
                              [](const Tensor& g, const Tensor&, std::span<const Tensor* const>,
                                 std::span<Tensor* const> gin) {
                                Tensor& gx = *gin[0];
                                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                              });
}

}  // namespace dvt
