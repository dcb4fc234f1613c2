#include "wsl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "wsl/error.hpp"

namespace wsl::tc {

using detail::grad_ptr;
using detail::make_result;

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& what) {
  throw ValidationError(std::string(op) + ": " + what);
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    shape_error(op, "expected rank " + std::to_string(rank) + ", got shape " + shape_str(x.shape()));
  }
}

// Flat index maps from the broadcast output onto each operand.
struct BroadcastPlan {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia, ib;
};

BroadcastPlan broadcast_plan(const char* op, const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const std::size_t r = std::max(a.size(), b.size());
  plan.out.assign(r, 1);
  std::vector<std::size_t> sa(r, 0), sb(r, 0);
  std::size_t stride_a = 1, stride_b = 1;
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t axis = r - 1 - k;
    const std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) {
      shape_error(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    plan.out[axis] = std::max(da, db);
    sa[axis] = da == 1 ? 0 : stride_a;
    sb[axis] = db == 1 ? 0 : stride_b;
    stride_a *= da;
    stride_b *= db;
  }
  const std::size_t n = numel(plan.out);
  plan.ia.resize(n);
  plan.ib.resize(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    plan.ia[i] = oa;
    plan.ib[i] = ob;
    for (std::size_t axis = r; axis-- > 0;) {
      ++idx[axis];
      oa += sa[axis];
      ob += sb[axis];
      if (idx[axis] < plan.out[axis]) break;
      oa -= sa[axis] * idx[axis];
      ob -= sb[axis] * idx[axis];
      idx[axis] = 0;
    }
  }
  return plan;
}

template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  auto plan = broadcast_plan(op, a.shape(), b.shape());
  const std::size_t n = numel(plan.out);
  std::vector<double> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  if (plan.same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i], bd[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[plan.ia[i]], bd[plan.ib[i]]);
  }
  Shape shape = plan.out;
  return make_result(op, std::move(shape), std::move(out), {a, b}, [a, b, plan = std::move(plan), dfa, dfb](const Node& o) {
    double* ga = grad_ptr(a);
    double* gb = grad_ptr(b);
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const std::size_t ka = plan.same ? i : plan.ia[i];
      const std::size_t kb = plan.same ? i : plan.ib[i];
      if (ga) ga[ka] += o.grad[i] * dfa(ad[ka], bd[kb], o.data[i]);
      if (gb) gb[kb] += o.grad[i] * dfb(ad[ka], bd[kb], o.data[i]);
    }
  });
}

template <class F, class D>
Tensor unary(const char* op, const Tensor& x, F f, D df) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  return make_result(op, x.shape(), std::move(out), {x}, [x, df](const Node& o) {
    double* gx = grad_ptr(x);
    const auto xd = x.data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i] * df(xd[i], o.data[i]);
  });
}

// Splits a shape around `axis` into (outer, axis extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size()) shape_error(op, "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out.empty()) out.push_back(1);
  }
  return out;
}

double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      "add_scalar", x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x, [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
      [](double v, double) { return sigmoid_scalar(v); });
}

// ----------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
  const auto xd = x.data();
  const double s = std::accumulate(xd.begin(), xd.end(), 0.0);
  return make_result("sum", {1}, {s}, {x}, [x](const Node& o) {
    double* gx = grad_ptr(x);
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += o.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / double(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto sp = split_axis("sum_axis", x.shape(), axis);
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.extent; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += xd[(o * sp.extent + k) * sp.inner + i];
  return make_result("sum_axis", reduced_shape(x.shape(), axis, keepdim), std::move(out), {x}, [x, sp](const Node& n) {
    double* gx = grad_ptr(x);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.extent; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i) gx[(o * sp.extent + k) * sp.inner + i] += n.grad[o * sp.inner + i];
  });
}

Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  return scale(sum_axis(x, axis, keepdim), 1.0 / double(x.dim(axis)));
}

Tensor max_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto sp = split_axis("max_axis", x.shape(), axis);
  if (sp.extent == 0) shape_error("max_axis", "empty axis");
  std::vector<double> out(sp.outer * sp.inner, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> arg(out.size(), 0);
  const auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.extent; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t src = (o * sp.extent + k) * sp.inner + i;
        const std::size_t dst = o * sp.inner + i;
        if (xd[src] > out[dst]) {
          out[dst] = xd[src];
          arg[dst] = src;
        }
      }
  return make_result("max_axis", reduced_shape(x.shape(), axis, keepdim), std::move(out), {x},
                     [x, arg = std::move(arg)](const Node& n) {
                       double* gx = grad_ptr(x);
                       for (std::size_t j = 0; j < arg.size(); ++j) gx[arg[j]] += n.grad[j];
                     });
}

// ---------------------------------------------------------------------- shape

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    shape_error("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [x](const Node& n) {
    double* gx = grad_ptr(x);
    for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const auto& s = x.shape();
  if (order.size() != s.size()) shape_error("permute", "order length does not match rank");
  std::vector<bool> seen(s.size(), false);
  for (auto a : order) {
    if (a >= s.size() || seen[a]) shape_error("permute", "order is not a permutation");
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(s.size(), 1);
  for (std::size_t k = s.size(); k-- > 1;) in_stride[k - 1] = in_stride[k] * s[k];
  Shape out_shape(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) out_shape[k] = s[order[k]];
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < s.size(); ++k) off += idx[k] * in_stride[order[k]];
    src[i] = off;
    for (std::size_t k = s.size(); k-- > 0;) {
      if (++idx[k] < out_shape[k]) break;
      idx[k] = 0;
    }
  }
  std::vector<double> out(n);
  const auto xd = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = xd[src[i]];
  return make_result("permute", std::move(out_shape), std::move(out), {x}, [x, src = std::move(src)](const Node& nd) {
    double* gx = grad_ptr(x);
    for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += nd.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  require_rank("transpose", x, 2);
  return permute(x, {1, 0});
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto sp = split_axis("narrow", x.shape(), axis);
  if (start + length > sp.extent) shape_error("narrow", "slice exceeds axis extent");
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> out(sp.outer * length * sp.inner);
  const auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>((o * sp.extent + start) * sp.inner), length * sp.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * sp.inner));
  }
  return make_result("narrow", std::move(out_shape), std::move(out), {x}, [x, sp, start, length](const Node& n) {
    double* gx = grad_ptr(x);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < length * sp.inner; ++j)
        gx[(o * sp.extent + start) * sp.inner + j] += n.grad[o * length * sp.inner + j];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  const auto& ref = parts.front().shape();
  if (axis >= ref.size()) shape_error("concat", "axis out of range");
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != ref.size()) shape_error("concat", "rank mismatch");
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (k != axis && s[k] != ref[k]) shape_error("concat", "shape mismatch " + shape_str(s) + " vs " + shape_str(ref));
    }
    extents.push_back(s[axis]);
    total += s[axis];
  }
  const auto sp = split_axis("concat", ref, axis);
  Shape out_shape = ref;
  out_shape[axis] = total;
  std::vector<double> out(sp.outer * total * sp.inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto pd = parts[p].data();
    const std::size_t chunk = extents[p] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * total * sp.inner + offset * sp.inner));
    }
    offset += extents[p];
  }
  return make_result("concat", std::move(out_shape), std::move(out), parts,
                     [parts, extents, sp, total](const Node& n) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < parts.size(); ++p) {
                         const std::size_t chunk = extents[p] * sp.inner;
                         if (double* g = grad_ptr(parts[p])) {
                           for (std::size_t o = 0; o < sp.outer; ++o)
                             for (std::size_t j = 0; j < chunk; ++j)
                               g[o * chunk + j] += n.grad[o * total * sp.inner + offset * sp.inner + j];
                         }
                         offset += extents[p];
                       }
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> columns) {
  require_rank("gather_rows", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (columns.size() != rows) shape_error("gather_rows", "need one column index per row");
  std::vector<std::size_t> idx(rows);
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (columns[r] >= cols) shape_error("gather_rows", "column index out of range");
    idx[r] = r * cols + columns[r];
    out[r] = x.data()[idx[r]];
  }
  return make_result("gather_rows", {rows}, std::move(out), {x}, [x, idx = std::move(idx)](const Node& n) {
    double* gx = grad_ptr(x);
    for (std::size_t r = 0; r < idx.size(); ++r) gx[idx[r]] += n.grad[r];
  });
}

// --------------------------------------------------------------------- linear

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) shape_error("matmul", "inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(n * m, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += av * bd[p * m + j];
    }
  return make_result("matmul", {n, m}, std::move(out), {a, b}, [a, b, n, k, m](const Node& o) {
    const auto ad = a.data();
    const auto bd = b.data();
    if (double* ga = grad_ptr(a)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += o.grad[i * m + j] * bd[p * m + j];
          ga[i * k + p] += s;
        }
    }
    if (double* gb = grad_ptr(b)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = ad[i * k + p];
          for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += av * o.grad[i * m + j];
        }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in) {
    shape_error("linear", "input width " + std::to_string(in) + " does not match weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && bias.numel() != out_dim) shape_error("linear", "bias length mismatch");
  std::vector<double> out(n * out_dim);
  const auto xd = x.data();
  const auto wd = weight.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out_dim; ++o) {
      double s = bias.defined() ? bias.data()[o] : 0.0;
      for (std::size_t p = 0; p < in; ++p) s += xd[i * in + p] * wd[o * in + p];
      out[i * out_dim + o] = s;
    }
  return make_result("linear", {n, out_dim}, std::move(out), {x, weight, bias},
                     [x, weight, bias, n, in, out_dim](const Node& nd) {
                       const auto xd = x.data();
                       const auto wd = weight.data();
                       double* gx = grad_ptr(x);
                       double* gw = grad_ptr(weight);
                       double* gb = grad_ptr(bias);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t o = 0; o < out_dim; ++o) {
                           const double g = nd.grad[i * out_dim + o];
                           if (g == 0.0) continue;
                           if (gb) gb[o] += g;
                           for (std::size_t p = 0; p < in; ++p) {
                             if (gx) gx[i * in + p] += g * wd[o * in + p];
                             if (gw) gw[o * in + p] += g * xd[i * in + p];
                           }
                         }
                     });
}

// -------------------------------------------------------------- normalization

Tensor softmax(const Tensor& x) {
  const std::size_t last = x.shape().back();
  const std::size_t rows = x.numel() / last;
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * last;
    const double mx = *std::max_element(row, row + last);
    double z = 0.0;
    for (std::size_t j = 0; j < last; ++j) z += (out[r * last + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < last; ++j) out[r * last + j] /= z;
  }
  return make_result("softmax", x.shape(), std::move(out), {x}, [x, rows, last](const Node& n) {
    double* gx = grad_ptr(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < last; ++j) dot += n.grad[r * last + j] * n.data[r * last + j];
      for (std::size_t j = 0; j < last; ++j) gx[r * last + j] += n.data[r * last + j] * (n.grad[r * last + j] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t last = x.shape().back();
  const std::size_t rows = x.numel() / last;
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * last;
    const double mx = *std::max_element(row, row + last);
    double z = 0.0;
    for (std::size_t j = 0; j < last; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < last; ++j) out[r * last + j] = row[j] - lse;
  }
  return make_result("log_softmax", x.shape(), std::move(out), {x}, [x, rows, last](const Node& n) {
    double* gx = grad_ptr(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < last; ++j) gsum += n.grad[r * last + j];
      for (std::size_t j = 0; j < last; ++j) {
        gx[r * last + j] += n.grad[r * last + j] - std::exp(n.data[r * last + j]) * gsum;
      }
    }
  });
}

namespace {

// Shared normalize-along-axis kernel for layer and batch norm. `groups` lists,
// per normalization group, the flat indices it covers; gamma/beta are indexed
// through `param_index`.
struct NormGroups {
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::size_t> param_index;  // per flat element
};

Tensor normalize_groups(const char* op, const Tensor& x, const Tensor& gamma, const Tensor& beta, NormGroups groups,
                        const std::vector<double>& means, const std::vector<double>& inv_std, bool batch_stats) {
  const auto xd = x.data();
  std::vector<double> xhat(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t g = 0; g < groups.members.size(); ++g) {
    for (auto i : groups.members[g]) {
      xhat[i] = (xd[i] - means[g]) * inv_std[g];
      const auto p = groups.param_index[i];
      out[i] = xhat[i] * gamma.data()[p] + beta.data()[p];
    }
  }
  return make_result(op, x.shape(), std::move(out), {x, gamma, beta},
                     [x, gamma, beta, groups = std::move(groups), xhat = std::move(xhat), inv_std, batch_stats](
                         const Node& n) {
                       double* gx = grad_ptr(x);
                       double* gg = grad_ptr(gamma);
                       double* gb = grad_ptr(beta);
                       const auto gd = gamma.data();
                       for (std::size_t g = 0; g < groups.members.size(); ++g) {
                         const auto& idx = groups.members[g];
                         double mean_gh = 0.0, mean_ghx = 0.0;
                         for (auto i : idx) {
                           const auto p = groups.param_index[i];
                           if (gg) gg[p] += n.grad[i] * xhat[i];
                           if (gb) gb[p] += n.grad[i];
                           const double gh = n.grad[i] * gd[p];
                           mean_gh += gh;
                           mean_ghx += gh * xhat[i];
                         }
                         if (!gx) continue;
                         mean_gh /= double(idx.size());
                         mean_ghx /= double(idx.size());
                         for (auto i : idx) {
                           const double gh = n.grad[i] * gd[groups.param_index[i]];
                           gx[i] += batch_stats ? inv_std[g] * (gh - mean_gh - xhat[i] * mean_ghx) : inv_std[g] * gh;
                         }
                       }
                     });
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t axis, double eps) {
  const auto sp = split_axis("layer_norm", x.shape(), axis);
  if (gamma.numel() != sp.extent || beta.numel() != sp.extent) shape_error("layer_norm", "affine size mismatch");
  NormGroups groups;
  groups.param_index.resize(x.numel());
  std::vector<double> means, inv_std;
  const auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::vector<std::size_t> idx(sp.extent);
      double mu = 0.0;
      for (std::size_t k = 0; k < sp.extent; ++k) {
        idx[k] = (o * sp.extent + k) * sp.inner + i;
        groups.param_index[idx[k]] = k;
        mu += xd[idx[k]];
      }
      mu /= double(sp.extent);
      double var = 0.0;
      for (auto j : idx) var += (xd[j] - mu) * (xd[j] - mu);
      var /= double(sp.extent);
      means.push_back(mu);
      inv_std.push_back(1.0 / std::sqrt(var + eps));
      groups.members.push_back(std::move(idx));
    }
  return normalize_groups("layer_norm", x, gamma, beta, std::move(groups), means, inv_std, true);
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool training) {
  if (x.rank() < 1) shape_error("batch_norm", "need a channel axis");
  const auto sp = split_axis("batch_norm", x.shape(), 0);
  const std::size_t channels = sp.extent;
  if (gamma.numel() != channels || beta.numel() != channels || state.running_mean.numel() != channels ||
      state.running_var.numel() != channels) {
    shape_error("batch_norm", "parameter size does not match channel count");
  }
  NormGroups groups;
  groups.param_index.resize(x.numel());
  std::vector<double> means(channels), inv_std(channels);
  const auto xd = x.data();
  const std::size_t per = sp.inner;
  for (std::size_t c = 0; c < channels; ++c) {
    std::vector<std::size_t> idx(per);
    for (std::size_t i = 0; i < per; ++i) {
      idx[i] = c * per + i;
      groups.param_index[idx[i]] = c;
    }
    if (training) {
      double mu = 0.0;
      for (auto j : idx) mu += xd[j];
      mu /= double(per);
      double var = 0.0;
      for (auto j : idx) var += (xd[j] - mu) * (xd[j] - mu);
      const double unbiased = per > 1 ? var / double(per - 1) : 0.0;
      var /= double(per);
      means[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + state.eps);
      if (grad_enabled()) {
        auto rm = state.running_mean.mutable_data();
        auto rv = state.running_var.mutable_data();
        rm[c] = (1.0 - state.momentum) * rm[c] + state.momentum * mu;
        rv[c] = (1.0 - state.momentum) * rv[c] + state.momentum * unbiased;
      }
    } else {
      means[c] = state.running_mean.data()[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var.data()[c] + state.eps);
    }
    groups.members.push_back(std::move(idx));
  }
  return normalize_groups("batch_norm", x, gamma, beta, std::move(groups), means, inv_std, training);
}

// -------------------------------------------------------------------- pooling

namespace {

Tensor pool1d(const char* op, const Tensor& x, std::size_t kernel, std::size_t stride, bool is_max) {
  require_rank(op, x, 2);
  const std::size_t c = x.dim(0), len = x.dim(1);
  if (kernel == 0 || stride == 0 || kernel > len) shape_error(op, "invalid pooling geometry");
  const std::size_t out_len = (len - kernel) / stride + 1;
  std::vector<double> out(c * out_len);
  std::vector<std::size_t> arg(is_max ? out.size() : 0);
  const auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = 0; t < out_len; ++t) {
      const std::size_t base = ch * len + t * stride;
      if (is_max) {
        std::size_t best = base;
        for (std::size_t k = 1; k < kernel; ++k)
          if (xd[base + k] > xd[best]) best = base + k;
        out[ch * out_len + t] = xd[best];
        arg[ch * out_len + t] = best;
      } else {
        double s = 0.0;
        for (std::size_t k = 0; k < kernel; ++k) s += xd[base + k];
        out[ch * out_len + t] = s / double(kernel);
      }
    }
  return make_result(op, {c, out_len}, std::move(out), {x},
                     [x, c, len, out_len, kernel, stride, is_max, arg = std::move(arg)](const Node& n) {
                       double* gx = grad_ptr(x);
                       for (std::size_t ch = 0; ch < c; ++ch)
                         for (std::size_t t = 0; t < out_len; ++t) {
                           const double g = n.grad[ch * out_len + t];
                           if (is_max) {
                             gx[arg[ch * out_len + t]] += g;
                           } else {
                             for (std::size_t k = 0; k < kernel; ++k) gx[ch * len + t * stride + k] += g / double(kernel);
                           }
                         }
                     });
}

Tensor pool2d(const char* op, const Tensor& x, std::size_t kernel, std::size_t stride, bool is_max) {
  require_rank(op, x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (kernel == 0 || stride == 0 || kernel > h || kernel > w) shape_error(op, "invalid pooling geometry");
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  std::vector<double> out(c * oh * ow);
  std::vector<std::size_t> arg(is_max ? out.size() : 0);
  const auto xd = x.data();
  const double inv_area = 1.0 / double(kernel * kernel);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const std::size_t o = (ch * oh + y) * ow + xx;
        std::size_t best = (ch * h + y * stride) * w + xx * stride;
        double s = 0.0;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t src = (ch * h + y * stride + ky) * w + xx * stride + kx;
            s += xd[src];
            if (xd[src] > xd[best]) best = src;
          }
        if (is_max) {
          out[o] = xd[best];
          arg[o] = best;
        } else {
          out[o] = s * inv_area;
        }
      }
  return make_result(op, {c, oh, ow}, std::move(out), {x},
                     [x, c, h, w, oh, ow, kernel, stride, is_max, inv_area, arg = std::move(arg)](const Node& n) {
                       double* gx = grad_ptr(x);
                       for (std::size_t ch = 0; ch < c; ++ch)
                         for (std::size_t y = 0; y < oh; ++y)
                           for (std::size_t xx = 0; xx < ow; ++xx) {
                             const std::size_t o = (ch * oh + y) * ow + xx;
                             if (is_max) {
                               gx[arg[o]] += n.grad[o];
                               continue;
                             }
                             for (std::size_t ky = 0; ky < kernel; ++ky)
                               for (std::size_t kx = 0; kx < kernel; ++kx)
                                 gx[(ch * h + y * stride + ky) * w + xx * stride + kx] += n.grad[o] * inv_area;
                           }
                     });
}

// Adaptive pooling bin [start, end) for output index i of n over a length-len axis.
std::pair<std::size_t, std::size_t> adaptive_bin(std::size_t i, std::size_t n, std::size_t len) {
  const std::size_t start = (i * len) / n;
  const std::size_t end = ((i + 1) * len + n - 1) / n;
  return {start, end};
}

}  // namespace

Tensor max_pool1d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  return pool1d("max_pool1d", x, kernel, stride, true);
}
Tensor avg_pool1d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  return pool1d("avg_pool1d", x, kernel, stride, false);
}
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  return pool2d("max_pool2d", x, kernel, stride, true);
}
Tensor avg_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  return pool2d("avg_pool2d", x, kernel, stride, false);
}

Tensor adaptive_avg_pool1d(const Tensor& x, std::size_t out_len) {
  require_rank("adaptive_avg_pool1d", x, 2);
  const std::size_t c = x.dim(0), len = x.dim(1);
  if (out_len == 0 || out_len > len) shape_error("adaptive_avg_pool1d", "target larger than input");
  std::vector<double> out(c * out_len);
  const auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < out_len; ++i) {
      const auto [s, e] = adaptive_bin(i, out_len, len);
      double acc = 0.0;
      for (std::size_t k = s; k < e; ++k) acc += xd[ch * len + k];
      out[ch * out_len + i] = acc / double(e - s);
    }
  return make_result("adaptive_avg_pool1d", {c, out_len}, std::move(out), {x}, [x, c, len, out_len](const Node& n) {
    double* gx = grad_ptr(x);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < out_len; ++i) {
        const auto [s, e] = adaptive_bin(i, out_len, len);
        for (std::size_t k = s; k < e; ++k) gx[ch * len + k] += n.grad[ch * out_len + i] / double(e - s);
      }
  });
}

Tensor adaptive_avg_pool2d(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank("adaptive_avg_pool2d", x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (out_h == 0 || out_w == 0 || out_h > h || out_w > w) shape_error("adaptive_avg_pool2d", "target larger than input");
  std::vector<double> out(c * out_h * out_w);
  const auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto [ys, ye] = adaptive_bin(i, out_h, h);
        const auto [xs, xe] = adaptive_bin(j, out_w, w);
        double acc = 0.0;
        for (std::size_t y = ys; y < ye; ++y)
          for (std::size_t xx = xs; xx < xe; ++xx) acc += xd[(ch * h + y) * w + xx];
        out[(ch * out_h + i) * out_w + j] = acc / double((ye - ys) * (xe - xs));
      }
  return make_result("adaptive_avg_pool2d", {c, out_h, out_w}, std::move(out), {x},
                     [x, c, h, w, out_h, out_w](const Node& n) {
                       double* gx = grad_ptr(x);
                       for (std::size_t ch = 0; ch < c; ++ch)
                         for (std::size_t i = 0; i < out_h; ++i)
                           for (std::size_t j = 0; j < out_w; ++j) {
                             const auto [ys, ye] = adaptive_bin(i, out_h, h);
                             const auto [xs, xe] = adaptive_bin(j, out_w, w);
                             const double g = n.grad[(ch * out_h + i) * out_w + j] / double((ye - ys) * (xe - xs));
                             for (std::size_t y = ys; y < ye; ++y)
                               for (std::size_t xx = xs; xx < xe; ++xx) gx[(ch * h + y) * w + xx] += g;
                           }
                     });
}

Tensor upsample_nearest2d(const Tensor& x, std::size_t factor) {
  require_rank("upsample_nearest2d", x, 3);
  if (factor == 0) shape_error("upsample_nearest2d", "factor must be positive");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h * factor, ow = w * factor;
  std::vector<double> out(c * oh * ow);
  const auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) out[(ch * oh + y) * ow + xx] = xd[(ch * h + y / factor) * w + xx / factor];
  return make_result("upsample_nearest2d", {c, oh, ow}, std::move(out), {x}, [x, c, h, w, oh, ow, factor](const Node& n) {
    double* gx = grad_ptr(x);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx)
          gx[(ch * h + y / factor) * w + xx / factor] += n.grad[(ch * oh + y) * ow + xx];
  });
}

// ---------------------------------------------------------------- convolution

Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride, std::size_t padding) {
  require_rank("conv1d", x, 2);
  require_rank("conv1d", kernels, 3);
  const std::size_t cin = x.dim(0), len = x.dim(1);
  const std::size_t cout = kernels.dim(0), k = kernels.dim(2);
  if (kernels.dim(1) != cin) {
    shape_error("conv1d", "kernel expects " + std::to_string(kernels.dim(1)) + " input channels, got " + std::to_string(cin));
  }
  if (stride == 0 || k == 0 || k > len + 2 * padding) shape_error("conv1d", "invalid geometry");
  if (bias.defined() && bias.numel() != cout) shape_error("conv1d", "bias length mismatch");
  const std::size_t out_len = (len + 2 * padding - k) / stride + 1;
  std::vector<double> out(cout * out_len);
  const auto xd = x.data();
  const auto wd = kernels.data();
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t t = 0; t < out_len; ++t) {
      double s = bias.defined() ? bias.data()[o] : 0.0;
      for (std::size_t i = 0; i < cin; ++i)
        for (std::size_t q = 0; q < k; ++q) {
          const auto pos = static_cast<std::ptrdiff_t>(t * stride + q) - static_cast<std::ptrdiff_t>(padding);
          if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
          s += wd[(o * cin + i) * k + q] * xd[i * len + static_cast<std::size_t>(pos)];
        }
      out[o * out_len + t] = s;
    }
  return make_result("conv1d", {cout, out_len}, std::move(out), {x, kernels, bias},
                     [x, kernels, bias, cin, len, cout, k, out_len, stride, padding](const Node& n) {
                       const auto xd = x.data();
                       const auto wd = kernels.data();
                       double* gx = grad_ptr(x);
                       double* gw = grad_ptr(kernels);
                       double* gb = grad_ptr(bias);
                       for (std::size_t o = 0; o < cout; ++o)
                         for (std::size_t t = 0; t < out_len; ++t) {
                           const double g = n.grad[o * out_len + t];
                           if (gb) gb[o] += g;
                           for (std::size_t i = 0; i < cin; ++i)
                             for (std::size_t q = 0; q < k; ++q) {
                               const auto pos = static_cast<std::ptrdiff_t>(t * stride + q) - static_cast<std::ptrdiff_t>(padding);
                               if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
                               const std::size_t xi = i * len + static_cast<std::size_t>(pos);
                               const std::size_t wi = (o * cin + i) * k + q;
                               if (gx) gx[xi] += g * wd[wi];
                               if (gw) gw[wi] += g * xd[xi];
                             }
                         }
                     });
}

namespace {

Tensor conv2d_impl(const char* op, const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride,
                   std::size_t padding, bool flip) {
  require_rank(op, x, 3);
  require_rank(op, kernels, 4);
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != cin) {
    shape_error(op, "kernel expects " + std::to_string(kernels.dim(1)) + " input channels, got " + std::to_string(cin));
  }
  if (stride == 0 || kh == 0 || kw == 0 || kh > h + 2 * padding || kw > w + 2 * padding) {
    shape_error(op, "invalid geometry");
  }
  if (bias.defined() && bias.numel() != cout) shape_error(op, "bias length mismatch");
  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;
  auto widx = [=](std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) {
    if (flip) {
      ky = kh - 1 - ky;
      kx = kw - 1 - kx;
    }
    return ((o * cin + i) * kh + ky) * kw + kx;
  };
  std::vector<double> out(cout * oh * ow);
  const auto xd = x.data();
  const auto wd = kernels.data();
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double s = bias.defined() ? bias.data()[o] : 0.0;
        for (std::size_t i = 0; i < cin; ++i)
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const auto py = static_cast<std::ptrdiff_t>(y * stride + ky) - pad;
            if (py < 0 || py >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const auto px = static_cast<std::ptrdiff_t>(xx * stride + kx) - pad;
              if (px < 0 || px >= static_cast<std::ptrdiff_t>(w)) continue;
              s += wd[widx(o, i, ky, kx)] * xd[(i * h + static_cast<std::size_t>(py)) * w + static_cast<std::size_t>(px)];
            }
          }
        out[(o * oh + y) * ow + xx] = s;
      }
  return make_result(op, {cout, oh, ow}, std::move(out), {x, kernels, bias},
                     [x, kernels, bias, cin, h, w, cout, kh, kw, oh, ow, stride, pad, widx](const Node& n) {
                       const auto xd = x.data();
                       const auto wd = kernels.data();
                       double* gx = grad_ptr(x);
                       double* gw = grad_ptr(kernels);
                       double* gb = grad_ptr(bias);
                       for (std::size_t o = 0; o < cout; ++o)
                         for (std::size_t y = 0; y < oh; ++y)
                           for (std::size_t xx = 0; xx < ow; ++xx) {
                             const double g = n.grad[(o * oh + y) * ow + xx];
                             if (gb) gb[o] += g;
                             if (g == 0.0) continue;
                             for (std::size_t i = 0; i < cin; ++i)
                               for (std::size_t ky = 0; ky < kh; ++ky) {
                                 const auto py = static_cast<std::ptrdiff_t>(y * stride + ky) - pad;
                                 if (py < 0 || py >= static_cast<std::ptrdiff_t>(h)) continue;
                                 for (std::size_t kx = 0; kx < kw; ++kx) {
                                   const auto px = static_cast<std::ptrdiff_t>(xx * stride + kx) - pad;
                                   if (px < 0 || px >= static_cast<std::ptrdiff_t>(w)) continue;
                                   const std::size_t xi =
                                       (i * h + static_cast<std::size_t>(py)) * w + static_cast<std::size_t>(px);
                                   const std::size_t wi = widx(o, i, ky, kx);
                                   if (gx) gx[xi] += g * wd[wi];
                                   if (gw) gw[wi] += g * xd[xi];
                                 }
                               }
                           }
                     });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride, std::size_t padding) {
  return conv2d_impl("conv2d", x, kernels, bias, stride, padding, false);
}

Tensor reverse_conv2d_5x5(const Tensor& x, const Tensor& kernels, const Tensor& bias) {
  require_rank("reverse_conv2d_5x5", kernels, 4);
  if (kernels.dim(2) != 5 || kernels.dim(3) != 5) shape_error("reverse_conv2d_5x5", "kernel must be 5x5");
  return conv2d_impl("reverse_conv2d_5x5", x, kernels, bias, 1, 2, true);
}

// ------------------------------------------------------------ selective scan

Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& A, const Tensor& B, const Tensor& C,
                      const Tensor& skip) {
  require_rank("selective_scan", x, 2);
  const std::size_t steps = x.dim(0), d = x.dim(1);
  require_rank("selective_scan", A, 2);
  const std::size_t n = A.dim(1);
  if (delta.shape() != x.shape() || A.dim(0) != d || B.shape() != Shape{steps, n} || C.shape() != Shape{steps, n} ||
      skip.numel() != d) {
    shape_error("selective_scan", "inconsistent shapes: x " + shape_str(x.shape()) + ", delta " +
                                      shape_str(delta.shape()) + ", A " + shape_str(A.shape()) + ", B " +
                                      shape_str(B.shape()) + ", C " + shape_str(C.shape()));
  }
  const auto xd = x.data(), dd = delta.data(), ad = A.data(), bd = B.data(), cd = C.data(), sd = skip.data();
  // states[t] holds h_t; decay[t] holds exp(delta_t * A).
  std::vector<double> states(steps * d * n), decay(steps * d * n);
  std::vector<double> out(steps * d);
  std::vector<double> h(d * n, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t c = 0; c < d; ++c) {
      const double dt = dd[t * d + c];
      const double xv = xd[t * d + c];
      double y = sd[c] * xv;
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t k = c * n + s;
        const double a = std::exp(dt * ad[k]);
        h[k] = a * h[k] + dt * bd[t * n + s] * xv;
        decay[t * d * n + k] = a;
        states[t * d * n + k] = h[k];
        y += cd[t * n + s] * h[k];
      }
      out[t * d + c] = y;
    }
  }
  for (double v : out) {
    if (!std::isfinite(v)) throw ValidationError("selective_scan: non-finite output");
  }
  return make_result(
      "selective_scan", {steps, d}, std::move(out), {x, delta, A, B, C, skip},
      [x, delta, A, B, C, skip, steps, d, n, states = std::move(states), decay = std::move(decay)](const Node& nd) {
        const auto xd = x.data(), dd = delta.data(), ad = A.data(), bd = B.data(), cd = C.data(), sd = skip.data();
        double* gx = grad_ptr(x);
        double* gdt = grad_ptr(delta);
        double* gA = grad_ptr(A);
        double* gB = grad_ptr(B);
        double* gC = grad_ptr(C);
        double* gs = grad_ptr(skip);
        std::vector<double> carry(d * n, 0.0);  // dL/dh_t flowing back from t+1
        for (std::size_t t = steps; t-- > 0;) {
          for (std::size_t c = 0; c < d; ++c) {
            const double gy = nd.grad[t * d + c];
            const double xv = xd[t * d + c];
            const double dt = dd[t * d + c];
            if (gs) gs[c] += gy * xv;
            if (gx) gx[t * d + c] += gy * sd[c];
            for (std::size_t s = 0; s < n; ++s) {
              const std::size_t k = c * n + s;
              const double ht = states[t * d * n + k];
              const double hprev = t > 0 ? states[(t - 1) * d * n + k] : 0.0;
              const double a = decay[t * d * n + k];
              if (gC) gC[t * n + s] += gy * ht;
              const double gh = gy * cd[t * n + s] + carry[k];
              const double ga = gh * hprev * a;  // d/d(delta*A) of a*hprev
              if (gdt) gdt[t * d + c] += ga * ad[k] + gh * bd[t * n + s] * xv;
              if (gA) gA[k] += ga * dt;
              if (gB) gB[t * n + s] += gh * dt * xv;
              if (gx) gx[t * d + c] += gh * dt * bd[t * n + s];
              carry[k] = gh * a;
            }
          }
        }
      });
}

// ------------------------------------------------------------------ gru scan

Tensor gru_scan(const Tensor& input_proj, const Tensor& w_hh, const Tensor& b_hh, bool reverse) {
  require_rank("gru_scan", input_proj, 2);
  require_rank("gru_scan", w_hh, 2);
  const std::size_t steps = input_proj.dim(0);
  const std::size_t hidden = w_hh.dim(1);
  if (hidden == 0 || w_hh.dim(0) != 3 * hidden || input_proj.dim(1) != 3 * hidden || b_hh.numel() != 3 * hidden) {
    shape_error("gru_scan", "expected input [T,3H], w_hh [3H,H], b_hh [3H]; got " + shape_str(input_proj.shape()) +
                                ", " + shape_str(w_hh.shape()) + ", " + shape_str(b_hh.shape()));
  }
  const std::size_t H = hidden;
  const auto ad = input_proj.data(), wd = w_hh.data(), bd = b_hh.data();
  // Per processed step: r, z, n, (W_hn h + b_hn), h_prev.
  std::vector<double> rs(steps * H), zs(steps * H), ns(steps * H), hn(steps * H), hprev(steps * H);
  std::vector<double> out(steps * H);
  std::vector<double> h(H, 0.0), hh(3 * H);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    for (std::size_t g = 0; g < 3 * H; ++g) {
      double acc = bd[g];
      for (std::size_t j = 0; j < H; ++j) acc += wd[g * H + j] * h[j];
      hh[g] = acc;
    }
    for (std::size_t j = 0; j < H; ++j) {
      const double* a = ad.data() + t * 3 * H;
      const double r = sigmoid_scalar(a[j] + hh[j]);
      const double z = sigmoid_scalar(a[H + j] + hh[H + j]);
      const double n = std::tanh(a[2 * H + j] + r * hh[2 * H + j]);
      rs[t * H + j] = r;
      zs[t * H + j] = z;
      ns[t * H + j] = n;
      hn[t * H + j] = hh[2 * H + j];
      hprev[t * H + j] = h[j];
    }
    for (std::size_t j = 0; j < H; ++j) {
      h[j] = (1.0 - zs[t * H + j]) * ns[t * H + j] + zs[t * H + j] * h[j];
      out[t * H + j] = h[j];
    }
  }
  return make_result("gru_scan", {steps, H}, std::move(out), {input_proj, w_hh, b_hh},
                     [input_proj, w_hh, b_hh, steps, H, reverse, rs = std::move(rs), zs = std::move(zs),
                      ns = std::move(ns), hn = std::move(hn), hprev = std::move(hprev)](const Node& nd) {
                       const auto wd = w_hh.data();
                       double* ga = grad_ptr(input_proj);
                       double* gw = grad_ptr(w_hh);
                       double* gb = grad_ptr(b_hh);
                       std::vector<double> carry(H, 0.0), ghh(3 * H);
                       for (std::size_t s = steps; s-- > 0;) {
                         const std::size_t t = reverse ? steps - 1 - s : s;
                         std::vector<double> next(H, 0.0);
                         for (std::size_t j = 0; j < H; ++j) {
                           const std::size_t k = t * H + j;
                           const double gh = nd.grad[k] + carry[j];
                           const double r = rs[k], z = zs[k], n = ns[k];
                           const double gpre_n = gh * (1.0 - z) * (1.0 - n * n);
                           const double gpre_z = gh * (hprev[k] - n) * z * (1.0 - z);
                           const double gpre_r = gpre_n * hn[k] * r * (1.0 - r);
                           if (ga) {
                             ga[t * 3 * H + j] += gpre_r;
                             ga[t * 3 * H + H + j] += gpre_z;
                             ga[t * 3 * H + 2 * H + j] += gpre_n;
                           }
                           ghh[j] = gpre_r;
                           ghh[H + j] = gpre_z;
                           ghh[2 * H + j] = gpre_n * r;
                           next[j] = gh * z;
                         }
                         for (std::size_t g = 0; g < 3 * H; ++g) {
                           if (gb) gb[g] += ghh[g];
                           for (std::size_t j = 0; j < H; ++j) {
                             if (gw) gw[g * H + j] += ghh[g] * hprev[t * H + j];
                             next[j] += wd[g * H + j] * ghh[g];
                           }
                         }
                         carry.swap(next);
                       }
                     });
}

}  // namespace wsl::tc
