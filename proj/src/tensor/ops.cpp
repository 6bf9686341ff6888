#include "seqhgnn/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "seqhgnn/errors.hpp"

namespace seqhgnn {
namespace {

template <typename Real>
Tape<Real>& tape_of(const Var<Real>& v) {
  if (!v.valid()) throw Error("operation on an unbound Var");
  return *v.tape();
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

// C[m×n] += A[m×k] · B[k×n]
template <typename Real>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const Real* a, const Real* b, Real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = a[i * k + p];
      const Real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
template <typename Real>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const Real* a, const Real* b, Real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* brow = b + j * k;
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[m×n] += A[k×m]ᵀ · B[k×n]
template <typename Real>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const Real* a, const Real* b, Real* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const Real* arow = a + p * m;
    const Real* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Real api = arow[i];
      Real* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

// Splits a shape around `axis` into (outer, n, inner).
struct AxisView {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

}  // namespace

template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
  auto& tape = tape_of(a);
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank(av.shape(), 2, "matmul");
  require_rank(bv.shape(), 2, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(av.shape()) + " · " + shape_str(bv.shape()));
  }
  Tensor<Real> out({m, n});
  gemm_nn(m, k, n, av.data().data(), bv.data().data(), out.data().data());
  return tape.record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape<Real>& t, const Tensor<Real>& g) {
    if (auto* da = t.grad_sink(a)) gemm_nt(m, n, k, g.data().data(), b.value().data().data(), da->data().data());
    if (auto* db = t.grad_sink(b)) gemm_tn(k, m, n, a.value().data().data(), g.data().data(), db->data().data());
  });
}

template <typename Real>
Var<Real> matmul_nt(const Var<Real>& a, const Var<Real>& b) {
  auto& tape = tape_of(a);
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank(av.shape(), 2, "matmul_nt");
  require_rank(bv.shape(), 2, "matmul_nt");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  if (bv.dim(1) != k) {
    throw ShapeError("matmul_nt: inner dimensions differ: " + shape_str(av.shape()) + " · " +
                     shape_str(bv.shape()) + "ᵀ");
  }
  Tensor<Real> out({m, n});
  gemm_nt(m, k, n, av.data().data(), bv.data().data(), out.data().data());
  return tape.record("matmul_nt", std::move(out), {a, b}, [a, b, m, k, n](Tape<Real>& t, const Tensor<Real>& g) {
    if (auto* da = t.grad_sink(a)) gemm_nn(m, n, k, g.data().data(), b.value().data().data(), da->data().data());
    if (auto* db = t.grad_sink(b)) gemm_tn(n, m, k, g.data().data(), a.value().data().data(), db->data().data());
  });
}

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  auto& tape = tape_of(a);
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<Real> out(a.shape());
  auto o = out.data();
  auto x = a.value().data();
  auto y = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  return tape.record("add", std::move(out), {a, b}, [a, b](Tape<Real>& t, const Tensor<Real>& g) {
    for (const auto& in : {a, b}) {
      if (auto* d = t.grad_sink(in)) {
        auto dd = d->data();
        auto gg = g.data();
        for (std::size_t i = 0; i < dd.size(); ++i) dd[i] += gg[i];
      }
    }
  });
}

template <typename Real>
Var<Real> add_bias(const Var<Real>& x, const Var<Real>& bias) {
  auto& tape = tape_of(x);
  const auto& xs = x.shape();
  require_rank(bias.shape(), 1, "add_bias");
  if (xs.empty() || xs.back() != bias.dim(0)) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " + shape_str(xs));
  }
  const std::size_t d = bias.dim(0);
  const std::size_t rows = d == 0 ? 0 : x.value().size() / d;
  Tensor<Real> out(xs);
  auto o = out.data();
  auto xv = x.value().data();
  auto bv = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) o[r * d + c] = xv[r * d + c] + bv[c];
  }
  return tape.record("add_bias", std::move(out), {x, bias}, [x, bias, rows, d](Tape<Real>& t, const Tensor<Real>& g) {
    auto gg = g.data();
    if (auto* dx = t.grad_sink(x)) {
      auto dd = dx->data();
      for (std::size_t i = 0; i < dd.size(); ++i) dd[i] += gg[i];
    }
    if (auto* db = t.grad_sink(bias)) {
      auto dd = db->data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) dd[c] += gg[r * d + c];
      }
    }
  });
}

template <typename Real>
Var<Real> scale(const Var<Real>& x, Real factor) {
  auto& tape = tape_of(x);
  Tensor<Real> out(x.shape());
  auto o = out.data();
  auto xv = x.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * factor;
  return tape.record("scale", std::move(out), {x}, [x, factor](Tape<Real>& t, const Tensor<Real>& g) {
    if (auto* dx = t.grad_sink(x)) {
      auto dd = dx->data();
      auto gg = g.data();
      for (std::size_t i = 0; i < dd.size(); ++i) dd[i] += gg[i] * factor;
    }
  });
}

template <typename Real>
Var<Real> mul_const(const Var<Real>& x, const Tensor<Real>& mask) {
  auto& tape = tape_of(x);
  if (x.shape() != mask.shape()) {
    throw ShapeError("mul_const: shapes differ: " + shape_str(x.shape()) + " vs " + shape_str(mask.shape()));
  }
  Tensor<Real> out(x.shape());
  auto o = out.data();
  auto xv = x.value().data();
  auto mv = mask.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * mv[i];
  return tape.record("mul_const", std::move(out), {x}, [x, mask](Tape<Real>& t, const Tensor<Real>& g) {
    if (auto* dx = t.grad_sink(x)) {
      auto dd = dx->data();
      auto gg = g.data();
      auto mm = mask.data();
      for (std::size_t i = 0; i < dd.size(); ++i) dd[i] += gg[i] * mm[i];
    }
  });
}

template <typename Real>
Var<Real> softmax(const Var<Real>& x, std::size_t axis) {
  auto& tape = tape_of(x);
  const auto v = axis_view(x.shape(), axis, "softmax");
  if (v.n == 0) throw ShapeError("softmax: empty axis in " + shape_str(x.shape()));
  Tensor<Real> out(x.shape());
  auto o = out.data();
  auto xv = x.value().data();
  for (std::size_t a = 0; a < v.outer; ++a) {
    for (std::size_t c = 0; c < v.inner; ++c) {
      const std::size_t base = a * v.n * v.inner + c;
      Real mx = xv[base];
      for (std::size_t i = 1; i < v.n; ++i) mx = std::max(mx, xv[base + i * v.inner]);
      Real sum = 0;
      for (std::size_t i = 0; i < v.n; ++i) {
        const Real e = std::exp(xv[base + i * v.inner] - mx);
        o[base + i * v.inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < v.n; ++i) o[base + i * v.inner] /= sum;
    }
  }
  // Backward needs the output; it is the next node recorded on this tape.
  const std::size_t out_id = tape.size();
  return tape.record("softmax", std::move(out), {x}, [x, v, out_id](Tape<Real>& t, const Tensor<Real>& g) {
    auto* dx = t.grad_sink(x);
    if (!dx) return;
    auto y = t.value(out_id).data();
    auto gg = g.data();
    auto dd = dx->data();
    for (std::size_t a = 0; a < v.outer; ++a) {
      for (std::size_t c = 0; c < v.inner; ++c) {
        const std::size_t base = a * v.n * v.inner + c;
        Real dot = 0;
        for (std::size_t i = 0; i < v.n; ++i) dot += gg[base + i * v.inner] * y[base + i * v.inner];
        for (std::size_t i = 0; i < v.n; ++i) {
          const std::size_t k = base + i * v.inner;
          dd[k] += y[k] * (gg[k] - dot);
        }
      }
    }
  });
}

template <typename Real>
Var<Real> concat(const std::vector<Var<Real>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  auto& tape = tape_of(parts.front());
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat: " + shape_str(s) + " does not match " + shape_str(first));
    out_shape[axis] += s[axis];
  }
  const auto ov = axis_view(out_shape, axis, "concat");
  Tensor<Real> out(out_shape);
  auto o = out.data();
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t n = p.shape()[axis];
    auto src = p.value().data();
    for (std::size_t a = 0; a < ov.outer; ++a) {
      std::copy_n(src.begin() + a * n * ov.inner, n * ov.inner, o.begin() + (a * ov.n + offset) * ov.inner);
    }
    offset += n;
  }
  return tape.record("concat", std::move(out), parts, [parts, offsets, ov, axis](Tape<Real>& t, const Tensor<Real>& g) {
    auto gg = g.data();
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto* dp = t.grad_sink(parts[k]);
      if (!dp) continue;
      const std::size_t n = parts[k].shape()[axis];
      auto dd = dp->data();
      for (std::size_t a = 0; a < ov.outer; ++a) {
        const std::size_t src = (a * ov.n + offsets[k]) * ov.inner;
        const std::size_t dst = a * n * ov.inner;
        for (std::size_t i = 0; i < n * ov.inner; ++i) dd[dst + i] += gg[src + i];
      }
    }
  });
}

template <typename Real>
Var<Real> slice(const Var<Real>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  auto& tape = tape_of(x);
  const auto v = axis_view(x.shape(), axis, "slice");
  if (begin > end || end > v.n) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                     shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t n = end - begin;
  Tensor<Real> out(out_shape);
  auto o = out.data();
  auto xv = x.value().data();
  for (std::size_t a = 0; a < v.outer; ++a) {
    std::copy_n(xv.begin() + (a * v.n + begin) * v.inner, n * v.inner, o.begin() + a * n * v.inner);
  }
  return tape.record("slice", std::move(out), {x}, [x, v, begin, n](Tape<Real>& t, const Tensor<Real>& g) {
    auto* dx = t.grad_sink(x);
    if (!dx) return;
    auto dd = dx->data();
    auto gg = g.data();
    for (std::size_t a = 0; a < v.outer; ++a) {
      const std::size_t dst = (a * v.n + begin) * v.inner;
      const std::size_t src = a * n * v.inner;
      for (std::size_t i = 0; i < n * v.inner; ++i) dd[dst + i] += gg[src + i];
    }
  });
}

template <typename Real>
Var<Real> reduce_mean(const Var<Real>& x, std::size_t axis) {
  auto& tape = tape_of(x);
  const auto v = axis_view(x.shape(), axis, "reduce_mean");
  if (v.n == 0) throw ShapeError("reduce_mean: empty axis in " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<Real> out(out_shape);
  auto o = out.data();
  auto xv = x.value().data();
  const Real inv = Real(1) / static_cast<Real>(v.n);
  for (std::size_t a = 0; a < v.outer; ++a) {
    for (std::size_t c = 0; c < v.inner; ++c) {
      Real sum = 0;
      for (std::size_t i = 0; i < v.n; ++i) sum += xv[(a * v.n + i) * v.inner + c];
      o[a * v.inner + c] = sum / static_cast<Real>(v.n);
    }
  }
  return tape.record("reduce_mean", std::move(out), {x}, [x, v, inv](Tape<Real>& t, const Tensor<Real>& g) {
    auto* dx = t.grad_sink(x);
    if (!dx) return;
    auto dd = dx->data();
    auto gg = g.data();
    for (std::size_t a = 0; a < v.outer; ++a) {
      for (std::size_t i = 0; i < v.n; ++i) {
        for (std::size_t c = 0; c < v.inner; ++c) dd[(a * v.n + i) * v.inner + c] += gg[a * v.inner + c] * inv;
      }
    }
  });
}

template <typename Real>
Var<Real> sum_all(const Var<Real>& x) {
  auto& tape = tape_of(x);
  Real sum = 0;
  for (auto e : x.value().data()) sum += e;
  return tape.record("sum_all", Tensor<Real>::scalar(sum), {x}, [x](Tape<Real>& t, const Tensor<Real>& g) {
    if (auto* dx = t.grad_sink(x)) {
      const Real gv = g[0];
      for (auto& d : dx->data()) d += gv;
    }
  });
}

template <typename Real>
Var<Real> reshape(const Var<Real>& x, Shape shape) {
  auto& tape = tape_of(x);
  auto out = x.value().reshaped(std::move(shape));
  return tape.record("reshape", std::move(out), {x}, [x](Tape<Real>& t, const Tensor<Real>& g) {
    if (auto* dx = t.grad_sink(x)) {
      auto dd = dx->data();
      auto gg = g.data();
      for (std::size_t i = 0; i < dd.size(); ++i) dd[i] += gg[i];
    }
  });
}

template <typename Real>
Var<Real> gather_rows(const Var<Real>& x, std::span<const std::size_t> index) {
  auto& tape = tape_of(x);
  const Shape& xs = x.shape();
  if (xs.empty()) throw ShapeError("gather_rows: scalar input");
  const std::size_t rows = xs[0];
  const std::size_t width = rows == 0 ? 0 : x.value().size() / rows;
  Shape out_shape = xs;
  out_shape[0] = index.size();
  Tensor<Real> out(out_shape);
  auto o = out.data();
  auto xv = x.value().data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of range " + std::to_string(rows));
    }
    std::copy_n(xv.begin() + index[i] * width, width, o.begin() + i * width);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return tape.record("gather_rows", std::move(out), {x}, [x, idx, width](Tape<Real>& t, const Tensor<Real>& g) {
    auto* dx = t.grad_sink(x);
    if (!dx) return;
    auto dd = dx->data();
    auto gg = g.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t c = 0; c < width; ++c) dd[idx[i] * width + c] += gg[i * width + c];
    }
  });
}

template <typename Real>
Var<Real> broadcast_rows(const Var<Real>& v, std::size_t n) {
  auto& tape = tape_of(v);
  require_rank(v.shape(), 1, "broadcast_rows");
  const std::size_t d = v.dim(0);
  Tensor<Real> out({n, d});
  auto o = out.data();
  auto vv = v.value().data();
  for (std::size_t r = 0; r < n; ++r) std::copy(vv.begin(), vv.end(), o.begin() + r * d);
  return tape.record("broadcast_rows", std::move(out), {v}, [v, n, d](Tape<Real>& t, const Tensor<Real>& g) {
    auto* dv = t.grad_sink(v);
    if (!dv) return;
    auto dd = dv->data();
    auto gg = g.data();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c) dd[c] += gg[r * d + c];
    }
  });
}

template <typename Real>
Var<Real> head_matmul(const Var<Real>& x, const Var<Real>& w) {
  auto& tape = tape_of(x);
  require_rank(x.shape(), 2, "head_matmul");
  require_rank(w.shape(), 3, "head_matmul");
  const std::size_t n = x.dim(0), d = x.dim(1);
  const std::size_t heads = w.dim(0), dh = w.dim(1);
  if (w.dim(2) != dh || heads * dh != d) {
    throw ShapeError("head_matmul: weights " + shape_str(w.shape()) + " do not tile width " + std::to_string(d));
  }
  Tensor<Real> out({n, d});
  auto o = out.data();
  auto xv = x.value().data();
  auto wv = w.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t h = 0; h < heads; ++h) {
      const Real* xr = xv.data() + r * d + h * dh;
      const Real* wh = wv.data() + h * dh * dh;
      Real* orow = o.data() + r * d + h * dh;
      for (std::size_t p = 0; p < dh; ++p) {
        for (std::size_t c = 0; c < dh; ++c) orow[c] += xr[p] * wh[p * dh + c];
      }
    }
  }
  return tape.record("head_matmul", std::move(out), {x, w}, [x, w, n, d, heads, dh](Tape<Real>& t, const Tensor<Real>& g) {
    auto gg = g.data();
    if (auto* dx = t.grad_sink(x)) {
      auto dd = dx->data();
      auto wv = w.value().data();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t p = 0; p < dh; ++p) {
            Real acc = 0;
            for (std::size_t c = 0; c < dh; ++c) acc += gg[r * d + h * dh + c] * wv[h * dh * dh + p * dh + c];
            dd[r * d + h * dh + p] += acc;
          }
        }
      }
    }
    if (auto* dw = t.grad_sink(w)) {
      auto dd = dw->data();
      auto xv = x.value().data();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t p = 0; p < dh; ++p) {
            const Real xp = xv[r * d + h * dh + p];
            for (std::size_t c = 0; c < dh; ++c) dd[h * dh * dh + p * dh + c] += xp * gg[r * d + h * dh + c];
          }
        }
      }
    }
  });
}

template <typename Real>
Var<Real> head_dot(const Var<Real>& q, const Var<Real>& k, std::size_t heads) {
  auto& tape = tape_of(q);
  require_rank(q.shape(), 2, "head_dot");
  require_rank(k.shape(), 3, "head_dot");
  const std::size_t n = q.dim(0), d = q.dim(1), f = k.dim(1);
  if (k.dim(0) != n || k.dim(2) != d || heads == 0 || d % heads != 0) {
    throw ShapeError("head_dot: " + shape_str(q.shape()) + " vs " + shape_str(k.shape()) + " with " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  Tensor<Real> out({n, heads, f});
  auto o = out.data();
  auto qv = q.value().data();
  auto kv = k.value().data();
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < f; ++i) {
        Real acc = 0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) acc += qv[t * d + c] * kv[(t * f + i) * d + c];
        o[(t * heads + h) * f + i] = acc;
      }
    }
  }
  return tape.record("head_dot", std::move(out), {q, k}, [q, k, n, d, f, heads, dh](Tape<Real>& tp, const Tensor<Real>& g) {
    auto gg = g.data();
    auto qv = q.value().data();
    auto kv = k.value().data();
    auto* dq = tp.grad_sink(q);
    auto* dk = tp.grad_sink(k);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < f; ++i) {
          const Real gv = gg[(t * heads + h) * f + i];
          for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
            if (dq) dq->data()[t * d + c] += gv * kv[(t * f + i) * d + c];
            if (dk) dk->data()[(t * f + i) * d + c] += gv * qv[t * d + c];
          }
        }
      }
    }
  });
}

template <typename Real>
Var<Real> head_mix(const Var<Real>& a, const Var<Real>& v) {
  auto& tape = tape_of(a);
  require_rank(a.shape(), 3, "head_mix");
  require_rank(v.shape(), 3, "head_mix");
  const std::size_t n = a.dim(0), heads = a.dim(1), f = a.dim(2), d = v.dim(2);
  if (v.dim(0) != n || v.dim(1) != f || heads == 0 || d % heads != 0) {
    throw ShapeError("head_mix: " + shape_str(a.shape()) + " vs " + shape_str(v.shape()));
  }
  const std::size_t dh = d / heads;
  Tensor<Real> out({n, d});
  auto o = out.data();
  auto av = a.value().data();
  auto vv = v.value().data();
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t i = 0; i < f; ++i) {
      for (std::size_t c = 0; c < d; ++c) o[t * d + c] += av[(t * heads + c / dh) * f + i] * vv[(t * f + i) * d + c];
    }
  }
  return tape.record("head_mix", std::move(out), {a, v}, [a, v, n, heads, f, d, dh](Tape<Real>& tp, const Tensor<Real>& g) {
    auto gg = g.data();
    auto av = a.value().data();
    auto vv = v.value().data();
    auto* da = tp.grad_sink(a);
    auto* dv = tp.grad_sink(v);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t i = 0; i < f; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
          const std::size_t ai = (t * heads + c / dh) * f + i;
          if (da) da->data()[ai] += gg[t * d + c] * vv[(t * f + i) * d + c];
          if (dv) dv->data()[(t * f + i) * d + c] += gg[t * d + c] * av[ai];
        }
      }
    }
  });
}

template <typename Real>
Var<Real> cross_entropy(const Var<Real>& logits, std::span<const std::int32_t> labels) {
  auto& tape = tape_of(logits);
  require_rank(logits.shape(), 2, "cross_entropy");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw ShapeError("cross_entropy: label count differs from logit rows");
  if (n == 0) throw ShapeError("cross_entropy: no rows");
  auto z = logits.value().data();
  Tensor<Real> probs({n, c});
  auto p = probs.data();
  Real total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c) {
      throw Error("cross_entropy: label " + std::to_string(labels[r]) + " out of range for " + std::to_string(c) +
                  " classes");
    }
    Real mx = z[r * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[r * c + j]);
    Real sum = 0;
    for (std::size_t j = 0; j < c; ++j) {
      p[r * c + j] = std::exp(z[r * c + j] - mx);
      sum += p[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) p[r * c + j] /= sum;
    total += std::log(sum) + mx - z[r * c + static_cast<std::size_t>(labels[r])];
  }
  std::vector<std::int32_t> y(labels.begin(), labels.end());
  return tape.record("cross_entropy", Tensor<Real>::scalar(total / static_cast<Real>(n)), {logits},
                     [logits, probs, y, n, c](Tape<Real>& t, const Tensor<Real>& g) {
                       auto* dz = t.grad_sink(logits);
                       if (!dz) return;
                       const Real s = g[0] / static_cast<Real>(n);
                       auto dd = dz->data();
                       auto pp = probs.data();
                       for (std::size_t r = 0; r < n; ++r) {
                         for (std::size_t j = 0; j < c; ++j) {
                           const Real target = static_cast<std::size_t>(y[r]) == j ? Real(1) : Real(0);
                           dd[r * c + j] += s * (pp[r * c + j] - target);
                         }
                       }
                     });
}

template <typename Real>
Var<Real> bce_with_logits(const Var<Real>& logits, const Tensor<Real>& targets) {
  auto& tape = tape_of(logits);
  require_rank(logits.shape(), 2, "bce_with_logits");
  if (targets.shape() != logits.shape()) {
    throw ShapeError("bce_with_logits: targets " + shape_str(targets.shape()) + " vs logits " +
                     shape_str(logits.shape()));
  }
  const std::size_t count = targets.size();
  if (count == 0) throw ShapeError("bce_with_logits: no entries");
  auto z = logits.value().data();
  auto y = targets.data();
  Real total = 0;
  for (std::size_t i = 0; i < count; ++i) {
    if (y[i] != Real(0) && y[i] != Real(1)) throw Error("bce_with_logits: targets must be 0 or 1");
    total += std::max(z[i], Real(0)) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  return tape.record("bce_with_logits", Tensor<Real>::scalar(total / static_cast<Real>(count)), {logits},
                     [logits, targets, count](Tape<Real>& t, const Tensor<Real>& g) {
                       auto* dz = t.grad_sink(logits);
                       if (!dz) return;
                       const Real s = g[0] / static_cast<Real>(count);
                       auto dd = dz->data();
                       auto zz = logits.value().data();
                       auto yy = targets.data();
                       for (std::size_t i = 0; i < count; ++i) {
                         const Real sig = Real(1) / (Real(1) + std::exp(-zz[i]));
                         dd[i] += s * (sig - yy[i]);
                       }
                     });
}

#define SEQHGNN_INSTANTIATE_OPS(R)                                                            \
  template Var<R> matmul(const Var<R>&, const Var<R>&);                                       \
  template Var<R> matmul_nt(const Var<R>&, const Var<R>&);                                    \
  template Var<R> add(const Var<R>&, const Var<R>&);                                          \
  template Var<R> add_bias(const Var<R>&, const Var<R>&);                                     \
  template Var<R> scale(const Var<R>&, R);                                                    \
  template Var<R> mul_const(const Var<R>&, const Tensor<R>&);                                 \
  template Var<R> softmax(const Var<R>&, std::size_t);                                        \
  template Var<R> concat(const std::vector<Var<R>>&, std::size_t);                            \
  template Var<R> slice(const Var<R>&, std::size_t, std::size_t, std::size_t);                \
  template Var<R> reduce_mean(const Var<R>&, std::size_t);                                    \
  template Var<R> sum_all(const Var<R>&);                                                     \
  template Var<R> reshape(const Var<R>&, Shape);                                              \
  template Var<R> gather_rows(const Var<R>&, std::span<const std::size_t>);                   \
  template Var<R> broadcast_rows(const Var<R>&, std::size_t);                                 \
  template Var<R> head_matmul(const Var<R>&, const Var<R>&);                                  \
  template Var<R> head_dot(const Var<R>&, const Var<R>&, std::size_t);                        \
  template Var<R> head_mix(const Var<R>&, const Var<R>&);                                     \
  template Var<R> cross_entropy(const Var<R>&, std::span<const std::int32_t>);                \
  template Var<R> bce_with_logits(const Var<R>&, const Tensor<R>&);

SEQHGNN_INSTANTIATE_OPS(float)
SEQHGNN_INSTANTIATE_OPS(double)
SEQHGNN_INSTANTIATE_OPS(long double)

}  // namespace seqhgnn
