#include "nightformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

namespace nf {

namespace {

template <typename T>
using Store = std::shared_ptr<TensorStorage<T>>;

template <typename T, typename... Ts>
bool tracking(const BasicTensor<T>& first, const Ts&... rest) {
  if (!Tape<T>::current()) return false;
  return first.requires_grad() || (rest.requires_grad() || ...);
}

template <typename T>
void record(BasicTensor<T>& out, std::function<void()> rule) {
  out.set_requires_grad(true);
  Tape<T>::current()->record(std::move(rule));
}

// Gradient buffer of an input, allocated on demand; null when the input is a constant.
template <typename T>
T* grad_of(const Store<T>& s) {
  if (!s->requires_grad) return nullptr;
  if (s->grad.empty()) s->grad.assign(s->data.size(), T(0));
  return s->grad.data();
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const BasicTensor<T>& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
  }
}

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  BasicTensor<T> out(a.shape());
  T* o = out.mutable_ptr();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = a[i] + b[i];
  if (tracking(a, b)) {
    record(out, [A = a.impl(), B = b.impl(), O = out.impl()] {
      T* ga = grad_of(A);
      T* gb = grad_of(B);
      if (O->grad.empty()) return;
      for (std::size_t i = 0; i < O->grad.size(); ++i) {
        if (ga) ga[i] += O->grad[i];
        if (gb) gb[i] += O->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  BasicTensor<T> out(a.shape());
  T* o = out.mutable_ptr();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = a[i] - b[i];
  if (tracking(a, b)) {
    record(out, [A = a.impl(), B = b.impl(), O = out.impl()] {
      T* ga = grad_of(A);
      T* gb = grad_of(B);
      if (O->grad.empty()) return;
      for (std::size_t i = 0; i < O->grad.size(); ++i) {
        if (ga) ga[i] += O->grad[i];
        if (gb) gb[i] -= O->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  BasicTensor<T> out(a.shape());
  T* o = out.mutable_ptr();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = a[i] * b[i];
  if (tracking(a, b)) {
    record(out, [A = a.impl(), B = b.impl(), O = out.impl()] {
      T* ga = grad_of(A);
      T* gb = grad_of(B);
      if (O->grad.empty()) return;
      for (std::size_t i = 0; i < O->grad.size(); ++i) {
        if (ga) ga[i] += O->grad[i] * B->data[i];
        if (gb) gb[i] += O->grad[i] * A->data[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  BasicTensor<T> out(x.shape());
  T* o = out.mutable_ptr();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = x[i] * factor;
  if (tracking(x)) {
    record(out, [X = x.impl(), O = out.impl(), factor] {
      T* gx = grad_of(X);
      if (O->grad.empty() || !gx) return;
      for (std::size_t i = 0; i < O->grad.size(); ++i) gx[i] += O->grad[i] * factor;
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  const std::size_t c = x.shape().back();
  if (bias.rank() != 1 || bias.size() != c) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                     shape_str(x.shape()));
  }
  BasicTensor<T> out(x.shape());
  T* o = out.mutable_ptr();
  const std::size_t rows = x.size() / c;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) o[r * c + j] = x[r * c + j] + bias[j];
  if (tracking(x, bias)) {
    record(out, [X = x.impl(), B = bias.impl(), O = out.impl(), rows, c] {
      T* gx = grad_of(X);
      T* gb = grad_of(B);
      if (O->grad.empty()) return;
      const T* go = O->grad.data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) {
          if (gx) gx[r * c + j] += go[r * c + j];
          if (gb) gb[j] += go[r * c + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> scale_rows(const BasicTensor<T>& x, const BasicTensor<T>& s) {
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.size() / c;
  if (s.size() != rows) {
    throw ShapeError("scale_rows: weights " + shape_str(s.shape()) + " do not match leading axes of " +
                     shape_str(x.shape()));
  }
  BasicTensor<T> out(x.shape());
  T* o = out.mutable_ptr();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) o[r * c + j] = x[r * c + j] * s[r];
  if (tracking(x, s)) {
    record(out, [X = x.impl(), S = s.impl(), O = out.impl(), rows, c] {
      T* gx = grad_of(X);
      T* gs = grad_of(S);
      if (O->grad.empty()) return;
      const T* go = O->grad.data();
      for (std::size_t r = 0; r < rows; ++r) {
        T acc = 0;
        for (std::size_t j = 0; j < c; ++j) {
          if (gx) gx[r * c + j] += go[r * c + j] * S->data[r];
          acc += go[r * c + j] * X->data[r * c + j];
        }
        if (gs) gs[r] += acc;
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> row_sum_squares(const BasicTensor<T>& x) {
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.size() / c;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  BasicTensor<T> out(out_shape);
  T* o = out.mutable_ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (std::size_t j = 0; j < c; ++j) acc += x[r * c + j] * x[r * c + j];
    o[r] = acc;
  }
  if (tracking(x)) {
    record(out, [X = x.impl(), O = out.impl(), rows, c] {
      T* gx = grad_of(X);
      if (O->grad.empty() || !gx) return;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += T(2) * X->data[r * c + j] * O->grad[r];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  BasicTensor<T> out({m, n});
  gemm_nn(a.ptr(), b.ptr(), out.mutable_ptr(), m, k, n);
  if (tracking(a, b)) {
    record(out, [A = a.impl(), B = b.impl(), O = out.impl(), m, k, n] {
      T* ga = grad_of(A);
      T* gb = grad_of(B);
      if (O->grad.empty()) return;
      if (ga) gemm_nt(O->grad.data(), B->data.data(), ga, m, n, k);
      if (gb) gemm_tn(A->data.data(), O->grad.data(), gb, m, k, n);
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                     "^T");
  }
  BasicTensor<T> out({m, n});
  gemm_nt(a.ptr(), b.ptr(), out.mutable_ptr(), m, k, n);
  if (tracking(a, b)) {
    record(out, [A = a.impl(), B = b.impl(), O = out.impl(), m, k, n] {
      T* ga = grad_of(A);
      T* gb = grad_of(B);
      if (O->grad.empty()) return;
      // dA = dC * B, dB = dC^T * A
      if (ga) gemm_nn(O->grad.data(), B->data.data(), ga, m, n, k);
      if (gb) gemm_tn(O->grad.data(), A->data.data(), gb, m, n, k);
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  BasicTensor<T> out({c, r});
  T* o = out.mutable_ptr();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) o[j * r + i] = x[i * c + j];
  if (tracking(x)) {
    record(out, [X = x.impl(), O = out.impl(), r, c] {
      T* gx = grad_of(X);
      if (O->grad.empty() || !gx) return;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += O->grad[j * r + i];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  BasicTensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (tracking(x)) {
    record(out, [X = x.impl(), O = out.impl()] {
      T* gx = grad_of(X);
      if (O->grad.empty() || !gx) return;
      for (std::size_t i = 0; i < O->grad.size(); ++i) gx[i] += O->grad[i];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  T* o = out.mutable_ptr();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = x[i] > T(0) ? x[i] : T(0);
  if (tracking(x)) {
    record(out, [X = x.impl(), O = out.impl()] {
      T* gx = grad_of(X);
      if (O->grad.empty() || !gx) return;
      for (std::size_t i = 0; i < O->grad.size(); ++i)
        if (X->data[i] > T(0)) gx[i] += O->grad[i];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  T* o = out.mutable_ptr();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    if (v >= 0) {
      o[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      o[i] = e / (T(1) + e);
    }
  }
  if (tracking(x)) {
    record(out, [X = x.impl(), O = out.impl()] {
      T* gx = grad_of(X);
      if (O->grad.empty() || !gx) return;
      for (std::size_t i = 0; i < O->grad.size(); ++i) {
        const T s = O->data[i];
        gx[i] += O->grad[i] * s * (T(1) - s);
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);

  BasicTensor<T> out(x.shape());
  T* o = out.mutable_ptr();
  const T* in = x.ptr();
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t b = 0; b < inner; ++b) {
      const std::size_t base = a * len * inner + b;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, in[base + k * inner]);
      T total = 0;
      for (std::size_t k = 0; k < len; ++k) {
        const T e = std::exp(in[base + k * inner] - mx);
        o[base + k * inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::size_t k = 0; k < len; ++k) o[base + k * inner] *= inv;
    }
  }
  if (tracking(x)) {
    record(out, [X = x.impl(), O = out.impl(), outer, inner, len] {
      T* gx = grad_of(X);
      if (O->grad.empty() || !gx) return;
      const T* y = O->data.data();
      const T* gy = O->grad.data();
      for (std::size_t a = 0; a < outer; ++a) {
        for (std::size_t b = 0; b < inner; ++b) {
          const std::size_t base = a * len * inner + b;
          T dot = 0;
          for (std::size_t k = 0; k < len; ++k) dot += gy[base + k * inner] * y[base + k * inner];
          for (std::size_t k = 0; k < len; ++k) {
            const std::size_t idx = base + k * inner;
            gx[idx] += y[idx] * (gy[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
  BasicTensor<T> out = BasicTensor<T>::scalar(acc);
  if (tracking(x)) {
    record(out, [X = x.impl(), O = out.impl()] {
      T* gx = grad_of(X);
      if (O->grad.empty() || !gx) return;
      const T g = O->grad[0];
      for (std::size_t i = 0; i < X->data.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
BasicTensor<T> normalize_unit_mean(const BasicTensor<T>& x, T eps) {
  const std::size_t n = x.size();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  const T denom = acc / static_cast<T>(n) + eps;
  BasicTensor<T> out(x.shape());
  T* o = out.mutable_ptr();
  for (std::size_t i = 0; i < n; ++i) o[i] = x[i] / denom;
  if (tracking(x)) {
    record(out, [X = x.impl(), O = out.impl(), denom, n] {
      T* gx = grad_of(X);
      if (O->grad.empty() || !gx) return;
      T cross = 0;
      for (std::size_t i = 0; i < n; ++i) cross += O->grad[i] * X->data[i];
      const T shared = cross / (denom * denom * static_cast<T>(n));
      for (std::size_t i = 0; i < n; ++i) gx[i] += O->grad[i] / denom - shared;
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta, T eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t rows = x.dim(0), c = x.dim(1);
  if (gamma.size() != c || beta.size() != c) {
    throw ShapeError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                     " do not match width of " + shape_str(x.shape()));
  }
  BasicTensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  T* o = out.mutable_ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.ptr() + r * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(c);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (xr[j] - mu) * rs;
      (*xhat)[r * c + j] = h;
      o[r * c + j] = h * gamma[j] + beta[j];
    }
  }
  if (tracking(x, gamma, beta)) {
    record(out, [X = x.impl(), G = gamma.impl(), B = beta.impl(), O = out.impl(), xhat, rstd, rows, c] {
      T* gx = grad_of(X);
      T* gg = grad_of(G);
      T* gb = grad_of(B);
      if (O->grad.empty()) return;
      const T* gy = O->grad.data();
      std::vector<T> dh(c);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* hr = xhat->data() + r * c;
        const T* gyr = gy + r * c;
        T mean_dh = 0, mean_dh_h = 0;
        for (std::size_t j = 0; j < c; ++j) {
          if (gg) gg[j] += gyr[j] * hr[j];
          if (gb) gb[j] += gyr[j];
          dh[j] = gyr[j] * G->data[j];
          mean_dh += dh[j];
          mean_dh_h += dh[j] * hr[j];
        }
        if (!gx) continue;
        mean_dh /= static_cast<T>(c);
        mean_dh_h /= static_cast<T>(c);
        const T rs = (*rstd)[r];
        for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += rs * (dh[j] - mean_dh - hr[j] * mean_dh_h);
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> row_normalize(const BasicTensor<T>& x) {
  require_rank(x, 2, "row_normalize");
  const std::size_t rows = x.dim(0), c = x.dim(1);
  auto totals = std::make_shared<std::vector<T>>(rows);
  BasicTensor<T> out(x.shape());
  T* o = out.mutable_ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (std::size_t j = 0; j < c; ++j) acc += x[r * c + j];
    if (acc == T(0)) throw std::domain_error("row_normalize: row " + std::to_string(r) + " sums to zero");
    (*totals)[r] = acc;
    for (std::size_t j = 0; j < c; ++j) o[r * c + j] = x[r * c + j] / acc;
  }
  if (tracking(x)) {
    record(out, [X = x.impl(), O = out.impl(), totals, rows, c] {
      T* gx = grad_of(X);
      if (O->grad.empty() || !gx) return;
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += O->grad[r * c + j] * O->data[r * c + j];
        for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += (O->grad[r * c + j] - dot) / (*totals)[r];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  if (rows.empty()) throw ShapeError("gather_rows: empty row selection");
  const std::size_t r = x.dim(0), c = x.dim(1);
  for (std::size_t idx : rows) {
    if (idx >= r) throw ShapeError("gather_rows: row " + std::to_string(idx) + " outside " + shape_str(x.shape()));
  }
  BasicTensor<T> out({rows.size(), c});
  T* o = out.mutable_ptr();
  for (std::size_t k = 0; k < rows.size(); ++k) std::copy_n(x.ptr() + rows[k] * c, c, o + k * c);
  if (tracking(x)) {
    record(out, [X = x.impl(), O = out.impl(), picked = std::vector<std::size_t>(rows.begin(), rows.end()), c] {
      T* gx = grad_of(X);
      if (O->grad.empty() || !gx) return;
      for (std::size_t k = 0; k < picked.size(); ++k)
        for (std::size_t j = 0; j < c; ++j) gx[picked[k] * c + j] += O->grad[k * c + j];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, std::size_t stride, std::size_t padding) {
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d");
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::size_t h = x.dim(0), wd = x.dim(1), cin = x.dim(2);
  const std::size_t kh = w.dim(0), kw = w.dim(1), cout = w.dim(3);
  if (w.dim(2) != cin) {
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " expects a different channel count than input " +
                     shape_str(x.shape()));
  }
  if (kh > h + 2 * padding || kw > wd + 2 * padding) {
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " + shape_str(x.shape()) +
                     " with padding " + std::to_string(padding));
  }
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * padding - kw) / stride + 1;
  const std::size_t patch = kh * kw * cin;

  // Column matrix [ho*wo, kh*kw*cin]; the kernel is already laid out as [patch, cout].
  auto cols = std::make_shared<std::vector<T>>(ho * wo * patch, T(0));
  const T* in = x.ptr();
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      T* row = cols->data() + (oy * wo + ox) * patch;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
          if (ix < 0 || ix >= static_cast<long>(wd)) continue;
          std::copy_n(in + (static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix)) * cin, cin,
                      row + (ky * kw + kx) * cin);
        }
      }
    }
  }
  BasicTensor<T> out({ho, wo, cout});
  gemm_nn(cols->data(), w.ptr(), out.mutable_ptr(), ho * wo, patch, cout);

  if (tracking(x, w)) {
    record(out, [X = x.impl(), W = w.impl(), O = out.impl(), cols, h, wd, cin, kh, kw, cout, ho, wo, patch, stride,
                 padding] {
      T* gx = grad_of(X);
      T* gw = grad_of(W);
      if (O->grad.empty()) return;
      if (gw) gemm_tn(cols->data(), O->grad.data(), gw, ho * wo, patch, cout);
      if (!gx) return;
      std::vector<T> dcols(ho * wo * patch, T(0));
      gemm_nt(O->grad.data(), W->data.data(), dcols.data(), ho * wo, cout, patch);
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const T* row = dcols.data() + (oy * wo + ox) * patch;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
              if (ix < 0 || ix >= static_cast<long>(wd)) continue;
              T* dst = gx + (static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix)) * cin;
              const T* src = row + (ky * kw + kx) * cin;
              for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
            }
          }
        }
      }
    });
  }
  return out;
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;  // weight of `hi`
};

// Source taps for output coordinate `o` of a 2x half-pixel-centered upsampling.
Tap upsample_tap(std::size_t o, std::size_t extent) {
  double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
  if (src < 0) src = 0;
  const std::size_t lo = static_cast<std::size_t>(src);
  const std::size_t hi = std::min(lo + 1, extent - 1);
  return {lo, hi, src - static_cast<double>(lo)};
}

}  // namespace

template <typename T>
BasicTensor<T> upsample_bilinear2x(const BasicTensor<T>& x) {
  require_rank(x, 3, "upsample_bilinear2x");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t oh = 2 * h, ow = 2 * w;
  BasicTensor<T> out({oh, ow, c});
  T* o = out.mutable_ptr();
  const T* in = x.ptr();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    const Tap ty = upsample_tap(oy, h);
    const T fy = static_cast<T>(ty.frac);
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const Tap tx = upsample_tap(ox, w);
      const T fx = static_cast<T>(tx.frac);
      const T w00 = (T(1) - fy) * (T(1) - fx), w01 = (T(1) - fy) * fx;
      const T w10 = fy * (T(1) - fx), w11 = fy * fx;
      const T* p00 = in + (ty.lo * w + tx.lo) * c;
      const T* p01 = in + (ty.lo * w + tx.hi) * c;
      const T* p10 = in + (ty.hi * w + tx.lo) * c;
      const T* p11 = in + (ty.hi * w + tx.hi) * c;
      T* dst = o + (oy * ow + ox) * c;
      for (std::size_t k = 0; k < c; ++k) dst[k] = w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
    }
  }
  if (tracking(x)) {
    record(out, [X = x.impl(), O = out.impl(), h, w, c, oh, ow] {
      T* gx = grad_of(X);
      if (O->grad.empty() || !gx) return;
      const T* go = O->grad.data();
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const Tap ty = upsample_tap(oy, h);
        const T fy = static_cast<T>(ty.frac);
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const Tap tx = upsample_tap(ox, w);
          const T fx = static_cast<T>(tx.frac);
          const T w00 = (T(1) - fy) * (T(1) - fx), w01 = (T(1) - fy) * fx;
          const T w10 = fy * (T(1) - fx), w11 = fy * fx;
          const T* src = go + (oy * ow + ox) * c;
          T* g00 = gx + (ty.lo * w + tx.lo) * c;
          T* g01 = gx + (ty.lo * w + tx.hi) * c;
          T* g10 = gx + (ty.hi * w + tx.lo) * c;
          T* g11 = gx + (ty.hi * w + tx.hi) * c;
          for (std::size_t k = 0; k < c; ++k) {
            g00[k] += w00 * src[k];
            g01[k] += w01 * src[k];
            g10[k] += w10 * src[k];
            g11[k] += w11 * src[k];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> bce_with_logits(const BasicTensor<T>& logits, const BasicTensor<T>& target) {
  require_same_shape(logits, target, "bce_with_logits");
  const std::size_t n = logits.size();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T z = logits[i];
    acc += std::max(z, T(0)) - z * target[i] + std::log1p(std::exp(-std::abs(z)));
  }
  BasicTensor<T> out = BasicTensor<T>::scalar(acc / static_cast<T>(n));
  if (tracking(logits)) {
    record(out, [Z = logits.impl(), Y = target.impl(), O = out.impl(), n] {
      T* gz = grad_of(Z);
      if (O->grad.empty() || !gz) return;
      const T g = O->grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T z = Z->data[i];
        const T s = z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
        gz[i] += g * (s - Y->data[i]);
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> dice_loss(const BasicTensor<T>& prob, const BasicTensor<T>& target, T eps) {
  require_same_shape(prob, target, "dice_loss");
  const std::size_t n = prob.size();
  T inter = 0, sp = 0, st = 0;
  for (std::size_t i = 0; i < n; ++i) {
    inter += prob[i] * target[i];
    sp += prob[i];
    st += target[i];
  }
  const T num = T(2) * inter + eps;
  const T den = sp + st + eps;
  BasicTensor<T> out = BasicTensor<T>::scalar(T(1) - num / den);
  if (tracking(prob)) {
    record(out, [P = prob.impl(), Y = target.impl(), O = out.impl(), num, den, n] {
      T* gp = grad_of(P);
      if (O->grad.empty() || !gp) return;
      const T g = O->grad[0];
      const T inv_den2 = T(1) / (den * den);
      for (std::size_t i = 0; i < n; ++i) gp[i] += -g * (T(2) * Y->data[i] * den - num) * inv_den2;
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= k) throw std::out_of_range("cross_entropy: target class out of range");
  }
  auto probs = std::make_shared<std::vector<T>>(rows * k);
  T acc = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.ptr() + r * k;
    const T mx = *std::max_element(z, z + k);
    T total = 0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(z[j] - mx);
    const T lse = mx + std::log(total);
    acc += lse - z[targets[r]];
    for (std::size_t j = 0; j < k; ++j) (*probs)[r * k + j] = std::exp(z[j] - lse);
  }
  BasicTensor<T> out = BasicTensor<T>::scalar(acc / static_cast<T>(rows));
  if (tracking(logits)) {
    record(out, [Z = logits.impl(), O = out.impl(), probs, tg = std::vector<int>(targets.begin(), targets.end()),
                 rows, k] {
      T* gz = grad_of(Z);
      if (O->grad.empty() || !gz) return;
      const T g = O->grad[0] / static_cast<T>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < k; ++j) {
          const T onehot = static_cast<int>(j) == tg[r] ? T(1) : T(0);
          gz[r * k + j] += g * ((*probs)[r * k + j] - onehot);
        }
      }
    });
  }
  return out;
}

#define NF_INSTANTIATE_OPS(T)                                                                                  \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                     \
  template BasicTensor<T> add_bias(const BasicTensor<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> scale_rows(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> row_sum_squares(const BasicTensor<T>&);                                              \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                               \
  template BasicTensor<T> matmul_nt(const BasicTensor<T>&, const BasicTensor<T>&);                            \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                               \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                         \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                      \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);                                         \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                          \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                         \
  template BasicTensor<T> normalize_unit_mean(const BasicTensor<T>&, T);                                       \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, T); \
  template BasicTensor<T> row_normalize(const BasicTensor<T>&);                                                \
  template BasicTensor<T> gather_rows(const BasicTensor<T>&, std::span<const std::size_t>);                   \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t, std::size_t);     \
  template BasicTensor<T> upsample_bilinear2x(const BasicTensor<T>&);                                          \
  template BasicTensor<T> bce_with_logits(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> dice_loss(const BasicTensor<T>&, const BasicTensor<T>&, T);                         \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const int>);

NF_INSTANTIATE_OPS(float)
NF_INSTANTIATE_OPS(double)

}  // namespace nf
