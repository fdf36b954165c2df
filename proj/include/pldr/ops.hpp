#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "pldr/tensor.hpp"

namespace pldr {

namespace detail {

// c[m,n] += a[m,k] * b[k,n], row major, j innermost so the compiler can
// vectorize the fma loop
template <typename T>
inline void mm_acc(T* c, const T* a, const T* b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    T* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
inline std::vector<T> transpose_copy(const T* a, int m, int n) {
  std::vector<T> at(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) at[static_cast<size_t>(j) * m + i] = a[static_cast<size_t>(i) * n + j];
  return at;
}

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

template <typename T>
inline T sigmoid_val(T x) {
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (tracing(a, b)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (tracing(a, b)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (tracing(a, b)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * s;
  if (tracing(a)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, out, s]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
  }
  return out;
}

// broadcast v over every row of a
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& v) {
  int m = a.rows(), n = a.cols();
  if (v.rank() != 1 || v.dim(0) != n)
    throw shape_error("add_rowvec: vector " + shape_str(v.shape()) + " vs cols " + std::to_string(n));
  Tensor<T> out(a.shape());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + v.at(j);
  if (tracing(a, v)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, v, out, m, n]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (v.requires_grad()) {
        auto& gv = v.grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gv[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * n + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw shape_error("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out({m, n});
  detail::mm_acc(out.data(), a.data(), b.data(), m, k, n);
  if (tracing(a, b)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, b, out, m, k, n]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto bt = detail::transpose_copy(b.data(), k, n);  // dA = dC B^T
        detail::mm_acc(a.grad().data(), g.data(), bt.data(), m, n, k);
      }
      if (b.requires_grad()) {  // dB = A^T dC
        auto at = detail::transpose_copy(a.data(), m, k);
        detail::mm_acc(b.grad().data(), at.data(), g.data(), k, m, n);
      }
    });
  }
  return out;
}

// a[m,k] * b[n,k]^T
template <typename T>
Tensor<T> matmul_t(const Tensor<T>& a, const Tensor<T>& b) {
  int m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw shape_error("matmul_t: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  Tensor<T> out({m, n});
  auto bt = detail::transpose_copy(b.data(), n, k);
  detail::mm_acc(out.data(), a.data(), bt.data(), m, k, n);
  if (tracing(a, b)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, b, out, m, k, n]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) detail::mm_acc(a.grad().data(), g.data(), b.data(), m, n, k);
      if (b.requires_grad()) {  // dB = dC^T A
        auto gt = detail::transpose_copy(g.data(), m, n);
        detail::mm_acc(b.grad().data(), gt.data(), a.data(), n, m, k);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  int m = a.rows(), n = a.cols();
  Tensor<T> out({n, m}, detail::transpose_copy(a.data(), m, n));
  if (tracing(a)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, out, m, n]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
          ga[static_cast<size_t>(j) * n + i] += g[static_cast<size_t>(i) * m + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, int r0, int r1) {
  int m = a.rows(), n = a.cols();
  if (r0 < 0 || r1 > m || r0 >= r1) throw shape_error("slice_rows: bad range");
  Tensor<T> out({r1 - r0, n});
  std::copy(a.data() + static_cast<size_t>(r0) * n, a.data() + static_cast<size_t>(r1) * n,
            out.data());
  if (tracing(a)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, out, r0, n]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[static_cast<size_t>(r0) * n + i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
  int m = a.rows(), n = a.cols();
  if (c0 < 0 || c1 > n || c0 >= c1) throw shape_error("slice_cols: bad range");
  int w = c1 - c0;
  Tensor<T> out({m, w});
  for (int i = 0; i < m; ++i)
    std::copy(a.data() + static_cast<size_t>(i) * n + c0, a.data() + static_cast<size_t>(i) * n + c1,
              out.data() + static_cast<size_t>(i) * w);
  if (tracing(a)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, out, m, n, c0, w]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          ga[static_cast<size_t>(i) * n + c0 + j] += g[static_cast<size_t>(i) * w + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw shape_error("concat_cols: empty");
  int m = parts[0].rows(), n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw shape_error("concat_cols: row mismatch");
    n += p.cols();
  }
  Tensor<T> out({m, n});
  int off = 0;
  for (const auto& p : parts) {
    int w = p.cols();
    for (int i = 0; i < m; ++i)
      std::copy(p.data() + static_cast<size_t>(i) * w, p.data() + static_cast<size_t>(i) * w + w,
                out.data() + static_cast<size_t>(i) * n + off);
    off += w;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (Tape<T>::active() && any) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([parts, out, m, n]() mutable {
      const auto& g = out.grad();
      int off = 0;
      for (auto& p : parts) {
        int w = p.cols();
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
              gp[static_cast<size_t>(i) * w + j] += g[static_cast<size_t>(i) * n + off + j];
        }
        off += w;
      }
    });
  }
  return out;
}

// gather rows of an embedding table; backward scatter-adds
template <typename T>
Tensor<T> rows_lookup(const Tensor<T>& table, const std::vector<int>& ids) {
  int v = table.rows(), n = table.cols();
  Tensor<T> out({static_cast<int>(ids.size()), n});
  for (size_t i = 0; i < ids.size(); ++i) {
    int id = ids[i];
    if (id < 0 || id >= v) throw shape_error("rows_lookup: id out of range");
    std::copy(table.data() + static_cast<size_t>(id) * n, table.data() + static_cast<size_t>(id) * n + n,
              out.data() + i * n);
  }
  if (tracing(table)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([table, out, ids, n]() mutable {
      const auto& g = out.grad();
      auto& gt = table.grad();
      for (size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < n; ++j)
          gt[static_cast<size_t>(ids[i]) * n + j] += g[i * static_cast<size_t>(n) + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = detail::sigmoid_val(a.data()[i]);
  if (tracing(a)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, out]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        T s = out.data()[i];
        ga[i] += g[i] * s * (T(1) - s);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) {
    T x = a.data()[i];
    out.data()[i] = x * detail::sigmoid_val(x);
  }
  if (tracing(a)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, out]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        T x = a.data()[i];
        T s = detail::sigmoid_val(x);
        ga[i] += g[i] * s * (T(1) + x * (T(1) - s));
      }
    });
  }
  return out;
}

// x^2 sigmoid(x); nonnegative everywhere, which the potential tensor relies on
template <typename T>
Tensor<T> iswiglu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) {
    T x = a.data()[i];
    out.data()[i] = x * x * detail::sigmoid_val(x);
  }
  if (tracing(a)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, out]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        T x = a.data()[i];
        T s = detail::sigmoid_val(x);
        ga[i] += g[i] * x * s * (T(2) + x * (T(1) - s));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                          T eps = T(1e-5)) {
  int m = x.rows(), n = x.cols();
  if (gain.rank() != 1 || gain.dim(0) != n || bias.rank() != 1 || bias.dim(0) != n)
    throw shape_error("layer_norm_rows: gain/bias must be (" + std::to_string(n) + ")");
  Tensor<T> out({m, n});
  std::vector<T> xhat(static_cast<size_t>(m) * n);
  std::vector<T> inv_sigma(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    const T* row = x.data() + static_cast<size_t>(i) * n;
    double mu = 0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    double var = 0;
    for (int j = 0; j < n; ++j) {
      double d = row[j] - mu;
      var += d * d;
    }
    var /= n;
    T is = T(1.0 / std::sqrt(var + static_cast<double>(eps)));
    inv_sigma[static_cast<size_t>(i)] = is;
    for (int j = 0; j < n; ++j) {
      T h = (row[j] - T(mu)) * is;
      xhat[static_cast<size_t>(i) * n + j] = h;
      out.at(i, j) = h * gain.at(j) + bias.at(j);
    }
  }
  if (tracing(x, gain, bias)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([x, gain, bias, out, xhat, inv_sigma, m, n]() mutable {
      const auto& g = out.grad();
      for (int i = 0; i < m; ++i) {
        const T* grow = g.data() + static_cast<size_t>(i) * n;
        const T* hrow = xhat.data() + static_cast<size_t>(i) * n;
        if (gain.requires_grad()) {
          auto& gg = gain.grad();
          for (int j = 0; j < n; ++j) gg[static_cast<size_t>(j)] += grow[j] * hrow[j];
        }
        if (bias.requires_grad()) {
          auto& gb = bias.grad();
          for (int j = 0; j < n; ++j) gb[static_cast<size_t>(j)] += grow[j];
        }
        if (x.requires_grad()) {
          auto& gx = x.grad();
          double sum_gy = 0, sum_gyh = 0;
          for (int j = 0; j < n; ++j) {
            double gy = static_cast<double>(grow[j]) * gain.at(j);
            sum_gy += gy;
            sum_gyh += gy * hrow[j];
          }
          T mg = T(sum_gy / n), mgh = T(sum_gyh / n);
          T is = inv_sigma[static_cast<size_t>(i)];
          for (int j = 0; j < n; ++j) {
            T gy = grow[j] * gain.at(j);
            gx[static_cast<size_t>(i) * n + j] += (gy - mg - hrow[j] * mgh) * is;
          }
        }
      }
    });
  }
  return out;
}

// softmax over the first limits[r] entries of each row, zero elsewhere;
// limits[r] >= 1
template <typename T>
Tensor<T> causal_softmax(const Tensor<T>& s, const std::vector<int>& limits) {
  int m = s.rows(), n = s.cols();
  if (static_cast<int>(limits.size()) != m) throw shape_error("causal_softmax: limits size");
  Tensor<T> out({m, n});
  for (int i = 0; i < m; ++i) {
    int lim = limits[static_cast<size_t>(i)];
    if (lim < 1 || lim > n) throw shape_error("causal_softmax: bad limit");
    const T* row = s.data() + static_cast<size_t>(i) * n;
    T mx = row[0];
    for (int j = 1; j < lim; ++j) mx = std::max(mx, row[j]);
    double z = 0;
    T* orow = out.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < lim; ++j) {
      T e = std::exp(row[j] - mx);
      orow[j] = e;
      z += e;
    }
    T iz = T(1.0 / z);
    for (int j = 0; j < lim; ++j) orow[j] *= iz;
  }
  if (tracing(s)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([s, out, limits, m, n]() mutable {
      const auto& g = out.grad();
      auto& gs = s.grad();
      for (int i = 0; i < m; ++i) {
        int lim = limits[static_cast<size_t>(i)];
        const T* erow = out.data() + static_cast<size_t>(i) * n;
        const T* grow = g.data() + static_cast<size_t>(i) * n;
        double dot = 0;
        for (int j = 0; j < lim; ++j) dot += static_cast<double>(grow[j]) * erow[j];
        for (int j = 0; j < lim; ++j)
          gs[static_cast<size_t>(i) * n + j] += erow[j] * (grow[j] - T(dot));
      }
    });
  }
  return out;
}

// out[r,:] = e[r,0:lim) * v[0:lim,:], the causal attention mix
template <typename T>
Tensor<T> masked_matmul(const Tensor<T>& e, const Tensor<T>& v, const std::vector<int>& limits) {
  int m = e.rows(), n = e.cols(), d = v.cols();
  if (v.rows() != n) throw shape_error("masked_matmul: inner dim");
  if (static_cast<int>(limits.size()) != m) throw shape_error("masked_matmul: limits size");
  Tensor<T> out({m, d});
  for (int i = 0; i < m; ++i) {
    int lim = limits[static_cast<size_t>(i)];
    T* orow = out.data() + static_cast<size_t>(i) * d;
    for (int t = 0; t < lim; ++t) {
      T w = e.at(i, t);
      if (w == T(0)) continue;
      const T* vrow = v.data() + static_cast<size_t>(t) * d;
      for (int j = 0; j < d; ++j) orow[j] += w * vrow[j];
    }
  }
  if (tracing(e, v)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([e, v, out, limits, m, n, d]() mutable {
      const auto& g = out.grad();
      for (int i = 0; i < m; ++i) {
        int lim = limits[static_cast<size_t>(i)];
        const T* grow = g.data() + static_cast<size_t>(i) * d;
        if (e.requires_grad()) {
          auto& ge = e.grad();
          for (int t = 0; t < lim; ++t) {
            const T* vrow = v.data() + static_cast<size_t>(t) * d;
            double acc = 0;
            for (int j = 0; j < d; ++j) acc += static_cast<double>(grow[j]) * vrow[j];
            ge[static_cast<size_t>(i) * n + t] += T(acc);
          }
        }
        if (v.requires_grad()) {
          auto& gv = v.grad();
          for (int t = 0; t < lim; ++t) {
            T w = e.at(i, t);
            for (int j = 0; j < d; ++j) gv[static_cast<size_t>(t) * d + j] += w * grow[j];
          }
        }
      }
    });
  }
  return out;
}

// a^p elementwise with p tiled down the rows of a; a must be nonnegative.
// bases below the floor are clamped so the log stays finite.
template <typename T>
Tensor<T> pow_tiled(const Tensor<T>& a, const Tensor<T>& p, T floor_eps = T(1e-12)) {
  int m = a.rows(), n = a.cols(), pm = p.rows();
  if (p.cols() != n || pm <= 0 || m % pm != 0)
    throw shape_error("pow_tiled: " + shape_str(a.shape()) + " vs " + shape_str(p.shape()));
  Tensor<T> out(a.shape());
  for (int i = 0; i < m; ++i) {
    int pi = i % pm;
    for (int j = 0; j < n; ++j) {
      if (a.at(i, j) < T(0)) throw input_error("pow_tiled: negative base");
      T base = std::max(a.at(i, j), floor_eps);
      out.at(i, j) = std::pow(base, p.at(pi, j));
    }
  }
  if (tracing(a, p)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, p, out, m, n, pm, floor_eps]() mutable {
      const auto& g = out.grad();
      for (int i = 0; i < m; ++i) {
        int pi = i % pm;
        for (int j = 0; j < n; ++j) {
          size_t idx = static_cast<size_t>(i) * n + j;
          T base = std::max(a.at(i, j), floor_eps);
          T pe = p.at(pi, j);
          if (a.requires_grad() && a.at(i, j) > floor_eps)
            a.grad()[idx] += g[idx] * pe * std::pow(base, pe - T(1));
          if (p.requires_grad())
            p.grad()[static_cast<size_t>(pi) * n + j] += g[idx] * out.data()[idx] * std::log(base);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> ln(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = std::log(a.data()[i]);
  if (tracing(a)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, out]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a.data()[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> absolute(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = std::abs(a.data()[i]);
  if (tracing(a)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, out]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i)
        ga[i] += a.data()[i] < T(0) ? -g[i] : (a.data()[i] > T(0) ? g[i] : T(0));
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i) acc += a.data()[i];
  Tensor<T> out = Tensor<T>::scalar(T(acc));
  if (tracing(a)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([a, out]() mutable {
      T g = out.grad()[0];
      auto& ga = a.grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), T(1) / T(a.size()));
}

// rotate column pairs of x by pos * base^(-2i/d)
template <typename T>
Tensor<T> rotary(const Tensor<T>& x, const std::vector<int>& positions, T base = T(10000)) {
  int m = x.rows(), n = x.cols();
  if (n % 2 != 0) throw shape_error("rotary: odd width");
  if (static_cast<int>(positions.size()) != m) throw shape_error("rotary: positions size");
  std::vector<T> inv_freq(static_cast<size_t>(n / 2));
  for (int i = 0; i < n / 2; ++i)
    inv_freq[static_cast<size_t>(i)] = T(std::pow(static_cast<double>(base), -2.0 * i / n));
  Tensor<T> out(x.shape());
  for (int r = 0; r < m; ++r) {
    for (int i = 0; i < n / 2; ++i) {
      double ang = positions[static_cast<size_t>(r)] * static_cast<double>(inv_freq[static_cast<size_t>(i)]);
      T c = T(std::cos(ang)), s = T(std::sin(ang));
      T x0 = x.at(r, 2 * i), x1 = x.at(r, 2 * i + 1);
      out.at(r, 2 * i) = x0 * c - x1 * s;
      out.at(r, 2 * i + 1) = x0 * s + x1 * c;
    }
  }
  if (tracing(x)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([x, out, positions, inv_freq, m, n]() mutable {
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (int r = 0; r < m; ++r) {
        for (int i = 0; i < n / 2; ++i) {
          double ang = positions[static_cast<size_t>(r)] * static_cast<double>(inv_freq[static_cast<size_t>(i)]);
          T c = T(std::cos(ang)), s = T(std::sin(ang));
          T g0 = g[static_cast<size_t>(r) * n + 2 * i], g1 = g[static_cast<size_t>(r) * n + 2 * i + 1];
          gx[static_cast<size_t>(r) * n + 2 * i] += g0 * c + g1 * s;
          gx[static_cast<size_t>(r) * n + 2 * i + 1] += -g0 * s + g1 * c;
        }
      }
    });
  }
  return out;
}

namespace detail {

// e^M by scaling and squaring with a truncated Taylor series. The scale
// count is not capped: a strictly triangular input keeps an exactly zero
// diagonal through every term and squaring, so tr(e^M) stays exactly d.
template <typename T>
std::vector<T> expm(const T* mdata, int d) {
  const double theta = 0.5;
  const int terms = 14;
  size_t nn = static_cast<size_t>(d) * d;
  double norm1 = 0;  // max column abs sum
  for (int j = 0; j < d; ++j) {
    double c = 0;
    for (int i = 0; i < d; ++i) c += std::abs(static_cast<double>(mdata[static_cast<size_t>(i) * d + j]));
    norm1 = std::max(norm1, c);
  }
  int s = 0;
  if (norm1 > theta) s = static_cast<int>(std::ceil(std::log2(norm1 / theta)));
  std::vector<T> a(nn);
  T sc = T(std::pow(2.0, -s));
  for (size_t i = 0; i < nn; ++i) a[i] = mdata[i] * sc;

  std::vector<T> acc(nn, T(0)), term(nn, T(0)), next(nn);
  for (int i = 0; i < d; ++i) {
    acc[static_cast<size_t>(i) * d + i] = T(1);
    term[static_cast<size_t>(i) * d + i] = T(1);
  }
  for (int k = 1; k <= terms; ++k) {
    std::fill(next.begin(), next.end(), T(0));
    mm_acc(next.data(), term.data(), a.data(), d, d, d);
    T ik = T(1) / T(k);
    for (size_t i = 0; i < nn; ++i) {
      term[i] = next[i] * ik;
      acc[i] += term[i];
    }
  }
  for (int q = 0; q < s; ++q) {
    std::fill(next.begin(), next.end(), T(0));
    mm_acc(next.data(), acc.data(), acc.data(), d, d, d);
    acc.swap(next);
  }
  return acc;
}

}  // namespace detail

// tr(e^M) for square M; d tr(e^M)/dM = (e^M)^T
template <typename T>
Tensor<T> expm_trace(const Tensor<T>& m) {
  int d = m.rows();
  if (m.cols() != d) throw shape_error("expm_trace: not square");
  auto em = detail::expm(m.data(), d);
  double tr = 0;
  for (int i = 0; i < d; ++i) tr += em[static_cast<size_t>(i) * d + i];
  Tensor<T> out = Tensor<T>::scalar(T(tr));
  if (tracing(m) && std::isfinite(tr)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([m, out, em, d]() mutable {
      T g = out.grad()[0];
      auto& gm = m.grad();
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
          gm[static_cast<size_t>(i) * d + j] += g * em[static_cast<size_t>(j) * d + i];
    });
  }
  return out;
}

// stack of per position prefix attention statistics, row block s holds
//   (1/c_s) * qa[0:c_s)^T q[0:c_s)   with c_s = min(s+1, valid_len)
// so pad rows freeze the statistic at the last real token
template <typename T>
Tensor<T> prefix_gram_stack(const Tensor<T>& qa, const Tensor<T>& q, int valid_len) {
  int n = qa.rows(), d = qa.cols();
  if (q.rows() != n || q.cols() != d) throw shape_error("prefix_gram_stack: shape mismatch");
  if (valid_len < 1 || valid_len > n) throw shape_error("prefix_gram_stack: bad valid_len");
  Tensor<T> out({n * d, d});
  std::vector<double> run(static_cast<size_t>(d) * d, 0.0);
  for (int s = 0; s < n; ++s) {
    if (s < valid_len) {
      const T* qar = qa.data() + static_cast<size_t>(s) * d;
      const T* qr = q.data() + static_cast<size_t>(s) * d;
      for (int i = 0; i < d; ++i) {
        double v = qar[i];
        for (int j = 0; j < d; ++j) run[static_cast<size_t>(i) * d + j] += v * qr[j];
      }
    }
    int c = std::min(s + 1, valid_len);
    T ic = T(1) / T(c);
    T* block = out.data() + static_cast<size_t>(s) * d * d;
    for (size_t i = 0; i < static_cast<size_t>(d) * d; ++i) block[i] = T(run[i]) * ic;
  }
  if (tracing(qa, q)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([qa, q, out, n, d, valid_len]() mutable {
      const auto& g = out.grad();
      // suffix sums of g_s / c_s; row t of qa and q only feeds blocks s >= t
      std::vector<T> h(static_cast<size_t>(d) * d, T(0));
      for (int t = n - 1; t >= 0; --t) {
        int c = std::min(t + 1, valid_len);
        T ic = T(1) / T(c);
        const T* gblock = g.data() + static_cast<size_t>(t) * d * d;
        for (size_t i = 0; i < static_cast<size_t>(d) * d; ++i) h[i] += gblock[i] * ic;
        if (t >= valid_len) continue;
        const T* qar = qa.data() + static_cast<size_t>(t) * d;
        const T* qr = q.data() + static_cast<size_t>(t) * d;
        if (qa.requires_grad()) {
          auto& gqa = qa.grad();
          for (int i = 0; i < d; ++i) {
            double acc = 0;
            for (int j = 0; j < d; ++j) acc += static_cast<double>(h[static_cast<size_t>(i) * d + j]) * qr[j];
            gqa[static_cast<size_t>(t) * d + i] += T(acc);
          }
        }
        if (q.requires_grad()) {
          auto& gq = q.grad();
          for (int j = 0; j < d; ++j) {
            double acc = 0;
            for (int i = 0; i < d; ++i) acc += static_cast<double>(qar[i]) * h[static_cast<size_t>(i) * d + j];
            gq[static_cast<size_t>(t) * d + j] += T(acc);
          }
        }
      }
    });
  }
  return out;
}

// scores[s,t] = scl * (qr[s] g_s) . (kr[t] g_s) for t < limits[s], where g_s
// is row block s of gstack; written as z_s = qr[s] g_s g_s^T so each row is
// one vector-matrix product followed by dot products against kr
template <typename T>
Tensor<T> plga_scores(const Tensor<T>& qr, const Tensor<T>& kr, const Tensor<T>& gstack,
                      const std::vector<int>& limits, T scl) {
  int n = qr.rows(), d = qr.cols();
  if (kr.rows() != n || kr.cols() != d) throw shape_error("plga_scores: kr shape");
  if (gstack.rows() != n * d || gstack.cols() != d) throw shape_error("plga_scores: gstack shape");
  if (static_cast<int>(limits.size()) != n) throw shape_error("plga_scores: limits size");
  Tensor<T> out({n, n});
  std::vector<T> u(static_cast<size_t>(n) * d), z(static_cast<size_t>(n) * d);
  auto krt = detail::transpose_copy(kr.data(), n, d);
  for (int s = 0; s < n; ++s) {
    const T* g = gstack.data() + static_cast<size_t>(s) * d * d;
    const T* q = qr.data() + static_cast<size_t>(s) * d;
    T* us = u.data() + static_cast<size_t>(s) * d;
    T* zs = z.data() + static_cast<size_t>(s) * d;
    for (int j = 0; j < d; ++j) {
      double acc = 0;
      for (int i = 0; i < d; ++i) acc += static_cast<double>(q[i]) * g[static_cast<size_t>(i) * d + j];
      us[j] = T(acc);
    }
    for (int i = 0; i < d; ++i) {
      double acc = 0;
      for (int j = 0; j < d; ++j) acc += static_cast<double>(us[j]) * g[static_cast<size_t>(i) * d + j];
      zs[i] = T(acc);
    }
    int lim = limits[static_cast<size_t>(s)];
    T* orow = out.data() + static_cast<size_t>(s) * n;
    for (int k = 0; k < d; ++k) {
      T zv = zs[k] * scl;
      const T* krow = krt.data() + static_cast<size_t>(k) * n;
      for (int t = 0; t < lim; ++t) orow[t] += zv * krow[t];
    }
  }
  if (tracing(qr, kr, gstack)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([qr, kr, gstack, out, limits, u, z, n, d, scl]() mutable {
      const auto& gout = out.grad();
      std::vector<T> dz(static_cast<size_t>(d)), w(static_cast<size_t>(d));
      for (int s = 0; s < n; ++s) {
        int lim = limits[static_cast<size_t>(s)];
        const T* grow = gout.data() + static_cast<size_t>(s) * n;
        const T* g = gstack.data() + static_cast<size_t>(s) * d * d;
        const T* us = u.data() + static_cast<size_t>(s) * d;
        const T* zs = z.data() + static_cast<size_t>(s) * d;
        std::fill(dz.begin(), dz.end(), T(0));
        for (int t = 0; t < lim; ++t) {
          T gv = grow[t] * scl;
          if (gv == T(0)) continue;
          const T* krow = kr.data() + static_cast<size_t>(t) * d;
          for (int k = 0; k < d; ++k) dz[static_cast<size_t>(k)] += gv * krow[k];
        }
        if (kr.requires_grad()) {
          auto& gkr = kr.grad();
          for (int t = 0; t < lim; ++t) {
            T gv = grow[t] * scl;
            if (gv == T(0)) continue;
            for (int k = 0; k < d; ++k) gkr[static_cast<size_t>(t) * d + k] += gv * zs[k];
          }
        }
        // w = dz g (row vector times matrix)
        for (int j = 0; j < d; ++j) {
          double acc = 0;
          for (int i = 0; i < d; ++i) acc += static_cast<double>(dz[static_cast<size_t>(i)]) * g[static_cast<size_t>(i) * d + j];
          w[static_cast<size_t>(j)] = T(acc);
        }
        if (qr.requires_grad()) {
          auto& gqr = qr.grad();
          for (int i = 0; i < d; ++i) {
            double acc = 0;
            for (int j = 0; j < d; ++j) acc += static_cast<double>(w[static_cast<size_t>(j)]) * g[static_cast<size_t>(i) * d + j];
            gqr[static_cast<size_t>(s) * d + i] += T(acc);
          }
        }
        if (gstack.requires_grad()) {
          auto& gg = gstack.grad();
          T* gblock = gg.data() + static_cast<size_t>(s) * d * d;
          const T* q = qr.data() + static_cast<size_t>(s) * d;
          for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
              gblock[static_cast<size_t>(i) * d + j] += q[i] * w[static_cast<size_t>(j)] + dz[static_cast<size_t>(i)] * us[j];
        }
      }
    });
  }
  return out;
}

// summed cross entropy of rows whose target is not ignore_id; the log-sum-exp
// runs in double so the float path stays stable
template <typename T>
Tensor<T> ce_sum(const Tensor<T>& logits, const std::vector<int>& targets, int ignore_id) {
  int m = logits.rows(), v = logits.cols();
  if (static_cast<int>(targets.size()) != m) throw shape_error("ce_sum: targets size");
  double total = 0;
  std::vector<double> lse(static_cast<size_t>(m)), mx(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    int t = targets[static_cast<size_t>(i)];
    if (t == ignore_id) continue;
    if (t < 0 || t >= v) throw shape_error("ce_sum: target out of range");
    const T* row = logits.data() + static_cast<size_t>(i) * v;
    double rmx = row[0];
    for (int j = 1; j < v; ++j) rmx = std::max(rmx, static_cast<double>(row[j]));
    double z = 0;
    for (int j = 0; j < v; ++j) z += std::exp(static_cast<double>(row[j]) - rmx);
    mx[static_cast<size_t>(i)] = rmx;
    lse[static_cast<size_t>(i)] = rmx + std::log(z);
    total += lse[static_cast<size_t>(i)] - static_cast<double>(row[t]);
  }
  Tensor<T> out = Tensor<T>::scalar(T(total));
  if (tracing(logits)) {
    out.set_requires_grad(true);
    Tape<T>::active()->record([logits, out, targets, ignore_id, lse, m, v]() mutable {
      T g = out.grad()[0];
      auto& gl = logits.grad();
      for (int i = 0; i < m; ++i) {
        int t = targets[static_cast<size_t>(i)];
        if (t == ignore_id) continue;
        const T* row = logits.data() + static_cast<size_t>(i) * v;
        double l = lse[static_cast<size_t>(i)];
        for (int j = 0; j < v; ++j) {
          double p = std::exp(static_cast<double>(row[j]) - l);
          gl[static_cast<size_t>(i) * v + j] += g * T(p - (j == t ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

// argmax accuracy helper, not differentiable
template <typename T>
inline std::pair<int64_t, int64_t> correct_and_total(const Tensor<T>& logits,
                                                     const std::vector<int>& targets, int ignore_id) {
  int m = logits.rows(), v = logits.cols();
  int64_t correct = 0, total = 0;
  for (int i = 0; i < m; ++i) {
    int t = targets[static_cast<size_t>(i)];
    if (t == ignore_id) continue;
    const T* row = logits.data() + static_cast<size_t>(i) * v;
    int best = 0;
    for (int j = 1; j < v; ++j)
      if (row[j] > row[best]) best = j;
    ++total;
    if (best == t) ++correct;
  }
  return {correct, total};
}

}  // namespace pldr
