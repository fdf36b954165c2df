#pragma once

#include <string>
#include <vector>

#include "pldr/config.hpp"
#include "pldr/ops.hpp"
#include "pldr/rng.hpp"
#include "pldr/tensor.hpp"

namespace pldr {

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
  bool decay;  // weight decay applies; norms, biases and P are exempt
};

template <typename T>
Tensor<T> randn_tensor(Shape shape, Rng& rng, double sd) {
  Tensor<T> t(std::move(shape));
  t.set_requires_grad(true);
  for (size_t i = 0; i < t.size(); ++i) t.data()[i] = T(rng.normal(0.0, sd));
  return t;
}

template <typename T>
Tensor<T> const_tensor(Shape shape, T v) {
  Tensor<T> t(std::move(shape));
  t.set_requires_grad(true);
  for (size_t i = 0; i < t.size(); ++i) t.data()[i] = v;
  return t;
}

template <typename T>
struct Swiglu {
  Tensor<T> w_gate, w_val, w_out;  // no bias

  Swiglu() = default;
  Swiglu(int d_in, int gated, int d_out, Rng& rng, double sd)
      : w_gate(randn_tensor<T>({d_in, gated}, rng, sd)),
        w_val(randn_tensor<T>({d_in, gated}, rng, sd)),
        w_out(randn_tensor<T>({gated, d_out}, rng, sd)) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    return matmul(mul(silu(matmul(x, w_gate)), matmul(x, w_val)), w_out);
  }

  void params(const std::string& prefix, std::vector<ParamRef<T>>& out) const {
    out.push_back({prefix + ".w_gate", w_gate, true});
    out.push_back({prefix + ".w_val", w_val, true});
    out.push_back({prefix + ".w_out", w_out, true});
  }
};

// deep residual network over self-attention statistics of the query rows;
// weights are shared across the heads of a layer
template <typename T>
struct MetricLearner {
  int d_k = 0;
  int lin = 0;
  bool project = false;  // v9 resizes around the residual units
  T ln_eps = T(1e-5);
  Tensor<T> w_a, ln_g, ln_b;
  Tensor<T> pre, post;
  std::vector<Swiglu<T>> units;  // two swiglu blocks per residual unit

  MetricLearner() = default;
  MetricLearner(const ModelConfig& cfg, Rng& rng, double sd)
      : d_k(cfg.d_k()),
        lin(cfg.metric_linear_size),
        project(cfg.flavor == "v9"),
        ln_eps(T(cfg.ln_eps)),
        w_a(randn_tensor<T>({d_k, d_k}, rng, sd)),
        ln_g(const_tensor<T>({d_k}, T(1))),
        ln_b(const_tensor<T>({d_k}, T(0))) {
    if (project) {
      pre = randn_tensor<T>({d_k, lin}, rng, sd);
      post = randn_tensor<T>({lin, d_k}, rng, sd);
    }
    for (int u = 0; u < 2 * cfg.residual_units; ++u)
      units.emplace_back(lin, cfg.metric_gated_size, lin, rng, sd);
  }

  // row block s of the result is A_LM as seen after token s; block
  // valid_len-1 is the whole-sequence metric tensor
  Tensor<T> forward_stack(const Tensor<T>& q, int valid_len) const {
    Tensor<T> qa = matmul(q, w_a);
    Tensor<T> x = layer_norm_rows(prefix_gram_stack(qa, q, valid_len), ln_g, ln_b, ln_eps);
    if (project) x = matmul(x, pre);
    for (size_t u = 0; u + 1 < units.size(); u += 2)
      x = add(x, units[u + 1].forward(units[u].forward(x)));
    if (project) x = matmul(x, post);
    return iswiglu(x);
  }

  void params(const std::string& prefix, std::vector<ParamRef<T>>& out) const {
    out.push_back({prefix + ".w_a", w_a, true});
    out.push_back({prefix + ".ln_g", ln_g, false});
    out.push_back({prefix + ".ln_b", ln_b, false});
    if (project) {
      out.push_back({prefix + ".pre", pre, true});
      out.push_back({prefix + ".post", post, true});
    }
    for (size_t u = 0; u < units.size(); ++u)
      units[u].params(prefix + ".unit" + std::to_string(u / 2) + (u % 2 ? "b" : "a"), out);
  }
};

template <typename T>
Tensor<T> energy_curvature(const Tensor<T>& a_p, const Tensor<T>& w_g, const Tensor<T>& b_g) {
  return add_rowvec(matmul(a_p, w_g), b_g);
}

template <typename T>
struct HeadDeductive {
  Tensor<T> alm, ap, glm;  // d_k x d_k, the whole-sequence tensors
};

template <typename T>
struct MhaResult {
  Tensor<T> y;
  std::vector<HeadDeductive<T>> heads;
};

template <typename T>
struct PlgaMha {
  int d_model = 0, n_heads = 0, d_k = 0;
  T rope_base = T(10000);
  T power_floor = T(1e-12);
  Tensor<T> wq, wk, wv, wo;
  MetricLearner<T> metric;
  std::vector<Tensor<T>> p, w_g, b_g;  // per head

  PlgaMha() = default;
  PlgaMha(const ModelConfig& cfg, Rng& rng, double sd)
      : d_model(cfg.d_model),
        n_heads(cfg.n_heads),
        d_k(cfg.d_k()),
        rope_base(T(cfg.rope_base)),
        power_floor(T(cfg.power_floor)),
        wq(randn_tensor<T>({d_model, d_model}, rng, sd)),
        wk(randn_tensor<T>({d_model, d_model}, rng, sd)),
        wv(randn_tensor<T>({d_model, d_model}, rng, sd)),
        wo(randn_tensor<T>({d_model, d_model}, rng, sd)),
        metric(cfg, rng, sd) {
    for (int h = 0; h < n_heads; ++h) {
      p.push_back(const_tensor<T>({d_k, d_k}, T(1)));  // identity exponent at init
      w_g.push_back(randn_tensor<T>({d_k, d_k}, rng, sd));
      b_g.push_back(const_tensor<T>({d_k}, T(0)));
    }
  }

  MhaResult<T> forward(const Tensor<T>& x, int valid_len) const {
    int n = x.rows();
    Tensor<T> qall = matmul(x, wq);
    Tensor<T> kall = matmul(x, wk);
    Tensor<T> vall = matmul(x, wv);
    std::vector<int> positions(static_cast<size_t>(n));
    std::vector<int> limits(static_cast<size_t>(n));
    for (int s = 0; s < n; ++s) {
      positions[static_cast<size_t>(s)] = s;
      limits[static_cast<size_t>(s)] = std::min(s + 1, valid_len);
    }
    T scl = T(1.0 / std::sqrt(static_cast<double>(d_k)));
    std::vector<Tensor<T>> mixed;
    MhaResult<T> res;
    for (int h = 0; h < n_heads; ++h) {
      Tensor<T> q = slice_cols(qall, h * d_k, (h + 1) * d_k);
      Tensor<T> k = slice_cols(kall, h * d_k, (h + 1) * d_k);
      Tensor<T> v = slice_cols(vall, h * d_k, (h + 1) * d_k);
      Tensor<T> alm = metric.forward_stack(q, valid_len);  // pre-rotary q
      Tensor<T> ap = pow_tiled(alm, p[static_cast<size_t>(h)], power_floor);
      Tensor<T> glm = energy_curvature(ap, w_g[static_cast<size_t>(h)], b_g[static_cast<size_t>(h)]);
      Tensor<T> qr = rotary(q, positions, rope_base);
      Tensor<T> kr = rotary(k, positions, rope_base);
      Tensor<T> e = causal_softmax(plga_scores(qr, kr, glm, limits, scl), limits);
      mixed.push_back(masked_matmul(e, v, limits));
      int r0 = (valid_len - 1) * d_k;
      res.heads.push_back({slice_rows(alm, r0, r0 + d_k), slice_rows(ap, r0, r0 + d_k),
                           slice_rows(glm, r0, r0 + d_k)});
    }
    res.y = matmul(concat_cols(mixed), wo);
    return res;
  }

  void params(const std::string& prefix, std::vector<ParamRef<T>>& out) const {
    out.push_back({prefix + ".wq", wq, true});
    out.push_back({prefix + ".wk", wk, true});
    out.push_back({prefix + ".wv", wv, true});
    out.push_back({prefix + ".wo", wo, true});
    metric.params(prefix + ".metric", out);
    for (int h = 0; h < n_heads; ++h) {
      std::string hp = prefix + ".head" + std::to_string(h);
      out.push_back({hp + ".p", p[static_cast<size_t>(h)], false});  // exponents stay undecayed
      out.push_back({hp + ".w_g", w_g[static_cast<size_t>(h)], true});
      out.push_back({hp + ".b_g", b_g[static_cast<size_t>(h)], false});
    }
  }
};

}  // namespace pldr
