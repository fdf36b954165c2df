#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pldr/attention.hpp"
#include "pldr/config.hpp"

namespace pldr {

template <typename T>
struct LayerResult {
  Tensor<T> x;
  std::vector<HeadDeductive<T>> heads;
};

template <typename T>
struct DecoderLayer {
  PlgaMha<T> mha;
  Swiglu<T> ffn;
  Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
  T ln_eps = T(1e-5);

  DecoderLayer() = default;
  DecoderLayer(const ModelConfig& cfg, Rng& rng, double sd)
      : mha(cfg, rng, sd),
        ffn(cfg.d_model, cfg.ffn_gated_size(), cfg.d_model, rng, sd),
        ln1_g(const_tensor<T>({cfg.d_model}, T(1))),
        ln1_b(const_tensor<T>({cfg.d_model}, T(0))),
        ln2_g(const_tensor<T>({cfg.d_model}, T(1))),
        ln2_b(const_tensor<T>({cfg.d_model}, T(0))),
        ln_eps(T(cfg.ln_eps)) {}

  LayerResult<T> forward(const Tensor<T>& x, int valid_len) const {
    MhaResult<T> att = mha.forward(x, valid_len);
    Tensor<T> h1 = layer_norm_rows(add(x, att.y), ln1_g, ln1_b, ln_eps);
    Tensor<T> out = layer_norm_rows(add(h1, ffn.forward(h1)), ln2_g, ln2_b, ln_eps);
    return {out, std::move(att.heads)};
  }

  void params(const std::string& prefix, std::vector<ParamRef<T>>& out) const {
    mha.params(prefix + ".mha", out);
    ffn.params(prefix + ".ffn", out);
    out.push_back({prefix + ".ln1_g", ln1_g, false});
    out.push_back({prefix + ".ln1_b", ln1_b, false});
    out.push_back({prefix + ".ln2_g", ln2_g, false});
    out.push_back({prefix + ".ln2_b", ln2_b, false});
  }
};

// deductive outputs of one forward pass: [layer][head]
template <typename T>
using Deductive = std::vector<std::vector<HeadDeductive<T>>>;

template <typename T>
struct SampleResult {
  Tensor<T> logits;  // n_tok x vocab
  Deductive<T> deductive;
};

template <typename T>
class Model {
 public:
  Model() = default;
  Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    double sd = 0.02 / std::sqrt(2.0 * cfg_.n_layers);
    tok_emb_ = randn_tensor<T>({cfg_.vocab_size, cfg_.d_model}, rng, 0.02);
    emb_ln_g_ = const_tensor<T>({cfg_.d_model}, T(1));
    emb_ln_b_ = const_tensor<T>({cfg_.d_model}, T(0));
    for (int l = 0; l < cfg_.n_layers; ++l) layers_.emplace_back(cfg_, rng, sd);
    head_ = randn_tensor<T>({cfg_.d_model, cfg_.vocab_size}, rng, 0.02);
  }

  const ModelConfig& config() const { return cfg_; }

  Tensor<T> embed(const std::vector<int>& ids) const {
    for (int id : ids)
      if (id < 0 || id >= cfg_.vocab_size) throw input_error("embed: token id out of range");
    Tensor<T> x = scale(rows_lookup(tok_emb_, ids), T(std::sqrt(static_cast<double>(cfg_.d_model))));
    return layer_norm_rows(x, emb_ln_g_, emb_ln_b_, T(cfg_.ln_eps));
  }

  // valid_len <= 0 means the whole row is real tokens
  SampleResult<T> forward(const std::vector<int>& ids, int valid_len = 0) const {
    if (ids.empty()) throw input_error("forward: empty token sequence");
    int n = static_cast<int>(ids.size());
    if (valid_len <= 0 || valid_len > n) valid_len = n;
    Tensor<T> x = embed(ids);
    SampleResult<T> res;
    for (const auto& layer : layers_) {
      LayerResult<T> lr = layer.forward(x, valid_len);
      x = lr.x;
      res.deductive.push_back(std::move(lr.heads));
    }
    res.logits = matmul(x, head_);
    return res;
  }

  std::vector<ParamRef<T>> params() const {
    std::vector<ParamRef<T>> out;
    out.push_back({"tok_emb", tok_emb_, true});
    out.push_back({"emb_ln_g", emb_ln_g_, false});
    out.push_back({"emb_ln_b", emb_ln_b_, false});
    for (size_t l = 0; l < layers_.size(); ++l)
      layers_[l].params("layer" + std::to_string(l), out);
    out.push_back({"head", head_, true});
    return out;
  }

  void zero_grads() const {
    for (auto& p : params()) p.tensor.zero_grad();
  }

  // per-head power coefficients, [layer][head]
  std::vector<std::vector<Tensor<T>>> power_coefficients() const {
    std::vector<std::vector<Tensor<T>>> out;
    for (const auto& layer : layers_) out.push_back(layer.mha.p);
    return out;
  }

 private:
  ModelConfig cfg_;
  Tensor<T> tok_emb_, emb_ln_g_, emb_ln_b_, head_;
  std::vector<DecoderLayer<T>> layers_;
};

// closed-form count of learned scalars; must equal the registry total exactly
inline int64_t param_count(const ModelConfig& cfg) {
  int64_t d = cfg.d_model, dk = cfg.d_k(), h = cfg.n_heads, v = cfg.vocab_size;
  int64_t lin = cfg.metric_linear_size, gated = cfg.metric_gated_size;
  int64_t metric = dk * dk + 2 * dk + 6 * cfg.residual_units * lin * gated;
  if (cfg.flavor == "v9") metric += 2 * dk * lin;
  int64_t per_head = 2 * dk * dk + dk;  // P, W_G, b_G
  int64_t ffn = 3 * d * cfg.ffn_gated_size();
  int64_t layer = 4 * d * d + metric + h * per_head + ffn + 4 * d;
  return 2 * v * d + 2 * d + cfg.n_layers * layer;
}

}  // namespace pldr
