#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pldr/attention.hpp"
#include "pldr/gradcheck.hpp"
#include "pldr/rng.hpp"

using namespace pldr;
using Td = Tensor<double>;

namespace {

ModelConfig tiny_cfg(const std::string& flavor = "v5") {
  ModelConfig cfg;
  cfg.flavor = flavor;
  cfg.vocab_size = 31;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.context_length = 16;
  cfg.residual_units = 2;
  cfg.metric_gated_size = 6;
  cfg.metric_linear_size = flavor == "v9" ? 6 : 4;
  cfg.pad_id = 0;
  cfg.end_id = 1;
  return cfg;
}

Td randt(Rng& rng, Shape shape, double s = 1.0) {
  Td t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal() * s;
  return t;
}

}  // namespace

TEST_CASE("swiglu ffn values and parameter arithmetic") {
  Rng rng(3);
  Swiglu<double> f(3, 5, 4, rng, 0.5);
  Td zero({2, 3});
  Td y = f.forward(zero);
  for (size_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == 0.0);

  Swiglu<double> unit(1, 1, 1, rng, 0.5);
  unit.w_gate.data()[0] = unit.w_val.data()[0] = unit.w_out.data()[0] = 1.0;
  Td one({1, 1}, {1.0});
  CHECK(unit.forward(one).item() == doctest::Approx(0.7310585786300049).epsilon(1e-14));

  Swiglu<double> sized(64, 170, 64, rng, 0.02);
  std::vector<ParamRef<double>> ps;
  sized.params("f", ps);
  int64_t total = 0;
  for (auto& p : ps) total += static_cast<int64_t>(p.tensor.size());
  CHECK(total == 2 * 64 * 170 + 170 * 64);

  Rng r2(5);
  Td x = randt(r2, {3, 4});
  Swiglu<double> g(4, 6, 4, r2, 0.4);
  Td w = randt(r2, {3, 4});
  CHECK(grad_check([&] { return sum_all(mul(g.forward(x), w)); },
                   {x, g.w_gate, g.w_val, g.w_out}) < 1e-6);
}

TEST_CASE("metric learner shape and residual identity path") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(7);
  MetricLearner<double> ml(cfg, rng, 0.3);
  int dk = cfg.d_k();

  Td q = randt(rng, {5, dk});
  Td stack = ml.forward_stack(q, 5);
  CHECK(stack.rows() == 5 * dk);
  CHECK(stack.cols() == dk);

  // zero the residual units and make w_a the identity
  for (auto& u : ml.units) {
    std::fill(u.w_gate.values().begin(), u.w_gate.values().end(), 0.0);
    std::fill(u.w_val.values().begin(), u.w_val.values().end(), 0.0);
    std::fill(u.w_out.values().begin(), u.w_out.values().end(), 0.0);
  }
  std::fill(ml.w_a.values().begin(), ml.w_a.values().end(), 0.0);
  for (int i = 0; i < dk; ++i) ml.w_a.at(i, i) = 1.0;

  Td got = ml.forward_stack(q, 5);
  int n = 5;
  Td gram = prefix_gram_stack(q, q, n);
  Td want = iswiglu(layer_norm_rows(gram, ml.ln_g, ml.ln_b, ml.ln_eps));
  for (size_t i = 0; i < want.size(); ++i)
    CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
}

TEST_CASE("metric output stays nonnegative over a thousand random inputs") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(11);
  MetricLearner<double> ml(cfg, rng, 0.5);
  for (int rep = 0; rep < 1000; ++rep) {
    Td q = randt(rng, {3, cfg.d_k()}, 2.0);
    Td stack = ml.forward_stack(q, 3);
    for (size_t i = 0; i < stack.size(); ++i) CHECK(stack.data()[i] >= 0.0);
  }
}

TEST_CASE("energy curvature superposition") {
  Rng rng(13);
  Td ap = randt(rng, {4, 4});
  for (size_t i = 0; i < ap.size(); ++i) ap.data()[i] = std::abs(ap.data()[i]);
  Td eye({4, 4});
  for (int i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  Td zero_b({4});
  Td g1 = energy_curvature(ap, eye, zero_b);
  for (size_t i = 0; i < ap.size(); ++i) CHECK(g1.data()[i] == ap.data()[i]);

  Td zeros({4, 4});
  Td wg = randt(rng, {4, 4});
  Td bg = randt(rng, {4});
  Td g2 = energy_curvature(zeros, wg, bg);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(g2.at(i, j) == bg.at(j));

  Td g3 = energy_curvature(ap, wg, bg);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double acc = bg.at(j);
      for (int k = 0; k < 4; ++k) acc += ap.at(i, k) * wg.at(k, j);
      CHECK(g3.at(i, j) == doctest::Approx(acc).epsilon(1e-10));
    }
}

TEST_CASE("mha shapes and deductive outputs") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(17);
  PlgaMha<double> mha(cfg, rng, 0.15);
  Td x = randt(rng, {6, cfg.d_model});
  MhaResult<double> res = mha.forward(x, 6);
  CHECK(res.y.rows() == 6);
  CHECK(res.y.cols() == cfg.d_model);
  CHECK(res.heads.size() == static_cast<size_t>(cfg.n_heads));
  int dk = cfg.d_k();
  for (const auto& h : res.heads) {
    CHECK(h.alm.rows() == dk);
    CHECK(h.alm.cols() == dk);
    for (size_t i = 0; i < h.alm.size(); ++i) {
      CHECK(h.alm.data()[i] >= 0.0);
      CHECK(h.ap.data()[i] >= 0.0);
    }
  }
}

TEST_CASE("single position attends only to itself") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(19);
  PlgaMha<double> mha(cfg, rng, 0.2);
  Td x = randt(rng, {1, cfg.d_model});
  MhaResult<double> res = mha.forward(x, 1);
  // softmax over one key is 1, so y = (x wv) wo regardless of scores
  Td want = matmul(matmul(x, mha.wv), mha.wo);
  for (size_t i = 0; i < want.size(); ++i)
    CHECK(res.y.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
}

TEST_CASE("mha causality under suffix edits") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(23);
  PlgaMha<double> mha(cfg, rng, 0.25);
  Td x = randt(rng, {8, cfg.d_model});
  Td base = mha.forward(x, 8).y;
  for (int edit = 3; edit < 8; ++edit) {
    Td x2({8, cfg.d_model}, x.values());
    for (int j = 0; j < cfg.d_model; ++j) x2.at(edit, j) += rng.normal() * 3.0;
    Td y2 = mha.forward(x2, 8).y;
    for (int s = 0; s < edit; ++s)
      for (int j = 0; j < cfg.d_model; ++j)
        CHECK(std::abs(y2.at(s, j) - base.at(s, j)) <= 1e-10);
  }
}

TEST_CASE("v5 and v9 flavors agree on shapes") {
  Rng rng(29);
  Td x = randt(rng, {4, 8});
  for (const char* flavor : {"v5", "v9"}) {
    ModelConfig cfg = tiny_cfg(flavor);
    PlgaMha<double> mha(cfg, rng, 0.2);
    MhaResult<double> res = mha.forward(x, 4);
    CHECK(res.y.rows() == 4);
    CHECK(res.y.cols() == 8);
    for (const auto& h : res.heads) CHECK(h.glm.rows() == cfg.d_k());
    for (size_t i = 0; i < res.y.size(); ++i) CHECK(std::isfinite(res.y.data()[i]));
  }
}

TEST_CASE("mha gradient check on a tiny config") {
  ModelConfig cfg = tiny_cfg();
  cfg.residual_units = 1;
  Rng rng(31);
  PlgaMha<double> mha(cfg, rng, 0.3);
  Td x = randt(rng, {3, cfg.d_model});
  Td w = randt(rng, {3, cfg.d_model});
  std::vector<ParamRef<double>> refs;
  mha.params("mha", refs);
  std::vector<Td> params = {x};
  for (auto& r : refs) params.push_back(r.tensor);
  double err = grad_check([&] { return sum_all(mul(mha.forward(x, 3).y, w)); }, params);
  CHECK(err < 1e-3);
  CHECK(err < 1e-5);  // in practice far tighter than the contract bound
}

TEST_CASE("deductive gradient path reaches the power coefficients") {
  ModelConfig cfg = tiny_cfg();
  cfg.residual_units = 1;
  Rng rng(37);
  PlgaMha<double> mha(cfg, rng, 0.3);
  Td x = randt(rng, {3, cfg.d_model});
  double err = grad_check(
      [&] {
        MhaResult<double> r = mha.forward(x, 3);
        Td acc = sum_all(r.heads[0].glm);
        return add(acc, sum_all(r.heads[1].ap));
      },
      {mha.p[0], mha.p[1], mha.w_g[0], mha.b_g[0]});
  CHECK(err < 1e-6);
}
