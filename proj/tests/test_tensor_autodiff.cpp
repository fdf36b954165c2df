#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "pldr/gradcheck.hpp"
#include "pldr/ops.hpp"
#include "pldr/rng.hpp"
#include "pldr/tensor.hpp"

using namespace pldr;
using Td = Tensor<double>;

namespace {

Td randt(Rng& rng, Shape shape, double s = 1.0) {
  Td t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal() * s;
  return t;
}

// weighted sum so the check probes every output coordinate independently
Td probe(const Td& y, const Td& w) { return sum_all(mul(y, w)); }

}  // namespace

TEST_CASE("tensor shape and storage semantics") {
  Td a({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(a.rows() == 2);
  CHECK(a.cols() == 3);
  CHECK(a.at(1, 2) == 6);
  Td b = a;  // alias
  b.at(0, 0) = 9;
  CHECK(a.at(0, 0) == 9);
  CHECK(a.same_storage(b));
  CHECK_THROWS_AS(Td({2, 2}, {1.0, 2.0, 3.0}), shape_error);
  CHECK(Td::scalar(3.5).item() == 3.5);
}

TEST_CASE("matmul matches hand result") {
  Td a({2, 2}, {1, 2, 3, 4});
  Td b({2, 2}, {5, 6, 7, 8});
  Td c = matmul(a, b);
  CHECK(c.at(0, 0) == 19);
  CHECK(c.at(0, 1) == 22);
  CHECK(c.at(1, 0) == 43);
  CHECK(c.at(1, 1) == 50);
  Td ct = matmul_t(a, transpose(b));
  for (int i = 0; i < 4; ++i) CHECK(ct.at(i / 2, i % 2) == c.at(i / 2, i % 2));
}

TEST_CASE("activation values") {
  Td x({1, 3}, {1.0, -2.0, 0.0});
  CHECK(sigmoid(x).at(0, 0) == doctest::Approx(0.7310585786300049).epsilon(1e-14));
  CHECK(silu(x).at(0, 0) == doctest::Approx(0.7310585786300049).epsilon(1e-14));
  CHECK(iswiglu(x).at(0, 0) == doctest::Approx(0.7310585786300049).epsilon(1e-14));
  CHECK(iswiglu(x).at(0, 1) == doctest::Approx(0.4768116880884702).epsilon(1e-14));
  CHECK(iswiglu(x).at(0, 2) == 0.0);
  // nonnegative on a wide sweep
  for (double v = -30; v <= 30; v += 0.37) {
    Td t({1, 1}, std::vector<double>{v});
    CHECK(iswiglu(t).at(0, 0) >= 0.0);
  }
}

TEST_CASE("no tape means no recording") {
  Td a({2, 2}, {1, 2, 3, 4});
  a.set_requires_grad(true);
  Td y = mul(a, a);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("reuse of a node accumulates gradient") {
  Td x = Td::scalar(3.0);
  x.set_requires_grad(true);
  Tape<double>::Scope scope;
  Td y = add(mul(x, x), x);  // x^2 + x, dy/dx = 2x + 1
  scope.tape.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("grad check elementwise and matmul family") {
  Rng rng(7);
  Td a = randt(rng, {3, 4});
  Td b = randt(rng, {3, 4});
  Td m = randt(rng, {3, 5});
  Td n = randt(rng, {5, 4});
  Td v = randt(rng, {4});
  Td w1 = randt(rng, {3, 4});
  Td w2 = randt(rng, {3, 4});
  Td w3 = randt(rng, {4, 3});

  CHECK(grad_check([&] { return probe(add(a, b), w1); }, {a, b}) < 1e-6);
  CHECK(grad_check([&] { return probe(sub(a, b), w1); }, {a, b}) < 1e-6);
  CHECK(grad_check([&] { return probe(mul(a, b), w1); }, {a, b}) < 1e-6);
  CHECK(grad_check([&] { return probe(scale(a, -1.7), w1); }, {a}) < 1e-6);
  CHECK(grad_check([&] { return probe(add_rowvec(a, v), w1); }, {a, v}) < 1e-6);
  CHECK(grad_check([&] { return probe(matmul(m, n), w2); }, {m, n}) < 1e-6);
  CHECK(grad_check([&] { return probe(matmul_t(m, transpose(n)), w2); }, {m, n}) < 1e-6);
  CHECK(grad_check([&] { return probe(transpose(a), w3); }, {a}) < 1e-6);
}

TEST_CASE("grad check slicing and gathering") {
  Rng rng(11);
  Td a = randt(rng, {5, 4});
  Td w = randt(rng, {2, 4});
  Td wc = randt(rng, {5, 2});
  CHECK(grad_check([&] { return probe(slice_rows(a, 1, 3), w); }, {a}) < 1e-6);
  CHECK(grad_check([&] { return probe(slice_cols(a, 1, 3), wc); }, {a}) < 1e-6);
  Td p1 = randt(rng, {5, 2}), p2 = randt(rng, {5, 3});
  Td wcc = randt(rng, {5, 5});
  CHECK(grad_check([&] { return probe(concat_cols<double>({p1, p2}), wcc); }, {p1, p2}) < 1e-6);
  std::vector<int> ids = {4, 0, 0, 2};  // repeats exercise scatter-add
  Td wl = randt(rng, {4, 4});
  CHECK(grad_check([&] { return probe(rows_lookup(a, ids), wl); }, {a}) < 1e-6);
}

TEST_CASE("grad check activations and scalar tails") {
  Rng rng(13);
  Td a = randt(rng, {3, 4});
  Td w = randt(rng, {3, 4});
  CHECK(grad_check([&] { return probe(sigmoid(a), w); }, {a}) < 1e-6);
  CHECK(grad_check([&] { return probe(silu(a), w); }, {a}) < 1e-6);
  CHECK(grad_check([&] { return probe(iswiglu(a), w); }, {a}) < 1e-6);
  CHECK(grad_check([&] { return sum_all(a); }, {a}) < 1e-6);
  CHECK(grad_check([&] { return mean_all(mul(a, a)); }, {a}) < 1e-6);
  Td pos({2, 2}, {0.5, 1.5, 2.5, 3.5});
  CHECK(grad_check([&] { return sum_all(ln(pos)); }, {pos}) < 1e-6);
  Td off({2, 2}, {0.4, -1.2, 2.2, -0.7});
  CHECK(grad_check([&] { return sum_all(absolute(off)); }, {off}) < 1e-6);
}

TEST_CASE("layer norm rows") {
  Rng rng(17);
  Td x = randt(rng, {4, 6}, 2.0);
  Td gain({6}, {1, 1, 1, 1, 1, 1});
  Td bias({6}, {0, 0, 0, 0, 0, 0});
  Td y = layer_norm_rows(x, gain, bias, 1e-12);
  for (int i = 0; i < 4; ++i) {
    double mu = 0, var = 0;
    for (int j = 0; j < 6; ++j) mu += y.at(i, j);
    mu /= 6;
    for (int j = 0; j < 6; ++j) var += (y.at(i, j) - mu) * (y.at(i, j) - mu);
    var /= 6;
    CHECK(mu == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(std::abs(var - 1.0) < 1e-8);
  }
  Td g2 = randt(rng, {6});
  Td b2 = randt(rng, {6});
  Td w = randt(rng, {4, 6});
  CHECK(grad_check([&] { return probe(layer_norm_rows(x, g2, b2, 1e-5), w); }, {x, g2, b2}) < 1e-6);
}

TEST_CASE("causal softmax normalizes inside limits and zeroes outside") {
  Rng rng(19);
  Td s = randt(rng, {4, 4}, 2.0);
  std::vector<int> limits = {1, 2, 3, 3};  // row 3 also masks its own tail
  Td e = causal_softmax(s, limits);
  for (int i = 0; i < 4; ++i) {
    double sum = 0;
    for (int j = 0; j < 4; ++j) {
      if (j >= limits[i]) CHECK(e.at(i, j) == 0.0);
      CHECK(e.at(i, j) >= 0.0);
      sum += e.at(i, j);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  Td w = randt(rng, {4, 4});
  CHECK(grad_check([&] { return probe(causal_softmax(s, limits), w); }, {s}) < 1e-6);
}

TEST_CASE("masked matmul equals dense matmul at full limits") {
  Rng rng(23);
  Td e = randt(rng, {3, 5});
  Td v = randt(rng, {5, 4});
  std::vector<int> full = {5, 5, 5};
  Td y1 = masked_matmul(e, v, full);
  Td y2 = matmul(e, v);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) CHECK(y1.at(i, j) == doctest::Approx(y2.at(i, j)).epsilon(1e-12));
  std::vector<int> limits = {1, 3, 5};
  Td w = randt(rng, {3, 4});
  CHECK(grad_check([&] { return probe(masked_matmul(e, v, limits), w); }, {e, v}) < 1e-6);
}

TEST_CASE("pow tiled values and gradient") {
  Td a({4, 2}, {1.0, 2.0, 3.0, 0.5, 1.5, 2.5, 0.25, 4.0});
  Td p({2, 2}, {2.0, 0.5, 1.0, 3.0});
  Td y = pow_tiled(a, p);
  CHECK(y.at(0, 0) == doctest::Approx(1.0));
  CHECK(y.at(0, 1) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(y.at(1, 1) == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(y.at(2, 0) == doctest::Approx(2.25).epsilon(1e-12));
  Rng rng(29);
  Td w = randt(rng, {4, 2});
  CHECK(grad_check([&] { return probe(pow_tiled(a, p), w); }, {a, p}) < 1e-6);
}

TEST_CASE("rotary preserves norms and relative angles") {
  Rng rng(31);
  Td x = randt(rng, {5, 8});
  std::vector<int> pos = {0, 1, 2, 3, 4};
  Td y = rotary(x, pos);
  for (int i = 0; i < 5; ++i) {
    double n0 = 0, n1 = 0;
    for (int j = 0; j < 8; ++j) {
      n0 += x.at(i, j) * x.at(i, j);
      n1 += y.at(i, j) * y.at(i, j);
    }
    CHECK(n0 == doctest::Approx(n1).epsilon(1e-12));
  }
  // dot of rotated pairs depends only on the position difference
  Td q = randt(rng, {1, 8});
  Td k = randt(rng, {1, 8});
  auto rot_dot = [&](int pq, int pk) {
    Td yq = rotary(q, {pq});
    Td yk = rotary(k, {pk});
    double d = 0;
    for (int j = 0; j < 8; ++j) d += yq.at(0, j) * yk.at(0, j);
    return d;
  };
  CHECK(rot_dot(3, 1) == doctest::Approx(rot_dot(7, 5)).epsilon(1e-10));
  CHECK(rot_dot(2, 2) == doctest::Approx(rot_dot(9, 9)).epsilon(1e-10));
  Td w = randt(rng, {5, 8});
  CHECK(grad_check([&] { return probe(rotary(x, pos), w); }, {x}) < 1e-6);
}

TEST_CASE("cross entropy sum against manual log softmax") {
  Td logits({3, 4}, {0.2, -1.0, 0.7, 0.1, 2.0, 1.0, -0.5, 0.0, 0.3, 0.3, 0.3, 0.3});
  std::vector<int> targets = {2, 999, 1};  // middle row ignored
  double expect = 0;
  for (int i : {0, 2}) {
    double mx = -1e30, z = 0;
    for (int j = 0; j < 4; ++j) mx = std::max(mx, logits.at(i, j));
    for (int j = 0; j < 4; ++j) z += std::exp(logits.at(i, j) - mx);
    expect += mx + std::log(z) - logits.at(i, targets[static_cast<size_t>(i)]);
  }
  Td loss = ce_sum(logits, targets, 999);
  CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-12));
  auto [correct, total] = correct_and_total(logits, targets, 999);
  CHECK(total == 2);
  CHECK(correct == 1);  // row 0 argmax 2 hits, row 2 tie resolves to index 0 and misses
  CHECK(grad_check([&] { return ce_sum(logits, targets, 999); }, {logits}) < 1e-6);
}

TEST_CASE("prefix gram stack matches the naive computation") {
  Rng rng(37);
  int n = 6, d = 3, valid = 4;
  Td qa = randt(rng, {n, d});
  Td q = randt(rng, {n, d});
  Td g = prefix_gram_stack(qa, q, valid);
  CHECK(g.rows() == n * d);
  CHECK(g.cols() == d);
  for (int s = 0; s < n; ++s) {
    int c = std::min(s + 1, valid);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        double acc = 0;
        for (int t = 0; t < c; ++t) acc += qa.at(t, i) * q.at(t, j);
        CHECK(g.at(s * d + i, j) == doctest::Approx(acc / c).epsilon(1e-10));
      }
  }
  Td w = randt(rng, {n * d, d});
  CHECK(grad_check([&] { return probe(prefix_gram_stack(qa, q, valid), w); }, {qa, q}) < 1e-6);
}

TEST_CASE("plga scores match the naive computation") {
  Rng rng(41);
  int n = 5, d = 3;
  Td qr = randt(rng, {n, d});
  Td kr = randt(rng, {n, d});
  Td gs = randt(rng, {n * d, d});
  std::vector<int> limits = {1, 2, 3, 3, 3};
  double scl = 1.0 / std::sqrt(3.0);
  Td s = plga_scores(qr, kr, gs, limits, scl);
  for (int a = 0; a < n; ++a) {
    for (int t = 0; t < n; ++t) {
      if (t >= limits[static_cast<size_t>(a)]) {
        CHECK(s.at(a, t) == 0.0);
        continue;
      }
      std::vector<double> u(3, 0), v(3, 0);
      for (int j = 0; j < d; ++j)
        for (int i = 0; i < d; ++i) {
          u[static_cast<size_t>(j)] += qr.at(a, i) * gs.at(a * d + i, j);
          v[static_cast<size_t>(j)] += kr.at(t, i) * gs.at(a * d + i, j);
        }
      double dot = 0;
      for (int j = 0; j < d; ++j) dot += u[static_cast<size_t>(j)] * v[static_cast<size_t>(j)];
      CHECK(s.at(a, t) == doctest::Approx(scl * dot).epsilon(1e-9));
    }
  }
  Td w = randt(rng, {n, n});
  CHECK(grad_check([&] { return probe(plga_scores(qr, kr, gs, limits, scl), w); }, {qr, kr, gs}) <
        1e-6);
}
