#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "bhfa/autodiff.hpp"
#include "bhfa/distributions.hpp"
#include "bhfa/errors.hpp"
#include "bhfa/rng.hpp"
#include "bhfa/tensor.hpp"

using namespace bhfa;

namespace {

Tensor rand_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Keeps every |entry| >= margin so kinked ops (relu, abs, max) see a stable
// branch under the finite-difference step.
Tensor rand_away_from_zero(std::vector<int> shape, Rng& rng, double margin = 0.15) {
  Tensor t = rand_tensor(std::move(shape), rng);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    double s = t[i] >= 0.0 ? 1.0 : -1.0;
    t[i] = s * (margin + std::abs(t[i]));
  }
  return t;
}

// Distinct entries so max-reductions have a unique winner.
Tensor rand_distinct(std::vector<int> shape, Rng& rng) {
  Tensor t = rand_tensor(std::move(shape), rng);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] += 1e-3 * static_cast<double>(i);
  return t;
}

using Builder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

// Central finite differences against the tape gradients on every coordinate
// of every leaf.
void fd_audit(const std::vector<Tensor>& leaves, const Builder& f, double tol = 2e-6) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const Tensor& x : leaves) vars.push_back(tape.leaf(x, true));
  ad::Var root = f(tape, vars);
  REQUIRE(tape.val(root).numel() == 1);
  tape.backward(root);
  std::vector<Tensor> analytic;
  for (ad::Var v : vars) analytic.push_back(tape.grad(v));

  const double h = 1e-6;
  auto eval = [&](std::size_t li, std::size_t ci, double delta) {
    ad::Tape t2;
    std::vector<ad::Var> ws;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
      Tensor c = leaves[k];
      if (k == li) c[ci] += delta;
      ws.push_back(t2.leaf(std::move(c), false));
    }
    return t2.val(f(t2, ws))[0];
  };
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    for (std::size_t ci = 0; ci < leaves[li].numel(); ++ci) {
      double fd = (eval(li, ci, h) - eval(li, ci, -h)) / (2.0 * h);
      double an = analytic[li][ci];
      double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
      CAPTURE(li);
      CAPTURE(ci);
      CAPTURE(fd);
      CAPTURE(an);
      CHECK(rel < tol);
    }
  }
}

// Fixed random projection makes any tensor-valued op scalar for fd_audit.
Builder project(const std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>& op,
                const Tensor& weights) {
  return [op, weights](ad::Tape& t, const std::vector<ad::Var>& vs) {
    return t.sum(t.mul_const(op(t, vs), weights));
  };
}

}  // namespace

TEST_CASE("elementwise op values") {
  ad::Tape t;
  Tensor x({2, 2}, {0.0, 1.0, -1.0, 2.0});
  ad::Var v = t.leaf(x, false);
  CHECK(t.val(t.relu(v)).vec() == std::vector<double>{0.0, 1.0, 0.0, 2.0});
  CHECK(t.val(t.sigmoid(v))[0] == 0.5);
  CHECK(t.val(t.sigmoid(v))[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-15));
  CHECK(t.val(t.exp(v))[3] == doctest::Approx(std::exp(2.0)).epsilon(1e-15));
  CHECK(t.val(t.scale(v, -3.0)).vec() == std::vector<double>{0.0, -3.0, 3.0, -6.0});
  CHECK(t.val(t.add_scalar(v, 0.5)).vec() == std::vector<double>{0.5, 1.5, -0.5, 2.5});
  CHECK(t.val(t.clamp(v, -0.5, 1.5)).vec() == std::vector<double>{0.0, 1.0, -0.5, 1.5});
  CHECK(t.val(t.add(v, v)).vec() == std::vector<double>{0.0, 2.0, -2.0, 4.0});
  CHECK(t.val(t.mul(v, v)).vec() == std::vector<double>{0.0, 1.0, 1.0, 4.0});
  CHECK(t.val(t.sum(v))[0] == 2.0);
}

TEST_CASE("elementwise op gradients") {
  Rng rng(11);
  Tensor w = rand_tensor({2, 3}, rng);
  Tensor a = rand_away_from_zero({2, 3}, rng);
  Tensor b = rand_away_from_zero({2, 3}, rng);

  fd_audit({a, b}, project([](ad::Tape& t, const auto& v) { return t.add(v[0], v[1]); }, w));
  fd_audit({a, b}, project([](ad::Tape& t, const auto& v) { return t.mul(v[0], v[1]); }, w));
  fd_audit({a}, project([](ad::Tape& t, const auto& v) { return t.scale(v[0], -2.5); }, w));
  fd_audit({a}, project([](ad::Tape& t, const auto& v) { return t.add_scalar(v[0], 3.0); }, w));
  fd_audit({a}, project([](ad::Tape& t, const auto& v) { return t.exp(v[0]); }, w));
  fd_audit({a}, project([](ad::Tape& t, const auto& v) { return t.relu(v[0]); }, w));
  fd_audit({a}, project([](ad::Tape& t, const auto& v) { return t.sigmoid(v[0]); }, w));
  // entries of a lie in +-(0.15, 1.15); clamp bounds keep them off the edges
  fd_audit({a}, project([](ad::Tape& t, const auto& v) { return t.clamp(v[0], -0.7, 0.7); }, w));
  Tensor c = rand_tensor({2, 3}, rng);
  fd_audit({a}, project([c](ad::Tape& t, const auto& v) { return t.mul_const(v[0], c); }, w));
}

TEST_CASE("matmul_wt value and gradient") {
  Rng rng(13);
  Tensor x = rand_tensor({3, 4}, rng);
  Tensor wmat = rand_tensor({2, 4}, rng);
  ad::Tape t;
  Tensor y = t.val(t.matmul_wt(t.leaf(x, false), t.leaf(wmat, false)));
  REQUIRE(y.shape() == std::vector<int>{3, 2});
  for (int i = 0; i < 3; ++i) {
    for (int o = 0; o < 2; ++o) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += x.at(i, k) * wmat.at(o, k);
      CHECK(y.at(i, o) == doctest::Approx(acc).epsilon(1e-14));
    }
  }
  Tensor w = rand_tensor({3, 2}, rng);
  fd_audit({x, wmat}, project([](ad::Tape& tt, const auto& v) { return tt.matmul_wt(v[0], v[1]); }, w));
}

TEST_CASE("add_rowvec value and gradient") {
  Rng rng(17);
  Tensor x = rand_tensor({3, 4}, rng);
  Tensor bias = rand_tensor({4}, rng);
  ad::Tape t;
  Tensor y = t.val(t.add_rowvec(t.leaf(x, false), t.leaf(bias, false)));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) CHECK(y.at(i, j) == x.at(i, j) + bias[static_cast<std::size_t>(j)]);
  Tensor w = rand_tensor({3, 4}, rng);
  fd_audit({x, bias}, project([](ad::Tape& tt, const auto& v) { return tt.add_rowvec(v[0], v[1]); }, w));
}

TEST_CASE("conv2d matches a naive reference") {
  Rng rng(19);
  const int n = 2, ci = 2, co = 3, hh = 5, ww = 4, pad = 1;
  Tensor x = rand_tensor({n, ci, hh, ww}, rng);
  Tensor k = rand_tensor({co, ci, 3, 3}, rng);
  Tensor bias = rand_tensor({co}, rng);
  ad::Tape t;
  Tensor y = t.val(t.conv2d(t.leaf(x, false), t.leaf(k, false), t.leaf(bias, false), pad));
  REQUIRE(y.shape() == std::vector<int>{n, co, hh, ww});
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < co; ++o)
      for (int i = 0; i < hh; ++i)
        for (int j = 0; j < ww; ++j) {
          double acc = bias[static_cast<std::size_t>(o)];
          for (int c = 0; c < ci; ++c)
            for (int di = 0; di < 3; ++di)
              for (int dj = 0; dj < 3; ++dj) {
                int si = i + di - pad, sj = j + dj - pad;
                if (si < 0 || si >= hh || sj < 0 || sj >= ww) continue;
                acc += x.at(b, c, si, sj) * k.at(o, c, di, dj);
              }
          CHECK(y.at(b, o, i, j) == doctest::Approx(acc).epsilon(1e-13));
        }
}

TEST_CASE("conv2d gradient, with and without bias") {
  Rng rng(23);
  Tensor x = rand_tensor({2, 2, 4, 4}, rng);
  Tensor k = rand_tensor({3, 2, 3, 3}, rng);
  Tensor bias = rand_tensor({3}, rng);
  Tensor w = rand_tensor({2, 3, 4, 4}, rng);
  fd_audit({x, k, bias},
           project([](ad::Tape& t, const auto& v) { return t.conv2d(v[0], v[1], v[2], 1); }, w));
  fd_audit({x, k},
           project([](ad::Tape& t, const auto& v) { return t.conv2d(v[0], v[1], ad::Var{}, 1); }, w));
}

TEST_CASE("maxpool2 halves the grid and takes window maxima") {
  Rng rng(29);
  Tensor x = rand_distinct({2, 3, 4, 6}, rng);
  ad::Tape t;
  Tensor y = t.val(t.maxpool2(t.leaf(x, false)));
  REQUIRE(y.shape() == std::vector<int>{2, 3, 2, 3});
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) {
          double m = std::max({x.at(b, c, 2 * i, 2 * j), x.at(b, c, 2 * i, 2 * j + 1),
                               x.at(b, c, 2 * i + 1, 2 * j), x.at(b, c, 2 * i + 1, 2 * j + 1)});
          CHECK(y.at(b, c, i, j) == m);
        }
  Tensor w = rand_tensor({2, 3, 2, 3}, rng);
  fd_audit({x}, project([](ad::Tape& tt, const auto& v) { return tt.maxpool2(v[0]); }, w));
}

TEST_CASE("upsample2 duplicates pixels 2x2") {
  Rng rng(31);
  Tensor x = rand_tensor({1, 2, 2, 3}, rng);
  ad::Tape t;
  Tensor y = t.val(t.upsample2(t.leaf(x, false)));
  REQUIRE(y.shape() == std::vector<int>{1, 2, 4, 6});
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 6; ++j) CHECK(y.at(0, c, i, j) == x.at(0, c, i / 2, j / 2));
  Tensor w = rand_tensor({1, 2, 4, 6}, rng);
  fd_audit({x}, project([](ad::Tape& tt, const auto& v) { return tt.upsample2(v[0]); }, w));
}

TEST_CASE("spatial pools and stats match references") {
  Rng rng(37);
  Tensor x = rand_distinct({2, 3, 2, 2}, rng);
  ad::Tape t;
  ad::Var vx = t.leaf(x, false);
  Tensor avg = t.val(t.pool_hw_avg(vx));
  Tensor mx = t.val(t.pool_hw_max(vx));
  Tensor st = t.val(t.spatial_stats(vx));
  REQUIRE(avg.shape() == std::vector<int>{2, 3});
  REQUIRE(mx.shape() == std::vector<int>{2, 3});
  REQUIRE(st.shape() == std::vector<int>{2, 2, 2, 2});
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c) {
      double s = 0, m = -1e300;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          s += x.at(b, c, i, j);
          m = std::max(m, x.at(b, c, i, j));
        }
      CHECK(avg.at(b, c) == doctest::Approx(s / 4.0).epsilon(1e-15));
      CHECK(mx.at(b, c) == m);
    }
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        double s = 0, m = -1e300;
        for (int c = 0; c < 3; ++c) {
          s += x.at(b, c, i, j);
          m = std::max(m, x.at(b, c, i, j));
        }
        CHECK(st.at(b, 0, i, j) == doctest::Approx(s / 3.0).epsilon(1e-15));
        CHECK(st.at(b, 1, i, j) == m);
      }

  Tensor w2 = rand_tensor({2, 3}, rng);
  fd_audit({x}, project([](ad::Tape& tt, const auto& v) { return tt.pool_hw_avg(v[0]); }, w2));
  fd_audit({x}, project([](ad::Tape& tt, const auto& v) { return tt.pool_hw_max(v[0]); }, w2));
  Tensor w4 = rand_tensor({2, 2, 2, 2}, rng);
  fd_audit({x}, project([](ad::Tape& tt, const auto& v) { return tt.spatial_stats(v[0]); }, w4));
}

TEST_CASE("channel and spatial rescaling gradients") {
  Rng rng(41);
  Tensor x = rand_tensor({2, 3, 2, 2}, rng);
  Tensor s = rand_tensor({2, 3}, rng);
  Tensor m = rand_tensor({2, 1, 2, 2}, rng);
  ad::Tape t;
  Tensor y = t.val(t.mul_channels(t.leaf(x, false), t.leaf(s, false)));
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(y.at(b, c, i, j) == x.at(b, c, i, j) * s.at(b, c));
  Tensor z = t.val(t.mul_spatial(t.leaf(x, false), t.leaf(m, false)));
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(z.at(b, c, i, j) == x.at(b, c, i, j) * m.at(b, 0, i, j));

  Tensor w = rand_tensor({2, 3, 2, 2}, rng);
  fd_audit({x, s}, project([](ad::Tape& tt, const auto& v) { return tt.mul_channels(v[0], v[1]); }, w));
  fd_audit({x, m}, project([](ad::Tape& tt, const auto& v) { return tt.mul_spatial(v[0], v[1]); }, w));
}

TEST_CASE("reshape and slice_cols") {
  Rng rng(43);
  Tensor x = rand_tensor({2, 6}, rng);
  ad::Tape t;
  Tensor r = t.val(t.reshape(t.leaf(x, false), {3, 4}));
  CHECK(r.shape() == std::vector<int>{3, 4});
  CHECK(r.vec() == x.vec());
  Tensor sl = t.val(t.slice_cols(t.leaf(x, false), 2, 3));
  REQUIRE(sl.shape() == std::vector<int>{2, 3});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) CHECK(sl.at(i, j) == x.at(i, 2 + j));

  Tensor w = rand_tensor({2, 3}, rng);
  fd_audit({x}, project([](ad::Tape& tt, const auto& v) { return tt.slice_cols(v[0], 2, 3); }, w));
  Tensor w2 = rand_tensor({3, 4}, rng);
  fd_audit({x}, project([](ad::Tape& tt, const auto& v) { return tt.reshape(v[0], {3, 4}); }, w2));
}

TEST_CASE("bc_matrix values agree with the scalar coefficient") {
  Rng rng(47);
  const int a = 3, b = 2, d = 4;
  Tensor mu_a = rand_tensor({a, d}, rng), ls_a = rand_tensor({a, d}, rng, -0.8, 0.8);
  Tensor mu_b = rand_tensor({b, d}, rng), ls_b = rand_tensor({b, d}, rng, -0.8, 0.8);
  ad::Tape t;
  Tensor s = t.val(t.bc_matrix(t.leaf(mu_a, false), t.leaf(ls_a, false), t.leaf(mu_b, false),
                               t.leaf(ls_b, false)));
  REQUIRE(s.shape() == std::vector<int>{a, b});
  for (int i = 0; i < a; ++i) {
    std::vector<double> m(d), l(d);
    for (int k = 0; k < d; ++k) m[static_cast<std::size_t>(k)] = mu_a.at(i, k), l[static_cast<std::size_t>(k)] = ls_a.at(i, k);
    DiagGaussian gi(m, l);
    for (int j = 0; j < b; ++j) {
      std::vector<double> mb(d), lb(d);
      for (int k = 0; k < d; ++k) mb[static_cast<std::size_t>(k)] = mu_b.at(j, k), lb[static_cast<std::size_t>(k)] = ls_b.at(j, k);
      CHECK(s.at(i, j) == doctest::Approx(bhattacharyya_coefficient(gi, DiagGaussian(mb, lb))).epsilon(1e-14));
      CHECK(s.at(i, j) > 0.0);
      CHECK(s.at(i, j) <= 1.0);
    }
  }
}

TEST_CASE("bc_matrix gradient") {
  Rng rng(53);
  Tensor mu_a = rand_tensor({2, 3}, rng), ls_a = rand_tensor({2, 3}, rng, -0.5, 0.5);
  Tensor mu_b = rand_tensor({2, 3}, rng), ls_b = rand_tensor({2, 3}, rng, -0.5, 0.5);
  Tensor w = rand_tensor({2, 2}, rng);
  fd_audit({mu_a, ls_a, mu_b, ls_b},
           project([](ad::Tape& t, const auto& v) { return t.bc_matrix(v[0], v[1], v[2], v[3]); }, w));
}

TEST_CASE("aggregate_gaussians matches the scalar prototype aggregation") {
  Rng rng(59);
  const int m = 5, d = 3, k = 2;
  std::vector<int> group{0, 1, 0, 1, 0};
  Tensor mu = rand_tensor({m, d}, rng), ls = rand_tensor({m, d}, rng, -0.6, 0.6);
  ad::Tape t;
  Tensor agg = t.val(t.aggregate_gaussians(t.leaf(mu, false), t.leaf(ls, false), group, k));
  REQUIRE(agg.shape() == std::vector<int>{k, 2 * d});
  for (int g = 0; g < k; ++g) {
    std::vector<DiagGaussian> members;
    for (int i = 0; i < m; ++i) {
      if (group[static_cast<std::size_t>(i)] != g) continue;
      std::vector<double> mm(d), ll(d);
      for (int c = 0; c < d; ++c) mm[static_cast<std::size_t>(c)] = mu.at(i, c), ll[static_cast<std::size_t>(c)] = ls.at(i, c);
      members.emplace_back(mm, ll);
    }
    DiagGaussian proto = aggregate_prototype(members);
    for (int c = 0; c < d; ++c) {
      CHECK(agg.at(g, c) == doctest::Approx(proto.mean[static_cast<std::size_t>(c)]).epsilon(1e-13));
      CHECK(agg.at(g, d + c) == doctest::Approx(proto.log_std[static_cast<std::size_t>(c)]).epsilon(1e-13));
    }
  }
  Tensor w = rand_tensor({k, 2 * d}, rng);
  fd_audit({mu, ls}, project([group, k](ad::Tape& tt, const auto& v) {
             return tt.aggregate_gaussians(v[0], v[1], group, k);
           }, w));
}

TEST_CASE("log_softmax_rows and nll_rows match hand math") {
  Tensor logits({2, 3}, {1.0, 2.0, 3.0, 0.0, 0.0, 0.0});
  ad::Tape t;
  ad::Var lv = t.leaf(logits, false);
  Tensor lp = t.val(t.log_softmax_rows(lv));
  double z = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(lp.at(0, 0) == doctest::Approx(1.0 - z).epsilon(1e-14));
  CHECK(lp.at(0, 2) == doctest::Approx(3.0 - z).epsilon(1e-14));
  CHECK(lp.at(1, 1) == doctest::Approx(-std::log(3.0)).epsilon(1e-14));

  std::vector<int> labels{2, 0};
  double nll = t.val(t.nll_rows(t.log_softmax_rows(lv), labels))[0];
  CHECK(nll == doctest::Approx(((z - 3.0) + std::log(3.0)) / 2.0).epsilon(1e-14));

  Rng rng(61);
  Tensor x = rand_tensor({3, 4}, rng);
  fd_audit({x}, [labels = std::vector<int>{1, 3, 0}](ad::Tape& tt, const auto& v) {
    return tt.nll_rows(tt.log_softmax_rows(v[0]), labels);
  });
}

TEST_CASE("mean_abs_ref value and gradient away from the kink") {
  Rng rng(67);
  Tensor ref = rand_tensor({2, 3}, rng);
  Tensor x = ref;
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] += (i % 2 ? 0.4 : -0.4) + 0.05 * static_cast<double>(i);
  ad::Tape t;
  double v = t.val(t.mean_abs_ref(t.leaf(x, false), ref))[0];
  double acc = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += std::abs(x[i] - ref[i]);
  CHECK(v == doctest::Approx(acc / static_cast<double>(x.numel())).epsilon(1e-14));
  fd_audit({x}, [ref](ad::Tape& tt, const auto& vs) { return tt.mean_abs_ref(vs[0], ref); });
}

TEST_CASE("backward requires a scalar root") {
  ad::Tape t;
  ad::Var v = t.leaf(Tensor({2, 2}, {1, 2, 3, 4}), true);
  CHECK_THROWS_AS(t.backward(v), ContractViolation);
}

TEST_CASE("grad is zero for leaves the root does not reach") {
  ad::Tape t;
  ad::Var a = t.leaf(Tensor({2}, {1.0, 2.0}), true);
  ad::Var b = t.leaf(Tensor({2}, {3.0, 4.0}), true);
  ad::Var root = t.sum(a);
  t.backward(root);
  CHECK(t.grad(a).vec() == std::vector<double>{1.0, 1.0});
  CHECK(t.grad(b).vec() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("gradients accumulate across reuse of a node") {
  ad::Tape t;
  ad::Var a = t.leaf(Tensor({1}, {3.0}), true);
  ad::Var y = t.add(a, a);  // dy/da = 2
  t.backward(t.sum(y));
  CHECK(t.grad(a)[0] == 2.0);
}
