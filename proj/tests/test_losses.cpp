#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "bhfa/errors.hpp"
#include "bhfa/losses.hpp"
#include "bhfa/numeric.hpp"
#include "bhfa/rng.hpp"

using namespace bhfa;

namespace {

DiagGaussian rand_gaussian(int d, Rng& rng) {
  std::vector<double> mu(static_cast<std::size_t>(d)), ls(static_cast<std::size_t>(d));
  for (auto& m : mu) m = rng.uniform(-2.0, 2.0);
  for (auto& l : ls) l = rng.uniform(-0.7, 0.7);
  return DiagGaussian(mu, ls);
}

}  // namespace

TEST_CASE("presets carry the shipped weight triples") {
  LossConfig cfg;
  CHECK(cfg.tau == 0.01);
  CHECK(cfg.lambda1 == 0.7);
  CHECK(cfg.lambda2 == 0.3);
  CHECK(cfg.lambda3 == 1.0);

  apply_loss_preset("disaster", cfg);
  CHECK(cfg.lambda1 == 1.0);
  CHECK(cfg.lambda2 == 0.5);
  CHECK(cfg.lambda3 == 1.0);

  apply_loss_preset("benchmark", cfg);
  CHECK(cfg.lambda1 == 0.7);
  CHECK(cfg.lambda2 == 0.3);
  CHECK(cfg.lambda3 == 1.0);

  CHECK_THROWS_AS(apply_loss_preset("nonsense", cfg), ConfigError);
}

TEST_CASE("config validation") {
  LossConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  LossConfig bad = cfg;
  bad.tau = 0.0;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  LossConfig neg = cfg;
  neg.lambda2 = -0.1;
  CHECK_THROWS_AS(neg.validate(), ContractViolation);
  LossConfig off = cfg;
  off.enable_bhs = off.enable_cce = off.enable_rec = false;
  CHECK_THROWS_AS(off.validate(), ContractViolation);
}

TEST_CASE("scores: logit map, row-stochastic softmax, affinity range") {
  Rng rng(301);
  const int k = 4, d = 6;
  std::vector<DiagGaussian> protos, queries;
  for (int i = 0; i < k; ++i) protos.push_back(rand_gaussian(d, rng));
  for (int i = 0; i < 7; ++i) queries.push_back(rand_gaussian(d, rng));
  LossConfig cfg;
  ScoreMatrix sm = score_queries(queries, protos, cfg);
  REQUIRE(sm.affinity.shape() == std::vector<int>{7, k});
  REQUIRE(sm.logits.shape() == std::vector<int>{7, k});
  REQUIRE(sm.probabilities.shape() == std::vector<int>{7, k});

  for (std::size_t i = 0; i < sm.affinity.numel(); ++i) {
    double s = sm.affinity[i];
    CHECK(s > 0.0);
    CHECK(s <= 1.0);
    // saturating ramp: slope (1-s)/tau >= 0, so the map preserves order
    CHECK(sm.logits[i] == s * (1.0 - 0.5 * s) / cfg.tau);
  }
  for (int r = 0; r < 7; ++r) {
    std::vector<double> row(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) row[static_cast<std::size_t>(c)] = sm.probabilities.at(r, c);
    CHECK(exact_sum(row) == doctest::Approx(1.0).epsilon(1e-12));
    for (double p : row) CHECK(p > 0.0);
  }
}

TEST_CASE("affinity ordering carries through to probabilities") {
  // a query equal to one prototype scores affinity 1 against it, strictly
  // less against the others, so that class gets the largest probability
  Rng rng(307);
  const int d = 5;
  std::vector<DiagGaussian> protos;
  for (int i = 0; i < 3; ++i) protos.push_back(rand_gaussian(d, rng));
  std::vector<DiagGaussian> queries{protos[1]};
  ScoreMatrix sm = score_queries(queries, protos, LossConfig{});
  CHECK(sm.affinity.at(0, 1) == 1.0);
  CHECK(sm.affinity.at(0, 0) < 1.0);
  CHECK(sm.affinity.at(0, 2) < 1.0);
  CHECK(argmax_rows(sm.probabilities) == std::vector<int>{1});
  CHECK(sm.probabilities.at(0, 1) > sm.probabilities.at(0, 0));
  CHECK(sm.probabilities.at(0, 1) > sm.probabilities.at(0, 2));
}

TEST_CASE("identical prototypes give the uniform distribution and ln k loss") {
  Rng rng(311);
  DiagGaussian g = rand_gaussian(4, rng);
  std::vector<DiagGaussian> protos(5, g);
  std::vector<DiagGaussian> queries{rand_gaussian(4, rng), rand_gaussian(4, rng)};
  ScoreMatrix sm = score_queries(queries, protos, LossConfig{});
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 5; ++c) CHECK(sm.probabilities.at(r, c) == doctest::Approx(0.2).epsilon(1e-12));
  std::vector<int> labels{3, 0};
  CHECK(bhs_loss(sm, labels) == doctest::Approx(1.6094379124341003).epsilon(1e-12));  // ln 5
}

TEST_CASE("hand-computed negative log likelihood") {
  ScoreMatrix sm;
  sm.probabilities = Tensor({2, 3}, {0.5, 0.25, 0.25, 0.25, 0.25, 0.5});
  std::vector<int> labels{0, 0};
  // (ln 2 + ln 4) / 2
  CHECK(bhs_loss(sm, labels) == doctest::Approx(1.0397207708399179).epsilon(1e-15));
  CHECK(cce_loss(sm, labels) == bhs_loss(sm, labels));
  std::vector<int> easy{0, 2};
  CHECK(bhs_loss(sm, easy) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("the two classification terms coincide on one scoring path") {
  Rng rng(313);
  std::vector<DiagGaussian> protos, queries;
  for (int i = 0; i < 3; ++i) protos.push_back(rand_gaussian(4, rng));
  for (int i = 0; i < 6; ++i) queries.push_back(rand_gaussian(4, rng));
  ScoreMatrix sm = score_queries(queries, protos, LossConfig{});
  std::vector<int> labels{0, 1, 2, 0, 1, 2};
  CHECK(bhs_loss(sm, labels) == cce_loss(sm, labels));
}

TEST_CASE("reconstruction term is the mean absolute error") {
  Tensor orig({2, 1, 2, 2});
  orig.fill(0.5);
  Tensor rec({2, 1, 2, 2});
  rec.fill(0.25);
  CHECK(rec_loss(orig, rec) == 0.25);
  CHECK(rec_loss(orig, orig) == 0.0);
  Tensor other({1, 1, 2, 2});
  CHECK_THROWS_AS(rec_loss(orig, other), ContractViolation);
}

TEST_CASE("total combines the terms with preset weights") {
  LossConfig cfg;  // benchmark triple
  CHECK(total_loss(1.0, 1.0, 1.0, cfg) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(total_loss(2.0, 0.0, 0.5, cfg) == doctest::Approx(0.7 * 2.0 + 0.5).epsilon(1e-15));

  apply_loss_preset("disaster", cfg);
  CHECK(total_loss(1.0, 1.0, 1.0, cfg) == doctest::Approx(2.5).epsilon(1e-15));

  LossConfig gated;
  gated.enable_rec = false;
  CHECK(total_loss(1.0, 1.0, 123.0, gated) == doctest::Approx(1.0).epsilon(1e-15));
  gated.enable_rec = true;
  gated.enable_bhs = false;
  CHECK(total_loss(123.0, 1.0, 1.0, gated) == doctest::Approx(0.3 + 1.0).epsilon(1e-15));
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  Tensor m({3, 3}, {0.3, 0.4, 0.4, 0.5, 0.5, 0.1, 0.2, 0.3, 0.9});
  CHECK(argmax_rows(m) == std::vector<int>{1, 0, 2});
}

TEST_CASE("scoring input validation") {
  Rng rng(317);
  std::vector<DiagGaussian> protos{rand_gaussian(3, rng), rand_gaussian(3, rng)};
  std::vector<DiagGaussian> queries{rand_gaussian(3, rng)};
  CHECK_THROWS_AS(score_queries({}, protos, LossConfig{}), ContractViolation);
  CHECK_THROWS_AS(score_queries(queries, {protos[0]}, LossConfig{}), ContractViolation);
  std::vector<DiagGaussian> wrong{rand_gaussian(4, rng)};
  CHECK_THROWS_AS(score_queries(wrong, protos, LossConfig{}), ContractViolation);

  ScoreMatrix sm = score_queries(queries, protos, LossConfig{});
  CHECK_THROWS_AS(bhs_loss(sm, std::vector<int>{0, 1}), ContractViolation);
  CHECK_THROWS_AS(bhs_loss(sm, std::vector<int>{5}), ContractViolation);
}
