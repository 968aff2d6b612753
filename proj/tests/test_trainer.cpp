#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bhfa/encoder.hpp"
#include "bhfa/episodes.hpp"
#include "bhfa/errors.hpp"
#include "bhfa/trainer.hpp"

using namespace bhfa;
namespace fs = std::filesystem;

namespace {

Arch micro_arch() {
  Arch a;
  a.in_channels = 1;
  a.side = 8;
  a.widths = {4, 8};
  a.latent_dim = 4;
  return a;
}

TrainConfig micro_config(int episodes) {
  TrainConfig tc;
  tc.episodes = episodes;
  tc.spec.ways = 2;
  tc.spec.n_shot = 1;
  tc.spec.n_query = 2;
  tc.spec.seed = 11;
  tc.seed = 21;
  return tc;
}

bool same_params(const EncoderModel& a, const EncoderModel& b) {
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    if (a.parameters()[i].vec() != b.parameters()[i].vec()) return false;
  return true;
}

OptimizerState fresh_opt(const EncoderModel& model) {
  OptimizerState opt;
  for (const Tensor& p : model.parameters()) {
    opt.m.emplace_back(p.shape());
    opt.v.emplace_back(p.shape());
  }
  return opt;
}

}  // namespace

TEST_CASE("two constant-unit-gradient steps reach 0.9 then 0.8") {
  Tensor theta({1}, {1.0});
  Tensor m({1}), v({1}), grad({1}, {1.0});
  adam_update(theta, m, v, grad, 1, 0.1, 0.9, 0.999, 1e-8);
  CHECK(std::abs(theta[0] - 0.9) < 1e-6);
  adam_update(theta, m, v, grad, 2, 0.1, 0.9, 0.999, 1e-8);
  CHECK(std::abs(theta[0] - 0.8) < 1e-6);
}

TEST_CASE("the update matches a reference implementation over several steps") {
  const double lr = 0.003, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Tensor theta({3}, {0.5, -1.0, 2.0});
  Tensor m({3}), v({3});
  double rtheta[3] = {0.5, -1.0, 2.0}, rm[3] = {0, 0, 0}, rv[3] = {0, 0, 0};
  std::vector<std::vector<double>> grads{
      {0.1, -0.2, 0.3}, {-0.4, 0.5, -0.6}, {0.7, 0.8, -0.9}, {0.0, -0.1, 0.2}, {1.0, -1.0, 1.0}};
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    Tensor g({3}, grads[t - 1]);
    adam_update(theta, m, v, g, t, lr, b1, b2, eps);
    for (int i = 0; i < 3; ++i) {
      double gi = grads[t - 1][static_cast<std::size_t>(i)];
      rm[i] = b1 * rm[i] + (1 - b1) * gi;
      rv[i] = b2 * rv[i] + (1 - b2) * gi * gi;
      double mhat = rm[i] / (1 - std::pow(b1, static_cast<double>(t)));
      double vhat = rv[i] / (1 - std::pow(b2, static_cast<double>(t)));
      rtheta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
  for (int i = 0; i < 3; ++i) CHECK(theta[static_cast<std::size_t>(i)] == doctest::Approx(rtheta[i]).epsilon(1e-12));
}

TEST_CASE("shape mismatches in the update are rejected") {
  Tensor theta({2}), m({2}), v({2}), bad({3});
  CHECK_THROWS_AS(adam_update(theta, m, v, bad, 1, 0.1, 0.9, 0.999, 1e-8), ContractViolation);
}

TEST_CASE("training config validation") {
  TrainConfig tc = micro_config(1);
  CHECK_NOTHROW(tc.validate());
  TrainConfig bad = tc;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  bad = tc;
  bad.adam_beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  bad = tc;
  bad.early_stopping = "patience";
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  bad = tc;
  bad.episodes = 0;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
}

TEST_CASE("forward episode reporting is deterministic and finite") {
  LabeledDataset ds = synth_blobs(3, 6, 8, 0.1, 7);
  EncoderModel model(micro_arch());
  model.init_params(41);
  TrainConfig tc = micro_config(1);
  Episode ep = sample_episode(ds, tc.spec);

  NoiseSource n1(909), n2(909);
  TrainLogRecord r1 = episode_loss(model, ep, tc, n1);
  TrainLogRecord r2 = episode_loss(model, ep, tc, n2);
  CHECK(r1.total == r2.total);
  CHECK(r1.bhs == r2.bhs);
  CHECK(r1.cce == r2.cce);
  CHECK(r1.rec == r2.rec);
  CHECK(std::isfinite(r1.total));
  CHECK(r1.bhs == r1.cce);  // single scoring path
  CHECK(r1.acc >= 0.0);
  CHECK(r1.acc <= 1.0);
  CHECK(r1.total == doctest::Approx(0.7 * r1.bhs + 0.3 * r1.cce + r1.rec).epsilon(1e-12));
}

TEST_CASE("analytic episode gradients back the forward record") {
  LabeledDataset ds = synth_blobs(3, 6, 8, 0.1, 7);
  EncoderModel model(micro_arch());
  model.init_params(41);
  TrainConfig tc = micro_config(1);
  Episode ep = sample_episode(ds, tc.spec);

  std::vector<Tensor> grads;
  NoiseSource ng(909);
  TrainLogRecord rec = episode_gradients(model, ep, tc, ng, grads);
  NoiseSource nf(909);
  TrainLogRecord fwd = episode_loss(model, ep, tc, nf);
  CHECK(rec.total == fwd.total);
  REQUIRE(grads.size() == model.parameters().size());
  bool any_nonzero = false;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    REQUIRE(grads[i].shape() == model.parameters()[i].shape());
    for (double g : grads[i].vec()) {
      CHECK(std::isfinite(g));
      any_nonzero = any_nonzero || g != 0.0;
    }
  }
  CHECK(any_nonzero);
}

TEST_CASE("one optimizer step lowers the episode loss it was computed on") {
  LabeledDataset ds = synth_blobs(3, 6, 8, 0.1, 7);
  EncoderModel model(micro_arch());
  model.init_params(41);
  TrainConfig tc = micro_config(1);
  Episode ep = sample_episode(ds, tc.spec);

  NoiseSource before(909);
  double loss_before = episode_loss(model, ep, tc, before).total;

  OptimizerState opt = fresh_opt(model);
  NoiseSource step_noise(909);
  TrainLogRecord rec = train_step(model, opt, ep, tc, step_noise);
  CHECK(rec.total == loss_before);
  CHECK(opt.step == 1);

  NoiseSource after(909);
  double loss_after = episode_loss(model, ep, tc, after).total;
  CHECK(loss_after < loss_before);
}

TEST_CASE("fitting is bit-deterministic and resumable") {
  LabeledDataset ds = synth_blobs(3, 8, 8, 0.1, 15);
  TrainConfig tc = micro_config(6);

  EncoderModel m1(micro_arch());
  m1.init_params(5);
  OptimizerState o1 = fresh_opt(m1);
  std::vector<TrainLogRecord> log1 = fit(m1, o1, ds, tc);
  REQUIRE(log1.size() == 6);
  for (int i = 0; i < 6; ++i) CHECK(log1[static_cast<std::size_t>(i)].episode == i);

  EncoderModel m2(micro_arch());
  m2.init_params(5);
  OptimizerState o2 = fresh_opt(m2);
  std::vector<TrainLogRecord> log2 = fit(m2, o2, ds, tc);
  CHECK(same_params(m1, m2));
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(log1[i].total == log2[i].total);
    CHECK(log1[i].acc == log2[i].acc);
  }

  // interrupted at 3 and resumed -> identical to the uninterrupted run
  EncoderModel m3(micro_arch());
  m3.init_params(5);
  OptimizerState o3 = fresh_opt(m3);
  TrainConfig half = tc;
  half.episodes = 3;
  fit(m3, o3, ds, half);
  CHECK(o3.step == 3);

  fs::path ck = fs::temp_directory_path() / ("bhfa_resume_" + std::to_string(::getpid()) + ".ck");
  save_checkpoint(ck.string(), m3, &o3);
  LoadedCheckpoint lc = load_checkpoint(ck.string());
  REQUIRE(lc.opt.has_value());
  std::vector<TrainLogRecord> tail = fit(lc.model, *lc.opt, ds, tc);
  CHECK(tail.size() == 3);
  CHECK(tail.front().episode == 3);  // resumes where the half run stopped
  CHECK(same_params(lc.model, m1));
  fs::remove(ck);
}

TEST_CASE("checkpoint callback fires on the cadence plus the final episode") {
  LabeledDataset ds = synth_blobs(3, 8, 8, 0.1, 15);
  TrainConfig tc = micro_config(5);
  tc.checkpoint_every = 2;
  EncoderModel model(micro_arch());
  model.init_params(5);
  OptimizerState opt = fresh_opt(model);
  std::vector<int> fired;
  fit(model, opt, ds, tc, [&](int episode, const EncoderModel&, const OptimizerState&) {
    fired.push_back(episode);
  });
  CHECK(fired == std::vector<int>{2, 4, 5});

  // cadence 0 -> final only
  EncoderModel m2(micro_arch());
  m2.init_params(5);
  OptimizerState o2 = fresh_opt(m2);
  TrainConfig tc0 = micro_config(3);
  std::vector<int> fired0;
  fit(m2, o2, ds, tc0, [&](int episode, const EncoderModel&, const OptimizerState&) {
    fired0.push_back(episode);
  });
  CHECK(fired0 == std::vector<int>{3});
}

TEST_CASE("training log CSV has a header and one row per episode") {
  LabeledDataset ds = synth_blobs(3, 8, 8, 0.1, 15);
  TrainConfig tc = micro_config(4);
  EncoderModel model(micro_arch());
  model.init_params(5);
  OptimizerState opt = fresh_opt(model);
  std::vector<TrainLogRecord> log = fit(model, opt, ds, tc);

  fs::path csv = fs::temp_directory_path() / ("bhfa_log_" + std::to_string(::getpid()) + ".csv");
  write_train_log_csv(csv.string(), log);
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "episode,bhs,cce,rec,total,acc,ms");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);
  fs::remove(csv);
}
