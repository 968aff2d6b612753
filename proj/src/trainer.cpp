#include "bhfa/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "bhfa/errors.hpp"
#include "bhfa/numeric.hpp"

namespace bhfa {

void TrainConfig::validate() const {
  require(episodes >= 1, "TrainConfig: episodes must be >= 1");
  require(lr > 0.0, "TrainConfig: lr must be positive");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
          "TrainConfig: betas must lie in [0,1)");
  require(adam_eps > 0.0, "TrainConfig: adam_eps must be positive");
  require(checkpoint_every >= 0, "TrainConfig: checkpoint_every must be >= 0");
  require(early_stopping == "none", "TrainConfig: only early_stopping=none is supported");
  spec.validate();
  loss.validate();
}

void adam_update(Tensor& param, Tensor& m, Tensor& v, const Tensor& grad, std::uint64_t t,
                 double lr, double beta1, double beta2, double eps) {
  require(param.same_shape(m) && param.same_shape(v) && param.same_shape(grad),
          "adam_update: slot shape mismatch");
  require(t >= 1, "adam_update: step count is 1-based");
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

namespace {

struct EpisodeGraph {
  ad::Tape tape;
  std::vector<ad::Var> params;
  ad::Var total;   // weighted scalar root
  double bhs = 0, cce = 0, rec = 0, acc = 0;
};

void check_pixel_range(const Tensor& batch, const char* which) {
  for (std::size_t i = 0; i < batch.numel(); ++i)
    require(batch[i] >= 0.0 && batch[i] <= 1.0,
            std::string("episode ") + which + " images must be normalized to [0,1]");
}

Tensor noise_like(ad::Tape& t, ad::Var shaped, NoiseSource& noise) {
  Tensor z(t.val(shaped).shape());
  for (std::size_t i = 0; i < z.numel(); ++i) z[i] = noise.next();
  return z;
}

// Builds the full per-episode loss graph. Gradients flow from the
// classification terms through the prototype aggregation into the support
// encodings, and from both reconstruction terms through the decoder.
EpisodeGraph build_episode_graph(const EncoderModel& model, const Episode& ep,
                                 const TrainConfig& cfg, NoiseSource& noise, bool requires_grad) {
  const int ways = cfg.spec.ways;
  require(static_cast<int>(ep.class_map.size()) == ways,
          "train_step: episode does not match the configured way count");
  check_pixel_range(ep.support, "support");
  check_pixel_range(ep.query, "query");

  EpisodeGraph g;
  ad::Tape& t = g.tape;
  g.params = model.make_vars(t, requires_grad);

  const ad::Var xs = t.leaf(ep.support, false);
  const ad::Var xq = t.leaf(ep.query, false);
  auto [mu_s, ls_s] = model.encode_vars(t, g.params, xs);
  auto [mu_q, ls_q] = model.encode_vars(t, g.params, xq);

  // class scores: queries vs moment-matched support prototypes
  const int d = model.arch().latent_dim;
  ad::Var proto = t.aggregate_gaussians(mu_s, ls_s, ep.support_class, ways);
  ad::Var proto_mu = t.slice_cols(proto, 0, d);
  ad::Var proto_ls = t.slice_cols(proto, d, d);
  ad::Var affinity = t.bc_matrix(mu_q, ls_q, proto_mu, proto_ls);
  ad::Var logits = t.scale(t.add(affinity, t.scale(t.mul(affinity, affinity), -0.5)),
                           1.0 / cfg.loss.tau);
  ad::Var nll = t.nll_rows(t.log_softmax_rows(logits), ep.query_class);

  // reconstructions of both batches from one reparameterized sample each
  ad::Var z_s = t.add(mu_s, t.mul_const(t.exp(ls_s), noise_like(t, ls_s, noise)));
  ad::Var z_q = t.add(mu_q, t.mul_const(t.exp(ls_q), noise_like(t, ls_q, noise)));
  ad::Var rec_s = t.mean_abs_ref(model.decode_vars(t, g.params, z_s), ep.support);
  ad::Var rec_q = t.mean_abs_ref(model.decode_vars(t, g.params, z_q), ep.query);
  ad::Var rec = t.add(rec_s, rec_q);

  const LossConfig& lc = cfg.loss;
  const double w_cls = (lc.enable_bhs ? lc.lambda1 : 0.0) + (lc.enable_cce ? lc.lambda2 : 0.0);
  const double w_rec = lc.enable_rec ? lc.lambda3 : 0.0;
  g.total = t.add(t.scale(nll, w_cls), t.scale(rec, w_rec));

  g.bhs = t.val(nll)[0];
  g.cce = g.bhs;  // one scoring path; one-hot cross entropy equals the NLL
  g.rec = t.val(rec)[0];

  const std::vector<int> pred = argmax_rows(t.val(affinity));
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == ep.query_class[i]) ++correct;
  g.acc = static_cast<double>(correct) / static_cast<double>(pred.size());
  return g;
}

TrainLogRecord record_from_graph(const EpisodeGraph& g, const LossConfig& lc) {
  TrainLogRecord rec;
  rec.bhs = g.bhs;
  rec.cce = g.cce;
  rec.rec = g.rec;
  rec.total = total_loss(g.bhs, g.cce, g.rec, lc);
  rec.acc = g.acc;
  if (!std::isfinite(rec.bhs))
    throw ContractViolation("non-finite loss term: bhs (affinity softmax)");
  if (!std::isfinite(rec.rec)) throw ContractViolation("non-finite loss term: rec (reconstruction)");
  return rec;
}

}  // namespace

TrainLogRecord episode_loss(const EncoderModel& model, const Episode& ep, const TrainConfig& cfg,
                            NoiseSource& noise) {
  EpisodeGraph g = build_episode_graph(model, ep, cfg, noise, false);
  return record_from_graph(g, cfg.loss);
}

TrainLogRecord episode_gradients(const EncoderModel& model, const Episode& ep,
                                 const TrainConfig& cfg, NoiseSource& noise,
                                 std::vector<Tensor>& grads) {
  EpisodeGraph g = build_episode_graph(model, ep, cfg, noise, true);
  TrainLogRecord rec = record_from_graph(g, cfg.loss);
  g.tape.backward(g.total);
  grads.clear();
  for (const ad::Var p : g.params) grads.push_back(g.tape.grad(p));
  return rec;
}

TrainLogRecord train_step(EncoderModel& model, OptimizerState& opt, const Episode& ep,
                          const TrainConfig& cfg, NoiseSource& noise) {
  auto& params = model.parameters();
  if (opt.m.empty()) {
    for (const Tensor& p : params) {
      opt.m.emplace_back(p.shape());
      opt.v.emplace_back(p.shape());
    }
  }
  require(opt.m.size() == params.size() && opt.v.size() == params.size(),
          "train_step: optimizer slots do not match the parameter list");

  EpisodeGraph g = build_episode_graph(model, ep, cfg, noise, true);
  TrainLogRecord rec = record_from_graph(g, cfg.loss);
  g.tape.backward(g.total);

  const std::uint64_t t = opt.step + 1;
  for (std::size_t i = 0; i < params.size(); ++i)
    adam_update(params[i], opt.m[i], opt.v[i], g.tape.grad(g.params[i]), t, cfg.lr,
                cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  opt.step = t;

  for (std::size_t i = 0; i < params.size(); ++i)
    if (!all_finite(params[i].vec()))
      throw ContractViolation("non-finite parameter after update: " + model.param_name(i));
  return rec;
}

std::vector<TrainLogRecord> fit(EncoderModel& model, OptimizerState& opt, const LabeledDataset& ds,
                                const TrainConfig& cfg, const CheckpointFn& on_checkpoint) {
  std::vector<TrainLogRecord> log;
  const int start = static_cast<int>(opt.step);
  int last_saved = -1;
  for (int e = start; e < cfg.episodes; ++e) {
    const auto t0 = std::chrono::steady_clock::now();

    EpisodeSpec spec = cfg.spec;
    spec.seed = derive_seed(cfg.spec.seed, seed_tag::kEpisode, static_cast<std::uint64_t>(e));
    Episode ep = sample_episode(ds, spec);
    if (cfg.augment) {
      Rng arng(derive_seed(cfg.seed, seed_tag::kAugment, static_cast<std::uint64_t>(e)));
      const std::size_t img_sz = static_cast<std::size_t>(ep.support.dim(1)) *
                                 ep.support.dim(2) * ep.support.dim(3);
      const std::vector<int> img_shape = {ep.support.dim(1), ep.support.dim(2), ep.support.dim(3)};
      auto augment_batch = [&](Tensor& batch) {
        for (int row = 0; row < batch.dim(0); ++row) {
          Tensor img(img_shape);
          std::copy(batch.data() + row * img_sz, batch.data() + (row + 1) * img_sz, img.data());
          img = augment(img, arng);
          std::copy(img.data(), img.data() + img_sz, batch.data() + row * img_sz);
        }
      };
      augment_batch(ep.support);
      augment_batch(ep.query);
    }

    NoiseSource noise(derive_seed(cfg.seed, seed_tag::kNoise, static_cast<std::uint64_t>(e)));
    TrainLogRecord rec = train_step(model, opt, ep, cfg, noise);
    rec.episode = e;
    rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log.push_back(rec);

    if (on_checkpoint && cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0) {
      on_checkpoint(e + 1, model, opt);
      last_saved = e + 1;
    }
  }
  if (on_checkpoint && last_saved != cfg.episodes) on_checkpoint(cfg.episodes, model, opt);
  return log;
}

void write_train_log_csv(const std::string& path, const std::vector<TrainLogRecord>& log) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write training log: " + path);
  os << "episode,bhs,cce,rec,total,acc,ms\n";
  os.precision(17);
  for (const TrainLogRecord& r : log)
    os << r.episode << ',' << r.bhs << ',' << r.cce << ',' << r.rec << ',' << r.total << ','
       << r.acc << ',' << r.ms << '\n';
  if (!os) throw IoError("short write on training log: " + path);
}

}  // namespace bhfa
