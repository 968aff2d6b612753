#include "bhfa/selfcheck.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <numbers>
#include <sstream>

#include "bhfa/config.hpp"
#include "bhfa/encoder.hpp"
#include "bhfa/errors.hpp"
#include "bhfa/eval.hpp"
#include "bhfa/losses.hpp"
#include "bhfa/trainer.hpp"

namespace bhfa::selfcheck {

namespace {

double simpson_rec(const std::function<double(double)>& f, double a, double b, double fa,
                   double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

double adaptive_simpson(const std::function<double(double)>& f, double lo, double hi, double tol) {
  require(hi > lo && tol > 0.0, "adaptive_simpson: bad interval or tolerance");
  const double m = 0.5 * (lo + hi);
  const double fa = f(lo);
  const double fm = f(m);
  const double fb = f(hi);
  const double whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_rec(f, lo, hi, fa, fm, fb, whole, tol, 48);
}

namespace {

double gauss_pdf(double x, double mean, double sigma) {
  const double z = (x - mean) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

// Integration window for sqrt(p*q): the intersection of both +-30 sigma
// supports. The product decays on the scale of the smaller sigma, so any mass
// outside the intersection is below ~1e-190.
std::pair<double, double> product_window(double mean_a, double sigma_a, double mean_b,
                                         double sigma_b) {
  const double lo = std::max(mean_a - 30.0 * sigma_a, mean_b - 30.0 * sigma_b);
  const double hi = std::min(mean_a + 30.0 * sigma_a, mean_b + 30.0 * sigma_b);
  return {lo, hi};
}

// Bootstraps adaptivity with uniform panels narrow enough (~2x the smaller
// sigma inside a product window) that a peak cannot slip between the initial
// sample points of any panel.
double integrate_panels(const std::function<double(double)>& f, double lo, double hi, double tol) {
  constexpr int kPanels = 32;
  const double h = (hi - lo) / kPanels;
  double total = 0.0;
  for (int i = 0; i < kPanels; ++i) {
    total += adaptive_simpson(f, lo + i * h, lo + (i + 1) * h, tol / kPanels);
  }
  return total;
}

}  // namespace

double bc_quadrature_1d(double mean_a, double sigma_a, double mean_b, double sigma_b, double tol) {
  require(sigma_a > 0.0 && sigma_b > 0.0, "bc_quadrature_1d: sigmas must be positive");
  const auto [lo, hi] = product_window(mean_a, sigma_a, mean_b, sigma_b);
  if (hi <= lo) return 0.0;
  auto f = [&](double x) {
    return std::sqrt(gauss_pdf(x, mean_a, sigma_a) * gauss_pdf(x, mean_b, sigma_b));
  };
  return integrate_panels(f, lo, hi, tol);
}

double bc_quadrature_2d(const DiagGaussian& a, const DiagGaussian& b, double tol) {
  require(a.dim() == 2 && b.dim() == 2, "bc_quadrature_2d: expected 2-D Gaussians");
  const double sax = std::exp(a.log_std[0]), say = std::exp(a.log_std[1]);
  const double sbx = std::exp(b.log_std[0]), sby = std::exp(b.log_std[1]);
  const auto [xlo, xhi] = product_window(a.mean[0], sax, b.mean[0], sbx);
  const auto [ylo, yhi] = product_window(a.mean[1], say, b.mean[1], sby);
  if (xhi <= xlo || yhi <= ylo) return 0.0;
  auto joint = [&](double x, double y) {
    const double pa = gauss_pdf(x, a.mean[0], sax) * gauss_pdf(y, a.mean[1], say);
    const double pb = gauss_pdf(x, b.mean[0], sbx) * gauss_pdf(y, b.mean[1], sby);
    return std::sqrt(pa * pb);
  };
  auto outer = [&](double x) {
    return integrate_panels([&](double y) { return joint(x, y); }, ylo, yhi, tol * 0.01);
  };
  return integrate_panels(outer, xlo, xhi, tol);
}

namespace {

struct MicroSetup {
  EncoderModel model;
  Episode episode;
  TrainConfig cfg;
  std::uint64_t noise_seed = 0;
};

MicroSetup make_micro_setup() {
  Arch arch;
  arch.in_channels = 1;
  arch.side = 8;
  arch.widths = {4, 8};
  arch.latent_dim = 4;
  MicroSetup s{EncoderModel(arch), {}, {}, 2024};
  s.model.init_params(41);

  LabeledDataset ds = synth_blobs(2, 4, 8, 0.1, 7);
  s.cfg.spec.ways = 2;
  s.cfg.spec.n_shot = 1;
  s.cfg.spec.n_query = 1;
  s.cfg.spec.seed = 11;
  s.episode = sample_episode(ds, s.cfg.spec);
  return s;
}

double micro_total(const EncoderModel& model, const MicroSetup& s) {
  NoiseSource noise(s.noise_seed);
  return episode_loss(model, s.episode, s.cfg, noise).total;
}

}  // namespace

GradCheckResult check_micro_gradients(int coords_per_param) {
  MicroSetup s = make_micro_setup();

  std::vector<Tensor> grads;
  NoiseSource noise(s.noise_seed);
  episode_gradients(s.model, s.episode, s.cfg, noise, grads);

  GradCheckResult out;
  EncoderModel probe = s.model;
  auto& params = probe.parameters();
  Rng pick(515);
  const double h = 1e-4;
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::vector<std::size_t> coords;
    const std::size_t n = params[p].numel();
    if (coords_per_param <= 0 || static_cast<std::size_t>(coords_per_param) >= n) {
      for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int i = 0; i < coords_per_param; ++i)
        coords.push_back(static_cast<std::size_t>(pick.uniform_int(static_cast<std::uint64_t>(n))));
    }
    for (std::size_t i : coords) {
      const double saved = params[p][i];
      params[p][i] = saved + h;
      const double up = micro_total(probe, s);
      params[p][i] = saved - h;
      const double dn = micro_total(probe, s);
      params[p][i] = saved;
      const double fd = (up - dn) / (2.0 * h);
      const double an = grads[p][i];
      const double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
      ++out.checked;
      if (rel > out.max_rel_err) {
        out.max_rel_err = rel;
        out.worst_param = probe.param_name(p) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

namespace {

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << x;
  return os.str();
}

SuiteResult suite_bc_identity(const SuiteOptions& opt) {
  SuiteResult r{"bc-identity", true, "", 0};
  Rng rng(101);
  double worst = 0.0;
  const int pairs = 10000;
  for (int i = 0; i < pairs; ++i) {
    const int d = 1 + static_cast<int>(rng.uniform_int(64));
    std::vector<double> ma(d), mb(d), la(d), lb(d);
    for (int k = 0; k < d; ++k) {
      ma[k] = rng.uniform(-10.0, 10.0);
      mb[k] = rng.uniform(-10.0, 10.0);
      la[k] = rng.uniform(-3.0, 3.0);
      lb[k] = rng.uniform(-3.0, 3.0);
    }
    const DiagGaussian a(ma, la), b(mb, lb);
    double ab = bhattacharyya_coefficient(a, b);
    double ba = bhattacharyya_coefficient(b, a);
    double self = bhattacharyya_coefficient(a, a);
    if (opt.perturb_bc) {
      ab += 1e-6;
      self += 1e-6;
    }
    worst = std::max(worst, std::abs((1.0 - ab) - hellinger_sq(a, b)));
    worst = std::max(worst, std::abs(ab - ba));
    worst = std::max(worst, std::abs(self - 1.0));
  }
  r.passed = worst <= 1e-12;
  r.detail = "max deviation " + fmt(worst) + " over " + std::to_string(pairs) +
             " pairs (bound 1e-12)";
  return r;
}

SuiteResult suite_bc_quadrature(const SuiteOptions&) {
  SuiteResult r{"bc-quadrature", true, "", 0};
  Rng rng(202);
  double worst = 0.0;
  for (int i = 0; i < 150; ++i) {
    const double ma = rng.uniform(-5.0, 5.0), mb = rng.uniform(-5.0, 5.0);
    const double la = rng.uniform(-1.2, 1.2), lb = rng.uniform(-1.2, 1.2);
    const DiagGaussian a({ma}, {la}), b({mb}, {lb});
    const double closed = bhattacharyya_coefficient(a, b);
    const double oracle = bc_quadrature_1d(ma, std::exp(la), mb, std::exp(lb));
    worst = std::max(worst, std::abs(closed - oracle));
  }
  for (int i = 0; i < 50; ++i) {
    std::vector<double> ma(2), mb(2), la(2), lb(2);
    for (int k = 0; k < 2; ++k) {
      ma[k] = rng.uniform(-5.0, 5.0);
      mb[k] = rng.uniform(-5.0, 5.0);
      la[k] = rng.uniform(-1.2, 1.2);
      lb[k] = rng.uniform(-1.2, 1.2);
    }
    const DiagGaussian a(ma, la), b(mb, lb);
    worst = std::max(worst, std::abs(bhattacharyya_coefficient(a, b) - bc_quadrature_2d(a, b)));
  }
  r.passed = worst <= 1e-8;
  r.detail = "max |closed-form - quadrature| " + fmt(worst) + " over 200 pairs (bound 1e-8)";
  return r;
}

SuiteResult suite_gradients(const SuiteOptions&) {
  SuiteResult r{"gradients", true, "", 0};
  const GradCheckResult g = check_micro_gradients(8);
  r.passed = g.max_rel_err < 1e-4;
  r.detail = "max rel err " + fmt(g.max_rel_err) + " over " + std::to_string(g.checked) +
             " coordinates (bound 1e-4), worst at " + g.worst_param;
  return r;
}

SuiteResult suite_adam(const SuiteOptions&) {
  SuiteResult r{"adam", true, "", 0};
  Tensor theta({1});
  theta[0] = 1.0;
  Tensor m({1}), v({1}), grad({1});
  grad[0] = 1.0;
  adam_update(theta, m, v, grad, 1, 0.1, 0.9, 0.999, 1e-8);
  const double step1 = theta[0];
  adam_update(theta, m, v, grad, 2, 0.1, 0.9, 0.999, 1e-8);
  const double step2 = theta[0];
  r.passed = std::abs(step1 - 0.9) <= 1e-6 && std::abs(step2 - 0.8) <= 1e-6;
  r.detail = "unit-gradient steps from 1.0 reached " + std::to_string(step1) + ", " +
             std::to_string(step2) + " (want 0.9, 0.8 within 1e-6)";
  return r;
}

SuiteResult suite_episode_shape(const SuiteOptions&) {
  SuiteResult r{"episode-shape", true, "", 0};
  LabeledDataset ds = synth_blobs(4, 6, 8, 0.05, 99);
  EpisodeSpec spec;
  spec.ways = 3;
  spec.n_shot = 2;
  spec.n_query = 2;
  spec.seed = 5;
  Episode ep = sample_episode(ds, spec);

  std::ostringstream problems;
  if (ep.support.dim(0) != 6 || ep.query.dim(0) != 6) problems << "batch row counts wrong; ";
  for (int i = 0; i < 6; ++i) {
    if (ep.support_class[static_cast<std::size_t>(i)] != i / 2) problems << "support labels not class-major; ";
    if (ep.query_class[static_cast<std::size_t>(i)] != i / 2) problems << "query labels not class-major; ";
  }
  if (ep.class_map.size() != 3) problems << "class_map size wrong; ";
  for (int w = 0; w < 3; ++w) {
    const int g = ep.class_map[static_cast<std::size_t>(w)];
    if (g < 0 || g >= 4) problems << "class_map out of range; ";
    for (int w2 = w + 1; w2 < 3; ++w2)
      if (g == ep.class_map[static_cast<std::size_t>(w2)]) problems << "class_map repeats a class; ";
  }
  const std::size_t img = ep.support.numel() / 6;
  for (int q = 0; q < 6; ++q)
    for (int s = 0; s < 6; ++s)
      if (std::memcmp(ep.query.data() + q * img, ep.support.data() + s * img,
                      img * sizeof(double)) == 0)
        problems << "query row duplicates a support row; ";
  for (std::size_t i = 0; i < ep.support.numel(); ++i)
    if (ep.support[i] < 0.0 || ep.support[i] > 1.0) {
      problems << "pixels outside [0,1]; ";
      break;
    }

  const std::string p = problems.str();
  r.passed = p.empty();
  r.detail = p.empty() ? "3-way-2-shot-2-query episode well formed" : p;
  return r;
}

SuiteResult suite_frechet(const SuiteOptions&) {
  SuiteResult r{"frechet", true, "", 0};
  std::ostringstream problems;

  GaussianSummary a;
  a.mean = {0.3, -1.2};
  a.cov = Tensor({2, 2}, {1.0, 0.2, 0.2, 2.0});
  if (frechet_distance(a, a) != 0.0) problems << "self distance not exactly 0; ";

  GaussianSummary r1, g1;
  r1.mean = {0.0};
  r1.cov = Tensor({1, 1}, {1.0});
  g1.mean = {1.0};
  g1.cov = Tensor({1, 1}, {1.0});
  if (frechet_distance(r1, g1) != 1.0) problems << "1-D shifted case not exactly 1.0; ";

  GaussianSummary r2, g2;
  r2.mean = {0.0, 0.0};
  r2.cov = Tensor({2, 2}, {1.0, 0.0, 0.0, 4.0});
  g2.mean = {0.0, 0.0};
  g2.cov = Tensor({2, 2}, {4.0, 0.0, 0.0, 1.0});
  const double fd = frechet_distance(r2, g2);
  if (std::abs(fd - 2.0) > 1e-8) problems << "2-D diagonal case " << fd << " != 2.0 within 1e-8; ";

  const std::string p = problems.str();
  r.passed = p.empty();
  r.detail = p.empty() ? "identity, 1-D shift, and 2-D diagonal cases exact" : p;
  return r;
}

SuiteResult suite_defaults(const SuiteOptions&) {
  SuiteResult r{"defaults", true, "", 0};
  std::ostringstream problems;

  const LossConfig lc;
  if (lc.tau != 0.01) problems << "tau default != 0.01; ";
  if (lc.lambda1 != 0.7 || lc.lambda2 != 0.3 || lc.lambda3 != 1.0)
    problems << "default loss triple != (0.7, 0.3, 1.0); ";
  LossConfig disaster;
  apply_loss_preset("disaster", disaster);
  if (disaster.lambda1 != 1.0 || disaster.lambda2 != 0.5 || disaster.lambda3 != 1.0)
    problems << "disaster triple != (1.0, 0.5, 1.0); ";
  LossConfig benchmark;
  benchmark.lambda1 = 0.0;
  apply_loss_preset("benchmark", benchmark);
  if (benchmark.lambda1 != 0.7 || benchmark.lambda2 != 0.3 || benchmark.lambda3 != 1.0)
    problems << "benchmark triple != (0.7, 0.3, 1.0); ";

  const TrainConfig tc;
  if (tc.lr != 0.001) problems << "lr default != 0.001; ";
  if (tc.adam_beta1 != 0.9 || tc.adam_beta2 != 0.999 || tc.adam_eps != 1e-8)
    problems << "Adam defaults != (0.9, 0.999, 1e-8); ";
  if (tc.episodes != 2000) problems << "episode default != 2000; ";

  const RunConfig rc;
  if (rc.eval_runs != 10) problems << "eval run default != 10; ";

  const EpisodeSpec spec;
  if (spec.ways != 5 || spec.n_shot != 1 || spec.n_query != 15)
    problems << "episode defaults != 5-way-1-shot-15-query; ";

  if (kLogStdMin != -7.0 || kLogStdMax != 7.0) problems << "log-std clamp != [-7, 7]; ";
  if (kBcEps != 1e-300) problems << "overlap floor != 1e-300; ";
  if (kVarMin != 1e-6) problems << "variance floor != 1e-6; ";

  const std::string p = problems.str();
  r.passed = p.empty();
  r.detail = p.empty() ? "published constants present verbatim as config defaults" : p;
  return r;
}

using SuiteFn = SuiteResult (*)(const SuiteOptions&);

const std::vector<std::pair<std::string, SuiteFn>>& registry() {
  static const std::vector<std::pair<std::string, SuiteFn>> suites = {
      {"bc-identity", suite_bc_identity}, {"bc-quadrature", suite_bc_quadrature},
      {"gradients", suite_gradients},     {"adam", suite_adam},
      {"episode-shape", suite_episode_shape}, {"frechet", suite_frechet},
      {"defaults", suite_defaults},
  };
  return suites;
}

}  // namespace

std::vector<std::string> suite_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

SuiteResult run_suite(const std::string& name, const SuiteOptions& opt) {
  for (const auto& [n, fn] : registry()) {
    if (n == name) {
      const auto t0 = std::chrono::steady_clock::now();
      SuiteResult r = fn(opt);
      r.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      return r;
    }
  }
  throw ContractViolation("unknown verification suite: " + name);
}

std::vector<SuiteResult> run_all_suites(const SuiteOptions& opt) {
  std::vector<SuiteResult> results;
  for (const auto& [name, fn] : registry()) results.push_back(run_suite(name, opt));
  return results;
}

}  // namespace bhfa::selfcheck
