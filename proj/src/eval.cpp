#include "bhfa/eval.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "bhfa/distributions.hpp"
#include "bhfa/errors.hpp"
#include "bhfa/losses.hpp"
#include "bhfa/numeric.hpp"
#include "bhfa/rng.hpp"

namespace bhfa {

Tensor stack_images(const std::vector<Tensor>& images) {
  require(!images.empty(), "stack_images: empty image set");
  const Tensor& first = images.front();
  require(first.ndim() == 3, "stack_images: images must be (C,H,W)");
  Tensor batch({static_cast<int>(images.size()), first.dim(0), first.dim(1), first.dim(2)});
  const std::size_t sz = first.numel();
  for (std::size_t i = 0; i < images.size(); ++i) {
    require(images[i].same_shape(first), "stack_images: image " + std::to_string(i) +
                                             " shape " + images[i].shape_str() +
                                             " differs from " + first.shape_str());
    std::memcpy(batch.data() + i * sz, images[i].data(), sz * sizeof(double));
  }
  return batch;
}

namespace {

DiagGaussian row_gaussian(const Tensor& mu, const Tensor& ls, int row) {
  const int d = mu.dim(1);
  std::vector<double> m(static_cast<std::size_t>(d)), s(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    m[static_cast<std::size_t>(j)] = mu.at(row, j);
    s[static_cast<std::size_t>(j)] = ls.at(row, j);
  }
  return DiagGaussian(std::move(m), std::move(s));
}

}  // namespace

EvalReport evaluate_with(const EncodeFn& encode, const LabeledDataset& ds, const EpisodeSpec& spec,
                         int n_runs, std::uint64_t seed) {
  spec.validate();
  require(n_runs >= 1, "evaluate: n_runs must be >= 1");

  EvalReport report;
  report.n_runs = n_runs;
  report.spec = spec;
  report.spec.seed = seed;
  report.confusion = Tensor({spec.ways, spec.ways});
  Tensor counts({spec.ways, spec.ways});

  const LossConfig score_cfg;  // scoring uses the default temperature
  for (int run = 0; run < n_runs; ++run) {
    EpisodeSpec run_spec = spec;
    run_spec.seed = derive_seed(seed, seed_tag::kEvalRun, static_cast<std::uint64_t>(run));
    Episode ep = sample_episode(ds, run_spec);

    auto [mu_s, ls_s] = encode(ep.support);
    require(mu_s.ndim() == 2 && mu_s.dim(0) == ep.support.dim(0),
            "evaluate: encoder returned bad support shape " + mu_s.shape_str());

    std::vector<std::vector<DiagGaussian>> members(static_cast<std::size_t>(spec.ways));
    for (int i = 0; i < mu_s.dim(0); ++i) {
      members[static_cast<std::size_t>(ep.support_class[static_cast<std::size_t>(i)])].push_back(
          row_gaussian(mu_s, ls_s, i));
    }
    std::vector<DiagGaussian> prototypes;
    prototypes.reserve(static_cast<std::size_t>(spec.ways));
    for (int w = 0; w < spec.ways; ++w)
      prototypes.push_back(aggregate_prototype(members[static_cast<std::size_t>(w)]));

    auto [mu_q, ls_q] = encode(ep.query);
    std::vector<DiagGaussian> queries;
    queries.reserve(static_cast<std::size_t>(mu_q.dim(0)));
    for (int i = 0; i < mu_q.dim(0); ++i) queries.push_back(row_gaussian(mu_q, ls_q, i));
    ScoreMatrix scores = score_queries(queries, prototypes, score_cfg);
    std::vector<int> pred = argmax_rows(scores.probabilities);

    int correct = 0;
    for (int i = 0; i < mu_q.dim(0); ++i) {
      const int truth = ep.query_class[static_cast<std::size_t>(i)];
      counts.at(truth, pred[static_cast<std::size_t>(i)]) += 1.0;
      if (pred[static_cast<std::size_t>(i)] == truth) ++correct;
    }
    report.per_run_aa.push_back(static_cast<double>(correct) / static_cast<double>(mu_q.dim(0)));
  }

  report.mean_aa = exact_mean(report.per_run_aa);
  std::vector<double> sq(report.per_run_aa.size());
  for (std::size_t i = 0; i < sq.size(); ++i) {
    const double dlt = report.per_run_aa[i] - report.mean_aa;
    sq[i] = dlt * dlt;
  }
  report.std_aa = std::sqrt(exact_mean(sq));

  for (int r = 0; r < spec.ways; ++r) {
    std::vector<double> row(static_cast<std::size_t>(spec.ways));
    for (int c = 0; c < spec.ways; ++c) row[static_cast<std::size_t>(c)] = counts.at(r, c);
    const double total = exact_sum(row);
    if (total > 0.0) {
      for (int c = 0; c < spec.ways; ++c) report.confusion.at(r, c) = counts.at(r, c) / total;
    }
  }
  return report;
}

EvalReport evaluate(const EncoderModel& model, const LabeledDataset& ds, const EpisodeSpec& spec,
                    int n_runs, std::uint64_t seed) {
  EncodeFn fn = [&model](const Tensor& batch) { return model.encode_batch(batch); };
  return evaluate_with(fn, ds, spec, n_runs, seed);
}

std::vector<double> confusion_row_report(const EvalReport& report) {
  const int k = report.confusion.dim(0);
  std::vector<double> diag(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) diag[static_cast<std::size_t>(i)] = report.confusion.at(i, i);
  return diag;
}

GaussianSummary summarize_rows(const Tensor& rows) {
  require(rows.ndim() == 2, "summarize_rows: expected (N,d), got " + rows.shape_str());
  const int n = rows.dim(0);
  const int d = rows.dim(1);
  require(n >= 1, "summarize_rows: empty set");

  GaussianSummary out;
  out.mean.resize(static_cast<std::size_t>(d));
  std::vector<double> col(static_cast<std::size_t>(n));
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = rows.at(i, j);
    out.mean[static_cast<std::size_t>(j)] = exact_mean(col);
  }

  out.cov = Tensor({d, d});
  if (n >= 2) {
    std::vector<double> prod(static_cast<std::size_t>(n));
    for (int a = 0; a < d; ++a) {
      for (int b = a; b < d; ++b) {
        for (int i = 0; i < n; ++i) {
          prod[static_cast<std::size_t>(i)] =
              (rows.at(i, a) - out.mean[static_cast<std::size_t>(a)]) *
              (rows.at(i, b) - out.mean[static_cast<std::size_t>(b)]);
        }
        const double c = exact_sum(prod) / static_cast<double>(n - 1);
        out.cov.at(a, b) = c;
        out.cov.at(b, a) = c;
      }
    }
  }
  if (n <= d) {
    for (int a = 0; a < d; ++a) out.cov.at(a, a) += 1e-6;
  }
  return out;
}

namespace {

// Symmetric eigendecomposition with the shared negative-eigenvalue policy:
// below -1e-6 is an error, small negatives clip to 0.
void sym_eig(const Eigen::MatrixXd& m, Eigen::MatrixXd& vecs, Eigen::VectorXd& vals,
             const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  require(solver.info() == Eigen::Success,
          std::string("frechet_distance: eigendecomposition failed for ") + what);
  vals = solver.eigenvalues();
  vecs = solver.eigenvectors();
  for (int i = 0; i < vals.size(); ++i) {
    require(vals[i] >= -1e-6, std::string("frechet_distance: ") + what +
                                  " has eigenvalue " + std::to_string(vals[i]) +
                                  " below -1e-6");
    if (vals[i] < 0.0) vals[i] = 0.0;
  }
}

}  // namespace

double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
  const int d = static_cast<int>(a.mean.size());
  require(static_cast<int>(b.mean.size()) == d, "frechet_distance: mean dimension mismatch");
  require(a.cov.ndim() == 2 && a.cov.dim(0) == d && a.cov.dim(1) == d,
          "frechet_distance: covariance a shape " + a.cov.shape_str());
  require(b.cov.ndim() == 2 && b.cov.dim(0) == d && b.cov.dim(1) == d,
          "frechet_distance: covariance b shape " + b.cov.shape_str());

  if (a.mean == b.mean && a.cov.vec() == b.cov.vec()) return 0.0;

  Eigen::MatrixXd sa(d, d), sb(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      sa(i, j) = a.cov.at(i, j);
      sb(i, j) = b.cov.at(i, j);
    }
  }
  require((sa - sa.transpose()).cwiseAbs().maxCoeff() <= 1e-12,
          "frechet_distance: covariance a not symmetric");
  require((sb - sb.transpose()).cwiseAbs().maxCoeff() <= 1e-12,
          "frechet_distance: covariance b not symmetric");

  Eigen::MatrixXd vecs;
  Eigen::VectorXd vals;
  sym_eig(sa, vecs, vals, "covariance a");
  Eigen::MatrixXd root_a =
      vecs * vals.cwiseSqrt().asDiagonal() * vecs.transpose();

  Eigen::MatrixXd inner = root_a * sb * root_a;
  inner = 0.5 * (inner + inner.transpose());  // symmetrize roundoff
  Eigen::MatrixXd ivecs;
  Eigen::VectorXd ivals;
  sym_eig(inner, ivecs, ivals, "sqrt(a)*b*sqrt(a)");

  double mean_term = 0.0;
  for (int i = 0; i < d; ++i) {
    const double diff = a.mean[static_cast<std::size_t>(i)] - b.mean[static_cast<std::size_t>(i)];
    mean_term += diff * diff;
  }
  double fd = mean_term + sa.trace() + sb.trace() - 2.0 * ivals.cwiseSqrt().sum();
  require(fd >= -1e-8, "frechet_distance: result " + std::to_string(fd) + " below -1e-8");
  if (fd < 0.0) fd = 0.0;
  return fd;
}

double embedding_fid(const EncoderModel& model, const std::vector<Tensor>& real_images,
                     const std::vector<Tensor>& generated_images) {
  require(!real_images.empty() && !generated_images.empty(), "embedding_fid: empty image set");
  auto [mu_r, ls_r] = model.encode_batch(stack_images(real_images));
  auto [mu_g, ls_g] = model.encode_batch(stack_images(generated_images));
  (void)ls_r;
  (void)ls_g;
  return frechet_distance(summarize_rows(mu_r), summarize_rows(mu_g));
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["mean_aa"] = report.mean_aa;
  j["std_aa"] = report.std_aa;
  j["runs"] = report.per_run_aa;
  const int k = report.confusion.dim(0);
  nlohmann::json conf = nlohmann::json::array();
  for (int r = 0; r < k; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < k; ++c) row.push_back(report.confusion.at(r, c));
    conf.push_back(row);
  }
  j["confusion"] = conf;
  j["per_class_acc"] = confusion_row_report(report);
  j["spec"] = {{"ways", report.spec.ways},
               {"n_shot", report.spec.n_shot},
               {"n_query", report.spec.n_query},
               {"seed", report.spec.seed},
               {"n_runs", report.n_runs}};
  return j.dump(2);
}

void write_report_json(const std::string& path, const EvalReport& report) {
  std::ofstream os(path, std::ios::binary);
  require_io(static_cast<bool>(os), "cannot open for write: " + path);
  os << report_to_json(report) << "\n";
  os.flush();
  require_io(static_cast<bool>(os), "write failed: " + path);
}

void write_confusion_csv(const std::string& path, const EvalReport& report) {
  std::ofstream os(path, std::ios::binary);
  require_io(static_cast<bool>(os), "cannot open for write: " + path);
  os.precision(17);
  const int k = report.confusion.dim(0);
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c < k; ++c) {
      if (c) os << ",";
      os << report.confusion.at(r, c);
    }
    os << "\n";
  }
  os.flush();
  require_io(static_cast<bool>(os), "write failed: " + path);
}

}  // namespace bhfa
