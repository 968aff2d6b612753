#include "bhfa/losses.hpp"

#include <cmath>

#include "bhfa/errors.hpp"

namespace bhfa {

void LossConfig::validate() const {
  require(tau > 0.0, "LossConfig: tau must be positive");
  require(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0,
          "LossConfig: term weights must be nonnegative");
  const bool any = (enable_bhs && lambda1 > 0.0) || (enable_cce && lambda2 > 0.0) ||
                   (enable_rec && lambda3 > 0.0);
  require(any, "LossConfig: at least one enabled term must have positive weight");
}

void apply_loss_preset(const std::string& name, LossConfig& cfg) {
  if (name == "benchmark") {
    cfg.lambda1 = 0.7;
    cfg.lambda2 = 0.3;
    cfg.lambda3 = 1.0;
  } else if (name == "disaster") {
    cfg.lambda1 = 1.0;
    cfg.lambda2 = 0.5;
    cfg.lambda3 = 1.0;
  } else {
    throw ConfigError("unknown loss preset '" + name + "' (expected benchmark or disaster)");
  }
}

ScoreMatrix score_queries(const std::vector<DiagGaussian>& queries,
                          const std::vector<DiagGaussian>& prototypes, const LossConfig& cfg) {
  cfg.validate();
  const int q = static_cast<int>(queries.size());
  const int k = static_cast<int>(prototypes.size());
  require(q >= 1, "score_queries: need at least one query");
  require(k >= 2, "score_queries: need at least two prototypes");
  const int d = prototypes.front().dim();
  for (const DiagGaussian& g : prototypes)
    require(g.dim() == d, "score_queries: prototype dimension mismatch");
  for (const DiagGaussian& g : queries)
    require(g.dim() == d, "score_queries: query dimension mismatch");

  ScoreMatrix out;
  out.affinity = Tensor({q, k});
  out.logits = Tensor({q, k});
  out.probabilities = Tensor({q, k});
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < k; ++j) {
      const double s = bhattacharyya_coefficient(queries[static_cast<std::size_t>(i)],
                                                 prototypes[static_cast<std::size_t>(j)]);
      out.affinity.at(i, j) = s;
      out.logits.at(i, j) = s * (1.0 - 0.5 * s) / cfg.tau;
    }
  for (int i = 0; i < q; ++i) {
    double mx = out.logits.at(i, 0);
    for (int j = 1; j < k; ++j) mx = std::max(mx, out.logits.at(i, j));
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(out.logits.at(i, j) - mx);
    for (int j = 0; j < k; ++j)
      out.probabilities.at(i, j) = std::exp(out.logits.at(i, j) - mx) / z;
  }
  return out;
}

namespace {

double mean_nll(const Tensor& probabilities, const std::vector<int>& labels) {
  require(probabilities.ndim() == 2, "loss: probabilities must be a matrix");
  const int q = probabilities.dim(0), k = probabilities.dim(1);
  require(static_cast<int>(labels.size()) == q, "loss: one label per query required");
  double acc = 0.0;
  for (int i = 0; i < q; ++i) {
    require(labels[static_cast<std::size_t>(i)] >= 0 && labels[static_cast<std::size_t>(i)] < k,
            "loss: label out of range");
    acc -= std::log(probabilities.at(i, labels[static_cast<std::size_t>(i)]));
  }
  return acc / q;
}

}  // namespace

double bhs_loss(const ScoreMatrix& scores, const std::vector<int>& labels) {
  return mean_nll(scores.probabilities, labels);
}

double cce_loss(const ScoreMatrix& scores, const std::vector<int>& labels) {
  return mean_nll(scores.probabilities, labels);
}

double rec_loss(const Tensor& original, const Tensor& reconstructed) {
  require(original.same_shape(reconstructed),
          "rec_loss: shape mismatch " + original.shape_str() + " vs " + reconstructed.shape_str());
  double acc = 0.0;
  for (std::size_t i = 0; i < original.numel(); ++i)
    acc += std::abs(original[i] - reconstructed[i]);
  return acc / static_cast<double>(original.numel());
}

double total_loss(double bhs, double cce, double rec, const LossConfig& cfg) {
  double total = 0.0;
  if (cfg.enable_bhs) total += cfg.lambda1 * bhs;
  if (cfg.enable_cce) total += cfg.lambda2 * cce;
  if (cfg.enable_rec) total += cfg.lambda3 * rec;
  return total;
}

std::vector<int> argmax_rows(const Tensor& matrix) {
  require(matrix.ndim() == 2, "argmax_rows: need a matrix");
  std::vector<int> out(static_cast<std::size_t>(matrix.dim(0)));
  for (int i = 0; i < matrix.dim(0); ++i) {
    int best = 0;
    for (int j = 1; j < matrix.dim(1); ++j)
      if (matrix.at(i, j) > matrix.at(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace bhfa
