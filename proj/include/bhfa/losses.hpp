#pragma once

#include <string>
#include <vector>

#include "bhfa/distributions.hpp"
#include "bhfa/tensor.hpp"

namespace bhfa {

// Temperature and term weights of the combined training loss. Defaults are
// the benchmark triple; apply_loss_preset switches the named triples.
struct LossConfig {
  double tau = 0.01;
  double lambda1 = 0.7;  // affinity-softmax term
  double lambda2 = 0.3;  // cross-entropy term
  double lambda3 = 1.0;  // reconstruction term
  bool enable_bhs = true;
  bool enable_cce = true;
  bool enable_rec = true;

  void validate() const;
};

// "benchmark" -> (0.7, 0.3, 1.0); "disaster" -> (1.0, 0.5, 1.0).
void apply_loss_preset(const std::string& name, LossConfig& cfg);

// Query-vs-prototype scores. affinity holds the raw overlap coefficients in
// (0,1]; logits are s*(1 - 0.5*s)/tau; probabilities are the row softmax.
struct ScoreMatrix {
  Tensor affinity;       // (n_query, k)
  Tensor logits;         // (n_query, k)
  Tensor probabilities;  // (n_query, k), rows sum to 1
};

ScoreMatrix score_queries(const std::vector<DiagGaussian>& queries,
                          const std::vector<DiagGaussian>& prototypes, const LossConfig& cfg);

// Mean over queries of -ln(probability of the true class).
double bhs_loss(const ScoreMatrix& scores, const std::vector<int>& labels);

// One-hot categorical cross-entropy over the same probabilities; coincides
// with bhs_loss by construction (single scoring path, no extra head).
double cce_loss(const ScoreMatrix& scores, const std::vector<int>& labels);

// Mean absolute difference over all elements (resolution-independent).
double rec_loss(const Tensor& original, const Tensor& reconstructed);

// lambda1*bhs + lambda2*cce + lambda3*rec with disabled terms contributing 0.
double total_loss(double bhs, double cce, double rec, const LossConfig& cfg);

// Row index of the largest probability, lowest index on ties.
std::vector<int> argmax_rows(const Tensor& matrix);

}  // namespace bhfa
