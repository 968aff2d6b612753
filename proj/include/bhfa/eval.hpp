#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bhfa/encoder.hpp"
#include "bhfa/episodes.hpp"

namespace bhfa {

// Outcome of repeated episode evaluations. confusion is row-normalized over
// local way indices (row = true way, column = predicted way); rows that never
// received a query sum to 0.
struct EvalReport {
  double mean_aa = 0.0;
  double std_aa = 0.0;
  std::vector<double> per_run_aa;
  Tensor confusion;  // (ways, ways)
  int n_runs = 0;
  EpisodeSpec spec;  // echo (seed = the base evaluation seed)
};

// Maps an image batch (N,C,H,W) to latent (mu, log_std), each (N,d).
using EncodeFn = std::function<std::pair<Tensor, Tensor>(const Tensor&)>;

// One episode per run: encode the support, aggregate per-way prototypes,
// encode and classify the queries by argmax score (ties to the lowest way
// index). Run r samples with seed derive(seed, eval-run, r). No noise is
// drawn and nothing is mutated.
EvalReport evaluate_with(const EncodeFn& encode, const LabeledDataset& ds, const EpisodeSpec& spec,
                         int n_runs, std::uint64_t seed);
EvalReport evaluate(const EncoderModel& model, const LabeledDataset& ds, const EpisodeSpec& spec,
                    int n_runs, std::uint64_t seed);

// Diagonal of the row-normalized confusion matrix.
std::vector<double> confusion_row_report(const EvalReport& report);

// First and second moments of a set of embedding vectors.
struct GaussianSummary {
  std::vector<double> mean;
  Tensor cov;  // (d,d), symmetric
};

// Sample mean and covariance (ddof 1) of the rows of an (N,d) matrix; adds
// 1e-6 I when N <= d so tiny sets stay well defined.
GaussianSummary summarize_rows(const Tensor& rows);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2*sqrt(Sa*Sb)), the matrix square root
// taken through the symmetric form sqrt(Sa)*Sb*sqrt(Sa). Eigenvalues below
// -1e-6 and totals below -1e-8 are errors; small negatives clip to zero.
// Bitwise-identical summaries return exactly 0.
double frechet_distance(const GaussianSummary& a, const GaussianSummary& b);

// Distance between the encoder-mean summaries of two image sets (means only,
// no sampling noise).
double embedding_fid(const EncoderModel& model, const std::vector<Tensor>& real_images,
                     const std::vector<Tensor>& generated_images);

std::string report_to_json(const EvalReport& report);
void write_report_json(const std::string& path, const EvalReport& report);
void write_confusion_csv(const std::string& path, const EvalReport& report);

// Stacks (C,H,W) images into an (N,C,H,W) batch.
Tensor stack_images(const std::vector<Tensor>& images);

}  // namespace bhfa
