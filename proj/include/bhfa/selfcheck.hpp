#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bhfa/distributions.hpp"

namespace bhfa::selfcheck {

// ---- independent numeric oracles ----

// Recursive adaptive Simpson quadrature to the given absolute tolerance.
double adaptive_simpson(const std::function<double(double)>& f, double lo, double hi, double tol);

// Overlap integral of two 1-D Gaussians by direct quadrature of sqrt(p*q).
double bc_quadrature_1d(double mean_a, double sigma_a, double mean_b, double sigma_b,
                        double tol = 1e-11);

// Overlap integral of two 2-D axis-aligned Gaussians by nested quadrature of
// the joint integrand (no per-dimension factorization).
double bc_quadrature_2d(const DiagGaussian& a, const DiagGaussian& b, double tol = 1e-10);

// ---- finite-difference gradient audit ----

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  int checked = 0;
};

// Compares analytic gradients of the combined episode loss against central
// finite differences on a tiny model (8x8 inputs, widths {4,8}, 4 latent
// units, 2-way-1-shot). coords_per_param <= 0 sweeps every coordinate;
// positive values audit that many sampled coordinates per parameter tensor.
GradCheckResult check_micro_gradients(int coords_per_param);

// ---- runtime verification suites ----

struct SuiteOptions {
  // Test-only fault injection: biases the overlap coefficient under test so
  // the identity suite must fail.
  bool perturb_bc = false;
};

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double ms = 0.0;
};

std::vector<std::string> suite_names();
SuiteResult run_suite(const std::string& name, const SuiteOptions& opt);
std::vector<SuiteResult> run_all_suites(const SuiteOptions& opt);

}  // namespace bhfa::selfcheck
