#pragma once

#include <string>
#include <vector>

namespace nlab {

// Per-sample loss modeling: min-max normalization, two-component Gaussian and
// Beta mixture EM fits, clean-probability posteriors, threshold splitting and
// clean/noisy separation diagnostics.

// Min-max scaling to [0,1]; constant input maps to all 0.5. Throws
// NumericError on non-finite losses.
std::vector<double> normalize_losses(const std::vector<double>& raw);

struct GmmFit2 {
  double mean[2] = {0.0, 0.0};  // mean[0] <= mean[1]; component 0 is "clean"
  double var[2] = {0.0, 0.0};
  double weight[2] = {0.5, 0.5};
  int iterations = 0;
  bool converged = false;
  std::vector<double> ll_trace;  // log-likelihood after each EM iteration
};

// EM fit of a 2-component 1D Gaussian mixture. Initialization splits the
// sorted sample at the median; variances are floored at 1e-4. An M-step that
// would lower the log-likelihood is rolled back and the fit reported
// converged, so ll_trace is non-decreasing by construction. Requires >= 10
// samples.
GmmFit2 fit_gmm2(const std::vector<double>& values, int max_iter = 10, double tol = 1e-4);

// Posterior of the low-mean component: w_i = pi0 phi0 / (pi0 phi0 + pi1 phi1).
std::vector<double> gmm_posterior(const GmmFit2& fit, const std::vector<double>& values);

struct BmmFit2 {
  double alpha[2] = {1.0, 1.0};
  double beta[2] = {1.0, 1.0};
  double weight[2] = {0.5, 0.5};
  int iterations = 0;
  bool converged = false;
  std::vector<double> ll_trace;

  double component_mean(int k) const { return alpha[k] / (alpha[k] + beta[k]); }
};

// EM fit of a 2-component Beta mixture with weighted method-of-moments
// M-steps. Values are clipped to [1e-4, 1-1e-4] internally. Same monotone
// log-likelihood guarantee and >= 10 sample requirement as the GMM fit.
BmmFit2 fit_bmm2(const std::vector<double>& values, int max_iter = 10, double tol = 1e-4);

// Posterior of the low-mean component.
std::vector<double> bmm_posterior(const BmmFit2& fit, const std::vector<double>& values);

struct SplitResult {
  std::vector<int> labeled;         // indices with w >= tau
  std::vector<double> labeled_w;    // their clean probabilities
  std::vector<int> unlabeled;       // the rest
};

// Threshold split; the boundary w == tau is labeled.
SplitResult co_divide(const std::vector<double>& w, double tau);

// Probability that a uniformly random noisy sample has higher loss than a
// uniformly random clean sample (rank-based, ties count 0.5). Throws
// DiagnosticError if either class is empty.
double separation_auc(const std::vector<double>& losses,
                      const std::vector<std::uint8_t>& flip_mask);

struct LossHistogram {
  std::vector<double> bin_left;
  std::vector<int> clean_count;
  std::vector<int> noisy_count;
};

// Histogram of normalized losses split by flip_mask, `bins` equal-width bins
// over [0,1].
LossHistogram loss_histogram(const std::vector<double>& normalized,
                             const std::vector<std::uint8_t>& flip_mask, int bins = 50);

// CSV rows: bin_left, clean_count, noisy_count.
void write_histogram_csv(const LossHistogram& h, const std::string& path);

}  // namespace nlab
