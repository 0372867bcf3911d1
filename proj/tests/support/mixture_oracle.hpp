#pragma once

// Grid-search maximum-likelihood oracles for 2-component mixtures. These are
// deliberately brute force and independent of the EM implementation they
// check: they scan a parameter grid and return the highest-likelihood cell.

#include <cmath>
#include <vector>

namespace nlab::testutil {

struct MixtureOracle {
  double mean0 = 0.0;
  double mean1 = 0.0;
  double loglik = -1e300;
};

// Gaussian mixture with a shared std-dev grid: mu in {0, 0.02, ..., 1},
// sigma in {0.02, ..., 0.2}, pi in {0.1, ..., 0.9}.
inline MixtureOracle gmm_grid_mle(const std::vector<double>& x) {
  std::vector<double> mus;
  for (double m = 0.0; m <= 1.0 + 1e-9; m += 0.02) mus.push_back(m);
  std::vector<double> sigmas;
  for (double s = 0.02; s <= 0.20 + 1e-9; s += 0.02) sigmas.push_back(s);

  MixtureOracle best;
  const std::size_t n = x.size();
  std::vector<double> pdf(mus.size() * n);
  for (std::size_t si = 0; si < sigmas.size(); ++si) {
    const double sigma = sigmas[si];
    const double norm = 1.0 / (sigma * std::sqrt(2.0 * M_PI));
    for (std::size_t mi = 0; mi < mus.size(); ++mi) {
      for (std::size_t i = 0; i < n; ++i) {
        const double d = (x[i] - mus[mi]) / sigma;
        pdf[mi * n + i] = norm * std::exp(-0.5 * d * d);
      }
    }
    for (std::size_t a = 0; a < mus.size(); ++a) {
      for (std::size_t b = a + 1; b < mus.size(); ++b) {
        for (double pi = 0.1; pi <= 0.9 + 1e-9; pi += 0.1) {
          double ll = 0.0;
          const double* pa = pdf.data() + a * n;
          const double* pb = pdf.data() + b * n;
          for (std::size_t i = 0; i < n; ++i)
            ll += std::log(pi * pa[i] + (1.0 - pi) * pb[i] + 1e-300);
          if (ll > best.loglik) {
            best.loglik = ll;
            best.mean0 = mus[a];
            best.mean1 = mus[b];
          }
        }
      }
    }
  }
  return best;
}

// Beta mixture parameterized by (mean, concentration): alpha = m*s,
// beta = (1-m)*s with a shared concentration grid.
inline MixtureOracle bmm_grid_mle(const std::vector<double>& x) {
  std::vector<double> means;
  for (double m = 0.04; m <= 0.96 + 1e-9; m += 0.02) means.push_back(m);
  const double concentrations[] = {4.0, 8.0, 12.0, 16.0, 24.0, 32.0};

  MixtureOracle best;
  const std::size_t n = x.size();
  std::vector<double> pdf(means.size() * n);
  for (double s : concentrations) {
    for (std::size_t mi = 0; mi < means.size(); ++mi) {
      const double a = means[mi] * s;
      const double b = (1.0 - means[mi]) * s;
      const double lognorm = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
      for (std::size_t i = 0; i < n; ++i) {
        const double xi = std::min(std::max(x[i], 1e-6), 1.0 - 1e-6);
        pdf[mi * n + i] =
            std::exp(lognorm + (a - 1.0) * std::log(xi) + (b - 1.0) * std::log(1.0 - xi));
      }
    }
    for (std::size_t a = 0; a < means.size(); ++a) {
      for (std::size_t b = a + 1; b < means.size(); ++b) {
        for (double pi = 0.1; pi <= 0.9 + 1e-9; pi += 0.1) {
          double ll = 0.0;
          const double* pa = pdf.data() + a * n;
          const double* pb = pdf.data() + b * n;
          for (std::size_t i = 0; i < n; ++i)
            ll += std::log(pi * pa[i] + (1.0 - pi) * pb[i] + 1e-300);
          if (ll > best.loglik) {
            best.loglik = ll;
            best.mean0 = means[a];
            best.mean1 = means[b];
          }
        }
      }
    }
  }
  return best;
}

}  // namespace nlab::testutil
