#include "nlab/lossmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>

#include "nlab/errors.hpp"

namespace nlab {

std::vector<double> normalize_losses(const std::vector<double>& raw) {
  if (raw.empty()) throw InsufficientDataError("no losses to normalize");
  double lo = raw[0], hi = raw[0];
  for (double x : raw) {
    if (!std::isfinite(x)) throw NumericError("non-finite loss");
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  std::vector<double> out(raw.size());
  if (hi > lo) {
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - lo) / (hi - lo);
  } else {
    std::fill(out.begin(), out.end(), 0.5);
  }
  return out;
}

namespace {

constexpr double kVarFloor = 1e-4;

double log_normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * M_PI * var) + d * d / var);
}

double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct GmmParams {
  double mean[2], var[2], weight[2];
};

double gmm_loglik(const GmmParams& p, const std::vector<double>& x) {
  double ll = 0.0;
  for (double xi : x) {
    const double a = std::log(p.weight[0]) + log_normal_pdf(xi, p.mean[0], p.var[0]);
    const double b = std::log(p.weight[1]) + log_normal_pdf(xi, p.mean[1], p.var[1]);
    ll += log_sum_exp(a, b);
  }
  return ll;
}

// Deterministic percentile-split initialization: lower half of the sorted
// sample seeds component 0.
template <class Params, class SubFit>
Params median_split_init(const std::vector<double>& x, SubFit&& sub) {
  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t half = sorted.size() / 2;
  Params p;
  sub(sorted.data(), half, 0, p);
  sub(sorted.data() + half, sorted.size() - half, 1, p);
  p.weight[0] = p.weight[1] = 0.5;
  return p;
}

void moments(const double* x, std::size_t n, double& mean, double& var) {
  mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<double>(n);
  var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<double>(n);
}

}  // namespace

GmmFit2 fit_gmm2(const std::vector<double>& values, int max_iter, double tol) {
  if (values.size() < 10)
    throw InsufficientDataError("GMM fit needs at least 10 samples");
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError("non-finite value in GMM fit");

  GmmParams p = median_split_init<GmmParams>(
      values, [](const double* xs, std::size_t n, int k, GmmParams& q) {
        double m, v;
        moments(xs, n, m, v);
        q.mean[k] = m;
        q.var[k] = std::max(v, kVarFloor);
      });

  const std::size_t n = values.size();
  std::vector<double> resp(n);
  GmmFit2 fit;
  double ll = gmm_loglik(p, values);

  for (int it = 0; it < max_iter; ++it) {
    // E-step: responsibility of component 0.
    for (std::size_t i = 0; i < n; ++i) {
      const double a = std::log(p.weight[0]) + log_normal_pdf(values[i], p.mean[0], p.var[0]);
      const double b = std::log(p.weight[1]) + log_normal_pdf(values[i], p.mean[1], p.var[1]);
      resp[i] = std::exp(a - log_sum_exp(a, b));
    }
    // M-step.
    GmmParams next = p;
    for (int k = 0; k < 2; ++k) {
      double rk = 0.0, mk = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = k == 0 ? resp[i] : 1.0 - resp[i];
        rk += r;
        mk += r * values[i];
      }
      if (rk < 1e-12) continue;  // empty component keeps its parameters
      mk /= rk;
      double vk = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = k == 0 ? resp[i] : 1.0 - resp[i];
        vk += r * (values[i] - mk) * (values[i] - mk);
      }
      vk /= rk;
      next.mean[k] = mk;
      next.var[k] = std::max(vk, kVarFloor);
      next.weight[k] = std::clamp(rk / static_cast<double>(n), 1e-8, 1.0 - 1e-8);
    }
    const double wsum = next.weight[0] + next.weight[1];
    next.weight[0] /= wsum;
    next.weight[1] /= wsum;

    const double next_ll = gmm_loglik(next, values);
    if (next_ll < ll) {
      // The variance floor / weight clamps can in principle break the EM
      // ascent guarantee; keep the better iterate and stop.
      fit.converged = true;
      break;
    }
    p = next;
    fit.iterations = it + 1;
    fit.ll_trace.push_back(next_ll);
    if (next_ll - ll < tol) {
      fit.converged = true;
      ll = next_ll;
      break;
    }
    ll = next_ll;
  }

  if (p.mean[0] > p.mean[1]) {
    std::swap(p.mean[0], p.mean[1]);
    std::swap(p.var[0], p.var[1]);
    std::swap(p.weight[0], p.weight[1]);
  }
  fit.mean[0] = p.mean[0];
  fit.mean[1] = p.mean[1];
  fit.var[0] = p.var[0];
  fit.var[1] = p.var[1];
  fit.weight[0] = p.weight[0];
  fit.weight[1] = p.weight[1];
  return fit;
}

std::vector<double> gmm_posterior(const GmmFit2& fit, const std::vector<double>& values) {
  std::vector<double> w(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double a = std::log(fit.weight[0]) + log_normal_pdf(values[i], fit.mean[0], fit.var[0]);
    const double b = std::log(fit.weight[1]) + log_normal_pdf(values[i], fit.mean[1], fit.var[1]);
    w[i] = std::exp(a - log_sum_exp(a, b));
  }
  return w;
}

namespace {

struct BmmParams {
  double alpha[2], beta[2], weight[2];
  double mean(int k) const { return alpha[k] / (alpha[k] + beta[k]); }
};

double log_beta_pdf(double x, double a, double b) {
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log(1.0 - x) + std::lgamma(a + b) -
         std::lgamma(a) - std::lgamma(b);
}

double bmm_loglik(const BmmParams& p, const std::vector<double>& x) {
  double ll = 0.0;
  for (double xi : x) {
    const double a = std::log(p.weight[0]) + log_beta_pdf(xi, p.alpha[0], p.beta[0]);
    const double b = std::log(p.weight[1]) + log_beta_pdf(xi, p.alpha[1], p.beta[1]);
    ll += log_sum_exp(a, b);
  }
  return ll;
}

// Weighted method-of-moments for one Beta component.
void beta_from_moments(double mean, double var, double& a, double& b) {
  mean = std::clamp(mean, 1e-4, 1.0 - 1e-4);
  var = std::max(var, 1e-6);
  double common = mean * (1.0 - mean) / var - 1.0;
  common = std::clamp(common, 1e-2, 1e6);
  a = std::clamp(mean * common, 1e-2, 1e4);
  b = std::clamp((1.0 - mean) * common, 1e-2, 1e4);
}

constexpr double kBetaClip = 1e-4;

}  // namespace

BmmFit2 fit_bmm2(const std::vector<double>& values, int max_iter, double tol) {
  if (values.size() < 10)
    throw InsufficientDataError("BMM fit needs at least 10 samples");
  std::vector<double> x(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw NumericError("non-finite value in BMM fit");
    x[i] = std::clamp(values[i], kBetaClip, 1.0 - kBetaClip);
  }

  BmmParams p = median_split_init<BmmParams>(
      x, [](const double* xs, std::size_t n, int k, BmmParams& q) {
        double m, v;
        moments(xs, n, m, v);
        beta_from_moments(m, v, q.alpha[k], q.beta[k]);
      });

  const std::size_t n = x.size();
  std::vector<double> resp(n);
  BmmFit2 fit;
  double ll = bmm_loglik(p, x);

  for (int it = 0; it < max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      const double a = std::log(p.weight[0]) + log_beta_pdf(x[i], p.alpha[0], p.beta[0]);
      const double b = std::log(p.weight[1]) + log_beta_pdf(x[i], p.alpha[1], p.beta[1]);
      resp[i] = std::exp(a - log_sum_exp(a, b));
    }
    BmmParams next = p;
    for (int k = 0; k < 2; ++k) {
      double rk = 0.0, mk = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = k == 0 ? resp[i] : 1.0 - resp[i];
        rk += r;
        mk += r * x[i];
      }
      if (rk < 1e-12) continue;
      mk /= rk;
      double vk = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = k == 0 ? resp[i] : 1.0 - resp[i];
        vk += r * (x[i] - mk) * (x[i] - mk);
      }
      vk /= rk;
      beta_from_moments(mk, vk, next.alpha[k], next.beta[k]);
      next.weight[k] = std::clamp(rk / static_cast<double>(n), 1e-8, 1.0 - 1e-8);
    }
    const double wsum = next.weight[0] + next.weight[1];
    next.weight[0] /= wsum;
    next.weight[1] /= wsum;

    const double next_ll = bmm_loglik(next, x);
    if (next_ll < ll) {
      // Method-of-moments M-steps do not guarantee ascent; keep the better
      // iterate and stop.
      fit.converged = true;
      break;
    }
    p = next;
    fit.iterations = it + 1;
    fit.ll_trace.push_back(next_ll);
    if (next_ll - ll < tol) {
      fit.converged = true;
      ll = next_ll;
      break;
    }
    ll = next_ll;
  }

  if (p.mean(0) > p.mean(1)) {
    std::swap(p.alpha[0], p.alpha[1]);
    std::swap(p.beta[0], p.beta[1]);
    std::swap(p.weight[0], p.weight[1]);
  }
  fit.alpha[0] = p.alpha[0];
  fit.alpha[1] = p.alpha[1];
  fit.beta[0] = p.beta[0];
  fit.beta[1] = p.beta[1];
  fit.weight[0] = p.weight[0];
  fit.weight[1] = p.weight[1];
  return fit;
}

std::vector<double> bmm_posterior(const BmmFit2& fit, const std::vector<double>& values) {
  std::vector<double> w(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double xi = std::clamp(values[i], kBetaClip, 1.0 - kBetaClip);
    const double a = std::log(fit.weight[0]) + log_beta_pdf(xi, fit.alpha[0], fit.beta[0]);
    const double b = std::log(fit.weight[1]) + log_beta_pdf(xi, fit.alpha[1], fit.beta[1]);
    w[i] = std::exp(a - log_sum_exp(a, b));
  }
  return w;
}

SplitResult co_divide(const std::vector<double>& w, double tau) {
  if (tau <= 0.0 || tau >= 1.0) throw ConfigError("tau must be in (0,1)");
  SplitResult s;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] >= tau) {
      s.labeled.push_back(static_cast<int>(i));
      s.labeled_w.push_back(w[i]);
    } else {
      s.unlabeled.push_back(static_cast<int>(i));
    }
  }
  return s;
}

double separation_auc(const std::vector<double>& losses,
                      const std::vector<std::uint8_t>& flip_mask) {
  if (losses.size() != flip_mask.size()) throw ConfigError("loss/mask size mismatch");
  std::size_t n_clean = 0, n_noisy = 0;
  for (std::uint8_t f : flip_mask) (f ? n_noisy : n_clean)++;
  if (n_clean == 0 || n_noisy == 0)
    throw DiagnosticError("separation AUC needs both clean and noisy samples");

  // Mann-Whitney with midranks.
  std::vector<std::size_t> order(losses.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return losses[a] < losses[b]; });

  double noisy_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && losses[order[j + 1]] == losses[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k)
      if (flip_mask[order[k]]) noisy_rank_sum += midrank;
    i = j + 1;
  }
  const double u = noisy_rank_sum - static_cast<double>(n_noisy) *
                                        (static_cast<double>(n_noisy) + 1.0) / 2.0;
  return u / (static_cast<double>(n_clean) * static_cast<double>(n_noisy));
}

LossHistogram loss_histogram(const std::vector<double>& normalized,
                             const std::vector<std::uint8_t>& flip_mask, int bins) {
  if (bins < 1) throw ConfigError("need at least one histogram bin");
  if (normalized.size() != flip_mask.size()) throw ConfigError("loss/mask size mismatch");
  LossHistogram h;
  h.bin_left.resize(bins);
  h.clean_count.assign(bins, 0);
  h.noisy_count.assign(bins, 0);
  for (int b = 0; b < bins; ++b) h.bin_left[b] = static_cast<double>(b) / bins;
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    int b = static_cast<int>(normalized[i] * bins);
    b = std::clamp(b, 0, bins - 1);
    if (flip_mask[i])
      ++h.noisy_count[b];
    else
      ++h.clean_count[b];
  }
  return h;
}

void write_histogram_csv(const LossHistogram& h, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write histogram: " + path);
  f << "bin_left,clean_count,noisy_count\n";
  for (std::size_t i = 0; i < h.bin_left.size(); ++i)
    f << h.bin_left[i] << "," << h.clean_count[i] << "," << h.noisy_count[i] << "\n";
  if (!f) throw IoError("failed writing histogram: " + path);
}

}  // namespace nlab
