#pragma once

#include "flowtwin/common.hpp"
#include "flowtwin/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

namespace flowtwin {

// Bivariate Gaussian mixture over z = (departure time [s], travel duration [min]).
template <typename S>
struct GaussianMixture2 {
  std::vector<S> weights;
  std::vector<Vec2<S>> means;
  std::vector<Mat2<S>> covariances;

  std::size_t size() const { return weights.size(); }

  S log_density(const Vec2<S>& z) const {
    S best = -std::numeric_limits<S>::infinity();
    std::vector<S> terms(size());
    for (std::size_t k = 0; k < size(); ++k) {
      terms[k] = std::log(weights[k]) + gaussian_log_density(z, means[k], covariances[k]);
      best = std::max(best, terms[k]);
    }
    if (!std::isfinite(best)) return best;
    S acc = 0;
    for (S t : terms) acc += std::exp(t - best);
    return best + std::log(acc);
  }

  Vec2<S> sample(Rng& rng) const {
    S u = static_cast<S>(rng.uniform());
    std::size_t k = 0;
    for (; k + 1 < size(); ++k) {
      if (u < weights[k]) break;
      u -= weights[k];
    }
    const Eigen::LLT<Mat2<S>> llt(covariances[k]);
    const Vec2<S> n(static_cast<S>(rng.normal()), static_cast<S>(rng.normal()));
    return means[k] + llt.matrixL() * n;
  }

  static S gaussian_log_density(const Vec2<S>& z, const Vec2<S>& mu, const Mat2<S>& cov) {
    const S det = cov.determinant();
    const Vec2<S> d = z - mu;
    // Closed-form 2x2 inverse quadratic form.
    const S q = (cov(1, 1) * d.x() * d.x() - 2 * cov(0, 1) * d.x() * d.y() + cov(0, 0) * d.y() * d.y()) / det;
    return -std::log(S(2) * std::numbers::pi_v<S>) - S(0.5) * std::log(det) - S(0.5) * q;
  }
};

using GaussianMixture2d = GaussianMixture2<double>;

struct EmOptions {
  int max_iterations = 200;
  double tolerance = 1e-6;  // on mean per-sample log-likelihood
  double covariance_floor = 1e-4;
};

template <typename S>
struct EmResult {
  GaussianMixture2<S> mixture;
  // Mean per-sample log-likelihood, one entry per E-step, in order.
  std::vector<S> log_likelihood;
  int iterations = 0;
  bool converged = false;
};

// Symmetrizes and clamps eigenvalues from below.
template <typename S>
Mat2<S> floor_covariance(const Mat2<S>& cov, S floor) {
  const Mat2<S> sym = S(0.5) * (cov + cov.transpose());
  const Eigen::SelfAdjointEigenSolver<Mat2<S>> es(sym);
  Vec2<S> ev = es.eigenvalues();
  if (ev.minCoeff() >= floor) return sym;
  ev = ev.cwiseMax(floor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

namespace detail {

// k-means++ seeding on standardized coordinates. May return fewer than k
// centers when the data has fewer distinct points.
template <typename S>
std::vector<std::size_t> kmeanspp(std::span<const Vec2<S>> z, std::size_t k, Rng& rng) {
  const std::size_t n = z.size();
  std::vector<std::size_t> centers;
  centers.push_back(static_cast<std::size_t>(rng.below(n)));
  std::vector<S> d2(n, std::numeric_limits<S>::infinity());
  while (centers.size() < k) {
    const auto& c = z[centers.back()];
    S total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (z[i] - c).squaredNorm());
      total += d2[i];
    }
    if (!(total > 0)) break;
    S u = static_cast<S>(rng.uniform()) * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (u < d2[i]) {
        pick = i;
        break;
      }
      u -= d2[i];
    }
    centers.push_back(pick);
  }
  return centers;
}

}  // namespace detail

// Expectation-maximization for a 2D Gaussian mixture. Initialization is a
// hard assignment to k-means++ centers; k is reduced to the sample count.
template <typename S>
EmResult<S> fit_gmm(std::span<const Vec2<S>> samples, std::size_t k, std::uint64_t seed, const EmOptions& opt = {}) {
  const std::size_t n = samples.size();
  if (n == 0) throw Error(ErrorCode::DegenerateData, "no samples to fit");
  if (k == 0) throw Error(ErrorCode::DegenerateData, "component count must be >= 1");
  k = std::min(k, n);
  const S floor = static_cast<S>(opt.covariance_floor);

  Vec2<S> mean = Vec2<S>::Zero();
  for (const auto& z : samples) mean += z;
  mean /= static_cast<S>(n);
  Vec2<S> scale = Vec2<S>::Zero();
  for (const auto& z : samples) scale += (z - mean).cwiseAbs2();
  scale = (scale / static_cast<S>(n)).cwiseSqrt();
  for (int i = 0; i < 2; ++i) {
    if (!(scale[i] > 0)) scale[i] = 1;
  }
  std::vector<Vec2<S>> standardized(n);
  for (std::size_t i = 0; i < n; ++i) standardized[i] = (samples[i] - mean).cwiseQuotient(scale);

  Rng rng(seed);
  const auto centers = detail::kmeanspp<S>(standardized, k, rng);
  k = centers.size();

  std::vector<std::vector<S>> resp(k, std::vector<S>(n, S(0)));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    S best_d = std::numeric_limits<S>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const S d = (standardized[i] - standardized[centers[c]]).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    resp[best][i] = 1;
  }

  EmResult<S> result;
  auto& mix = result.mixture;
  mix.weights.assign(k, S(0));
  mix.means.assign(k, Vec2<S>::Zero());
  mix.covariances.assign(k, Mat2<S>::Identity());

  auto m_step = [&] {
    for (std::size_t c = 0; c < k; ++c) {
      S nk = 0;
      Vec2<S> mu = Vec2<S>::Zero();
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[c][i];
        mu += resp[c][i] * samples[i];
      }
      if (nk < S(1e-12)) {
        // Collapsed component keeps its parameters with vanishing weight.
        mix.weights[c] = 0;
        continue;
      }
      mu /= nk;
      Mat2<S> cov = Mat2<S>::Zero();
      for (std::size_t i = 0; i < n; ++i) {
        const Vec2<S> d = samples[i] - mu;
        cov += resp[c][i] * d * d.transpose();
      }
      mix.weights[c] = nk / static_cast<S>(n);
      mix.means[c] = mu;
      mix.covariances[c] = floor_covariance<S>(cov / nk, floor);
    }
    S total = 0;
    for (S w : mix.weights) total += w;
    for (S& w : mix.weights) w /= total;
  };

  // Returns mean log-likelihood and fills responsibilities.
  auto e_step = [&] {
    S ll = 0;
    std::vector<S> terms(k);
    for (std::size_t i = 0; i < n; ++i) {
      S best = -std::numeric_limits<S>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        terms[c] = mix.weights[c] > 0
                       ? std::log(mix.weights[c]) +
                             GaussianMixture2<S>::gaussian_log_density(samples[i], mix.means[c], mix.covariances[c])
                       : -std::numeric_limits<S>::infinity();
        best = std::max(best, terms[c]);
      }
      S acc = 0;
      for (std::size_t c = 0; c < k; ++c) acc += std::exp(terms[c] - best);
      const S lse = best + std::log(acc);
      ll += lse;
      for (std::size_t c = 0; c < k; ++c) resp[c][i] = std::exp(terms[c] - lse);
    }
    return ll / static_cast<S>(n);
  };

  m_step();
  for (int it = 0; it < opt.max_iterations; ++it) {
    const S ll = e_step();
    result.log_likelihood.push_back(ll);
    result.iterations = it + 1;
    const std::size_t t = result.log_likelihood.size();
    if (t >= 2 && ll - result.log_likelihood[t - 2] < static_cast<S>(opt.tolerance)) {
      result.converged = true;
      break;
    }
    m_step();
  }
  return result;
}

}  // namespace flowtwin
