#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>

#include <Eigen/Core>

namespace wordorder::mcmc {

/// Split potential scale reduction factor. `draws` is iterations x chains;
/// each chain is cut in half so within-chain drift also inflates R-hat.
template <class Derived>
double split_rhat(const Eigen::MatrixBase<Derived>& draws) {
  const Eigen::Index half = draws.rows() / 2;
  const Eigen::Index chains = draws.cols();
  if (half < 2 || chains < 1) return std::numeric_limits<double>::quiet_NaN();
  Eigen::MatrixXd split(half, 2 * chains);
  for (Eigen::Index c = 0; c < chains; ++c) {
    split.col(2 * c) = draws.col(c).head(half);
    split.col(2 * c + 1) = draws.col(c).tail(half);
  }
  const double n = static_cast<double>(half);
  const Eigen::RowVectorXd means = split.colwise().mean();
  const double w = (split.rowwise() - means).array().square().colwise().sum().mean() / (n - 1.0);
  const double grand = means.mean();
  const double b = n * (means.array() - grand).square().sum() / static_cast<double>(split.cols() - 1);
  if (w <= 0.0) return b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

/// Bulk effective sample size over split chains, with autocorrelations
/// combined across chains and truncated by Geyer's initial monotone
/// sequence. `draws` is iterations x chains.
double effective_sample_size(const Eigen::Ref<const Eigen::MatrixXd>& draws);

/// Log density and its gradient at theta.
using LogDensity = std::function<double(const Eigen::VectorXd& theta, Eigen::VectorXd& grad)>;

struct NutsOptions {
  int warmup = 1000;
  int iterations = 1000;
  double target_accept = 0.8;
  int max_depth = 10;
  double init_radius = 2.0;
};

struct ChainResult {
  Eigen::MatrixXd draws;  // iterations x dim, unconstrained
  double step_size = 0.0;
  Eigen::VectorXd inv_metric;
  int divergences = 0;
  double mean_accept = 0.0;
};

/// No-U-turn sampler with multinomial trajectory sampling, dual-averaging
/// step size adaptation and a windowed diagonal metric.
ChainResult run_nuts(const LogDensity& log_density, Eigen::Index dim, const NutsOptions& options,
                     std::uint64_t seed);

}  // namespace wordorder::mcmc
