#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "wordorder/consistency.hpp"
#include "wordorder/error.hpp"

namespace wordorder {

/// Thrown by fit() callers that require convergence; fit() itself reports
/// through PosteriorDraws::converged.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RowMismatchError : public DataError {
 public:
  using DataError::DataError;
};

struct Standardization {
  double mean = 0.0;
  double sd = 1.0;
  double apply(double raw) const { return (raw - mean) / sd; }
  double invert(double z) const { return z * sd + mean; }
};

/// z-scores with the n-1 sample SD. Fewer than two distinct values is a
/// DataError.
Eigen::VectorXd zscore(const Eigen::Ref<const Eigen::VectorXd>& column, Standardization* constants = nullptr);

struct DesignMatrix {
  Eigen::VectorXd pmi;     // standardized
  Eigen::VectorXd length;  // standardized
  Eigen::VectorXd raw_pmi;
  Eigen::VectorXd raw_length;
  Eigen::VectorXi task;  // index into tasks
  Eigen::VectorXd y;
  std::vector<std::string> tasks;  // sorted
  Standardization pmi_scale;
  Standardization length_scale;

  Eigen::Index rows() const { return y.size(); }
  std::uint64_t fingerprint() const;
  /// Rows by index, keeping this matrix's standardization constants.
  DesignMatrix subset(std::span<const Eigen::Index> rows) const;
};

DesignMatrix standardize(std::span<const ConsistencyRecord> records);

struct MixedModelSpec {
  bool include_length = true;
  bool random_intercepts = true;
  bool random_slopes = true;
  double fixed_prior_sd = 2.5;
  double scale_prior_sd = 1.0;  // half-normal
};

struct SamplerOptions {
  int chains = 4;
  int warmup = 1000;
  int iterations = 1000;
  std::uint64_t seed = 1;
  double target_accept = 0.9;
  int max_depth = 10;
  bool parallel = true;
  double rhat_threshold = 1.05;
  double ess_threshold = 200.0;
};

/// Draws on the constrained scale. Parameters are named
/// b_intercept, b_pmi, b_length, sd_intercept, sd_slope, r[task], s[task];
/// pooled() also resolves intercept[task] = b_intercept + r[task] and
/// slope[task] = b_pmi + s[task].
struct PosteriorDraws {
  MixedModelSpec spec;
  std::vector<std::string> tasks;
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> chains;  // iterations x names.size()
  Eigen::VectorXd rhat;
  Eigen::VectorXd ess;
  bool converged = false;
  std::string diagnostics;
  int divergences = 0;
  Eigen::Index n_rows = 0;
  std::uint64_t design_fingerprint = 0;

  static std::vector<std::string> parameter_names(const MixedModelSpec& spec, std::span<const std::string> tasks);

  std::optional<Eigen::Index> find(std::string_view name) const;
  Eigen::VectorXd pooled(std::string_view name) const;
  Eigen::MatrixXd pooled() const;
  Eigen::Index total_draws() const;
  /// Recomputes rhat, ess and the convergence flag from the chains.
  void diagnose(double rhat_threshold = 1.05, double ess_threshold = 200.0);
};

double log_posterior(const MixedModelSpec& spec, const DesignMatrix& design, const Eigen::VectorXd& theta,
                     Eigen::VectorXd* grad = nullptr);

PosteriorDraws fit(const DesignMatrix& design, const MixedModelSpec& spec, const SamplerOptions& options = {});

struct Summary {
  std::string parameter;
  double mean = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double rhat = 1.0;
  double ess = 0.0;
};

Summary summarize(const Eigen::Ref<const Eigen::VectorXd>& draws, std::string parameter = {});
Summary summarize(const PosteriorDraws& draws, std::string_view parameter);

/// Type-7 (linear interpolation) sample quantile.
double quantile(const Eigen::Ref<const Eigen::VectorXd>& draws, double prob);

struct RopeBounds {
  double lo = -0.18;
  double hi = 0.18;
};

struct RopeReport {
  std::string parameter;
  RopeBounds bounds;
  double fraction_outside = 0.0;
  bool effective = false;
};

RopeReport rope(const Eigen::Ref<const Eigen::VectorXd>& draws, std::string parameter = {},
                const RopeBounds& bounds = {}, double threshold = 0.95);
RopeReport rope(const PosteriorDraws& draws, std::string_view parameter, const RopeBounds& bounds = {},
                double threshold = 0.95);
/// Fixed effects followed by per-task intercept[...] and slope[...].
std::vector<RopeReport> rope_table(const PosteriorDraws& draws, const RopeBounds& bounds = {},
                                   double threshold = 0.95);

/// Posterior mean of P(y=1) for each row of the design.
Eigen::VectorXd posterior_predictive(const PosteriorDraws& draws, const DesignMatrix& design);

/// Log-likelihood of the design at the posterior-mean parameters.
double log_likelihood_at_mean(const PosteriorDraws& draws, const DesignMatrix& design);

struct ComparisonOptions {
  bool holdout = false;
  SamplerOptions sampler;
};

struct ModelComparison {
  double bic_with = 0.0;
  double bic_without = 0.0;
  double log_bayes_factor = 0.0;  // natural log, positive favors the length model
  std::optional<double> elpd_with;
  std::optional<double> elpd_without;
  bool favors_length = false;
};

/// Schwarz approximation to the Bayes factor between a fit that includes
/// length and one that does not. With holdout set, both specs are refitted
/// on rows i % 5 != 4 and scored by log pointwise predictive density on the
/// rest.
ModelComparison compare(const PosteriorDraws& with_length, const PosteriorDraws& without_length,
                        const DesignMatrix& design, const ComparisonOptions& options = {});

struct CurvePoint {
  double pmi = 0.0;  // raw bits
  double mean = 0.0;
  double band_low = 0.0;
  double band_high = 0.0;
};

struct TaskCurve {
  std::string task;
  double length = 0.0;  // raw, task mean
  std::vector<CurvePoint> points;
};

struct CurveOptions {
  int grid_points = 50;
  double mass = 0.95;
};

/// Fitted P(y=1) over each task's observed PMI range with length at the task
/// mean.
std::vector<TaskCurve> simulate_curves(const PosteriorDraws& draws, const DesignMatrix& design,
                                       const CurveOptions& options = {});

void write_fit_summary(std::ostream& out, const PosteriorDraws& draws);
/// One row per retained draw: chain, iteration, then every parameter.
void write_draws(std::ostream& out, const PosteriorDraws& draws);
void write_rope_report(std::ostream& out, std::span<const RopeReport> reports);
void write_curves(std::ostream& out, std::span<const TaskCurve> curves);
void write_comparison(std::ostream& out, const ModelComparison& comparison);

}  // namespace wordorder
