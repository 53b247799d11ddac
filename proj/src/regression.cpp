#include "wordorder/regression.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <limits>
#include <thread>

#include "wordorder/mcmc.hpp"
#include "wordorder/random.hpp"

namespace wordorder {

namespace {


double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double bernoulli_logit(double y, double eta) { return y > 0.5 ? -softplus(-eta) : -softplus(eta); }

// Offsets into the unconstrained vector.
struct Layout {
  Eigen::Index b_len = -1, log_sd_r = -1, log_sd_s = -1, z_r = -1, z_s = -1, dim = 0;
  Eigen::Index k = 0;

  Layout(const MixedModelSpec& spec, Eigen::Index tasks) : k(tasks) {
    Eigen::Index i = 2;
    if (spec.include_length) b_len = i++;
    if (spec.random_intercepts) log_sd_r = i++;
    if (spec.random_slopes) log_sd_s = i++;
    if (spec.random_intercepts) {
      z_r = i;
      i += k;
    }
    if (spec.random_slopes) {
      z_s = i;
      i += k;
    }
    dim = i;
  }
  Eigen::Index n_fixed() const { return b_len >= 0 ? 3 : 2; }
  Eigen::Index n_scales() const { return (log_sd_r >= 0) + (log_sd_s >= 0); }
};

// Constrained parameters of one draw, in PosteriorDraws::names order.
struct Coefs {
  double b0 = 0.0, b_pmi = 0.0, b_len = 0.0;
  Eigen::VectorXd r, s;

  Coefs(const MixedModelSpec& spec, Eigen::Index k, const Eigen::Ref<const Eigen::RowVectorXd>& row)
      : r(Eigen::VectorXd::Zero(k)), s(Eigen::VectorXd::Zero(k)) {
    Eigen::Index i = 0;
    b0 = row[i++];
    b_pmi = row[i++];
    if (spec.include_length) b_len = row[i++];
    if (spec.random_intercepts) ++i;
    if (spec.random_slopes) ++i;
    if (spec.random_intercepts) {
      r = row.segment(i, k).transpose();
      i += k;
    }
    if (spec.random_slopes) s = row.segment(i, k).transpose();
  }

  double eta(int task, double z_pmi, double z_len) const {
    return b0 + r[task] + (b_pmi + s[task]) * z_pmi + b_len * z_len;
  }
};

void check_spec(const MixedModelSpec& spec) {
  if (!(spec.fixed_prior_sd > 0.0) || !(spec.scale_prior_sd > 0.0))
    throw UsageError("prior scales must be positive");
}

void append_u64(std::uint64_t& h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
}

}  // namespace

Eigen::VectorXd zscore(const Eigen::Ref<const Eigen::VectorXd>& column, Standardization* constants) {
  const Eigen::Index n = column.size();
  if (n < 2) throw DataError("standardize: need at least two rows");
  const double mean = column.mean();
  const double sd = std::sqrt((column.array() - mean).square().sum() / static_cast<double>(n - 1));
  if (!(sd > 0.0) || column.maxCoeff() == column.minCoeff())
    throw DataError("standardize: predictor has zero variance");
  if (constants) *constants = {mean, sd};
  return (column.array() - mean) / sd;
}

std::uint64_t DesignMatrix::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (Eigen::Index i = 0; i < rows(); ++i) {
    append_u64(h, std::bit_cast<std::uint64_t>(raw_pmi[i]));
    append_u64(h, std::bit_cast<std::uint64_t>(raw_length[i]));
    append_u64(h, static_cast<std::uint64_t>(y[i] > 0.5));
    for (char c : tasks[static_cast<std::size_t>(task[i])]) append_u64(h, static_cast<unsigned char>(c));
  }
  return h;
}

DesignMatrix DesignMatrix::subset(std::span<const Eigen::Index> rows_wanted) const {
  DesignMatrix out;
  const auto n = static_cast<Eigen::Index>(rows_wanted.size());
  out.pmi.resize(n);
  out.length.resize(n);
  out.raw_pmi.resize(n);
  out.raw_length.resize(n);
  out.task.resize(n);
  out.y.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index i = rows_wanted[static_cast<std::size_t>(j)];
    if (i < 0 || i >= rows()) throw std::out_of_range("design subset: row out of range");
    out.pmi[j] = pmi[i];
    out.length[j] = length[i];
    out.raw_pmi[j] = raw_pmi[i];
    out.raw_length[j] = raw_length[i];
    out.task[j] = task[i];
    out.y[j] = y[i];
  }
  out.tasks = tasks;
  out.pmi_scale = pmi_scale;
  out.length_scale = length_scale;
  return out;
}

DesignMatrix standardize(std::span<const ConsistencyRecord> records) {
  if (records.empty()) throw DataError("standardize: no rows");
  DesignMatrix d;
  std::map<std::string, int> index;
  for (const auto& r : records) index.emplace(r.task, 0);
  int next = 0;
  for (auto& [name, i] : index) {
    i = next++;
    d.tasks.push_back(name);
  }
  const auto n = static_cast<Eigen::Index>(records.size());
  d.raw_pmi.resize(n);
  d.raw_length.resize(n);
  d.task.resize(n);
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    if (r.y != 0 && r.y != 1) throw DataError("standardize: y must be 0 or 1 for " + r.sample_id);
    if (!std::isfinite(r.avg_pmi_bits) || !std::isfinite(r.length))
      throw DataError("standardize: non-finite predictor for " + r.sample_id);
    d.raw_pmi[i] = r.avg_pmi_bits;
    d.raw_length[i] = r.length;
    d.task[i] = index.at(r.task);
    d.y[i] = r.y;
  }
  d.pmi = zscore(d.raw_pmi, &d.pmi_scale);
  d.length = zscore(d.raw_length, &d.length_scale);
  return d;
}

std::vector<std::string> PosteriorDraws::parameter_names(const MixedModelSpec& spec,
                                                         std::span<const std::string> tasks) {
  std::vector<std::string> names{"b_intercept", "b_pmi"};
  if (spec.include_length) names.emplace_back("b_length");
  if (spec.random_intercepts) names.emplace_back("sd_intercept");
  if (spec.random_slopes) names.emplace_back("sd_slope");
  if (spec.random_intercepts)
    for (const auto& t : tasks) names.push_back("r[" + t + "]");
  if (spec.random_slopes)
    for (const auto& t : tasks) names.push_back("s[" + t + "]");
  return names;
}

std::optional<Eigen::Index> PosteriorDraws::find(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<Eigen::Index>(i);
  return std::nullopt;
}

Eigen::Index PosteriorDraws::total_draws() const {
  Eigen::Index n = 0;
  for (const auto& c : chains) n += c.rows();
  return n;
}

Eigen::MatrixXd PosteriorDraws::pooled() const {
  Eigen::MatrixXd out(total_draws(), static_cast<Eigen::Index>(names.size()));
  Eigen::Index row = 0;
  for (const auto& c : chains) {
    out.middleRows(row, c.rows()) = c;
    row += c.rows();
  }
  return out;
}

Eigen::VectorXd PosteriorDraws::pooled(std::string_view name) const {
  auto column = [&](Eigen::Index j) {
    Eigen::VectorXd out(total_draws());
    Eigen::Index row = 0;
    for (const auto& c : chains) {
      out.segment(row, c.rows()) = c.col(j);
      row += c.rows();
    }
    return out;
  };
  if (auto j = find(name)) return column(*j);
  auto derived = [&](std::string_view prefix, const char* fixed, const char* random) -> std::optional<Eigen::VectorXd> {
    if (!name.starts_with(prefix) || !name.ends_with("]")) return std::nullopt;
    const std::string task(name.substr(prefix.size(), name.size() - prefix.size() - 1));
    Eigen::VectorXd out = column(*find(fixed));
    if (auto j = find(std::string(random) + "[" + task + "]")) {
      out += column(*j);
    } else if (std::find(tasks.begin(), tasks.end(), task) == tasks.end()) {
      return std::nullopt;
    }
    return out;
  };
  if (auto v = derived("intercept[", "b_intercept", "r")) return *v;
  if (auto v = derived("slope[", "b_pmi", "s")) return *v;
  throw std::out_of_range("unknown parameter: " + std::string(name));
}

void PosteriorDraws::diagnose(double rhat_threshold, double ess_threshold) {
  const auto p = static_cast<Eigen::Index>(names.size());
  rhat.resize(p);
  ess.resize(p);
  converged = chains.size() >= 2;
  std::string bad;
  if (chains.empty()) return;
  const Eigen::Index iters = chains.front().rows();
  Eigen::MatrixXd column(iters, static_cast<Eigen::Index>(chains.size()));
  for (Eigen::Index j = 0; j < p; ++j) {
    for (std::size_t c = 0; c < chains.size(); ++c) column.col(static_cast<Eigen::Index>(c)) = chains[c].col(j);
    rhat[j] = mcmc::split_rhat(column);
    ess[j] = mcmc::effective_sample_size(column);
    if (!(rhat[j] < rhat_threshold) || !(ess[j] >= ess_threshold)) {
      converged = false;
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s%s rhat=%.4f ess=%.1f", bad.empty() ? "" : "; ",
                    names[static_cast<std::size_t>(j)].c_str(), rhat[j], ess[j]);
      bad += buf;
    }
  }
  if (chains.size() < 2) bad = "fewer than two chains";
  diagnostics = converged ? "ok" : bad;
}

double log_posterior(const MixedModelSpec& spec, const DesignMatrix& design, const Eigen::VectorXd& theta,
                     Eigen::VectorXd* grad) {
  const auto k = static_cast<Eigen::Index>(design.tasks.size());
  const Layout L(spec, k);
  const double b0 = theta[0], b_pmi = theta[1];
  const double b_len = L.b_len >= 0 ? theta[L.b_len] : 0.0;
  const double sd_r = L.log_sd_r >= 0 ? std::exp(theta[L.log_sd_r]) : 0.0;
  const double sd_s = L.log_sd_s >= 0 ? std::exp(theta[L.log_sd_s]) : 0.0;
  Eigen::VectorXd r = Eigen::VectorXd::Zero(k), s = Eigen::VectorXd::Zero(k);
  if (L.z_r >= 0) r = sd_r * theta.segment(L.z_r, k);
  if (L.z_s >= 0) s = sd_s * theta.segment(L.z_s, k);

  const Eigen::Index n = design.rows();
  Eigen::ArrayXd eta(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int t = design.task[i];
    eta[i] = b0 + r[t] + (b_pmi + s[t]) * design.pmi[i] + b_len * design.length[i];
  }
  const Eigen::ArrayXd e = (-eta.abs()).exp();
  // -log p(y | eta) = max(m, 0) + log1p(exp(-|eta|)), m = eta for y = 0 and -eta for y = 1
  const Eigen::ArrayXd m = (1.0 - 2.0 * design.y.array()) * eta;
  double lp = -(m.max(0.0).sum() + (1.0 + e).log().sum());

  double g0 = 0.0, g_pmi = 0.0, g_len = 0.0;
  Eigen::VectorXd g_task = Eigen::VectorXd::Zero(k), gx_task = Eigen::VectorXd::Zero(k);
  if (grad) {
    const Eigen::ArrayXd p = (eta >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e));
    const Eigen::ArrayXd g = design.y.array() - p;
    g0 = g.sum();
    g_pmi = (g * design.pmi.array()).sum();
    g_len = (g * design.length.array()).sum();
    for (Eigen::Index i = 0; i < n; ++i) {
      const int t = design.task[i];
      g_task[t] += g[i];
      gx_task[t] += g[i] * design.pmi[i];
    }
  }

  const double fv = spec.fixed_prior_sd * spec.fixed_prior_sd;
  const double sv = spec.scale_prior_sd * spec.scale_prior_sd;
  lp += -0.5 * (b0 * b0 + b_pmi * b_pmi + b_len * b_len) / fv;
  if (L.log_sd_r >= 0) lp += -0.5 * sd_r * sd_r / sv + theta[L.log_sd_r];
  if (L.log_sd_s >= 0) lp += -0.5 * sd_s * sd_s / sv + theta[L.log_sd_s];
  if (L.z_r >= 0) lp += -0.5 * theta.segment(L.z_r, k).squaredNorm();
  if (L.z_s >= 0) lp += -0.5 * theta.segment(L.z_s, k).squaredNorm();

  if (grad) {
    grad->setZero(L.dim);
    (*grad)[0] = g0 - b0 / fv;
    (*grad)[1] = g_pmi - b_pmi / fv;
    if (L.b_len >= 0) (*grad)[L.b_len] = g_len - b_len / fv;
    if (L.z_r >= 0) {
      (*grad)[L.log_sd_r] = r.dot(g_task) - sd_r * sd_r / sv + 1.0;
      grad->segment(L.z_r, k) = sd_r * g_task - theta.segment(L.z_r, k);
    }
    if (L.z_s >= 0) {
      (*grad)[L.log_sd_s] = s.dot(gx_task) - sd_s * sd_s / sv + 1.0;
      grad->segment(L.z_s, k) = sd_s * gx_task - theta.segment(L.z_s, k);
    }
  }
  return lp;
}

PosteriorDraws fit(const DesignMatrix& design, const MixedModelSpec& spec, const SamplerOptions& options) {
  check_spec(spec);
  if (design.rows() == 0) throw DataError("fit: empty design");
  if (options.chains < 2) throw UsageError("fit: at least two chains are required");
  if (options.iterations < 4) throw UsageError("fit: too few iterations");
  if (options.warmup < 0) throw UsageError("fit: negative warmup");
  const auto k = static_cast<Eigen::Index>(design.tasks.size());
  {
    std::vector<int> per_task(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < design.rows(); ++i) ++per_task[static_cast<std::size_t>(design.task[i])];
    for (Eigen::Index t = 0; t < k; ++t)
      if (per_task[static_cast<std::size_t>(t)] == 0)
        throw DataError("fit: task without rows: " + design.tasks[static_cast<std::size_t>(t)]);
  }
  const Layout L(spec, k);

  mcmc::LogDensity density = [&](const Eigen::VectorXd& theta, Eigen::VectorXd& grad) {
    return log_posterior(spec, design, theta, &grad);
  };
  mcmc::NutsOptions nuts;
  nuts.warmup = options.warmup;
  nuts.iterations = options.iterations;
  nuts.target_accept = options.target_accept;
  nuts.max_depth = options.max_depth;

  std::vector<mcmc::ChainResult> results(static_cast<std::size_t>(options.chains));
  std::vector<std::exception_ptr> errors(results.size());
  auto run_chain = [&](std::size_t c) {
    try {
      results[c] = mcmc::run_nuts(density, L.dim, nuts, derive_seed(options.seed, c));
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (options.parallel) {
    std::vector<std::thread> threads;
    for (std::size_t c = 0; c < results.size(); ++c) threads.emplace_back(run_chain, c);
    for (auto& t : threads) t.join();
  } else {
    for (std::size_t c = 0; c < results.size(); ++c) run_chain(c);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  PosteriorDraws out;
  out.spec = spec;
  out.tasks = design.tasks;
  out.names = PosteriorDraws::parameter_names(spec, design.tasks);
  out.n_rows = design.rows();
  out.design_fingerprint = design.fingerprint();
  for (const auto& res : results) {
    const Eigen::MatrixXd& u = res.draws;
    Eigen::MatrixXd c(u.rows(), L.dim);
    Eigen::Index j = 0;
    c.col(j++) = u.col(0);
    c.col(j++) = u.col(1);
    if (L.b_len >= 0) c.col(j++) = u.col(L.b_len);
    if (L.log_sd_r >= 0) c.col(j++) = u.col(L.log_sd_r).array().exp();
    if (L.log_sd_s >= 0) c.col(j++) = u.col(L.log_sd_s).array().exp();
    if (L.z_r >= 0) {
      for (Eigen::Index t = 0; t < k; ++t)
        c.col(j++) = u.col(L.z_r + t).cwiseProduct(u.col(L.log_sd_r).array().exp().matrix());
    }
    if (L.z_s >= 0) {
      for (Eigen::Index t = 0; t < k; ++t)
        c.col(j++) = u.col(L.z_s + t).cwiseProduct(u.col(L.log_sd_s).array().exp().matrix());
    }
    if (!c.allFinite()) throw ConvergenceError("fit: non-finite draws");
    out.chains.push_back(std::move(c));
    out.divergences += res.divergences;
  }
  out.diagnose(options.rhat_threshold, options.ess_threshold);
  return out;
}

double quantile(const Eigen::Ref<const Eigen::VectorXd>& draws, double prob) {
  if (draws.size() == 0) throw DataError("quantile of empty draws");
  std::vector<double> v(draws.data(), draws.data() + draws.size());
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Summary summarize(const Eigen::Ref<const Eigen::VectorXd>& draws, std::string parameter) {
  if (draws.size() == 0) throw DataError("summarize: no draws");
  Summary s;
  s.parameter = std::move(parameter);
  s.mean = draws.mean();
  s.se = draws.size() > 1 ? std::sqrt((draws.array() - s.mean).square().sum() / static_cast<double>(draws.size() - 1))
                          : 0.0;
  s.ci_low = quantile(draws, 0.025);
  s.ci_high = quantile(draws, 0.975);
  s.ess = static_cast<double>(draws.size());
  return s;
}

Summary summarize(const PosteriorDraws& draws, std::string_view parameter) {
  Summary s = summarize(draws.pooled(parameter), std::string(parameter));
  if (auto j = draws.find(parameter); j && *j < draws.rhat.size()) {
    s.rhat = draws.rhat[*j];
    s.ess = draws.ess[*j];
  } else {
    s.rhat = std::numeric_limits<double>::quiet_NaN();
    s.ess = std::numeric_limits<double>::quiet_NaN();
  }
  return s;
}

RopeReport rope(const Eigen::Ref<const Eigen::VectorXd>& draws, std::string parameter, const RopeBounds& bounds,
                double threshold) {
  if (!(bounds.lo <= bounds.hi)) throw UsageError("rope: bounds out of order");
  if (draws.size() == 0) throw DataError("rope: no draws");
  Eigen::Index outside = 0;
  for (Eigen::Index i = 0; i < draws.size(); ++i)
    if (draws[i] < bounds.lo || draws[i] > bounds.hi) ++outside;
  RopeReport r;
  r.parameter = std::move(parameter);
  r.bounds = bounds;
  r.fraction_outside = static_cast<double>(outside) / static_cast<double>(draws.size());
  r.effective = r.fraction_outside >= threshold;
  return r;
}

RopeReport rope(const PosteriorDraws& draws, std::string_view parameter, const RopeBounds& bounds,
                double threshold) {
  return rope(draws.pooled(parameter), std::string(parameter), bounds, threshold);
}

std::vector<RopeReport> rope_table(const PosteriorDraws& draws, const RopeBounds& bounds, double threshold) {
  std::vector<RopeReport> out;
  std::vector<std::string> wanted{"b_intercept", "b_pmi"};
  if (draws.spec.include_length) wanted.emplace_back("b_length");
  for (const auto& t : draws.tasks) wanted.push_back("intercept[" + t + "]");
  for (const auto& t : draws.tasks) wanted.push_back("slope[" + t + "]");
  for (const auto& name : wanted) out.push_back(rope(draws, name, bounds, threshold));
  return out;
}

namespace {

void check_rows(const PosteriorDraws& draws, const DesignMatrix& design) {
  if (draws.n_rows != design.rows() || draws.design_fingerprint != design.fingerprint())
    throw RowMismatchError("posterior was fitted on different rows than the design given");
}

// Task index in the draws for each task of the design (by name).
std::vector<int> task_map(const PosteriorDraws& draws, const DesignMatrix& design) {
  std::vector<int> out;
  for (const auto& t : design.tasks) {
    auto it = std::find(draws.tasks.begin(), draws.tasks.end(), t);
    if (it == draws.tasks.end()) throw RowMismatchError("task not in posterior: " + t);
    out.push_back(static_cast<int>(it - draws.tasks.begin()));
  }
  return out;
}

}  // namespace

Eigen::VectorXd posterior_predictive(const PosteriorDraws& draws, const DesignMatrix& design) {
  const auto map = task_map(draws, design);
  const Eigen::MatrixXd all = draws.pooled();
  const auto k = static_cast<Eigen::Index>(draws.tasks.size());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(design.rows());
  for (Eigen::Index d = 0; d < all.rows(); ++d) {
    const Coefs c(draws.spec, k, all.row(d));
    for (Eigen::Index i = 0; i < design.rows(); ++i)
      out[i] += logistic(c.eta(map[static_cast<std::size_t>(design.task[i])], design.pmi[i], design.length[i]));
  }
  return out / static_cast<double>(all.rows());
}

double log_likelihood_at_mean(const PosteriorDraws& draws, const DesignMatrix& design) {
  const auto map = task_map(draws, design);
  const Eigen::RowVectorXd mean = draws.pooled().colwise().mean();
  const Coefs c(draws.spec, static_cast<Eigen::Index>(draws.tasks.size()), mean);
  double ll = 0.0;
  for (Eigen::Index i = 0; i < design.rows(); ++i)
    ll += bernoulli_logit(design.y[i],
                          c.eta(map[static_cast<std::size_t>(design.task[i])], design.pmi[i], design.length[i]));
  return ll;
}

namespace {

double bic(const PosteriorDraws& draws, const DesignMatrix& design) {
  const Layout L(draws.spec, static_cast<Eigen::Index>(draws.tasks.size()));
  const double p = static_cast<double>(L.n_fixed() + L.n_scales());
  return -2.0 * log_likelihood_at_mean(draws, design) + p * std::log(static_cast<double>(design.rows()));
}

double held_out_lppd(const PosteriorDraws& draws, const DesignMatrix& test) {
  const auto map = task_map(draws, test);
  const Eigen::MatrixXd all = draws.pooled();
  const auto k = static_cast<Eigen::Index>(draws.tasks.size());
  Eigen::MatrixXd ll(test.rows(), all.rows());
  for (Eigen::Index d = 0; d < all.rows(); ++d) {
    const Coefs c(draws.spec, k, all.row(d));
    for (Eigen::Index i = 0; i < test.rows(); ++i)
      ll(i, d) = bernoulli_logit(test.y[i], c.eta(map[static_cast<std::size_t>(test.task[i])], test.pmi[i],
                                                  test.length[i]));
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < test.rows(); ++i) {
    const double hi = ll.row(i).maxCoeff();
    total += hi + std::log((ll.row(i).array() - hi).exp().mean());
  }
  return total;
}

}  // namespace

ModelComparison compare(const PosteriorDraws& with_length, const PosteriorDraws& without_length,
                        const DesignMatrix& design, const ComparisonOptions& options) {
  check_rows(with_length, design);
  check_rows(without_length, design);
  ModelComparison out;
  out.bic_with = bic(with_length, design);
  out.bic_without = bic(without_length, design);
  out.log_bayes_factor = 0.5 * (out.bic_without - out.bic_with);
  if (options.holdout) {
    std::vector<Eigen::Index> train, test;
    for (Eigen::Index i = 0; i < design.rows(); ++i) (i % 5 == 4 ? test : train).push_back(i);
    const DesignMatrix dtrain = design.subset(train), dtest = design.subset(test);
    const PosteriorDraws fw = fit(dtrain, with_length.spec, options.sampler);
    const PosteriorDraws fo = fit(dtrain, without_length.spec, options.sampler);
    out.elpd_with = held_out_lppd(fw, dtest);
    out.elpd_without = held_out_lppd(fo, dtest);
  }
  out.favors_length = out.log_bayes_factor > 0.0;
  return out;
}

std::vector<TaskCurve> simulate_curves(const PosteriorDraws& draws, const DesignMatrix& design,
                                       const CurveOptions& options) {
  if (options.grid_points < 1) throw UsageError("curves: grid_points must be positive");
  if (!(options.mass > 0.0 && options.mass < 1.0)) throw UsageError("curves: mass must be in (0, 1)");
  const auto map = task_map(draws, design);
  const Eigen::MatrixXd all = draws.pooled();
  const auto k = static_cast<Eigen::Index>(draws.tasks.size());
  std::vector<Coefs> coefs;
  coefs.reserve(static_cast<std::size_t>(all.rows()));
  for (Eigen::Index d = 0; d < all.rows(); ++d) coefs.emplace_back(draws.spec, k, all.row(d));

  std::vector<TaskCurve> out;
  for (std::size_t t = 0; t < design.tasks.size(); ++t) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, len_sum = 0.0;
    int n = 0;
    for (Eigen::Index i = 0; i < design.rows(); ++i) {
      if (design.task[i] != static_cast<int>(t)) continue;
      lo = std::min(lo, design.raw_pmi[i]);
      hi = std::max(hi, design.raw_pmi[i]);
      len_sum += design.raw_length[i];
      ++n;
    }
    if (n == 0) continue;
    TaskCurve curve;
    curve.task = design.tasks[t];
    curve.length = len_sum / n;
    const double z_len = draws.spec.include_length ? design.length_scale.apply(curve.length) : 0.0;
    Eigen::VectorXd p(all.rows());
    for (int g = 0; g < options.grid_points; ++g) {
      const double raw = options.grid_points == 1 ? lo : lo + (hi - lo) * g / (options.grid_points - 1);
      const double z = design.pmi_scale.apply(raw);
      for (Eigen::Index d = 0; d < all.rows(); ++d)
        p[d] = logistic(coefs[static_cast<std::size_t>(d)].eta(map[t], z, z_len));
      const double tail = 0.5 * (1.0 - options.mass);
      curve.points.push_back({raw, p.mean(), quantile(p, tail), quantile(p, 1.0 - tail)});
    }
    out.push_back(std::move(curve));
  }
  return out;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_fit_summary(std::ostream& out, const PosteriorDraws& draws) {
  out << "parameter,mean,se,ci_low,ci_high,rhat,ess\n";
  for (const auto& name : draws.names) {
    const Summary s = summarize(draws, name);
    out << csv_field(name) << ',' << num(s.mean) << ',' << num(s.se) << ',' << num(s.ci_low) << ','
        << num(s.ci_high) << ',' << num(s.rhat) << ',' << num(s.ess) << '\n';
  }
}

void write_draws(std::ostream& out, const PosteriorDraws& draws) {
  out << "chain,iteration";
  for (const auto& name : draws.names) out << ',' << csv_field(name);
  out << '\n';
  for (std::size_t c = 0; c < draws.chains.size(); ++c) {
    const auto& m = draws.chains[c];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      out << c << ',' << i;
      for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << num(m(i, j));
      out << '\n';
    }
  }
}

void write_rope_report(std::ostream& out, std::span<const RopeReport> reports) {
  out << "parameter,rope_low,rope_high,fraction_outside,effective\n";
  for (const auto& r : reports)
    out << csv_field(r.parameter) << ',' << num(r.bounds.lo) << ',' << num(r.bounds.hi) << ','
        << num(r.fraction_outside) << ',' << (r.effective ? 1 : 0) << '\n';
}

void write_curves(std::ostream& out, std::span<const TaskCurve> curves) {
  out << "task,pmi,mean,band_low,band_high,length\n";
  for (const auto& c : curves)
    for (const auto& p : c.points)
      out << csv_field(c.task) << ',' << num(p.pmi) << ',' << num(p.mean) << ',' << num(p.band_low) << ','
          << num(p.band_high) << ',' << num(c.length) << '\n';
}

void write_comparison(std::ostream& out, const ModelComparison& c) {
  out << "metric,value\n";
  out << "bic_with_length," << num(c.bic_with) << '\n';
  out << "bic_without_length," << num(c.bic_without) << '\n';
  out << "log_bayes_factor," << num(c.log_bayes_factor) << '\n';
  if (c.elpd_with) out << "elpd_with_length," << num(*c.elpd_with) << '\n';
  if (c.elpd_without) out << "elpd_without_length," << num(*c.elpd_without) << '\n';
  out << "favored," << (c.favors_length ? "with_length" : "without_length") << '\n';
}

}  // namespace wordorder
