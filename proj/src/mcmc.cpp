#include "wordorder/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "wordorder/random.hpp"

namespace wordorder::mcmc {

double effective_sample_size(const Eigen::Ref<const Eigen::MatrixXd>& draws) {
  const Eigen::Index half = draws.rows() / 2;
  const Eigen::Index chains = 2 * draws.cols();
  if (half < 4) return std::numeric_limits<double>::quiet_NaN();
  Eigen::MatrixXd x(half, chains);
  for (Eigen::Index c = 0; c < draws.cols(); ++c) {
    x.col(2 * c) = draws.col(c).head(half);
    x.col(2 * c + 1) = draws.col(c).tail(half);
  }
  const double n = static_cast<double>(half);
  const double m = static_cast<double>(chains);
  const Eigen::RowVectorXd means = x.colwise().mean();
  x.rowwise() -= means;

  auto acov = [&](Eigen::Index c, Eigen::Index lag) {
    return x.col(c).head(half - lag).dot(x.col(c).tail(half - lag)) / n;
  };
  Eigen::VectorXd var0(chains);
  for (Eigen::Index c = 0; c < chains; ++c) var0[c] = acov(c, 0) * n / (n - 1.0);
  const double w = var0.mean();
  const double b_over_n = chains > 1 ? (means.array() - means.mean()).square().sum() / (m - 1.0) : 0.0;
  const double var_plus = (n - 1.0) / n * w + b_over_n;
  if (!(var_plus > 0.0)) return m * n;

  auto rho = [&](Eigen::Index lag) {
    double mean_acov = 0.0;
    for (Eigen::Index c = 0; c < chains; ++c) mean_acov += acov(c, lag);
    mean_acov /= m;
    return 1.0 - (w - mean_acov) / var_plus;
  };

  // initial positive sequence, then made monotone
  std::vector<double> r(static_cast<std::size_t>(half + 2), 0.0);
  double even = 1.0;
  double odd = rho(1);
  r[0] = even;
  r[1] = odd;
  Eigen::Index s = 1;
  while (s < half - 4 && even + odd > 0.0) {
    even = rho(s + 1);
    odd = rho(s + 2);
    if (even + odd >= 0.0) {
      r[s + 1] = even;
      r[s + 2] = odd;
    }
    s += 2;
  }
  const Eigen::Index max_s = s;
  if (even > 0.0) r[max_s + 1] = even;
  for (Eigen::Index t = 1; t <= max_s - 3; t += 2) {
    if (r[t + 1] + r[t + 2] > r[t - 1] + r[t]) {
      r[t + 1] = (r[t - 1] + r[t]) / 2.0;
      r[t + 2] = r[t + 1];
    }
  }
  double tau = -1.0 + r[max_s + 1];
  for (Eigen::Index t = 0; t < max_s; ++t) tau += 2.0 * r[t];
  const double total = m * n;
  return std::min(total / tau, total * std::log10(total));
}

namespace {

double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

struct PhasePoint {
  Eigen::VectorXd q, p, grad;
  double logp = 0.0;
};

class Nuts {
 public:
  Nuts(const LogDensity& f, Eigen::Index dim, const NutsOptions& opt, std::uint64_t seed)
      : f_(f), dim_(dim), opt_(opt), rng_(seed), inv_metric_(Eigen::VectorXd::Ones(dim)) {}

  ChainResult run() {
    init_position();
    find_step_size();
    restart_adaptation();

    const auto windows = adaptation_windows(opt_.warmup);
    std::size_t window = 0;
    Eigen::VectorXd w_mean = Eigen::VectorXd::Zero(dim_), w_m2 = Eigen::VectorXd::Zero(dim_);
    int w_n = 0;

    ChainResult result;
    result.draws.resize(opt_.iterations, dim_);
    double accept_sum = 0.0;
    for (int it = 0; it < opt_.warmup + opt_.iterations; ++it) {
      const double accept = transition();
      if (it < opt_.warmup) {
        adapt_step_size(accept);
        if (window < windows.size() && it >= windows[window].first && it < windows[window].second) {
          ++w_n;
          const Eigen::VectorXd delta = z_.q - w_mean;
          w_mean += delta / w_n;
          w_m2 += delta.cwiseProduct(z_.q - w_mean);
          if (it + 1 == windows[window].second) {
            const double n = w_n;
            const Eigen::VectorXd var = w_m2 / (n - 1.0);
            inv_metric_ = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
            w_mean.setZero();
            w_m2.setZero();
            w_n = 0;
            ++window;
            find_step_size();
            restart_adaptation();
          }
        }
        if (it + 1 == opt_.warmup) step_ = std::exp(x_bar_);
      } else {
        result.draws.row(it - opt_.warmup) = z_.q.transpose();
        accept_sum += accept;
        if (divergent_) ++result.divergences;
      }
    }
    result.step_size = step_;
    result.inv_metric = inv_metric_;
    result.mean_accept = opt_.iterations > 0 ? accept_sum / opt_.iterations : 0.0;
    return result;
  }

 private:
  static std::vector<std::pair<int, int>> adaptation_windows(int warmup) {
    std::vector<std::pair<int, int>> out;
    if (warmup < 20) return out;
    int init = 75, term = 50, base = 25;
    if (init + term + base > warmup) {
      init = static_cast<int>(0.15 * warmup);
      term = static_cast<int>(0.1 * warmup);
      base = warmup - init - term;
    }
    int start = init, size = base;
    const int stop = warmup - term;
    while (start < stop) {
      int end = start + size;
      if (end + 2 * size > stop) end = stop;
      out.emplace_back(start, end);
      start = end;
      size *= 2;
    }
    return out;
  }

  double evaluate(PhasePoint& z) {
    z.grad.resize(dim_);
    z.logp = f_(z.q, z.grad);
    if (!std::isfinite(z.logp) || !z.grad.allFinite()) z.logp = -std::numeric_limits<double>::infinity();
    return z.logp;
  }

  void init_position() {
    z_.q.resize(dim_);
    for (int attempt = 0; attempt < 100; ++attempt) {
      for (Eigen::Index i = 0; i < dim_; ++i) z_.q[i] = opt_.init_radius * (2.0 * rng_.uniform01() - 1.0);
      if (std::isfinite(evaluate(z_))) return;
    }
    throw std::runtime_error("nuts: no finite initial point found");
  }

  double kinetic(const Eigen::VectorXd& p) const { return 0.5 * p.cwiseProduct(inv_metric_).dot(p); }
  double hamiltonian(const PhasePoint& z) const { return -z.logp + kinetic(z.p); }

  void sample_momentum() {
    z_.p.resize(dim_);
    for (Eigen::Index i = 0; i < dim_; ++i) z_.p[i] = rng_.normal() / std::sqrt(inv_metric_[i]);
  }

  void leapfrog(PhasePoint& z, double eps) {
    z.p += 0.5 * eps * z.grad;
    z.q += eps * z.p.cwiseProduct(inv_metric_);
    evaluate(z);
    z.p += 0.5 * eps * z.grad;
  }

  void find_step_size() {
    PhasePoint start = z_;
    sample_momentum();
    start.p = z_.p;
    const double h0 = hamiltonian(start);
    PhasePoint z = start;
    leapfrog(z, step_);
    double delta = h0 - hamiltonian(z);
    if (!std::isfinite(delta)) delta = -std::numeric_limits<double>::infinity();
    const int direction = delta > std::log(0.8) ? 1 : -1;
    for (int i = 0; i < 100; ++i) {
      z = start;
      sample_momentum();
      z.p = z_.p;
      const double h = hamiltonian(z);
      leapfrog(z, step_);
      double d = h - hamiltonian(z);
      if (!std::isfinite(d)) d = -std::numeric_limits<double>::infinity();
      if (direction == 1 && !(d > std::log(0.8))) break;
      if (direction == -1 && !(d < std::log(0.8))) break;
      step_ = direction == 1 ? 2.0 * step_ : 0.5 * step_;
      if (step_ > 1e7 || step_ < 1e-12) break;
    }
    z_.q = start.q;
    z_.grad = start.grad;
    z_.logp = start.logp;
  }

  void restart_adaptation() {
    mu_ = std::log(10.0 * step_);
    s_bar_ = 0.0;
    x_bar_ = 0.0;
    counter_ = 0;
  }

  void adapt_step_size(double accept) {
    constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;
    ++counter_;
    accept = std::min(1.0, accept);
    const double eta = 1.0 / (counter_ + t0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (opt_.target_accept - accept);
    const double x = mu_ - s_bar_ * std::sqrt(static_cast<double>(counter_)) / gamma;
    const double x_eta = std::pow(static_cast<double>(counter_), -kappa);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    step_ = std::exp(x);
  }

  bool criterion(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus,
                 const Eigen::VectorXd& rho) const {
    return p_sharp_plus.dot(rho) > 0.0 && p_sharp_minus.dot(rho) > 0.0;
  }

  bool build_tree(int depth, PhasePoint& z_propose, Eigen::VectorXd& p_sharp_beg, Eigen::VectorXd& p_sharp_end,
                  Eigen::VectorXd& rho, Eigen::VectorXd& p_beg, Eigen::VectorXd& p_end, double h0, double sign,
                  int& n_leapfrog, double& log_sum_weight, double& sum_metro_prob) {
    if (depth == 0) {
      leapfrog(z_, sign * step_);
      ++n_leapfrog;
      double h = hamiltonian(z_);
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      if (h - h0 > 1000.0) {
        divergent_ = true;
        return false;
      }
      const double delta = h0 - h;
      log_sum_weight = log_add_exp(log_sum_weight, delta);
      sum_metro_prob += delta > 0.0 ? 1.0 : std::exp(delta);
      z_propose = z_;
      p_sharp_beg = z_.p.cwiseProduct(inv_metric_);
      p_sharp_end = p_sharp_beg;
      rho += z_.p;
      p_beg = z_.p;
      p_end = p_beg;
      return true;
    }
    const double neg_inf = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd p_sharp_init_end(dim_), p_init_end(dim_), rho_init = Eigen::VectorXd::Zero(dim_);
    double lsw_init = neg_inf;
    if (!build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg, p_init_end, h0, sign,
                    n_leapfrog, lsw_init, sum_metro_prob))
      return false;

    PhasePoint z_propose_final = z_;
    Eigen::VectorXd p_sharp_final_beg(dim_), p_final_beg(dim_), rho_final = Eigen::VectorXd::Zero(dim_);
    double lsw_final = neg_inf;
    if (!build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final, p_final_beg, p_end, h0,
                    sign, n_leapfrog, lsw_final, sum_metro_prob))
      return false;

    const double lsw_subtree = log_add_exp(lsw_init, lsw_final);
    log_sum_weight = log_add_exp(log_sum_weight, lsw_subtree);
    if (lsw_final > lsw_subtree) {
      z_propose = z_propose_final;
    } else if (rng_.uniform01() < std::exp(lsw_final - lsw_subtree)) {
      z_propose = z_propose_final;
    }

    const Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, rho_init + p_final_beg);
    persist = persist && criterion(p_sharp_init_end, p_sharp_end, rho_final + p_init_end);
    return persist;
  }

  double transition() {
    divergent_ = false;
    sample_momentum();
    const double h0 = hamiltonian(z_);
    PhasePoint z_fwd = z_, z_bck = z_, z_sample = z_, z_propose = z_;

    Eigen::VectorXd p_sharp_fwd_fwd = z_.p.cwiseProduct(inv_metric_);
    Eigen::VectorXd p_sharp_fwd_bck = p_sharp_fwd_fwd, p_sharp_bck_fwd = p_sharp_fwd_fwd,
                    p_sharp_bck_bck = p_sharp_fwd_fwd;
    Eigen::VectorXd p_fwd_fwd = z_.p, p_fwd_bck = z_.p, p_bck_fwd = z_.p, p_bck_bck = z_.p;
    Eigen::VectorXd rho = z_.p;
    double log_sum_weight = 0.0, sum_metro_prob = 0.0;
    int n_leapfrog = 0;

    for (int depth = 0; depth < opt_.max_depth; ++depth) {
      Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(dim_), rho_bck = Eigen::VectorXd::Zero(dim_);
      double lsw_subtree = -std::numeric_limits<double>::infinity();
      bool valid;
      if (rng_.uniform01() > 0.5) {
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        z_ = z_fwd;
        valid = build_tree(depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd, h0,
                           1.0, n_leapfrog, lsw_subtree, sum_metro_prob);
        z_fwd = z_;
      } else {
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        z_ = z_bck;
        valid = build_tree(depth, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck, p_bck_fwd, p_bck_bck, h0,
                           -1.0, n_leapfrog, lsw_subtree, sum_metro_prob);
        z_bck = z_;
      }
      if (!valid) break;

      if (lsw_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (rng_.uniform01() < std::exp(lsw_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_add_exp(log_sum_weight, lsw_subtree);

      rho = rho_bck + rho_fwd;
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_bck + p_fwd_bck);
      persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_fwd + p_bck_fwd);
      if (!persist) break;
    }
    z_ = z_sample;
    return n_leapfrog > 0 ? sum_metro_prob / n_leapfrog : 0.0;
  }

  const LogDensity& f_;
  Eigen::Index dim_;
  NutsOptions opt_;
  SplitMix64 rng_;
  Eigen::VectorXd inv_metric_;
  PhasePoint z_;
  double step_ = 0.1;
  double mu_ = 0.0, s_bar_ = 0.0, x_bar_ = 0.0;
  int counter_ = 0;
  bool divergent_ = false;
};

}  // namespace

ChainResult run_nuts(const LogDensity& log_density, Eigen::Index dim, const NutsOptions& options,
                     std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("nuts: dimension must be positive");
  if (options.iterations < 1) throw std::invalid_argument("nuts: need at least one sampling iteration");
  Nuts sampler(log_density, dim, options, seed);
  return sampler.run();
}

}  // namespace wordorder::mcmc
