#include <doctest.h>

#include <cmath>
#include <cstdint>

#include <Eigen/LU>

#include "wordorder/mcmc.hpp"

using namespace wordorder;

namespace {

// same chains as tests/oracles/diagnostics.py
Eigen::MatrixXd ar1(int n, int m, double phi, double offset) {
  Eigen::MatrixXd x(n, m);
  for (int c = 0; c < m; ++c) {
    std::uint64_t state = 12345 + 977 * static_cast<std::uint64_t>(c);
    double prev = 0.0;
    for (int t = 0; t < n; ++t) {
      state = (1103515245ULL * state + 12345ULL) % (1ULL << 31);
      const double e = static_cast<double>(state) / static_cast<double>(1ULL << 31) - 0.5;
      prev = phi * prev + e;
      x(t, c) = prev + offset * c;
    }
  }
  return x;
}

Eigen::MatrixXd column(const std::vector<mcmc::ChainResult>& chains, Eigen::Index d) {
  Eigen::MatrixXd out(chains.front().draws.rows(), static_cast<Eigen::Index>(chains.size()));
  for (std::size_t c = 0; c < chains.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = chains[c].draws.col(d);
  return out;
}

}  // namespace

TEST_CASE("split R-hat and ESS match the reference") {
  struct Case {
    double phi, offset, rhat, ess;
  };
  const Case cases[] = {
      {0.0, 0.0, 0.9963182780781387, 822.6641838679667},
      {0.5, 0.0, 0.9995819729301706, 318.62390531178426},
      {0.9, 0.0, 1.030986335544504, 61.188868726236876},
      {-0.6, 0.0, 0.9952575684785241, 2322.471989593555},
      {0.3, 0.5, 2.2014487445786113, 5.267792902364865},
  };
  for (const auto& c : cases) {
    CAPTURE(c.phi);
    const auto x = ar1(200, 4, c.phi, c.offset);
    CHECK(mcmc::split_rhat(x) == doctest::Approx(c.rhat).epsilon(1e-10));
    CHECK(mcmc::effective_sample_size(x) == doctest::Approx(c.ess).epsilon(1e-10));
  }
}

TEST_CASE("diagnostics edge cases") {
  CHECK(std::isnan(mcmc::split_rhat(Eigen::MatrixXd::Zero(3, 2))));
  CHECK(mcmc::split_rhat(Eigen::MatrixXd::Constant(10, 2, 1.0)) == 1.0);
  Eigen::MatrixXd stuck(10, 2);
  stuck.col(0).setConstant(0.0);
  stuck.col(1).setConstant(1.0);
  CHECK(std::isinf(mcmc::split_rhat(stuck)));
  CHECK(std::isnan(mcmc::effective_sample_size(Eigen::MatrixXd::Zero(6, 2))));
}

TEST_CASE("NUTS samples a correlated Gaussian") {
  Eigen::Matrix2d cov;
  cov << 4.0, 1.8, 1.8, 1.0;
  const Eigen::Matrix2d prec = cov.inverse();
  const Eigen::Vector2d mu(1.0, -2.0);
  const mcmc::LogDensity f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const Eigen::Vector2d d = x - mu;
    g = -(prec * d);
    return -0.5 * d.dot(prec * d);
  };
  mcmc::NutsOptions opt;
  opt.warmup = 500;
  opt.iterations = 1000;
  std::vector<mcmc::ChainResult> chains;
  for (std::uint64_t s = 1; s <= 4; ++s) chains.push_back(mcmc::run_nuts(f, 2, opt, s));

  for (Eigen::Index d = 0; d < 2; ++d) {
    const auto x = column(chains, d);
    CHECK(mcmc::split_rhat(x) < 1.05);
    CHECK(mcmc::effective_sample_size(x) > 400);
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    CHECK(mean == doctest::Approx(mu[d]).epsilon(0.1 * std::sqrt(cov(d, d)) / std::abs(mu[d])));
    CHECK(var == doctest::Approx(cov(d, d)).epsilon(0.15));
  }
  for (const auto& c : chains) {
    CHECK(c.divergences == 0);
    CHECK(c.mean_accept > 0.6);
    CHECK(c.step_size > 0.0);
    CHECK(c.inv_metric[0] > c.inv_metric[1]);
  }
}

TEST_CASE("NUTS is reproducible per seed") {
  const mcmc::LogDensity f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = -x;
    return -0.5 * x.squaredNorm();
  };
  mcmc::NutsOptions opt;
  opt.warmup = 100;
  opt.iterations = 100;
  const auto a = mcmc::run_nuts(f, 3, opt, 7), b = mcmc::run_nuts(f, 3, opt, 7), c = mcmc::run_nuts(f, 3, opt, 8);
  CHECK(a.draws == b.draws);
  CHECK(a.draws != c.draws);
  CHECK(a.draws.allFinite());
}

TEST_CASE("divergences are reported") {
  // a funnel neck forces divergent trajectories
  const mcmc::LogDensity f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const double v = x[0];
    const double s2 = std::exp(v);
    double lp = -v * v / 18.0;
    g.setZero(x.size());
    g[0] = -v / 9.0;
    for (Eigen::Index i = 1; i < x.size(); ++i) {
      lp += -0.5 * x[i] * x[i] / s2 - 0.5 * v;
      g[0] += 0.5 * x[i] * x[i] / s2 - 0.5;
      g[i] = -x[i] / s2;
    }
    return lp;
  };
  mcmc::NutsOptions opt;
  opt.warmup = 300;
  opt.iterations = 500;
  int total = 0;
  for (std::uint64_t s = 1; s <= 2; ++s) total += mcmc::run_nuts(f, 10, opt, s).divergences;
  CHECK(total > 0);
}
