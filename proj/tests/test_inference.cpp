#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "trunc_sim/errors.hpp"
#include "trunc_sim/inference.hpp"
#include "trunc_sim/sim_models.hpp"

using namespace trunc_sim;

namespace {

TruncatedSample model_sample(const PopulationModel& m, double lambda, std::size_t N, std::uint64_t seed) {
  auto rng = substream(seed, 13, N, 0);
  return generate_truncated(m, lambda, N, rng);
}

// Smooth link, bounded covariates, truncation support reaching below the response support.
PopulationModel clean_model() {
  auto m = model1();
  m.link = [](double s) { return std::sin(s); };
  m.sigma = 0.2;
  m.truncation_law = TruncationLaw::uniform;
  m.uniform_lower = -3.0;
  return m;
}

StepFunction two_jump_F() { return lynden_bell_F(oracle::sample_1d({1.0, 2.0}, {0.0, 0.5})); }

bool symmetric_psd(const Eigen::MatrixXd& m, double tol) {
  if ((m - m.transpose()).norm() > tol * std::max(1.0, m.norm())) return false;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  return eig.eigenvalues().minCoeff() >= -tol * std::max(1.0, m.norm());
}

// Direct zeta_i: Gamma by double loops over the jumps of F, C by direct counting.
Eigen::MatrixXd direct_zeta(const TruncatedSample& s, const Eigen::MatrixXd& psi, const Eigen::MatrixXd& grad,
                            bool joint) {
  const std::size_t n = s.size();
  const auto d = psi.cols();
  std::vector<double> dF(n);
  for (std::size_t j = 0; j < n; ++j) dF[j] = oracle::F(s, s.v(j), true) - oracle::F_left(s, s.v(j), true);
  // Gamma at (U_a, V_b): covariate of obs a (fixed) or of the atom (joint).
  auto gamma = [&](std::size_t a, std::size_t b) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(d);
    for (std::size_t m = 0; m < n; ++m) {
      if (!(s.v(m) > s.v(b))) continue;
      if (joint) {
        acc += dF[m] * (psi.row(b) - psi.row(m)).transpose();
      } else {
        acc += dF[m] * (s.v(b) - s.v(m)) * grad.row(a).transpose();
      }
    }
    return acc;
  };
  Eigen::MatrixXd z(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd term = gamma(i, i) / oracle::risk(s, s.v(i), true);
    for (std::size_t j = 0; j < n; ++j) {
      if (!(s.w(i) < s.v(j) && s.v(j) <= s.v(i))) continue;
      const double c = oracle::risk(s, s.v(j), true);
      term -= gamma(joint ? j : i, j) / (c * c) / static_cast<double>(n);
    }
    z.row(i) = term.transpose();
  }
  return z;
}

}  // namespace

TEST_CASE("gamma plugin finite sums") {
  const auto F = two_jump_F();
  const Eigen::VectorXd u = Eigen::VectorXd::Zero(1);
  CHECK(gamma_plugin(u, 0.5, [](const VectorRef&, double y) { return y; }, F) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(gamma_plugin(u, 0.5, [](const VectorRef&, double) { return 3.0; }, F) == 0.0);
  CHECK(gamma_plugin(u, 2.0, [](const VectorRef&, double y) { return y; }, F) == 0.0);
  CHECK(gamma_plugin(u, 7.0, [](const VectorRef&, double y) { return y * y; }, F) == 0.0);

  std::mt19937_64 rng(2);
  const auto s = oracle::random_truncated(rng, 60);
  const auto G = lynden_bell_F(s);
  auto p1 = [](const VectorRef& x, double y) { return std::sin(y) + x[0]; };
  auto p2 = [](const VectorRef& x, double y) { return y * y * x[1]; };
  for (std::size_t i = 0; i < 10; ++i) {
    const auto x = s.u_vec(i);
    const double v = s.v(i);
    const double lhs = gamma_plugin(x, v, [&](const VectorRef& a, double y) { return 2.0 * p1(a, y) - 0.5 * p2(a, y); }, G);
    const double rhs = 2.0 * gamma_plugin(x, v, p1, G) - 0.5 * gamma_plugin(x, v, p2, G);
    CHECK(std::abs(lhs - rhs) < 1e-12);
    const Eigen::Vector2d vec = gamma_plugin(x, v, [&](const VectorRef& a, double y) {
      return Eigen::Vector2d(p1(a, y), p2(a, y));
    }, G);
    CHECK(vec[0] == doctest::Approx(gamma_plugin(x, v, p1, G)).epsilon(1e-14));
  }
}

TEST_CASE("psi plugin") {
  const auto m = model2();
  const auto s = model_sample(m, *published_lambda(m, 0.2), 200, 1);
  const auto f = fit(s, FitConfig{});
  const auto& in = f.link_curve.smoother();
  const auto& theta = f.theta_hat.coords();

  const Eigen::Vector2d outside(f.trimming.upper[0] + 1.0, 0.0);
  CHECK(psi_plugin(f, in, outside, 3.0).norm() == 0.0);

  const Eigen::VectorXd u = s.u_vec(3);
  CHECK(psi_plugin(f, in, u, g_hat(in, theta, theta.dot(u))).norm() == 0.0);

  int checked = 0;
  for (std::size_t i = 0; i < s.size() && checked < 10; ++i) {
    const Eigen::VectorXd x = s.u_vec(i);
    if (!f.trimming.contains(x)) continue;
    const double v = s.v(i);
    const Eigen::VectorXd expected = (v - g_hat(in, theta, theta.dot(x))) * oracle::fd_gradient(in, theta, x, 1e-6);
    const Eigen::VectorXd got = psi_plugin(f, in, x, v);
    if (expected.norm() < 1e-6) continue;
    // Skip probes whose FD step crosses an Epanechnikov kink.
    bool kink = false;
    for (std::size_t j = 0; j < s.size(); ++j)
      kink |= std::abs(std::abs((theta.dot(x) - theta.dot(s.u_vec(j))) / in.h) - 1.0) < 1e-4;
    if (kink) continue;
    CHECK((got - expected).norm() <= 1e-3 * expected.norm());
    ++checked;
  }
  CHECK(checked == 10);

  const auto rows = psi_at_observations(s, f);
  for (std::size_t i = 0; i < s.size(); i += 17) {
    CHECK((rows.row(i).transpose() - psi_plugin(f, in, s.u_vec(i), s.v(i))).norm() < 1e-12);
  }
}

TEST_CASE("zeta equals an independent summation oracle") {
  std::mt19937_64 rng(15);
  const auto s = oracle::random_truncated(rng, 15, 2, -1.0);
  FitConfig cfg;
  cfg.trimming = TrimmingSpec::none();
  cfg.kernel.fixed_bandwidth = 1.5;
  cfg.optimizer.multistart_count = 3;
  const auto f = fit(s, cfg);
  const auto psi = psi_at_observations(s, f);
  const auto grad = gradient_at_observations(f.link_curve.smoother(), f.theta_hat.coords());
  for (auto mode : {InfluenceMode::joint, InfluenceMode::fixed_covariate}) {
    const auto z = zeta_matrix(s, f, mode);
    const auto ref = direct_zeta(s, psi, grad, mode == InfluenceMode::joint);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      CHECK((z.row(i) - ref.row(i)).norm() <= 1e-12 * std::max(1.0, ref.row(i).norm()));
    }
    CHECK((zeta_plugin(s, f, 4, mode) - z.row(4).transpose()).norm() == 0.0);
  }
  CHECK_THROWS_AS(zeta_plugin(s, f, 15), std::out_of_range);
}

TEST_CASE("zero psi gives zero influence and a singular Lambda") {
  const auto m = model2();
  const auto s = model_sample(m, *published_lambda(m, 0.2), 200, 2);
  auto f = fit(s, FitConfig{});
  f.trimming.lower = Eigen::Vector2d(90.0, 90.0);
  f.trimming.upper = Eigen::Vector2d(91.0, 91.0);
  for (auto mode : {InfluenceMode::joint, InfluenceMode::fixed_covariate}) CHECK(zeta_matrix(s, f, mode).norm() == 0.0);
  CHECK(psi_at_observations(s, f).norm() == 0.0);
  CHECK_THROWS_AS(lambda_plugin(s, f), SingularLambda);
  CHECK_THROWS_AS(sandwich_covariance(s, f), SingularLambda);
  CHECK_THROWS_AS(restricted_inverse(Eigen::Matrix2d::Zero(), tangent_basis(f.theta_hat)), SingularLambda);
}

TEST_CASE("Lambda is the Lynden-Bell integral of the gradient outer product") {
  const auto m = model2();
  const auto s = model_sample(m, *published_lambda(m, 0.2), 800, 3);
  const auto f = fit(s, FitConfig{});
  const auto lam = lambda_plugin(s, f);
  const auto grad = reference::gradient_at_observations(f.link_curve.smoother(), f.theta_hat.coords());
  const auto ws = lynden_bell_weights(s);
  Eigen::Matrix2d direct = Eigen::Matrix2d::Zero();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!f.trimming.contains(s.u_vec(i))) continue;
    direct += ws.weight[i] * grad.row(i).transpose() * grad.row(i);
  }
  CHECK((lam - direct).norm() <= 1e-12 * direct.norm());
  CHECK(symmetric_psd(lam, 1e-12));
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(lam);
  CHECK(eig.eigenvalues().minCoeff() > 0.0);

  // The population gradient is orthogonal to theta.
  CHECK((lam * f.theta_hat.coords()).norm() < 0.2 * lam.norm());
}

TEST_CASE("tangent basis and restricted inverse") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> Z;
  for (int d = 2; d <= 5; ++d) {
    Eigen::VectorXd raw(d);
    for (auto& x : raw) x = Z(rng);
    const auto theta = normalize(raw);
    const auto B = tangent_basis(theta);
    CHECK(B.rows() == d);
    CHECK(B.cols() == d - 1);
    CHECK((B.transpose() * B - Eigen::MatrixXd::Identity(d - 1, d - 1)).norm() < 1e-12);
    CHECK((B.transpose() * theta.coords()).norm() < 1e-12);
    Eigen::MatrixXd A(d, d);
    for (auto& x : A.reshaped()) x = Z(rng);
    const Eigen::MatrixXd spd = A * A.transpose() + Eigen::MatrixXd::Identity(d, d);
    const auto Rinv = restricted_inverse(spd, B);
    // Inverse on the tangent space: R (B' S B) = B' acting within span(B).
    const Eigen::MatrixXd block = B.transpose() * spd * B;
    CHECK((B.transpose() * Rinv * B - block.inverse()).norm() < 1e-10);
    CHECK((Rinv * theta.coords()).norm() < 1e-12);
  }
  Eigen::Matrix2d ill;
  ill << 1.0, 0.0, 0.0, 1e-14;
  CHECK_THROWS_AS(restricted_inverse(ill, Eigen::Matrix2d::Identity()), SingularLambda);
}

TEST_CASE("sandwich from parts") {
  const auto theta = normalize(Eigen::Vector2d(0.6, 0.8));
  Eigen::Matrix2d lam;
  lam << 2.0, 0.3, 0.3, 1.0;
  Eigen::MatrixXd same(30, 2);
  same.rowwise() = Eigen::RowVector2d(0.4, -0.1);
  const auto zero = sandwich_from_parts(same, lam, theta);
  CHECK(zero.omega_hat.norm() < 1e-15);
  CHECK(zero.sandwich.norm() < 1e-15);
  CHECK(zero.se.norm() < 1e-7);

  FitResult f;
  f.theta_hat = theta;
  const auto ci0 = confidence_intervals(zero, f, 0.95);
  CHECK(ci0[0].first == doctest::Approx(0.6).epsilon(1e-7));
  CHECK(ci0[0].second == doctest::Approx(0.6).epsilon(1e-7));

  InfluenceSet manual;
  manual.se = Eigen::Vector2d(0.1, 0.1);
  const auto ci = confidence_intervals(manual, f, 0.95);
  CHECK(ci[0].first == doctest::Approx(0.6 - 1.959964 * 0.1).epsilon(1e-6));
  CHECK(ci[0].second == doctest::Approx(0.6 + 1.959964 * 0.1).epsilon(1e-6));
  CHECK(std::abs(ci[0].first - 0.404) < 5e-4);
  CHECK(std::abs(ci[0].second - 0.796) < 5e-4);
  const auto c90 = confidence_intervals(manual, f, 0.90), c99 = confidence_intervals(manual, f, 0.99);
  for (int k = 0; k < 2; ++k) CHECK(c99[k].second - c99[k].first > c90[k].second - c90[k].first);
  CHECK_THROWS_AS(confidence_intervals(manual, f, 1.0), std::invalid_argument);
}

TEST_CASE("sandwich covariance on Model 1") {
  const auto m = model1();
  const auto s = model_sample(m, -2.4, 500, 4);
  auto f = fit(s, FitConfig{});
  const auto infl = sandwich_covariance(s, f);
  CHECK(infl.n == s.size());
  CHECK(symmetric_psd(infl.lambda_hat, 1e-10));
  CHECK(symmetric_psd(infl.omega_hat, 1e-10));
  CHECK(symmetric_psd(infl.sandwich, 1e-10));

  const Eigen::Index n = infl.zeta.rows();
  const Eigen::RowVectorXd mean = infl.zeta.colwise().mean();
  const Eigen::MatrixXd centered = infl.zeta.rowwise() - mean;
  const Eigen::MatrixXd omega = centered.transpose() * centered / static_cast<double>(n - 1);
  CHECK((omega - infl.omega_hat).norm() <= 1e-10 * omega.norm());
  const Eigen::MatrixXd inv = restricted_inverse(infl.lambda_hat, tangent_basis(f.theta_hat));
  const Eigen::MatrixXd sw = inv * omega * inv;
  CHECK((sw - infl.sandwich).norm() <= 1e-10 * sw.norm());
  for (int k = 0; k < 2; ++k) {
    CHECK(infl.se[k] == doctest::Approx(std::sqrt(sw(k, k) / n)).epsilon(1e-10));
    const double sd = std::sqrt(omega(k, k));
    CHECK(std::abs(mean[k]) < 3.0 * sd / std::sqrt(static_cast<double>(n)));
  }

  attach_covariance(f, infl);
  REQUIRE(f.covariance.has_value());
  CHECK((*f.covariance - infl.sandwich / static_cast<double>(n)).norm() < 1e-15);
  for (const auto& [lo, hi] : confidence_intervals(infl, f, 0.95)) CHECK(lo < hi);
  const auto ci = confidence_intervals(infl, f, 0.95);
  for (int k = 0; k < 2; ++k) CHECK(ci[k].first <= f.theta_hat[k]);

  const auto fixed = sandwich_covariance(s, f, InfluenceMode::fixed_covariate);
  CHECK(fixed.se.allFinite());
}

TEST_CASE("influence mean shrinks with the sample size") {
  const auto m = model2();
  const double lambda = *published_lambda(m, 0.2);
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t N : {100u, 400u, 1600u}) {
    std::vector<double> norms;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto s = model_sample(m, lambda, N, 50 + seed);
      const auto f = fit(s, FitConfig{});
      norms.push_back(zeta_matrix(s, f, InfluenceMode::fixed_covariate).colwise().mean().norm());
      // With atoms carrying their own covariate the two terms cancel in the sum
      // wherever the risk floor is inactive.
      const auto joint = zeta_matrix(s, f, InfluenceMode::joint);
      const double scale = joint.rowwise().norm().maxCoeff();
      CHECK(joint.colwise().mean().norm() <= 1e-12 * scale);
    }
    const double med = oracle::median(norms);
    CHECK(med < previous);
    previous = med;
  }
}

TEST_CASE("sandwich standard errors match the replication spread on a smooth design") {
  const auto m = clean_model();
  std::vector<double> err, se;
  int covered = 0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    const auto s = model_sample(m, 1.0, 400, 1000 + r);
    const auto f = fit(s, FitConfig{});
    const auto infl = sandwich_covariance(s, f);
    err.push_back(f.theta_hat[0] - m.theta0[0]);
    se.push_back(infl.se[0]);
    const auto ci = confidence_intervals(infl, f, 0.95);
    covered += ci[0].first <= m.theta0[0] && m.theta0[0] <= ci[0].second;
  }
  double ss = 0.0;
  for (double e : err) ss += e * e;
  const double rmse = std::sqrt(ss / reps);
  const double ratio = oracle::median(se) / rmse;
  CHECK(ratio > 0.8);
  CHECK(ratio < 1.25);
  CHECK(covered / static_cast<double>(reps) > 0.9);
}
