#include "trunc_sim/inference.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

#include "trunc_sim/errors.hpp"

namespace trunc_sim {

namespace {

constexpr double kMaxCondition = 1e12;

// grad g_hat(theta_hat'U_j) J(U_j), row per observation.
Eigen::MatrixXd trimmed_gradients(const TruncatedSample& sample, const FitResult& fit) {
  const auto& sm = fit.link_curve.smoother();
  Eigen::MatrixXd grad = gradient_at_observations(sm, fit.theta_hat.coords());
  for (std::size_t j = 0; j < sample.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    if (!fit.trimming.contains(sample.u_vec(j))) {
      grad.row(jj).setZero();
    } else if (!grad.row(jj).allFinite()) {
      throw EmptyNeighborhood("empty kernel window at observation " + std::to_string(j + 1));
    }
  }
  return grad;
}

}  // namespace

Eigen::VectorXd psi_plugin(const FitResult& fit, const SmootherInput& input, const VectorRef& u, double v) {
  const auto& theta = fit.theta_hat.coords();
  if (!fit.trimming.contains(u)) return Eigen::VectorXd::Zero(theta.size());
  const double g = g_hat(input, theta, theta.dot(u));
  return (v - g) * nabla_theta_g_hat(input, theta, u);
}

Eigen::MatrixXd psi_at_observations(const TruncatedSample& sample, const FitResult& fit) {
  const auto& sm = fit.link_curve.smoother();
  const auto fitted = g_hat_at_observations(sm, fit.theta_hat.coords());
  Eigen::MatrixXd psi = trimmed_gradients(sample, fit);
  for (std::size_t j = 0; j < sample.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    if (!fit.trimming.contains(sample.u_vec(j))) continue;
    if (!fitted.ok[j]) throw EmptyNeighborhood("empty kernel window at observation " + std::to_string(j + 1));
    psi.row(jj) *= sample.v(j) - fitted.value[j];
  }
  return psi;
}

Eigen::MatrixXd zeta_matrix(const TruncatedSample& sample, const FitResult& fit, InfluenceMode mode) {
  const bool floor = fit.config.use_floor;
  const auto F = lynden_bell_F(sample, floor);
  const auto sv = sample.sorted_v();
  const auto order = sample.order_v();
  const std::size_t n = sample.size();
  const auto d = static_cast<Eigen::Index>(sample.dim());
  const double total = F.values().back();
  const double nn = static_cast<double>(n);

  std::vector<std::size_t> rank(n);
  std::vector<double> risk(n);
  for (std::size_t k = 0; k < n; ++k) {
    rank[order[k]] = k;
    risk[k] = risk_fraction(sample, sv[k], floor);
    if (!(risk[k] > 0.0)) throw DegenerateRisk("zero risk fraction at an observed response");
  }
  // (W_i, V_i] in sorted-V positions: [lo, rank_i]
  auto window_sum = [&](const auto& prefix, std::size_t i) {
    const auto lo = static_cast<std::size_t>(std::upper_bound(sv.begin(), sv.end(), sample.w(i)) - sv.begin());
    const std::size_t hi = rank[i];
    using T = std::decay_t<decltype(prefix[0])>;
    if (lo > hi) return T(prefix[0] - prefix[0]);
    return T(lo == 0 ? prefix[hi] : T(prefix[hi] - prefix[lo - 1]));
  };

  Eigen::MatrixXd zeta(static_cast<Eigen::Index>(n), d);
  if (mode == InfluenceMode::joint) {
    const Eigen::MatrixXd psi = psi_at_observations(sample, fit);
    // Gamma_k = psi_(k) F((V_(k), inf)) - sum_{m > k} psi_(m) dF_m
    std::vector<Eigen::VectorXd> gamma(n);
    Eigen::VectorXd tail = Eigen::VectorXd::Zero(d);
    for (std::size_t k = n; k-- > 0;) {
      const Eigen::VectorXd p = psi.row(static_cast<Eigen::Index>(order[k])).transpose();
      gamma[k] = (total - F.values()[k]) * p - tail;
      tail += F.mass(k) * p;
    }
    std::vector<Eigen::VectorXd> prefix(n);
    for (std::size_t k = 0; k < n; ++k) {
      const Eigen::VectorXd term = gamma[k] / (risk[k] * risk[k]);
      prefix[k] = k == 0 ? term : Eigen::VectorXd(prefix[k - 1] + term);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = rank[i];
      zeta.row(static_cast<Eigen::Index>(i)) = (gamma[k] / risk[k] - window_sum(prefix, i) / nn).transpose();
    }
    return zeta;
  }

  // Gamma(U_i, v) = a_i * gamma(v) with gamma(v) = sum_{y_m > v} (v - y_m) dF_m.
  const Eigen::MatrixXd a = trimmed_gradients(sample, fit);
  std::vector<double> gamma(n), prefix(n);
  double tail_y = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    gamma[k] = sv[k] * (total - F.values()[k]) - tail_y;
    tail_y += F.mass(k) * sv[k];
  }
  for (std::size_t k = 0; k < n; ++k)
    prefix[k] = (k == 0 ? 0.0 : prefix[k - 1]) + gamma[k] / (risk[k] * risk[k]);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = rank[i];
    const double scale = gamma[k] / risk[k] - window_sum(prefix, i) / nn;
    zeta.row(static_cast<Eigen::Index>(i)) = scale * a.row(static_cast<Eigen::Index>(i));
  }
  return zeta;
}

Eigen::VectorXd zeta_plugin(const TruncatedSample& sample, const FitResult& fit, std::size_t i, InfluenceMode mode) {
  if (i >= sample.size()) throw std::out_of_range("zeta_plugin: index out of range");
  return zeta_matrix(sample, fit, mode).row(static_cast<Eigen::Index>(i)).transpose();
}

Eigen::MatrixXd tangent_basis(const IndexParam& theta) {
  const auto d = static_cast<Eigen::Index>(theta.dim());
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(theta.coords()));
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
  return q.rightCols(d - 1);
}

Eigen::MatrixXd restricted_inverse(const Eigen::MatrixXd& lambda, const Eigen::MatrixXd& basis) {
  const Eigen::MatrixXd block = basis.transpose() * lambda * basis;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (block + block.transpose()));
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kMaxCondition) {
    std::ostringstream os;
    os << "Lambda is singular on the tangent space (eigenvalues " << lo << ", " << hi << ")";
    throw SingularLambda(os.str());
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (block + block.transpose()));
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(block.rows(), block.cols()));
  const Eigen::MatrixXd out = basis * inv * basis.transpose();
  return 0.5 * (out + out.transpose());
}

Eigen::MatrixXd lambda_plugin(const TruncatedSample& sample, const FitResult& fit) {
  const Eigen::MatrixXd a = trimmed_gradients(sample, fit);
  const std::size_t n = sample.size();
  std::vector<double> w;
  if (fit.config.weighting == Weighting::unit) {
    w.assign(n, 1.0 / static_cast<double>(n));
  } else {
    w = lynden_bell_weights(sample, fit.config.use_floor).weight;
  }
  const auto d = a.cols();
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t j = 0; j < n; ++j) {
    const auto row = a.row(static_cast<Eigen::Index>(j));
    lambda.noalias() += w[j] * row.transpose() * row;
  }
  lambda = 0.5 * (lambda + lambda.transpose());
  restricted_inverse(lambda, tangent_basis(fit.theta_hat));
  return lambda;
}

InfluenceSet sandwich_from_parts(Eigen::MatrixXd zeta, Eigen::MatrixXd lambda_hat, const IndexParam& theta) {
  InfluenceSet out;
  out.n = static_cast<std::size_t>(zeta.rows());
  if (out.n < 2) throw std::invalid_argument("sandwich needs at least two influence vectors");
  const Eigen::RowVectorXd mean = zeta.colwise().mean();
  const Eigen::MatrixXd centered = zeta.rowwise() - mean;
  out.omega_hat = centered.transpose() * centered / static_cast<double>(out.n - 1);
  out.omega_hat = 0.5 * (out.omega_hat + out.omega_hat.transpose());
  out.lambda_inverse = restricted_inverse(lambda_hat, tangent_basis(theta));
  out.sandwich = out.lambda_inverse * out.omega_hat * out.lambda_inverse;
  out.sandwich = 0.5 * (out.sandwich + out.sandwich.transpose());
  out.se = (out.sandwich.diagonal().array().max(0.0) / static_cast<double>(out.n)).sqrt();
  out.zeta = std::move(zeta);
  out.lambda_hat = std::move(lambda_hat);
  return out;
}

InfluenceSet sandwich_covariance(const TruncatedSample& sample, const FitResult& fit, InfluenceMode mode) {
  if (sample.size() < sample.dim() + 2) throw std::invalid_argument("sandwich needs n >= d + 2");
  auto lambda = lambda_plugin(sample, fit);
  return sandwich_from_parts(zeta_matrix(sample, fit, mode), std::move(lambda), fit.theta_hat);
}

std::vector<std::pair<double, double>> confidence_intervals(const InfluenceSet& infl, const FitResult& fit,
                                                            double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("confidence level must lie in (0, 1)");
  const double z = boost::math::quantile(boost::math::normal(), 0.5 * (1.0 + level));
  std::vector<std::pair<double, double>> ci;
  for (std::size_t k = 0; k < fit.theta_hat.dim(); ++k) {
    const double c = fit.theta_hat[k];
    const double half = z * infl.se[static_cast<Eigen::Index>(k)];
    ci.emplace_back(c - half, c + half);
  }
  return ci;
}

void attach_covariance(FitResult& fit, const InfluenceSet& infl) {
  fit.covariance = infl.sandwich / static_cast<double>(infl.n);
}

}  // namespace trunc_sim
