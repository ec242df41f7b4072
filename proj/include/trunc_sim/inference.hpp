#pragma once

// Plug-in sandwich inference for theta_hat.
//
//   Gamma(u, v, phi) = int_{y > v} [phi(u, v) - phi(u, y)] F(dy)
//   psi(u, v)        = [v - g(theta'u)] grad_theta g(theta'u) J(u)
//   zeta_i           = Gamma(U_i, V_i, psi)/C(V_i) - int_{(W_i, V_i]} Gamma(U, v, psi)/C(v)^2 F*(dv)
//   Lambda           = E[grad g grad g' J],  Omega = Var(zeta)
//
// F -> Lynden-Bell F_n, C -> floored C_n, F* -> empirical CDF of V, and
// theta_0, g, grad g -> theta_hat, g_hat, the analytic gradient.
//
// theta_hat lives on the unit sphere, and grad_theta g is orthogonal to theta
// in the population, so Lambda is inverted on the tangent space at theta_hat.

#include <cstddef>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "trunc_sim/index_estimator.hpp"
#include "trunc_sim/truncation.hpp"

namespace trunc_sim {

// How the covariate inside Gamma and the correction integral is bound.
enum class InfluenceMode {
  // Each jump y of F_n and each atom v of F*_n carries the covariate of the
  // observation located there (integration against H_n and H*_n).
  joint,
  // U = U_i throughout.
  fixed_covariate
};

// Finite sum over the jumps y_k > v of F: [phi(u, v) - phi(u, y_k)] dF(y_k).
template <class Phi>
auto gamma_plugin(const VectorRef& u, double v, Phi&& phi, const StepFunction& F) {
  using Result = std::decay_t<decltype(phi(u, v))>;
  const auto jumps = F.jumps();
  const Result at_v = phi(u, v);
  Result acc = at_v - at_v;
  for (std::size_t k = 0; k < jumps.size(); ++k) {
    if (!(jumps[k] > v)) continue;
    acc += F.mass(k) * (at_v - phi(u, jumps[k]));
  }
  return acc;
}

// psi at (u, v) with theta_hat, g_hat and its gradient; zero outside the trimming box.
Eigen::VectorXd psi_plugin(const FitResult& fit, const SmootherInput& input, const VectorRef& u, double v);

// Rows psi(U_j, V_j).
Eigen::MatrixXd psi_at_observations(const TruncatedSample& sample, const FitResult& fit);

// Rows zeta_i, i = 0..n-1.
Eigen::MatrixXd zeta_matrix(const TruncatedSample& sample, const FitResult& fit,
                            InfluenceMode mode = InfluenceMode::joint);
Eigen::VectorXd zeta_plugin(const TruncatedSample& sample, const FitResult& fit, std::size_t i,
                            InfluenceMode mode = InfluenceMode::joint);

// Lynden-Bell integral of grad g grad g' J. Throws SingularLambda when the
// tangent-space block is singular or has condition number above 1e12.
Eigen::MatrixXd lambda_plugin(const TruncatedSample& sample, const FitResult& fit);

// Orthonormal basis (d x (d-1)) of the tangent space at theta.
Eigen::MatrixXd tangent_basis(const IndexParam& theta);

// B (B' Lambda B)^{-1} B'; throws SingularLambda.
Eigen::MatrixXd restricted_inverse(const Eigen::MatrixXd& lambda, const Eigen::MatrixXd& basis);

struct InfluenceSet {
  Eigen::MatrixXd zeta;            // n x d
  Eigen::MatrixXd lambda_hat;      // d x d
  Eigen::MatrixXd omega_hat;       // d x d, divisor n - 1
  Eigen::MatrixXd lambda_inverse;  // restricted_inverse(lambda_hat, tangent basis)
  Eigen::MatrixXd sandwich;        // lambda_inverse * omega_hat * lambda_inverse
  Eigen::VectorXd se;              // sqrt(diag(sandwich) / n)
  std::size_t n = 0;
};

InfluenceSet sandwich_from_parts(Eigen::MatrixXd zeta, Eigen::MatrixXd lambda_hat, const IndexParam& theta);

InfluenceSet sandwich_covariance(const TruncatedSample& sample, const FitResult& fit,
                                 InfluenceMode mode = InfluenceMode::joint);

// theta_hat_k +- z_{(1+level)/2} se_k
std::vector<std::pair<double, double>> confidence_intervals(const InfluenceSet& infl, const FitResult& fit,
                                                            double level);

// Stores sandwich / n as fit.covariance.
void attach_covariance(FitResult& fit, const InfluenceSet& infl);

}  // namespace trunc_sim
