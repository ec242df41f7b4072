#pragma once

// Truncation-weighted Nadaraya-Watson smoothing along an index direction.
//
//   g_hat(s; theta) = sum_i V_i q_i K((s - theta'U_i)/h) / sum_i q_i K((s - theta'U_i)/h)
//
// with q_i = 1/G_n(V_i). The density and numerator estimators f_hat, phi_hat
// carry the alpha/(n h) scaling, so g_hat = phi_hat / f_hat. Supplying the true
// G and alpha instead (make_oracle_smoother) gives the "tilde" oracle versions.
//
// All kernels are supported on [-1, 1]. The *_at_observations batch routines
// exploit this with a sorted sliding window and are OpenMP-parallel over the
// evaluation points; the reference:: versions are the direct O(n^2) loops and
// exist for testing and benchmarking.

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "trunc_sim/truncation.hpp"

namespace trunc_sim {

enum class KernelFamily { epanechnikov, quartic, triweight };

KernelFamily parse_kernel(std::string_view name);
std::string kernel_name(KernelFamily family);

struct KernelSpec {
  KernelFamily family = KernelFamily::epanechnikov;
  std::optional<double> fixed_bandwidth;  // unset: default_bandwidth(n)

  double bandwidth(std::size_t n) const;
};

double kernel_eval(const KernelSpec& spec, double t);
double kernel_deriv(const KernelSpec& spec, double t);

// h = n^{-1/5} (log n)^{1/5}
double default_bandwidth(std::size_t n);

struct SmootherInput {
  TruncatedSample sample;
  std::vector<double> g_weights;  // 1/G(V_i), estimated or true
  double alpha = 1.0;
  KernelSpec kernel;
  double h = 1.0;
};

SmootherInput make_smoother(const TruncatedSample& sample, const KernelSpec& kernel, bool use_floor = true);
SmootherInput make_oracle_smoother(const TruncatedSample& sample, const KernelSpec& kernel,
                                   const std::function<double(double)>& true_G, double true_alpha);
// Unit weights and alpha = 1: the classical Nadaraya-Watson smoother.
SmootherInput make_unit_smoother(const TruncatedSample& sample, const KernelSpec& kernel);

using VectorRef = Eigen::Ref<const Eigen::VectorXd>;

std::vector<double> project(const TruncatedSample& sample, const VectorRef& theta);

double g_hat(const SmootherInput& in, const VectorRef& theta, double s,
             std::optional<std::size_t> leave_out = std::nullopt);

// Gradient in theta of g_hat(theta'u; theta) with u held fixed.
Eigen::VectorXd nabla_theta_g_hat(const SmootherInput& in, const VectorRef& theta, const VectorRef& u);

double f_hat(const SmootherInput& in, const VectorRef& theta, double s);
double phi_hat(const SmootherInput& in, const VectorRef& theta, double s);

// g_hat evaluated at every observed projection theta'U_j.
// ok[j] == 0 where the kernel denominator is empty (only possible with leave_out).
struct ObservedFit {
  std::vector<double> value;
  std::vector<unsigned char> ok;
};

ObservedFit g_hat_at_observations(const SmootherInput& in, const VectorRef& theta, bool leave_out = false);

// Row j is nabla_theta_g_hat at u = U_j; rows with an empty window are NaN.
Eigen::MatrixXd gradient_at_observations(const SmootherInput& in, const VectorRef& theta);

namespace reference {
ObservedFit g_hat_at_observations(const SmootherInput& in, const VectorRef& theta, bool leave_out = false);
Eigen::MatrixXd gradient_at_observations(const SmootherInput& in, const VectorRef& theta);
}  // namespace reference

}  // namespace trunc_sim
