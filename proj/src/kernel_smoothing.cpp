#include "trunc_sim/kernel_smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "trunc_sim/errors.hpp"

namespace trunc_sim {

namespace {

constexpr double kDenominatorFloor = 1e-300;

// Sorted projections and their record indices; ties ordered by index.
struct SortedProjection {
  std::vector<double> z;       // by record
  std::vector<double> zs;      // ascending
  std::vector<std::size_t> idx;

  SortedProjection(const TruncatedSample& s, const VectorRef& theta) : z(project(s, theta)) {
    idx.resize(z.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return z[a] < z[b] || (z[a] == z[b] && a < b);
    });
    zs.resize(z.size());
    for (std::size_t k = 0; k < idx.size(); ++k) zs[k] = z[idx[k]];
  }

  std::pair<std::size_t, std::size_t> window(double s, double h) const {
    const auto lo = std::lower_bound(zs.begin(), zs.end(), s - h) - zs.begin();
    const auto hi = std::upper_bound(zs.begin(), zs.end(), s + h) - zs.begin();
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
  }
};

}  // namespace

KernelFamily parse_kernel(std::string_view name) {
  if (name == "epanechnikov") return KernelFamily::epanechnikov;
  if (name == "quartic" || name == "biweight") return KernelFamily::quartic;
  if (name == "triweight") return KernelFamily::triweight;
  throw std::invalid_argument("unknown kernel '" + std::string(name) + "'");
}

std::string kernel_name(KernelFamily family) {
  switch (family) {
    case KernelFamily::epanechnikov: return "epanechnikov";
    case KernelFamily::quartic: return "quartic";
    case KernelFamily::triweight: return "triweight";
  }
  return "unknown";
}

double KernelSpec::bandwidth(std::size_t n) const {
  if (fixed_bandwidth) {
    if (!(*fixed_bandwidth > 0.0)) throw std::invalid_argument("bandwidth must be positive");
    return *fixed_bandwidth;
  }
  return default_bandwidth(n);
}

double kernel_eval(const KernelSpec& spec, double t) {
  if (!(std::abs(t) <= 1.0)) return 0.0;
  const double a = 1.0 - t * t;
  switch (spec.family) {
    case KernelFamily::epanechnikov: return 0.75 * a;
    case KernelFamily::quartic: return 15.0 / 16.0 * a * a;
    case KernelFamily::triweight: return 35.0 / 32.0 * a * a * a;
  }
  return 0.0;
}

double kernel_deriv(const KernelSpec& spec, double t) {
  if (!(std::abs(t) < 1.0)) return 0.0;
  const double a = 1.0 - t * t;
  switch (spec.family) {
    case KernelFamily::epanechnikov: return -1.5 * t;
    case KernelFamily::quartic: return -3.75 * t * a;
    case KernelFamily::triweight: return -105.0 / 16.0 * t * a * a;
  }
  return 0.0;
}

double default_bandwidth(std::size_t n) {
  if (n < 2) throw std::invalid_argument("default_bandwidth needs n >= 2");
  const double nn = static_cast<double>(n);
  return std::pow(nn, -0.2) * std::pow(std::log(nn), 0.2);
}

SmootherInput make_smoother(const TruncatedSample& sample, const KernelSpec& kernel, bool use_floor) {
  const auto G = lynden_bell_G(sample, use_floor);
  SmootherInput in{sample, std::vector<double>(sample.size()), alpha_n(sample, use_floor), kernel,
                   kernel.bandwidth(std::max<std::size_t>(sample.size(), 2))};
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double g = G(sample.v(i));
    if (!(g > 0.0)) throw ZeroWeightDenominator("G_n(V_i) = 0 at record " + std::to_string(i + 1));
    in.g_weights[i] = 1.0 / g;
  }
  return in;
}

SmootherInput make_oracle_smoother(const TruncatedSample& sample, const KernelSpec& kernel,
                                   const std::function<double(double)>& true_G, double true_alpha) {
  SmootherInput in{sample, std::vector<double>(sample.size()), true_alpha, kernel,
                   kernel.bandwidth(std::max<std::size_t>(sample.size(), 2))};
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double g = true_G(sample.v(i));
    if (!(g > 0.0)) throw ZeroWeightDenominator("true G vanishes at an observed response");
    in.g_weights[i] = 1.0 / g;
  }
  return in;
}

SmootherInput make_unit_smoother(const TruncatedSample& sample, const KernelSpec& kernel) {
  return {sample, std::vector<double>(sample.size(), 1.0), 1.0, kernel,
          kernel.bandwidth(std::max<std::size_t>(sample.size(), 2))};
}

std::vector<double> project(const TruncatedSample& sample, const VectorRef& theta) {
  std::vector<double> z(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) z[i] = theta.dot(sample.u_vec(i));
  return z;
}

double g_hat(const SmootherInput& in, const VectorRef& theta, double s, std::optional<std::size_t> leave_out) {
  double num = 0.0, den = 0.0;
  const auto& smp = in.sample;
  for (std::size_t i = 0; i < smp.size(); ++i) {
    if (leave_out && *leave_out == i) continue;
    const double k = in.g_weights[i] * kernel_eval(in.kernel, (s - theta.dot(smp.u_vec(i))) / in.h);
    num += k * smp.v(i);
    den += k;
  }
  if (!(den > kDenominatorFloor)) throw EmptyNeighborhood("no observation within one bandwidth of s");
  return num / den;
}

Eigen::VectorXd nabla_theta_g_hat(const SmootherInput& in, const VectorRef& theta, const VectorRef& u) {
  const auto& smp = in.sample;
  const double s = theta.dot(u);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < smp.size(); ++i) {
    const double k = in.g_weights[i] * kernel_eval(in.kernel, (s - theta.dot(smp.u_vec(i))) / in.h);
    num += k * smp.v(i);
    den += k;
  }
  if (!(den > kDenominatorFloor)) throw EmptyNeighborhood("no observation within one bandwidth of s");
  const double g = num / den;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(u.size());
  for (std::size_t i = 0; i < smp.size(); ++i) {
    const double t = (s - theta.dot(smp.u_vec(i))) / in.h;
    const double dk = kernel_deriv(in.kernel, t);
    if (dk == 0.0) continue;
    grad += (in.g_weights[i] * (smp.v(i) - g) * dk / in.h) * (u - smp.u_vec(i));
  }
  return grad / den;
}

double f_hat(const SmootherInput& in, const VectorRef& theta, double s) {
  double acc = 0.0;
  const auto& smp = in.sample;
  for (std::size_t i = 0; i < smp.size(); ++i)
    acc += in.g_weights[i] * kernel_eval(in.kernel, (s - theta.dot(smp.u_vec(i))) / in.h);
  return in.alpha * acc / (static_cast<double>(smp.size()) * in.h);
}

double phi_hat(const SmootherInput& in, const VectorRef& theta, double s) {
  double acc = 0.0;
  const auto& smp = in.sample;
  for (std::size_t i = 0; i < smp.size(); ++i)
    acc += smp.v(i) * in.g_weights[i] * kernel_eval(in.kernel, (s - theta.dot(smp.u_vec(i))) / in.h);
  return in.alpha * acc / (static_cast<double>(smp.size()) * in.h);
}

ObservedFit g_hat_at_observations(const SmootherInput& in, const VectorRef& theta, bool leave_out) {
  const SortedProjection sp(in.sample, theta);
  const std::size_t n = sp.z.size();
  const auto v = in.sample.responses();
  ObservedFit out{std::vector<double>(n), std::vector<unsigned char>(n)};
  const auto nn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t jj = 0; jj < nn; ++jj) {
    const auto j = static_cast<std::size_t>(jj);
    const double s = sp.z[j];
    const auto [lo, hi] = sp.window(s, in.h);
    double num = 0.0, den = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      const std::size_t i = sp.idx[k];
      if (leave_out && i == j) continue;
      const double kw = in.g_weights[i] * kernel_eval(in.kernel, (s - sp.z[i]) / in.h);
      num += kw * v[i];
      den += kw;
    }
    out.ok[j] = den > kDenominatorFloor;
    out.value[j] = out.ok[j] ? num / den : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

Eigen::MatrixXd gradient_at_observations(const SmootherInput& in, const VectorRef& theta) {
  const SortedProjection sp(in.sample, theta);
  const auto& smp = in.sample;
  const std::size_t n = sp.z.size();
  Eigen::MatrixXd grad(static_cast<Eigen::Index>(n), theta.size());
  const auto nn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t jj = 0; jj < nn; ++jj) {
    const auto j = static_cast<std::size_t>(jj);
    const double s = sp.z[j];
    const auto [lo, hi] = sp.window(s, in.h);
    double num = 0.0, den = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      const std::size_t i = sp.idx[k];
      const double kw = in.g_weights[i] * kernel_eval(in.kernel, (s - sp.z[i]) / in.h);
      num += kw * smp.v(i);
      den += kw;
    }
    if (!(den > kDenominatorFloor)) {
      grad.row(jj).setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double g = num / den;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(theta.size());
    for (std::size_t k = lo; k < hi; ++k) {
      const std::size_t i = sp.idx[k];
      const double dk = kernel_deriv(in.kernel, (s - sp.z[i]) / in.h);
      if (dk == 0.0) continue;
      acc += (in.g_weights[i] * (smp.v(i) - g) * dk / in.h) * (smp.u_vec(j) - smp.u_vec(i));
    }
    grad.row(jj) = (acc / den).transpose();
  }
  return grad;
}

namespace reference {

ObservedFit g_hat_at_observations(const SmootherInput& in, const VectorRef& theta, bool leave_out) {
  const auto z = project(in.sample, theta);
  const std::size_t n = z.size();
  ObservedFit out{std::vector<double>(n), std::vector<unsigned char>(n)};
  for (std::size_t j = 0; j < n; ++j) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (leave_out && i == j) continue;
      const double kw = in.g_weights[i] * kernel_eval(in.kernel, (z[j] - z[i]) / in.h);
      num += kw * in.sample.v(i);
      den += kw;
    }
    out.ok[j] = den > kDenominatorFloor;
    out.value[j] = out.ok[j] ? num / den : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

Eigen::MatrixXd gradient_at_observations(const SmootherInput& in, const VectorRef& theta) {
  const std::size_t n = in.sample.size();
  Eigen::MatrixXd grad(static_cast<Eigen::Index>(n), theta.size());
  for (std::size_t j = 0; j < n; ++j) {
    try {
      grad.row(static_cast<Eigen::Index>(j)) = nabla_theta_g_hat(in, theta, in.sample.u_vec(j)).transpose();
    } catch (const EmptyNeighborhood&) {
      grad.row(static_cast<Eigen::Index>(j)).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return grad;
}

}  // namespace reference

}  // namespace trunc_sim
