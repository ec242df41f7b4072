#pragma once

// Nonparametric estimators for randomly left-truncated data: the at-risk
// fraction C_n, its floored version, Lynden-Bell product-limit estimators of
// F and G, the observation-probability estimate alpha_n and the Lynden-Bell
// integral against H_n.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

namespace trunc_sim {

// Observed triples (U_i, V_i, W_i) with W_i <= V_i. Immutable; copies share
// storage. Exact ties in V (or in W) are broken at construction by a
// deterministic jitter of 1e-9 * range and reported through warnings().
class TruncatedSample {
 public:
  // Empty sample.
  TruncatedSample() : data_(std::make_shared<const Data>()) {}
  // covariates is row-major n x dim.
  TruncatedSample(std::size_t dim, std::vector<double> covariates,
                  std::vector<double> responses, std::vector<double> truncation);

  std::size_t size() const { return data_->v.size(); }
  std::size_t dim() const { return data_->dim; }

  std::span<const double> u(std::size_t i) const {
    return {data_->u.data() + i * data_->dim, data_->dim};
  }
  Eigen::Map<const Eigen::VectorXd> u_vec(std::size_t i) const {
    return {data_->u.data() + i * data_->dim, static_cast<Eigen::Index>(data_->dim)};
  }
  double v(std::size_t i) const { return data_->v[i]; }
  double w(std::size_t i) const { return data_->w[i]; }

  std::span<const double> covariates() const { return data_->u; }
  std::span<const double> responses() const { return data_->v; }
  std::span<const double> truncation() const { return data_->w; }

  // Ascending views; order_v()[k] is the record index of the k-th smallest V.
  std::span<const double> sorted_v() const { return data_->sorted_v; }
  std::span<const double> sorted_w() const { return data_->sorted_w; }
  std::span<const std::size_t> order_v() const { return data_->order_v; }
  std::span<const std::size_t> order_w() const { return data_->order_w; }

  const std::vector<std::string>& warnings() const { return data_->warnings; }

 private:
  struct Data {
    std::size_t dim = 0;
    std::vector<double> u, v, w;
    std::vector<double> sorted_v, sorted_w;
    std::vector<std::size_t> order_v, order_w;
    std::vector<std::string> warnings;
  };
  std::shared_ptr<const Data> data_;
};

// Right-continuous piecewise-constant function. base is the value left of the
// first jump; values[k] holds on [jumps[k], jumps[k+1]).
class StepFunction {
 public:
  StepFunction() = default;
  StepFunction(double base, std::vector<double> jumps, std::vector<double> values);

  double operator()(double y) const;
  // Value just before y.
  double left_limit(double y) const;

  double base() const { return base_; }
  std::span<const double> jumps() const { return jumps_; }
  std::span<const double> values() const { return values_; }
  // Size of the k-th jump.
  double mass(std::size_t k) const { return values_[k] - (k == 0 ? base_ : values_[k - 1]); }

 private:
  double base_ = 0.0;
  std::vector<double> jumps_;
  std::vector<double> values_;
};

// H_n as a discrete measure: weight_i = alpha_n / (n G_n(V_i)) at (U_i, V_i).
struct WeightedSample {
  TruncatedSample sample;
  std::vector<double> weight;
};

// C_n(y) = n^-1 #{i : W_i <= y <= V_i}.
double c_n(const TruncatedSample& sample, double y);

// max{C_n(y), 1/n + 1/n^2} on the open interval (V_(1), V_(n)); C_n elsewhere.
double c_tilde(const TruncatedSample& sample, double y);

// c_tilde when use_floor is set, c_n otherwise.
double risk_fraction(const TruncatedSample& sample, double y, bool use_floor);

// F_n(y) = 1 - prod_{V_i <= y} (1 - 1/(n C(V_i))).
StepFunction lynden_bell_F(const TruncatedSample& sample, bool use_floor = true);

// G_n(t) = prod_{W_i > t} (1 - 1/(n C(W_i))).
StepFunction lynden_bell_G(const TruncatedSample& sample, bool use_floor = true);

// Empirical CDF of V (F*_n).
StepFunction empirical_F_star(const TruncatedSample& sample);

// G_n(y)[1 - F_n(y-)] / C(y) at every sorted V_i (NaN where C = 0).
std::vector<double> alpha_ratio_profile(const TruncatedSample& sample, bool use_floor = true);

// alpha_n evaluated at V_(1); throws InconsistentAlpha when the ratio differs
// by more than 1e-10 (relative) at any V_i where it is informative, i.e. where
// C > 0, G_n(V_i) > 0 and F_n(V_i-) < 1.
double alpha_n(const TruncatedSample& sample, bool use_floor = true);

WeightedSample lynden_bell_weights(const TruncatedSample& sample, bool use_floor = true);

// Sum_i weight_i * phi(U_i, V_i). phi may return a scalar or an Eigen object.
template <class Phi>
auto lb_integral(const WeightedSample& ws, Phi&& phi) {
  using Result = std::decay_t<decltype(phi(ws.sample.u(0), ws.sample.v(0)))>;
  if constexpr (std::is_arithmetic_v<Result>) {
    Result acc{};
    for (std::size_t i = 0; i < ws.weight.size(); ++i)
      acc += ws.weight[i] * phi(ws.sample.u(i), ws.sample.v(i));
    return acc;
  } else {
    Result acc = ws.weight[0] * phi(ws.sample.u(0), ws.sample.v(0));
    for (std::size_t i = 1; i < ws.weight.size(); ++i)
      acc += ws.weight[i] * phi(ws.sample.u(i), ws.sample.v(i));
    return acc;
  }
}

}  // namespace trunc_sim
