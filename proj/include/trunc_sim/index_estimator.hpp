#pragma once

// Two-stage estimation of a single-index model with a left-truncated
// response: theta_hat minimizes
//
//   M_n(theta) = (alpha_n/n) sum_i G_n(V_i)^{-1} [V_i - g_hat(theta'U_i; theta)]^2 J(U_i)
//
// over the identifiable half of the unit sphere, then the link is estimated by
// the same weighted smoother at theta_hat. alpha_n, G_n, the trimming box and
// the bandwidth are computed once per fit and frozen across theta.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trunc_sim/index_param.hpp"
#include "trunc_sim/kernel_smoothing.hpp"
#include "trunc_sim/truncation.hpp"

namespace trunc_sim {

struct TrimmingSpec {
  enum class Mode { quantile_box, explicit_box, none };
  Mode mode = Mode::quantile_box;
  double q_lo = 0.025;
  double q_hi = 0.975;
  Eigen::VectorXd lower, upper;  // explicit_box only

  static TrimmingSpec quantile_box(double q_lo, double q_hi);
  static TrimmingSpec explicit_box(Eigen::VectorXd lower, Eigen::VectorXd upper);
  static TrimmingSpec none();
};

// Closed box A; J(u) = I(u in A). Unbounded coordinates are +-inf.
struct TrimmingBox {
  Eigen::VectorXd lower, upper;
  bool contains(const VectorRef& u) const;
};

TrimmingBox resolve_trimming(const TrimmingSpec& spec, const TruncatedSample& sample);
bool trimming_indicator(const TrimmingSpec& spec, const TruncatedSample& sample, const VectorRef& u);

struct OptimizerConfig {
  std::size_t multistart_count = 0;  // 0: 2(d+1)
  int max_iters = 500;               // per start
  double tol_obj = 1e-10;            // relative spread of simplex values
  double tol_param = 1e-8;           // simplex diameter in angle space
  double initial_step = 0.15;        // radians
  bool least_squares_start = true;
};

enum class Weighting {
  lynden_bell,  // 1/G_n(V_i) weights, alpha_n scaling
  unit          // classical semiparametric least squares
};

struct FitConfig {
  KernelSpec kernel;
  TrimmingSpec trimming;
  OptimizerConfig optimizer;
  bool use_floor = true;
  bool leave_out = false;
  std::uint64_t seed = 0;  // shifts the low-discrepancy start set; 0 = unshifted
  Weighting weighting = Weighting::lynden_bell;
};

SmootherInput make_fit_smoother(const TruncatedSample& sample, const FitConfig& config);

// M_n with the stage-one quantities frozen.
class Objective {
 public:
  struct Value {
    double value = 0.0;
    std::size_t skipped = 0;  // untrimmed terms with an empty kernel window
  };

  Objective(const TruncatedSample& sample, const FitConfig& config);

  Value evaluate(const VectorRef& theta) const;
  // Direct O(n^2) serial evaluation; same value up to summation order.
  Value evaluate_reference(const VectorRef& theta) const;

  const SmootherInput& smoother() const { return smoother_; }
  const TrimmingBox& box() const { return box_; }
  const std::vector<unsigned char>& trimmed_in() const { return active_; }
  std::size_t n_used() const { return n_used_; }

 private:
  Value accumulate(const ObservedFit& fitted) const;

  SmootherInput smoother_;
  TrimmingBox box_;
  std::vector<unsigned char> active_;
  std::size_t n_used_ = 0;
  bool leave_out_ = false;
};

double objective_Mn(const TruncatedSample& sample, const VectorRef& theta, const FitConfig& config);

struct TracePoint {
  IndexParam theta;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct SphereMinimum {
  IndexParam theta;
  double objective = 0.0;
  bool converged = false;
  std::vector<TracePoint> trace;
};

// Hyperspherical coordinates: d-1 angles <-> unit d-vector.
Eigen::VectorXd angles_to_direction(const VectorRef& angles);
Eigen::VectorXd direction_to_angles(const VectorRef& direction);

// Deterministic multistart Nelder-Mead over the angles.
SphereMinimum minimize_sphere(const Objective& objective, const FitConfig& config);
SphereMinimum minimize_sphere(const TruncatedSample& sample, const FitConfig& config);

// s -> g_hat*(s; theta_hat).
class LinkEstimate {
 public:
  LinkEstimate() = default;
  LinkEstimate(SmootherInput smoother, IndexParam theta);

  // Throws EmptyNeighborhood outside the design range.
  double operator()(double s) const;
  double value_or_nan(double s) const;
  // Range of the observed index theta_hat'U_i.
  std::pair<double, double> index_range() const;
  // Empirical quantile of the observed index.
  double index_quantile(double q) const;

  const IndexParam& theta() const { return theta_; }
  const SmootherInput& smoother() const { return smoother_; }

 private:
  SmootherInput smoother_;
  IndexParam theta_;
  std::vector<double> sorted_index_;
};

struct FitResult {
  IndexParam theta_hat;
  double alpha_hat = 1.0;
  double objective_value = 0.0;
  std::size_t n = 0;
  std::size_t n_used = 0;
  bool converged = false;
  std::size_t skipped_terms = 0;
  std::vector<TracePoint> optimizer_trace;
  std::optional<Eigen::MatrixXd> covariance;  // Var(theta_hat), filled by inference
  LinkEstimate link_curve;
  TrimmingBox trimming;
  FitConfig config;
  std::vector<std::string> warnings;
};

double link_estimate(const TruncatedSample& sample, const IndexParam& theta_hat, double s,
                     const FitConfig& config);

FitResult fit(const TruncatedSample& sample, const FitConfig& config);

// Type-7 (linear interpolation) empirical quantile of an ascending range.
double sorted_quantile(std::span<const double> sorted, double q);

}  // namespace trunc_sim
