#include "trunc_sim/index_estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "trunc_sim/errors.hpp"

namespace trunc_sim {

IndexParam normalize(const Eigen::VectorXd& raw) {
  const double norm = raw.norm();
  if (raw.size() == 0 || !(norm > 0.0) || !std::isfinite(norm)) throw ZeroVector("cannot normalize a zero vector");
  // Vectors already unit up to rounding are kept as is so normalize is idempotent.
  Eigen::VectorXd c = std::abs(norm - 1.0) <= 8 * std::numeric_limits<double>::epsilon() ? raw : Eigen::VectorXd(raw / norm);
  for (Eigen::Index k = 0; k < c.size(); ++k) {
    if (c[k] != 0.0) {
      if (c[k] < 0.0) c = -c;
      break;
    }
  }
  return IndexParam(std::move(c));
}

// ---------------------------------------------------------------- trimming

TrimmingSpec TrimmingSpec::quantile_box(double q_lo, double q_hi) {
  if (!(q_lo > 0.0 && q_lo < q_hi && q_hi < 1.0)) throw std::invalid_argument("need 0 < q_lo < q_hi < 1");
  TrimmingSpec s;
  s.mode = Mode::quantile_box;
  s.q_lo = q_lo;
  s.q_hi = q_hi;
  return s;
}

TrimmingSpec TrimmingSpec::explicit_box(Eigen::VectorXd lower, Eigen::VectorXd upper) {
  if (lower.size() != upper.size() || (lower.array() >= upper.array()).any())
    throw std::invalid_argument("explicit trimming box needs lower < upper componentwise");
  TrimmingSpec s;
  s.mode = Mode::explicit_box;
  s.lower = std::move(lower);
  s.upper = std::move(upper);
  return s;
}

TrimmingSpec TrimmingSpec::none() {
  TrimmingSpec s;
  s.mode = Mode::none;
  return s;
}

bool TrimmingBox::contains(const VectorRef& u) const {
  return (u.array() >= lower.array()).all() && (u.array() <= upper.array()).all();
}

double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty range");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto k = static_cast<std::size_t>(std::floor(pos));
  if (k + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(k);
  return sorted[k] + frac * (sorted[k + 1] - sorted[k]);
}

TrimmingBox resolve_trimming(const TrimmingSpec& spec, const TruncatedSample& sample) {
  const auto d = static_cast<Eigen::Index>(sample.dim());
  const double inf = std::numeric_limits<double>::infinity();
  TrimmingBox box{Eigen::VectorXd::Constant(d, -inf), Eigen::VectorXd::Constant(d, inf)};
  switch (spec.mode) {
    case TrimmingSpec::Mode::none: break;
    case TrimmingSpec::Mode::explicit_box:
      if (spec.lower.size() != d) throw std::invalid_argument("trimming box dimension mismatch");
      box.lower = spec.lower;
      box.upper = spec.upper;
      break;
    case TrimmingSpec::Mode::quantile_box: {
      std::vector<double> col(sample.size());
      for (Eigen::Index j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < sample.size(); ++i) col[i] = sample.u(i)[static_cast<std::size_t>(j)];
        std::sort(col.begin(), col.end());
        box.lower[j] = sorted_quantile(col, spec.q_lo);
        box.upper[j] = sorted_quantile(col, spec.q_hi);
      }
      break;
    }
  }
  return box;
}

bool trimming_indicator(const TrimmingSpec& spec, const TruncatedSample& sample, const VectorRef& u) {
  return resolve_trimming(spec, sample).contains(u);
}

// ---------------------------------------------------------------- objective

SmootherInput make_fit_smoother(const TruncatedSample& sample, const FitConfig& config) {
  return config.weighting == Weighting::unit ? make_unit_smoother(sample, config.kernel)
                                             : make_smoother(sample, config.kernel, config.use_floor);
}

Objective::Objective(const TruncatedSample& sample, const FitConfig& config)
    : smoother_(make_fit_smoother(sample, config)),
      box_(resolve_trimming(config.trimming, sample)),
      active_(sample.size()),
      leave_out_(config.leave_out) {
  for (std::size_t i = 0; i < sample.size(); ++i) {
    active_[i] = box_.contains(sample.u_vec(i));
    n_used_ += active_[i];
  }
  if (n_used_ == 0) throw AllTrimmed("every observation falls outside the trimming set");
}

Objective::Value Objective::accumulate(const ObservedFit& fitted) const {
  // Fixed index order keeps the sum independent of thread count.
  Value out;
  double acc = 0.0;
  const auto& smp = smoother_.sample;
  for (std::size_t i = 0; i < smp.size(); ++i) {
    if (!active_[i]) continue;
    if (!fitted.ok[i]) {
      ++out.skipped;
      continue;
    }
    const double r = smp.v(i) - fitted.value[i];
    acc += smoother_.g_weights[i] * r * r;
  }
  out.value = smoother_.alpha * acc / static_cast<double>(smp.size());
  return out;
}

Objective::Value Objective::evaluate(const VectorRef& theta) const {
  return accumulate(g_hat_at_observations(smoother_, theta, leave_out_));
}

Objective::Value Objective::evaluate_reference(const VectorRef& theta) const {
  return accumulate(reference::g_hat_at_observations(smoother_, theta, leave_out_));
}

double objective_Mn(const TruncatedSample& sample, const VectorRef& theta, const FitConfig& config) {
  return Objective(sample, config).evaluate(theta).value;
}

// ---------------------------------------------------------------- sphere search

Eigen::VectorXd angles_to_direction(const VectorRef& angles) {
  const Eigen::Index m = angles.size();
  Eigen::VectorXd x(m + 1);
  double sin_prod = 1.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    x[k] = sin_prod * std::cos(angles[k]);
    sin_prod *= std::sin(angles[k]);
  }
  x[m] = sin_prod;
  return x;
}

Eigen::VectorXd direction_to_angles(const VectorRef& direction) {
  const Eigen::Index d = direction.size();
  Eigen::VectorXd a(d - 1);
  for (Eigen::Index k = 0; k + 1 < d; ++k) {
    if (k + 2 == d) {
      a[k] = std::atan2(direction[d - 1], direction[d - 2]);
    } else {
      a[k] = std::atan2(direction.tail(d - k - 1).norm(), direction[k]);
    }
  }
  return a;
}

namespace {

double radical_inverse(std::size_t index, unsigned base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (index > 0) {
    r += f * static_cast<double>(index % base);
    index /= base;
    f *= inv;
  }
  return r;
}

constexpr unsigned kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};

std::vector<Eigen::VectorXd> start_angles(std::size_t d, std::size_t count, std::uint64_t seed) {
  const std::size_t m = d - 1;
  if (m > std::size(kPrimes)) throw std::invalid_argument("dimension too large for the start design");
  Eigen::VectorXd shift = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
  if (seed != 0) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Eigen::Index k = 0; k < shift.size(); ++k) shift[k] = unif(gen);
  }
  std::vector<Eigen::VectorXd> out;
  for (std::size_t idx = 1; idx <= count; ++idx) {
    Eigen::VectorXd a(static_cast<Eigen::Index>(m));
    for (std::size_t k = 0; k < m; ++k) {
      double x = radical_inverse(idx, kPrimes[k]) + shift[static_cast<Eigen::Index>(k)];
      x -= std::floor(x);
      const auto kk = static_cast<Eigen::Index>(k);
      if (m == 1) {
        a[kk] = std::numbers::pi * x - std::numbers::pi / 2;  // theta_1 >= 0 half circle
      } else if (k + 1 == m) {
        a[kk] = 2.0 * std::numbers::pi * x;
      } else {
        a[kk] = std::numbers::pi * x;
      }
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::optional<Eigen::VectorXd> least_squares_direction(const TruncatedSample& s) {
  const auto n = static_cast<Eigen::Index>(s.size());
  const auto d = static_cast<Eigen::Index>(s.dim());
  if (n <= d + 1) return std::nullopt;
  Eigen::MatrixXd X(n, d + 1);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X.row(i).tail(d) = s.u_vec(static_cast<std::size_t>(i)).transpose();
    y[i] = s.v(static_cast<std::size_t>(i));
  }
  Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y).tail(d);
  if (!beta.allFinite() || !(beta.norm() > 0.0)) return std::nullopt;
  return normalize(beta).coords();
}

struct SimplexResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int iterations = 0;
  bool converged = false;
};

SimplexResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x0,
                          const OptimizerConfig& opt) {
  const Eigen::Index m = x0.size();
  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(m + 1), x0);
  std::vector<double> val(pts.size());
  for (Eigen::Index k = 0; k < m; ++k) pts[static_cast<std::size_t>(k + 1)][k] += opt.initial_step;
  for (std::size_t k = 0; k < pts.size(); ++k) val[k] = f(pts[k]);

  std::vector<std::size_t> order(pts.size());
  SimplexResult res;
  for (int it = 0;; ++it) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return val[a] < val[b]; });
    const std::size_t best = order.front(), worst = order.back();
    double diameter = 0.0;
    for (const auto& p : pts) diameter = std::max(diameter, (p - pts[best]).lpNorm<Eigen::Infinity>());
    const double spread = val[worst] - val[best];
    const double scale = std::max(std::abs(val[best]), 1e-300);
    const bool small_simplex = diameter <= opt.tol_param;
    const bool flat = spread <= opt.tol_obj * scale && diameter <= 1e-3;
    if (small_simplex || flat || it >= opt.max_iters) {
      res.x = pts[best];
      res.f = val[best];
      res.iterations = it;
      res.converged = small_simplex || flat;
      return res;
    }
    const std::size_t second = order[order.size() - 2];
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(m);
    for (std::size_t k = 0; k + 1 < order.size(); ++k) centroid += pts[order[k]];
    centroid /= static_cast<double>(m);

    const Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
    const double fr = f(xr);
    if (fr < val[best]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = f(xe);
      if (fe < fr) {
        pts[worst] = xe;
        val[worst] = fe;
      } else {
        pts[worst] = xr;
        val[worst] = fr;
      }
      continue;
    }
    if (fr < val[second]) {
      pts[worst] = xr;
      val[worst] = fr;
      continue;
    }
    const bool outside = fr < val[worst];
    const Eigen::VectorXd xc =
        outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid)) : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = f(xc);
    if (fc < (outside ? fr : val[worst])) {
      pts[worst] = xc;
      val[worst] = fc;
      continue;
    }
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (k == best) continue;
      pts[k] = pts[best] + 0.5 * (pts[k] - pts[best]);
      val[k] = f(pts[k]);
    }
  }
}

bool better(const TracePoint& a, const TracePoint& b) {
  if (a.objective != b.objective) return a.objective < b.objective;
  const auto& x = a.theta.coords();
  const auto& y = b.theta.coords();
  return std::lexicographical_compare(x.data(), x.data() + x.size(), y.data(), y.data() + y.size());
}

}  // namespace

SphereMinimum minimize_sphere(const Objective& objective, const FitConfig& config) {
  const std::size_t d = objective.smoother().sample.dim();
  if (d < 2) throw std::invalid_argument("minimize_sphere needs d >= 2");
  const auto& opt = config.optimizer;
  const std::size_t count = opt.multistart_count > 0 ? opt.multistart_count : 2 * (d + 1);

  auto starts = start_angles(d, count, config.seed);
  if (opt.least_squares_start) {
    if (auto dir = least_squares_direction(objective.smoother().sample)) starts.push_back(direction_to_angles(*dir));
  }

  auto f = [&](const Eigen::VectorXd& a) { return objective.evaluate(angles_to_direction(a)).value; };

  SphereMinimum out;
  for (const auto& a0 : starts) {
    const auto r = nelder_mead(f, a0, opt);
    TracePoint tp{normalize(angles_to_direction(r.x)), 0.0, r.iterations, r.converged};
    tp.objective = objective.evaluate(tp.theta.coords()).value;
    out.trace.push_back(tp);
  }
  const auto best = std::min_element(out.trace.begin(), out.trace.end(), better);
  out.theta = best->theta;
  out.objective = best->objective;
  out.converged = best->converged;
  return out;
}

SphereMinimum minimize_sphere(const TruncatedSample& sample, const FitConfig& config) {
  return minimize_sphere(Objective(sample, config), config);
}

// ---------------------------------------------------------------- link

LinkEstimate::LinkEstimate(SmootherInput smoother, IndexParam theta)
    : smoother_(std::move(smoother)), theta_(std::move(theta)) {
  sorted_index_ = project(smoother_.sample, theta_.coords());
  std::sort(sorted_index_.begin(), sorted_index_.end());
}

double LinkEstimate::operator()(double s) const { return g_hat(smoother_, theta_.coords(), s); }

double LinkEstimate::value_or_nan(double s) const {
  try {
    return (*this)(s);
  } catch (const EmptyNeighborhood&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

std::pair<double, double> LinkEstimate::index_range() const {
  return {sorted_index_.front(), sorted_index_.back()};
}

double LinkEstimate::index_quantile(double q) const { return sorted_quantile(sorted_index_, q); }

double link_estimate(const TruncatedSample& sample, const IndexParam& theta_hat, double s, const FitConfig& config) {
  return g_hat(make_fit_smoother(sample, config), theta_hat.coords(), s);
}

FitResult fit(const TruncatedSample& sample, const FitConfig& config) {
  if (sample.size() < 10) throw InvalidSample("fit needs at least 10 observations");
  const Objective objective(sample, config);
  auto best = minimize_sphere(objective, config);

  FitResult r;
  r.theta_hat = best.theta;
  const auto value = objective.evaluate(r.theta_hat.coords());
  r.objective_value = value.value;
  r.skipped_terms = value.skipped;
  r.alpha_hat = objective.smoother().alpha;
  r.n = sample.size();
  r.n_used = objective.n_used();
  r.converged = best.converged;
  r.optimizer_trace = std::move(best.trace);
  r.link_curve = LinkEstimate(objective.smoother(), r.theta_hat);
  r.trimming = objective.box();
  r.config = config;
  r.warnings = sample.warnings();
  if (!r.converged) r.warnings.push_back("optimizer did not meet its tolerances within max_iters");
  if (sample.size() > 1 && c_n(sample, sample.sorted_v().front()) * static_cast<double>(sample.size()) < 1.5)
    r.warnings.push_back("only the smallest response is at risk at its own value; F_n puts all mass there");
  if (10 * value.skipped > r.n_used) {
    std::ostringstream os;
    os << value.skipped << " of " << r.n_used << " untrimmed terms had an empty kernel window";
    r.warnings.push_back(os.str());
  }
  return r;
}

}  // namespace trunc_sim
