#pragma once

// Independent oracles and sample builders shared by the test binaries.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "trunc_sim/index_estimator.hpp"
#include "trunc_sim/kernel_smoothing.hpp"
#include "trunc_sim/truncation.hpp"

namespace oracle {

using trunc_sim::TruncatedSample;

inline TruncatedSample sample_1d(std::vector<double> v, std::vector<double> w) {
  std::vector<double> u(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) u[i] = static_cast<double>(i);
  return TruncatedSample(1, std::move(u), std::move(v), std::move(w));
}

// n records, d covariates, V ~ N(0,1) left-truncated by T ~ N(shift, 1).
inline TruncatedSample random_truncated(std::mt19937_64& rng, std::size_t n, std::size_t d = 2, double shift = -0.5) {
  std::normal_distribution<double> Z(0.0, 1.0);
  std::vector<double> u, v, w;
  while (v.size() < n) {
    std::vector<double> x(d);
    for (auto& a : x) a = Z(rng);
    const double y = 0.7 * x[0] + Z(rng);
    const double t = shift + Z(rng);
    if (y < t) continue;
    u.insert(u.end(), x.begin(), x.end());
    v.push_back(y);
    w.push_back(t);
  }
  return TruncatedSample(d, std::move(u), std::move(v), std::move(w));
}

// All W below min V.
inline TruncatedSample random_untruncated(std::mt19937_64& rng, std::size_t n, std::size_t d = 2) {
  std::normal_distribution<double> Z(0.0, 1.0);
  std::vector<double> u, v, w;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(d);
    for (auto& a : x) a = Z(rng);
    u.insert(u.end(), x.begin(), x.end());
    v.push_back(std::sin(x[0] + 0.5 * x[1]) + 0.3 * Z(rng));
  }
  const double lo = *std::min_element(v.begin(), v.end());
  std::uniform_real_distribution<double> U(lo - 5.0, lo - 1.0);
  for (std::size_t i = 0; i < n; ++i) w.push_back(U(rng));
  return TruncatedSample(d, std::move(u), std::move(v), std::move(w));
}

// Direct count of W_j <= y <= V_j, optionally floored on (min V, max V).
inline double risk(const TruncatedSample& s, double y, bool floor) {
  const double n = static_cast<double>(s.size());
  double count = 0.0, vmin = s.v(0), vmax = s.v(0);
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (s.w(j) <= y && y <= s.v(j)) count += 1.0;
    vmin = std::min(vmin, s.v(j));
    vmax = std::max(vmax, s.v(j));
  }
  double c = count / n;
  if (floor && y > vmin && y < vmax) c = std::max(c, 1.0 / n + 1.0 / (n * n));
  return c;
}

inline double F(const TruncatedSample& s, double y, bool floor) {
  const double n = static_cast<double>(s.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.v(i) <= y) prod *= 1.0 - 1.0 / (n * risk(s, s.v(i), floor));
  return 1.0 - prod;
}

inline double F_left(const TruncatedSample& s, double y, bool floor) {
  const double n = static_cast<double>(s.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.v(i) < y) prod *= 1.0 - 1.0 / (n * risk(s, s.v(i), floor));
  return 1.0 - prod;
}

inline double G(const TruncatedSample& s, double t, bool floor) {
  const double n = static_cast<double>(s.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.w(i) > t) prod *= 1.0 - 1.0 / (n * risk(s, s.w(i), floor));
  return prod;
}

inline double ecdf(const TruncatedSample& s, double y) {
  double c = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) c += s.v(i) <= y;
  return c / static_cast<double>(s.size());
}

// Classical Nadaraya-Watson of V on theta'U with the Epanechnikov kernel.
inline double nadaraya_watson(const TruncatedSample& s, const Eigen::VectorXd& theta, double x, double h) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double t = (x - theta.dot(s.u_vec(i))) / h;
    const double k = std::abs(t) <= 1.0 ? 0.75 * (1.0 - t * t) : 0.0;
    num += k * s.v(i);
    den += k;
  }
  return num / den;
}

// Central differences of theta -> g_hat(theta'u; theta), theta unconstrained.
inline Eigen::VectorXd fd_gradient(const trunc_sim::SmootherInput& in, const Eigen::VectorXd& theta,
                                   const Eigen::VectorXd& u, double step = 1e-5) {
  Eigen::VectorXd g(theta.size());
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp[k] += step;
    tm[k] -= step;
    g[k] = (trunc_sim::g_hat(in, tp, tp.dot(u)) - trunc_sim::g_hat(in, tm, tm.dot(u))) / (2.0 * step);
  }
  return g;
}

// Argmin angle of theta = (cos a, sin a) over `points` equally spaced a in [-pi/2, pi/2].
inline double grid_argmin_angle(const trunc_sim::Objective& obj, int points = 721) {
  const double pi = std::acos(-1.0);
  double best = 0.0, best_val = std::numeric_limits<double>::infinity();
  for (int j = 0; j < points; ++j) {
    const double a = -pi / 2 + pi * j / (points - 1);
    Eigen::Vector2d t(std::cos(a), std::sin(a));
    const double val = obj.evaluate(t).value;
    if (val < best_val) {
      best_val = val;
      best = a;
    }
  }
  return best;
}

// Angular distance between two lines through the origin.
inline double line_angle(double a, double b) {
  const double pi = std::acos(-1.0);
  double d = std::fmod(std::abs(a - b), pi);
  return std::min(d, pi - d);
}

inline double median(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const std::size_t m = x.size() / 2;
  return x.size() % 2 ? x[m] : 0.5 * (x[m - 1] + x[m]);
}

}  // namespace oracle
