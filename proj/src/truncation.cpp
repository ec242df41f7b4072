#include "trunc_sim/truncation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "trunc_sim/errors.hpp"

namespace trunc_sim {

namespace {

std::vector<std::size_t> argsort(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  return idx;
}

// Breaks exact ties by shifting the k-th repeat of a value by k * eps in the
// given direction (+1 for V, -1 for W so that w <= v is preserved).
// Returns the number of records moved.
std::size_t jitter_ties(std::vector<double>& x, double direction) {
  if (x.size() < 2) return 0;
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  double range = *hi - *lo;
  if (!(range > 0.0)) range = std::max(1.0, std::abs(*lo));
  const double eps = 1e-9 * range;
  std::size_t moved = 0;
  for (int pass = 0; pass < 8; ++pass) {
    const auto idx = argsort(x);
    const std::vector<double> orig = x;
    bool tied = false;
    std::size_t run = 0;
    for (std::size_t k = 1; k < idx.size(); ++k) {
      if (orig[idx[k]] != orig[idx[k - 1]]) {
        run = 0;
        continue;
      }
      ++run;
      tied = true;
      x[idx[k]] += direction * static_cast<double>(run) * eps;
      ++moved;
    }
    if (!tied) break;
  }
  return moved;
}

// n * C(y), from integer counts so that unfloored factors are exact.
double scaled_risk(const TruncatedSample& s, double y, bool use_floor) {
  const auto sv = s.sorted_v();
  const auto sw = s.sorted_w();
  const auto w_le = std::upper_bound(sw.begin(), sw.end(), y) - sw.begin();
  const auto v_lt = std::lower_bound(sv.begin(), sv.end(), y) - sv.begin();
  double m = static_cast<double>(w_le - v_lt);
  if (use_floor && y > sv.front() && y < sv.back()) {
    const double n = static_cast<double>(s.size());
    m = std::max(m, 1.0 + 1.0 / n);
  }
  return m;
}

}  // namespace

TruncatedSample::TruncatedSample(std::size_t dim, std::vector<double> covariates,
                                 std::vector<double> responses, std::vector<double> truncation) {
  auto d = std::make_shared<Data>();
  const std::size_t n = responses.size();
  if (dim == 0) throw InvalidSample("covariate dimension must be positive");
  if (n == 0) throw InvalidSample("sample is empty");
  if (truncation.size() != n || covariates.size() != n * dim)
    throw InvalidSample("inconsistent record lengths");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(responses[i]) || !std::isfinite(truncation[i])) {
      std::ostringstream os;
      os << "record " << i + 1 << ": non-finite v or w";
      throw InvalidSample(os.str());
    }
    if (truncation[i] > responses[i]) {
      std::ostringstream os;
      os << "record " << i + 1 << ": truncation time w=" << truncation[i] << " exceeds response v="
         << responses[i];
      throw InvalidSample(os.str());
    }
    for (std::size_t j = 0; j < dim; ++j)
      if (!std::isfinite(covariates[i * dim + j])) {
        std::ostringstream os;
        os << "record " << i + 1 << ": non-finite covariate";
        throw InvalidSample(os.str());
      }
  }
  d->dim = dim;
  d->u = std::move(covariates);
  d->v = std::move(responses);
  d->w = std::move(truncation);

  if (auto moved = jitter_ties(d->v, +1.0); moved > 0)
    d->warnings.push_back("broke " + std::to_string(moved) + " tie(s) in v by deterministic jitter");
  if (auto moved = jitter_ties(d->w, -1.0); moved > 0)
    d->warnings.push_back("broke " + std::to_string(moved) + " tie(s) in w by deterministic jitter");

  d->order_v = argsort(d->v);
  d->order_w = argsort(d->w);
  d->sorted_v.resize(n);
  d->sorted_w.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    d->sorted_v[k] = d->v[d->order_v[k]];
    d->sorted_w[k] = d->w[d->order_w[k]];
  }
  data_ = std::move(d);
}

StepFunction::StepFunction(double base, std::vector<double> jumps, std::vector<double> values)
    : base_(base), jumps_(std::move(jumps)), values_(std::move(values)) {
  if (jumps_.size() != values_.size()) throw std::invalid_argument("StepFunction: size mismatch");
  for (std::size_t k = 1; k < jumps_.size(); ++k)
    if (!(jumps_[k] > jumps_[k - 1])) throw std::invalid_argument("StepFunction: jumps must increase");
}

double StepFunction::operator()(double y) const {
  const auto k = std::upper_bound(jumps_.begin(), jumps_.end(), y) - jumps_.begin();
  return k == 0 ? base_ : values_[static_cast<std::size_t>(k - 1)];
}

double StepFunction::left_limit(double y) const {
  const auto k = std::lower_bound(jumps_.begin(), jumps_.end(), y) - jumps_.begin();
  return k == 0 ? base_ : values_[static_cast<std::size_t>(k - 1)];
}

double c_n(const TruncatedSample& sample, double y) {
  return scaled_risk(sample, y, false) / static_cast<double>(sample.size());
}

double c_tilde(const TruncatedSample& sample, double y) {
  return scaled_risk(sample, y, true) / static_cast<double>(sample.size());
}

double risk_fraction(const TruncatedSample& sample, double y, bool use_floor) {
  return scaled_risk(sample, y, use_floor) / static_cast<double>(sample.size());
}

StepFunction lynden_bell_F(const TruncatedSample& sample, bool use_floor) {
  const auto sv = sample.sorted_v();
  std::vector<double> jumps(sv.begin(), sv.end());
  std::vector<double> values(sv.size());
  double surv = 1.0;
  for (std::size_t k = 0; k < sv.size(); ++k) {
    const double m = scaled_risk(sample, sv[k], use_floor);
    if (!(m > 0.0)) throw DegenerateRisk("empty risk set at an observed response");
    surv *= 1.0 - 1.0 / m;
    values[k] = 1.0 - surv;
  }
  return {0.0, std::move(jumps), std::move(values)};
}

StepFunction lynden_bell_G(const TruncatedSample& sample, bool use_floor) {
  const auto sw = sample.sorted_w();
  const std::size_t n = sw.size();
  std::vector<double> factors(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double m = scaled_risk(sample, sw[k], use_floor);
    if (!(m > 0.0)) throw DegenerateRisk("empty risk set at an observed truncation time");
    factors[k] = 1.0 - 1.0 / m;
  }
  // values[k] = prod_{m > k} factors[m]
  std::vector<double> values(n);
  double prod = 1.0;
  for (std::size_t k = n; k-- > 0;) {
    values[k] = prod;
    prod *= factors[k];
  }
  return {prod, std::vector<double>(sw.begin(), sw.end()), std::move(values)};
}

StepFunction empirical_F_star(const TruncatedSample& sample) {
  const auto sv = sample.sorted_v();
  const double n = static_cast<double>(sv.size());
  std::vector<double> values(sv.size());
  for (std::size_t k = 0; k < sv.size(); ++k) values[k] = static_cast<double>(k + 1) / n;
  return {0.0, std::vector<double>(sv.begin(), sv.end()), std::move(values)};
}

std::vector<double> alpha_ratio_profile(const TruncatedSample& sample, bool use_floor) {
  const auto F = lynden_bell_F(sample, use_floor);
  const auto G = lynden_bell_G(sample, use_floor);
  const auto sv = sample.sorted_v();
  std::vector<double> ratio(sv.size());
  for (std::size_t k = 0; k < sv.size(); ++k) {
    const double c = risk_fraction(sample, sv[k], use_floor);
    const double f_left = k == 0 ? 0.0 : F.values()[k - 1];
    ratio[k] = c > 0.0 ? G(sv[k]) * (1.0 - f_left) / c : std::nan("");
  }
  return ratio;
}

double alpha_n(const TruncatedSample& sample, bool use_floor) {
  const auto F = lynden_bell_F(sample, use_floor);
  const auto G = lynden_bell_G(sample, use_floor);
  const auto sv = sample.sorted_v();
  auto ratio_at = [&](std::size_t k, bool& informative) {
    const double c = risk_fraction(sample, sv[k], use_floor);
    const double g = G(sv[k]);
    const double surv_left = 1.0 - (k == 0 ? 0.0 : F.values()[k - 1]);
    informative = c > 0.0 && g > 0.0 && surv_left > 0.0;
    return informative ? g * surv_left / c : 0.0;
  };
  bool ok = false;
  const double alpha = ratio_at(0, ok);
  if (!ok) throw DegenerateRisk("alpha_n: G_n vanishes at the smallest response");
  for (std::size_t k = 1; k < sv.size(); ++k) {
    bool informative = false;
    const double r = ratio_at(k, informative);
    if (informative && std::abs(r - alpha) > 1e-10 * alpha) {
      std::ostringstream os;
      os.precision(17);
      os << "alpha_n ratio not constant: " << alpha << " at V_(1) vs " << r << " at V_(" << k + 1 << ")";
      throw InconsistentAlpha(os.str());
    }
  }
  return alpha;
}

WeightedSample lynden_bell_weights(const TruncatedSample& sample, bool use_floor) {
  const double alpha = alpha_n(sample, use_floor);
  const auto G = lynden_bell_G(sample, use_floor);
  const std::size_t n = sample.size();
  std::vector<double> weight(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = G(sample.v(i));
    if (!(g > 0.0)) throw ZeroWeightDenominator("G_n(V_i) = 0 at record " + std::to_string(i + 1));
    weight[i] = alpha / (static_cast<double>(n) * g);
  }
  return {sample, std::move(weight)};
}

}  // namespace trunc_sim
