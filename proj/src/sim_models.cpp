#include "trunc_sim/sim_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "trunc_sim/errors.hpp"
#include "trunc_sim/inference.hpp"

namespace trunc_sim {

namespace {

constexpr std::size_t kMaxRetries = 100;
constexpr std::uint64_t kCalibrationStream = std::uint64_t{1} << 40;

// One latent unit; the draw order (x, eps, t) is part of the reproducibility contract.
void draw_covariates(const PopulationModel& m, Rng& rng, Eigen::VectorXd& x) {
  if (m.covariate_law == CovariateLaw::uniform_box) {
    std::uniform_real_distribution<double> U(m.box_lower, m.box_upper);
    for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = U(rng);
  } else {
    std::normal_distribution<double> Z(0.0, 1.0);
    for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = Z(rng);
  }
}

double draw_response(const PopulationModel& m, const Eigen::VectorXd& x, Rng& rng) {
  std::normal_distribution<double> E(0.0, m.sigma);
  return m.link(m.theta0.coords().dot(x)) + E(rng);
}

// Standardized truncation draw: T = lambda + z, or T = a + (lambda - a) z.
double draw_truncation_noise(const PopulationModel& m, Rng& rng) {
  if (m.truncation_law == TruncationLaw::normal) return std::normal_distribution<double>(0.0, 1.0)(rng);
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

double truncation_from_noise(const PopulationModel& m, double lambda, double z) {
  if (m.truncation_law == TruncationLaw::normal) return lambda + z;
  return m.uniform_lower + (lambda - m.uniform_lower) * z;
}

PopulationModel base_model(int id, std::function<double(double)> link, Eigen::VectorXd theta) {
  PopulationModel m;
  m.id = id;
  m.link = std::move(link);
  m.theta0 = normalize(theta);
  m.d = static_cast<std::size_t>(theta.size());
  return m;
}

}  // namespace

PopulationModel model1() {
  auto m = base_model(1, [](double s) {
    const double c = s - 1.0 / std::numbers::sqrt2;
    return -c * c + 1.0;
  }, Eigen::Vector2d(1.0, 1.0));
  m.covariate_law = CovariateLaw::uniform_box;
  m.sigma = 0.2;
  m.truncation_law = TruncationLaw::normal;
  return m;
}

PopulationModel model2() {
  auto m = base_model(2, [](double s) { return std::sin(s); }, Eigen::Vector2d(1.0, 2.0));
  m.covariate_law = CovariateLaw::standard_normal;
  m.sigma = 0.5;
  m.truncation_law = TruncationLaw::uniform;
  return m;
}

PopulationModel model3() {
  auto m = base_model(3, [](double s) { return std::exp(2.0 * s); }, Eigen::Vector2d(0.6, 0.8));
  m.covariate_law = CovariateLaw::standard_normal;
  m.sigma = 1.0;
  m.truncation_law = TruncationLaw::normal;
  return m;
}

PopulationModel model_by_id(int id) {
  switch (id) {
    case 1: return model1();
    case 2: return model2();
    case 3: return model3();
  }
  throw std::invalid_argument("model must be 1, 2 or 3");
}

std::optional<double> published_lambda(const PopulationModel& model, double trunc_rate) {
  static constexpr double kRates[3] = {0.4, 0.2, 0.1};
  static constexpr double kTable[3][3] = {{-0.72, -2.4, -3.5}, {0.92, -0.13, -0.75}, {0.97, -0.20, -4.3}};
  if (model.id < 1 || model.id > 3) return std::nullopt;
  for (int k = 0; k < 3; ++k)
    if (std::abs(trunc_rate - kRates[k]) < 1e-9) return kTable[model.id - 1][k];
  return std::nullopt;
}

void check_lambda(const PopulationModel& model, double lambda) {
  if (!std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite");
  if (model.truncation_law == TruncationLaw::uniform && !(lambda > model.uniform_lower)) {
    std::ostringstream os;
    os << "uniform truncation needs lambda > " << model.uniform_lower;
    throw std::invalid_argument(os.str());
  }
}

double truncation_cdf(const PopulationModel& model, double lambda, double t) {
  if (model.truncation_law == TruncationLaw::normal) return 0.5 * std::erfc(-(t - lambda) / std::numbers::sqrt2);
  return std::clamp((t - model.uniform_lower) / (lambda - model.uniform_lower), 0.0, 1.0);
}

TruncatedSample generate_truncated(const PopulationModel& model, double lambda, std::size_t N, Rng& rng) {
  if (N < 1) throw std::invalid_argument("N must be at least 1");
  check_lambda(model, lambda);
  std::vector<double> u, v, w;
  Eigen::VectorXd x(static_cast<Eigen::Index>(model.d));
  for (std::size_t i = 0; i < N; ++i) {
    draw_covariates(model, rng, x);
    const double y = draw_response(model, x, rng);
    const double t = truncation_from_noise(model, lambda, draw_truncation_noise(model, rng));
    if (y < t) continue;
    u.insert(u.end(), x.data(), x.data() + x.size());
    v.push_back(y);
    w.push_back(t);
  }
  if (v.empty()) throw EmptySample("no unit survived truncation");
  return TruncatedSample(model.d, std::move(u), std::move(v), std::move(w));
}

double truncation_rate(const PopulationModel& model, double lambda, std::size_t draws, Rng& rng) {
  if (draws == 0) throw std::invalid_argument("draws must be positive");
  check_lambda(model, lambda);
  Eigen::VectorXd x(static_cast<Eigen::Index>(model.d));
  std::size_t cut = 0;
  for (std::size_t i = 0; i < draws; ++i) {
    draw_covariates(model, rng, x);
    const double y = draw_response(model, x, rng);
    if (y < truncation_from_noise(model, lambda, draw_truncation_noise(model, rng))) ++cut;
  }
  return static_cast<double>(cut) / static_cast<double>(draws);
}

Calibration calibrate_lambda(const PopulationModel& model, double target, Rng& rng, std::size_t draws,
                             double tolerance) {
  if (!(target > 0.0 && target < 1.0)) throw std::invalid_argument("target truncation rate must lie in (0, 1)");
  if (draws == 0) throw std::invalid_argument("draws must be positive");
  std::vector<double> y(draws), z(draws);
  Eigen::VectorXd x(static_cast<Eigen::Index>(model.d));
  for (std::size_t i = 0; i < draws; ++i) {
    draw_covariates(model, rng, x);
    y[i] = draw_response(model, x, rng);
    z[i] = draw_truncation_noise(model, rng);
  }
  auto rate = [&](double lambda) {
    std::size_t cut = 0;
    for (std::size_t i = 0; i < draws; ++i) cut += y[i] < truncation_from_noise(model, lambda, z[i]);
    return static_cast<double>(cut) / static_cast<double>(draws);
  };

  double lo, hi;
  if (model.truncation_law == TruncationLaw::normal) {
    lo = -1.0;
    hi = 1.0;
    for (int k = 0; k < 60 && rate(lo) >= target; ++k) lo = 2.0 * lo - 1.0;
    for (int k = 0; k < 60 && rate(hi) <= target; ++k) hi = 2.0 * hi + 1.0;
  } else {
    lo = model.uniform_lower + 1e-12;
    hi = model.uniform_lower + 1.0;
    for (int k = 0; k < 60 && rate(hi) <= target; ++k) hi = model.uniform_lower + 2.0 * (hi - model.uniform_lower);
  }
  if (!(rate(lo) < target && rate(hi) > target)) {
    std::ostringstream os;
    os << "cannot bracket truncation rate " << target << " for model " << model.id;
    throw CalibrationFailed(os.str());
  }
  for (int k = 0; k < 200 && hi - lo > 1e-10 * std::max(1.0, std::abs(lo)); ++k) {
    const double mid = 0.5 * (lo + hi);
    (rate(mid) < target ? lo : hi) = mid;
  }
  const double lambda = 0.5 * (lo + hi);
  const double achieved = rate(lambda);
  if (std::abs(achieved - target) > tolerance) {
    std::ostringstream os;
    os << "calibration reached rate " << achieved << " for target " << target;
    throw CalibrationFailed(os.str());
  }
  return {lambda, achieved};
}

double population_risk(const PopulationModel& model, const IndexParam& theta, std::size_t mc_draws, Rng& rng,
                       const Indicator& J) {
  if (mc_draws < 1000) throw std::invalid_argument("population_risk needs at least 1000 draws");
  if (theta.dim() != model.d) throw std::invalid_argument("theta dimension does not match the model");
  Eigen::VectorXd x(static_cast<Eigen::Index>(model.d));
  double acc = 0.0;
  for (std::size_t i = 0; i < mc_draws; ++i) {
    draw_covariates(model, rng, x);
    const double y = draw_response(model, x, rng);
    if (J && !J(x)) continue;
    const double r = y - model.link(theta.coords().dot(x));
    acc += r * r;
  }
  return acc / static_cast<double>(mc_draws);
}

void validate(const StudyConfig& config) {
  if (config.reps < 1) throw std::invalid_argument("reps must be at least 1");
  if (config.N_list.empty()) throw std::invalid_argument("N list is empty");
  if (config.trunc_list.empty()) throw std::invalid_argument("truncation-rate list is empty");
  for (auto N : config.N_list)
    if (N < 20) throw std::invalid_argument("every N must be at least 20");
  for (double r : config.trunc_list) {
    if (!(r > 0.0 && r < 1.0)) throw std::invalid_argument("truncation rates must lie in (0, 1)");
    if (config.lambda_source == LambdaSource::published && !published_lambda(config.model, r)) {
      std::ostringstream os;
      os << "no published lambda for model " << config.model.id << " at rate " << r;
      throw std::invalid_argument(os.str());
    }
  }
}

Rng substream(std::uint64_t master, std::uint64_t setting, std::uint64_t rep, std::uint64_t retry) {
  auto lo = [](std::uint64_t a) { return static_cast<std::uint32_t>(a); };
  auto hi = [](std::uint64_t a) { return static_cast<std::uint32_t>(a >> 32); };
  std::seed_seq seq{lo(master), hi(master), lo(setting), hi(setting), lo(rep), hi(rep), lo(retry), hi(retry)};
  return Rng(seq);
}

StudyResult run_study(const StudyConfig& config) {
  validate(config);
  const auto& model = config.model;
  const std::size_t nN = config.N_list.size();
  const std::size_t nT = config.trunc_list.size();

  StudyResult result;
  result.model_id = model.id;
  result.settings.resize(nT * nN);
  for (std::size_t t = 0; t < nT; ++t) {
    const double rate = config.trunc_list[t];
    double lambda;
    if (config.lambda_source == LambdaSource::published) {
      lambda = *published_lambda(model, rate);
    } else {
      auto rng = substream(config.seed, kCalibrationStream + t, 0, 0);
      lambda = calibrate_lambda(model, rate, rng, config.calibration_draws).lambda;
    }
    for (std::size_t k = 0; k < nN; ++k) {
      auto& s = result.settings[t * nN + k];
      s.N = config.N_list[k];
      s.trunc_rate = rate;
      s.lambda = lambda;
      s.replications.resize(config.reps);
    }
  }

  const auto tasks = static_cast<std::ptrdiff_t>(result.settings.size() * config.reps);
#ifdef _OPENMP
  const int threads = config.jobs > 0 ? config.jobs : omp_get_max_threads();
#endif
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (std::ptrdiff_t task = 0; task < tasks; ++task) {
    const auto si = static_cast<std::size_t>(task) / config.reps;
    const auto rep = static_cast<std::size_t>(task) % config.reps;
    auto& setting = result.settings[si];
    auto& out = setting.replications[rep];
    try {
      std::optional<TruncatedSample> sample;
      for (std::size_t retry = 0; !sample; ++retry) {
        if (retry > kMaxRetries) throw EmptySample("every regenerated sample was empty");
        auto rng = substream(config.seed, si, rep, retry);
        try {
          sample = generate_truncated(model, setting.lambda, setting.N, rng);
        } catch (const EmptySample&) {
          out.retries = retry + 1;
        }
      }
      FitResult f = fit(*sample, config.fit_config);
      out.theta_hat = f.theta_hat.coords();
      out.n = sample->size();
      out.converged = f.converged;
      if (config.compute_se) {
        try {
          out.se = sandwich_covariance(*sample, f).se;
        } catch (const std::exception&) {
          out.se.reset();
        }
      }
      out.ok = true;
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
    }
  }

  const auto theta0 = model.theta0.coords();
  for (auto& setting : result.settings) {
    const auto& s = setting;
    std::size_t ok = 0;
    double n_sum = 0.0;
    for (const auto& r : s.replications) {
      if (!r.ok) continue;
      ++ok;
      n_sum += static_cast<double>(r.n);
    }
    setting.failures = s.replications.size() - ok;
    setting.mean_n = ok ? n_sum / static_cast<double>(ok) : std::numeric_limits<double>::quiet_NaN();
    setting.flagged = 10 * setting.failures > s.replications.size();
    for (std::size_t c = 0; c < model.d; ++c) {
      StudyCell cell{s.N, s.trunc_rate, s.lambda, c, 0.0, 0.0, ok, setting.failures, setting.mean_n, setting.flagged};
      for (const auto& r : s.replications) {
        if (!r.ok) continue;
        const double e = r.theta_hat[static_cast<Eigen::Index>(c)] - theta0[static_cast<Eigen::Index>(c)];
        cell.bias += e;
        cell.mse += e * e;
      }
      if (ok) {
        cell.bias /= static_cast<double>(ok);
        cell.mse /= static_cast<double>(ok);
      } else {
        cell.bias = cell.mse = std::numeric_limits<double>::quiet_NaN();
      }
      result.cells.push_back(cell);
    }
  }
  return result;
}

std::vector<CurvePoint> curve_export(const PopulationModel& model, const FitResult& fit, std::size_t grid) {
  if (grid < 1) throw std::invalid_argument("grid must be positive");
  const double lo = fit.link_curve.index_quantile(0.025);
  const double hi = fit.link_curve.index_quantile(0.975);
  std::vector<CurvePoint> out(grid);
  for (std::size_t k = 0; k < grid; ++k) {
    const double s = grid == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(grid - 1);
    out[k] = {s, model.link(s), fit.link_curve.value_or_nan(s)};
  }
  return out;
}

}  // namespace trunc_sim
