#pragma once

// Benchmark single-index models with a randomly left-truncated response:
// latent (X, Y = g(theta0'X) + eps, T) are drawn independently and only units
// with Y >= T are kept. Also truncation-rate calibration, a Monte-Carlo
// population criterion and the replicated bias/MSE study.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trunc_sim/index_estimator.hpp"
#include "trunc_sim/index_param.hpp"
#include "trunc_sim/truncation.hpp"

namespace trunc_sim {

using Rng = std::mt19937_64;

enum class CovariateLaw { uniform_box, standard_normal };
enum class TruncationLaw { normal, uniform };  // N(lambda, 1) or U(uniform_lower, lambda)

struct PopulationModel {
  int id = 0;
  std::function<double(double)> link;
  IndexParam theta0;
  CovariateLaw covariate_law = CovariateLaw::standard_normal;
  double box_lower = -2.0, box_upper = 2.0;
  double sigma = 1.0;
  TruncationLaw truncation_law = TruncationLaw::normal;
  double uniform_lower = -1.5;
  std::size_t d = 2;
};

// Y = -(s - 1/sqrt 2)^2 + 1 + eps, X ~ U[-2,2]^2, sigma 0.2, T ~ N(lambda, 1).
PopulationModel model1();
// Y = sin(s) + eps, X ~ N(0, I_2), sigma 0.5, T ~ U(-1.5, lambda).
PopulationModel model2();
// Y = exp(2s) + eps, X ~ N(0, I_2), sigma 1, T ~ N(lambda, 1).
PopulationModel model3();
// 1, 2 or 3; throws std::invalid_argument otherwise.
PopulationModel model_by_id(int id);

// Published lambda for truncation rates 0.4, 0.2 and 0.1.
std::optional<double> published_lambda(const PopulationModel& model, double trunc_rate);

// Throws std::invalid_argument if lambda is outside the truncation family.
void check_lambda(const PopulationModel& model, double lambda);

// CDF G of T.
double truncation_cdf(const PopulationModel& model, double lambda, double t);

// Keeps the units of N latent draws with Y >= T. Throws EmptySample if none survive.
TruncatedSample generate_truncated(const PopulationModel& model, double lambda, std::size_t N, Rng& rng);

// Monte-Carlo estimate of P(Y < T).
double truncation_rate(const PopulationModel& model, double lambda, std::size_t draws, Rng& rng);

struct Calibration {
  double lambda = 0.0;
  double achieved_rate = 0.0;  // on the calibration draws
};

// Bisection in lambda on common random numbers until P(Y < T) is within
// tolerance of target. Throws CalibrationFailed.
Calibration calibrate_lambda(const PopulationModel& model, double target_trunc, Rng& rng,
                             std::size_t draws = 200000, double tolerance = 0.005);

// E[(Y - g(theta'X))^2 J(X)] under the untruncated law, g the model's link.
using Indicator = std::function<bool(const VectorRef&)>;
double population_risk(const PopulationModel& model, const IndexParam& theta, std::size_t mc_draws, Rng& rng,
                       const Indicator& J = {});

enum class LambdaSource { calibrate, published };

struct StudyConfig {
  PopulationModel model;
  std::vector<std::size_t> N_list;
  std::vector<double> trunc_list;
  std::size_t reps = 500;
  std::uint64_t seed = 1;
  FitConfig fit_config;
  LambdaSource lambda_source = LambdaSource::calibrate;
  std::size_t calibration_draws = 200000;
  bool compute_se = false;
  int jobs = 0;  // 0: OpenMP default
};

struct Replication {
  bool ok = false;
  Eigen::VectorXd theta_hat;
  std::optional<Eigen::VectorXd> se;
  std::size_t n = 0;
  bool converged = false;
  std::size_t retries = 0;
  std::string error;
};

struct StudySetting {
  std::size_t N = 0;
  double trunc_rate = 0.0;
  double lambda = 0.0;
  std::vector<Replication> replications;
  std::size_t failures = 0;
  double mean_n = 0.0;
  bool flagged = false;  // more than 10% failures
};

struct StudyCell {
  std::size_t N = 0;
  double trunc_rate = 0.0;
  double lambda = 0.0;
  std::size_t coord = 0;
  double bias = 0.0;
  double mse = 0.0;
  std::size_t reps = 0;
  std::size_t failures = 0;
  double mean_n = 0.0;
  bool flagged = false;
};

struct StudyResult {
  int model_id = 0;
  std::vector<StudySetting> settings;  // trunc-major, then N
  std::vector<StudyCell> cells;        // per setting, per coordinate
};

void validate(const StudyConfig& config);

// Seed sequence for one replication substream.
Rng substream(std::uint64_t master, std::uint64_t setting, std::uint64_t rep, std::uint64_t retry);

StudyResult run_study(const StudyConfig& config);

struct CurvePoint {
  double s, g_true, g_hat;
};

// grid points evenly spanning the central 95% of the observed theta_hat'U_i.
std::vector<CurvePoint> curve_export(const PopulationModel& model, const FitResult& fit, std::size_t grid);

}  // namespace trunc_sim
