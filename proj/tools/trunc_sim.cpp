// trunc_sim: fit truncated single-index data, calibrate truncation, run studies.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "trunc_sim/errors.hpp"
#include "trunc_sim/index_estimator.hpp"
#include "trunc_sim/inference.hpp"
#include "trunc_sim/io.hpp"
#include "trunc_sim/sim_models.hpp"

using namespace trunc_sim;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 2, kEstimation = 3, kInference = 4 };

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

double parse_real(const std::string& s, const std::string& what) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) throw UsageError(what + ": '" + s + "' is not a number");
  return x;
}

template <class T>
std::vector<T> parse_list(const std::string& s, const std::string& what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const double x = parse_real(item, what);
    if constexpr (std::is_integral_v<T>) {
      if (x != static_cast<double>(static_cast<T>(x)) || x < 0) throw UsageError(what + ": '" + item + "' is not a count");
    }
    out.push_back(static_cast<T>(x));
  }
  if (out.empty()) throw UsageError(what + " is empty");
  return out;
}

void check_rate(double r) {
  if (!(r > 0.0 && r < 1.0)) throw UsageError("truncation rate must lie in (0, 1)");
}

json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(number(v[k]));
  return a;
}

void emit(const std::string& output, const std::string& content) {
  if (output.empty() || output == "-") {
    std::cout << content;
  } else {
    atomic_write(output, content);
  }
}

int default_jobs() {
  if (const char* env = std::getenv("TRUNC_SIM_THREADS")) {
    try {
      return std::max(0, std::stoi(env));
    } catch (const std::exception&) {
      throw UsageError("TRUNC_SIM_THREADS must be an integer");
    }
  }
  return 0;
}

struct FitFlags {
  std::string bandwidth = "auto";
  std::string kernel = "epanechnikov";
  std::vector<std::string> trim;
  std::string floor = "on";
  std::string ci = "0.95";
  std::uint64_t seed = 0;
  std::string output;

  void add_to(CLI::App* cmd, bool with_ci, bool with_seed) {
    cmd->add_option("--bandwidth", bandwidth, "auto or a positive bandwidth")->capture_default_str();
    cmd->add_option("--kernel", kernel, "epanechnikov, quartic or triweight")->capture_default_str();
    cmd->add_option("--trim", trim, "q_lo q_hi, or none (default 0.025 0.975)")->expected(1, 2);
    cmd->add_option("--floor", floor, "on or off")->check(CLI::IsMember({"on", "off"}))->capture_default_str();
    if (with_ci) cmd->add_option("--ci", ci, "confidence level, or none")->capture_default_str();
    if (with_seed) cmd->add_option("--seed", seed, "optimizer start shift")->capture_default_str();
  }

  FitConfig config() const {
    FitConfig c;
    c.kernel.family = parse_kernel(kernel);
    if (bandwidth != "auto") {
      const double h = parse_real(bandwidth, "--bandwidth");
      if (!(h > 0.0)) throw UsageError("--bandwidth must be positive");
      c.kernel.fixed_bandwidth = h;
    }
    if (trim.size() == 1) {
      if (trim[0] != "none") throw UsageError("--trim takes 'none' or two quantiles");
      c.trimming = TrimmingSpec::none();
    } else if (trim.size() == 2) {
      const double lo = parse_real(trim[0], "--trim"), hi = parse_real(trim[1], "--trim");
      if (!(0.0 <= lo && lo < hi && hi <= 1.0)) throw UsageError("--trim needs 0 <= q_lo < q_hi <= 1");
      c.trimming = TrimmingSpec::quantile_box(lo, hi);
    }
    c.use_floor = floor == "on";
    c.seed = seed;
    return c;
  }

  std::optional<double> level() const {
    if (ci == "none") return std::nullopt;
    const double l = parse_real(ci, "--ci");
    if (!(l > 0.0 && l < 1.0)) throw UsageError("--ci must lie in (0, 1)");
    return l;
  }
};

int cmd_fit(const std::string& input, const FitFlags& flags) {
  const auto config = flags.config();
  const auto level = flags.level();
  const auto sample = read_sample_csv(input);
  auto result = fit(sample, config);

  json out;
  out["theta_hat"] = vec(result.theta_hat.coords());
  out["alpha_hat"] = result.alpha_hat;
  out["objective"] = result.objective_value;
  out["n"] = result.n;
  out["n_used"] = result.n_used;
  out["converged"] = result.converged;
  out["bandwidth"] = result.link_curve.smoother().h;
  out["kernel"] = kernel_name(config.kernel.family);
  out["se"] = nullptr;
  out["ci"] = nullptr;
  int code = kOk;
  if (level) {
    try {
      const auto infl = sandwich_covariance(sample, result);
      attach_covariance(result, infl);
      out["se"] = vec(infl.se);
      json ci = json::array();
      for (const auto& [lo, hi] : confidence_intervals(infl, result, *level)) ci.push_back({number(lo), number(hi)});
      out["ci"] = ci;
      out["ci_level"] = *level;
    } catch (const SingularLambda& e) {
      result.warnings.push_back(std::string("inference unavailable: ") + e.what());
      std::cerr << "trunc_sim: " << e.what() << "\n";
      code = kInference;
    }
  }
  out["warnings"] = result.warnings;

  json s = json::array(), g = json::array();
  const double lo = result.link_curve.index_quantile(0.025), hi = result.link_curve.index_quantile(0.975);
  for (int k = 0; k < 200; ++k) {
    const double x = lo + (hi - lo) * k / 199.0;
    s.push_back(x);
    g.push_back(number(result.link_curve.value_or_nan(x)));
  }
  out["link_curve"] = {{"s", s}, {"g_hat", g}};
  emit(flags.output, out.dump(2) + "\n");
  return code;
}

struct SimFlags {
  int model = 1;
  std::string N = "50,100,200";
  std::string trunc = "0.4,0.2,0.1";
  std::size_t reps = 500;
  std::uint64_t seed = 1;
  int jobs = -1;
  std::string lambda = "auto";
  std::string format;
  std::string output;
};

std::string format_for(const std::string& format, const std::string& output) {
  if (!format.empty()) return format;
  return output.size() >= 5 && output.substr(output.size() - 5) == ".json" ? "json" : "csv";
}

int cmd_simulate(const SimFlags& f, const FitFlags& fit_flags) {
  if (f.reps < 1) throw UsageError("--reps must be at least 1");
  StudyConfig c;
  c.model = model_by_id(f.model);
  c.N_list = parse_list<std::size_t>(f.N, "--N");
  c.trunc_list = parse_list<double>(f.trunc, "--trunc");
  for (double r : c.trunc_list) check_rate(r);
  for (auto n : c.N_list)
    if (n < 20) throw UsageError("--N values must be at least 20");
  c.reps = f.reps;
  c.seed = f.seed;
  c.jobs = f.jobs >= 0 ? f.jobs : default_jobs();
  c.lambda_source = f.lambda == "paper" ? LambdaSource::published : LambdaSource::calibrate;
  c.fit_config = fit_flags.config();
  validate(c);
  const auto result = run_study(c);
  for (const auto& s : result.settings)
    if (s.flagged)
      std::cerr << "trunc_sim: warning: N=" << s.N << " rate=" << s.trunc_rate << ": " << s.failures << " of "
                << s.replications.size() << " replications failed\n";
  emit(f.output, format_for(f.format, f.output) == "json" ? study_json(result) : study_csv(result));
  return kOk;
}

int cmd_calibrate(int model_id, double rate, std::uint64_t seed, std::size_t draws) {
  check_rate(rate);
  const auto model = model_by_id(model_id);
  auto rng = substream(seed, 0, 0, 0);
  const auto cal = calibrate_lambda(model, rate, rng, draws);
  json out{{"model", model_id}, {"target", rate}, {"lambda", cal.lambda}, {"achieved_rate", cal.achieved_rate}};
  if (auto p = published_lambda(model, rate)) out["published_lambda"] = *p;
  std::cout << out.dump(2) << "\n";
  return kOk;
}

struct CurveFlags {
  int model = 1;
  std::size_t N = 200;
  double trunc = 0.2;
  std::size_t grid = 200;
  std::uint64_t seed = 1;
  std::string lambda = "auto";
  std::string output;
};

int cmd_curves(const CurveFlags& f, const FitFlags& fit_flags) {
  check_rate(f.trunc);
  if (f.N < 20) throw UsageError("--N must be at least 20");
  if (f.grid < 1) throw UsageError("--grid must be positive");
  const auto model = model_by_id(f.model);
  const auto config = fit_flags.config();
  double lambda;
  if (f.lambda == "paper") {
    const auto p = published_lambda(model, f.trunc);
    if (!p) throw UsageError("no published lambda for this model and rate");
    lambda = *p;
  } else {
    auto rng = substream(f.seed, std::uint64_t{1} << 40, 0, 0);
    lambda = calibrate_lambda(model, f.trunc, rng).lambda;
  }
  auto rng = substream(f.seed, 0, 0, 0);
  const auto sample = generate_truncated(model, lambda, f.N, rng);
  const auto result = fit(sample, config);
  emit(f.output, curve_csv(curve_export(model, result, f.grid)));
  const json meta{{"model", f.model},
                  {"N", f.N},
                  {"n", result.n},
                  {"trunc_rate", f.trunc},
                  {"lambda", lambda},
                  {"theta_hat", vec(result.theta_hat.coords())},
                  {"theta0", vec(model.theta0.coords())},
                  {"converged", result.converged}};
  if (!f.output.empty() && f.output != "-") atomic_write(f.output + ".meta.json", meta.dump(2) + "\n");
  else std::cerr << meta.dump() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-index regression with a left-truncated response", "trunc_sim"};
  app.require_subcommand(1);

  std::string input;
  FitFlags fit_flags;
  auto* fit_cmd = app.add_subcommand("fit", "Estimate theta, the link and standard errors from a CSV");
  fit_cmd->add_option("input", input, "CSV with header u1,...,ud,v,w")->required();
  fit_flags.add_to(fit_cmd, true, true);
  fit_cmd->add_option("--output", fit_flags.output, "JSON output path (default stdout)");

  SimFlags sim;
  FitFlags sim_fit;
  auto* sim_cmd = app.add_subcommand("simulate", "Replicated bias/MSE study");
  sim_cmd->add_option("--model", sim.model, "1, 2 or 3")->check(CLI::Range(1, 3))->capture_default_str();
  sim_cmd->add_option("--N", sim.N, "comma-separated full sample sizes")->capture_default_str();
  sim_cmd->add_option("--trunc", sim.trunc, "comma-separated truncation rates")->capture_default_str();
  sim_cmd->add_option("--reps", sim.reps, "replications per setting")->capture_default_str();
  sim_cmd->add_option("--seed", sim.seed, "master seed")->capture_default_str();
  sim_cmd->add_option("--jobs", sim.jobs, "worker threads (default TRUNC_SIM_THREADS or all)");
  sim_cmd->add_option("--lambda", sim.lambda, "auto (calibrate) or paper (published values)")
      ->check(CLI::IsMember({"auto", "paper"}))
      ->capture_default_str();
  sim_cmd->add_option("--format", sim.format, "csv or json (default from the output extension)")
      ->check(CLI::IsMember({"csv", "json"}));
  sim_cmd->add_option("--output", sim.output, "output path (default stdout)");
  sim_cmd->add_option("--kernel", sim_fit.kernel, "epanechnikov, quartic or triweight")->capture_default_str();
  sim_cmd->add_option("--bandwidth", sim_fit.bandwidth, "auto or a positive bandwidth")->capture_default_str();

  int cal_model = 1;
  double cal_rate = 0.2;
  std::uint64_t cal_seed = 1;
  std::size_t cal_draws = 200000;
  auto* cal_cmd = app.add_subcommand("calibrate", "Find lambda giving a target truncation rate");
  cal_cmd->add_option("--model", cal_model, "1, 2 or 3")->check(CLI::Range(1, 3))->required();
  cal_cmd->add_option("--trunc", cal_rate, "target P(Y < T)")->required();
  cal_cmd->add_option("--seed", cal_seed, "seed")->capture_default_str();
  cal_cmd->add_option("--draws", cal_draws, "Monte-Carlo draws")->check(CLI::PositiveNumber)->capture_default_str();

  CurveFlags curves;
  FitFlags curve_fit;
  auto* curve_cmd = app.add_subcommand("curves", "Fit one simulated sample and export true and estimated links");
  curve_cmd->add_option("--model", curves.model, "1, 2 or 3")->check(CLI::Range(1, 3))->capture_default_str();
  curve_cmd->add_option("--N", curves.N, "full sample size")->capture_default_str();
  curve_cmd->add_option("--trunc", curves.trunc, "truncation rate")->capture_default_str();
  curve_cmd->add_option("--grid", curves.grid, "grid points")->capture_default_str();
  curve_cmd->add_option("--seed", curves.seed, "seed")->capture_default_str();
  curve_cmd->add_option("--lambda", curves.lambda, "auto or paper")
      ->check(CLI::IsMember({"auto", "paper"}))
      ->capture_default_str();
  curve_cmd->add_option("--output", curves.output, "CSV path; metadata goes to <path>.meta.json");
  curve_fit.add_to(curve_cmd, false, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*fit_cmd) return cmd_fit(input, fit_flags);
    if (*sim_cmd) return cmd_simulate(sim, sim_fit);
    if (*cal_cmd) return cmd_calibrate(cal_model, cal_rate, cal_seed, cal_draws);
    if (*curve_cmd) return cmd_curves(curves, curve_fit);
  } catch (const SingularLambda& e) {
    std::cerr << "trunc_sim: " << e.what() << "\n";
    return kInference;
  } catch (const EstimationError& e) {
    std::cerr << "trunc_sim: estimation failed: " << e.what() << "\n";
    return kEstimation;
  } catch (const CalibrationFailed& e) {
    std::cerr << "trunc_sim: calibration failed: " << e.what() << "\n";
    return kEstimation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "trunc_sim: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "trunc_sim: " << e.what() << "\n";
    return kEstimation;
  }
  return kUsage;
}
