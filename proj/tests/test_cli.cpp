#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "trunc_sim/io.hpp"
#include "trunc_sim/sim_models.hpp"

using namespace trunc_sim;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto p = fs::temp_directory_path() / ("trunc_sim_cli_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Run run(const std::string& args, const std::string& env = "") {
  const auto out = workdir() / "stdout", err = workdir() / "stderr";
  const std::string cmd =
      env + " \"" TRUNC_SIM_CLI "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

fs::path write_model_csv(int model, double lambda, std::size_t N, std::uint64_t seed, const std::string& name) {
  auto rng = substream(seed, 0, 0, 0);
  const auto s = generate_truncated(model_by_id(model), lambda, N, rng);
  const auto path = workdir() / name;
  std::ofstream out(path);
  write_sample_csv(out, s);
  return path;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("fit a generated Model 3 sample") {
  const auto csv = write_model_csv(3, -0.2, 200, 7, "m3.csv");
  const auto r = run("fit " + csv.string() + " --ci 0.95");
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  const double a = j["theta_hat"][0], b = j["theta_hat"][1];
  CHECK(std::hypot(a - 0.6, b - 0.8) < 0.1);
  for (const char* key : {"theta_hat", "se", "ci", "alpha_hat", "objective", "n", "n_used", "converged", "warnings"})
    CHECK(j.contains(key));
  CHECK(j["se"].size() == 2);
  CHECK(j["ci"][0][0].get<double>() < a);
  CHECK(j["ci"][0][1].get<double>() > a);
  CHECK(j["link_curve"]["s"].size() == 200);
  CHECK(j["link_curve"]["g_hat"].size() == 200);

  const auto none = run("fit " + csv.string() + " --trim none --ci none");
  REQUIRE(none.code == 0);
  const auto k = json::parse(none.out);
  CHECK(std::hypot(k["theta_hat"][0].get<double>() - a, k["theta_hat"][1].get<double>() - b) < 0.05);
  CHECK(k["se"].is_null());

  const auto out = workdir() / "fit.json";
  REQUIRE(run("fit " + csv.string() + " --output " + out.string()).code == 0);
  CHECK(json::parse(slurp(out))["n"] == j["n"]);

  CHECK(run("fit " + csv.string() + " --kernel quartic --bandwidth 0.6 --floor off --trim 0.05 0.95").code == 0);
}

TEST_CASE("fit input validation") {
  const auto bad = workdir() / "bad.csv";
  std::ofstream(bad) << "u1,u2,v,w\n0.1,0.2,1.0,0.0\n0.3,0.1,0.5,0.9\n";
  const auto r = run("fit " + bad.string());
  CHECK(r.code == 2);
  CHECK(r.err.find("2") != std::string::npos);

  CHECK(run("fit " + (workdir() / "missing.csv").string()).code == 2);
  const auto csv = write_model_csv(2, -0.13, 100, 3, "m2.csv");
  CHECK(run("fit " + csv.string() + " --bandwidth -1").code == 2);
  CHECK(run("fit " + csv.string() + " --kernel gaussian").code == 2);
  CHECK(run("fit " + csv.string() + " --ci 1.5").code == 2);
  CHECK(run("fit " + csv.string() + " --bogus").code == 2);
}

TEST_CASE("estimation and inference failures map to their exit codes") {
  // With a bandwidth far below the design spacing every window holds one point,
  // so the link gradient vanishes and Lambda is singular.
  const auto csv = write_model_csv(1, -2.4, 100, 5, "m1.csv");
  const auto r = run("fit " + csv.string() + " --bandwidth 1e-9 --ci 0.95");
  CHECK(r.code == 4);
  CHECK(json::parse(r.out)["se"].is_null());
  CHECK(run("fit " + csv.string() + " --bandwidth 1e-9 --ci none").code == 0);

  const auto tiny = workdir() / "tiny.csv";
  std::ofstream(tiny) << "u1,u2,v,w\n0.1,0.2,1.0,0.0\n";
  CHECK(run("fit " + tiny.string()).code == 2);
  // One draw cannot hit the target rate within tolerance.
  CHECK(run("calibrate --model 1 --trunc 0.5 --draws 1").code == 3);
}

TEST_CASE("simulate") {
  const auto r = run("simulate --model 1 --N 50,100,200 --trunc 0.4,0.2,0.1 --reps 5 --lambda paper");
  REQUIRE(r.code == 0);
  CHECK(count_lines(r.out) == 19);
  CHECK(r.out.rfind("model,lambda,trunc_rate,N,coord,bias,mse,reps,failures,mean_n\n", 0) == 0);

  const auto p = run("simulate --model 2 --N 50 --trunc 0.4 --reps 3 --lambda paper --format json");
  REQUIRE(p.code == 0);
  const auto j = json::parse(p.out);
  CHECK(j["cells"][0]["lambda"].get<double>() == 0.92);

  CHECK(run("simulate --reps 0").code == 2);
  CHECK(run("simulate --N 10").code == 2);
  CHECK(run("simulate --trunc 1.2").code == 2);
  CHECK(run("simulate --model 4").code == 2);
  CHECK(run("simulate --lambda paper --trunc 0.3").code == 2);
}

TEST_CASE("simulate output does not depend on the worker count") {
  const std::string args = "simulate --model 3 --N 50,100 --trunc 0.2 --reps 6 --seed 9 --lambda paper";
  const auto a = run(args + " --jobs 1");
  const auto b = run(args + " --jobs 2");
  const auto c = run(args, "TRUNC_SIM_THREADS=3");
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out == c.out);
  const auto out = workdir() / "study.json";
  REQUIRE(run(args + " --output " + out.string()).code == 0);
  CHECK(json::parse(slurp(out)).contains("cells"));
}

TEST_CASE("calibrate") {
  const auto r = run("calibrate --model 3 --trunc 0.4");
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  CHECK(std::abs(j["lambda"].get<double>() - 0.97) <= 0.15);
  CHECK(std::abs(j["achieved_rate"].get<double>() - 0.4) <= 0.005);

  const auto m1 = run("calibrate --model 1 --trunc 0.1");
  REQUIRE(m1.code == 0);
  CHECK(std::abs(json::parse(m1.out)["lambda"].get<double>() - (-3.5)) <= 0.2);

  CHECK(run("calibrate --model 1 --trunc 1.5").code == 2);
  CHECK(run("calibrate --trunc 0.2").code == 2);
}

TEST_CASE("curves") {
  const auto out = workdir() / "curve.csv";
  const auto r = run("curves --model 1 --N 200 --trunc 0.2 --grid 200 --output " + out.string());
  REQUIRE(r.code == 0);
  const auto csv = slurp(out);
  CHECK(csv.rfind("s,g_true,g_hat\n", 0) == 0);
  CHECK(count_lines(csv) == 201);
  const auto meta = json::parse(slurp(out.string() + ".meta.json"));
  CHECK(meta.contains("theta_hat"));
  CHECK(meta.contains("n"));
  CHECK(meta.contains("lambda"));

  const auto m2 = run("curves --model 2 --N 200 --trunc 0.2 --grid 50");
  REQUIRE(m2.code == 0);
  std::istringstream lines(m2.out);
  std::string line;
  std::getline(lines, line);
  int rows = 0;
  while (std::getline(lines, line)) {
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
    const double s = std::stod(line.substr(0, c1)), g = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
    CHECK(std::abs(g - std::sin(s)) < 1e-12);
    ++rows;
  }
  CHECK(rows == 50);
  CHECK(json::parse(m2.err).contains("theta_hat"));

  auto curve_error = [&](int N, int seed) {
    const auto res = run("curves --model 1 --N " + std::to_string(N) + " --trunc 0.2 --grid 100 --lambda paper --seed " +
                         std::to_string(seed));
    std::istringstream in(res.out);
    std::string l;
    std::getline(in, l);
    double acc = 0.0;
    int k = 0;
    while (std::getline(in, l)) {
      const auto a = l.find(','), b = l.find(',', a + 1);
      acc += std::abs(std::stod(l.substr(b + 1)) - std::stod(l.substr(a + 1, b - a - 1)));
      ++k;
    }
    return acc / k;
  };
  std::vector<double> small, large;
  for (int seed = 1; seed <= 10; ++seed) {
    small.push_back(curve_error(200, seed));
    large.push_back(curve_error(500, seed));
  }
  std::sort(small.begin(), small.end());
  std::sort(large.begin(), large.end());
  CHECK(large[4] + large[5] < small[4] + small[5]);

  CHECK(run("curves --grid 0").code == 2);
}

TEST_CASE("usage errors") {
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("fit").code == 2);
  CHECK(run("--help").code == 0);
}

TEST_CASE("cleanup") { fs::remove_all(workdir()); }
