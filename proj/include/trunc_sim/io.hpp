#pragma once

// Locale-independent CSV input/output and atomic file writes.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "trunc_sim/sim_models.hpp"
#include "trunc_sim/truncation.hpp"

namespace trunc_sim {

// 17 significant digits; "nan", "inf", "-inf" for non-finite values.
std::string format_double(double x);

// Header u1,...,ud,v,w. Errors (InvalidSample) name the 1-based data row.
TruncatedSample read_sample_csv(std::istream& in);
TruncatedSample read_sample_csv(const std::filesystem::path& path);
void write_sample_csv(std::ostream& out, const TruncatedSample& sample);

// model,lambda,trunc_rate,N,coord,bias,mse,reps,failures,mean_n
std::string study_csv(const StudyResult& result);
std::string study_json(const StudyResult& result);
// s,g_true,g_hat
std::string curve_csv(const std::vector<CurvePoint>& curve);

// Writes to a temporary sibling and renames it over path.
void atomic_write(const std::filesystem::path& path, const std::string& content);

}  // namespace trunc_sim
