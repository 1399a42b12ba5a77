// File formats: point-set CSV, synthetic instance directories and result
// summaries. All writes go through a temporary file and a rename.

#pragma once

#include "registration.hpp"
#include "synthdata.hpp"

#include <filesystem>

namespace sfgp::io {

/// One point per row, d columns, optional header, 17 significant digits.
void write_points_csv(const PointSet& points, const std::filesystem::path& path, bool header = true);
PointSet read_points_csv(const std::filesystem::path& path);

void write_text_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

/// `dir/target.csv`, `dir/ground_truth.csv` and `dir/manifest.json`.
void write_instance(const SyntheticInstance& instance, const std::filesystem::path& dir);
SyntheticInstance read_instance(const std::filesystem::path& dir);

std::string perturbation_to_json(const PerturbationSpec& spec);
PerturbationSpec perturbation_from_json(const std::string& text);

/// Correspondence summary: flags, iteration count, R_C, R_M, nu and sigma2.
std::string result_summary_json(const RegistrationResult& result);

struct ResultSummary {
    int iters = 0;
    bool converged = false;
    bool failed = false;
    bool collapsed = false;
    std::vector<Index> inliers;
    std::vector<Index> missing;
    std::vector<double> nu;
    std::vector<double> sigma2;
};
ResultSummary parse_result_summary(const std::string& text);

}  // namespace sfgp::io
