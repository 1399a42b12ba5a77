// Evaluation against synthetic ground truth.

#pragma once

#include "registration.hpp"
#include "synthdata.hpp"

namespace sfgp {

enum class Subset { All, Missing, NonMissing };

/// Mean of |gt_i - rbar_i|^2 over the chosen reference subset; nullopt when
/// the subset is empty.
std::optional<double> mean_sq_distance(const PointSet& deformed, const SyntheticInstance& instance, Subset subset);

/// Throws Error(InvalidArgument) for a failed registration; failed runs only
/// count towards success_ratio.
std::optional<double> mean_sq_distance(const RegistrationResult& result, const SyntheticInstance& instance,
                                       Subset subset);

double success_ratio(std::span<const RegistrationResult> results);
double success_ratio(std::span<const bool> failed);

struct Detection {
    std::optional<double> recall;
    std::optional<double> precision;
};

/// Missing-point detection of `predicted_missing` (reference indices) against
/// the instance's true missing mask.
Detection missing_detection(std::span<const Index> predicted_missing, const SyntheticInstance& instance);
Detection missing_detection(const RegistrationResult& result, const SyntheticInstance& instance);

}  // namespace sfgp
