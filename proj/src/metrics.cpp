#include "metrics.hpp"

namespace sfgp {

std::optional<double> mean_sq_distance(const PointSet& deformed, const SyntheticInstance& instance, Subset subset) {
    const PointSet& gt = instance.ground_truth;
    if (deformed.size() != gt.size() || deformed.dim() != gt.dim() ||
        instance.missing_mask.size() != static_cast<std::size_t>(gt.size())) {
        throw Error(ErrorCode::InvalidArgument, "deformed reference is not aligned with the ground truth");
    }
    double total = 0.0;
    Index count = 0;
    for (Index i = 0; i < gt.size(); ++i) {
        const bool missing = instance.missing_mask[static_cast<std::size_t>(i)] != 0;
        if ((subset == Subset::Missing && !missing) || (subset == Subset::NonMissing && missing)) continue;
        total += (gt.point(i) - deformed.point(i)).squaredNorm();
        ++count;
    }
    if (count == 0) return std::nullopt;
    return total / static_cast<double>(count);
}

std::optional<double> mean_sq_distance(const RegistrationResult& result, const SyntheticInstance& instance,
                                       Subset subset) {
    if (result.failed) throw Error(ErrorCode::InvalidArgument, "distance metrics are undefined for failed runs");
    return mean_sq_distance(result.deformed_reference, instance, subset);
}

double success_ratio(std::span<const bool> failed) {
    if (failed.empty()) throw Error(ErrorCode::InvalidArgument, "success ratio of an empty batch");
    std::size_t ok = 0;
    for (bool f : failed) ok += f ? 0 : 1;
    return static_cast<double>(ok) / static_cast<double>(failed.size());
}

double success_ratio(std::span<const RegistrationResult> results) {
    if (results.empty()) throw Error(ErrorCode::InvalidArgument, "success ratio of an empty batch");
    std::size_t ok = 0;
    for (const auto& r : results) ok += r.failed ? 0 : 1;
    return static_cast<double>(ok) / static_cast<double>(results.size());
}

Detection missing_detection(std::span<const Index> predicted_missing, const SyntheticInstance& instance) {
    const auto& truth = instance.missing_mask;
    std::size_t true_missing = 0;
    for (auto m : truth) true_missing += m ? 1 : 0;
    std::size_t hits = 0;
    for (Index i : predicted_missing) {
        if (i < 0 || static_cast<std::size_t>(i) >= truth.size()) {
            throw Error(ErrorCode::InvalidArgument, "predicted missing index out of range");
        }
        hits += truth[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    Detection out;
    if (true_missing > 0) out.recall = static_cast<double>(hits) / static_cast<double>(true_missing);
    if (!predicted_missing.empty()) {
        out.precision = static_cast<double>(hits) / static_cast<double>(predicted_missing.size());
    }
    return out;
}

Detection missing_detection(const RegistrationResult& result, const SyntheticInstance& instance) {
    return missing_detection(result.state.missing, instance);
}

}  // namespace sfgp
