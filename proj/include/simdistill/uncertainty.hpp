#pragma once

// Entropy-based uncertainty decomposition over an ensemble of action
// distributions, each produced under a different generated decision process
// (the "clarification"). All quantities are in nats.
//
//   total      = H(mean_i p_i)
//   epistemic  = mean_i H(p_i)
//   aleatoric  = total - epistemic   (mutual information, >= 0 by Jensen)

#include <span>
#include <string>
#include <vector>

namespace simdistill {

// Probabilities over the k options of one scene.
struct ActionDistribution {
    std::vector<double> probabilities;

    std::size_t size() const { return probabilities.size(); }
};

struct UncertaintyReport {
    double total = 0.0;
    double aleatoric = 0.0;
    double epistemic = 0.0;
    std::size_t n = 0;
    std::size_t k = 0;
};

struct EpistemicGap {
    std::string scene_id;
    double delta_eu = 0.0;  // weak.epistemic - strong.epistemic
    UncertaintyReport weak;
    UncertaintyReport strong;
};

inline constexpr double kDistributionTolerance = 1e-9;

// Throws ContractViolation unless entries lie in [0,1] and sum to 1 within tolerance.
void validate_distribution(std::span<const double> p);

// -sum p ln p, with 0 ln 0 = 0.
double entropy(std::span<const double> p);
inline double entropy(const ActionDistribution& d) { return entropy(d.probabilities); }

UncertaintyReport decompose(std::span<const ActionDistribution> ensemble);

EpistemicGap epistemic_gap(std::span<const ActionDistribution> weak, std::span<const ActionDistribution> strong,
                           std::string scene_id);

}  // namespace simdistill
