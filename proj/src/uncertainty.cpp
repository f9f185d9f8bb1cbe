#include "simdistill/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include "simdistill/errors.hpp"

namespace simdistill {

namespace {

double sorted_sum(std::vector<double>& values) {
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum;
}

}  // namespace

void validate_distribution(std::span<const double> p) {
    if (p.empty()) {
        throw ContractViolation("empty distribution");
    }
    double sum = 0.0;
    for (double x : p) {
        if (!(x >= 0.0 && x <= 1.0)) {
            throw ContractViolation("probability outside [0, 1]");
        }
        sum += x;
    }
    if (std::abs(sum - 1.0) > kDistributionTolerance) {
        throw ContractViolation("probabilities sum to " + std::to_string(sum));
    }
}

double entropy(std::span<const double> p) {
    validate_distribution(p);
    double h = 0.0;
    for (double x : p) {
        if (x > 0.0) h -= x * std::log(x);
    }
    return h;
}

UncertaintyReport decompose(std::span<const ActionDistribution> ensemble) {
    if (ensemble.empty()) {
        throw ContractViolation("empty ensemble");
    }
    const std::size_t k = ensemble.front().size();
    // Summands are sorted before accumulation so the result does not depend
    // on member order, down to the last bit.
    std::vector<double> entropies;
    entropies.reserve(ensemble.size());
    for (const auto& d : ensemble) {
        if (d.size() != k) {
            throw ContractViolation("ensemble members differ in length");
        }
        entropies.push_back(entropy(d));
    }
    const auto n = static_cast<double>(ensemble.size());
    const double mean_entropy = sorted_sum(entropies) / n;

    std::vector<double> mean(k, 0.0);
    std::vector<double> column(ensemble.size());
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t m = 0; m < ensemble.size(); ++m) column[m] = ensemble[m].probabilities[i];
        mean[i] = sorted_sum(column) / n;
    }

    // The mean of valid distributions can drift from 1 by a few ulps.
    double h_mean = 0.0;
    for (double x : mean) {
        if (x > 0.0) h_mean -= x * std::log(x);
    }

    UncertaintyReport r;
    r.total = h_mean;
    r.epistemic = mean_entropy;
    r.aleatoric = r.total - r.epistemic;
    r.n = ensemble.size();
    r.k = k;
    return r;
}

EpistemicGap epistemic_gap(std::span<const ActionDistribution> weak, std::span<const ActionDistribution> strong,
                           std::string scene_id) {
    EpistemicGap gap;
    gap.scene_id = std::move(scene_id);
    gap.weak = decompose(weak);
    gap.strong = decompose(strong);
    gap.delta_eu = gap.weak.epistemic - gap.strong.epistemic;
    return gap;
}

}  // namespace simdistill
