#pragma once

// Candidate generators feeding exposure-list construction. Every ranked list
// excludes items the user already interacted with, and ties are broken by
// ascending item id.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "simdistill/rng.hpp"

namespace simdistill {

using ItemSet = std::unordered_set<std::string>;

struct ScoredItem {
    std::string item_id;
    double score = 0.0;
};

// Sparse binary user x item matrix with the degree normalisation used by the
// linear graph filter R~ = D_u^{-1/2} R D_i^{-1/2}.
class InteractionMatrix {
public:
    // `rows` maps user -> interacted item ids (duplicates ignored).
    explicit InteractionMatrix(const std::map<std::string, std::vector<std::string>>& rows);

    std::size_t user_count() const { return user_items_.size(); }
    std::size_t item_count() const { return item_ids_.size(); }

    // Scores s = r (R~^T R~) for a query row `r` holding `history`, keeping
    // strictly positive scores of items outside `exclude`, best first.
    std::vector<ScoredItem> score(std::span<const std::string> history, const ItemSet& exclude,
                                  std::size_t k) const;

private:
    std::vector<std::string> item_ids_;
    std::unordered_map<std::string, std::size_t> item_index_;
    std::vector<std::vector<std::size_t>> user_items_;  // per user: item indices
    std::vector<std::vector<std::size_t>> item_users_;  // per item: user indices
};

std::vector<std::string> score_collaborative(const InteractionMatrix& matrix, std::span<const std::string> history,
                                             const ItemSet& exclude, std::size_t k);

using EmbeddingTable = std::unordered_map<std::string, std::vector<double>>;

struct ContentScores {
    std::vector<ScoredItem> ranked;
    std::size_t skipped_missing = 0;  // candidates without an embedding
};

// Cosine similarity of every candidate against the mean of the history
// embeddings.
ContentScores score_content(std::span<const std::string> history, const EmbeddingTable& embeddings,
                            std::span<const std::string> candidates, const ItemSet& exclude, std::size_t k);

// Uniform sample without replacement; the whole pool when it holds fewer than k.
std::vector<std::string> sample_random(std::span<const std::string> pool, std::size_t k, Rng& rng);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace simdistill
