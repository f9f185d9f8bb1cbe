#include "simdistill/strategies.hpp"

#include <algorithm>
#include <cmath>

namespace simdistill {

namespace {

void rank_and_truncate(std::vector<ScoredItem>& items, std::size_t k) {
    std::sort(items.begin(), items.end(), [](const ScoredItem& a, const ScoredItem& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item_id < b.item_id;
    });
    if (items.size() > k) items.resize(k);
}

}  // namespace

InteractionMatrix::InteractionMatrix(const std::map<std::string, std::vector<std::string>>& rows) {
    std::vector<std::string> ids;
    for (const auto& [_, items] : rows) {
        ids.insert(ids.end(), items.begin(), items.end());
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    item_ids_ = std::move(ids);
    for (std::size_t i = 0; i < item_ids_.size(); ++i) {
        item_index_.emplace(item_ids_[i], i);
    }
    item_users_.resize(item_ids_.size());
    for (const auto& [_, items] : rows) {
        std::vector<std::size_t> idx;
        for (const auto& id : items) idx.push_back(item_index_.at(id));
        std::sort(idx.begin(), idx.end());
        idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
        if (idx.empty()) continue;
        const std::size_t u = user_items_.size();
        for (auto i : idx) item_users_[i].push_back(u);
        user_items_.push_back(std::move(idx));
    }
}

std::vector<ScoredItem> InteractionMatrix::score(std::span<const std::string> history, const ItemSet& exclude,
                                                 std::size_t k) const {
    // s_j = sum_i r_i sum_v R~[v,i] R~[v,j]
    std::vector<std::size_t> query;
    for (const auto& id : history) {
        auto it = item_index_.find(id);
        if (it != item_index_.end()) query.push_back(it->second);
    }
    std::sort(query.begin(), query.end());
    query.erase(std::unique(query.begin(), query.end()), query.end());

    std::vector<double> user_weight(user_items_.size(), 0.0);
    for (auto i : query) {
        const double item_norm = 1.0 / std::sqrt(static_cast<double>(item_users_[i].size()));
        for (auto v : item_users_[i]) {
            user_weight[v] += item_norm / std::sqrt(static_cast<double>(user_items_[v].size()));
        }
    }
    std::vector<double> scores(item_ids_.size(), 0.0);
    for (std::size_t v = 0; v < user_items_.size(); ++v) {
        if (user_weight[v] == 0.0) continue;
        const double user_norm = user_weight[v] / std::sqrt(static_cast<double>(user_items_[v].size()));
        for (auto j : user_items_[v]) {
            scores[j] += user_norm / std::sqrt(static_cast<double>(item_users_[j].size()));
        }
    }
    std::vector<ScoredItem> ranked;
    for (std::size_t j = 0; j < scores.size(); ++j) {
        if (scores[j] > 0.0 && !exclude.contains(item_ids_[j])) {
            ranked.push_back({item_ids_[j], scores[j]});
        }
    }
    rank_and_truncate(ranked, k);
    return ranked;
}

std::vector<std::string> score_collaborative(const InteractionMatrix& matrix, std::span<const std::string> history,
                                             const ItemSet& exclude, std::size_t k) {
    std::vector<std::string> out;
    for (auto& s : matrix.score(history, exclude, k)) out.push_back(std::move(s.item_id));
    return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    double dot = 0, na = 0, nb = 0;
    const auto n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

ContentScores score_content(std::span<const std::string> history, const EmbeddingTable& embeddings,
                            std::span<const std::string> candidates, const ItemSet& exclude, std::size_t k) {
    ContentScores out;
    std::vector<double> centroid;
    std::size_t used = 0;
    for (const auto& id : history) {
        auto it = embeddings.find(id);
        if (it == embeddings.end()) continue;
        if (centroid.empty()) centroid.assign(it->second.size(), 0.0);
        if (it->second.size() != centroid.size()) continue;
        for (std::size_t d = 0; d < centroid.size(); ++d) centroid[d] += it->second[d];
        ++used;
    }
    if (used == 0) {
        return out;
    }
    for (auto& c : centroid) c /= static_cast<double>(used);

    for (const auto& id : candidates) {
        if (exclude.contains(id)) continue;
        auto it = embeddings.find(id);
        if (it == embeddings.end()) {
            ++out.skipped_missing;
            continue;
        }
        out.ranked.push_back({id, cosine_similarity(centroid, it->second)});
    }
    rank_and_truncate(out.ranked, k);
    return out;
}

std::vector<std::string> sample_random(std::span<const std::string> pool, std::size_t k, Rng& rng) {
    std::vector<std::string> items(pool.begin(), pool.end());
    const std::size_t take = std::min(k, items.size());
    for (std::size_t i = 0; i < take; ++i) {
        auto j = i + static_cast<std::size_t>(rng.uniform_index(items.size() - i));
        std::swap(items[i], items[j]);
    }
    items.resize(take);
    return items;
}

}  // namespace simdistill
