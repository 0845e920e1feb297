#include "pgcn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pgcn/error.hpp"

namespace pgcn {

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ContractError("auroc: " + std::to_string(scores.size()) + " scores vs " +
                            std::to_string(labels.size()) + " labels");
    const size_t n = scores.size();
    size_t pos = 0;
    for (size_t i = 0; i < n; ++i) {
        if (!std::isfinite(scores[i])) throw MetricError("auroc: non-finite score");
        if (labels[i] != 0 && labels[i] != 1) throw MetricError("auroc: labels must be 0 or 1");
        pos += labels[i];
    }
    if (pos == 0 || pos == n)
        throw MetricError("auroc undefined: only one class present (" + std::to_string(pos) +
                          " of " + std::to_string(n) + " positive)");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // Average 1-based rank over each tie group, summed for the positives.
    double pos_rank_sum = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double rank = 0.5 * (double(i + 1) + double(j));  // mid-rank of [i, j)
        for (size_t k = i; k < j; ++k)
            if (labels[order[k]]) pos_rank_sum += rank;
        i = j;
    }
    const double npos = double(pos), nneg = double(n - pos);
    return (pos_rank_sum - npos * (npos + 1.0) / 2.0) / (npos * nneg);
}

GridSearchResult grid_search_n(const std::vector<int>& candidates,
                               const std::function<std::pair<double, double>(int)>& evaluate) {
    if (candidates.empty()) throw ConfigError("grid search needs at least one candidate");
    for (int n : candidates)
        if (n < 3) throw ConfigError("grid candidates must be at least 3, got " + std::to_string(n));
    GridSearchResult out;
    for (int n : candidates) {
        auto [img, pix] = evaluate(n);
        out.table.push_back({n, img, pix});
    }
    const GridSearchRow* best = &out.table.front();
    for (const auto& row : out.table)
        if (row.image_auroc > best->image_auroc ||
            (row.image_auroc == best->image_auroc && row.n < best->n))
            best = &row;
    out.best_n = best->n;
    return out;
}

}  // namespace pgcn
