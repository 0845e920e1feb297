#pragma once

#include <functional>
#include <utility>
#include <vector>

namespace pgcn {

// Area under the ROC curve via average ranks (ties share their mid-rank).
// Labels are 0/1; both classes must be present. O(n log n).
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

struct GridSearchRow {
    int n;
    double image_auroc;
    double pixel_auroc;
};

struct GridSearchResult {
    int best_n = 0;  // highest image AUROC, ties broken toward the smaller n
    std::vector<GridSearchRow> table;
};

// Evaluates every candidate grid size with the supplied callback, which
// returns (image_auroc, pixel_auroc) for one n.
GridSearchResult grid_search_n(const std::vector<int>& candidates,
                               const std::function<std::pair<double, double>(int)>& evaluate);

}  // namespace pgcn
