#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "pgcn/comparison.hpp"
#include "pgcn/generation.hpp"
#include "pgcn/tensor.hpp"
#include "pgcn/tiles.hpp"

namespace pgcn {

// Seams for the two learned pieces, so sweeps can be driven by stand-ins with
// known closed-form behavior as well as by real networks.
using TilePredictor = std::function<Tensor(const Tensor& a, const Tensor& b)>;
using TileComparator = std::function<std::pair<float, Tensor>(const Tensor& observed,
                                                              const Tensor& reference)>;

enum class Verdict : uint8_t { undefined, normal, abnormal };

// One direction's pass over the grid. A tile is covered when it has two
// same-row predecessors in sweep order: columns >= 2 left-to-right, columns
// <= n-3 right-to-left (0-based).
struct DirectionalMaps {
    Direction direction = Direction::left_to_right;
    int n = 0;
    int tile_h = 0, tile_w = 0;
    std::vector<float> prob;       // n*n match probabilities; -1 where uncovered
    std::vector<Verdict> cls;      // filled by threshold_classify
    std::vector<uint8_t> covered;  // n*n
    Tensor canvas;                 // [crop_h, crop_w] mismatch heat; 0 where uncovered

    float prob_at(int row, int col) const { return prob[static_cast<size_t>(row) * n + col]; }
};

DirectionalMaps sweep(const TileGrid& grid, Direction direction, const TilePredictor& predict,
                      const TileComparator& compare, int tile_resolution);

// Marks covered tiles abnormal when their match probability falls below tau.
DirectionalMaps threshold_classify(DirectionalMaps maps, float tau);

struct DetectionResult {
    int n = 0;
    std::vector<uint8_t> abnormal;  // n*n combined verdicts
    Tensor anomaly_map;             // [crop_h, crop_w]; per-pixel min over covering directions
    float image_score = 0.0f;       // max over tiles of min over directions of (1 - P)
    DirectionalMaps left, right;
};

// Both directions agree -> their conjunction; one direction covers -> its
// verdict; no coverage -> normal.
DetectionResult intersect(const DirectionalMaps& l2r, const DirectionalMaps& r2l);

// split -> two sweeps -> threshold -> intersect, driven by the real networks.
DetectionResult detect(const Tensor& image, const GenerationNet& gen, const ComparatorNet& cmp,
                       int grid_n, float tau);

}  // namespace pgcn
