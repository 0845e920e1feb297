#pragma once

#include <vector>

#include "pgcn/tensor.hpp"

namespace pgcn {

enum class Direction { left_to_right, right_to_left };

// Row-major n×n split of an image, tiles indexed (row, col) from the top-left.
struct TileGrid {
    int n = 0;
    int tile_h = 0, tile_w = 0;  // source-pixel tile dims after cropping
    int crop_h = 0, crop_w = 0;
    std::vector<Tensor> tiles;  // n*n tiles of [3, tile_h, tile_w]

    const Tensor& at(int row, int col) const {
        return tiles[static_cast<size_t>(row) * n + col];
    }
};

// Center-crops to the largest dims divisible by n, then splits row-major.
TileGrid split_grid(const Tensor& image, int n);

// Stitches the tiles back together; equals the cropped image exactly.
Tensor reassemble(const TileGrid& grid);

}  // namespace pgcn
