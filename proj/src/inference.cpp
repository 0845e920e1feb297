#include "pgcn/inference.hpp"

#include <algorithm>

#include "pgcn/error.hpp"
#include "pgcn/ops.hpp"

namespace pgcn {

namespace {

Tensor fetch_resized(const TileGrid& grid, int row, int col, int res) {
    const Tensor& t = grid.at(row, col);
    if (t.dim(1) == res && t.dim(2) == res) return t;
    return upsample_bilinear(t, res, res);
}

}  // namespace

DirectionalMaps sweep(const TileGrid& grid, Direction direction, const TilePredictor& predict,
                      const TileComparator& compare, int tile_resolution) {
    if (grid.n < 3) throw ConfigError("sweeps need a grid of at least 3 columns");
    const int n = grid.n;
    DirectionalMaps maps;
    maps.direction = direction;
    maps.n = n;
    maps.tile_h = grid.tile_h;
    maps.tile_w = grid.tile_w;
    maps.prob.assign(static_cast<size_t>(n) * n, -1.0f);
    maps.cls.assign(static_cast<size_t>(n) * n, Verdict::undefined);
    maps.covered.assign(static_cast<size_t>(n) * n, 0);
    maps.canvas = Tensor(Shape{grid.crop_h, grid.crop_w}, 0.0f);

    const bool l2r = direction == Direction::left_to_right;
    for (int row = 0; row < n; ++row) {
        const int lo = l2r ? 2 : 0;
        const int hi = l2r ? n - 1 : n - 3;
        for (int col = lo; col <= hi; ++col) {
            Tensor a = fetch_resized(grid, row, l2r ? col - 2 : col + 2, tile_resolution);
            Tensor b = fetch_resized(grid, row, l2r ? col - 1 : col + 1, tile_resolution);
            Tensor predicted = predict(a, b);
            Tensor observed = fetch_resized(grid, row, col, tile_resolution);
            auto [p, mask] = compare(observed, predicted);

            const size_t idx = static_cast<size_t>(row) * n + col;
            maps.prob[idx] = p;
            maps.covered[idx] = 1;
            if (mask.ndim() != 2)
                throw DimensionError("comparator mask must be [h,w], got " +
                                     shape_str(mask.shape()));
            Tensor patch = mask.dim(0) == grid.tile_h && mask.dim(1) == grid.tile_w
                               ? mask
                               : upsample_bilinear(mask, grid.tile_h, grid.tile_w);
            float* canvas = maps.canvas.data();
            for (int y = 0; y < grid.tile_h; ++y)
                for (int x = 0; x < grid.tile_w; ++x)
                    canvas[static_cast<size_t>(row * grid.tile_h + y) * grid.crop_w +
                           col * grid.tile_w + x] =
                        patch.data()[static_cast<size_t>(y) * grid.tile_w + x];
        }
    }
    return maps;
}

DirectionalMaps threshold_classify(DirectionalMaps maps, float tau) {
    if (!(tau > 0.0f && tau < 1.0f))
        throw ConfigError("tau must lie strictly inside (0,1), got " + std::to_string(tau));
    for (size_t i = 0; i < maps.prob.size(); ++i)
        if (maps.covered[i])
            maps.cls[i] = maps.prob[i] < tau ? Verdict::abnormal : Verdict::normal;
    return maps;
}

DetectionResult intersect(const DirectionalMaps& l2r, const DirectionalMaps& r2l) {
    if (l2r.direction != Direction::left_to_right || r2l.direction != Direction::right_to_left)
        throw ContractError("intersect expects a left-to-right and a right-to-left pass");
    if (l2r.n != r2l.n || l2r.canvas.shape() != r2l.canvas.shape())
        throw DimensionError("directional maps disagree on geometry");
    for (size_t i = 0; i < l2r.cls.size(); ++i)
        if ((l2r.covered[i] && l2r.cls[i] == Verdict::undefined) ||
            (r2l.covered[i] && r2l.cls[i] == Verdict::undefined))
            throw ContractError("intersect needs classified maps; run threshold_classify first");

    DetectionResult res;
    res.n = l2r.n;
    res.left = l2r;
    res.right = r2l;
    res.abnormal.assign(static_cast<size_t>(res.n) * res.n, 0);
    res.anomaly_map = Tensor(l2r.canvas.shape(), 0.0f);

    float score = 0.0f;
    for (int row = 0; row < res.n; ++row)
        for (int col = 0; col < res.n; ++col) {
            const size_t i = static_cast<size_t>(row) * res.n + col;
            const bool cl = l2r.covered[i], cr = r2l.covered[i];
            if (cl && cr)
                res.abnormal[i] =
                    l2r.cls[i] == Verdict::abnormal && r2l.cls[i] == Verdict::abnormal;
            else if (cl)
                res.abnormal[i] = l2r.cls[i] == Verdict::abnormal;
            else if (cr)
                res.abnormal[i] = r2l.cls[i] == Verdict::abnormal;
            if (cl || cr) {
                float tile_score = 1.0f;  // min over covering directions of 1 - P
                if (cl) tile_score = std::min(tile_score, 1.0f - l2r.prob[i]);
                if (cr) tile_score = std::min(tile_score, 1.0f - r2l.prob[i]);
                score = std::max(score, tile_score);
            }

            // Pixel heat combines the same way: min where both cover.
            const int th = l2r.tile_h, tw = l2r.tile_w;
            const int cw = res.anomaly_map.dim(1);
            for (int y = 0; y < th; ++y)
                for (int x = 0; x < tw; ++x) {
                    const size_t px = static_cast<size_t>(row * th + y) * cw + col * tw + x;
                    if (cl && cr)
                        res.anomaly_map.data()[px] =
                            std::min(l2r.canvas.data()[px], r2l.canvas.data()[px]);
                    else if (cl)
                        res.anomaly_map.data()[px] = l2r.canvas.data()[px];
                    else if (cr)
                        res.anomaly_map.data()[px] = r2l.canvas.data()[px];
                }
        }
    res.image_score = score;
    return res;
}

DetectionResult detect(const Tensor& image, const GenerationNet& gen, const ComparatorNet& cmp,
                       int grid_n, float tau) {
    TileGrid grid = split_grid(image, grid_n);
    TilePredictor predict = [&](const Tensor& a, const Tensor& b) {
        return gen.generate_third(a, b);
    };
    TileComparator compare = [&](const Tensor& observed, const Tensor& reference) {
        ComparisonResult r = cmp.compare(observed, reference, /*training=*/false);
        return std::pair{r.p.item(), r.mask};
    };
    const int res = gen.cfg.tile_resolution;
    DirectionalMaps left =
        threshold_classify(sweep(grid, Direction::left_to_right, predict, compare, res), tau);
    DirectionalMaps right =
        threshold_classify(sweep(grid, Direction::right_to_left, predict, compare, res), tau);
    return intersect(left, right);
}

}  // namespace pgcn
