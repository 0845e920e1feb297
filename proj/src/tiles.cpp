#include "pgcn/tiles.hpp"

#include <cstring>

#include "pgcn/error.hpp"

namespace pgcn {

TileGrid split_grid(const Tensor& image, int n) {
    if (n < 3) throw ConfigError("grid size must be at least 3, got " + std::to_string(n));
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw DimensionError("split_grid expects a [3,H,W] image, got " + shape_str(image.shape()));
    const int h = image.dim(1), w = image.dim(2);
    const int th = h / n, tw = w / n;
    if (th < 1 || tw < 1)
        throw DimensionError("image " + std::to_string(h) + "x" + std::to_string(w) +
                             " too small for a " + std::to_string(n) + "-way split");
    const int ch = th * n, cw = tw * n;
    const int y0 = (h - ch) / 2, x0 = (w - cw) / 2;

    TileGrid g;
    g.n = n;
    g.tile_h = th;
    g.tile_w = tw;
    g.crop_h = ch;
    g.crop_w = cw;
    g.tiles.reserve(static_cast<size_t>(n) * n);
    const float* src = image.data();
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            Tensor t(Shape{3, th, tw});
            float* dst = t.data();
            for (int ch_i = 0; ch_i < 3; ++ch_i)
                for (int y = 0; y < th; ++y)
                    std::memcpy(dst + (static_cast<size_t>(ch_i) * th + y) * tw,
                                src + (static_cast<size_t>(ch_i) * h + y0 + r * th + y) * w + x0 +
                                    c * tw,
                                sizeof(float) * tw);
            g.tiles.push_back(std::move(t));
        }
    }
    return g;
}

Tensor reassemble(const TileGrid& g) {
    Tensor out(Shape{3, g.crop_h, g.crop_w});
    float* dst = out.data();
    for (int r = 0; r < g.n; ++r) {
        for (int c = 0; c < g.n; ++c) {
            const float* src = g.at(r, c).data();
            for (int ch_i = 0; ch_i < 3; ++ch_i)
                for (int y = 0; y < g.tile_h; ++y)
                    std::memcpy(dst + (static_cast<size_t>(ch_i) * g.crop_h + r * g.tile_h + y) *
                                          g.crop_w +
                                    c * g.tile_w,
                                src + (static_cast<size_t>(ch_i) * g.tile_h + y) * g.tile_w,
                                sizeof(float) * g.tile_w);
        }
    }
    return out;
}

}  // namespace pgcn
