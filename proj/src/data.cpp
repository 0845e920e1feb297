#include "pgcn/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "pgcn/error.hpp"
#include "pgcn/random.hpp"

namespace fs = std::filesystem;

namespace pgcn {

namespace {

std::vector<std::string> sorted_pngs(const fs::path& dir) {
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::string> sorted_subdirs(const fs::path& dir) {
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

DatasetIndex load_mvtec(const std::string& root, const std::string& category) {
    const fs::path base = fs::path(root) / category;
    if (!fs::is_directory(base))
        throw IngestionError("no such category directory: " + base.string());

    DatasetIndex idx;
    idx.category = category;
    const fs::path train_good = base / "train" / "good";
    if (!fs::is_directory(train_good))
        throw IngestionError("missing train/good under " + base.string());
    for (const auto& p : sorted_pngs(train_good)) idx.train.push_back({p, "good", ""});
    if (idx.train.empty()) throw IngestionError("no training images in " + train_good.string());

    std::vector<std::string> missing;
    for (const auto& kind : sorted_subdirs(base / "test")) {
        for (const auto& p : sorted_pngs(base / "test" / kind)) {
            DatasetEntry e{p, kind, ""};
            if (kind != "good") {
                const std::string stem = fs::path(p).stem().string();
                const fs::path mask = base / "ground_truth" / kind / (stem + "_mask.png");
                if (!fs::is_regular_file(mask)) {
                    missing.push_back(kind + "/" + stem);
                    continue;
                }
                e.mask = mask.string();
            }
            idx.test.push_back(std::move(e));
        }
    }
    if (!missing.empty()) {
        std::string all;
        for (const auto& s : missing) all += (all.empty() ? "" : ", ") + s;
        throw IngestionError("defect images without ground-truth masks: " + all);
    }
    return idx;
}

namespace {

void validate(const TextureSpec& s) {
    if (s.period < 8 || s.period > 64)
        throw ConfigError("texture period must lie in [8,64], got " + std::to_string(s.period));
    if (s.family == TextureFamily::checker && s.period % 2 != 0)
        throw ConfigError("checker period must be even, got " + std::to_string(s.period));
    if (s.palette.size() < 2 || s.palette.size() > 3)
        throw ConfigError("palette needs 2 or 3 colors, got " + std::to_string(s.palette.size()));
    for (const auto& c : s.palette)
        for (float v : c)
            if (v < 0.0f || v > 1.0f) throw ConfigError("palette channels must lie in [0,1]");
    if (s.noise_sigma < 0.0f || s.noise_sigma > 0.1f)
        throw ConfigError("noise_sigma must lie in [0,0.1], got " + std::to_string(s.noise_sigma));
}

std::array<float, 3> mix(const std::array<float, 3>& a, const std::array<float, 3>& b, float t) {
    return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

}  // namespace

Tensor synth_texture(const TextureSpec& spec, int h, int w, uint64_t seed) {
    validate(spec);
    if (h < 2 * spec.period || w < 2 * spec.period)
        throw ConfigError("texture dims " + std::to_string(h) + "x" + std::to_string(w) +
                          " must be at least twice the period " + std::to_string(spec.period));
    Tensor img(Shape{3, h, w});
    Rng rng(seed);
    const size_t plane = static_cast<size_t>(h) * w;
    auto put = [&](int y, int x, const std::array<float, 3>& c) {
        img.data()[static_cast<size_t>(y) * w + x] = c[0];
        img.data()[plane + static_cast<size_t>(y) * w + x] = c[1];
        img.data()[2 * plane + static_cast<size_t>(y) * w + x] = c[2];
    };

    switch (spec.family) {
        case TextureFamily::sine_grating: {
            const double th = spec.orientation_deg * M_PI / 180.0;
            const double cx = std::cos(th), sx = std::sin(th);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    // fmod keeps the profile bit-exactly periodic along the axis.
                    const double u = std::fmod(x * cx + y * sx, double(spec.period));
                    const float v = 0.5f * (1.0f + float(std::sin(2.0 * M_PI * u / spec.period)));
                    put(y, x, mix(spec.palette[0], spec.palette[1], v));
                }
            break;
        }
        case TextureFamily::checker: {
            const int half = spec.period / 2;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    put(y, x, spec.palette[((x / half) + (y / half)) % 2 ? 1 : 0]);
            break;
        }
        case TextureFamily::tiled_motif: {
            // One seeded motif cell of palette picks, tiled across both axes.
            std::vector<int> motif(static_cast<size_t>(spec.period) * spec.period);
            for (auto& m : motif) m = static_cast<int>(rng.below(spec.palette.size()));
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    put(y, x,
                        spec.palette[motif[static_cast<size_t>(y % spec.period) * spec.period +
                                           x % spec.period]]);
            break;
        }
    }

    if (spec.noise_sigma > 0.0f) {
        for (int64_t i = 0; i < img.size(); ++i)
            img.data()[i] = std::clamp(img.data()[i] + rng.truncated_normal(spec.noise_sigma),
                                       0.0f, 1.0f);
    }
    return img;
}

namespace {

// Adds `s` to every channel of a pixel; saturated channels move the other way
// so a nonzero intensity always changes something.
void shift_pixel(Tensor& img, size_t plane, int y, int x, int w, float s) {
    for (int c = 0; c < 3; ++c) {
        float& v = img.data()[c * plane + static_cast<size_t>(y) * w + x];
        const float up = std::clamp(v + s, 0.0f, 1.0f);
        v = (up == v) ? std::clamp(v - s, 0.0f, 1.0f) : up;
    }
}

}  // namespace

std::pair<Tensor, Tensor> inject_defect(const Tensor& image, const DefectSpec& spec) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw DimensionError("inject_defect expects [3,H,W], got " + shape_str(image.shape()));
    const int h = image.dim(1), w = image.dim(2);
    Tensor out = image.clone();
    Tensor mask(Shape{h, w}, 0.0f);
    if (spec.size == 0) return {out, mask};
    if (spec.size < 0) throw ConfigError("defect size must be non-negative");
    Rng rng(spec.seed);
    const size_t plane = static_cast<size_t>(h) * w;

    switch (spec.kind) {
        case DefectKind::blotch: {
            const int r = spec.size;
            if (r < 3) throw ConfigError("blotch radius must be at least 3");
            if (2 * r >= std::min(h, w)) throw ConfigError("blotch does not fit the image");
            const int cy = static_cast<int>(rng.range(r, h - 1 - r));
            const int cx = static_cast<int>(rng.range(r, w - 1 - r));
            for (int y = cy - r; y <= cy + r; ++y)
                for (int x = cx - r; x <= cx + r; ++x)
                    if ((y - cy) * (y - cy) + (x - cx) * (x - cx) < r * r)
                        shift_pixel(out, plane, y, x, w, spec.intensity);
            break;
        }
        case DefectKind::scratch: {
            const int len = spec.size;
            const int margin = (len + 1) / 2 + 1;
            if (2 * margin > std::min(h, w) - 1)
                throw ConfigError("scratch does not fit the image");
            const double ang = rng.uniform() * M_PI;
            const double ux = std::cos(ang), uy = std::sin(ang);
            const int cy = static_cast<int>(rng.range(margin, h - 1 - margin));
            const int cx = static_cast<int>(rng.range(margin, w - 1 - margin));
            for (int y = cy - margin; y <= cy + margin; ++y)
                for (int x = cx - margin; x <= cx + margin; ++x) {
                    // Distance from the segment of half-length len/2 through (cx,cy).
                    const double px = x - cx, py = y - cy;
                    double t = px * ux + py * uy;
                    t = std::clamp(t, -len / 2.0, len / 2.0);
                    const double dx = px - t * ux, dy = py - t * uy;
                    if (dx * dx + dy * dy <= 1.0) shift_pixel(out, plane, y, x, w, spec.intensity);
                }
            break;
        }
        case DefectKind::paste: {
            const int side = spec.size;
            if (side >= std::min(h, w)) throw ConfigError("paste patch does not fit the image");
            const int sy = static_cast<int>(rng.below(h - side + 1));
            const int sx = static_cast<int>(rng.below(w - side + 1));
            int dy = sy, dx = sx;
            while (dy == sy && dx == sx) {
                dy = static_cast<int>(rng.below(h - side + 1));
                dx = static_cast<int>(rng.below(w - side + 1));
            }
            for (int y = 0; y < side; ++y)
                for (int x = 0; x < side; ++x) {
                    for (int c = 0; c < 3; ++c)
                        out.data()[c * plane + static_cast<size_t>(dy + y) * w + dx + x] =
                            image.data()[c * plane + static_cast<size_t>(sy + y) * w + sx + x];
                    shift_pixel(out, plane, dy + y, dx + x, w, spec.intensity);
                }
            break;
        }
    }

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                if (out.data()[c * plane + static_cast<size_t>(y) * w + x] !=
                    image.data()[c * plane + static_cast<size_t>(y) * w + x]) {
                    mask.data()[static_cast<size_t>(y) * w + x] = 1.0f;
                    break;
                }
    return {out, mask};
}

}  // namespace pgcn
