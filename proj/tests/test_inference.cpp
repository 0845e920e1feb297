#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cstring>
#include <set>

#include "doctest.h"
#include "pgcn/error.hpp"
#include "pgcn/inference.hpp"
#include "pgcn/random.hpp"

using namespace pgcn;

namespace {

// Grid of constant-valued tiles; value(r,c) chosen per test.
TileGrid const_grid(int n, int tile, const std::function<float(int, int)>& value) {
    TileGrid g;
    g.n = n;
    g.tile_h = g.tile_w = tile;
    g.crop_h = g.crop_w = n * tile;
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
            g.tiles.push_back(Tensor(Shape{3, tile, tile}, value(r, c)));
    return g;
}

float mean_of(const Tensor& t) {
    double s = 0.0;
    for (int64_t i = 0; i < t.size(); ++i) s += t.data()[i];
    return static_cast<float>(s / double(t.size()));
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0;
}

// Stand-in generator: element-wise clipped sum of the two context tiles. On a
// blank grid this reproduces blank tiles exactly and smears any corrupted
// context forward, which makes propagation reasoning exact.
Tensor clip_sum(const Tensor& a, const Tensor& b) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i)
        out.data()[i] = std::clamp(a.data()[i] + b.data()[i], 0.0f, 1.0f);
    return out;
}

}  // namespace

TEST_CASE("sweep covers the columns that have two predecessors") {
    for (int n : {3, 5, 6}) {
        TileGrid g = const_grid(n, 8, [](int, int) { return 0.5f; });
        auto pass = [&](Direction d) {
            return sweep(
                g, d, clip_sum,
                [](const Tensor&, const Tensor&) {
                    return std::pair{1.0f, Tensor(Shape{8, 8}, 0.0f)};
                },
                8);
        };
        DirectionalMaps l = pass(Direction::left_to_right);
        DirectionalMaps r = pass(Direction::right_to_left);
        for (int row = 0; row < n; ++row)
            for (int col = 0; col < n; ++col) {
                const size_t i = size_t(row) * n + col;
                CHECK(l.covered[i] == (col >= 2 ? 1 : 0));
                CHECK(r.covered[i] == (col <= n - 3 ? 1 : 0));
                CHECK(l.prob[i] == (col >= 2 ? 1.0f : -1.0f));
                CHECK(r.prob[i] == (col <= n - 3 ? 1.0f : -1.0f));
                CHECK(l.cls[i] == Verdict::undefined);  // not classified yet
            }
    }
}

TEST_CASE("sweep feeds each tile its two in-order predecessors") {
    const int n = 5, tile = 8;
    auto value = [n](int r, int c) { return float(r * n + c + 1) / 64.0f; };
    TileGrid g = const_grid(n, tile, value);
    // P echoes the predicted tile, which echoes the two-back context tile; the
    // mask echoes the observed tile. Placement then pins the index math.
    TilePredictor two_back = [](const Tensor& a, const Tensor&) { return a; };
    TileComparator echo = [tile](const Tensor& observed, const Tensor& reference) {
        return std::pair{mean_of(reference), Tensor(Shape{tile, tile}, mean_of(observed))};
    };
    DirectionalMaps l = sweep(g, Direction::left_to_right, two_back, echo, tile);
    DirectionalMaps r = sweep(g, Direction::right_to_left, two_back, echo, tile);
    for (int row = 0; row < n; ++row) {
        for (int c = 2; c < n; ++c)
            CHECK(l.prob_at(row, c) == doctest::Approx(value(row, c - 2)).epsilon(1e-6));
        for (int c = 0; c <= n - 3; ++c)
            CHECK(r.prob_at(row, c) == doctest::Approx(value(row, c + 2)).epsilon(1e-6));
        // Canvas holds the mask at the tile's own footprint, zero elsewhere.
        for (int c = 0; c < n; ++c) {
            const float px = l.canvas.data()[size_t(row * tile + 3) * g.crop_w + c * tile + 3];
            CHECK(px == doctest::Approx(c >= 2 ? value(row, c) : 0.0f));
        }
    }
}

TEST_CASE("sweep rejects degenerate grids and malformed masks") {
    TileGrid tiny = const_grid(2, 4, [](int, int) { return 0.0f; });
    tiny.n = 2;
    auto p1 = [](const Tensor&, const Tensor&) {
        return std::pair{1.0f, Tensor(Shape{4, 4}, 0.0f)};
    };
    CHECK_THROWS_AS(sweep(tiny, Direction::left_to_right, clip_sum, p1, 4), ConfigError);

    TileGrid g = const_grid(3, 4, [](int, int) { return 0.0f; });
    auto bad_mask = [](const Tensor&, const Tensor&) {
        return std::pair{1.0f, Tensor(Shape{1, 4, 4}, 0.0f)};
    };
    CHECK_THROWS_AS(sweep(g, Direction::left_to_right, clip_sum, bad_mask, 4), DimensionError);
}

TEST_CASE("sweep resizes context and mask when resolutions differ") {
    // 6px tiles swept at resolution 8: the comparator must see 8x8 tiles, and
    // a non-native mask must land on the 6x6 footprint.
    TileGrid g = const_grid(3, 6, [](int, int) { return 0.25f; });
    bool saw = false;
    TileComparator probe = [&](const Tensor& observed, const Tensor& reference) {
        CHECK(observed.shape() == Shape{3, 8, 8});
        CHECK(reference.shape() == Shape{3, 8, 8});
        saw = true;
        return std::pair{0.5f, Tensor(Shape{2, 2}, 0.75f)};
    };
    DirectionalMaps l = sweep(g, Direction::left_to_right, clip_sum, probe, 8);
    CHECK(saw);
    CHECK(l.canvas.data()[size_t(3) * g.crop_w + 2 * 6 + 3] == doctest::Approx(0.75f));
}

TEST_CASE("threshold_classify splits covered tiles at tau and validates it") {
    TileGrid g = const_grid(5, 4, [](int r, int c) { return float(r * 5 + c) / 32.0f; });
    TileComparator echo = [](const Tensor& observed, const Tensor&) {
        return std::pair{mean_of(observed), Tensor(Shape{4, 4}, 0.0f)};
    };
    DirectionalMaps raw = sweep(g, Direction::left_to_right, clip_sum, echo, 4);
    for (float bad : {0.0f, 1.0f, -0.2f, 1.5f})
        CHECK_THROWS_AS(threshold_classify(raw, bad), ConfigError);

    int low_count = 0, high_count = 0;
    for (float tau : {0.25f, 0.75f}) {
        DirectionalMaps m = threshold_classify(raw, tau);
        int abnormal = 0;
        for (int r = 0; r < 5; ++r)
            for (int c = 0; c < 5; ++c) {
                const size_t i = size_t(r) * 5 + c;
                if (!m.covered[i]) {
                    CHECK(m.cls[i] == Verdict::undefined);
                    continue;
                }
                const Verdict want = m.prob[i] < tau ? Verdict::abnormal : Verdict::normal;
                CHECK(m.cls[i] == want);
                abnormal += m.cls[i] == Verdict::abnormal;
            }
        (tau < 0.5f ? low_count : high_count) = abnormal;
    }
    CHECK(low_count < high_count);  // raising tau can only flag more tiles
    // The input maps stay untouched (classification is by value).
    CHECK(raw.cls[size_t(0) * 5 + 2] == Verdict::undefined);
}

// The heart of the pipeline: a single corrupted tile contaminates up to two
// successors in each sweep direction, and intersecting the two directions
// cancels the smear wherever both directions cover. Border columns see only
// one direction, so they keep that direction's verdict. The expected set is
// derived here from first principles and checked against the pipeline for
// every corruption site.
TEST_CASE("directional intersection localizes a single corrupted tile") {
    const int tile = 8;
    const float tau = 0.5f;
    TileComparator exact = [tile](const Tensor& observed, const Tensor& reference) {
        const bool same = bit_equal(observed, reference);
        return std::pair{same ? 1.0f : 0.0f, Tensor(Shape{tile, tile}, same ? 0.0f : 1.0f)};
    };
    for (int n : {5, 6, 8}) {
        for (int k = 0; k < n; ++k) {
            const int row = k % n;
            TileGrid g = const_grid(n, tile, [&](int r, int c) {
                return (r == row && c == k) ? 0.3f : 0.0f;
            });
            DirectionalMaps l = threshold_classify(
                sweep(g, Direction::left_to_right, clip_sum, exact, tile), tau);
            DirectionalMaps r = threshold_classify(
                sweep(g, Direction::right_to_left, clip_sum, exact, tile), tau);

            // Independent expectation. Forward pass: a corrupted tile is
            // mispredicted itself (clean context, dirty observation) and
            // poisons the predictions of the next two columns. Mirror for the
            // reverse pass. Verdicts combine per the coverage pattern.
            std::set<int> left_bad, right_bad;
            for (int c : {k, k + 1, k + 2})
                if (c >= 2 && c <= n - 1) left_bad.insert(c);
            for (int c : {k - 2, k - 1, k})
                if (c >= 0 && c <= n - 3) right_bad.insert(c);

            for (int rr = 0; rr < n; ++rr)
                for (int c = 0; c < n; ++c) {
                    const size_t i = size_t(rr) * n + c;
                    const bool in_l = rr == row && left_bad.count(c);
                    const bool in_r = rr == row && right_bad.count(c);
                    if (l.covered[i])
                        CHECK(l.cls[i] == (in_l ? Verdict::abnormal : Verdict::normal));
                    if (r.covered[i])
                        CHECK(r.cls[i] == (in_r ? Verdict::abnormal : Verdict::normal));
                }

            DetectionResult res = intersect(l, r);
            for (int rr = 0; rr < n; ++rr)
                for (int c = 0; c < n; ++c) {
                    const size_t i = size_t(rr) * n + c;
                    bool want;
                    const bool cl = c >= 2, cr = c <= n - 3;
                    if (cl && cr)
                        want = rr == row && left_bad.count(c) && right_bad.count(c);
                    else if (cl)
                        want = rr == row && left_bad.count(c) != 0;
                    else
                        want = rr == row && right_bad.count(c) != 0;
                    CHECK(res.abnormal[i] == (want ? 1 : 0));
                }

            // On the doubly-covered region the conjunction equals the set
            // intersection of the directional sets: the guilty tile alone.
            // (Border columns see one direction and keep its smear; the
            // checks above pin that behavior tile by tile.)
            int interior_flagged = 0;
            for (int rr = 0; rr < n; ++rr)
                for (int c = 2; c <= n - 3; ++c)
                    interior_flagged += res.abnormal[size_t(rr) * n + c];
            if (k >= 2 && k <= n - 3) {
                CHECK(interior_flagged == 1);
                CHECK(res.abnormal[size_t(row) * n + k] == 1);
            } else {
                CHECK(interior_flagged == 0);
            }
            // A corrupted tile under double coverage always scores 1 - P = 1.
            if (k >= 2 && k <= n - 3) CHECK(res.image_score == 1.0f);
        }
    }
}

TEST_CASE("intersect combines verdicts, heat, and score across directions") {
    const int n = 5, tile = 4;
    auto value = [n](int r, int c) { return float(r * n + c + 1) / 32.0f; };
    TileGrid g = const_grid(n, tile, value);
    // P and heat both echo the two-back context tile, so the directions
    // disagree everywhere and every combination rule gets exercised.
    TilePredictor two_back = [](const Tensor& a, const Tensor&) { return a; };
    TileComparator echo = [tile](const Tensor&, const Tensor& reference) {
        return std::pair{mean_of(reference), Tensor(Shape{tile, tile}, mean_of(reference))};
    };
    const float tau = 0.35f;
    DirectionalMaps l =
        threshold_classify(sweep(g, Direction::left_to_right, two_back, echo, tile), tau);
    DirectionalMaps r =
        threshold_classify(sweep(g, Direction::right_to_left, two_back, echo, tile), tau);
    DetectionResult res = intersect(l, r);

    float want_score = 0.0f;
    for (int row = 0; row < n; ++row)
        for (int c = 0; c < n; ++c) {
            const size_t i = size_t(row) * n + c;
            const bool cl = c >= 2, cr = c <= n - 3;
            const float pl = value(row, c - 2), pr = value(row, c + 2);
            bool want;
            if (cl && cr)
                want = pl < tau && pr < tau;
            else if (cl)
                want = pl < tau;
            else
                want = pr < tau;
            CHECK(res.abnormal[i] == (want ? 1 : 0));

            // Heat at the footprint: min over covering directions.
            const float px =
                res.anomaly_map.data()[size_t(row * tile + 1) * g.crop_w + c * tile + 1];
            if (cl && cr)
                CHECK(px == doctest::Approx(std::min(pl, pr)));
            else
                CHECK(px == doctest::Approx(cl ? pl : pr));

            float tile_score = 1.0f;
            if (cl) tile_score = std::min(tile_score, 1.0f - pl);
            if (cr) tile_score = std::min(tile_score, 1.0f - pr);
            if (cl || cr) want_score = std::max(want_score, tile_score);
        }
    CHECK(res.image_score == doctest::Approx(want_score));
    CHECK(res.left.direction == Direction::left_to_right);
    CHECK(res.right.direction == Direction::right_to_left);
}

TEST_CASE("a 3-grid leaves its middle column uncovered and normal") {
    const int n = 3, tile = 4;
    TileGrid g = const_grid(n, tile, [](int, int) { return 0.9f; });
    // Everything mismatches: both directions flag all they can see.
    TileComparator alarm = [tile](const Tensor&, const Tensor&) {
        return std::pair{0.0f, Tensor(Shape{tile, tile}, 1.0f)};
    };
    DirectionalMaps l =
        threshold_classify(sweep(g, Direction::left_to_right, clip_sum, alarm, tile), 0.5f);
    DirectionalMaps r =
        threshold_classify(sweep(g, Direction::right_to_left, clip_sum, alarm, tile), 0.5f);
    DetectionResult res = intersect(l, r);
    for (int row = 0; row < n; ++row) {
        CHECK(res.abnormal[size_t(row) * n + 0] == 1);  // right pass only
        CHECK(res.abnormal[size_t(row) * n + 1] == 0);  // nobody covers col 1
        CHECK(res.abnormal[size_t(row) * n + 2] == 1);  // left pass only
        const float mid =
            res.anomaly_map.data()[size_t(row * tile + 2) * g.crop_w + 1 * tile + 2];
        CHECK(mid == 0.0f);
    }
    CHECK(res.image_score == 1.0f);
}

TEST_CASE("intersect rejects mismatched or unclassified inputs") {
    const int tile = 4;
    TileGrid g5 = const_grid(5, tile, [](int, int) { return 0.5f; });
    TileGrid g6 = const_grid(6, tile, [](int, int) { return 0.5f; });
    TileComparator ok = [tile](const Tensor&, const Tensor&) {
        return std::pair{1.0f, Tensor(Shape{tile, tile}, 0.0f)};
    };
    auto classified = [&](const TileGrid& g, Direction d) {
        return threshold_classify(sweep(g, d, clip_sum, ok, tile), 0.5f);
    };

    DirectionalMaps l5 = classified(g5, Direction::left_to_right);
    DirectionalMaps r5 = classified(g5, Direction::right_to_left);
    DirectionalMaps r6 = classified(g6, Direction::right_to_left);
    CHECK_THROWS_AS(intersect(r5, l5), ContractError);  // swapped directions
    CHECK_THROWS_AS(intersect(l5, r6), DimensionError);

    DirectionalMaps raw = sweep(g5, Direction::right_to_left, clip_sum, ok, tile);
    CHECK_THROWS_AS(intersect(l5, raw), ContractError);
}

TEST_CASE("detect runs the full stack end to end on small networks") {
    GenConfig gc;
    gc.tile_resolution = 64;
    gc.base_channels = 16;
    gc.window_m = 2;
    gc.encoder_depths = {1, 1, 1, 1};
    gc.decoder_depths = {1, 1, 1, 1};
    Rng grng(21);
    GenerationNet gen(gc, grng);
    CmpConfig cc;
    cc.width1 = 8;
    cc.width2 = 12;
    cc.width3 = 16;
    cc.fc_hidden = 16;
    Rng crng(22);
    ComparatorNet cmp(cc, crng);

    Rng irng(23);
    Tensor image(Shape{3, 96, 96});
    for (int64_t i = 0; i < image.size(); ++i) image.data()[i] = irng.uniform();

    DetectionResult res = detect(image, gen, cmp, 3, 0.5f);
    CHECK(res.n == 3);
    CHECK(res.abnormal.size() == 9);
    CHECK(res.anomaly_map.shape() == Shape{96, 96});
    CHECK(res.image_score >= 0.0f);
    CHECK(res.image_score <= 1.0f);
    for (int row = 0; row < 3; ++row) CHECK(res.abnormal[size_t(row) * 3 + 1] == 0);
    // Deterministic: the same inputs yield the same maps bit for bit.
    DetectionResult res2 = detect(image, gen, cmp, 3, 0.5f);
    CHECK(res2.image_score == res.image_score);
    CHECK(bit_equal(res2.anomaly_map, res.anomaly_map));

    CHECK_THROWS_AS(detect(image, gen, cmp, 3, 1.5f), ConfigError);
    CHECK_THROWS_AS(detect(image, gen, cmp, 2, 0.5f), ConfigError);
}
