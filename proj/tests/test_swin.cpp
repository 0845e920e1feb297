#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "pgcn/swin.hpp"
#include "support/oracles.hpp"

using namespace pgcn;
using oracle::check_gradients;
using oracle::randu;

TEST_CASE("window partition/reverse round-trips exactly") {
    Rng rng(1);
    Tensor x = randu(rng, {6, 9, 5});
    Tensor win = window_partition(x, 3);
    CHECK(win.shape() == Shape{6, 9, 5});
    Tensor back = window_reverse(win, 3, 6, 9);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(back.at(i) == x.at(i));

    // Whole-map window is the identity reshape.
    Tensor y = randu(rng, {4, 4, 2});
    Tensor one = window_partition(y, 4);
    CHECK(one.shape() == Shape{1, 16, 2});
    for (int64_t i = 0; i < y.size(); ++i) CHECK(one.at(i) == y.at(i));

    Tensor q = randu(rng, {14, 14, 3});
    CHECK(window_partition(q, 7).shape() == Shape{4, 49, 3});

    CHECK_THROWS_AS(window_partition(randu(rng, {5, 6, 2}), 3), DimensionError);
    CHECK_THROWS_AS(window_reverse(win, 3, 9, 9), DimensionError);
}

TEST_CASE("window partition places tokens row-major within windows") {
    // 4x4 map with value y*10+x in a single channel.
    Tensor x(Shape{4, 4, 1});
    for (int y = 0; y < 4; ++y)
        for (int xx = 0; xx < 4; ++xx) x.data()[y * 4 + xx] = static_cast<float>(y * 10 + xx);
    Tensor win = window_partition(x, 2);
    // Window 1 is the top-right 2x2: (0,2),(0,3),(1,2),(1,3).
    CHECK(win.at(4) == 2.0f);
    CHECK(win.at(5) == 3.0f);
    CHECK(win.at(6) == 12.0f);
    CHECK(win.at(7) == 13.0f);
}

TEST_CASE("cyclic roll wraps both axes and inverts") {
    Tensor x(Shape{3, 3, 1}, std::vector<float>{0, 1, 2, 3, 4, 5, 6, 7, 8});
    Tensor r = cyclic_roll(x, 1, 0);  // rows move down; last row wraps to top
    CHECK(r.at(0) == 6.0f);
    CHECK(r.at(3) == 0.0f);
    Tensor c = cyclic_roll(x, 0, -1);  // columns move left
    CHECK(c.at(0) == 1.0f);
    CHECK(c.at(2) == 0.0f);
    Tensor back = cyclic_roll(cyclic_roll(x, -2, 1), 2, -1);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(back.at(i) == x.at(i));
}

TEST_CASE("relative position index covers the offset table") {
    auto idx = relative_position_index(2);
    REQUIRE(idx.size() == 16);
    // Token 0 is (0,0), token 3 is (1,1): offset (-1,-1) -> row 0.
    CHECK(idx[0 * 4 + 3] == 0);
    // Self-offsets land on the table center.
    for (int i = 0; i < 4; ++i) CHECK(idx[i * 4 + i] == 4);
    // Reversed pair lands on the mirrored row.
    CHECK(idx[3 * 4 + 0] == 8);
    for (int v : idx) {
        CHECK(v >= 0);
        CHECK(v < 9);
    }
}

TEST_CASE("shift mask zeroes same-region pairs and floors the rest") {
    Tensor mask = shift_attention_mask(4, 4, 2, 1);
    CHECK(mask.shape() == Shape{4, 4, 4});
    // Top-left window sits inside one region: all pairs allowed.
    for (int i = 0; i < 16; ++i) CHECK(mask.at(i) == 0.0f);
    // Bottom-right window straddles four regions: only self-pairs allowed.
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(mask.at(3 * 16 + i * 4 + j) == (i == j ? 0.0f : -1e4f));
    CHECK_THROWS_AS(shift_attention_mask(4, 4, 2, 0), ContractError);
    CHECK_THROWS_AS(shift_attention_mask(5, 4, 2, 1), DimensionError);
}

TEST_CASE("single-token windows reduce attention to the value path") {
    Rng rng(2);
    WindowAttention attn(6, 2, 1, rng, false);  // M=1 -> T=1, softmax over a singleton
    Tensor win = randu(rng, {5, 1, 6});
    Tensor out = attn.forward(win, Tensor());
    // Reference: out = proj(v) with v = x * Wv + bv (qkv columns 2C..3C).
    for (int g = 0; g < 5; ++g)
        for (int c = 0; c < 6; ++c) {
            double v[6];
            for (int j = 0; j < 6; ++j) {
                double acc = attn.qkv.bias.at(12 + j);
                for (int k = 0; k < 6; ++k)
                    acc += static_cast<double>(win.at(g * 6 + k)) * attn.qkv.weight.at(k * 18 + 12 + j);
                v[j] = acc;
            }
            double ref = attn.proj.bias.at(c);
            for (int j = 0; j < 6; ++j) ref += v[j] * attn.proj.weight.at(j * 6 + c);
            CHECK(out.at(g * 6 + c) == doctest::Approx(ref).epsilon(1e-4));
        }
}

TEST_CASE("uniform q,k turn attention into a window mean") {
    Rng rng(3);
    WindowAttention attn(4, 2, 2, rng, false);
    // Zero the q,k columns so scores vanish; make v the identity and the
    // output projection the identity: attention must average window rows.
    init_fill(attn.qkv.weight, 0.0f);
    init_fill(attn.qkv.bias, 0.0f);
    for (int i = 0; i < 4; ++i) attn.qkv.weight.data()[i * 12 + 8 + i] = 1.0f;
    init_fill(attn.proj.weight, 0.0f);
    init_fill(attn.proj.bias, 0.0f);
    for (int i = 0; i < 4; ++i) attn.proj.weight.data()[i * 4 + i] = 1.0f;

    Tensor win = randu(rng, {3, 4, 4});
    Tensor out = attn.forward(win, Tensor());
    for (int g = 0; g < 3; ++g)
        for (int c = 0; c < 4; ++c) {
            double mean = 0.0;
            for (int t = 0; t < 4; ++t) mean += win.at((g * 4 + t) * 4 + c);
            mean /= 4.0;
            CHECK(out.at((g * 4 + 0) * 4 + c) == doctest::Approx(mean).epsilon(1e-5));
            CHECK(out.at((g * 4 + 3) * 4 + c) == doctest::Approx(mean).epsilon(1e-5));
        }
}

TEST_CASE("windowed attention equals dense attention under a block mask") {
    Rng rng(4);
    const int h = 14, w = 14, c = 8, nh = 2, hd = 4, m = 7, t = h * w;
    WindowAttention attn(c, nh, m, rng, false);
    Tensor x = randu(rng, {h, w, c});

    Tensor got = window_reverse(attn.forward(window_partition(x, m), Tensor()), m, h, w);

    // Dense reference over all tokens, excluding cross-window pairs outright.
    std::vector<double> packed(static_cast<size_t>(t) * 3 * c);
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < 3 * c; ++j) {
            double acc = attn.qkv.bias.at(j);
            for (int k = 0; k < c; ++k)
                acc += static_cast<double>(x.at(i * c + k)) * attn.qkv.weight.at(k * 3 * c + j);
            packed[static_cast<size_t>(i) * 3 * c + j] = acc;
        }
    auto window_of = [&](int tok) { return ((tok / w) / m) * (w / m) + (tok % w) / m; };
    std::vector<double> merged(static_cast<size_t>(t) * c);
    for (int head = 0; head < nh; ++head) {
        std::vector<float> q(static_cast<size_t>(t) * hd), k(q.size()), v(q.size());
        for (int i = 0; i < t; ++i)
            for (int d = 0; d < hd; ++d) {
                q[static_cast<size_t>(i * hd + d)] = static_cast<float>(packed[static_cast<size_t>(i) * 3 * c + head * hd + d]);
                k[static_cast<size_t>(i * hd + d)] = static_cast<float>(packed[static_cast<size_t>(i) * 3 * c + c + head * hd + d]);
                v[static_cast<size_t>(i * hd + d)] = static_cast<float>(packed[static_cast<size_t>(i) * 3 * c + 2 * c + head * hd + d]);
            }
        std::vector<float> block(static_cast<size_t>(t) * t, 0.0f);
        for (int i = 0; i < t; ++i)
            for (int j = 0; j < t; ++j)
                if (window_of(i) != window_of(j)) block[static_cast<size_t>(i) * t + j] = -1e30f;
        auto ctx = oracle::attention_naive(q, k, v, t, hd, block);
        for (int i = 0; i < t; ++i)
            for (int d = 0; d < hd; ++d)
                merged[static_cast<size_t>(i) * c + head * hd + d] = ctx[static_cast<size_t>(i * hd + d)];
    }
    for (int i = 0; i < t; ++i)
        for (int ch = 0; ch < c; ++ch) {
            double ref = attn.proj.bias.at(ch);
            for (int j = 0; j < c; ++j)
                ref += merged[static_cast<size_t>(i) * c + j] * attn.proj.weight.at(j * c + ch);
            CHECK(got.at(i * c + ch) == doctest::Approx(ref).epsilon(1e-5));
        }
}

TEST_CASE("relative bias shifts scores per head and trains") {
    Rng rng(5);
    WindowAttention with_bias(4, 2, 2, rng, true);
    CHECK(with_bias.bias_table.shape() == Shape{9, 2});

    Tensor win = randu(rng, {2, 4, 4});
    Tensor table = with_bias.bias_table;
    check_gradients([&] { return mean_all(with_bias.forward(win, Tensor())); }, {table}, 1e-2f, 3e-2f);
}

TEST_CASE("swin block with zeroed output projections is the identity") {
    Rng rng(6);
    SwinBlock block(4, 2, 2, 0, rng);
    init_fill(block.attn.proj.weight, 0.0f);
    init_fill(block.attn.proj.bias, 0.0f);
    init_fill(block.mlp.fc2.weight, 0.0f);
    init_fill(block.mlp.fc2.bias, 0.0f);
    Tensor x = randu(rng, {4, 4, 4});
    Tensor y = block.forward(x, Tensor());
    for (int64_t i = 0; i < x.size(); ++i) CHECK(y.at(i) == x.at(i));
}

TEST_CASE("shift is irrelevant on spatially constant input") {
    const int dim = 4, heads = 2, m = 2;
    Rng r1(7), r2(7);  // identical weight draws
    SwinBlock plain(dim, heads, m, 0, r1);
    SwinBlock shifted(dim, heads, m, 1, r2);
    Tensor mask = shift_attention_mask(6, 6, m, 1);

    Tensor x(Shape{6, 6, dim});
    for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = 0.3f + 0.1f * static_cast<float>(i % dim);
    Tensor a = plain.forward(x, Tensor());
    Tensor b = shifted.forward(x, mask);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-5));
}

TEST_CASE("shifted block equals the explicit roll-mask-attend recipe") {
    Rng rng(8);
    const int dim = 4, heads = 2, m = 2, shift = 1, h = 4, w = 6;
    SwinBlock block(dim, heads, m, shift, rng);
    Tensor mask = shift_attention_mask(h, w, m, shift);
    Tensor x = randu(rng, {h, w, dim});

    Tensor got = block.forward(x, mask);

    Tensor y = block.ln1.forward(x);
    y = cyclic_roll(y, -shift, -shift);
    y = window_reverse(block.attn.forward(window_partition(y, m), mask), m, h, w);
    y = cyclic_roll(y, shift, shift);
    Tensor mid = add(x, y);
    Tensor ref = add(mid, block.mlp.forward(block.ln2.forward(mid)));
    for (int64_t i = 0; i < got.size(); ++i)
        CHECK(got.at(i) == doctest::Approx(ref.at(i)).epsilon(1e-6));
}

TEST_CASE("stage alternates shifts and stays deterministic") {
    Rng rng(9);
    SwinStage stage(4, 2, 2, 2, 4, 4, rng);
    CHECK(stage.blocks[0].shift == 0);
    CHECK(stage.blocks[1].shift == 1);
    CHECK(stage.mask.defined());
    Tensor x = randu(rng, {4, 4, 4});
    Tensor a = stage.forward(x);
    Tensor b = stage.forward(x);
    for (int64_t i = 0; i < a.size(); ++i) CHECK(a.at(i) == b.at(i));

    // Whole-map windows disable shifting (mask would cut valid pairs).
    SwinStage tiny(4, 2, 2, 2, 2, 2, rng);
    CHECK(tiny.blocks[1].shift == 0);
    CHECK_FALSE(tiny.mask.defined());
}

TEST_CASE("patch embed matches conv-then-permute exactly") {
    Rng rng(10);
    PatchEmbed embed(5, rng);
    Tensor tile = randu(rng, {3, 8, 8}, 0.0f, 1.0f);
    Tensor tok = embed.forward(tile);
    CHECK(tok.shape() == Shape{2, 2, 5});
    Tensor conv = conv2d(tile, embed.kernel, embed.bias, 4, 0);  // [5,2,2]
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x)
            for (int c = 0; c < 5; ++c)
                CHECK(tok.at((y * 2 + x) * 5 + c) == conv.at((c * 2 + y) * 2 + x));

    // Constant image, zero bias: every token identical.
    init_fill(embed.bias, 0.0f);
    Tensor flat(Shape{3, 8, 8}, 0.7f);
    Tensor ft = embed.forward(flat);
    for (int t = 1; t < 4; ++t)
        for (int c = 0; c < 5; ++c)
            CHECK(ft.at(t * 5 + c) == doctest::Approx(ft.at(c)).epsilon(1e-6));

    CHECK_THROWS_AS(embed.forward(randu(rng, {3, 6, 8})), DimensionError);
}

TEST_CASE("patch embed at full tile scale produces the token grid") {
    Rng rng(11);
    PatchEmbed embed(24, rng);
    Tensor tile(Shape{3, 224, 224}, 0.5f);
    Tensor tok = embed.forward(tile);
    CHECK(tok.shape() == Shape{56, 56, 24});
    CHECK(static_cast<int64_t>(56) * 56 == 3136);
}

TEST_CASE("patch merging halves spatial dims and matches a loop reference") {
    Rng rng(12);
    PatchMerging pm(3, rng);
    Tensor tiny = randu(rng, {2, 2, 3});
    CHECK(pm.forward(tiny).shape() == Shape{1, 1, 6});
    CHECK_THROWS_AS(pm.forward(randu(rng, {3, 2, 3})), DimensionError);

    Tensor x = randu(rng, {4, 6, 3});
    Tensor y = pm.forward(x);
    CHECK(y.shape() == Shape{2, 3, 6});

    // Reference: row-major 2x2 gather, layer norm, then the reduction matmul.
    for (int oy = 0; oy < 2; ++oy)
        for (int ox = 0; ox < 3; ++ox) {
            double cat[12];
            int p = 0;
            for (int by = 0; by < 2; ++by)
                for (int bx = 0; bx < 2; ++bx)
                    for (int c = 0; c < 3; ++c)
                        cat[p++] = x.at(((2 * oy + by) * 6 + 2 * ox + bx) * 3 + c);
            double mean = 0.0;
            for (double v : cat) mean += v;
            mean /= 12.0;
            double var = 0.0;
            for (double v : cat) var += (v - mean) * (v - mean);
            var /= 12.0;
            for (int c = 0; c < 6; ++c) {
                double acc = 0.0;
                for (int j = 0; j < 12; ++j) {
                    const double norm = (cat[j] - mean) / std::sqrt(var + 1e-5) *
                                            pm.norm.gamma.at(j) + pm.norm.beta.at(j);
                    acc += norm * pm.reduce.weight.at(j * 6 + c);
                }
                CHECK(y.at((oy * 3 + ox) * 6 + c) == doctest::Approx(acc).epsilon(1e-4));
            }
        }
}

TEST_CASE("patch expanding shuffles channels into row-major 2x2 blocks") {
    Rng rng(13);
    PatchExpanding pe(8, rng);
    // Identity into the first 8 of 16 channels: block (0,0) gets x[0..3],
    // block (0,1) gets x[4..7], blocks (1,0),(1,1) get zeros.
    init_fill(pe.expand.weight, 0.0f);
    for (int i = 0; i < 8; ++i) pe.expand.weight.data()[i * 16 + i] = 1.0f;
    Tensor x(Shape{1, 1, 8}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
    Tensor y = pe.forward(x);
    CHECK(y.shape() == Shape{2, 2, 4});
    CHECK(y.at(0) == 1.0f);   // (0,0,0)
    CHECK(y.at(3) == 4.0f);   // (0,0,3)
    CHECK(y.at(4) == 5.0f);   // (0,1,0)
    CHECK(y.at(7) == 8.0f);   // (0,1,3)
    for (int i = 8; i < 16; ++i) CHECK(y.at(i) == 0.0f);

    CHECK_THROWS_AS(PatchExpanding(5, rng), DimensionError);
}

TEST_CASE("merging then expanding restores the shape") {
    Rng rng(14);
    PatchMerging pm(4, rng);
    PatchExpanding pe(8, rng);
    Tensor x = randu(rng, {6, 4, 4});
    Tensor y = pe.forward(pm.forward(x));
    CHECK(y.shape() == x.shape());
}

TEST_CASE("encoder-style merge chain follows the stage schedule") {
    Rng rng(15);
    PatchEmbed embed(24, rng);
    PatchMerging m1(24, rng), m2(48, rng), m3(96, rng);
    Tensor tile(Shape{3, 224, 224}, 0.25f);
    Tensor s1 = embed.forward(tile);
    CHECK(s1.shape() == Shape{56, 56, 24});
    Tensor s2 = m1.forward(s1);
    CHECK(s2.shape() == Shape{28, 28, 48});
    Tensor s3 = m2.forward(s2);
    CHECK(s3.shape() == Shape{14, 14, 96});
    Tensor s4 = m3.forward(s3);
    CHECK(s4.shape() == Shape{7, 7, 192});
}

TEST_CASE("gradients flow through a shifted block") {
    Rng rng(16);
    SwinBlock block(4, 2, 2, 1, rng);
    Tensor mask = shift_attention_mask(4, 4, 2, 1);
    Tensor x = randu(rng, {4, 4, 4});
    Tensor qkv_w = block.attn.qkv.weight;
    Tensor proj_w = block.attn.proj.weight;
    Tensor fc1_w = block.mlp.fc1.weight;
    Tensor g1 = block.ln1.gamma;
    check_gradients([&] { return mean_all(mul(block.forward(x, mask), x)); },
                    {x, qkv_w, proj_w, fc1_w, g1}, 1e-2f, 3e-2f);
}

TEST_CASE("layer parameter collection names every tensor once") {
    Rng rng(17);
    SwinBlock block(4, 2, 2, 1, rng);
    ParamList params;
    block.collect("b", params);
    // ln1(2) + qkv(2) + proj(2) + bias_table(1) + ln2(2) + fc1(2) + fc2(2)
    CHECK(params.size() == 13);
    for (size_t i = 0; i < params.size(); ++i)
        for (size_t j = i + 1; j < params.size(); ++j) CHECK(params[i].name != params[j].name);
    bool has_table = false;
    for (auto& p : params) has_table = has_table || p.name == "b.attn.bias_table";
    CHECK(has_table);
}
