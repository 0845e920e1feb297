#include "pgcn/generation.hpp"

#include <cmath>
#include <string>

#include "pgcn/error.hpp"
#include "pgcn/ops.hpp"

namespace pgcn {

namespace {

int heads_for(int dim, int head_dim) {
    if (head_dim < 1 || dim % head_dim != 0)
        throw ConfigError("stage width " + std::to_string(dim) + " not divisible by head_dim " +
                          std::to_string(head_dim));
    return dim / head_dim;
}

void check_tile(const Tensor& t, int res, const char* name) {
    if (t.ndim() != 3 || t.dim(0) != 3 || t.dim(1) != res || t.dim(2) != res)
        throw DimensionError(std::string(name) + " must be [3," + std::to_string(res) + "," +
                             std::to_string(res) + "], got " + shape_str(t.shape()));
}

void check_stage(const Tensor& t, int res, int dim, const char* who, int stage) {
    if (t.ndim() != 3 || t.dim(0) != res || t.dim(1) != res || t.dim(2) != dim)
        throw DimensionError(std::string(who) + " stage " + std::to_string(stage) + ": expected [" +
                             std::to_string(res) + "," + std::to_string(res) + "," +
                             std::to_string(dim) + "], got " + shape_str(t.shape()));
}

// [H,W,C] -> [C,H,W]
Tensor to_chw(const Tensor& x) {
    return take(x, make_permute_indices(x.shape(), {2, 0, 1}),
                Shape{x.dim(2), x.dim(0), x.dim(1)});
}

// [C,H,W] -> [H,W,C]
Tensor to_hwc(const Tensor& x) {
    return take(x, make_permute_indices(x.shape(), {1, 2, 0}),
                Shape{x.dim(1), x.dim(2), x.dim(0)});
}

}  // namespace

Encoder::Encoder(const GenConfig& g, Rng& rng) {
    const int c = g.base_channels, m = g.window_m, r = g.tile_resolution / 4;
    embed = PatchEmbed(c, rng);
    st1 = SwinStage(c, g.encoder_depths[0], heads_for(c, g.head_dim), m, r, r, rng,
                    g.relative_bias);
    pm1 = PatchMerging(c, rng);
    st2 = SwinStage(2 * c, g.encoder_depths[1], heads_for(2 * c, g.head_dim), m, r / 2, r / 2, rng,
                    g.relative_bias);
    pm2 = PatchMerging(2 * c, rng);
    st3 = SwinStage(4 * c, g.encoder_depths[2], heads_for(4 * c, g.head_dim), m, r / 4, r / 4, rng,
                    g.relative_bias);
    pm3 = PatchMerging(4 * c, rng);
    st4 = SwinStage(8 * c, g.encoder_depths[3], heads_for(8 * c, g.head_dim), m, r / 8, r / 8, rng,
                    g.relative_bias);
}

StageFeatures Encoder::forward(const Tensor& tile) const {
    StageFeatures f;
    f.s1 = st1.forward(embed.forward(tile));
    f.s2 = st2.forward(pm1.forward(f.s1));
    f.s3 = st3.forward(pm2.forward(f.s2));
    f.s4 = st4.forward(pm3.forward(f.s3));
    return f;
}

void Encoder::collect(const std::string& p, ParamList& out) {
    embed.collect(p + ".embed", out);
    st1.collect(p + ".stage1", out);
    pm1.collect(p + ".merge1", out);
    st2.collect(p + ".stage2", out);
    pm2.collect(p + ".merge2", out);
    st3.collect(p + ".stage3", out);
    pm3.collect(p + ".merge3", out);
    st4.collect(p + ".stage4", out);
}

Decoder::Decoder(const GenConfig& g, Rng& rng) {
    const int c = g.base_channels, m = g.window_m, r = g.tile_resolution / 4;
    pe1 = PatchExpanding(8 * c, rng);
    st1 = SwinStage(4 * c, g.decoder_depths[0], heads_for(4 * c, g.head_dim), m, r / 4, r / 4, rng,
                    g.relative_bias);
    pe2 = PatchExpanding(4 * c, rng);
    st2 = SwinStage(2 * c, g.decoder_depths[1], heads_for(2 * c, g.head_dim), m, r / 2, r / 2, rng,
                    g.relative_bias);
    pe3 = PatchExpanding(2 * c, rng);
    st3 = SwinStage(c, g.decoder_depths[2], heads_for(c, g.head_dim), m, r, r, rng,
                    g.relative_bias);
    project = Linear(3 * c, c, rng);
    st4 = SwinStage(c, g.decoder_depths[3], heads_for(c, g.head_dim), m, r, r, rng,
                    g.relative_bias);
}

void Decoder::collect(const std::string& p, ParamList& out) {
    pe1.collect(p + ".expand1", out);
    st1.collect(p + ".stage1", out);
    pe2.collect(p + ".expand2", out);
    st2.collect(p + ".stage2", out);
    pe3.collect(p + ".expand3", out);
    st3.collect(p + ".stage3", out);
    project.collect(p + ".project", out);
    st4.collect(p + ".stage4", out);
}

FusionHead::FusionHead(const GenConfig& g, Rng& rng) {
    const int c = g.base_channels;
    p1 = Linear(4 * c, c, rng);
    p2 = Linear(2 * c, c, rng);
    p3 = Linear(c, c, rng);
    p4 = Linear(c, c, rng);
    mlp1 = Linear(4 * c, 4 * c, rng);
    mlp2 = Linear(4 * c, 3, rng);
}

void FusionHead::collect(const std::string& p, ParamList& out) {
    p1.collect(p + ".p1", out);
    p2.collect(p + ".p2", out);
    p3.collect(p + ".p3", out);
    p4.collect(p + ".p4", out);
    mlp1.collect(p + ".mlp1", out);
    mlp2.collect(p + ".mlp2", out);
}

GenerationNet::GenerationNet(const GenConfig& g, Rng& rng) : cfg(g) {
    if (g.tile_resolution % 32 != 0)
        throw ConfigError("tile_resolution " + std::to_string(g.tile_resolution) +
                          " must be divisible by 32");
    if ((g.tile_resolution / 32) % g.window_m != 0)
        throw ConfigError("tile_resolution/32 = " + std::to_string(g.tile_resolution / 32) +
                          " must be divisible by window_m " + std::to_string(g.window_m));
    enc1 = Encoder(g, rng);
    // Tensor members alias storage, so a struct copy shares every weight.
    enc2 = g.share_encoders ? enc1 : Encoder(g, rng);
    dec = Decoder(g, rng);
    head = FusionHead(g, rng);
}

StageFeatures GenerationNet::encode(const Tensor& tile, int which) const {
    check_tile(tile, cfg.tile_resolution, "conditioning tile");
    if (which == 1) return enc1.forward(tile);
    if (which == 2) return enc2.forward(tile);
    throw ContractError("encoder selector must be 1 or 2, got " + std::to_string(which));
}

std::array<Tensor, 4> GenerationNet::decode(const StageFeatures& e1,
                                            const StageFeatures& e2) const {
    const int c = cfg.base_channels, r = cfg.tile_resolution / 4;
    for (const StageFeatures* e : {&e1, &e2}) {
        check_stage(e->s1, r, c, "decoder input", 1);
        check_stage(e->s2, r / 2, 2 * c, "decoder input", 2);
        check_stage(e->s3, r / 4, 4 * c, "decoder input", 3);
        check_stage(e->s4, r / 8, 8 * c, "decoder input", 4);
    }
    std::array<Tensor, 4> d;
    Tensor in1 = add(e1.s4, e2.s4);
    d[0] = dec.st1.forward(dec.pe1.forward(in1));
    Tensor in2 = add(add(e1.s3, e2.s3), d[0]);
    d[1] = dec.st2.forward(dec.pe2.forward(in2));
    Tensor in3 = add(add(e1.s2, e2.s2), d[1]);
    d[2] = dec.st3.forward(dec.pe3.forward(in3));
    Tensor in4 = dec.project.forward(concat({e1.s1, e2.s1, d[2]}, -1));
    d[3] = dec.st4.forward(in4);
    return d;
}

Tensor GenerationNet::fuse_and_predict(const std::array<Tensor, 4>& d) const {
    const int c = cfg.base_channels, r = cfg.tile_resolution / 4;
    check_stage(d[0], r / 4, 4 * c, "fusion input", 1);
    check_stage(d[1], r / 2, 2 * c, "fusion input", 2);
    check_stage(d[2], r, c, "fusion input", 3);
    check_stage(d[3], r, c, "fusion input", 4);

    auto lift = [&](const Linear& proj, const Tensor& x) {
        Tensor y = proj.forward(x);
        if (y.dim(0) == r) return y;
        return to_hwc(upsample_bilinear(to_chw(y), r, r));
    };
    Tensor fused = concat({lift(head.p1, d[0]), lift(head.p2, d[1]), lift(head.p3, d[2]),
                           lift(head.p4, d[3])},
                          -1);
    Tensor rgb = sigmoid(head.mlp2.forward(gelu(head.mlp1.forward(fused))));
    return to_chw(rgb);
}

Tensor GenerationNet::generate_third(const Tensor& a, const Tensor& b) const {
    Tensor quarter = fuse_and_predict(decode(encode(a, 1), encode(b, 2)));
    return upsample_bilinear(quarter, cfg.tile_resolution, cfg.tile_resolution);
}

ParamList GenerationNet::parameters() {
    ParamList out;
    enc1.collect("enc1", out);
    if (!cfg.share_encoders) enc2.collect("enc2", out);
    dec.collect("dec", out);
    head.collect("head", out);
    return out;
}

std::vector<TileTriple> sample_triples(const TileGrid& grid, int tile_resolution, Rng& rng,
                                       int count) {
    if (grid.n < 3)
        throw ConfigError("triples need a grid of at least 3 columns, got " +
                          std::to_string(grid.n));
    auto fetch = [&](int row, int col) {
        const Tensor& t = grid.at(row, col);
        if (t.dim(1) == tile_resolution && t.dim(2) == tile_resolution) return t.clone();
        return upsample_bilinear(t, tile_resolution, tile_resolution);
    };
    std::vector<TileTriple> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        TileTriple t;
        t.row = static_cast<int>(rng.below(grid.n));
        t.start = static_cast<int>(rng.below(grid.n - 2));
        t.direction = rng.below(2) == 0 ? Direction::left_to_right : Direction::right_to_left;
        if (t.direction == Direction::left_to_right) {
            t.a = fetch(t.row, t.start);
            t.b = fetch(t.row, t.start + 1);
            t.target = fetch(t.row, t.start + 2);
        } else {
            t.a = fetch(t.row, t.start + 2);
            t.b = fetch(t.row, t.start + 1);
            t.target = fetch(t.row, t.start);
        }
        out.push_back(std::move(t));
    }
    return out;
}

TrainStats train_generation(GenerationNet& net, const std::vector<TileGrid>& grids,
                            float learning_rate, int steps, int batch_size, Rng& rng,
                            const std::function<void(int)>& on_checkpoint, int checkpoint_every) {
    if (grids.empty()) throw ContractError("training needs at least one image grid");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    ParamList params = net.parameters();
    for (auto& p : params) p.tensor.set_requires_grad(true);
    Adam opt(params, learning_rate);

    TrainStats stats;
    stats.losses.reserve(steps);
    for (int step = 1; step <= steps; ++step) {
        double step_loss = 0.0;
        bool finite = true;
        for (int b = 0; b < batch_size; ++b) {
            const TileGrid& grid = grids[rng.below(grids.size())];
            TileTriple triple = sample_triples(grid, net.cfg.tile_resolution, rng, 1)[0];
            Tape tape;
            Tensor pred = net.generate_third(triple.a, triple.b);
            Tensor loss = mse_loss(pred, triple.target);
            const float lv = loss.item();
            if (!std::isfinite(lv)) {
                finite = false;
                break;
            }
            step_loss += lv;
            backward(scale_shift(loss, 1.0f / batch_size, 0.0f));
        }
        if (!finite) {
            stats.aborted = true;
            break;
        }
        try {
            opt.step();
        } catch (const NumericError&) {
            stats.aborted = true;
            break;
        }
        opt.zero_grad();
        stats.losses.push_back(static_cast<float>(step_loss / batch_size));
        if (on_checkpoint && checkpoint_every > 0 && step % checkpoint_every == 0)
            on_checkpoint(step);
    }
    return stats;
}

}  // namespace pgcn
