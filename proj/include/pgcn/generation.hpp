#pragma once

#include <array>
#include <functional>
#include <vector>

#include "pgcn/optim.hpp"
#include "pgcn/random.hpp"
#include "pgcn/swin.hpp"
#include "pgcn/tiles.hpp"

namespace pgcn {

struct GenConfig {
    int tile_resolution = 224;
    int base_channels = 24;  // stage-1 width; stages run C, 2C, 4C, 8C
    int window_m = 7;
    int head_dim = 8;
    std::array<int, 4> encoder_depths{2, 2, 6, 2};
    std::array<int, 4> decoder_depths{2, 2, 6, 2};
    bool share_encoders = false;
    bool relative_bias = true;
};

// Per-stage channel-last feature maps at 1/4, 1/8, 1/16, 1/32 of tile resolution.
struct StageFeatures {
    Tensor s1, s2, s3, s4;
};

struct Encoder {
    PatchEmbed embed;
    SwinStage st1, st2, st3, st4;
    PatchMerging pm1, pm2, pm3;

    Encoder() = default;
    Encoder(const GenConfig& cfg, Rng& rng);
    StageFeatures forward(const Tensor& tile) const;
    void collect(const std::string& prefix, ParamList& out);
};

struct Decoder {
    PatchExpanding pe1, pe2, pe3;
    Linear project;  // 3C -> C after the stage-4 skip concat
    SwinStage st1, st2, st3, st4;

    Decoder() = default;
    Decoder(const GenConfig& cfg, Rng& rng);
    void collect(const std::string& prefix, ParamList& out);
};

struct FusionHead {
    Linear p1, p2, p3, p4;  // per-stage projections to C channels
    Linear mlp1, mlp2;      // 4C -> 4C (gelu), 4C -> 3

    FusionHead() = default;
    FusionHead(const GenConfig& cfg, Rng& rng);
    void collect(const std::string& prefix, ParamList& out);
};

// Predicts the third tile of a row-local triple from the two conditioning tiles.
struct GenerationNet {
    GenConfig cfg;
    Encoder enc1, enc2;  // enc2 aliases enc1's storage when share_encoders
    Decoder dec;
    FusionHead head;

    GenerationNet() = default;
    GenerationNet(const GenConfig& cfg, Rng& rng);

    StageFeatures encode(const Tensor& tile, int which) const;
    std::array<Tensor, 4> decode(const StageFeatures& e1, const StageFeatures& e2) const;
    Tensor fuse_and_predict(const std::array<Tensor, 4>& d) const;  // [3, R/4, R/4]
    Tensor generate_third(const Tensor& a, const Tensor& b) const;  // [3, R, R]

    ParamList parameters();
};

struct TileTriple {
    Tensor a, b, target;  // [3, R, R]; generate_third(a, b) should match target
    Direction direction;
    int row, start;  // 0-based row and leftmost column of the triple
};

// Uniform over (row, leftmost-column, direction); tiles resized to tile_resolution.
std::vector<TileTriple> sample_triples(const TileGrid& grid, int tile_resolution, Rng& rng,
                                       int count);

struct TrainStats {
    std::vector<float> losses;  // per-step mean MSE over the batch
    bool aborted = false;       // non-finite loss or gradient; weights keep last good step
};

TrainStats train_generation(GenerationNet& net, const std::vector<TileGrid>& grids,
                            float learning_rate, int steps, int batch_size, Rng& rng,
                            const std::function<void(int)>& on_checkpoint = {},
                            int checkpoint_every = 0);

}  // namespace pgcn
