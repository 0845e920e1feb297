#pragma once

#include <string>
#include <vector>

#include "pgcn/ops.hpp"
#include "pgcn/optim.hpp"
#include "pgcn/random.hpp"

// Windowed-attention building blocks. All layers are per-sample: feature maps
// are [H, W, C], windows are [nW, M*M, C], tiles are [3, H, W]. Layers are
// pure functions of (input, weights); construction draws the weights.

namespace pgcn {

// Bijections between a feature map and its M×M windows, as gather indices.
IndexVec window_partition_indices(int h, int w, int c, int m);
IndexVec window_reverse_indices(int h, int w, int c, int m);
Tensor window_partition(const Tensor& x, int m);                // [H,W,C] -> [nW,M²,C]
Tensor window_reverse(const Tensor& win, int m, int h, int w);  // inverse

// Cyclic shift along both spatial axes of [H,W,C].
Tensor cyclic_roll(const Tensor& x, int dy, int dx);

// Additive cross-window mask for a shifted pass: [nW, M², M²], 0 where the
// token pair came from the same contiguous region, -1e4 otherwise.
Tensor shift_attention_mask(int h, int w, int m, int shift);

// For each ordered token pair in an M×M window, the row of the
// (2M-1)²-entry relative-position table that describes their offset.
std::vector<int> relative_position_index(int m);

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // undefined when constructed without one
    Linear() = default;
    Linear(int in, int out, Rng& rng, bool with_bias = true);
    Tensor forward(const Tensor& x) const;  // [..., in] -> [..., out]
    void collect(const std::string& prefix, ParamList& out);
};

struct Norm {
    Tensor gamma, beta;
    Norm() = default;
    explicit Norm(int dim);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out);
};

struct Mlp {
    Linear fc1, fc2;
    Mlp() = default;
    Mlp(int dim, int hidden, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out);
};

struct WindowAttention {
    int dim = 0, num_heads = 0, head_dim = 0, m = 0;
    bool use_bias = true;
    Linear qkv, proj;
    Tensor bias_table;     // [(2M-1)², nH]
    IndexVec bias_gather;  // flattens the table into [nH, T, T]
    WindowAttention() = default;
    WindowAttention(int dim, int num_heads, int m, Rng& rng, bool relative_bias = true);
    // windows [nW, M², C]; mask [nW, M², M²] or undefined.
    Tensor forward(const Tensor& windows, const Tensor& mask) const;
    void collect(const std::string& prefix, ParamList& out);
};

struct SwinBlock {
    int m = 0, shift = 0;
    Norm ln1, ln2;
    WindowAttention attn;
    Mlp mlp;
    SwinBlock() = default;
    SwinBlock(int dim, int num_heads, int m, int shift, Rng& rng, bool relative_bias = true);
    // x [H,W,C]; mask only consulted when shift > 0.
    Tensor forward(const Tensor& x, const Tensor& mask) const;
    void collect(const std::string& prefix, ParamList& out);
};

// `depth` blocks at one resolution, alternating shift 0, ⌊M/2⌋, 0, ...
struct SwinStage {
    std::vector<SwinBlock> blocks;
    Tensor mask;  // undefined when no block shifts or M does not split H,W further
    SwinStage() = default;
    SwinStage(int dim, int depth, int num_heads, int m, int h, int w, Rng& rng,
              bool relative_bias = true);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out);
};

// Stride-4 kernel-4 convolution from 3 channels, tokens kept as a map:
// [3, H, W] -> [H/4, W/4, C].
struct PatchEmbed {
    int dim = 0;
    Tensor kernel;  // [C, 3, 4, 4]
    Tensor bias;    // [C]
    PatchEmbed() = default;
    PatchEmbed(int dim, Rng& rng);
    Tensor forward(const Tensor& tile) const;
    void collect(const std::string& prefix, ParamList& out);
};

// [H,W,C] -> [H/2, W/2, 2C]: row-major 2×2 neighborhood concat, norm, linear.
struct PatchMerging {
    Norm norm;
    Linear reduce;  // 4C -> 2C
    PatchMerging() = default;
    PatchMerging(int dim, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out);
};

// [H,W,C] -> [2H, 2W, C/2]: linear C->2C, then each token's channels become a
// row-major 2×2 block of C/2 channels.
struct PatchExpanding {
    Linear expand;  // C -> 2C
    PatchExpanding() = default;
    PatchExpanding(int dim, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out);
};

}  // namespace pgcn
