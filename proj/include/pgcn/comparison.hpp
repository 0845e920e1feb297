#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pgcn/generation.hpp"
#include "pgcn/optim.hpp"
#include "pgcn/random.hpp"
#include "pgcn/swin.hpp"
#include "pgcn/tiles.hpp"

namespace pgcn {

// 3×3 stride-1 convolution, per-sample normalization, then relu (or sigmoid
// on the last mask-head block). Training forwards record running statistics
// in place; eval forwards normalize by the sample's own statistics as well
// (the single-sample engine has no wider batch), leaving the buffers frozen.
struct ConvBlock {
    Tensor kernel, bias;  // [out, in, 3, 3], [out]
    Tensor gamma, beta;
    Tensor run_mean, run_var;
    bool sigmoid_out = false;

    ConvBlock() = default;
    ConvBlock(int in, int out, Rng& rng, bool sigmoid_out = false);
    Tensor forward(const Tensor& x, bool training) const;  // [in,H,W] -> [out,H,W]
    void collect(const std::string& prefix, ParamList& out);
    void collect_buffers(const std::string& prefix, ParamList& out);
};

struct CmpConfig {
    int width1 = 64, width2 = 128, width3 = 256;
    int fc_hidden = 64;
};

struct ComparisonResult {
    Tensor p;      // [1], probability the pair matches
    Tensor logit;  // [1], pre-sigmoid score
    Tensor mask;   // [H/4, W/4], per-cell mismatch in (0,1)
};

// Two convolutional branches with a shared third block, a pooled FC head for
// the match probability, and a convolutional head for the mismatch mask.
struct ComparatorNet {
    CmpConfig cfg;
    ConvBlock b1a, b2a;  // branch of the observed tile
    ConvBlock b1b, b2b;  // branch of the reference tile
    ConvBlock b3;        // third block, one set of weights for both branches
    Linear fc1, fc2;
    ConvBlock m1, m2;

    ComparatorNet() = default;
    ComparatorNet(const CmpConfig& cfg, Rng& rng);

    ComparisonResult compare(const Tensor& observed, const Tensor& reference,
                             bool training = false) const;
    ParamList parameters();
    ParamList buffers();  // batch-norm running stats; persisted but never optimized
};

// One branch: block, pool, block, pool, shared block. Exposed so the
// shared-weight gradient can be cross-checked against two untied copies.
Tensor comparator_branch(const Tensor& x, const ConvBlock& c1, const ConvBlock& c2,
                         const ConvBlock& c3, bool training);

struct PairExample {
    Tensor a;   // observed tile [3,R,R]
    Tensor b;   // reference tile [3,R,R]
    int y = 1;  // +1 matching, -1 mismatched
    Tensor gt;  // [R/4, R/4]; all zero iff y == +1
};

enum class LossVariant {
    paper_verbatim,
    corrected,
    corrected_mean,
    balanced,
    paper_verbatim_hinge_logit,
};

LossVariant parse_loss_variant(const std::string& name);
std::string loss_variant_name(LossVariant v);

// Mask term plus hinge term. The verbatim form 1/(1+e^L1) rewards large mask
// error; `corrected` flips it to e^L1/(1+e^L1); `corrected_mean` applies the
// flip to the mean (rather than summed) absolute error so the sigmoid stays
// off its saturated tail; `balanced` weights the mean so defect cells and
// background cells carry equal mass — under the raw mean the ~20:1 imbalance
// makes the all-zero mask a self-sealing optimum; `paper_verbatim_hinge_logit`
// keeps the verbatim mask term but feeds the hinge the pre-sigmoid score.
Tensor comparison_loss(const ComparisonResult& r, const PairExample& ex, LossVariant variant);

// Balanced pair set: matching pairs couple a tile with the generator's
// prediction of it; mismatched pairs couple a defect-injected tile with the
// clean original. Ground truth is the defect mask max-pooled 4×.
std::vector<PairExample> make_pairs(const GenerationNet& gen, const std::vector<TileGrid>& grids,
                                    int tile_resolution, Rng& rng, int count);

TrainStats train_comparator(ComparatorNet& net, const std::vector<PairExample>& pairs,
                            LossVariant variant, float learning_rate, int steps, int batch_size,
                            Rng& rng, const std::function<void(int)>& on_checkpoint = {},
                            int checkpoint_every = 0);

}  // namespace pgcn
