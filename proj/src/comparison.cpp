#include "pgcn/comparison.hpp"

#include <cmath>

#include "pgcn/data.hpp"
#include "pgcn/error.hpp"
#include "pgcn/ops.hpp"

namespace pgcn {

ConvBlock::ConvBlock(int in, int out, Rng& rng, bool sig)
    : kernel(Shape{out, in, 3, 3}),
      bias(Shape{out}, 0.0f),
      gamma(Shape{out}, 1.0f),
      beta(Shape{out}, 0.0f),
      run_mean(Shape{out}, 0.0f),
      run_var(Shape{out}, 1.0f),
      sigmoid_out(sig) {
    init_trunc_normal(kernel, rng);
}

Tensor ConvBlock::forward(const Tensor& x, bool training) const {
    Tensor y = conv2d(x, kernel, bias, 1, 1);
    if (training) {
        y = batch_norm(y, gamma, beta, run_mean, run_var, true);
    } else {
        // Eval normalizes by the sample's own statistics too. The engine
        // forwards one sample at a time, so "batch" statistics are per-sample
        // statistics; switching to running averages at eval re-scales exactly
        // the activations a defect makes stand out, and measurably flips the
        // decision head. Throwaway buffers keep the recorded averages frozen.
        Tensor m = run_mean.clone(), v = run_var.clone();
        y = batch_norm(y, gamma, beta, m, v, true);
    }
    return sigmoid_out ? sigmoid(y) : relu(y);
}

void ConvBlock::collect(const std::string& p, ParamList& out) {
    out.push_back({p + ".kernel", kernel});
    out.push_back({p + ".bias", bias});
    out.push_back({p + ".gamma", gamma});
    out.push_back({p + ".beta", beta});
}

void ConvBlock::collect_buffers(const std::string& p, ParamList& out) {
    out.push_back({p + ".run_mean", run_mean});
    out.push_back({p + ".run_var", run_var});
}

ComparatorNet::ComparatorNet(const CmpConfig& c, Rng& rng) : cfg(c) {
    if (c.width1 < 1 || c.width2 < 1 || c.width3 < 1 || c.fc_hidden < 1)
        throw ConfigError("comparator widths must be positive");
    b1a = ConvBlock(3, c.width1, rng);
    b2a = ConvBlock(c.width1, c.width2, rng);
    b1b = ConvBlock(3, c.width1, rng);
    b2b = ConvBlock(c.width1, c.width2, rng);
    b3 = ConvBlock(c.width2, c.width3, rng);
    fc1 = Linear(2 * c.width3, c.fc_hidden, rng);
    fc2 = Linear(c.fc_hidden, 1, rng);
    m1 = ConvBlock(2 * c.width3, c.width3, rng);
    m2 = ConvBlock(c.width3, 1, rng, /*sigmoid_out=*/true);
}

Tensor comparator_branch(const Tensor& x, const ConvBlock& c1, const ConvBlock& c2,
                         const ConvBlock& c3, bool training) {
    Tensor y = max_pool2d(c1.forward(x, training), 2, 2);
    y = max_pool2d(c2.forward(y, training), 2, 2);
    return c3.forward(y, training);
}

ComparisonResult ComparatorNet::compare(const Tensor& observed, const Tensor& reference,
                                        bool training) const {
    if (observed.ndim() != 3 || observed.dim(0) != 3 || observed.shape() != reference.shape())
        throw DimensionError("compare expects two [3,H,W] tiles, got " +
                             shape_str(observed.shape()) + " and " + shape_str(reference.shape()));
    const int h = observed.dim(1), w = observed.dim(2);
    if (h % 4 != 0 || w % 4 != 0)
        throw DimensionError("tile dims must be divisible by 4, got " +
                             shape_str(observed.shape()));

    Tensor fa = comparator_branch(observed, b1a, b2a, b3, training);
    Tensor fb = comparator_branch(reference, b1b, b2b, b3, training);
    Tensor cat = concat({fa, fb}, 0);  // [2*w3, h/4, w/4]

    Tensor pooled = spatial_mean(reshape(cat, Shape{1, 2 * cfg.width3, h / 4, w / 4}));
    Tensor logit = fc2.forward(relu(fc1.forward(pooled)));  // [1,1]

    ComparisonResult res;
    res.logit = reshape(logit, Shape{1});
    res.p = sigmoid(res.logit);
    res.mask = reshape(m2.forward(m1.forward(cat, training), training), Shape{h / 4, w / 4});
    return res;
}

ParamList ComparatorNet::parameters() {
    ParamList out;
    b1a.collect("cmp.b1a", out);
    b2a.collect("cmp.b2a", out);
    b1b.collect("cmp.b1b", out);
    b2b.collect("cmp.b2b", out);
    b3.collect("cmp.b3", out);
    fc1.collect("cmp.fc1", out);
    fc2.collect("cmp.fc2", out);
    m1.collect("cmp.m1", out);
    m2.collect("cmp.m2", out);
    return out;
}

ParamList ComparatorNet::buffers() {
    ParamList out;
    b1a.collect_buffers("cmp.b1a", out);
    b2a.collect_buffers("cmp.b2a", out);
    b1b.collect_buffers("cmp.b1b", out);
    b2b.collect_buffers("cmp.b2b", out);
    b3.collect_buffers("cmp.b3", out);
    m1.collect_buffers("cmp.m1", out);
    m2.collect_buffers("cmp.m2", out);
    return out;
}

LossVariant parse_loss_variant(const std::string& name) {
    if (name == "paper_verbatim") return LossVariant::paper_verbatim;
    if (name == "corrected") return LossVariant::corrected;
    if (name == "corrected_mean") return LossVariant::corrected_mean;
    if (name == "balanced") return LossVariant::balanced;
    if (name == "paper_verbatim_hinge_logit") return LossVariant::paper_verbatim_hinge_logit;
    throw ConfigError("unknown loss variant '" + name + "'");
}

std::string loss_variant_name(LossVariant v) {
    switch (v) {
        case LossVariant::paper_verbatim: return "paper_verbatim";
        case LossVariant::corrected: return "corrected";
        case LossVariant::corrected_mean: return "corrected_mean";
        case LossVariant::balanced: return "balanced";
        case LossVariant::paper_verbatim_hinge_logit: return "paper_verbatim_hinge_logit";
    }
    throw ContractError("unreachable loss variant");
}

Tensor comparison_loss(const ComparisonResult& r, const PairExample& ex, LossVariant variant) {
    if (ex.y != 1 && ex.y != -1)
        throw ContractError("pair label must be +1 or -1, got " + std::to_string(ex.y));
    if (r.mask.shape() != ex.gt.shape())
        throw DimensionError("mask " + shape_str(r.mask.shape()) + " vs ground truth " +
                             shape_str(ex.gt.shape()));

    Tensor term1;
    if (variant == LossVariant::balanced) {
        // Equal mass on defect and background cells: with gt covering a few
        // percent of the mask, a raw mean lets the background term bury the
        // defect term and the head settles into an all-zero mask it can never
        // climb out of (the saturated sigmoid passes no gradient).
        int64_t n_in = 0;
        for (int64_t i = 0; i < ex.gt.size(); ++i)
            if (ex.gt.data()[i] > 0.5f) ++n_in;
        const int64_t n_out = ex.gt.size() - n_in;
        Tensor weights(ex.gt.shape());
        for (int64_t i = 0; i < ex.gt.size(); ++i) {
            const bool in = ex.gt.data()[i] > 0.5f;
            weights.data()[i] = in ? 0.5f / static_cast<float>(n_in)
                                   : (n_in ? 0.5f / n_out : 1.0f / n_out);
        }
        term1 = sigmoid(sum_all(mul(abs(sub(r.mask, ex.gt)), weights)));
    } else {
        Tensor l1 = sum_all(abs(sub(r.mask, ex.gt)));
        switch (variant) {
            case LossVariant::paper_verbatim:
            case LossVariant::paper_verbatim_hinge_logit:
                term1 = sigmoid(scale_shift(l1, -1.0f, 0.0f));  // 1/(1+e^L1)
                break;
            case LossVariant::corrected:
                term1 = sigmoid(l1);  // e^L1/(1+e^L1)
                break;
            case LossVariant::corrected_mean:
                term1 = sigmoid(scale_shift(l1, 1.0f / static_cast<float>(ex.gt.size()), 0.0f));
                break;
            case LossVariant::balanced: break;  // handled above
        }
    }
    const Tensor& score = variant == LossVariant::paper_verbatim_hinge_logit ? r.logit : r.p;
    Tensor hinge = relu(scale_shift(score, -static_cast<float>(ex.y), 1.0f));
    return add(term1, reshape(hinge, term1.shape()));
}

std::vector<PairExample> make_pairs(const GenerationNet& gen, const std::vector<TileGrid>& grids,
                                    int tile_resolution, Rng& rng, int count) {
    if (grids.empty()) throw ContractError("make_pairs needs at least one image grid");
    const int per_class = count / 2;
    const int r4 = tile_resolution / 4;
    std::vector<PairExample> out;
    out.reserve(2 * per_class);

    auto draw_triple = [&]() {
        const TileGrid& grid = grids[rng.below(grids.size())];
        return sample_triples(grid, tile_resolution, rng, 1)[0];
    };

    for (int i = 0; i < per_class; ++i) {
        TileTriple t = draw_triple();
        PairExample ex;
        ex.a = t.target;
        ex.b = gen.generate_third(t.a, t.b);
        ex.y = 1;
        ex.gt = Tensor(Shape{r4, r4}, 0.0f);
        out.push_back(std::move(ex));
    }
    for (int i = 0; i < per_class; ++i) {
        TileTriple t = draw_triple();
        DefectSpec spec;
        Tensor defective, mask;
        do {  // paste onto a perfectly periodic texture can be a no-op; redraw
            const int kind = static_cast<int>(rng.below(3));
            spec.kind = kind == 0   ? DefectKind::blotch
                        : kind == 1 ? DefectKind::scratch
                                    : DefectKind::paste;
            // Sizes span small to half-tile so the head generalizes across
            // the defect extents inference actually meets after tiles are
            // resized up to the comparator resolution.
            spec.size = spec.kind == DefectKind::blotch
                            ? rng.range(3, std::max(3, tile_resolution / 4))
                            : rng.range(tile_resolution / 8, tile_resolution / 2);
            spec.intensity = (rng.below(2) ? 1.0f : -1.0f) * rng.uniform(0.25f, 0.55f);
            spec.seed = rng.next_u64();
            std::tie(defective, mask) = inject_defect(t.target, spec);
        } while (sum_all(mask).item() == 0.0f);
        PairExample ex;
        ex.a = defective;
        ex.b = t.target;
        ex.y = -1;
        ex.gt = reshape(max_pool2d(reshape(mask, Shape{1, tile_resolution, tile_resolution}), 4, 4),
                        Shape{r4, r4});
        out.push_back(std::move(ex));
    }
    return out;
}

TrainStats train_comparator(ComparatorNet& net, const std::vector<PairExample>& pairs,
                            LossVariant variant, float learning_rate, int steps, int batch_size,
                            Rng& rng, const std::function<void(int)>& on_checkpoint,
                            int checkpoint_every) {
    if (pairs.empty()) throw ContractError("training needs at least one pair");
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
            const PairExample& ex = pairs[rng.below(pairs.size())];
            Tape tape;
            ComparisonResult res = net.compare(ex.a, ex.b, /*training=*/true);
            Tensor loss = comparison_loss(res, ex, variant);
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
