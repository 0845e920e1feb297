#include "pgcn/swin.hpp"

#include <array>
#include <cmath>

namespace pgcn {

namespace {

void require_windowable(int h, int w, int m, const char* op) {
    if (m <= 0 || h % m != 0 || w % m != 0)
        throw DimensionError(std::string(op) + ": " + std::to_string(h) + "x" + std::to_string(w) +
                             " not divisible by window " + std::to_string(m));
}

int64_t wrap(int64_t v, int64_t n) { return ((v % n) + n) % n; }

}  // namespace

IndexVec window_partition_indices(int h, int w, int c, int m) {
    const int nwx = w / m, t = m * m;
    auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(h) * w * c);
    int64_t o = 0;
    for (int wy = 0; wy < h / m; ++wy)
        for (int wx = 0; wx < nwx; ++wx)
            for (int tt = 0; tt < t; ++tt) {
                const int y = wy * m + tt / m, x = wx * m + tt % m;
                const int64_t src = (static_cast<int64_t>(y) * w + x) * c;
                for (int ch = 0; ch < c; ++ch) (*idx)[static_cast<size_t>(o++)] = src + ch;
            }
    return idx;
}

IndexVec window_reverse_indices(int h, int w, int c, int m) {
    const int nwx = w / m, t = m * m;
    auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(h) * w * c);
    int64_t o = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int win = (y / m) * nwx + x / m;
            const int tok = (y % m) * m + x % m;
            const int64_t src = (static_cast<int64_t>(win) * t + tok) * c;
            for (int ch = 0; ch < c; ++ch) (*idx)[static_cast<size_t>(o++)] = src + ch;
        }
    return idx;
}

Tensor window_partition(const Tensor& x, int m) {
    if (x.ndim() != 3) throw DimensionError("window_partition: expected [H,W,C], got " + shape_str(x.shape()));
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    require_windowable(h, w, m, "window_partition");
    return take(x, window_partition_indices(h, w, c, m), {(h / m) * (w / m), m * m, c});
}

Tensor window_reverse(const Tensor& win, int m, int h, int w) {
    if (win.ndim() != 3) throw DimensionError("window_reverse: expected [nW,T,C], got " + shape_str(win.shape()));
    require_windowable(h, w, m, "window_reverse");
    const int c = win.dim(2);
    if (win.dim(0) != (h / m) * (w / m) || win.dim(1) != m * m)
        throw DimensionError("window_reverse: " + shape_str(win.shape()) + " does not tile " +
                             std::to_string(h) + "x" + std::to_string(w));
    return take(win, window_reverse_indices(h, w, c, m), {h, w, c});
}

Tensor cyclic_roll(const Tensor& x, int dy, int dx) {
    if (x.ndim() != 3) throw DimensionError("cyclic_roll: expected [H,W,C], got " + shape_str(x.shape()));
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(h) * w * c);
    int64_t o = 0;
    for (int y = 0; y < h; ++y) {
        const int64_t sy = wrap(y - dy, h);
        for (int xx = 0; xx < w; ++xx) {
            const int64_t sx = wrap(xx - dx, w);
            const int64_t src = (sy * w + sx) * c;
            for (int ch = 0; ch < c; ++ch) (*idx)[static_cast<size_t>(o++)] = src + ch;
        }
    }
    return take(x, idx, x.shape());
}

Tensor shift_attention_mask(int h, int w, int m, int shift) {
    require_windowable(h, w, m, "shift_attention_mask");
    if (shift <= 0 || shift >= m) throw ContractError("shift_attention_mask: shift must be in (0, M)");
    // Region ids on the rolled canvas: three spans per axis, nine regions.
    std::vector<int> id(static_cast<size_t>(h) * w);
    const std::array<std::pair<int, int>, 3> ys{{{0, h - m}, {h - m, h - shift}, {h - shift, h}}};
    const std::array<std::pair<int, int>, 3> xs{{{0, w - m}, {w - m, w - shift}, {w - shift, w}}};
    int region = 0;
    for (auto [y0, y1] : ys) {
        for (auto [x0, x1] : xs) {
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) id[static_cast<size_t>(y) * w + x] = region;
            ++region;
        }
    }
    const int t = m * m, nwx = w / m, nw = (h / m) * nwx;
    Tensor mask(Shape{nw, t, t}, 0.0f);
    float* pm = mask.data();
    for (int win = 0; win < nw; ++win) {
        const int wy = win / nwx, wx = win % nwx;
        for (int i = 0; i < t; ++i) {
            const int ri = id[static_cast<size_t>(wy * m + i / m) * w + wx * m + i % m];
            for (int j = 0; j < t; ++j) {
                const int rj = id[static_cast<size_t>(wy * m + j / m) * w + wx * m + j % m];
                if (ri != rj) pm[(static_cast<int64_t>(win) * t + i) * t + j] = -1e4f;
            }
        }
    }
    return mask;
}

std::vector<int> relative_position_index(int m) {
    const int t = m * m, span = 2 * m - 1;
    std::vector<int> idx(static_cast<size_t>(t) * t);
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j) {
            const int dy = i / m - j / m + m - 1;
            const int dx = i % m - j % m + m - 1;
            idx[static_cast<size_t>(i) * t + j] = dy * span + dx;
        }
    return idx;
}

// ---- layers ----

Linear::Linear(int in, int out, Rng& rng, bool with_bias) {
    weight = Tensor(Shape{in, out});
    init_trunc_normal(weight, rng);
    if (with_bias) bias = Tensor(Shape{out}, 0.0f);
}

Tensor Linear::forward(const Tensor& x) const {
    const int in = weight.dim(0), out = weight.dim(1);
    if (x.dim(x.ndim() - 1) != in)
        throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                             shape_str(weight.shape()));
    Shape out_shape = x.shape();
    out_shape.back() = out;
    Tensor flat = reshape(x, {static_cast<int>(x.size() / in), in});
    Tensor y = matmul(flat, weight);
    if (bias.defined()) y = add_bias(y, bias);
    return reshape(y, std::move(out_shape));
}

void Linear::collect(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

Norm::Norm(int dim) : gamma(Shape{dim}, 1.0f), beta(Shape{dim}, 0.0f) {}

Tensor Norm::forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }

void Norm::collect(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

Mlp::Mlp(int dim, int hidden, Rng& rng) : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

Tensor Mlp::forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }

void Mlp::collect(const std::string& prefix, ParamList& out) {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

WindowAttention::WindowAttention(int dim_, int num_heads_, int m_, Rng& rng, bool relative_bias)
    : dim(dim_), num_heads(num_heads_), m(m_), use_bias(relative_bias),
      qkv(dim_, 3 * dim_, rng), proj(dim_, dim_, rng) {
    if (dim % num_heads != 0)
        throw ConfigError("attention dim " + std::to_string(dim) + " not divisible by " +
                          std::to_string(num_heads) + " heads");
    head_dim = dim / num_heads;
    if (use_bias) {
        const int span = 2 * m - 1, t = m * m;
        bias_table = Tensor(Shape{span * span, num_heads});
        init_trunc_normal(bias_table, rng);
        const std::vector<int> rpi = relative_position_index(m);
        bias_gather = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(num_heads) * t * t);
        int64_t o = 0;
        for (int h = 0; h < num_heads; ++h)
            for (int p = 0; p < t * t; ++p)
                (*bias_gather)[static_cast<size_t>(o++)] =
                    static_cast<int64_t>(rpi[static_cast<size_t>(p)]) * num_heads + h;
    }
}

Tensor WindowAttention::forward(const Tensor& windows, const Tensor& mask) const {
    if (windows.ndim() != 3 || windows.dim(2) != dim || windows.dim(1) != m * m)
        throw DimensionError("window_attention: expected [nW," + std::to_string(m * m) + "," +
                             std::to_string(dim) + "], got " + shape_str(windows.shape()));
    const int nw = windows.dim(0), t = windows.dim(1);
    if (mask.defined() && (mask.ndim() != 3 || mask.dim(0) != nw || mask.dim(1) != t || mask.dim(2) != t))
        throw DimensionError("window_attention: mask " + shape_str(mask.shape()) + " vs windows " +
                             shape_str(windows.shape()));

    Tensor flat = reshape(windows, {nw * t, dim});
    Tensor packed = qkv.forward(flat);  // [nW*T, 3C] laid out q|k|v per token

    auto head_split = [&](int part) {
        auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(nw) * t * dim);
        int64_t o = 0;
        for (int w = 0; w < nw; ++w)
            for (int h = 0; h < num_heads; ++h)
                for (int tok = 0; tok < t; ++tok) {
                    const int64_t row = (static_cast<int64_t>(w) * t + tok) * 3 * dim + part * dim;
                    for (int d = 0; d < head_dim; ++d)
                        (*idx)[static_cast<size_t>(o++)] = row + h * head_dim + d;
                }
        return take(packed, idx, {nw * num_heads, t, head_dim});
    };
    Tensor q = head_split(0), k = head_split(1), v = head_split(2);

    Tensor scores = scale_shift(bmm(q, k, true), 1.0f / std::sqrt(static_cast<float>(head_dim)), 0.0f);
    Tensor s4 = reshape(scores, {nw, num_heads, t, t});
    Tensor bias_mat;
    if (use_bias) bias_mat = take(bias_table, bias_gather, {num_heads, t, t});
    s4 = attn_add_extras(s4, bias_mat, mask, nw);
    Tensor probs = reshape(softmax(s4, -1), {nw * num_heads, t, t});
    Tensor ctx = bmm(probs, v);  // [nW*nH, T, hd]

    auto merge = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(nw) * t * dim);
    int64_t o = 0;
    for (int w = 0; w < nw; ++w)
        for (int tok = 0; tok < t; ++tok)
            for (int h = 0; h < num_heads; ++h)
                for (int d = 0; d < head_dim; ++d)
                    (*merge)[static_cast<size_t>(o++)] =
                        ((static_cast<int64_t>(w) * num_heads + h) * t + tok) * head_dim + d;
    Tensor merged = take(ctx, merge, {nw, t, dim});
    return proj.forward(merged);
}

void WindowAttention::collect(const std::string& prefix, ParamList& out) {
    qkv.collect(prefix + ".qkv", out);
    proj.collect(prefix + ".proj", out);
    if (use_bias) out.push_back({prefix + ".bias_table", bias_table});
}

SwinBlock::SwinBlock(int dim, int num_heads, int m_, int shift_, Rng& rng, bool relative_bias)
    : m(m_), shift(shift_), ln1(dim), ln2(dim), attn(dim, num_heads, m_, rng, relative_bias),
      mlp(dim, 4 * dim, rng) {}

Tensor SwinBlock::forward(const Tensor& x, const Tensor& mask) const {
    const int h = x.dim(0), w = x.dim(1);
    Tensor y = ln1.forward(x);
    if (shift > 0) y = cyclic_roll(y, -shift, -shift);
    Tensor win = window_partition(y, m);
    win = attn.forward(win, shift > 0 ? mask : Tensor());
    y = window_reverse(win, m, h, w);
    if (shift > 0) y = cyclic_roll(y, shift, shift);
    Tensor mid = add(x, y);
    return add(mid, mlp.forward(ln2.forward(mid)));
}

void SwinBlock::collect(const std::string& prefix, ParamList& out) {
    ln1.collect(prefix + ".ln1", out);
    attn.collect(prefix + ".attn", out);
    ln2.collect(prefix + ".ln2", out);
    mlp.collect(prefix + ".mlp", out);
}

SwinStage::SwinStage(int dim, int depth, int num_heads, int m, int h, int w, Rng& rng,
                     bool relative_bias) {
    require_windowable(h, w, m, "swin_stage");
    // A single window already attends globally; shifting would only let the
    // cross-region mask cut pairs that belong together.
    const int shift = (h == m && w == m) ? 0 : m / 2;
    blocks.reserve(static_cast<size_t>(depth));
    bool any_shift = false;
    for (int i = 0; i < depth; ++i) {
        const int s = (i % 2 == 1) ? shift : 0;
        any_shift = any_shift || s > 0;
        blocks.emplace_back(dim, num_heads, m, s, rng, relative_bias);
    }
    if (any_shift && shift > 0) mask = shift_attention_mask(h, w, m, shift);
}

Tensor SwinStage::forward(const Tensor& x) const {
    Tensor y = x;
    for (const SwinBlock& b : blocks) y = b.forward(y, mask);
    return y;
}

void SwinStage::collect(const std::string& prefix, ParamList& out) {
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect(prefix + ".block" + std::to_string(i), out);
}

PatchEmbed::PatchEmbed(int dim_, Rng& rng) : dim(dim_) {
    kernel = Tensor(Shape{dim, 3, 4, 4});
    init_trunc_normal(kernel, rng);
    bias = Tensor(Shape{dim}, 0.0f);
}

Tensor PatchEmbed::forward(const Tensor& tile) const {
    if (tile.ndim() != 3 || tile.dim(0) != 3 || tile.dim(1) % 4 != 0 || tile.dim(2) % 4 != 0)
        throw DimensionError("patch_embed: expected [3,H,W] with H,W divisible by 4, got " +
                             shape_str(tile.shape()));
    const int oh = tile.dim(1) / 4, ow = tile.dim(2) / 4;
    Tensor y = conv2d(tile, kernel, bias, 4, 0);  // [C, H/4, W/4]
    return take(y, make_permute_indices({dim, oh, ow}, {1, 2, 0}), {oh, ow, dim});
}

void PatchEmbed::collect(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + ".kernel", kernel});
    out.push_back({prefix + ".bias", bias});
}

PatchMerging::PatchMerging(int dim, Rng& rng) : norm(4 * dim), reduce(4 * dim, 2 * dim, rng, false) {}

Tensor PatchMerging::forward(const Tensor& x) const {
    if (x.ndim() != 3 || x.dim(0) % 2 != 0 || x.dim(1) % 2 != 0)
        throw DimensionError("patch_merging: expected even [H,W,C], got " + shape_str(x.shape()));
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(h) * w * c);
    int64_t o = 0;
    for (int y = 0; y < h / 2; ++y)
        for (int xx = 0; xx < w / 2; ++xx)
            for (int by = 0; by < 2; ++by)
                for (int bx = 0; bx < 2; ++bx) {
                    const int64_t src = (static_cast<int64_t>(2 * y + by) * w + 2 * xx + bx) * c;
                    for (int ch = 0; ch < c; ++ch) (*idx)[static_cast<size_t>(o++)] = src + ch;
                }
    Tensor gathered = take(x, idx, {h / 2, w / 2, 4 * c});
    return reduce.forward(norm.forward(gathered));
}

void PatchMerging::collect(const std::string& prefix, ParamList& out) {
    norm.collect(prefix + ".norm", out);
    reduce.collect(prefix + ".reduce", out);
}

PatchExpanding::PatchExpanding(int dim, Rng& rng) : expand(dim, 2 * dim, rng, false) {
    if (dim % 2 != 0)
        throw DimensionError("patch_expanding needs even channels, got " + std::to_string(dim));
}

Tensor PatchExpanding::forward(const Tensor& x) const {
    if (x.ndim() != 3) throw DimensionError("patch_expanding: expected [H,W,C], got " + shape_str(x.shape()));
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (c != expand.weight.dim(0))
        throw DimensionError("patch_expanding: channels " + shape_str(x.shape()) + " vs weight " +
                             shape_str(expand.weight.shape()));
    Tensor t = expand.forward(x);  // [H, W, 2C]
    const int oc = c / 2;
    auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(h) * w * 2 * c);
    int64_t o = 0;
    for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) {
            const int64_t src = (static_cast<int64_t>(y / 2) * w + xx / 2) * 2 * c +
                                static_cast<int64_t>((y % 2) * 2 + xx % 2) * oc;
            for (int ch = 0; ch < oc; ++ch) (*idx)[static_cast<size_t>(o++)] = src + ch;
        }
    return take(t, idx, {2 * h, 2 * w, oc});
}

void PatchExpanding::collect(const std::string& prefix, ParamList& out) {
    expand.collect(prefix + ".expand", out);
}

}  // namespace pgcn
