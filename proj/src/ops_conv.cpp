#include <Eigen/Dense>
#include <cmath>

#include "op_helpers.hpp"
#include "pgcn/ops.hpp"

namespace pgcn {

using detail::recording;

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EMat>;
using CMatMap = Eigen::Map<const EMat>;

namespace {

// cols is [cin*kh*kw, oh*ow] row-major; out-of-bounds taps read as zero.
void im2col(const float* x, int cin, int h, int w, int kh, int kw, int stride, int pad,
            int oh, int ow, float* cols) {
    const int64_t ohow = static_cast<int64_t>(oh) * ow;
    for (int c = 0; c < cin; ++c) {
        const float* plane = x + static_cast<int64_t>(c) * h * w;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                float* row = cols + ((static_cast<int64_t>(c) * kh + ki) * kw + kj) * ohow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < ow; ++ox) row[oy * ow + ox] = 0.0f;
                        continue;
                    }
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        row[oy * ow + ox] = (ix >= 0 && ix < w) ? plane[iy * w + ix] : 0.0f;
                    }
                }
            }
        }
    }
}

// Transpose of im2col: scatter-adds cols back onto the padded image grid.
void col2im_add(const float* cols, int cin, int h, int w, int kh, int kw, int stride, int pad,
                int oh, int ow, float* dx) {
    const int64_t ohow = static_cast<int64_t>(oh) * ow;
    for (int c = 0; c < cin; ++c) {
        float* plane = dx + static_cast<int64_t>(c) * h * w;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const float* row = cols + ((static_cast<int64_t>(c) * kh + ki) * kw + kj) * ohow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        if (ix >= 0 && ix < w) plane[iy * w + ix] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

struct BilinearAxis {
    std::vector<int> lo, hi;
    std::vector<float> t;  // weight of hi
};

BilinearAxis make_axis(int in, int out) {
    BilinearAxis a;
    a.lo.resize(static_cast<size_t>(out));
    a.hi.resize(static_cast<size_t>(out));
    a.t.resize(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;  // half-pixel centers
        if (src < 0.0) src = 0.0;
        int lo = static_cast<int>(src);
        if (lo > in - 1) lo = in - 1;
        a.lo[static_cast<size_t>(o)] = lo;
        a.hi[static_cast<size_t>(o)] = std::min(lo + 1, in - 1);
        a.t[static_cast<size_t>(o)] = static_cast<float>(src - lo);
    }
    return a;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, int stride, int padding) {
    if ((x.ndim() != 4 && x.ndim() != 3) || k.ndim() != 4)
        throw DimensionError("conv2d: expected image [B,C,H,W] and kernel [O,C,kh,kw], got " +
                             shape_str(x.shape()) + " and " + shape_str(k.shape()));
    const bool batched = x.ndim() == 4;
    const int b = batched ? x.dim(0) : 1;
    const int cin = batched ? x.dim(1) : x.dim(0);
    const int h = x.dim(batched ? 2 : 1);
    const int w = x.dim(batched ? 3 : 2);
    const int cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    if (k.dim(1) != cin)
        throw DimensionError("conv2d: kernel channels " + shape_str(k.shape()) +
                             " do not match image " + shape_str(x.shape()));
    if (bias.defined() && bias.size() != cout)
        throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " vs " +
                             std::to_string(cout) + " output channels");
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (w + 2 * padding - kw) / stride + 1;
    if (oh <= 0 || ow <= 0 || h + 2 * padding < kh || w + 2 * padding < kw)
        throw DimensionError("conv2d: kernel " + shape_str(k.shape()) + " exceeds padded image " +
                             shape_str(x.shape()));

    const int ckk = cin * kh * kw;
    const int64_t ohow = static_cast<int64_t>(oh) * ow;
    Tensor out(batched ? Shape{b, cout, oh, ow} : Shape{cout, oh, ow});
    std::vector<float> cols(static_cast<size_t>(ckk) * ohow);
    CMatMap K(k.data(), cout, ckk);
    const float* pb = bias.defined() ? bias.data() : nullptr;
    for (int i = 0; i < b; ++i) {
        im2col(x.data() + static_cast<int64_t>(i) * cin * h * w, cin, h, w, kh, kw, stride,
               padding, oh, ow, cols.data());
        CMatMap C(cols.data(), ckk, static_cast<int>(ohow));
        MatMap O(out.data() + static_cast<int64_t>(i) * cout * ohow, cout, static_cast<int>(ohow));
        O.noalias() = K * C;
        if (pb) {
            for (int c = 0; c < cout; ++c) O.row(c).array() += pb[c];
        }
    }

    const Tensor& bref = bias.defined() ? bias : x;  // placeholder when absent
    if (recording({&x, &k, &bref})) {
        auto xi = x.impl(), ki = k.impl(), oi = out.impl();
        auto bi = bias.defined() ? bias.impl() : nullptr;
        Tape::active()->record(oi, [xi, ki, bi, oi, b, cin, h, w, cout, kh, kw, stride, padding,
                                    oh, ow, ckk, ohow] {
            std::vector<float> cols(static_cast<size_t>(ckk) * ohow);
            const bool need_k = ki->tracked;
            const bool need_x = xi->tracked;
            for (int i = 0; i < b; ++i) {
                CMatMap G(oi->grad.data() + static_cast<int64_t>(i) * cout * ohow, cout,
                          static_cast<int>(ohow));
                if (need_k) {
                    im2col(xi->data->data() + static_cast<int64_t>(i) * cin * h * w, cin, h, w,
                           kh, kw, stride, padding, oh, ow, cols.data());
                    CMatMap C(cols.data(), ckk, static_cast<int>(ohow));
                    MatMap GK(ki->grad_ref().data(), cout, ckk);
                    GK.noalias() += G * C.transpose();
                }
                if (need_x) {
                    CMatMap K(ki->data->data(), cout, ckk);
                    MatMap DC(cols.data(), ckk, static_cast<int>(ohow));
                    DC.noalias() = K.transpose() * G;
                    col2im_add(cols.data(), cin, h, w, kh, kw, stride, padding, oh, ow,
                               xi->grad_ref().data() + static_cast<int64_t>(i) * cin * h * w);
                }
                if (bi && bi->tracked) {
                    float* gb = bi->grad_ref().data();
                    for (int c = 0; c < cout; ++c) gb[c] += G.row(c).sum();
                }
            }
        });
    }
    return out;
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride) {
    if (x.ndim() != 4 && x.ndim() != 3)
        throw DimensionError("max_pool2d: expected [B,C,H,W] or [C,H,W], got " + shape_str(x.shape()));
    const bool batched = x.ndim() == 4;
    const int b = batched ? x.dim(0) : 1;
    const int c = batched ? x.dim(1) : x.dim(0);
    const int h = x.dim(batched ? 2 : 1);
    const int w = x.dim(batched ? 3 : 2);
    const int oh = (h - kernel) / stride + 1;
    const int ow = (w - kernel) / stride + 1;
    if (h < kernel || w < kernel)
        throw DimensionError("max_pool2d: window exceeds input " + shape_str(x.shape()));

    Tensor out(batched ? Shape{b, c, oh, ow} : Shape{c, oh, ow});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.size()));
    const float* px = x.data();
    float* po = out.data();
    int64_t o = 0;
    for (int64_t plane = 0; plane < static_cast<int64_t>(b) * c; ++plane) {
        const float* p = px + plane * h * w;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox, ++o) {
                const int y0 = oy * stride, x0 = ox * stride;
                float best = p[y0 * w + x0];
                int64_t best_i = plane * h * w + y0 * w + x0;
                for (int dy = 0; dy < kernel; ++dy)
                    for (int dx = 0; dx < kernel; ++dx) {
                        const float v = p[(y0 + dy) * w + x0 + dx];
                        if (v > best) {
                            best = v;
                            best_i = plane * h * w + (y0 + dy) * w + x0 + dx;
                        }
                    }
                po[o] = best;
                (*argmax)[static_cast<size_t>(o)] = best_i;
            }
        }
    }
    if (recording({&x})) {
        auto xi = x.impl(), oi = out.impl();
        const int64_t n = out.size();
        Tape::active()->record(oi, [xi, oi, argmax, n] {
            const float* g = oi->grad.data();
            float* gx = xi->grad_ref().data();
            for (int64_t i = 0; i < n; ++i) gx[(*argmax)[static_cast<size_t>(i)]] += g[i];
        });
    }
    return out;
}

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
    if (x.ndim() < 2)
        throw DimensionError("upsample_bilinear: need trailing [H,W] axes, got " + shape_str(x.shape()));
    const int h = x.dim(x.ndim() - 2);
    const int w = x.dim(x.ndim() - 1);
    Shape out_shape = x.shape();
    out_shape[out_shape.size() - 2] = out_h;
    out_shape[out_shape.size() - 1] = out_w;
    const int64_t planes = x.size() / (static_cast<int64_t>(h) * w);

    auto ay = std::make_shared<BilinearAxis>(make_axis(h, out_h));
    auto ax = std::make_shared<BilinearAxis>(make_axis(w, out_w));
    Tensor out(out_shape);
    const float* px = x.data();
    float* po = out.data();
    for (int64_t p = 0; p < planes; ++p) {
        const float* in = px + p * h * w;
        float* dst = po + p * static_cast<int64_t>(out_h) * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            const int y0 = ay->lo[static_cast<size_t>(oy)], y1 = ay->hi[static_cast<size_t>(oy)];
            const float ty = ay->t[static_cast<size_t>(oy)];
            for (int ox = 0; ox < out_w; ++ox) {
                const int x0 = ax->lo[static_cast<size_t>(ox)], x1 = ax->hi[static_cast<size_t>(ox)];
                const float tx = ax->t[static_cast<size_t>(ox)];
                const float top = in[y0 * w + x0] * (1.0f - tx) + in[y0 * w + x1] * tx;
                const float bot = in[y1 * w + x0] * (1.0f - tx) + in[y1 * w + x1] * tx;
                dst[oy * out_w + ox] = top * (1.0f - ty) + bot * ty;
            }
        }
    }
    if (recording({&x})) {
        auto xi = x.impl(), oi = out.impl();
        Tape::active()->record(oi, [xi, oi, ay, ax, planes, h, w, out_h, out_w] {
            const float* g = oi->grad.data();
            float* gx = xi->grad_ref().data();
            for (int64_t p = 0; p < planes; ++p) {
                const float* src = g + p * static_cast<int64_t>(out_h) * out_w;
                float* dst = gx + p * h * w;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int y0 = ay->lo[static_cast<size_t>(oy)], y1 = ay->hi[static_cast<size_t>(oy)];
                    const float ty = ay->t[static_cast<size_t>(oy)];
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int x0 = ax->lo[static_cast<size_t>(ox)], x1 = ax->hi[static_cast<size_t>(ox)];
                        const float tx = ax->t[static_cast<size_t>(ox)];
                        const float gv = src[oy * out_w + ox];
                        dst[y0 * w + x0] += gv * (1.0f - ty) * (1.0f - tx);
                        dst[y0 * w + x1] += gv * (1.0f - ty) * tx;
                        dst[y1 * w + x0] += gv * ty * (1.0f - tx);
                        dst[y1 * w + x1] += gv * ty * tx;
                    }
                }
            }
        });
    }
    return out;
}

Tensor spatial_mean(const Tensor& x) {
    if (x.ndim() != 4)
        throw DimensionError("spatial_mean: expected [B,C,H,W], got " + shape_str(x.shape()));
    const int b = x.dim(0), c = x.dim(1);
    const int64_t plane = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    Tensor out(Shape{b, c});
    const float* px = x.data();
    float* po = out.data();
    for (int64_t bc = 0; bc < static_cast<int64_t>(b) * c; ++bc) {
        double s = 0.0;
        const float* p = px + bc * plane;
        for (int64_t i = 0; i < plane; ++i) s += p[i];
        po[bc] = static_cast<float>(s / static_cast<double>(plane));
    }
    if (recording({&x})) {
        auto xi = x.impl(), oi = out.impl();
        const int64_t bc_n = static_cast<int64_t>(b) * c;
        Tape::active()->record(oi, [xi, oi, bc_n, plane] {
            const float* g = oi->grad.data();
            float* gx = xi->grad_ref().data();
            for (int64_t bc = 0; bc < bc_n; ++bc) {
                const float gv = g[bc] / static_cast<float>(plane);
                float* p = gx + bc * plane;
                for (int64_t i = 0; i < plane; ++i) p[i] += gv;
            }
        });
    }
    return out;
}

}  // namespace pgcn
