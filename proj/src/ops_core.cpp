#include <Eigen/Dense>
#include <cmath>

#include "op_helpers.hpp"
#include "pgcn/ops.hpp"

namespace pgcn {

using detail::normalize_axis;
using detail::recording;
using detail::require_same_shape;

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EMat>;
using CMatMap = Eigen::Map<const EMat>;

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

// ---- arithmetic ----

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (recording({&a, &b})) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::active()->record(oi, [ai, bi, oi, n] {
            const float* g = oi->grad.data();
            if (ai->tracked) {
                float* ga = ai->grad_ref().data();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (bi->tracked) {
                float* gb = bi->grad_ref().data();
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    if (recording({&a, &b})) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::active()->record(oi, [ai, bi, oi, n] {
            const float* g = oi->grad.data();
            if (ai->tracked) {
                float* ga = ai->grad_ref().data();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (bi->tracked) {
                float* gb = bi->grad_ref().data();
                for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (recording({&a, &b})) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::active()->record(oi, [ai, bi, oi, n] {
            const float* g = oi->grad.data();
            const float* pa = ai->data->data();
            const float* pb = bi->data->data();
            if (ai->tracked) {
                float* ga = ai->grad_ref().data();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
            }
            if (bi->tracked) {
                float* gb = bi->grad_ref().data();
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
            }
        });
    }
    return out;
}

Tensor scale_shift(const Tensor& x, float a, float b) {
    Tensor out(x.shape());
    const float* px = x.data();
    float* po = out.data();
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) po[i] = a * px[i] + b;
    if (recording({&x})) {
        auto xi = x.impl(), oi = out.impl();
        Tape::active()->record(oi, [xi, oi, a, n] {
            const float* g = oi->grad.data();
            float* gx = xi->grad_ref().data();
            for (int64_t i = 0; i < n; ++i) gx[i] += a * g[i];
        });
    }
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    const int c = x.dim(x.ndim() - 1);
    if (bias.ndim() != 1 || bias.dim(0) != c)
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                             " does not span last axis of " + shape_str(x.shape()));
    Tensor out(x.shape());
    const float* px = x.data();
    const float* pb = bias.data();
    float* po = out.data();
    const int64_t rows = x.size() / c;
    for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) po[r * c + j] = px[r * c + j] + pb[j];
    if (recording({&x, &bias})) {
        auto xi = x.impl(), bi = bias.impl(), oi = out.impl();
        Tape::active()->record(oi, [xi, bi, oi, rows, c] {
            const float* g = oi->grad.data();
            if (xi->tracked) {
                float* gx = xi->grad_ref().data();
                const int64_t n = rows * c;
                for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
            }
            if (bi->tracked) {
                float* gb = bi->grad_ref().data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < c; ++j) gb[j] += g[r * c + j];
            }
        });
    }
    return out;
}

Tensor add_broadcast(const Tensor& x, const Tensor& b) {
    const int64_t bn = b.size();
    if (x.size() % bn != 0)
        throw DimensionError("add_broadcast: " + shape_str(b.shape()) + " does not tile " +
                             shape_str(x.shape()));
    const int64_t groups = x.size() / bn;
    Tensor out(x.shape());
    const float* px = x.data();
    const float* pb = b.data();
    float* po = out.data();
    for (int64_t g = 0; g < groups; ++g)
        for (int64_t i = 0; i < bn; ++i) po[g * bn + i] = px[g * bn + i] + pb[i];
    if (recording({&x, &b})) {
        auto xi = x.impl(), bi = b.impl(), oi = out.impl();
        Tape::active()->record(oi, [xi, bi, oi, groups, bn] {
            const float* g = oi->grad.data();
            if (xi->tracked) {
                float* gx = xi->grad_ref().data();
                const int64_t n = groups * bn;
                for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
            }
            if (bi->tracked) {
                float* gb = bi->grad_ref().data();
                for (int64_t k = 0; k < groups; ++k)
                    for (int64_t i = 0; i < bn; ++i) gb[i] += g[k * bn + i];
            }
        });
    }
    return out;
}

// ---- pointwise ----

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    const float* px = x.data();
    float* po = out.data();
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) po[i] = px[i] > 0.0f ? px[i] : 0.0f;
    if (recording({&x})) {
        auto xi = x.impl(), oi = out.impl();
        Tape::active()->record(oi, [xi, oi, n] {
            const float* g = oi->grad.data();
            const float* px = xi->data->data();
            float* gx = xi->grad_ref().data();
            for (int64_t i = 0; i < n; ++i)
                if (px[i] > 0.0f) gx[i] += g[i];
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out(x.shape());
    const float* px = x.data();
    float* po = out.data();
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) {
        const double v = px[i];
        po[i] = static_cast<float>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
    }
    if (recording({&x})) {
        auto xi = x.impl(), oi = out.impl();
        Tape::active()->record(oi, [xi, oi, n] {
            const float* g = oi->grad.data();
            const float* px = xi->data->data();
            float* gx = xi->grad_ref().data();
            for (int64_t i = 0; i < n; ++i) {
                const double v = px[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                gx[i] += g[i] * static_cast<float>(cdf + v * pdf);
            }
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out(x.shape());
    const float* px = x.data();
    float* po = out.data();
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) {
        const float v = px[i];
        po[i] = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v))
                          : std::exp(v) / (1.0f + std::exp(v));
    }
    if (recording({&x})) {
        auto xi = x.impl(), oi = out.impl();
        Tape::active()->record(oi, [xi, oi, n] {
            const float* g = oi->grad.data();
            const float* py = oi->data->data();
            float* gx = xi->grad_ref().data();
            for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * py[i] * (1.0f - py[i]);
        });
    }
    return out;
}

Tensor abs(const Tensor& x) {
    Tensor out(x.shape());
    const float* px = x.data();
    float* po = out.data();
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) po[i] = std::fabs(px[i]);
    if (recording({&x})) {
        auto xi = x.impl(), oi = out.impl();
        Tape::active()->record(oi, [xi, oi, n] {
            const float* g = oi->grad.data();
            const float* px = xi->data->data();
            float* gx = xi->grad_ref().data();
            for (int64_t i = 0; i < n; ++i) {
                if (px[i] > 0.0f)
                    gx[i] += g[i];
                else if (px[i] < 0.0f)
                    gx[i] -= g[i];
            }
        });
    }
    return out;
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out(Shape{m, n});
    CMatMap A(a.data(), m, k), B(b.data(), k, n);
    MatMap C(out.data(), m, n);
    C.noalias() = A * B;
    if (recording({&a, &b})) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::active()->record(oi, [ai, bi, oi, m, k, n] {
            CMatMap G(oi->grad.data(), m, n);
            if (ai->tracked) {
                CMatMap B(bi->data->data(), k, n);
                MatMap GA(ai->grad_ref().data(), m, k);
                GA.noalias() += G * B.transpose();
            }
            if (bi->tracked) {
                CMatMap A(ai->data->data(), m, k);
                MatMap GB(bi->grad_ref().data(), k, n);
                GB.noalias() += A.transpose() * G;
            }
        });
    }
    return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0))
        throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const int batch = a.dim(0), m = a.dim(1), k = a.dim(2);
    const int bk = trans_b ? b.dim(2) : b.dim(1);
    const int n = trans_b ? b.dim(1) : b.dim(2);
    if (bk != k)
        throw DimensionError("bmm: inner dims disagree, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Tensor out(Shape{batch, m, n});
    for (int i = 0; i < batch; ++i) {
        CMatMap A(a.data() + static_cast<int64_t>(i) * m * k, m, k);
        MatMap C(out.data() + static_cast<int64_t>(i) * m * n, m, n);
        if (trans_b) {
            CMatMap B(b.data() + static_cast<int64_t>(i) * n * k, n, k);
            C.noalias() = A * B.transpose();
        } else {
            CMatMap B(b.data() + static_cast<int64_t>(i) * k * n, k, n);
            C.noalias() = A * B;
        }
    }
    if (recording({&a, &b})) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::active()->record(oi, [ai, bi, oi, batch, m, k, n, trans_b] {
            for (int i = 0; i < batch; ++i) {
                CMatMap G(oi->grad.data() + static_cast<int64_t>(i) * m * n, m, n);
                if (ai->tracked) {
                    MatMap GA(ai->grad_ref().data() + static_cast<int64_t>(i) * m * k, m, k);
                    if (trans_b) {
                        CMatMap B(bi->data->data() + static_cast<int64_t>(i) * n * k, n, k);
                        GA.noalias() += G * B;
                    } else {
                        CMatMap B(bi->data->data() + static_cast<int64_t>(i) * k * n, k, n);
                        GA.noalias() += G * B.transpose();
                    }
                }
                if (bi->tracked) {
                    CMatMap A(ai->data->data() + static_cast<int64_t>(i) * m * k, m, k);
                    if (trans_b) {
                        MatMap GB(bi->grad_ref().data() + static_cast<int64_t>(i) * n * k, n, k);
                        GB.noalias() += G.transpose() * A;
                    } else {
                        MatMap GB(bi->grad_ref().data() + static_cast<int64_t>(i) * k * n, k, n);
                        GB.noalias() += A.transpose() * G;
                    }
                }
            }
        });
    }
    return out;
}

// ---- structure ----

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size())
        throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) +
                             " changes element count");
    // Shares storage; the view gets its own grad buffer folded back on the tape.
    Tensor out = x.detached();
    out.impl()->shape = std::move(shape);
    if (recording({&x})) {
        auto xi = x.impl(), oi = out.impl();
        const int64_t n = x.size();
        Tape::active()->record(oi, [xi, oi, n] {
            const float* g = oi->grad.data();
            float* gx = xi->grad_ref().data();
            for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
        });
    }
    return out;
}

Tensor take(const Tensor& x, const IndexVec& idx, Shape out_shape) {
    if (shape_numel(out_shape) != static_cast<int64_t>(idx->size()))
        throw DimensionError("take: index count does not match " + shape_str(out_shape));
    Tensor out(std::move(out_shape));
    const float* px = x.data();
    float* po = out.data();
    const int64_t n = static_cast<int64_t>(idx->size());
    const int64_t* pi = idx->data();
    for (int64_t i = 0; i < n; ++i) po[i] = px[pi[i]];
    if (recording({&x})) {
        auto xi = x.impl(), oi = out.impl();
        Tape::active()->record(oi, [xi, oi, idx, n] {
            const float* g = oi->grad.data();
            float* gx = xi->grad_ref().data();
            const int64_t* pi = idx->data();
            for (int64_t i = 0; i < n; ++i) gx[pi[i]] += g[i];
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const int nd = parts[0].ndim();
    axis = normalize_axis(axis, nd);
    Shape out_shape = parts[0].shape();
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != nd) throw DimensionError("concat: rank mismatch");
        for (int d = 0; d < nd; ++d)
            if (d != axis && p.dim(d) != out_shape[static_cast<size_t>(d)])
                throw DimensionError("concat: shapes differ off-axis, " +
                                     shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        total += p.dim(axis);
    }
    out_shape[static_cast<size_t>(axis)] = total;
    Tensor out(out_shape);

    const int64_t outer = detail::numel_range(out_shape, 0, static_cast<size_t>(axis));
    const int64_t inner = detail::numel_range(out_shape, static_cast<size_t>(axis) + 1, out_shape.size());
    float* po = out.data();
    int64_t offset = 0;  // in units of (axis slots)
    struct Piece {
        std::shared_ptr<TensorImpl> impl;
        int64_t offset;
        int64_t len;
        bool tracked;
    };
    std::vector<Piece> pieces;
    for (const Tensor& p : parts) {
        const int64_t len = p.dim(axis);
        const float* pp = p.data();
        for (int64_t o = 0; o < outer; ++o) {
            float* dst = po + (o * total + offset) * inner;
            const float* src = pp + o * len * inner;
            std::copy(src, src + len * inner, dst);
        }
        pieces.push_back(Piece{p.impl(), offset, len, p.tracked()});
        offset += len;
    }

    bool any = false;
    for (const Tensor& p : parts) any = any || p.tracked();
    if (Tape::active() && any) {
        auto oi = out.impl();
        Tape::active()->record(oi, [oi, pieces, outer, inner, total] {
            const float* g = oi->grad.data();
            for (const Piece& pc : pieces) {
                if (!pc.tracked) continue;
                float* gp = pc.impl->grad_ref().data();
                for (int64_t o = 0; o < outer; ++o) {
                    const float* src = g + (o * total + pc.offset) * inner;
                    float* dst = gp + o * pc.len * inner;
                    const int64_t n = pc.len * inner;
                    for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return out;
}

IndexVec make_permute_indices(const Shape& shape, const std::vector<int>& perm) {
    const int nd = static_cast<int>(shape.size());
    if (static_cast<int>(perm.size()) != nd) throw ContractError("permute: rank mismatch");
    std::vector<int64_t> in_strides(static_cast<size_t>(nd), 1);
    for (int d = nd - 2; d >= 0; --d)
        in_strides[static_cast<size_t>(d)] = in_strides[static_cast<size_t>(d) + 1] * shape[static_cast<size_t>(d) + 1];
    Shape out_shape(static_cast<size_t>(nd));
    for (int d = 0; d < nd; ++d) out_shape[static_cast<size_t>(d)] = shape[static_cast<size_t>(perm[static_cast<size_t>(d)])];
    const int64_t n = shape_numel(shape);
    auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n));
    std::vector<int64_t> coord(static_cast<size_t>(nd), 0);
    for (int64_t i = 0; i < n; ++i) {
        int64_t src = 0;
        for (int d = 0; d < nd; ++d)
            src += coord[static_cast<size_t>(d)] * in_strides[static_cast<size_t>(perm[static_cast<size_t>(d)])];
        (*idx)[static_cast<size_t>(i)] = src;
        for (int d = nd - 1; d >= 0; --d) {
            if (++coord[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
            coord[static_cast<size_t>(d)] = 0;
        }
    }
    return idx;
}

// ---- softmax / norms ----

Tensor softmax(const Tensor& x, int axis) {
    axis = normalize_axis(axis, x.ndim());
    const Shape& s = x.shape();
    const int64_t len = s[static_cast<size_t>(axis)];
    const int64_t inner = detail::numel_range(s, static_cast<size_t>(axis) + 1, s.size());
    const int64_t outer = x.size() / (len * inner);
    Tensor out(x.shape());
    const float* px = x.data();
    float* po = out.data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * len * inner + in;
            float mx = px[base];
            for (int64_t j = 1; j < len; ++j) mx = std::max(mx, px[base + j * inner]);
            double sum = 0.0;
            for (int64_t j = 0; j < len; ++j) {
                const float e = std::exp(px[base + j * inner] - mx);
                po[base + j * inner] = e;
                sum += e;
            }
            const float inv = static_cast<float>(1.0 / sum);
            for (int64_t j = 0; j < len; ++j) po[base + j * inner] *= inv;
        }
    }
    if (recording({&x})) {
        auto xi = x.impl(), oi = out.impl();
        Tape::active()->record(oi, [xi, oi, outer, len, inner] {
            const float* g = oi->grad.data();
            const float* y = oi->data->data();
            float* gx = xi->grad_ref().data();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * len * inner + in;
                    double dot = 0.0;
                    for (int64_t j = 0; j < len; ++j) dot += static_cast<double>(g[base + j * inner]) * y[base + j * inner];
                    const float d = static_cast<float>(dot);
                    for (int64_t j = 0; j < len; ++j) {
                        const int64_t k = base + j * inner;
                        gx[k] += y[k] * (g[k] - d);
                    }
                }
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    const int c = x.dim(x.ndim() - 1);
    if (gamma.size() != c || beta.size() != c)
        throw DimensionError("layer_norm: scale/bias " + shape_str(gamma.shape()) +
                             " do not span last axis of " + shape_str(x.shape()));
    const int64_t rows = x.size() / c;
    Tensor out(x.shape());
    auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(x.size()));
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
    const float* px = x.data();
    const float* pg = gamma.data();
    const float* pb = beta.data();
    float* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* row = px + r * c;
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += row[j];
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= c;
        const float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*inv_std)[static_cast<size_t>(r)] = inv;
        const float m = static_cast<float>(mean);
        for (int j = 0; j < c; ++j) {
            const float h = (row[j] - m) * inv;
            (*xhat)[static_cast<size_t>(r * c + j)] = h;
            po[r * c + j] = h * pg[j] + pb[j];
        }
    }
    if (recording({&x, &gamma, &beta})) {
        auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
        Tape::active()->record(oi, [xi, gi, bi, oi, xhat, inv_std, rows, c] {
            const float* g = oi->grad.data();
            const float* pg = gi->data->data();
            if (gi->tracked) {
                float* gg = gi->grad_ref().data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < c; ++j) gg[j] += g[r * c + j] * (*xhat)[static_cast<size_t>(r * c + j)];
            }
            if (bi->tracked) {
                float* gb = bi->grad_ref().data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < c; ++j) gb[j] += g[r * c + j];
            }
            if (xi->tracked) {
                float* gx = xi->grad_ref().data();
                for (int64_t r = 0; r < rows; ++r) {
                    const float inv = (*inv_std)[static_cast<size_t>(r)];
                    double sum_d = 0.0, sum_dh = 0.0;
                    for (int j = 0; j < c; ++j) {
                        const double dxh = static_cast<double>(g[r * c + j]) * pg[j];
                        sum_d += dxh;
                        sum_dh += dxh * (*xhat)[static_cast<size_t>(r * c + j)];
                    }
                    const float mean_d = static_cast<float>(sum_d / c);
                    const float mean_dh = static_cast<float>(sum_dh / c);
                    for (int j = 0; j < c; ++j) {
                        const float dxh = g[r * c + j] * pg[j];
                        const float h = (*xhat)[static_cast<size_t>(r * c + j)];
                        gx[r * c + j] += inv * (dxh - mean_d - h * mean_dh);
                    }
                }
            }
        });
    }
    return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor running_mean, Tensor running_var, bool training,
                  float momentum, float eps) {
    if (x.ndim() != 4 && x.ndim() != 3)
        throw DimensionError("batch_norm: expected [B,C,H,W] or [C,H,W], got " + shape_str(x.shape()));
    const bool batched = x.ndim() == 4;
    const int b = batched ? x.dim(0) : 1;
    const int c = batched ? x.dim(1) : x.dim(0);
    const int64_t plane = static_cast<int64_t>(x.dim(batched ? 2 : 1)) * x.dim(batched ? 3 : 2);
    if (gamma.size() != c || beta.size() != c || running_mean.size() != c || running_var.size() != c)
        throw DimensionError("batch_norm: per-channel params do not match " + shape_str(x.shape()));

    Tensor out(x.shape());
    const float* px = x.data();
    const float* pg = gamma.data();
    const float* pb = beta.data();
    float* po = out.data();
    const int64_t cstride = plane;
    const int64_t bstride = static_cast<int64_t>(c) * plane;
    const int64_t n = static_cast<int64_t>(b) * plane;  // samples per channel

    auto mean_v = std::make_shared<std::vector<float>>(static_cast<size_t>(c));
    auto inv_v = std::make_shared<std::vector<float>>(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch) {
        double mean, var;
        if (training) {
            double s = 0.0;
            for (int bi = 0; bi < b; ++bi) {
                const float* p = px + bi * bstride + ch * cstride;
                for (int64_t i = 0; i < plane; ++i) s += p[i];
            }
            mean = s / static_cast<double>(n);
            double v = 0.0;
            for (int bi = 0; bi < b; ++bi) {
                const float* p = px + bi * bstride + ch * cstride;
                for (int64_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mean;
                    v += d * d;
                }
            }
            var = v / static_cast<double>(n);
            float* rm = running_mean.data();
            float* rv = running_var.data();
            rm[ch] = (1.0f - momentum) * rm[ch] + momentum * static_cast<float>(mean);
            rv[ch] = (1.0f - momentum) * rv[ch] + momentum * static_cast<float>(var);
        } else {
            mean = running_mean.data()[ch];
            var = running_var.data()[ch];
        }
        const float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*mean_v)[static_cast<size_t>(ch)] = static_cast<float>(mean);
        (*inv_v)[static_cast<size_t>(ch)] = inv;
        for (int bi = 0; bi < b; ++bi) {
            const float* p = px + bi * bstride + ch * cstride;
            float* q = po + bi * bstride + ch * cstride;
            const float m = static_cast<float>(mean);
            for (int64_t i = 0; i < plane; ++i) q[i] = (p[i] - m) * inv * pg[ch] + pb[ch];
        }
    }

    if (recording({&x, &gamma, &beta})) {
        auto xi = x.impl(), gi = gamma.impl(), bi_ = beta.impl(), oi = out.impl();
        Tape::active()->record(oi, [xi, gi, bi_, oi, mean_v, inv_v, b, c, plane, bstride, cstride, n, training] {
            const float* g = oi->grad.data();
            const float* px = xi->data->data();
            const float* pg = gi->data->data();
            for (int ch = 0; ch < c; ++ch) {
                const float m = (*mean_v)[static_cast<size_t>(ch)];
                const float inv = (*inv_v)[static_cast<size_t>(ch)];
                double sum_g = 0.0, sum_gh = 0.0;
                for (int bi = 0; bi < b; ++bi) {
                    const float* pgr = g + bi * bstride + ch * cstride;
                    const float* pxr = px + bi * bstride + ch * cstride;
                    for (int64_t i = 0; i < plane; ++i) {
                        sum_g += pgr[i];
                        sum_gh += static_cast<double>(pgr[i]) * ((pxr[i] - m) * inv);
                    }
                }
                if (gi->tracked) gi->grad_ref()[static_cast<size_t>(ch)] += static_cast<float>(sum_gh);
                if (bi_->tracked) bi_->grad_ref()[static_cast<size_t>(ch)] += static_cast<float>(sum_g);
                if (xi->tracked) {
                    float* gx = xi->grad_ref().data();
                    const float k1 = static_cast<float>(sum_g / static_cast<double>(n));
                    const float k2 = static_cast<float>(sum_gh / static_cast<double>(n));
                    for (int bi = 0; bi < b; ++bi) {
                        const float* pgr = g + bi * bstride + ch * cstride;
                        const float* pxr = px + bi * bstride + ch * cstride;
                        float* gxr = gx + bi * bstride + ch * cstride;
                        if (training) {
                            for (int64_t i = 0; i < plane; ++i) {
                                const float h = (pxr[i] - m) * inv;
                                gxr[i] += pg[ch] * inv * (pgr[i] - k1 - h * k2);
                            }
                        } else {
                            for (int64_t i = 0; i < plane; ++i) gxr[i] += pg[ch] * inv * pgr[i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor attn_add_extras(const Tensor& scores, const Tensor& bias, const Tensor& mask,
                       int windows_per_sample) {
    if (scores.ndim() != 4)
        throw DimensionError("attn_add_extras: scores must be [G,nH,T,T], got " + shape_str(scores.shape()));
    const int g = scores.dim(0), nh = scores.dim(1), t = scores.dim(2);
    const int64_t tt = static_cast<int64_t>(t) * t;
    if (bias.defined() && (bias.ndim() != 3 || bias.dim(0) != nh || bias.dim(1) != t || bias.dim(2) != t))
        throw DimensionError("attn_add_extras: bias " + shape_str(bias.shape()) + " vs scores " +
                             shape_str(scores.shape()));
    if (mask.defined() &&
        (mask.ndim() != 3 || mask.dim(0) != windows_per_sample || mask.dim(1) != t || mask.dim(2) != t || g % windows_per_sample != 0))
        throw DimensionError("attn_add_extras: mask " + shape_str(mask.shape()) + " vs scores " +
                             shape_str(scores.shape()));

    Tensor out(scores.shape());
    const float* ps = scores.data();
    float* po = out.data();
    const float* pb = bias.defined() ? bias.data() : nullptr;
    const float* pm = mask.defined() ? mask.data() : nullptr;
    for (int gi = 0; gi < g; ++gi) {
        const int w = windows_per_sample > 0 ? gi % windows_per_sample : 0;
        for (int h = 0; h < nh; ++h) {
            const int64_t base = (static_cast<int64_t>(gi) * nh + h) * tt;
            const float* bb = pb ? pb + static_cast<int64_t>(h) * tt : nullptr;
            const float* mm = pm ? pm + static_cast<int64_t>(w) * tt : nullptr;
            for (int64_t i = 0; i < tt; ++i) {
                float v = ps[base + i];
                if (bb) v += bb[i];
                if (mm) v += mm[i];
                po[base + i] = v;
            }
        }
    }
    const bool track_bias = bias.defined() && bias.tracked();
    if (Tape::active() && (scores.tracked() || track_bias)) {
        auto si = scores.impl(), oi = out.impl();
        auto bi = bias.defined() ? bias.impl() : nullptr;
        const int64_t total = scores.size();
        Tape::active()->record(oi, [si, bi, oi, total, g, nh, tt] {
            const float* gr = oi->grad.data();
            if (si->tracked) {
                float* gs = si->grad_ref().data();
                for (int64_t i = 0; i < total; ++i) gs[i] += gr[i];
            }
            if (bi && bi->tracked) {
                float* gb = bi->grad_ref().data();
                for (int gi = 0; gi < g; ++gi)
                    for (int h = 0; h < nh; ++h) {
                        const float* src = gr + (static_cast<int64_t>(gi) * nh + h) * tt;
                        float* dst = gb + static_cast<int64_t>(h) * tt;
                        for (int64_t i = 0; i < tt; ++i) dst[i] += src[i];
                    }
            }
        });
    }
    return out;
}

// ---- reductions / losses ----

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    const float* px = x.data();
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) s += px[i];
    Tensor out = Tensor::scalar(static_cast<float>(s));
    if (recording({&x})) {
        auto xi = x.impl(), oi = out.impl();
        Tape::active()->record(oi, [xi, oi, n] {
            const float g = oi->grad[0];
            float* gx = xi->grad_ref().data();
            for (int64_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x) {
    double s = 0.0;
    const float* px = x.data();
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) s += px[i];
    Tensor out = Tensor::scalar(static_cast<float>(s / static_cast<double>(n)));
    if (recording({&x})) {
        auto xi = x.impl(), oi = out.impl();
        Tape::active()->record(oi, [xi, oi, n] {
            const float g = oi->grad[0] / static_cast<float>(n);
            float* gx = xi->grad_ref().data();
            for (int64_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse_loss");
    const float* pp = pred.data();
    const float* pt = target.data();
    const int64_t n = pred.size();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pp[i]) - pt[i];
        s += d * d;
    }
    Tensor out = Tensor::scalar(static_cast<float>(s / static_cast<double>(n)));
    if (recording({&pred, &target})) {
        auto pi = pred.impl(), ti = target.impl(), oi = out.impl();
        Tape::active()->record(oi, [pi, ti, oi, n] {
            const float g = oi->grad[0] * 2.0f / static_cast<float>(n);
            const float* pp = pi->data->data();
            const float* pt = ti->data->data();
            if (pi->tracked) {
                float* gp = pi->grad_ref().data();
                for (int64_t i = 0; i < n; ++i) gp[i] += g * (pp[i] - pt[i]);
            }
            if (ti->tracked) {
                float* gt = ti->grad_ref().data();
                for (int64_t i = 0; i < n; ++i) gt[i] -= g * (pp[i] - pt[i]);
            }
        });
    }
    return out;
}

}  // namespace pgcn
