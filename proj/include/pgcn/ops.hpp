#pragma once

#include <memory>
#include <vector>

#include "pgcn/tensor.hpp"

// Differentiable free functions over Tensor. Layout conventions:
//   image/conv tensors  [B, C, H, W] (3-D means B = 1)
//   token maps          [B, H, W, C]
//   attention windows   [G, T, C]   with G = batch * windows, T = window^2
//   attention heads     [G, nH, T, hd], scores [G, nH, T, T]
// Every op runs eagerly; when a Tape is active and an input is tracked, the
// op records a backward closure on it.

namespace pgcn {

using IndexVec = std::shared_ptr<std::vector<int64_t>>;

// ---- arithmetic ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// a*x + b with scalar constants.
Tensor scale_shift(const Tensor& x, float a, float b);
// x + bias, bias spanning the last axis.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x[i, ...] + b[...] for every leading index i; b matches x's trailing dims.
Tensor add_broadcast(const Tensor& x, const Tensor& b);

// ---- pointwise nonlinearities ----
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor abs(const Tensor& x);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched matmul over matching leading dim: [N,m,k] x [N,k,n] -> [N,m,n];
// trans_b interprets b as [N,n,k].
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false);

// ---- structure ----
Tensor reshape(const Tensor& x, Shape shape);
// out[i] = x[(*idx)[i]]; backward scatter-adds, so repeated indices are fine.
Tensor take(const Tensor& x, const IndexVec& idx, Shape out_shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// Flat index vector for a dimension permutation of `shape`.
IndexVec make_permute_indices(const Shape& shape, const std::vector<int>& perm);

// ---- neural-net ops ----
// x [B,Cin,H,W], k [Cout,Cin,kh,kw], optional bias [Cout].
Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, int stride, int padding);
Tensor max_pool2d(const Tensor& x, int kernel, int stride);
// Bilinear, half-pixel centers, over the trailing two axes.
Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w);
Tensor softmax(const Tensor& x, int axis);
// Normalizes the last axis; gamma/beta span it. Epsilon sits inside the root.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
// Per-channel over (B,H,W) of [B,C,H,W]. Training mode uses batch statistics
// and folds them into the running buffers in place; eval mode reads the
// buffers as they are (fresh ones hold mean 0, var 1).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor running_mean, Tensor running_var, bool training,
                  float momentum = 0.1f, float eps = 1e-5f);
// Global average pool: [B,C,H,W] -> [B,C].
Tensor spatial_mean(const Tensor& x);

// scores [G,nH,T,T]; bias [nH,T,T] tiles over G; mask [nW,T,T] tiles as
// G = B*nW with broadcast over heads. Either may be undefined. The mask is a
// constant; the bias receives summed gradients.
Tensor attn_add_extras(const Tensor& scores, const Tensor& bias, const Tensor& mask,
                       int windows_per_sample);

// ---- reductions / losses ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// Mean of squared elementwise differences over all elements.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

}  // namespace pgcn
