#pragma once

#include "vrg/tensor.hpp"

namespace vrg::kern {

// im2col + GEMM convolution triad.  conv2d, its input gradient and its weight
// gradient are closed under differentiation (each one's derivatives are again
// members of the triad), which is what the autograd layer builds on.
//
// Layouts: x [N,Ci,H,W], w [Co,Ci,K,K], y [N,Co,Ho,Wo], zero padding,
// (H + 2p - K) must be divisible by the stride.

struct Conv2dDims {
  int64_t N, Ci, H, W, Co, K, Ho, Wo;
  int stride, pad;
};

Conv2dDims conv_dims(const std::vector<int64_t>& x_shape, const std::vector<int64_t>& w_shape,
                     int stride, int pad);

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad);
Tensor conv2d_input_grad(const Tensor& gy, const Tensor& w, int stride, int pad, int64_t H,
                         int64_t W);
Tensor conv2d_weight_grad(const Tensor& gy, const Tensor& x, int stride, int pad, int64_t K);

// Batched matrix product with optional transposes: [B,·,·] x [B,·,·].
Tensor bmm(const Tensor& a, const Tensor& b, bool ta, bool tb);

// Row-wise max over the last dimension, [..., L] -> [..., 1].
Tensor rowmax_last(const Tensor& a);

}  // namespace vrg::kern
