#pragma once

#include "vrg/autograd.hpp"

// Differentiable operations.  Every backward is expressed in these same ops,
// so any first-order gradient can be differentiated again (create_graph).
// Binary elementwise ops require identical shapes; broadcasting is explicit
// via the *_last, bias and per-sample helpers.

namespace vrg::ag {

// Elementwise, same shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);

// With plain scalars.
Var scale(const Var& a, double c);
Var add_const(const Var& a, double c);

// Unary.
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var sigmoid(const Var& a);
Var tanh(const Var& a);

// Reductions and their broadcast adjoints.
Var sum(const Var& a);                                               // -> [1]
Var mean(const Var& a);                                              // -> [1]
Var sum_per_sample(const Var& a);                                    // [N,...] -> [N]
Var broadcast_per_sample(const Var& a, std::vector<int64_t> shape);  // [N] -> [N,...]
Var broadcast_scalar(const Var& a, std::vector<int64_t> shape);      // [1] -> shape

// Last-dimension broadcasting family ([..., 1] against [..., L]).
Var rowsum_last(const Var& a);                // [...,L] -> [...,1]
Var broadcast_last(const Var& a, int64_t l);  // [...,1] -> [...,L]
Var add_last(const Var& a, const Var& b);
Var sub_last(const Var& a, const Var& b);
Var mul_last(const Var& a, const Var& b);
Var div_last(const Var& a, const Var& b);
// Numerically shifted softmax over the last dimension, composed from the ops
// above so its second derivative needs no special casing.
Var softmax_last(const Var& a);

// Multiply a tensor by a single-element Var (attention gate).
Var scale_by(const Var& a, const Var& s);

// Channel bias for [N,C,...] activations (or [N,F] with b of length F).
Var add_bias(const Var& a, const Var& b);
Var reduce_bias(const Var& g, int64_t channels);
Var bias_expand(const Var& b, std::vector<int64_t> shape);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var bmm(const Var& a, const Var& b, bool ta = false, bool tb = false);

// Shape.
Var reshape(const Var& a, std::vector<int64_t> shape);
Var concat_ch(const Var& a, const Var& b);
Var slice_ch(const Var& a, int64_t c0, int64_t c1);
Var embed_ch(const Var& a, int64_t c0, int64_t channels);

// Convolution triad (see kernels.hpp for layouts).
Var conv2d(const Var& x, const Var& w, int stride, int pad);
Var conv2d_input_grad(const Var& g, const Var& w, int stride, int pad, int64_t h, int64_t w_);
Var conv2d_weight_grad(const Var& g, const Var& x, int stride, int pad, int64_t k);
// Transposed convolution with weight [Ci,Co,K,K]; output spatial size
// (H-1)*stride - 2*pad + K.  Thin wrapper over conv2d_input_grad.
Var conv_transpose2d(const Var& x, const Var& w, int stride, int pad);

}  // namespace vrg::ag
