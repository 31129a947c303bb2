#pragma once
// Differentiable operations over Tensor. Shapes follow NCHW for images and
// feature maps, [rows, cols] for dense layers, [batch, tokens, dim] for
// attention.

#include "coic/tensor.hpp"

namespace coic::ops {

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor leaky_relu(const Tensor& a, float slope);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
// Clamp to [0,1]; gradient passes only inside the range.
Tensor clamp01(const Tensor& a);

// Reductions and losses.
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor l1_loss(const Tensor& a, const Tensor& target);
Tensor mse_loss(const Tensor& a, const Tensor& target);

// Shape plumbing.
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor concat_cols(const Tensor& a, const Tensor& b);            // [n,p]+[n,q] -> [n,p+q]
Tensor slice_cols(const Tensor& a, int start, int len);          // [n,p] -> [n,len]
Tensor concat_channels(const Tensor& a, const Tensor& b);        // NCHW channel concat
Tensor tile_vec(const Tensor& a, int times);                     // [n] -> [times*n]
Tensor upsample2_nearest(const Tensor& a);                       // NCHW -> N,C,2H,2W
// [N,C,H,W] -> [N,(H/p)(W/p), p*p*C] tokens, row-major patches.
Tensor patchify(const Tensor& x, int p);
Tensor unpatchify(const Tensor& t, int p, int c, int h, int w);

// Dense.
Tensor matmul(const Tensor& a, const Tensor& b);                 // [m,k]x[k,n]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x[n,in], w[out,in]
Tensor bmm(const Tensor& a, const Tensor& b);                    // [B,m,k]x[B,k,n]
Tensor bmm_nt(const Tensor& a, const Tensor& b);                 // [B,m,k]x[B,n,k]^T
Tensor softmax_rows(const Tensor& a);                            // softmax over last dim
// x [B,T,D] + c [B,D] broadcast over tokens.
Tensor add_token_bias(const Tensor& x, const Tensor& c);

// Convolution. x [N,Cin,H,W], w [Cout,Cin/groups,k,k], bias [Cout] or
// undefined; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad,
              int groups);

// Pooling / normalization.
Tensor gap(const Tensor& x);                        // [N,C,H,W] -> [N,C]
Tensor l2_normalize_rows(const Tensor& x);          // rows to unit norm
Tensor cosine_rows(const Tensor& a, const Tensor& b);  // [n,d],[n,d] -> [n]

// Adaptive spatial weight: A[n,c,c',a,b] = k^2 softmax_ab(Z[n]/tau[n,c,c'])
// with tau = 1/sigmoid(Q[n,c]+R[n,c']). Q [N,C], R [N,C'], Z [N,k*k].
Tensor adaptive_weight(const Tensor& q, const Tensor& r, const Tensor& z, int k);
// Per-sample weights: A [N,C,C',k,k] * W [C,C',k,k] -> [N,C,C',k,k].
Tensor mul_weight_per_sample(const Tensor& a, const Tensor& w);

// Mean over n of -log( e^{s_pos_i} / (e^{s_pos_i} + sum_j e^{s_neg_ij}) ).
Tensor info_nce(const Tensor& s_pos, const Tensor& s_neg);

}  // namespace coic::ops
