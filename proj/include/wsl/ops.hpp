#pragma once

#include <span>
#include <vector>

#include "wsl/tensor.hpp"

// Differentiable primitives. Shapes follow numpy conventions; binary
// elementwise ops broadcast over trailing-aligned axes of size 1.
namespace wsl::tc {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor square(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softplus(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor max_axis(const Tensor& x, std::size_t axis, bool keepdim = false);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& x);  // rank 2
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Selects entries of a rank-2 tensor, one column per row.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> columns);

Tensor matmul(const Tensor& a, const Tensor& b);  // [n,k] x [k,m]
// x [n,in], weight [out,in], bias [out] (may be undefined) -> [n,out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax(const Tensor& x);      // over the last axis
Tensor log_softmax(const Tensor& x);  // over the last axis

// Normalizes along `axis` with per-position affine gamma/beta of that axis' size.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t axis, double eps = 1e-5);

// x [C, ...]. Training mode normalizes with statistics over every non-channel
// position and updates running stats in place; eval mode uses running stats.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool training);

// 1D ops on [C, L]; 2D ops on [C, H, W].
Tensor max_pool1d(const Tensor& x, std::size_t kernel, std::size_t stride);
Tensor avg_pool1d(const Tensor& x, std::size_t kernel, std::size_t stride);
Tensor adaptive_avg_pool1d(const Tensor& x, std::size_t out_len);
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);
Tensor avg_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);
Tensor adaptive_avg_pool2d(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor upsample_nearest2d(const Tensor& x, std::size_t factor);

// Cross-correlation. kernels [Cout, Cin, K]; bias [Cout] or undefined.
Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride, std::size_t padding);
// kernels [Cout, Cin, KH, KW].
Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride, std::size_t padding);
// Stride-1 transposed correlation with a 5x5 kernel: conv2d with the kernel
// flipped in both spatial axes and size-preserving padding of 2.
Tensor reverse_conv2d_5x5(const Tensor& x, const Tensor& kernels, const Tensor& bias);

// Diagonal selective scan, per channel d and state n:
//   h[t,d,n] = exp(delta[t,d] * A[d,n]) * h[t-1,d,n] + delta[t,d] * B[t,n] * x[t,d]
//   y[t,d]   = sum_n C[t,n] * h[t,d,n] + skip[d] * x[t,d]
// x, delta [T,D]; A [D,N]; B, C [T,N]; skip [D].
Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& A, const Tensor& B, const Tensor& C,
                      const Tensor& skip);

// One GRU direction over a sequence, zero initial state. `input_proj` [T,3H]
// holds W_i x_t + b_i with gate blocks ordered (reset, update, candidate):
//   r = sigmoid(a_r + W_hr h + b_hr),  z = sigmoid(a_z + W_hz h + b_hz)
//   n = tanh(a_n + r * (W_hn h + b_hn)),  h' = (1 - z) * n + z * h
// w_hh [3H,H], b_hh [3H]. `reverse` walks t = T-1..0. Output [T,H] indexed by t.
Tensor gru_scan(const Tensor& input_proj, const Tensor& w_hh, const Tensor& b_hh, bool reverse);

}  // namespace wsl::tc
