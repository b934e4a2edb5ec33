#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "cohft/tape.hpp"
#include "cohft/tensor.hpp"

// Differentiable primitives. Every op comes in a Tensor form (pure forward
// kernel) and a Var form that records the kernel and its adjoint on the tape
// owning the inputs.
//
// Feature maps are channel-last: [h,w,c] or batched [b,h,w,c].
namespace cohft::ops {

inline constexpr Real kLayerNormEps = 1e-5;

// Elementwise, identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add_scalar(Var a, Real c);
Var scale(Var a, Real c);
Var square(Var a);

// Reductions to a rank-0 scalar.
Var sum(Var a);
Var mean(Var a);

Tensor sigmoid(const Tensor& x);
Var sigmoid(Var x);
// Exact erf form x * Phi(x).
Tensor gelu(const Tensor& x);
Var gelu(Var x);
Tensor leaky_relu(const Tensor& x, Real slope);
Var leaky_relu(Var x, Real slope);

Var reshape(Var x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Var permute(Var x, const std::vector<std::size_t>& axes);

// Concatenation / slicing along the last axis.
Var concat(const std::vector<Var>& xs);
Var slice_last(Var x, std::size_t begin, std::size_t end);

// x[..., d] * m[..., 1], m broadcast over the channel axis.
Var mul_channel_map(Var x, Var map);

// out[i] = x[index[i]]; the adjoint scatters back. `op` names the node.
Var gather(const char* op, Var x, std::shared_ptr<const std::vector<std::uint32_t>> index, Shape out_shape);

// Cross-correlation with zero padding. x: [h,w,cin] or [b,h,w,cin];
// weights: [k,k,cin,cout]; bias: [cout].
Tensor conv2d(const Tensor& x, const Tensor& weights, const Tensor& bias, std::size_t stride, std::size_t pad);
Var conv2d(Var x, Var weights, Var bias, std::size_t stride, std::size_t pad);

// Affine map of the last axis: x[..., din] * w[din, dout] + b[dout].
Var linear(Var x, Var weights, Var bias);

// Normalizes each last-axis slice, then applies gain and shift.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, Real eps = kLayerNormEps);
Var layer_norm(Var x, Var gain, Var shift, Real eps = kLayerNormEps);

// Max-subtracted softmax along `axis` (negative counts from the back).
Tensor softmax(const Tensor& x, int axis = -1);
Var softmax(Var x, int axis = -1);

// Batched matrix product over leading axes: [..., n, k] x [..., k, m], or
// [..., n, k] x [..., m, k]^T when transpose_b.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
Var matmul(Var a, Var b, bool transpose_b = false);

// [h,w,d] -> [h*w/p^2, d*p^2] (batched: [b,h,w,d] -> [b,N,d*p^2]). Tokens in
// row-major patch order; inside a patch row, then column, then channel.
Tensor unfold(const Tensor& x, std::size_t p);
Var unfold(Var x, std::size_t p);
Tensor fold(const Tensor& tokens, std::size_t p, std::size_t h, std::size_t w);
Var fold(Var tokens, std::size_t p, std::size_t h, std::size_t w);

// [h,w,d*r^2] -> [r*h, r*w, d]; channel c*r^2 + dy*r + dx of (y,x) lands at (r*y+dy, r*x+dx, c).
Tensor pixel_shuffle(const Tensor& x, std::size_t r);
Var pixel_shuffle(Var x, std::size_t r);
// Inverse rearrangement of pixel_shuffle.
Tensor pixel_unshuffle(const Tensor& x, std::size_t r);

}  // namespace cohft::ops
