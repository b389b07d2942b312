#pragma once

#include <cstdint>

#include "progan/tensor.hpp"

/// Differentiable tensor operations.
///
/// Every operation records itself on the tape of its inputs (when that tape
/// is recording) and has a backward written in terms of these same
/// operations, so second derivatives come for free. The only exception is
/// softmax_cross_entropy, which has a first-order backward only.
///
/// Binary elementwise operations accept a rank-0 tensor on either side;
/// there is no other broadcasting.
namespace progan::ops {

inline constexpr double kLeakySlope = 0.2;

template <class T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T> BasicTensor<T> scale(const BasicTensor<T>& a, double factor);
template <class T> BasicTensor<T> add_scalar(const BasicTensor<T>& a, double value);
template <class T> BasicTensor<T> leaky_relu(const BasicTensor<T>& a, double slope = kLeakySlope);
template <class T> BasicTensor<T> sigmoid(const BasicTensor<T>& a);
/// Natural log; throws DomainError on non-positive input.
template <class T> BasicTensor<T> log(const BasicTensor<T>& a);
template <class T> BasicTensor<T> square(const BasicTensor<T>& a);
/// Square root; throws DomainError on negative input.
template <class T> BasicTensor<T> sqrt(const BasicTensor<T>& a);

template <class T> BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
/// Transpose of a rank-2 tensor.
template <class T> BasicTensor<T> transpose(const BasicTensor<T>& a);
template <class T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Sum of all elements as a rank-0 tensor.
template <class T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <class T> BasicTensor<T> mean(const BasicTensor<T>& a);
/// Broadcast a single-element tensor to `shape`.
template <class T> BasicTensor<T> expand(const BasicTensor<T>& a, Shape shape);

// Axis 0 is the batch axis and axis 1 the channel/feature axis for every
// tensor of rank >= 2.
template <class T> BasicTensor<T> sum_axis0(const BasicTensor<T>& a);
template <class T> BasicTensor<T> expand_axis0(const BasicTensor<T>& a, std::int64_t n);
template <class T> BasicTensor<T> sum_axis1(const BasicTensor<T>& a);
template <class T> BasicTensor<T> expand_axis1(const BasicTensor<T>& a, std::int64_t c);
template <class T> BasicTensor<T> concat_axis1(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> slice_axis1(const BasicTensor<T>& a, std::int64_t begin, std::int64_t end);
/// Inverse of slice_axis1: places `a` at [begin, begin + a.dim(1)) in a zero
/// tensor with `total` entries along axis 1.
template <class T> BasicTensor<T> embed_axis1(const BasicTensor<T>& a, std::int64_t total, std::int64_t begin);

/// Per-channel bias vector [C] broadcast to `shape` ([N, C, ...]).
template <class T> BasicTensor<T> expand_channels(const BasicTensor<T>& bias, Shape shape);
/// Sum of [N, C, ...] over every axis except 1, giving [C].
template <class T> BasicTensor<T> sum_to_channels(const BasicTensor<T>& a);
template <class T> BasicTensor<T> add_bias(const BasicTensor<T>& a, const BasicTensor<T>& bias);

/// Same-padded (zero) stride-1 cross-correlation. input [N,Cin,H,W],
/// kernel [Cout,Cin,k,k] with odd k.
template <class T> BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel);
/// Gradient of conv2d with respect to its kernel: [Cout,Cin,k,k].
template <class T>
BasicTensor<T> conv2d_kernel_grad(const BasicTensor<T>& input, const BasicTensor<T>& grad_out, std::int64_t k);
/// Swaps the two channel axes of a kernel and rotates it by 180 degrees.
template <class T> BasicTensor<T> flip_transpose(const BasicTensor<T>& kernel);

/// Nearest-neighbour 2x upsampling of the last two axes.
template <class T> BasicTensor<T> up2(const BasicTensor<T>& a);
/// 2x2 mean pooling of the last two axes; both must be even.
template <class T> BasicTensor<T> down2(const BasicTensor<T>& a);

inline constexpr double kPixelNormEps = 1e-8;
inline constexpr double kStddevEps = 1e-8;

/// a / sqrt(mean over channels of a^2 + eps), per pixel.
template <class T> BasicTensor<T> pixelnorm(const BasicTensor<T>& a, double eps = kPixelNormEps);
/// Appends one feature map holding the mean over (C,H,W) of the population
/// standard deviation across the batch.
template <class T> BasicTensor<T> minibatch_stddev(const BasicTensor<T>& a);
/// (1 - alpha) * a + alpha * b.
template <class T> BasicTensor<T> lerp(const BasicTensor<T>& a, const BasicTensor<T>& b, double alpha);

/// Mean softmax cross-entropy of logits [N,K] against class ids.
/// First-order differentiable only.
template <class T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

}  // namespace progan::ops
