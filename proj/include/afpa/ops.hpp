#pragma once

// Differentiable primitives. Shapes must match exactly; the only broadcast is
// scalar-with-tensor through scale()/add_scalar().

#include <cstddef>
#include <vector>

#include "afpa/tensor.hpp"

namespace afpa::ops {

// [p x q] * [q x r] -> [p x r]
Tensor matmul(const Tensor& a, const Tensor& b);
// 2-D transpose.
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Row-wise softmax of a 2-D tensor, max-subtracted. Non-finite input throws NumericError.
Tensor softmax_rows(const Tensor& a);

Tensor leaky_relu(const Tensor& a, double slope);

// Normalizes a 2-D tensor along `axis` (0: each column over rows, 1: each row
// over columns), then applies gamma/beta indexed along that same axis.
// gamma/beta may be undefined for the bare normalization.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t axis, double eps = 1e-5);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Elements [begin, end) along `axis`.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& a, Shape shape);

// Mean over one axis of a 2-D tensor; the reduced axis is dropped.
Tensor mean_pool(const Tensor& a, std::size_t axis);
// [C x H x W] -> [C]
Tensor global_avg_pool(const Tensor& x);

// x [in], W [out x in], b [out] or undefined -> [out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// x [C_in x L], w [C_out x C_in x k], bias [C_out] or undefined. Cross-correlation.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t padding);
// x [C_in x H x W], w [C_out x C_in x kh x kw]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t padding);
// x [C x H x W], w [C x kh x kw]: one filter per channel.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                        std::size_t padding);
// x [C_in x H x W], w [C_out x C_in]: 1x1 convolution.
Tensor pointwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias);

// Cross-entropy of a logit vector [C] against class `target`, log-sum-exp stabilized.
Tensor cross_entropy_with_logits(const Tensor& logits, std::size_t target);

// Divides a vector (rank 1) or every row of a matrix (rank 2) by max(L2 norm, eps).
Tensor l2_normalize(const Tensor& a, double eps = 1e-12);

// Crops trailing columns or repeats the last column so a 2-D tensor has exactly `width` columns.
Tensor fit_columns(const Tensor& a, std::size_t width);

// Additive angular margin on a cosine vector [C]. The target entry becomes
// s*cos(theta + m) (or the monotone fallback s*(cos(theta) - m*sin(m)*theta)
// once theta + m exceeds pi); every other entry becomes s*cos(theta).
// Cosines are clamped to [-1+1e-7, 1-1e-7] before arccos.
Tensor arc_margin(const Tensor& cosines, std::size_t target, double margin, double scale);

}  // namespace afpa::ops
