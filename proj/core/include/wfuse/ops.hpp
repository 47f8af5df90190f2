#pragma once

#include <vector>

#include "wfuse/tensor.hpp"

namespace wfuse {

// Elementwise arithmetic. Both operands must share shape and dtype.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul_elementwise(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& x, double c);
// c is a single-element tensor; gradients flow into it when it requires one.
Tensor mul_scalar(const Tensor& x, const Tensor& c);
Tensor add_scalar(const Tensor& x, double c);

// Sum / mean of all elements, shape {1}. Accumulated in double, in order.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Concatenate NCHW tensors along the channel axis, preserving order.
Tensor concat_channels(const std::vector<Tensor>& xs);
// Channels [begin, begin + count) of an NCHW tensor.
Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t count);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Per-channel broadcast multiply: y[n,c,...] = w[c] * x[n,c,...].
Tensor channel_scale(const Tensor& x, const Tensor& w);

}  // namespace wfuse
