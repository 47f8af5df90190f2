#pragma once

// Helpers shared by op implementations.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wfuse/tape.hpp"
#include "wfuse/tensor.hpp"

namespace wfuse::detail {

inline void record(const char* op, std::vector<Tensor> inputs, Tensor& out, Tape::BackwardFn fn) {
  out.set_requires_grad(true);
  Tape::current()->record(op, std::move(inputs), out, std::move(fn));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  if (a.dtype() != b.dtype())
    throw ShapeError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                     dtype_name(b.dtype()));
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
}

}  // namespace wfuse::detail
