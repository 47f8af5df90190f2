#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "wfuse/error.hpp"

namespace wfuse {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

const char* dtype_name(DType d);

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

// Calls f(T{}) with T = float or double according to d.
template <class F>
decltype(auto) visit_dtype(DType d, F&& f) {
  if (d == DType::f64) return f(double{});
  return f(float{});
}

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Initializer for create().
struct Init {
  enum class Kind { zeros, ones, constant, normal };
  Kind kind = Kind::zeros;
  double value = 0.0;  // constant value, or mean for normal
  double stddev = 0.0;
  std::uint64_t seed = 0;

  static Init zeros() { return {}; }
  static Init ones() { return {Kind::ones, 1.0, 0.0, 0}; }
  static Init constant(double c) { return {Kind::constant, c, 0.0, 0}; }
  static Init normal(double mean, double stddev, std::uint64_t seed) {
    return {Kind::normal, mean, stddev, seed};
  }
};

namespace detail {

using Storage = std::variant<std::vector<float>, std::vector<double>>;

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f32;
  Storage data;
  std::shared_ptr<TensorImpl> grad;
  bool requires_grad = false;
};

}  // namespace detail

// Shared handle to a dense row-major array. Copies of a Tensor alias the same
// storage; use clone() for a deep copy. Values produced by ops are never
// modified afterwards, the only in-place writers are kernels filling fresh
// outputs, the optimizer and the checkpoint loader.
class Tensor {
 public:
  Tensor() = default;

  // Zero-filled tensor of the given shape. Throws ShapeError on extents < 1.
  static Tensor zeros(const Shape& shape, DType dtype = DType::f32);
  static Tensor from_values(const Shape& shape, std::span<const double> values,
                            DType dtype = DType::f32);
  static Tensor from_values(const Shape& shape, std::initializer_list<double> values,
                            DType dtype = DType::f32);
  static Tensor scalar(double v, DType dtype = DType::f32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::int64_t dim(std::size_t i) const { return impl().shape.at(i); }
  std::size_t rank() const { return impl().shape.size(); }
  std::size_t numel() const;
  DType dtype() const { return impl().dtype; }

  template <class T>
  std::span<const T> data() const {
    return std::get<std::vector<T>>(checked<T>().data);
  }
  template <class T>
  std::span<T> mutable_data() const {
    return std::get<std::vector<T>>(checked<T>().data);
  }

  double at(std::size_t flat_index) const;
  double item() const;
  std::vector<double> to_vector() const;

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return impl().grad != nullptr; }
  // Gradient buffer as a Tensor aliasing it. Throws ContractError when absent.
  Tensor grad() const;
  // Gradient storage, allocated zero-filled on first access.
  template <class T>
  std::span<T> grad_data() const {
    ensure_grad();
    return std::get<std::vector<T>>(impl_->grad->data);
  }
  void zero_grad() const;
  void clear_grad() const;

  Tensor clone() const;
  Tensor to(DType dtype) const;
  // True when both handles alias the same storage.
  bool same(const Tensor& other) const { return impl_ == other.impl_; }
  const void* id() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  const detail::TensorImpl& impl() const;
  template <class T>
  detail::TensorImpl& checked() const {
    if (!impl_) throw ContractError("access to undefined tensor");
    if (impl_->dtype != dtype_of<T>())
      throw ContractError(std::string("dtype mismatch: tensor is ") + dtype_name(impl_->dtype));
    return *impl_;
  }
  void ensure_grad() const;

  std::shared_ptr<detail::TensorImpl> impl_;
};

// Deterministic tensor construction. Normal init draws from Rng(seed) in
// row-major order.
Tensor create(const Shape& shape, DType dtype, const Init& init);

bool all_finite(const Tensor& t);
// Maximum absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);
// True when dtype, shape and every stored bit agree.
bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace wfuse
