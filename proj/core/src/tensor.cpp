#include "wfuse/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "wfuse/rng.hpp"

namespace wfuse {

const char* dtype_name(DType d) { return d == DType::f64 ? "real-64" : "real-32"; }

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= static_cast<std::size_t>(e);
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("invalid shape: rank 0");
  for (auto e : shape)
    if (e < 1) throw ShapeError("invalid shape " + shape_str(shape) + ": extents must be >= 1");
}

detail::Storage make_storage(DType dtype, std::size_t n) {
  if (dtype == DType::f64) return std::vector<double>(n, 0.0);
  return std::vector<float>(n, 0.0f);
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape, DType dtype) {
  check_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->dtype = dtype;
  impl->data = make_storage(dtype, shape_numel(shape));
  return Tensor(std::move(impl));
}

Tensor Tensor::from_values(const Shape& shape, std::span<const double> values, DType dtype) {
  Tensor t = zeros(shape, dtype);
  if (values.size() != t.numel())
    throw ShapeError("from_values: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  visit_dtype(dtype, [&]<class T>(T) {
    auto d = t.mutable_data<T>();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::initializer_list<double> values, DType dtype) {
  return from_values(shape, std::span<const double>(values.begin(), values.size()), dtype);
}

Tensor Tensor::scalar(double v, DType dtype) { return from_values({1}, {v}, dtype); }

const detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw ContractError("access to undefined tensor");
  return *impl_;
}

std::size_t Tensor::numel() const { return shape_numel(impl().shape); }

double Tensor::at(std::size_t i) const {
  return visit_dtype(dtype(), [&]<class T>(T) { return static_cast<double>(data<T>()[i]); });
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return at(0);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(numel());
  visit_dtype(dtype(), [&]<class T>(T) {
    auto d = data<T>();
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i];
  });
  return out;
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_) throw ContractError("set_requires_grad on undefined tensor");
  impl_->requires_grad = on;
  return *this;
}

void Tensor::ensure_grad() const {
  if (!impl_) throw ContractError("gradient of undefined tensor");
  if (!impl_->grad) {
    auto g = std::make_shared<detail::TensorImpl>();
    g->shape = impl_->shape;
    g->dtype = impl_->dtype;
    g->data = make_storage(impl_->dtype, numel());
    impl_->grad = std::move(g);
  }
}

Tensor Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return Tensor(impl_->grad);
}

void Tensor::zero_grad() const {
  ensure_grad();
  std::visit([](auto& v) { std::fill(v.begin(), v.end(), 0); }, impl_->grad->data);
}

void Tensor::clear_grad() const {
  if (impl_) impl_->grad.reset();
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = impl_->dtype;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return clone();
  Tensor out = zeros(shape(), target);
  visit_dtype(dtype(), [&]<class S>(S) {
    visit_dtype(target, [&]<class D>(D) {
      auto src = data<S>();
      auto dst = out.mutable_data<D>();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<D>(src[i]);
    });
  });
  return out;
}

Tensor create(const Shape& shape, DType dtype, const Init& init) {
  if (init.kind == Init::Kind::normal && !(init.stddev >= 0.0))
    throw ContractError("normal init requires stddev >= 0");
  Tensor t = Tensor::zeros(shape, dtype);
  visit_dtype(dtype, [&]<class T>(T) {
    auto d = t.mutable_data<T>();
    switch (init.kind) {
      case Init::Kind::zeros:
        break;
      case Init::Kind::ones:
        std::fill(d.begin(), d.end(), T(1));
        break;
      case Init::Kind::constant:
        std::fill(d.begin(), d.end(), static_cast<T>(init.value));
        break;
      case Init::Kind::normal: {
        Rng rng(init.seed);
        for (auto& v : d) v = static_cast<T>(rng.normal(init.value, init.stddev));
        break;
      }
    }
  });
  return t;
}

bool all_finite(const Tensor& t) {
  return visit_dtype(t.dtype(), [&]<class T>(T) {
    for (T v : t.data<T>())
      if (!std::isfinite(v)) return false;
    return true;
  });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype() || a.shape() != b.shape()) return false;
  return visit_dtype(a.dtype(), [&]<class T>(T) {
    auto x = a.data<T>();
    auto y = b.data<T>();
    return std::memcmp(x.data(), y.data(), x.size_bytes()) == 0;
  });
}

}  // namespace wfuse
