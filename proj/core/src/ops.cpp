#include "wfuse/ops.hpp"

#include <cmath>

#include "autodiff_util.hpp"

namespace wfuse {

using detail::record;
using detail::require_same_shape;

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  visit_dtype(a.dtype(), [&]<class T>(T) {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  });
  if (detail::should_record({&a, &b})) {
    record("add", {a, b}, out, [a, b](const Tensor& g) {
      visit_dtype(g.dtype(), [&]<class T>(T) {
        auto gd = g.data<T>();
        for (const Tensor* t : {&a, &b}) {
          if (!t->requires_grad()) continue;
          auto gt = t->grad_data<T>();
          for (std::size_t i = 0; i < gd.size(); ++i) gt[i] += gd[i];
        }
      });
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  visit_dtype(a.dtype(), [&]<class T>(T) {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  });
  if (detail::should_record({&a, &b})) {
    record("sub", {a, b}, out, [a, b](const Tensor& g) {
      visit_dtype(g.dtype(), [&]<class T>(T) {
        auto gd = g.data<T>();
        if (a.requires_grad()) {
          auto ga = a.grad_data<T>();
          for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i];
        }
        if (b.requires_grad()) {
          auto gb = b.grad_data<T>();
          for (std::size_t i = 0; i < gd.size(); ++i) gb[i] -= gd[i];
        }
      });
    });
  }
  return out;
}

Tensor mul_elementwise(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul_elementwise");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  visit_dtype(a.dtype(), [&]<class T>(T) {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  });
  if (detail::should_record({&a, &b})) {
    record("mul_elementwise", {a, b}, out, [a, b](const Tensor& g) {
      visit_dtype(g.dtype(), [&]<class T>(T) {
        auto gd = g.data<T>();
        auto x = a.data<T>();
        auto y = b.data<T>();
        if (a.requires_grad()) {
          auto ga = a.grad_data<T>();
          for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i] * y[i];
        }
        if (b.requires_grad()) {
          auto gb = b.grad_data<T>();
          for (std::size_t i = 0; i < gd.size(); ++i) gb[i] += gd[i] * x[i];
        }
      });
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  visit_dtype(x.dtype(), [&]<class T>(T) {
    const T s = static_cast<T>(c);
    auto xd = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[i] * s;
  });
  if (detail::should_record({&x})) {
    record("mul_scalar", {x}, out, [x, c](const Tensor& g) {
      visit_dtype(g.dtype(), [&]<class T>(T) {
        const T s = static_cast<T>(c);
        auto gd = g.data<T>();
        auto gx = x.grad_data<T>();
        for (std::size_t i = 0; i < gd.size(); ++i) gx[i] += gd[i] * s;
      });
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& x, const Tensor& c) {
  if (c.numel() != 1) throw ShapeError("mul_scalar: scalar operand has shape " + shape_str(c.shape()));
  if (c.dtype() != x.dtype()) throw ShapeError("mul_scalar: dtype mismatch");
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  visit_dtype(x.dtype(), [&]<class T>(T) {
    const T s = c.data<T>()[0];
    auto xd = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[i] * s;
  });
  if (detail::should_record({&x, &c})) {
    record("mul_scalar", {x, c}, out, [x, c](const Tensor& g) {
      visit_dtype(g.dtype(), [&]<class T>(T) {
        auto gd = g.data<T>();
        auto xd = x.data<T>();
        const T s = c.data<T>()[0];
        if (x.requires_grad()) {
          auto gx = x.grad_data<T>();
          for (std::size_t i = 0; i < gd.size(); ++i) gx[i] += gd[i] * s;
        }
        if (c.requires_grad()) {
          double acc = 0.0;
          for (std::size_t i = 0; i < gd.size(); ++i)
            acc += static_cast<double>(gd[i]) * static_cast<double>(xd[i]);
          c.grad_data<T>()[0] += static_cast<T>(acc);
        }
      });
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  visit_dtype(x.dtype(), [&]<class T>(T) {
    const T s = static_cast<T>(c);
    auto xd = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[i] + s;
  });
  if (detail::should_record({&x})) {
    record("add_scalar", {x}, out, [x](const Tensor& g) {
      visit_dtype(g.dtype(), [&]<class T>(T) {
        auto gd = g.data<T>();
        auto gx = x.grad_data<T>();
        for (std::size_t i = 0; i < gd.size(); ++i) gx[i] += gd[i];
      });
    });
  }
  return out;
}

namespace {

Tensor reduce_sum(const Tensor& x, double scale, const char* op) {
  Tensor out = Tensor::zeros({1}, x.dtype());
  visit_dtype(x.dtype(), [&]<class T>(T) {
    double acc = 0.0;
    for (T v : x.data<T>()) acc += static_cast<double>(v);
    out.mutable_data<T>()[0] = static_cast<T>(acc * scale);
  });
  if (detail::should_record({&x})) {
    record(op, {x}, out, [x, scale](const Tensor& g) {
      visit_dtype(g.dtype(), [&]<class T>(T) {
        const T gv = static_cast<T>(static_cast<double>(g.data<T>()[0]) * scale);
        for (auto& v : x.grad_data<T>()) v += gv;
      });
    });
  }
  return out;
}

}  // namespace

Tensor sum(const Tensor& x) { return reduce_sum(x, 1.0, "sum"); }

Tensor mean(const Tensor& x) { return reduce_sum(x, 1.0 / static_cast<double>(x.numel()), "mean"); }

namespace {

struct ChannelLayout {
  std::int64_t outer = 1;  // batch
  std::int64_t channels = 0;
  std::int64_t inner = 1;  // spatial
};

ChannelLayout channel_layout(const Tensor& t, const char* op) {
  if (t.rank() < 2) throw ShapeError(std::string(op) + ": expected rank >= 2, got " + shape_str(t.shape()));
  ChannelLayout l;
  l.outer = t.dim(0);
  l.channels = t.dim(1);
  for (std::size_t i = 2; i < t.rank(); ++i) l.inner *= t.dim(i);
  return l;
}

}  // namespace

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ArityError("concat_channels: empty input list");
  if (xs.size() == 1) return xs.front();
  const Tensor& first = xs.front();
  const auto base = channel_layout(first, "concat_channels");
  std::int64_t total_c = 0;
  for (const auto& x : xs) {
    const auto l = channel_layout(x, "concat_channels");
    bool ok = x.rank() == first.rank() && x.dtype() == first.dtype() && l.outer == base.outer;
    for (std::size_t i = 2; ok && i < x.rank(); ++i) ok = x.dim(i) == first.dim(i);
    if (!ok)
      throw ShapeError("concat_channels: incompatible shapes " + shape_str(first.shape()) + " and " +
                       shape_str(x.shape()));
    total_c += l.channels;
  }
  Shape out_shape = first.shape();
  out_shape[1] = total_c;
  Tensor out = Tensor::zeros(out_shape, first.dtype());
  const std::int64_t inner = base.inner;
  visit_dtype(first.dtype(), [&]<class T>(T) {
    auto o = out.mutable_data<T>();
    for (std::int64_t n = 0; n < base.outer; ++n) {
      std::int64_t c_off = 0;
      for (const auto& x : xs) {
        const std::int64_t c = x.dim(1);
        auto src = x.data<T>().subspan(static_cast<std::size_t>(n * c * inner),
                                       static_cast<std::size_t>(c * inner));
        std::copy(src.begin(), src.end(), o.begin() + (n * total_c + c_off) * inner);
        c_off += c;
      }
    }
  });
  if (detail::should_record(xs)) {
    record("concat_channels", xs, out, [xs, total_c, inner](const Tensor& g) {
      visit_dtype(g.dtype(), [&]<class T>(T) {
        auto gd = g.data<T>();
        const std::int64_t outer = g.dim(0);
        std::int64_t c_off = 0;
        for (const auto& x : xs) {
          const std::int64_t c = x.dim(1);
          if (x.requires_grad()) {
            auto gx = x.grad_data<T>();
            for (std::int64_t n = 0; n < outer; ++n) {
              const std::size_t src = static_cast<std::size_t>((n * total_c + c_off) * inner);
              const std::size_t dst = static_cast<std::size_t>(n * c * inner);
              for (std::int64_t i = 0; i < c * inner; ++i) gx[dst + i] += gd[src + i];
            }
          }
          c_off += c;
        }
      });
    });
  }
  return out;
}

Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t count) {
  const auto l = channel_layout(x, "slice_channels");
  if (begin < 0 || count < 1 || begin + count > l.channels)
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + std::to_string(l.channels) +
                     " channels");
  Shape out_shape = x.shape();
  out_shape[1] = count;
  Tensor out = Tensor::zeros(out_shape, x.dtype());
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto xd = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::int64_t n = 0; n < l.outer; ++n) {
      auto first = xd.begin() + (n * l.channels + begin) * l.inner;
      std::copy(first, first + count * l.inner, o.begin() + n * count * l.inner);
    }
  });
  if (detail::should_record({&x})) {
    record("slice_channels", {x}, out, [x, l, begin, count](const Tensor& g) {
      visit_dtype(g.dtype(), [&]<class T>(T) {
        auto gd = g.data<T>();
        auto gx = x.grad_data<T>();
        for (std::int64_t n = 0; n < l.outer; ++n) {
          const std::size_t dst = static_cast<std::size_t>((n * l.channels + begin) * l.inner);
          const std::size_t src = static_cast<std::size_t>(n * count * l.inner);
          for (std::int64_t i = 0; i < count * l.inner; ++i) gx[dst + i] += gd[src + i];
        }
      });
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto xd = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[i] > T(0) ? xd[i] : T(0);
  });
  if (detail::should_record({&x})) {
    record("relu", {x}, out, [x](const Tensor& g) {
      visit_dtype(g.dtype(), [&]<class T>(T) {
        auto gd = g.data<T>();
        auto xd = x.data<T>();
        auto gx = x.grad_data<T>();
        // derivative at 0 is 0
        for (std::size_t i = 0; i < gd.size(); ++i)
          if (xd[i] > T(0)) gx[i] += gd[i];
      });
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto xd = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) {
      const T v = xd[i];
      if (v >= T(0)) {
        o[i] = T(1) / (T(1) + std::exp(-v));
      } else {
        const T e = std::exp(v);
        o[i] = e / (T(1) + e);
      }
    }
  });
  if (detail::should_record({&x})) {
    record("sigmoid", {x}, out, [x, out](const Tensor& g) {
      visit_dtype(g.dtype(), [&]<class T>(T) {
        auto gd = g.data<T>();
        auto s = out.data<T>();
        auto gx = x.grad_data<T>();
        for (std::size_t i = 0; i < gd.size(); ++i) gx[i] += gd[i] * s[i] * (T(1) - s[i]);
      });
    });
  }
  return out;
}

Tensor channel_scale(const Tensor& x, const Tensor& w) {
  const auto l = channel_layout(x, "channel_scale");
  if (w.numel() != static_cast<std::size_t>(l.channels))
    throw ShapeError("channel_scale: " + std::to_string(w.numel()) + " weights for " +
                     std::to_string(l.channels) + " channels");
  if (w.dtype() != x.dtype()) throw ShapeError("channel_scale: dtype mismatch");
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto xd = x.data<T>();
    auto wd = w.data<T>();
    auto o = out.mutable_data<T>();
    for (std::int64_t n = 0; n < l.outer; ++n)
      for (std::int64_t c = 0; c < l.channels; ++c) {
        const std::size_t base = static_cast<std::size_t>((n * l.channels + c) * l.inner);
        for (std::int64_t i = 0; i < l.inner; ++i) o[base + i] = xd[base + i] * wd[c];
      }
  });
  if (detail::should_record({&x, &w})) {
    record("channel_scale", {x, w}, out, [x, w, l](const Tensor& g) {
      visit_dtype(g.dtype(), [&]<class T>(T) {
        auto gd = g.data<T>();
        auto xd = x.data<T>();
        auto wd = w.data<T>();
        if (x.requires_grad()) {
          auto gx = x.grad_data<T>();
          for (std::int64_t n = 0; n < l.outer; ++n)
            for (std::int64_t c = 0; c < l.channels; ++c) {
              const std::size_t base = static_cast<std::size_t>((n * l.channels + c) * l.inner);
              for (std::int64_t i = 0; i < l.inner; ++i) gx[base + i] += gd[base + i] * wd[c];
            }
        }
        if (w.requires_grad()) {
          auto gw = w.grad_data<T>();
          for (std::int64_t c = 0; c < l.channels; ++c) {
            double acc = 0.0;
            for (std::int64_t n = 0; n < l.outer; ++n) {
              const std::size_t base = static_cast<std::size_t>((n * l.channels + c) * l.inner);
              for (std::int64_t i = 0; i < l.inner; ++i)
                acc += static_cast<double>(gd[base + i]) * static_cast<double>(xd[base + i]);
            }
            gw[c] += static_cast<T>(acc);
          }
        }
      });
    });
  }
  return out;
}

}  // namespace wfuse
