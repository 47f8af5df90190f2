#include "wfuse/nn.hpp"

#include <cmath>
#include <limits>

#include "autodiff_util.hpp"
#include "gemm.hpp"
#include "wfuse/parallel.hpp"

namespace wfuse {

using detail::record;

namespace {

thread_local MacCounter* g_counter = nullptr;

struct ConvGeometry {
  std::int64_t n, cin, h, w;
  std::int64_t cout, kh, kw;
  std::int64_t ho, wo;
  int stride, pad;

  std::int64_t kc() const { return cin * kh * kw; }
  std::int64_t p() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// col[kc x P]: row (ci, ky, kx), column (oy, ox).
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const std::int64_t P = g.p();
  for (std::int64_t ci = 0; ci < g.cin; ++ci)
    for (std::int64_t ky = 0; ky < g.kh; ++ky)
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((ci * g.kh + ky) * g.kw + kx) * P;
        const T* plane = x + ci * g.h * g.w;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = plane + iy * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
}

// Adds col[kc x P] back into the image layout.
template <class T>
void col2im(const ConvGeometry& g, const T* col, T* dx) {
  const std::int64_t P = g.p();
  parallel_for(static_cast<std::size_t>(g.cin), 1, [&](std::size_t c0, std::size_t c1) {
    for (std::int64_t ci = static_cast<std::int64_t>(c0); ci < static_cast<std::int64_t>(c1); ++ci)
      for (std::int64_t ky = 0; ky < g.kh; ++ky)
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          const T* row = col + ((ci * g.kh + ky) * g.kw + kx) * P;
          T* plane = dx + ci * g.h * g.w;
          for (std::int64_t oy = 0; oy < g.ho; ++oy) {
            const std::int64_t iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            const T* src = row + oy * g.wo;
            T* dst = plane + iy * g.w;
            for (std::int64_t ox = 0; ox < g.wo; ++ox) {
              const std::int64_t ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
            }
          }
        }
  });
}

template <class T>
void transpose(const T* src, std::int64_t rows, std::int64_t cols, T* dst) {
  constexpr std::int64_t B = 32;
  for (std::int64_t r0 = 0; r0 < rows; r0 += B)
    for (std::int64_t c0 = 0; c0 < cols; c0 += B) {
      const std::int64_t r1 = std::min(rows, r0 + B);
      const std::int64_t c1 = std::min(cols, c0 + B);
      for (std::int64_t r = r0; r < r1; ++r)
        for (std::int64_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
    }
}

ConvGeometry conv_geometry(const Tensor& x, const Conv2dParams& p) {
  detail::require_rank(x, 4, "conv2d");
  detail::require_rank(p.weight, 4, "conv2d weight");
  if (p.stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (p.padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  if (x.dtype() != p.weight.dtype()) throw ShapeError("conv2d: dtype mismatch between input and weight");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), p.weight.dim(0), p.weight.dim(2),
                 p.weight.dim(3), 0, 0, p.stride, p.padding};
  if (p.weight.dim(1) != g.cin)
    throw ShapeError("conv2d: input has " + std::to_string(g.cin) + " channels, weight " +
                     shape_str(p.weight.shape()) + " expects " + std::to_string(p.weight.dim(1)));
  g.ho = conv_out_extent(g.h, g.kh, g.stride, g.pad);
  g.wo = conv_out_extent(g.w, g.kw, g.stride, g.pad);
  if (g.ho < 1 || g.wo < 1)
    throw ShapeError("conv2d: kernel " + shape_str(p.weight.shape()) + " does not fit input " +
                     shape_str(x.shape()));
  if (p.bias) {
    if (p.bias->numel() != static_cast<std::size_t>(g.cout))
      throw ShapeError("conv2d: bias has " + std::to_string(p.bias->numel()) + " entries for " +
                       std::to_string(g.cout) + " output channels");
    if (p.bias->dtype() != x.dtype()) throw ShapeError("conv2d: bias dtype mismatch");
  }
  return g;
}

}  // namespace

MacCounter::MacCounter() : previous_(g_counter) { g_counter = this; }

MacCounter::~MacCounter() { g_counter = previous_; }

void MacCounter::add(std::uint64_t macs) {
  if (g_counter) g_counter->total_ += macs;
}

Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
  const ConvGeometry g = conv_geometry(x, p);
  const std::int64_t P = g.p();
  const std::int64_t KC = g.kc();
  Tensor out = Tensor::zeros({g.n, g.cout, g.ho, g.wo}, x.dtype());
  MacCounter::add(static_cast<std::uint64_t>(g.n * g.cout * P * KC + (p.bias ? g.n * g.cout * P : 0)));

  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto xd = x.data<T>();
    auto wd = p.weight.data<T>();
    auto od = out.mutable_data<T>();
    std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(KC * P));
    for (std::int64_t n = 0; n < g.n; ++n) {
      const T* xn = xd.data() + n * g.cin * g.h * g.w;
      T* on = od.data() + n * g.cout * P;
      const T* b = xn;
      if (!g.pointwise()) {
        im2col(g, xn, col.data());
        b = col.data();
      }
      if (p.bias) {
        auto bd = p.bias->data<T>();
        for (std::int64_t o = 0; o < g.cout; ++o) std::fill(on + o * P, on + (o + 1) * P, bd[o]);
      }
      detail::gemm_nn<T>(g.cout, P, KC, wd.data(), KC, b, P, on, P, p.bias.has_value());
    }
  });

  std::vector<Tensor> inputs{x, p.weight};
  if (p.bias) inputs.push_back(*p.bias);
  if (detail::should_record(inputs)) {
    record("conv2d", inputs, out, [x, p, g](const Tensor& grad) {
      visit_dtype(grad.dtype(), [&]<class T>(T) {
        const std::int64_t P = g.p();
        const std::int64_t KC = g.kc();
        auto gd = grad.data<T>();
        auto xd = x.data<T>();
        auto wd = p.weight.data<T>();
        if (x.requires_grad()) {
          std::vector<T> wt(static_cast<std::size_t>(KC * g.cout));
          transpose(wd.data(), g.cout, KC, wt.data());
          auto gx = x.grad_data<T>();
          std::vector<T> dcol(g.pointwise() ? 0 : static_cast<std::size_t>(KC * P));
          for (std::int64_t n = 0; n < g.n; ++n) {
            const T* gn = gd.data() + n * g.cout * P;
            T* dxn = gx.data() + n * g.cin * g.h * g.w;
            if (g.pointwise()) {
              detail::gemm_nn<T>(KC, P, g.cout, wt.data(), g.cout, gn, P, dxn, P, true);
            } else {
              detail::gemm_nn<T>(KC, P, g.cout, wt.data(), g.cout, gn, P, dcol.data(), P, false);
              col2im(g, dcol.data(), dxn);
            }
          }
        }
        if (p.weight.requires_grad()) {
          auto gw = p.weight.grad_data<T>();
          std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(KC * P));
          std::vector<T> colt(static_cast<std::size_t>(KC * P));
          for (std::int64_t n = 0; n < g.n; ++n) {
            const T* xn = xd.data() + n * g.cin * g.h * g.w;
            const T* src = xn;
            if (!g.pointwise()) {
              im2col(g, xn, col.data());
              src = col.data();
            }
            transpose(src, KC, P, colt.data());
            detail::gemm_nn<T>(g.cout, KC, P, gd.data() + n * g.cout * P, P, colt.data(), KC,
                               gw.data(), KC, true);
          }
        }
        if (p.bias && p.bias->requires_grad()) {
          auto gb = p.bias->grad_data<T>();
          for (std::int64_t o = 0; o < g.cout; ++o) {
            double acc = 0.0;
            for (std::int64_t n = 0; n < g.n; ++n) {
              const T* row = gd.data() + (n * g.cout + o) * P;
              for (std::int64_t i = 0; i < P; ++i) acc += static_cast<double>(row[i]);
            }
            gb[o] += static_cast<T>(acc);
          }
        }
      });
    });
  }
  return out;
}

BatchNormParams make_batch_norm(std::int64_t channels, DType dtype, const Init& weight_init) {
  BatchNormParams p;
  p.weight = create({channels}, dtype, weight_init);
  p.bias = create({channels}, dtype, Init::zeros());
  p.running_mean = create({channels}, dtype, Init::zeros());
  p.running_var = create({channels}, dtype, Init::ones());
  return p;
}

Tensor batch_norm2d(const Tensor& x, BatchNormParams& p, Mode mode) {
  detail::require_rank(x, 4, "batch_norm2d");
  const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  for (const Tensor* t : {&p.weight, &p.bias, &p.running_mean, &p.running_var}) {
    if (t->numel() != static_cast<std::size_t>(C))
      throw ShapeError("batch_norm2d: parameter of " + std::to_string(t->numel()) + " entries for " +
                       std::to_string(C) + " channels");
    if (t->dtype() != x.dtype()) throw ShapeError("batch_norm2d: dtype mismatch");
  }
  const std::int64_t m = N * HW;
  const bool training = mode == Mode::training;
  if (training && m < 2)
    throw DataError("batch_norm2d: training-mode statistics need more than one value per channel, got " +
                    shape_str(x.shape()));
  MacCounter::add(static_cast<std::uint64_t>(N * C * HW));

  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  auto mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C));
  auto invstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C));
  const double eps = p.eps;
  const double momentum = p.momentum;

  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto xd = x.data<T>();
    auto od = out.mutable_data<T>();
    auto wd = p.weight.data<T>();
    auto bd = p.bias.data<T>();
    auto rm = p.running_mean.mutable_data<T>();
    auto rv = p.running_var.mutable_data<T>();
    parallel_for(static_cast<std::size_t>(C), 1, [&](std::size_t c0, std::size_t c1) {
      for (std::int64_t c = static_cast<std::int64_t>(c0); c < static_cast<std::int64_t>(c1); ++c) {
        double mu, var;
        if (training) {
          double s = 0.0;
          for (std::int64_t n = 0; n < N; ++n) {
            const T* row = xd.data() + (n * C + c) * HW;
            for (std::int64_t i = 0; i < HW; ++i) s += static_cast<double>(row[i]);
          }
          mu = s / static_cast<double>(m);
          double ss = 0.0;
          for (std::int64_t n = 0; n < N; ++n) {
            const T* row = xd.data() + (n * C + c) * HW;
            for (std::int64_t i = 0; i < HW; ++i) {
              const double d = static_cast<double>(row[i]) - mu;
              ss += d * d;
            }
          }
          var = ss / static_cast<double>(m);
          const double unbiased = ss / static_cast<double>(m - 1);
          rm[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(rm[c]) + momentum * mu);
          rv[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(rv[c]) + momentum * unbiased);
        } else {
          mu = static_cast<double>(rm[c]);
          var = static_cast<double>(rv[c]);
        }
        const double is = 1.0 / std::sqrt(var + eps);
        (*mean)[c] = mu;
        (*invstd)[c] = is;
        const double w = static_cast<double>(wd[c]);
        const double b = static_cast<double>(bd[c]);
        for (std::int64_t n = 0; n < N; ++n) {
          const T* row = xd.data() + (n * C + c) * HW;
          T* orow = od.data() + (n * C + c) * HW;
          for (std::int64_t i = 0; i < HW; ++i)
            orow[i] = static_cast<T>((static_cast<double>(row[i]) - mu) * is * w + b);
        }
      }
    });
  });

  Tensor weight = p.weight;
  Tensor bias = p.bias;
  if (detail::should_record({&x, &weight, &bias})) {
    record("batch_norm2d", {x, weight, bias}, out,
           [x, weight, bias, mean, invstd, training, N, C, HW, m](const Tensor& grad) {
             visit_dtype(grad.dtype(), [&]<class T>(T) {
               auto gd = grad.data<T>();
               auto xd = x.data<T>();
               auto wd = weight.data<T>();
               std::span<T> gx, gw, gb;
               if (x.requires_grad()) gx = x.grad_data<T>();
               if (weight.requires_grad()) gw = weight.grad_data<T>();
               if (bias.requires_grad()) gb = bias.grad_data<T>();
               parallel_for(static_cast<std::size_t>(C), 1, [&](std::size_t c0, std::size_t c1) {
                 for (std::int64_t c = static_cast<std::int64_t>(c0); c < static_cast<std::int64_t>(c1);
                      ++c) {
                   const double mu = (*mean)[c];
                   const double is = (*invstd)[c];
                   double sum_g = 0.0, sum_gx = 0.0;
                   for (std::int64_t n = 0; n < N; ++n) {
                     const T* row = xd.data() + (n * C + c) * HW;
                     const T* grow = gd.data() + (n * C + c) * HW;
                     for (std::int64_t i = 0; i < HW; ++i) {
                       const double g = static_cast<double>(grow[i]);
                       sum_g += g;
                       sum_gx += g * (static_cast<double>(row[i]) - mu) * is;
                     }
                   }
                   if (!gw.empty()) gw[c] += static_cast<T>(sum_gx);
                   if (!gb.empty()) gb[c] += static_cast<T>(sum_g);
                   if (gx.empty()) continue;
                   const double w = static_cast<double>(wd[c]);
                   const double md = static_cast<double>(m);
                   for (std::int64_t n = 0; n < N; ++n) {
                     const T* row = xd.data() + (n * C + c) * HW;
                     const T* grow = gd.data() + (n * C + c) * HW;
                     T* dx = gx.data() + (n * C + c) * HW;
                     for (std::int64_t i = 0; i < HW; ++i) {
                       const double g = static_cast<double>(grow[i]);
                       if (training) {
                         const double xhat = (static_cast<double>(row[i]) - mu) * is;
                         dx[i] += static_cast<T>(w * is * (g - sum_g / md - xhat * sum_gx / md));
                       } else {
                         dx[i] += static_cast<T>(w * is * g);
                       }
                     }
                   }
                 }
               });
             });
           });
  }
  return out;
}

namespace {

struct AxisTaps {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> frac;
};

AxisTaps axis_taps(std::int64_t in, std::int64_t out) {
  AxisTaps t;
  t.i0.resize(static_cast<std::size_t>(out));
  t.i1.resize(static_cast<std::size_t>(out));
  t.frac.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    std::int64_t i0 = static_cast<std::int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    t.i0[o] = i0;
    t.i1[o] = i1;
    t.frac[o] = i1 == i0 ? 0.0 : src - static_cast<double>(i0);
  }
  return t;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  detail::require_rank(x, 4, "bilinear_resize");
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: output extents must be >= 1");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (out_h == H && out_w == W) return x;
  MacCounter::add(static_cast<std::uint64_t>(4 * N * C * out_h * out_w));
  const auto ty = std::make_shared<AxisTaps>(axis_taps(H, out_h));
  const auto tx = std::make_shared<AxisTaps>(axis_taps(W, out_w));
  Tensor out = Tensor::zeros({N, C, out_h, out_w}, x.dtype());
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto xd = x.data<T>();
    auto od = out.mutable_data<T>();
    for (std::int64_t plane = 0; plane < N * C; ++plane) {
      const T* src = xd.data() + plane * H * W;
      T* dst = od.data() + plane * out_h * out_w;
      for (std::int64_t oy = 0; oy < out_h; ++oy) {
        const T* r0 = src + ty->i0[oy] * W;
        const T* r1 = src + ty->i1[oy] * W;
        const T fy = static_cast<T>(ty->frac[oy]);
        for (std::int64_t ox = 0; ox < out_w; ++ox) {
          const std::int64_t a = tx->i0[ox], b = tx->i1[ox];
          const T fx = static_cast<T>(tx->frac[ox]);
          const T top = r0[a] + fx * (r0[b] - r0[a]);
          const T bot = r1[a] + fx * (r1[b] - r1[a]);
          dst[oy * out_w + ox] = top + fy * (bot - top);
        }
      }
    }
  });
  if (detail::should_record({&x})) {
    record("bilinear_resize", {x}, out, [x, ty, tx, N, C, H, W, out_h, out_w](const Tensor& grad) {
      visit_dtype(grad.dtype(), [&]<class T>(T) {
        auto gd = grad.data<T>();
        auto gx = x.grad_data<T>();
        for (std::int64_t plane = 0; plane < N * C; ++plane) {
          const T* g = gd.data() + plane * out_h * out_w;
          T* dst = gx.data() + plane * H * W;
          for (std::int64_t oy = 0; oy < out_h; ++oy) {
            const std::int64_t y0 = ty->i0[oy], y1 = ty->i1[oy];
            const T fy = static_cast<T>(ty->frac[oy]);
            for (std::int64_t ox = 0; ox < out_w; ++ox) {
              const std::int64_t a = tx->i0[ox], b = tx->i1[ox];
              const T fx = static_cast<T>(tx->frac[ox]);
              const T v = g[oy * out_w + ox];
              dst[y0 * W + a] += v * (T(1) - fx) * (T(1) - fy);
              dst[y0 * W + b] += v * fx * (T(1) - fy);
              dst[y1 * W + a] += v * (T(1) - fx) * fy;
              dst[y1 * W + b] += v * fx * fy;
            }
          }
        }
      });
    });
  }
  return out;
}

Tensor bilinear_upsample(const Tensor& x, int scale) {
  detail::require_rank(x, 4, "bilinear_upsample");
  if (scale < 1) throw ShapeError("bilinear_upsample: scale must be >= 1");
  return bilinear_resize(x, x.dim(2) * scale, x.dim(3) * scale);
}

Tensor cross_entropy(const Tensor& logits, const Labels& labels) {
  detail::require_rank(logits, 4, "cross_entropy");
  const std::int64_t N = logits.dim(0), K = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  if (labels.n != N || labels.h != logits.dim(2) || labels.w != logits.dim(3) ||
      labels.values.size() != static_cast<std::size_t>(N * HW))
    throw ShapeError("cross_entropy: labels (" + std::to_string(labels.n) + "," + std::to_string(labels.h) +
                     "," + std::to_string(labels.w) + ") do not match logits " + shape_str(logits.shape()));
  for (std::size_t i = 0; i < labels.values.size(); ++i) {
    const auto v = labels.values[i];
    if (v < 0 || v >= K)
      throw DataError("cross_entropy: label " + std::to_string(v) + " at pixel " + std::to_string(i) +
                      " outside [0, " + std::to_string(K) + ")");
  }
  const double count = static_cast<double>(N * HW);
  Tensor out = Tensor::zeros({1}, logits.dtype());
  visit_dtype(logits.dtype(), [&]<class T>(T) {
    auto z = logits.data<T>();
    double total = 0.0;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t i = 0; i < HW; ++i) {
        const T* base = z.data() + n * K * HW + i;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(base[k * HW]));
        double s = 0.0;
        for (std::int64_t k = 0; k < K; ++k) s += std::exp(static_cast<double>(base[k * HW]) - mx);
        const auto label = labels.values[static_cast<std::size_t>(n * HW + i)];
        total += mx + std::log(s) - static_cast<double>(base[label * HW]);
      }
    out.mutable_data<T>()[0] = static_cast<T>(total / count);
  });
  if (detail::should_record({&logits})) {
    auto lab = std::make_shared<std::vector<std::int32_t>>(labels.values);
    record("cross_entropy", {logits}, out, [logits, lab, N, K, HW, count](const Tensor& grad) {
      visit_dtype(grad.dtype(), [&]<class T>(T) {
        const double g = static_cast<double>(grad.data<T>()[0]) / count;
        auto z = logits.data<T>();
        auto gz = logits.grad_data<T>();
        std::vector<double> e(static_cast<std::size_t>(K));
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t i = 0; i < HW; ++i) {
            const std::int64_t base = n * K * HW + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::int64_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(z[base + k * HW]));
            double s = 0.0;
            for (std::int64_t k = 0; k < K; ++k) {
              e[k] = std::exp(static_cast<double>(z[base + k * HW]) - mx);
              s += e[k];
            }
            const auto label = (*lab)[static_cast<std::size_t>(n * HW + i)];
            for (std::int64_t k = 0; k < K; ++k) {
              const double prob = e[k] / s - (k == label ? 1.0 : 0.0);
              gz[base + k * HW] += static_cast<T>(g * prob);
            }
          }
      });
    });
  }
  return out;
}

Labels argmax_classes(const Tensor& logits) {
  detail::require_rank(logits, 4, "argmax_classes");
  const std::int64_t N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  Labels out{N, H, W, std::vector<std::int32_t>(static_cast<std::size_t>(N * H * W))};
  visit_dtype(logits.dtype(), [&]<class T>(T) {
    auto z = logits.data<T>();
    const std::int64_t HW = H * W;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t i = 0; i < HW; ++i) {
        std::int32_t best = 0;
        T best_v = z[n * K * HW + i];
        for (std::int64_t k = 1; k < K; ++k) {
          const T v = z[(n * K + k) * HW + i];
          if (v > best_v) {
            best_v = v;
            best = static_cast<std::int32_t>(k);
          }
        }
        out.values[static_cast<std::size_t>(n * HW + i)] = best;
      }
  });
  return out;
}

}  // namespace wfuse
