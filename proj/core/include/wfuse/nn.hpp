#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "wfuse/tensor.hpp"

namespace wfuse {

// Integer class map, N x H x W, row-major.
struct Labels {
  std::int64_t n = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::int32_t> values;

  std::size_t size() const { return values.size(); }
};

struct Conv2dParams {
  Tensor weight;  // O x I x KH x KW
  std::optional<Tensor> bias;  // O
  int stride = 1;
  int padding = 0;
};

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, int stride,
                                    int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

// 2-D cross-correlation (no kernel flip), NCHW in and out.
Tensor conv2d(const Tensor& x, const Conv2dParams& p);

enum class Mode { training, inference };

struct BatchNormParams {
  Tensor weight;  // W_BN, C
  Tensor bias;    // C
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;
};

BatchNormParams make_batch_norm(std::int64_t channels, DType dtype, const Init& weight_init);

// Training mode standardizes with the biased batch variance and updates the
// running statistics (running_var uses the unbiased estimate). Inference mode
// uses the running statistics. Throws DataError in training mode when a
// channel has a single value (N * H * W == 1).
Tensor batch_norm2d(const Tensor& x, BatchNormParams& p, Mode mode);

// Bilinear resampling with half-pixel centers (align_corners = false):
// src = (dst + 0.5) * in / out - 0.5, clamped at the lower border.
Tensor bilinear_resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w);
Tensor bilinear_upsample(const Tensor& x, int scale = 2);

// Mean over pixels of -log softmax(logits)[label]. logits N x K x H x W.
Tensor cross_entropy(const Tensor& logits, const Labels& labels);

// Per-pixel argmax over the class axis of N x K x H x W logits.
Labels argmax_classes(const Tensor& logits);

// Multiply-accumulate tally. While a MacCounter is alive on a thread every
// forward kernel adds its cost:
//   conv2d           N * O * Ho * Wo * I * KH * KW  (+ N * O * Ho * Wo with bias)
//   batch_norm2d     N * C * H * W   (one fused scale-and-shift per element)
//   bilinear_resize  4 * N * C * Ho * Wo  (four taps per output element)
// Elementwise activations, additions and concatenation are free.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t total() const { return total_; }
  static void add(std::uint64_t macs);

 private:
  std::uint64_t total_ = 0;
  MacCounter* previous_;
};

}  // namespace wfuse
