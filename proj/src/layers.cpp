#include "fusedet/layers.hpp"

#include <algorithm>
#include <cmath>

namespace fusedet {

namespace {

struct Span1 {
  std::size_t lo;
  std::size_t hi;  // exclusive
};

// Output positions o in [0, out_len) whose input index o*stride + offset - pad
// lands inside [0, in_len).
Span1 valid_outputs(std::size_t out_len, std::size_t in_len, std::size_t offset, std::size_t pad,
                    std::size_t stride) {
  std::size_t lo = 0;
  if (offset < pad) lo = (pad - offset + stride - 1) / stride;
  if (in_len + pad < offset + 1) return {0, 0};
  std::size_t hi = (in_len - 1 + pad - offset) / stride + 1;
  hi = std::min(hi, out_len);
  if (lo > hi) lo = hi;
  return {lo, hi};
}

// Flat index of input (iy, kx - pad); callers add ox * stride. May be negative
// for the first row, only indices of valid outputs are dereferenced.
std::ptrdiff_t row_base(std::size_t iy, std::size_t W, std::size_t kx, std::size_t pad) {
  return static_cast<std::ptrdiff_t>(iy * W + kx) - static_cast<std::ptrdiff_t>(pad);
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
}

void check_stride(std::size_t stride, const char* what) {
  if (stride != 1 && stride != 2)
    throw ShapeError(std::string(what) + ": stride must be 1 or 2, got " + std::to_string(stride));
}

}  // namespace

Shape conv2d_output_shape(const Shape& input, const Shape& kernels, std::size_t stride,
                          std::size_t pad) {
  if (input.size() != 3) throw ShapeError("conv2d: input must be [C,H,W], got " + shape_string(input));
  if (kernels.size() != 4)
    throw ShapeError("conv2d: kernels must be [F,C,kh,kw], got " + shape_string(kernels));
  if (input[0] != kernels[1])
    throw ShapeError("conv2d: input has " + std::to_string(input[0]) +
                     " channels but kernels expect " + std::to_string(kernels[1]) + " (input " +
                     shape_string(input) + ", kernels " + shape_string(kernels) + ")");
  check_stride(stride, "conv2d");
  const std::size_t H = input[1] + 2 * pad, W = input[2] + 2 * pad;
  if (H < kernels[2] || W < kernels[3])
    throw ShapeError("conv2d: padded input " + shape_string(input) + " smaller than kernel " +
                     shape_string(kernels));
  return {kernels[0], (H - kernels[2]) / stride + 1, (W - kernels[3]) / stride + 1};
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                      std::size_t stride, std::size_t pad, Conv2dCache* cache) {
  const Shape out_shape = conv2d_output_shape(input.shape(), kernels.shape(), stride, pad);
  if (bias.size() != kernels.dim(0))
    throw ShapeError("conv2d: bias " + shape_string(bias.shape()) + " does not match " +
                     std::to_string(kernels.dim(0)) + " filters");

  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t F = kernels.dim(0), KH = kernels.dim(2), KW = kernels.dim(3);
  const std::size_t OH = out_shape[1], OW = out_shape[2];

  Tensor out(out_shape);
  const double* in = input.data().data();
  const double* k = kernels.data().data();
  double* o = out.data().data();

  for (std::size_t f = 0; f < F; ++f) {
    double* oplane = o + f * OH * OW;
    std::fill(oplane, oplane + OH * OW, bias[f]);
    for (std::size_t c = 0; c < C; ++c) {
      const double* iplane = in + c * H * W;
      for (std::size_t ky = 0; ky < KH; ++ky) {
        const Span1 rows = valid_outputs(OH, H, ky, pad, stride);
        for (std::size_t kx = 0; kx < KW; ++kx) {
          const double w = k[((f * C + c) * KH + ky) * KW + kx];
          const Span1 cols = valid_outputs(OW, W, kx, pad, stride);
          for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
            const std::ptrdiff_t base = row_base(oy * stride + ky - pad, W, kx, pad);
            double* orow = oplane + oy * OW;
            if (stride == 1) {
              const double* irow = iplane + base + static_cast<std::ptrdiff_t>(cols.lo);
              double* optr = orow + cols.lo;
              for (std::size_t i = 0, n = cols.hi - cols.lo; i < n; ++i) optr[i] += w * irow[i];
            } else {
              for (std::size_t ox = cols.lo; ox < cols.hi; ++ox)
                orow[ox] += w * iplane[base + static_cast<std::ptrdiff_t>(ox * stride)];
            }
          }
        }
      }
    }
  }

  if (cache) *cache = Conv2dCache{input, kernels, stride, pad, out_shape};
  return out;
}

Conv2dGrads conv2d_backward(const Conv2dCache& cache, const Tensor& grad_out) {
  if (!cache.valid()) throw CacheError("conv2d_backward: cache was not filled by a forward pass");
  if (grad_out.shape() != cache.output_shape)
    throw CacheError("conv2d_backward: grad_out " + shape_string(grad_out.shape()) +
                     " does not match cached output " + shape_string(cache.output_shape));
  const Tensor& input = cache.input;
  const Tensor& kernels = cache.kernels;
  const std::size_t stride = cache.stride, pad = cache.pad;
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t F = kernels.dim(0), KH = kernels.dim(2), KW = kernels.dim(3);
  const std::size_t OH = grad_out.dim(1), OW = grad_out.dim(2);

  Conv2dGrads g{Tensor(input.shape()), Tensor(kernels.shape()), Tensor({F})};
  const double* in = input.data().data();
  const double* k = kernels.data().data();
  const double* go = grad_out.data().data();
  double* gi = g.input.data().data();
  double* gk = g.kernels.data().data();

  for (std::size_t f = 0; f < F; ++f) {
    const double* gplane = go + f * OH * OW;
    double sb = 0.0;
    for (std::size_t i = 0; i < OH * OW; ++i) sb += gplane[i];
    g.bias[f] = sb;
    for (std::size_t c = 0; c < C; ++c) {
      const double* iplane = in + c * H * W;
      double* giplane = gi + c * H * W;
      for (std::size_t ky = 0; ky < KH; ++ky) {
        const Span1 rows = valid_outputs(OH, H, ky, pad, stride);
        for (std::size_t kx = 0; kx < KW; ++kx) {
          const std::size_t widx = ((f * C + c) * KH + ky) * KW + kx;
          const double w = k[widx];
          const Span1 cols = valid_outputs(OW, W, kx, pad, stride);
          double sw = 0.0;
          for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
            const std::ptrdiff_t base = row_base(oy * stride + ky - pad, W, kx, pad);
            const double* grow = gplane + oy * OW;
            for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) {
              const std::ptrdiff_t idx = base + static_cast<std::ptrdiff_t>(ox * stride);
              sw += grow[ox] * iplane[idx];
              giplane[idx] += w * grow[ox];
            }
          }
          gk[widx] = sw;
        }
      }
    }
  }
  return g;
}

Tensor depthwise_conv2d_forward(const Tensor& input, const Tensor& kernels, std::size_t stride,
                                std::size_t pad) {
  require_rank(input, 3, "depthwise_conv2d");
  require_rank(kernels, 3, "depthwise_conv2d");
  if (kernels.dim(0) != input.dim(0))
    throw ShapeError("depthwise_conv2d: input has " + std::to_string(input.dim(0)) +
                     " channels but depthwise kernels " + shape_string(kernels.shape()));
  const Shape out_shape = conv2d_output_shape(
      input.shape(), {input.dim(0), input.dim(0), kernels.dim(1), kernels.dim(2)}, stride, pad);
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t KH = kernels.dim(1), KW = kernels.dim(2);
  const std::size_t OH = out_shape[1], OW = out_shape[2];
  Tensor out(out_shape);
  for (std::size_t c = 0; c < C; ++c) {
    const double* iplane = input.data().data() + c * H * W;
    double* oplane = out.data().data() + c * OH * OW;
    for (std::size_t ky = 0; ky < KH; ++ky) {
      const Span1 rows = valid_outputs(OH, H, ky, pad, stride);
      for (std::size_t kx = 0; kx < KW; ++kx) {
        const double w = kernels[(c * KH + ky) * KW + kx];
        const Span1 cols = valid_outputs(OW, W, kx, pad, stride);
        for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
          const std::ptrdiff_t base = row_base(oy * stride + ky - pad, W, kx, pad);
          double* orow = oplane + oy * OW;
          for (std::size_t ox = cols.lo; ox < cols.hi; ++ox)
            orow[ox] += w * iplane[base + static_cast<std::ptrdiff_t>(ox * stride)];
        }
      }
    }
  }
  return out;
}

std::pair<Tensor, Tensor> depthwise_conv2d_backward(const Tensor& input, const Tensor& kernels,
                                                    std::size_t stride, std::size_t pad,
                                                    const Tensor& grad_out) {
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t KH = kernels.dim(1), KW = kernels.dim(2);
  const std::size_t OH = grad_out.dim(1), OW = grad_out.dim(2);
  Tensor gi(input.shape());
  Tensor gk(kernels.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const double* iplane = input.data().data() + c * H * W;
    double* giplane = gi.data().data() + c * H * W;
    const double* gplane = grad_out.data().data() + c * OH * OW;
    for (std::size_t ky = 0; ky < KH; ++ky) {
      const Span1 rows = valid_outputs(OH, H, ky, pad, stride);
      for (std::size_t kx = 0; kx < KW; ++kx) {
        const std::size_t widx = (c * KH + ky) * KW + kx;
        const double w = kernels[widx];
        const Span1 cols = valid_outputs(OW, W, kx, pad, stride);
        double sw = 0.0;
        for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
          const std::ptrdiff_t base = row_base(oy * stride + ky - pad, W, kx, pad);
          const double* grow = gplane + oy * OW;
          for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) {
            const std::ptrdiff_t idx = base + static_cast<std::ptrdiff_t>(ox * stride);
            sw += grow[ox] * iplane[idx];
            giplane[idx] += w * grow[ox];
          }
        }
        gk[widx] = sw;
      }
    }
  }
  return {std::move(gi), std::move(gk)};
}

Tensor sepconv2d_forward(const Tensor& input, const Tensor& depthwise, const Tensor& pointwise,
                         const Tensor& bias, std::size_t stride, std::size_t pad,
                         SepConv2dCache* cache) {
  require_rank(pointwise, 4, "sepconv2d pointwise");
  if (pointwise.dim(2) != 1 || pointwise.dim(3) != 1)
    throw ShapeError("sepconv2d: pointwise kernels must be [F,C,1,1], got " +
                     shape_string(pointwise.shape()));
  if (input.rank() == 3 && pointwise.dim(1) != input.dim(0))
    throw ShapeError("sepconv2d: input has " + std::to_string(input.dim(0)) +
                     " channels but pointwise kernels " + shape_string(pointwise.shape()));
  Tensor mid = depthwise_conv2d_forward(input, depthwise, stride, pad);
  Conv2dCache pw;
  Tensor out = conv2d_forward(mid, pointwise, bias, 1, 0, cache ? &pw : nullptr);
  if (cache) *cache = SepConv2dCache{input, depthwise, std::move(pw), stride, pad};
  return out;
}

SepConv2dGrads sepconv2d_backward(const SepConv2dCache& cache, const Tensor& grad_out) {
  if (!cache.valid()) throw CacheError("sepconv2d_backward: cache was not filled by a forward pass");
  Conv2dGrads pw = conv2d_backward(cache.pointwise, grad_out);
  auto [gi, gd] =
      depthwise_conv2d_backward(cache.input, cache.depthwise, cache.stride, cache.pad, pw.input);
  return {std::move(gi), std::move(gd), std::move(pw.kernels), std::move(pw.bias)};
}

Tensor compose_separable_kernel(const Tensor& depthwise, const Tensor& pointwise) {
  require_rank(depthwise, 3, "compose_separable_kernel");
  require_rank(pointwise, 4, "compose_separable_kernel");
  const std::size_t C = depthwise.dim(0), KH = depthwise.dim(1), KW = depthwise.dim(2);
  const std::size_t F = pointwise.dim(0);
  if (pointwise.dim(1) != C)
    throw ShapeError("compose_separable_kernel: channel mismatch " +
                     shape_string(depthwise.shape()) + " vs " + shape_string(pointwise.shape()));
  Tensor k({F, C, KH, KW});
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < KH * KW; ++i)
        k[(f * C + c) * KH * KW + i] = pointwise[f * C + c] * depthwise[c * KH * KW + i];
  return k;
}

Tensor maxpool2d_forward(const Tensor& input, std::size_t window, MaxPool2dCache* cache) {
  require_rank(input, 3, "maxpool2d");
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  if (window == 0 || H % window != 0 || W % window != 0)
    throw ShapeError("maxpool2d: spatial dims " + shape_string(input.shape()) +
                     " must be divisible by window " + std::to_string(window));
  const std::size_t OH = H / window, OW = W / window;
  Tensor out({C, OH, OW});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        std::size_t best = (c * H + oy * window) * W + ox * window;
        double best_v = input[best];
        for (std::size_t wy = 0; wy < window; ++wy)
          for (std::size_t wx = 0; wx < window; ++wx) {
            const std::size_t idx = (c * H + oy * window + wy) * W + ox * window + wx;
            if (input[idx] > best_v) {
              best_v = input[idx];
              best = idx;
            }
          }
        const std::size_t o = (c * OH + oy) * OW + ox;
        out[o] = best_v;
        argmax[o] = best;
      }
  if (cache) *cache = MaxPool2dCache{input.shape(), out.shape(), std::move(argmax)};
  return out;
}

Tensor maxpool2d_backward(const MaxPool2dCache& cache, const Tensor& grad_out) {
  if (!cache.valid()) throw CacheError("maxpool2d_backward: cache was not filled by a forward pass");
  if (grad_out.shape() != cache.output_shape)
    throw CacheError("maxpool2d_backward: grad_out " + shape_string(grad_out.shape()) +
                     " does not match cached output " + shape_string(cache.output_shape));
  Tensor gi(cache.input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) gi[cache.argmax[o]] += grad_out[o];
  return gi;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                     DenseCache* cache) {
  require_rank(weights, 2, "dense");
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  if (input.size() != n)
    throw ShapeError("dense: input " + shape_string(input.shape()) + " has " +
                     std::to_string(input.size()) + " elements, weights " +
                     shape_string(weights.shape()) + " expect " + std::to_string(n));
  if (bias.size() != m)
    throw ShapeError("dense: bias " + shape_string(bias.shape()) + " does not match " +
                     std::to_string(m) + " outputs");
  Tensor out({m});
  const double* x = input.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = weights.data().data() + i * n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += row[j] * x[j];
    out[i] = s + bias[i];
  }
  if (cache) *cache = DenseCache{input, weights, out.shape()};
  return out;
}

DenseGrads dense_backward(const DenseCache& cache, const Tensor& grad_out) {
  if (!cache.valid()) throw CacheError("dense_backward: cache was not filled by a forward pass");
  if (grad_out.shape() != cache.output_shape)
    throw CacheError("dense_backward: grad_out " + shape_string(grad_out.shape()) +
                     " does not match cached output " + shape_string(cache.output_shape));
  const std::size_t m = cache.weights.dim(0), n = cache.weights.dim(1);
  DenseGrads g{Tensor(cache.input.shape()), Tensor(cache.weights.shape()), grad_out};
  const double* x = cache.input.data().data();
  double* gx = g.input.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double gi = grad_out[i];
    const double* row = cache.weights.data().data() + i * n;
    double* grow = g.weights.data().data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      grow[j] = gi * x[j];
      gx[j] += row[j] * gi;
    }
  }
  return g;
}

Tensor relu_forward(const Tensor& input, ReluCache* cache) {
  Tensor out = input;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  if (cache) cache->input = input;
  return out;
}

Tensor relu_backward(const ReluCache& cache, const Tensor& grad_out) {
  if (!cache.valid()) throw CacheError("relu_backward: cache was not filled by a forward pass");
  if (grad_out.shape() != cache.input.shape())
    throw CacheError("relu_backward: grad_out " + shape_string(grad_out.shape()) +
                     " does not match cached input " + shape_string(cache.input.shape()));
  Tensor gi = grad_out;
  for (std::size_t i = 0; i < gi.size(); ++i)
    if (!(cache.input[i] > 0.0)) gi[i] = 0.0;
  return gi;
}

SoftmaxXent softmax_xent(const Tensor& logits, Label label) {
  const std::size_t n = logits.size();
  const auto y = static_cast<std::size_t>(label);
  if (n < 2 || y >= n)
    throw ShapeError("softmax_xent: need at least " + std::to_string(y + 1) + " logits, got " +
                     shape_string(logits.shape()));
  if (!logits.all_finite()) throw ShapeError("softmax_xent: logits must be finite");
  double mx = logits[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  Tensor probs({n});
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    z += probs[i];
  }
  for (std::size_t i = 0; i < n; ++i) probs[i] /= z;
  const double loss = std::log(z) - (logits[y] - mx);
  Tensor grad = probs;
  grad[y] -= 1.0;
  return {std::move(probs), loss, std::move(grad)};
}

}  // namespace fusedet
