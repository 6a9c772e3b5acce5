#pragma once

// Layer primitives with explicit forward/backward pairs.
//
// Conventions:
//  * images and activations are [C,H,W]; convolution is cross-correlation
//    (no kernel flip) with zero padding;
//  * every forward that is followed by a backward fills a cache; a backward
//    validates that the cache was produced by a forward with matching shapes;
//  * ReLU uses the subgradient 0 at x == 0; max-pooling routes gradient to the
//    first maximum in row-major window order.

#include <cstddef>
#include <vector>

#include "fusedet/tensor.hpp"

namespace fusedet {

struct Conv2dCache {
  Tensor input;
  Tensor kernels;
  std::size_t stride = 0;
  std::size_t pad = 0;
  Shape output_shape;

  bool valid() const noexcept { return !output_shape.empty(); }
};

struct Conv2dGrads {
  Tensor input;
  Tensor kernels;
  Tensor bias;
};

Shape conv2d_output_shape(const Shape& input, const Shape& kernels, std::size_t stride,
                          std::size_t pad);

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                      std::size_t stride, std::size_t pad, Conv2dCache* cache = nullptr);
Conv2dGrads conv2d_backward(const Conv2dCache& cache, const Tensor& grad_out);

// Depthwise stage: each channel convolved with its own [kh,kw] kernel, no bias.
Tensor depthwise_conv2d_forward(const Tensor& input, const Tensor& kernels, std::size_t stride,
                                std::size_t pad);
// Returns {grad_input, grad_kernels}.
std::pair<Tensor, Tensor> depthwise_conv2d_backward(const Tensor& input, const Tensor& kernels,
                                                    std::size_t stride, std::size_t pad,
                                                    const Tensor& grad_out);

struct SepConv2dCache {
  Tensor input;
  Tensor depthwise;   // [C,kh,kw]
  Conv2dCache pointwise;
  std::size_t stride = 0;
  std::size_t pad = 0;

  bool valid() const noexcept { return pointwise.valid(); }
};

struct SepConv2dGrads {
  Tensor input;
  Tensor depthwise;
  Tensor pointwise;
  Tensor bias;
};

Tensor sepconv2d_forward(const Tensor& input, const Tensor& depthwise, const Tensor& pointwise,
                         const Tensor& bias, std::size_t stride, std::size_t pad,
                         SepConv2dCache* cache = nullptr);
SepConv2dGrads sepconv2d_backward(const SepConv2dCache& cache, const Tensor& grad_out);

// Dense kernel [F,C,kh,kw] equivalent to a depthwise/pointwise pair.
Tensor compose_separable_kernel(const Tensor& depthwise, const Tensor& pointwise);

struct MaxPool2dCache {
  Shape input_shape;
  Shape output_shape;
  std::vector<std::size_t> argmax;  // flat input index per output element

  bool valid() const noexcept { return !output_shape.empty(); }
};

Tensor maxpool2d_forward(const Tensor& input, std::size_t window = 2,
                         MaxPool2dCache* cache = nullptr);
Tensor maxpool2d_backward(const MaxPool2dCache& cache, const Tensor& grad_out);

struct DenseCache {
  Tensor input;
  Tensor weights;
  Shape output_shape;

  bool valid() const noexcept { return !output_shape.empty(); }
};

struct DenseGrads {
  Tensor input;    // same shape as the forward input
  Tensor weights;  // [m,n]
  Tensor bias;     // [m]
};

// Input may have any shape whose element count equals n.
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                     DenseCache* cache = nullptr);
DenseGrads dense_backward(const DenseCache& cache, const Tensor& grad_out);

struct ReluCache {
  Tensor input;

  bool valid() const noexcept { return !input.empty(); }
};

Tensor relu_forward(const Tensor& input, ReluCache* cache = nullptr);
Tensor relu_backward(const ReluCache& cache, const Tensor& grad_out);

enum class Label : int { real = 0, fake = 1 };

struct SoftmaxXent {
  Tensor probs;
  double loss = 0.0;
  Tensor grad_logits;
};

// Two-class softmax with cross-entropy against `label`.
SoftmaxXent softmax_xent(const Tensor& logits, Label label);

}  // namespace fusedet
