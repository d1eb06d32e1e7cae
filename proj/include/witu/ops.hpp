#pragma once

#include <cstddef>

#include "witu/tensor.hpp"

// Whole-tensor numerical kernels. Every forward op has a matching *_backward
// that accumulates (+=) into the gradient tensors it is handed; a null
// gradient pointer means "not needed". Layout is N,C,H,W for images.
namespace witu::ops {

struct ConvSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_h = 3;
    std::size_t kernel_w = 3;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;

    // floor((in + 2*padding - kernel)/stride) + 1; throws ShapeError if < 1.
    std::size_t out_extent(std::size_t in, std::size_t kernel) const;
    Dims weight_dims() const;
};

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      const ConvSpec& spec);
template <typename T>
void conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const ConvSpec& spec,
                     const BasicTensor<T>& gy, BasicTensor<T>* gx, BasicTensor<T>* gw,
                     BasicTensor<T>* gb);

// weight is [Cin, Cout, kh, kw]; output extent (H-1)*stride + kh, no padding.
template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                const BasicTensor<T>& b, std::size_t stride);
template <typename T>
void conv_transpose2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                               std::size_t stride, const BasicTensor<T>& gy,
                               BasicTensor<T>* gx, BasicTensor<T>* gw, BasicTensor<T>* gb);

// out = x * w^T + b over the trailing dimension; w is [Dout, Din].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b);
template <typename T>
void linear_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& gy,
                     BasicTensor<T>* gx, BasicTensor<T>* gw, BasicTensor<T>* gb);

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes each trailing-dim vector with its biased variance.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps = kLayerNormEps);
template <typename T>
void layer_norm_backward(const BasicTensor<T>& x, const BasicTensor<T>& gamma, double eps,
                         const BasicTensor<T>& gy, BasicTensor<T>* gx, BasicTensor<T>* ggamma,
                         BasicTensor<T>* gbeta);

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x);
template <typename T>
void softmax_backward(const BasicTensor<T>& y, const BasicTensor<T>& gy, BasicTensor<T>& gx);

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <typename T>
T gelu_scalar(T x);
template <typename T>
T gelu_grad_scalar(T x);
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x);
template <typename T>
void gelu_backward(const BasicTensor<T>& x, const BasicTensor<T>& gy, BasicTensor<T>& gx);

// Batched matrix product over all leading dims: a [..., m, k] times
// b [..., k, n] (or b [..., n, k] when trans_b) -> [..., m, n].
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, bool trans_b);
template <typename T>
void matmul_backward(const BasicTensor<T>& a, const BasicTensor<T>& b, bool trans_b,
                     const BasicTensor<T>& gy, BasicTensor<T>* ga, BasicTensor<T>* gb);

template <typename T>
BasicTensor<T> nchw_to_nhwc(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> nhwc_to_nchw(const BasicTensor<T>& x);

// Zero-pads bottom/right of an N,C,H,W tensor to (H + pad_h, W + pad_w).
template <typename T>
BasicTensor<T> pad_hw(const BasicTensor<T>& x, std::size_t pad_h, std::size_t pad_w);
// Keeps the top-left h x w region.
template <typename T>
BasicTensor<T> crop_hw(const BasicTensor<T>& x, std::size_t h, std::size_t w);

}  // namespace witu::ops
