#pragma once

#include <span>

// Dense kernels behind the autograd ops. The default namespace holds the
// OpenMP versions; bb::kernels::reference holds straightforward serial loops
// used as the oracle in tests and as the baseline in the benchmark.
//
// Every parallel kernel partitions work so that each output element is
// produced by exactly one thread with a fixed summation order, so results do
// not depend on the thread count.

namespace bb::kernels {

/// Stride-1 "same" convolution (cross-correlation) with zero padding.
/// Input c_in x H x W, kernel c_out x c_in x kh x kw (odd sizes), output c_out x H x W.
struct ConvShape {
  int c_in = 1;
  int c_out = 1;
  int height = 1;
  int width = 1;
  int kh = 1;
  int kw = 1;

  std::size_t input_size() const { return static_cast<std::size_t>(c_in) * height * width; }
  std::size_t output_size() const { return static_cast<std::size_t>(c_out) * height * width; }
  std::size_t kernel_size() const { return static_cast<std::size_t>(c_out) * c_in * kh * kw; }
  void validate() const;
};

// out = conv(input, kernel)
template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> input, std::span<const T> kernel,
                    std::span<T> out);
// grad_in += d(out)/d(input)^T grad_out
template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> grad_out,
                           std::span<const T> kernel, std::span<T> grad_in);
// grad_kernel += d(out)/d(kernel)^T grad_out
template <typename T>
void conv2d_backward_kernel(const ConvShape& s, std::span<const T> grad_out,
                            std::span<const T> input, std::span<T> grad_kernel);

// y = W x, W is rows x cols row-major.
template <typename T>
void matvec(int rows, int cols, std::span<const T> w, std::span<const T> x, std::span<T> y);
// gx += W^T gy
template <typename T>
void matvec_transposed_acc(int rows, int cols, std::span<const T> w, std::span<const T> gy,
                           std::span<T> gx);
// gw += gy x^T
template <typename T>
void outer_acc(int rows, int cols, std::span<const T> gy, std::span<const T> x, std::span<T> gw);

namespace reference {

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> input, std::span<const T> kernel,
                    std::span<T> out);
template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> grad_out,
                           std::span<const T> kernel, std::span<T> grad_in);
template <typename T>
void conv2d_backward_kernel(const ConvShape& s, std::span<const T> grad_out,
                            std::span<const T> input, std::span<T> grad_kernel);
template <typename T>
void matvec(int rows, int cols, std::span<const T> w, std::span<const T> x, std::span<T> y);
template <typename T>
void matvec_transposed_acc(int rows, int cols, std::span<const T> w, std::span<const T> gy,
                           std::span<T> gx);
template <typename T>
void outer_acc(int rows, int cols, std::span<const T> gy, std::span<const T> x, std::span<T> gw);

}  // namespace reference

}  // namespace bb::kernels
