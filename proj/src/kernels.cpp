#include "bb/kernels.hpp"

#include <algorithm>
#include <string>
#include <vector>

#include "bb/error.hpp"

namespace bb::kernels {

void ConvShape::validate() const {
  if (c_in < 1 || c_out < 1 || height < 1 || width < 1) throw ShapeError("conv2d: empty shape");
  if (kh < 1 || kw < 1 || kh % 2 == 0 || kw % 2 == 0) {
    throw ShapeError("conv2d: kernel sizes must be odd, got " + std::to_string(kh) + "x" +
                     std::to_string(kw));
  }
}

namespace {

// Below this many multiply-adds a kernel runs on the calling thread.
constexpr long kParallelWork = 1L << 16;

// Rows y of the output for which row y + dy lies inside [0, h).
struct Range {
  int begin;
  int end;
};
inline Range valid(int extent, int offset) {
  return {std::max(0, -offset), std::min(extent, extent - offset)};
}

}  // namespace

// Convolutions run as matrix products over a column matrix: row r = (ic, ky, kx)
// of the kernel, column p = output pixel, zero where the tap leaves the image.
template <typename T>
std::vector<T>& scratch(int slot) {
  thread_local std::vector<T> buffers[2];
  return buffers[slot];
}

template <typename T>
void im2col(const ConvShape& s, const T* input, T* col) {
  const int H = s.height, W = s.width, ph = s.kh / 2, pw = s.kw / 2;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const int taps = s.kh * s.kw;
#pragma omp parallel for schedule(static) if (s.input_size() * taps > kParallelWork)
  for (int ic = 0; ic < s.c_in; ++ic) {
    const T* src = input + ic * plane;
    for (int t = 0; t < taps; ++t) {
      const int dy = t / s.kw - ph, dx = t % s.kw - pw;
      const Range ry = valid(H, dy), rx = valid(W, dx);
      T* row = col + (static_cast<std::size_t>(ic) * taps + t) * plane;
      std::fill(row, row + plane, T{0});
      for (int y = ry.begin; y < ry.end; ++y) {
        std::copy(src + (y + dy) * W + dx + rx.begin, src + (y + dy) * W + dx + rx.end,
                  row + y * W + rx.begin);
      }
    }
  }
}

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> input, std::span<const T> kernel,
                    std::span<T> out) {
  const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
  const int rows = s.c_in * s.kh * s.kw;
  auto& col = scratch<T>(0);
  col.resize(rows * plane);
  im2col(s, input.data(), col.data());
  const long work = static_cast<long>(s.kernel_size()) * static_cast<long>(plane);
  // Output channels in blocks of four share each column row load.
  const int blocks = (s.c_out + 3) / 4;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int b = 0; b < blocks; ++b) {
    const int oc0 = 4 * b;
    const int n = std::min(4, s.c_out - oc0);
    T* dst[4];
    const T* k[4];
    for (int j = 0; j < 4; ++j) {
      const int oc = oc0 + std::min(j, n - 1);
      dst[j] = out.data() + oc * plane;
      k[j] = kernel.data() + static_cast<std::size_t>(oc) * rows;
    }
    for (int j = 0; j < n; ++j) std::fill(dst[j], dst[j] + plane, T{0});
    if (n == 4) {
      T* d0 = dst[0]; T* d1 = dst[1]; T* d2 = dst[2]; T* d3 = dst[3];
      for (int r = 0; r < rows; ++r) {
        const T w0 = k[0][r], w1 = k[1][r], w2 = k[2][r], w3 = k[3][r];
        const T* c = col.data() + r * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          const T v = c[p];
          d0[p] += w0 * v;
          d1[p] += w1 * v;
          d2[p] += w2 * v;
          d3[p] += w3 * v;
        }
      }
    } else {
      for (int j = 0; j < n; ++j) {
        for (int r = 0; r < rows; ++r) {
          const T w = k[j][r];
          const T* c = col.data() + r * plane;
          for (std::size_t p = 0; p < plane; ++p) dst[j][p] += w * c[p];
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> grad_out,
                           std::span<const T> kernel, std::span<T> grad_in) {
  const int H = s.height, W = s.width, ph = s.kh / 2, pw = s.kw / 2;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const int taps = s.kh * s.kw;
  const int rows = s.c_in * taps;
  auto& gcol = scratch<T>(1);
  gcol.resize(rows * plane);
  const long work = static_cast<long>(s.kernel_size()) * static_cast<long>(plane);
  const int blocks = (rows + 3) / 4;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int b = 0; b < blocks; ++b) {
    const int r0 = 4 * b;
    const int n = std::min(4, rows - r0);
    T* dst = gcol.data() + r0 * plane;
    std::fill(dst, dst + n * plane, T{0});
    if (n == 4) {
      T* d0 = dst; T* d1 = dst + plane; T* d2 = dst + 2 * plane; T* d3 = dst + 3 * plane;
      for (int oc = 0; oc < s.c_out; ++oc) {
        const T* w = kernel.data() + static_cast<std::size_t>(oc) * rows + r0;
        const T w0 = w[0], w1 = w[1], w2 = w[2], w3 = w[3];
        const T* g = grad_out.data() + oc * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          const T v = g[p];
          d0[p] += w0 * v;
          d1[p] += w1 * v;
          d2[p] += w2 * v;
          d3[p] += w3 * v;
        }
      }
    } else {
      for (int j = 0; j < n; ++j) {
        T* d = dst + j * plane;
        for (int oc = 0; oc < s.c_out; ++oc) {
          const T w = kernel[static_cast<std::size_t>(oc) * rows + r0 + j];
          const T* g = grad_out.data() + oc * plane;
          for (std::size_t p = 0; p < plane; ++p) d[p] += w * g[p];
        }
      }
    }
  }
#pragma omp parallel for schedule(static) if (s.input_size() * taps > kParallelWork)
  for (int ic = 0; ic < s.c_in; ++ic) {
    T* gi = grad_in.data() + ic * plane;
    for (int t = 0; t < taps; ++t) {
      const int dy = t / s.kw - ph, dx = t % s.kw - pw;
      const Range ry = valid(H, dy), rx = valid(W, dx);
      const T* row = gcol.data() + (static_cast<std::size_t>(ic) * taps + t) * plane;
      for (int y = ry.begin; y < ry.end; ++y) {
        T* d = gi + (y + dy) * W + dx;
        const T* g = row + y * W;
        for (int x = rx.begin; x < rx.end; ++x) d[x] += g[x];
      }
    }
  }
}

template <typename T>
void conv2d_backward_kernel(const ConvShape& s, std::span<const T> grad_out,
                            std::span<const T> input, std::span<T> grad_kernel) {
  const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
  const int rows = s.c_in * s.kh * s.kw;
  auto& col = scratch<T>(0);
  col.resize(rows * plane);
  im2col(s, input.data(), col.data());
  constexpr std::size_t kLanes = 8;
  const std::size_t body = plane - plane % kLanes;
  const long work = static_cast<long>(s.kernel_size()) * static_cast<long>(plane);
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int oc = 0; oc < s.c_out; ++oc) {
    const T* g = grad_out.data() + oc * plane;
    T* gk = grad_kernel.data() + static_cast<std::size_t>(oc) * rows;
    for (int r = 0; r < rows; ++r) {
      const T* c = col.data() + r * plane;
      // Fixed lane-wise partial sums so the dot product vectorizes.
      T lanes[kLanes] = {};
      for (std::size_t p = 0; p < body; p += kLanes) {
        for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += g[p + l] * c[p + l];
      }
      T sum{0};
      for (std::size_t l = 0; l < kLanes; ++l) sum += lanes[l];
      for (std::size_t p = body; p < plane; ++p) sum += g[p] * c[p];
      gk[r] += sum;
    }
  }
}

template <typename T>
void matvec(int rows, int cols, std::span<const T> w, std::span<const T> x, std::span<T> y) {
  const long work = static_cast<long>(rows) * cols;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int r = 0; r < rows; ++r) {
    const T* row = w.data() + static_cast<std::size_t>(r) * cols;
    T sum{0};
    for (int c = 0; c < cols; ++c) sum += row[c] * x[c];
    y[r] = sum;
  }
}

template <typename T>
void matvec_transposed_acc(int rows, int cols, std::span<const T> w, std::span<const T> gy,
                           std::span<T> gx) {
  constexpr int kBlock = 256;
  const int blocks = (cols + kBlock - 1) / kBlock;
  const long work = static_cast<long>(rows) * cols;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int b = 0; b < blocks; ++b) {
    const int c0 = b * kBlock;
    const int c1 = std::min(cols, c0 + kBlock);
    for (int r = 0; r < rows; ++r) {
      const T g = gy[r];
      const T* row = w.data() + static_cast<std::size_t>(r) * cols;
      for (int c = c0; c < c1; ++c) gx[c] += row[c] * g;
    }
  }
}

template <typename T>
void outer_acc(int rows, int cols, std::span<const T> gy, std::span<const T> x, std::span<T> gw) {
  const long work = static_cast<long>(rows) * cols;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int r = 0; r < rows; ++r) {
    const T g = gy[r];
    T* row = gw.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) row[c] += g * x[c];
  }
}

namespace reference {

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> input, std::span<const T> kernel,
                    std::span<T> out) {
  const int H = s.height, W = s.width, ph = s.kh / 2, pw = s.kw / 2;
  for (int oc = 0; oc < s.c_out; ++oc) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        T sum{0};
        for (int ic = 0; ic < s.c_in; ++ic) {
          for (int ky = 0; ky < s.kh; ++ky) {
            for (int kx = 0; kx < s.kw; ++kx) {
              const int iy = y + ky - ph, ix = x + kx - pw;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              sum += kernel[((oc * s.c_in + ic) * s.kh + ky) * s.kw + kx] *
                     input[(ic * H + iy) * W + ix];
            }
          }
        }
        out[(oc * H + y) * W + x] = sum;
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> grad_out,
                           std::span<const T> kernel, std::span<T> grad_in) {
  const int H = s.height, W = s.width, ph = s.kh / 2, pw = s.kw / 2;
  for (int oc = 0; oc < s.c_out; ++oc) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const T g = grad_out[(oc * H + y) * W + x];
        for (int ic = 0; ic < s.c_in; ++ic) {
          for (int ky = 0; ky < s.kh; ++ky) {
            for (int kx = 0; kx < s.kw; ++kx) {
              const int iy = y + ky - ph, ix = x + kx - pw;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              grad_in[(ic * H + iy) * W + ix] +=
                  kernel[((oc * s.c_in + ic) * s.kh + ky) * s.kw + kx] * g;
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_kernel(const ConvShape& s, std::span<const T> grad_out,
                            std::span<const T> input, std::span<T> grad_kernel) {
  const int H = s.height, W = s.width, ph = s.kh / 2, pw = s.kw / 2;
  for (int oc = 0; oc < s.c_out; ++oc) {
    for (int ic = 0; ic < s.c_in; ++ic) {
      for (int ky = 0; ky < s.kh; ++ky) {
        for (int kx = 0; kx < s.kw; ++kx) {
          T sum{0};
          for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
              const int iy = y + ky - ph, ix = x + kx - pw;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              sum += grad_out[(oc * H + y) * W + x] * input[(ic * H + iy) * W + ix];
            }
          }
          grad_kernel[((oc * s.c_in + ic) * s.kh + ky) * s.kw + kx] += sum;
        }
      }
    }
  }
}

template <typename T>
void matvec(int rows, int cols, std::span<const T> w, std::span<const T> x, std::span<T> y) {
  for (int r = 0; r < rows; ++r) {
    T sum{0};
    for (int c = 0; c < cols; ++c) sum += w[static_cast<std::size_t>(r) * cols + c] * x[c];
    y[r] = sum;
  }
}

template <typename T>
void matvec_transposed_acc(int rows, int cols, std::span<const T> w, std::span<const T> gy,
                           std::span<T> gx) {
  for (int c = 0; c < cols; ++c) {
    T sum{0};
    for (int r = 0; r < rows; ++r) sum += w[static_cast<std::size_t>(r) * cols + c] * gy[r];
    gx[c] += sum;
  }
}

template <typename T>
void outer_acc(int rows, int cols, std::span<const T> gy, std::span<const T> x, std::span<T> gw) {
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) gw[static_cast<std::size_t>(r) * cols + c] += gy[r] * x[c];
  }
}

}  // namespace reference

}  // namespace bb::kernels

#define BB_INSTANTIATE_KERNELS(NS, T)                                                          \
  template void NS::conv2d_forward<T>(const bb::kernels::ConvShape&, std::span<const T>, std::span<const T>, \
                                      std::span<T>);                                           \
  template void NS::conv2d_backward_input<T>(const bb::kernels::ConvShape&, std::span<const T>,             \
                                             std::span<const T>, std::span<T>);                \
  template void NS::conv2d_backward_kernel<T>(const bb::kernels::ConvShape&, std::span<const T>,            \
                                              std::span<const T>, std::span<T>);               \
  template void NS::matvec<T>(int, int, std::span<const T>, std::span<const T>, std::span<T>); \
  template void NS::matvec_transposed_acc<T>(int, int, std::span<const T>, std::span<const T>, \
                                             std::span<T>);                                    \
  template void NS::outer_acc<T>(int, int, std::span<const T>, std::span<const T>, std::span<T>);

BB_INSTANTIATE_KERNELS(bb::kernels, float)
BB_INSTANTIATE_KERNELS(bb::kernels, double)
BB_INSTANTIATE_KERNELS(bb::kernels::reference, float)
BB_INSTANTIATE_KERNELS(bb::kernels::reference, double)

#undef BB_INSTANTIATE_KERNELS
