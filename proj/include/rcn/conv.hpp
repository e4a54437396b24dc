#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <type_traits>
#include <vector>

#if defined(__AVX2__)
#include <immintrin.h>
#endif

#include "rcn/gemm.hpp"
#include "rcn/rng.hpp"
#include "rcn/tensor.hpp"

// 3D convolution (stride 1, same padding) lowered to a single matrix product:
// an (M x Cl^3) filter matrix times an (Cl^3 x NXYZ) patch matrix built by
// im2col.  The patch matrix is materialized so the operand shapes driving the
// timing behaviour are directly measurable; a six-nested-loop direct
// convolution is kept alongside as the correctness oracle.
//
// Activations are channel-last (N, X, Y, Z, C); filter weights are stored as
// (C, l, l, l, M), whose row-major flattening is exactly the (Cl^3 x M) matrix
// with rows ordered (c, dx, dy, dz) — the transpose of the filter matrix, so
// the lowering needs no weight reshuffling.

namespace rcn {

template <typename T>
struct ConvFilter {
  Tensor<T> weights;  // (C, l, l, l, M)
  Tensor<T> bias;     // (M)

  ConvFilter() = default;
  ConvFilter(Tensor<T> w, Tensor<T> b) : weights(std::move(w)), bias(std::move(b)) { validate(); }

  std::int64_t in_channels() const { return weights.dim(0); }
  std::int64_t side() const { return weights.dim(1); }
  std::int64_t out_channels() const { return weights.dim(4); }

  void validate() const {
    if (weights.rank() != 5) throw ShapeError("conv weights must have rank 5 (C,l,l,l,M), got " + weights.shape().str());
    const std::int64_t l = weights.dim(1);
    if (weights.dim(2) != l || weights.dim(3) != l) throw ShapeError("conv kernel must be cubic, got " + weights.shape().str());
    if (l % 2 == 0) throw ArgumentError("kernel side must be odd for same padding, got " + std::to_string(l));
    for (int a = 0; a < 5; ++a)
      if (weights.dim(a) < 1) throw ShapeError("conv weight extents must be >= 1, got " + weights.shape().str());
    if (bias.rank() != 1 || bias.dim(0) != weights.dim(4))
      throw ShapeError("conv bias must have shape (M)=(" + std::to_string(weights.dim(4)) + "), got " + bias.shape().str());
  }
};

// Operand extents of the lowered product: (m x k) times (k x n).
struct GemmShape {
  std::int64_t m = 0;  // output filters M
  std::int64_t k = 0;  // C * l^3
  std::int64_t n = 0;  // N * X * Y * Z

  std::int64_t macs() const { return m * k * n; }
  bool operator==(const GemmShape& o) const { return m == o.m && k == o.k && n == o.n; }
};

inline GemmShape gemm_shape(const Shape& input, const Shape& filter) {
  if (input.rank() != 5) throw ShapeError("conv input must have rank 5 (N,X,Y,Z,C), got " + input.str());
  if (filter.rank() != 5) throw ShapeError("conv filter must have rank 5 (C,l,l,l,M), got " + filter.str());
  const std::int64_t l = filter[1];
  return GemmShape{filter[4], filter[0] * l * l * l, input[0] * input[1] * input[2] * input[3]};
}

enum class ConvMode { gemm, naive };

inline ConvMode parse_conv_mode(const std::string& s) {
  if (s == "gemm") return ConvMode::gemm;
  if (s == "naive") return ConvMode::naive;
  throw ArgumentError("unknown conv mode '" + s + "' (expected gemm or naive)");
}

// Patch matrices larger than this are built in batch slices.
inline constexpr std::int64_t kDefaultIm2colBudgetBytes = std::int64_t(512) << 20;

namespace detail {

#if defined(__AVX2__)
// In-register transpose of an 8x8 float block; standard unpack / shuffle /
// lane-swap ladder.
inline void transpose_8x8(__m256& r0, __m256& r1, __m256& r2, __m256& r3,
                          __m256& r4, __m256& r5, __m256& r6, __m256& r7) {
  const __m256 t0 = _mm256_unpacklo_ps(r0, r1);
  const __m256 t1 = _mm256_unpackhi_ps(r0, r1);
  const __m256 t2 = _mm256_unpacklo_ps(r2, r3);
  const __m256 t3 = _mm256_unpackhi_ps(r2, r3);
  const __m256 t4 = _mm256_unpacklo_ps(r4, r5);
  const __m256 t5 = _mm256_unpackhi_ps(r4, r5);
  const __m256 t6 = _mm256_unpacklo_ps(r6, r7);
  const __m256 t7 = _mm256_unpackhi_ps(r6, r7);
  const __m256 s0 = _mm256_shuffle_ps(t0, t2, _MM_SHUFFLE(1, 0, 1, 0));
  const __m256 s1 = _mm256_shuffle_ps(t0, t2, _MM_SHUFFLE(3, 2, 3, 2));
  const __m256 s2 = _mm256_shuffle_ps(t1, t3, _MM_SHUFFLE(1, 0, 1, 0));
  const __m256 s3 = _mm256_shuffle_ps(t1, t3, _MM_SHUFFLE(3, 2, 3, 2));
  const __m256 s4 = _mm256_shuffle_ps(t4, t6, _MM_SHUFFLE(1, 0, 1, 0));
  const __m256 s5 = _mm256_shuffle_ps(t4, t6, _MM_SHUFFLE(3, 2, 3, 2));
  const __m256 s6 = _mm256_shuffle_ps(t5, t7, _MM_SHUFFLE(1, 0, 1, 0));
  const __m256 s7 = _mm256_shuffle_ps(t5, t7, _MM_SHUFFLE(3, 2, 3, 2));
  r0 = _mm256_permute2f128_ps(s0, s4, 0x20);
  r1 = _mm256_permute2f128_ps(s1, s5, 0x20);
  r2 = _mm256_permute2f128_ps(s2, s6, 0x20);
  r3 = _mm256_permute2f128_ps(s3, s7, 0x20);
  r4 = _mm256_permute2f128_ps(s0, s4, 0x31);
  r5 = _mm256_permute2f128_ps(s1, s5, 0x31);
  r6 = _mm256_permute2f128_ps(s2, s6, 0x31);
  r7 = _mm256_permute2f128_ps(s3, s7, 0x31);
}

template <typename T>
inline constexpr bool kChannelBlock8 = std::is_same_v<T, float>;
#else
template <typename T>
inline constexpr bool kChannelBlock8 = false;
#endif

// Fills dst (C*l^3 rows by (b1-b0)*X*Y*Z columns) with the zero-padded patches
// of batch entries [b0, b1).  Rows run over (c, dx, dy, dz) row-major; columns
// over (n, x, y, z) row-major.
template <typename T>
void im2col_into(const Tensor<T>& in, std::int64_t l, std::int64_t b0, std::int64_t b1, T* dst) {
  const std::int64_t X = in.dim(1), Y = in.dim(2), Z = in.dim(3), C = in.dim(4);
  const std::int64_t h = l / 2;
  const std::int64_t ncols = (b1 - b0) * X * Y * Z;
  const std::int64_t rs = l * l * l * ncols;  // dst stride between channel rows at one offset
  const T* src = in.data();

  // One (b, x) stretch of a single patch row: clip y/z against the volume,
  // gather the in-range z run with stride C, zero-fill the rest.
  const auto fill_yz = [&](T* p, std::int64_t b, std::int64_t sx, std::int64_t c,
                           std::int64_t oy, std::int64_t oz, std::int64_t z0, std::int64_t z1) {
    for (std::int64_t y = 0; y < Y; ++y) {
      const std::int64_t sy = y + oy;
      if (sy < 0 || sy >= Y) {
        std::memset(p, 0, static_cast<std::size_t>(Z) * sizeof(T));
        p += Z;
        continue;
      }
      if (z0 > 0) {
        std::memset(p, 0, static_cast<std::size_t>(z0) * sizeof(T));
        p += z0;
      }
      const T* s = src + (((b * X + sx) * Y + sy) * Z + z0 + oz) * C + c;
      for (std::int64_t z = z0; z < z1; ++z) {
        *p++ = *s;
        s += C;
      }
      if (z1 < Z) {
        std::memset(p, 0, static_cast<std::size_t>(Z - z1) * sizeof(T));
        p += Z - z1;
      }
    }
  };

  // Same stretch for eight consecutive channel rows at once.  The straight
  // gather above reads one float per cache line when C >= 16; lifting an 8x8
  // (z, c) block through registers turns that into full-width line reads and
  // contiguous stores on both sides.
  const auto fill_yz8 = [&](T* p, std::int64_t b, std::int64_t sx, std::int64_t c,
                            std::int64_t oy, std::int64_t oz, std::int64_t z0, std::int64_t z1) {
    for (std::int64_t y = 0; y < Y; ++y, p += Z) {
      const std::int64_t sy = y + oy;
      if (sy < 0 || sy >= Y) {
        for (int j = 0; j < 8; ++j) std::memset(p + j * rs, 0, static_cast<std::size_t>(Z) * sizeof(T));
        continue;
      }
      for (int j = 0; j < 8; ++j) {
        if (z0 > 0) std::memset(p + j * rs, 0, static_cast<std::size_t>(z0) * sizeof(T));
        if (z1 < Z) std::memset(p + j * rs + z1, 0, static_cast<std::size_t>(Z - z1) * sizeof(T));
      }
      const T* s = src + (((b * X + sx) * Y + sy) * Z + z0 + oz) * C + c;
      std::int64_t z = z0;
#if defined(__AVX2__)
      if constexpr (std::is_same_v<T, float>) {
        for (; z + 8 <= z1; z += 8) {
          const T* sv = s + (z - z0) * C;
          __m256 r0 = _mm256_loadu_ps(sv);
          __m256 r1 = _mm256_loadu_ps(sv + C);
          __m256 r2 = _mm256_loadu_ps(sv + 2 * C);
          __m256 r3 = _mm256_loadu_ps(sv + 3 * C);
          __m256 r4 = _mm256_loadu_ps(sv + 4 * C);
          __m256 r5 = _mm256_loadu_ps(sv + 5 * C);
          __m256 r6 = _mm256_loadu_ps(sv + 6 * C);
          __m256 r7 = _mm256_loadu_ps(sv + 7 * C);
          transpose_8x8(r0, r1, r2, r3, r4, r5, r6, r7);
          _mm256_storeu_ps(p + 0 * rs + z, r0);
          _mm256_storeu_ps(p + 1 * rs + z, r1);
          _mm256_storeu_ps(p + 2 * rs + z, r2);
          _mm256_storeu_ps(p + 3 * rs + z, r3);
          _mm256_storeu_ps(p + 4 * rs + z, r4);
          _mm256_storeu_ps(p + 5 * rs + z, r5);
          _mm256_storeu_ps(p + 6 * rs + z, r6);
          _mm256_storeu_ps(p + 7 * rs + z, r7);
        }
      }
#endif
      for (; z < z1; ++z) {
        const T* sv = s + (z - z0) * C;
        for (int j = 0; j < 8; ++j) p[j * rs + z] = sv[j];
      }
    }
  };

  // Both fill orders write identical bytes; the choice only bounds the source
  // working set.  When l x-planes fit in L2, sweep (b, x) outermost so every
  // patch row reads from a resident slab.  Otherwise channels are many and
  // the spatial extent small: rows are short, and sweeping offsets outermost
  // with the channel innermost lets consecutive rows hit the same lines.
  if (l * Y * Z * C * static_cast<std::int64_t>(sizeof(T)) <= (512 << 10)) {
    for (std::int64_t b = b0; b < b1; ++b)
      for (std::int64_t x = 0; x < X; ++x) {
        const std::int64_t col0 = ((b - b0) * X + x) * Y * Z;
        std::int64_t c0 = 0;
        if constexpr (kChannelBlock8<T>) {
          for (; c0 + 8 <= C; c0 += 8)
            for (std::int64_t dx = 0; dx < l; ++dx) {
              const std::int64_t sx = x + dx - h;
              for (std::int64_t dy = 0; dy < l; ++dy)
                for (std::int64_t dz = 0; dz < l; ++dz) {
                  T* p = dst + (((c0 * l + dx) * l + dy) * l + dz) * ncols + col0;
                  if (sx < 0 || sx >= X) {
                    for (int j = 0; j < 8; ++j) std::memset(p + j * rs, 0, static_cast<std::size_t>(Y * Z) * sizeof(T));
                    continue;
                  }
                  const std::int64_t oz = dz - h;
                  fill_yz8(p, b, sx, c0, dy - h, oz, std::max<std::int64_t>(0, -oz), std::min<std::int64_t>(Z, Z - oz));
                }
            }
        }
        for (; c0 < C; ++c0)
          for (std::int64_t dx = 0; dx < l; ++dx) {
            const std::int64_t sx = x + dx - h;
            for (std::int64_t dy = 0; dy < l; ++dy)
              for (std::int64_t dz = 0; dz < l; ++dz) {
                T* p = dst + (((c0 * l + dx) * l + dy) * l + dz) * ncols + col0;
                if (sx < 0 || sx >= X) {
                  std::memset(p, 0, static_cast<std::size_t>(Y * Z) * sizeof(T));
                  continue;
                }
                const std::int64_t oz = dz - h;
                fill_yz(p, b, sx, c0, dy - h, oz, std::max<std::int64_t>(0, -oz), std::min<std::int64_t>(Z, Z - oz));
              }
          }
      }
  } else {
    for (std::int64_t dx = 0; dx < l; ++dx)
      for (std::int64_t dy = 0; dy < l; ++dy)
        for (std::int64_t dz = 0; dz < l; ++dz) {
          const std::int64_t oz = dz - h;
          const std::int64_t z0 = std::max<std::int64_t>(0, -oz);
          const std::int64_t z1 = std::min<std::int64_t>(Z, Z - oz);
          std::int64_t c0 = 0;
          if constexpr (kChannelBlock8<T>) {
            for (; c0 + 8 <= C; c0 += 8) {
              T* p = dst + (((c0 * l + dx) * l + dy) * l + dz) * ncols;
              for (std::int64_t b = b0; b < b1; ++b)
                for (std::int64_t x = 0; x < X; ++x) {
                  const std::int64_t sx = x + dx - h;
                  if (sx < 0 || sx >= X) {
                    for (int j = 0; j < 8; ++j) std::memset(p + j * rs, 0, static_cast<std::size_t>(Y * Z) * sizeof(T));
                  } else {
                    fill_yz8(p, b, sx, c0, dy - h, oz, z0, z1);
                  }
                  p += Y * Z;
                }
            }
          }
          for (; c0 < C; ++c0) {
            T* p = dst + (((c0 * l + dx) * l + dy) * l + dz) * ncols;
            for (std::int64_t b = b0; b < b1; ++b)
              for (std::int64_t x = 0; x < X; ++x) {
                const std::int64_t sx = x + dx - h;
                if (sx < 0 || sx >= X) {
                  std::memset(p, 0, static_cast<std::size_t>(Y * Z) * sizeof(T));
                } else {
                  fill_yz(p, b, sx, c0, dy - h, oz, z0, z1);
                }
                p += Y * Z;
              }
          }
        }
  }
}

// Inverse of im2col_into: scatter-adds row-major patch gradients back into the
// (batch-sliced) input gradient.
template <typename T>
void col2im_add(Tensor<T>& gin, std::int64_t l, std::int64_t b0, std::int64_t b1, const T* cols) {
  const std::int64_t X = gin.dim(1), Y = gin.dim(2), Z = gin.dim(3), C = gin.dim(4);
  const std::int64_t h = l / 2;
  T* dst = gin.data();

  const T* p = cols;
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t dx = 0; dx < l; ++dx)
      for (std::int64_t dy = 0; dy < l; ++dy)
        for (std::int64_t dz = 0; dz < l; ++dz) {
          const std::int64_t ox = dx - h, oy = dy - h, oz = dz - h;
          const std::int64_t z0 = std::max<std::int64_t>(0, -oz);
          const std::int64_t z1 = std::min<std::int64_t>(Z, Z - oz);
          for (std::int64_t b = b0; b < b1; ++b)
            for (std::int64_t x = 0; x < X; ++x) {
              const std::int64_t sx = x + ox;
              if (sx < 0 || sx >= X) {
                p += Y * Z;
                continue;
              }
              for (std::int64_t y = 0; y < Y; ++y) {
                const std::int64_t sy = y + oy;
                if (sy < 0 || sy >= Y) {
                  p += Z;
                  continue;
                }
                p += z0;
                T* d = dst + (((b * X + sx) * Y + sy) * Z + z0 + oz) * C + c;
                for (std::int64_t z = z0; z < z1; ++z) {
                  *d += *p++;
                  d += C;
                }
                p += Z - z1;
              }
            }
        }
}

template <typename T>
void check_conv_args(const Tensor<T>& input, const ConvFilter<T>& f) {
  f.validate();
  if (input.rank() != 5) throw ShapeError("conv input must have rank 5 (N,X,Y,Z,C), got " + input.shape().str());
  if (input.dim(4) != f.in_channels())
    throw ShapeError("conv channel mismatch: input has " + std::to_string(input.dim(4)) + " channels, filter expects " + std::to_string(f.in_channels()));
}

// Batch entries per im2col slice under the memory budget.
template <typename T>
std::int64_t conv_slice_batches(const Tensor<T>& input, std::int64_t kdim, std::int64_t budget_bytes) {
  const std::int64_t per_volume = kdim * input.dim(1) * input.dim(2) * input.dim(3) * static_cast<std::int64_t>(sizeof(T));
  return std::max<std::int64_t>(1, budget_bytes / std::max<std::int64_t>(1, per_volume));
}

template <typename T>
void conv3d_forward_gemm_into(const Tensor<T>& input, const ConvFilter<T>& f, Tensor<T>& out,
                              int threads, std::int64_t budget_bytes) {
  const std::int64_t N = input.dim(0), XYZ = input.dim(1) * input.dim(2) * input.dim(3);
  const std::int64_t l = f.side(), M = f.out_channels();
  const std::int64_t kdim = f.in_channels() * l * l * l;

  static thread_local std::vector<T> cols, omat;
  const std::int64_t step = conv_slice_batches(input, kdim, budget_bytes);
  for (std::int64_t b0 = 0; b0 < N; b0 += step) {
    const std::int64_t b1 = std::min(N, b0 + step);
    const std::int64_t ncols = (b1 - b0) * XYZ;
    cols.resize(static_cast<std::size_t>(kdim * ncols));
    omat.resize(static_cast<std::size_t>(M * ncols));
    im2col_into(input, l, b0, b1, cols.data());
    // weights flatten to (kdim x M); the filter matrix is its transpose.
    gemm<T>(M, kdim, ncols, f.weights.data(), true, cols.data(), false, omat.data(), T(0), threads);

    T* o = out.data() + b0 * XYZ * M;
    const T* bias = f.bias.data();
    for (std::int64_t j = 0; j < ncols; ++j)
      for (std::int64_t m = 0; m < M; ++m) *o++ = omat[static_cast<std::size_t>(m * ncols + j)] + bias[m];
  }
}

template <typename T>
void conv3d_forward_naive_into(const Tensor<T>& input, const ConvFilter<T>& f, Tensor<T>& out) {
  const std::int64_t N = input.dim(0), X = input.dim(1), Y = input.dim(2), Z = input.dim(3), C = input.dim(4);
  const std::int64_t l = f.side(), M = f.out_channels(), h = l / 2;
  for (std::int64_t b = 0; b < N; ++b)
    for (std::int64_t x = 0; x < X; ++x)
      for (std::int64_t y = 0; y < Y; ++y)
        for (std::int64_t z = 0; z < Z; ++z)
          for (std::int64_t m = 0; m < M; ++m) {
            double acc = static_cast<double>(f.bias[m]);
            for (std::int64_t c = 0; c < C; ++c)
              for (std::int64_t dx = 0; dx < l; ++dx) {
                const std::int64_t sx = x + dx - h;
                if (sx < 0 || sx >= X) continue;
                for (std::int64_t dy = 0; dy < l; ++dy) {
                  const std::int64_t sy = y + dy - h;
                  if (sy < 0 || sy >= Y) continue;
                  for (std::int64_t dz = 0; dz < l; ++dz) {
                    const std::int64_t sz = z + dz - h;
                    if (sz < 0 || sz >= Z) continue;
                    acc += static_cast<double>(input(b, sx, sy, sz, c)) * static_cast<double>(f.weights(c, dx, dy, dz, m));
                  }
                }
              }
            out(b, x, y, z, m) = static_cast<T>(acc);
          }
}

}  // namespace detail

// Patch matrix of shape (C*l^3, N*X*Y*Z); column j is the zero-padded l^3*C
// patch centered on output position j.
template <typename T>
Tensor<T> im2col(const Tensor<T>& input, std::int64_t l) {
  if (input.rank() != 5) throw ShapeError("im2col input must have rank 5 (N,X,Y,Z,C), got " + input.shape().str());
  if (l < 1 || l % 2 == 0) throw ArgumentError("im2col kernel side must be odd and positive, got " + std::to_string(l));
  const std::int64_t kdim = input.dim(4) * l * l * l;
  const std::int64_t ncols = input.dim(0) * input.dim(1) * input.dim(2) * input.dim(3);
  Tensor<T> cols(Shape{kdim, ncols});
  detail::im2col_into(input, l, 0, input.dim(0), cols.data());
  return cols;
}

// Writes the convolution of `input` with `f` into `out` (shape (N,X,Y,Z,M),
// preallocated by the caller).  Exposed so timing loops can reuse the output
// buffer; most callers want conv3d_forward below.
template <typename T>
void conv3d_forward_into(const Tensor<T>& input, const ConvFilter<T>& f, Tensor<T>& out,
                         ConvMode mode = ConvMode::gemm, int threads = 1,
                         std::int64_t budget_bytes = kDefaultIm2colBudgetBytes) {
  detail::check_conv_args(input, f);
  Shape want{input.dim(0), input.dim(1), input.dim(2), input.dim(3), f.out_channels()};
  if (out.shape() != want) throw ShapeError("conv output buffer has shape " + out.shape().str() + ", expected " + want.str());
  if (mode == ConvMode::gemm)
    detail::conv3d_forward_gemm_into(input, f, out, threads, budget_bytes);
  else
    detail::conv3d_forward_naive_into(input, f, out);
}

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const ConvFilter<T>& f, ConvMode mode = ConvMode::gemm,
                         int threads = 1, std::int64_t budget_bytes = kDefaultIm2colBudgetBytes) {
  detail::check_conv_args(input, f);
  Tensor<T> out(Shape{input.dim(0), input.dim(1), input.dim(2), input.dim(3), f.out_channels()});
  conv3d_forward_into(input, f, out, mode, threads, budget_bytes);
  return out;
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;    // same shape as the forward input
  Tensor<T> weights;  // same shape as f.weights
  Tensor<T> bias;     // (M)
};

// Gradients of L = <grad_out, conv3d_forward(input, f)> with respect to each
// argument.  Two lowered products per batch slice: grad_W = cols * g^T and
// grad_cols = W * g, followed by a col2im scatter.
template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& input, const ConvFilter<T>& f, const Tensor<T>& grad_out,
                             int threads = 1, std::int64_t budget_bytes = kDefaultIm2colBudgetBytes) {
  detail::check_conv_args(input, f);
  Shape want{input.dim(0), input.dim(1), input.dim(2), input.dim(3), f.out_channels()};
  if (grad_out.shape() != want) throw ShapeError("conv grad_out has shape " + grad_out.shape().str() + ", expected " + want.str());

  const std::int64_t N = input.dim(0), XYZ = input.dim(1) * input.dim(2) * input.dim(3);
  const std::int64_t l = f.side(), M = f.out_channels();
  const std::int64_t kdim = f.in_channels() * l * l * l;

  ConvGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(f.weights.shape()), Tensor<T>(f.bias.shape())};
  for (std::int64_t i = 0; i < grad_out.numel(); ++i) g.bias[i % M] += grad_out[i];

  static thread_local std::vector<T> cols, gmat, gcols;
  const std::int64_t step = detail::conv_slice_batches(input, kdim, budget_bytes);
  for (std::int64_t b0 = 0; b0 < N; b0 += step) {
    const std::int64_t b1 = std::min(N, b0 + step);
    const std::int64_t ncols = (b1 - b0) * XYZ;
    cols.resize(static_cast<std::size_t>(kdim * ncols));
    gmat.resize(static_cast<std::size_t>(M * ncols));
    gcols.resize(static_cast<std::size_t>(kdim * ncols));
    detail::im2col_into(input, l, b0, b1, cols.data());

    const T* go = grad_out.data() + b0 * XYZ * M;
    for (std::int64_t j = 0; j < ncols; ++j)
      for (std::int64_t m = 0; m < M; ++m) gmat[static_cast<std::size_t>(m * ncols + j)] = *go++;

    // grad of the (kdim x M) weight matrix, accumulated across slices.
    gemm<T>(kdim, ncols, M, cols.data(), false, gmat.data(), true, g.weights.data(), b0 == 0 ? T(0) : T(1), threads);
    gemm<T>(kdim, M, ncols, f.weights.data(), false, gmat.data(), false, gcols.data(), T(0), threads);
    detail::col2im_add(g.input, l, b0, b1, gcols.data());
  }
  return g;
}

// One timing measurement of the lowered convolution; shared by the benchmark
// sweep and its CSV/JSON reports.  flop_count counts multiply-accumulates of
// the matrix product (m*k*n), which is constant across one sweep family.
struct BenchRecord {
  std::int64_t k = 0;  // segmentation rate label (0 when not part of a sweep)
  GemmShape gemm{};
  std::int64_t reps = 0;
  int threads = 1;
  double total_ms = 0, mean_ms = 0, std_ms = 0;
  std::int64_t flop_count = 0;
};

inline const char* bench_csv_header() { return "k,m,kdim,n,reps,threads,total_ms,mean_ms,std_ms"; }

inline std::string bench_csv_row(const BenchRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%lld,%lld,%lld,%lld,%d,%.6f,%.6f,%.6f",
                static_cast<long long>(r.k), static_cast<long long>(r.gemm.m), static_cast<long long>(r.gemm.k),
                static_cast<long long>(r.gemm.n), static_cast<long long>(r.reps), r.threads, r.total_ms, r.mean_ms, r.std_ms);
  return buf;
}

// Times `reps` gemm-mode forward passes over fresh seeded random data.  The
// first pass is a warm-up that also sizes the scratch buffers, so the timed
// reps measure steady state (no allocation, no data generation).
template <typename T = float>
BenchRecord timed_conv(const Shape& input_shape, const Shape& filter_shape, std::int64_t reps, int threads = 1,
                       std::uint64_t seed = 0x5EED, std::int64_t k_label = 0) {
  if (reps < 1) throw ArgumentError("timed_conv needs reps >= 1");
  const GemmShape gs = gemm_shape(input_shape, filter_shape);

  Rng rng(seed);
  Rng wrng = rng.fork(1), brng = rng.fork(2);
  Tensor<T> input = rng_uniform<T>(rng, input_shape, -1.0, 1.0);
  ConvFilter<T> f(rng_uniform<T>(wrng, filter_shape, -0.1, 0.1), rng_uniform<T>(brng, Shape{filter_shape[4]}, -0.1, 0.1));
  Tensor<T> out(Shape{input_shape[0], input_shape[1], input_shape[2], input_shape[3], filter_shape[4]});

  conv3d_forward_into(input, f, out, ConvMode::gemm, threads);  // warm-up, untimed

  volatile T sink = 0;
  double total = 0, total_sq = 0;
  for (std::int64_t r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    conv3d_forward_into(input, f, out, ConvMode::gemm, threads);
    const auto t1 = std::chrono::steady_clock::now();
    sink = sink + out[0];
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    total += ms;
    total_sq += ms * ms;
  }

  BenchRecord rec;
  rec.k = k_label;
  rec.gemm = gs;
  rec.reps = reps;
  rec.threads = threads;
  rec.total_ms = total;
  rec.mean_ms = total / static_cast<double>(reps);
  rec.std_ms = reps > 1 ? std::sqrt(std::max(0.0, (total_sq - total * total / static_cast<double>(reps)) / static_cast<double>(reps - 1))) : 0.0;
  rec.flop_count = gs.macs();
  return rec;
}

}  // namespace rcn
