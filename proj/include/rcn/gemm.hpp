#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <thread>
#include <vector>

#include "rcn/errors.hpp"

// Cache-blocked GEMM with packed operand panels and a register-tiled micro
// kernel built on GCC vector extensions.  Single dependency-free translation
// path for float and double; used by the convolution lowering and the dense
// layers, so the whole engine shares one deterministic accumulation order.
//
// C (m x n, row-major) = op(A) (m x k) * op(B) (k x n) + beta * C
//
// Blocking follows the usual three-level scheme: B is packed into KC x NR
// column strips, A into MC x KC panels of MR-row groups, and the micro kernel
// accumulates an MR x NR tile of C in vector registers.  The packed-B buffer
// is sized to stay L2-resident so that, even for row counts at or below MR
// (where every packed value is consumed exactly once), packing never turns
// into an extra round trip through shared cache.  Defaults in GemmConfig are
// tuned for a 48 KiB L1d / 2 MiB L2 AVX-512 core.

namespace rcn {

struct GemmConfig {
  int mc = 128;  // rows of A packed per panel (multiple of 8)
  int kc = 320;  // shared dimension per panel; B strip = kc*NR values
  int nc = 512;  // columns of B packed per panel (multiple of NR)
};

namespace detail {

template <typename T>
struct VecOf;
template <>
struct VecOf<float> {
  typedef float type __attribute__((vector_size(64), aligned(4)));
  static constexpr int width = 16;
};
template <>
struct VecOf<double> {
  typedef double type __attribute__((vector_size(64), aligned(8)));
  static constexpr int width = 8;
};

inline constexpr int kMR = 8;  // micro tile rows

template <typename T>
inline constexpr int kNR = VecOf<T>::width;  // micro tile columns = one vector

// kc steps of rank-1 update into an MR x NR accumulator, then
// C = beta * C + acc with row/column masking (packed panels are zero padded,
// so masked lanes hold 0).  One vector per row keeps the accumulator, the B
// vector and the broadcast A value comfortably inside the register file.
template <typename T>
void gemm_micro(const T* ap, const T* bp, T* c, std::int64_t ldc, int kc, int mr, int nr, T beta) {
  using V = typename VecOf<T>::type;
  constexpr int NR = kNR<T>;

  V acc[kMR] = {};
  for (int p = 0; p < kc; ++p) {
    const V b = *reinterpret_cast<const V*>(bp + p * NR);
    for (int i = 0; i < kMR; ++i) acc[i] += (V{} + ap[p * kMR + i]) * b;
  }
  for (int i = 0; i < mr; ++i) {
    T* crow = c + i * ldc;
    if (nr == NR) {
      V* cv = reinterpret_cast<V*>(crow);
      if (beta == T(0))
        *cv = acc[i];
      else if (beta == T(1))
        *cv += acc[i];
      else
        *cv = beta * *cv + acc[i];
    } else {
      alignas(64) T tmp[NR];
      *reinterpret_cast<V*>(tmp) = acc[i];
      if (beta == T(0))
        for (int j = 0; j < nr; ++j) crow[j] = tmp[j];
      else if (beta == T(1))
        for (int j = 0; j < nr; ++j) crow[j] += tmp[j];
      else
        for (int j = 0; j < nr; ++j) crow[j] = beta * crow[j] + tmp[j];
    }
  }
}

// Packs op(A)[ic..ic+mc, pc..pc+kc] into MR-row interleaved groups, zero
// padding the row remainder so the micro kernel never branches on it.
template <typename T>
void pack_a(const T* a, bool trans_a, std::int64_t m, std::int64_t k,
            std::int64_t ic, int mc, std::int64_t pc, int kc, T* buf) {
  for (int i0 = 0; i0 < mc; i0 += kMR) {
    T* g = buf + static_cast<std::int64_t>(i0) * kc;
    const int mr = std::min(kMR, mc - i0);
    if (!trans_a) {
      for (int i = 0; i < kMR; ++i) {
        if (i < mr) {
          const T* src = a + (ic + i0 + i) * k + pc;
          for (int p = 0; p < kc; ++p) g[p * kMR + i] = src[p];
        } else {
          for (int p = 0; p < kc; ++p) g[p * kMR + i] = T(0);
        }
      }
    } else {
      for (int p = 0; p < kc; ++p) {
        const T* src = a + (pc + p) * m + ic + i0;
        int i = 0;
        for (; i < mr; ++i) g[p * kMR + i] = src[i];
        for (; i < kMR; ++i) g[p * kMR + i] = T(0);
      }
    }
  }
}

// Packs op(B)[pc..pc+kc, jc..jc+nc] into NR-column strips, zero padding the
// column remainder.
template <typename T>
void pack_b(const T* b, bool trans_b, std::int64_t k, std::int64_t n,
            std::int64_t pc, int kc, std::int64_t jc, int nc, T* buf) {
  constexpr int NR = kNR<T>;
  if (!trans_b) {
    // Row-outer order reads each B row exactly once, sequentially; the strip
    // buffers being written live in L2, so the scattered stores are cheap.
    for (int p = 0; p < kc; ++p) {
      const T* src = b + (pc + p) * n + jc;
      T* dst = buf + p * NR;
      int j0 = 0;
      for (; j0 + NR <= nc; j0 += NR) {
        std::memcpy(dst, src + j0, NR * sizeof(T));
        dst += static_cast<std::int64_t>(kc) * NR;
      }
      if (j0 < nc) {
        int j = 0;
        for (; j0 + j < nc; ++j) dst[j] = src[j0 + j];
        for (; j < NR; ++j) dst[j] = T(0);
      }
    }
  } else {
    for (int j0 = 0; j0 < nc; j0 += NR) {
      T* strip = buf + static_cast<std::int64_t>(j0) * kc;
      const int nr = std::min(NR, nc - j0);
      for (int j = 0; j < NR; ++j) {
        if (j < nr) {
          const T* src = b + (jc + j0 + j) * k + pc;
          for (int p = 0; p < kc; ++p) strip[p * NR + j] = src[p];
        } else {
          for (int p = 0; p < kc; ++p) strip[p * NR + j] = T(0);
        }
      }
    }
  }
}

// Full blocked GEMM over the column range [n0, n1) of C; every C element in
// that range is written exactly once per call, so column-partitioned workers
// stay independent and results do not depend on the worker count.
template <typename T>
void gemm_worker(std::int64_t m, std::int64_t k, std::int64_t n,
                 const T* a, bool trans_a, const T* b, bool trans_b,
                 T* c, T beta, std::int64_t n0, std::int64_t n1, const GemmConfig& cfg) {
  constexpr int NR = kNR<T>;
  if (n0 >= n1) return;

  const int nc_round = (cfg.nc + NR - 1) / NR * NR;
  std::vector<T> bbuf(static_cast<std::size_t>(cfg.kc) * nc_round);
  std::vector<T> abuf(static_cast<std::size_t>(cfg.mc) * cfg.kc);

  for (std::int64_t jc = n0; jc < n1; jc += cfg.nc) {
    const int ncb = static_cast<int>(std::min<std::int64_t>(cfg.nc, n1 - jc));

    for (std::int64_t pc = 0; pc < k; pc += cfg.kc) {
      const int kcb = static_cast<int>(std::min<std::int64_t>(cfg.kc, k - pc));
      // The first k block applies beta; later blocks accumulate on top.
      const T beta_eff = pc == 0 ? beta : T(1);
      pack_b(b, trans_b, k, n, pc, kcb, jc, ncb, bbuf.data());

      for (std::int64_t ic = 0; ic < m; ic += cfg.mc) {
        const int mcb = static_cast<int>(std::min<std::int64_t>(cfg.mc, m - ic));
        pack_a(a, trans_a, m, k, ic, mcb, pc, kcb, abuf.data());

        for (int j0 = 0; j0 < ncb; j0 += NR) {
          const int nr = std::min(NR, ncb - j0);
          const T* strip = bbuf.data() + static_cast<std::int64_t>(j0) * kcb;
          for (int i0 = 0; i0 < mcb; i0 += kMR) {
            const int mr = std::min(kMR, mcb - i0);
            gemm_micro(abuf.data() + static_cast<std::int64_t>(i0) * kcb, strip,
                       c + (ic + i0) * n + jc + j0, n, kcb, mr, nr, beta_eff);
          }
        }
      }
    }
  }
}

}  // namespace detail

// C = op(A) * op(B) + beta * C.  A is m x k (k x m when trans_a), B is k x n
// (n x k when trans_b), C is m x n; all row-major and densely packed.
// `threads` workers split the columns of C; the result is identical for any
// worker count because each element is produced by exactly one worker with a
// fixed accumulation order.
template <typename T>
void gemm(std::int64_t m, std::int64_t k, std::int64_t n,
          const T* a, bool trans_a, const T* b, bool trans_b,
          T* c, T beta = T(0), int threads = 1, const GemmConfig& cfg = {}) {
  if (m < 0 || k < 0 || n < 0) throw ArgumentError("gemm with negative extent");
  if (m == 0 || n == 0) return;
  if (k == 0) {
    // Degenerate product is all zeros; only the beta term remains.
    if (beta == T(0))
      std::memset(c, 0, static_cast<std::size_t>(m * n) * sizeof(T));
    else if (beta != T(1))
      for (std::int64_t i = 0; i < m * n; ++i) c[i] *= beta;
    return;
  }
  if (threads <= 1) {
    detail::gemm_worker<T>(m, k, n, a, trans_a, b, trans_b, c, beta, 0, n, cfg);
    return;
  }

  constexpr int NR = detail::kNR<T>;
  const std::int64_t strips = (n + NR - 1) / NR;
  const std::int64_t per = (strips + threads - 1) / threads;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    const std::int64_t n0 = std::min<std::int64_t>(n, t * per * NR);
    const std::int64_t n1 = std::min<std::int64_t>(n, (t + 1) * per * NR);
    pool.emplace_back([=] { detail::gemm_worker<T>(m, k, n, a, trans_a, b, trans_b, c, beta, n0, n1, cfg); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace rcn
