#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rcn/tensor.hpp"

// Regional segmentation: split an aligned volume into k^3 adjacent regions of
// size (floor(X/k), floor(Y/k), floor(Z/k)), grow each region by a boundary
// toward the volume interior, optionally reflect regions to shape their
// cross-channel overlap, and stack the regions along the channel axis.

namespace rcn {

// Orientation of one region: a per-axis reflection encoded in three bits
// (bit 2 = flip x, bit 1 = flip y, bit 0 = flip z); 0 is the identity.
using Orientation = int;
inline constexpr int kOrientations = 8;

struct SegmentationPlan {
  std::int64_t k = 1;
  std::array<std::int64_t, 3> input_shape{};   // (X, Y, Z)
  std::array<std::int64_t, 3> core{};          // floor(extent / k) per axis
  std::array<std::int64_t, 3> region_shape{};  // core + boundary (k >= 2)
  std::int64_t boundary = 3;
  // Region source boxes in row-major (rx, ry, rz) order; extent is always
  // region_shape, and origins may poke past the volume edge — those voxels
  // read as zero.
  std::vector<std::array<std::int64_t, 3>> origins;
  std::vector<Orientation> orientation;  // one per region

  std::int64_t regions() const { return static_cast<std::int64_t>(origins.size()); }
};

template <typename T>
struct SegmentedVolume {
  Tensor<T> data;  // (X',Y',Z',k^3) or (N,X',Y',Z',k^3)
  SegmentationPlan plan;
};

// Region boxes: the k^3 cores tile the core grid (k*floor(X/k), ...) exactly;
// the boundary extends each box toward the interior.  Edge regions push the
// whole boundary through their single interior face; interior regions (k >= 3)
// split it ceil/floor across their two interior faces.  k = 1 is the identity
// plan (whole volume, no growth).
inline SegmentationPlan make_plan(const std::array<std::int64_t, 3>& input_shape, std::int64_t k, std::int64_t boundary = 3) {
  if (k < 1) throw ArgumentError("segmentation rate must be >= 1, got " + std::to_string(k));
  if (boundary < 0) throw ArgumentError("boundary must be >= 0, got " + std::to_string(boundary));
  for (int a = 0; a < 3; ++a)
    if (input_shape[static_cast<std::size_t>(a)] < k)
      throw ArgumentError("segmentation rate " + std::to_string(k) + " exceeds extent " + std::to_string(input_shape[static_cast<std::size_t>(a)]) + " on axis " + std::to_string(a));

  SegmentationPlan plan;
  plan.k = k;
  plan.input_shape = input_shape;
  plan.boundary = k == 1 ? 0 : boundary;
  for (int a = 0; a < 3; ++a) {
    plan.core[static_cast<std::size_t>(a)] = input_shape[static_cast<std::size_t>(a)] / k;
    plan.region_shape[static_cast<std::size_t>(a)] = plan.core[static_cast<std::size_t>(a)] + plan.boundary;
  }

  const auto axis_origin = [&](int a, std::int64_t r) -> std::int64_t {
    const std::int64_t base = r * plan.core[static_cast<std::size_t>(a)];
    if (k == 1) return 0;
    if (r == 0) return base;                                  // grow high (interior)
    if (r == k - 1) return base - plan.boundary;              // grow low (interior)
    return base - (plan.boundary + 1) / 2;                    // split ceil low / floor high
  };

  for (std::int64_t rx = 0; rx < k; ++rx)
    for (std::int64_t ry = 0; ry < k; ++ry)
      for (std::int64_t rz = 0; rz < k; ++rz) {
        plan.origins.push_back({axis_origin(0, rx), axis_origin(1, ry), axis_origin(2, rz)});
        plan.orientation.push_back(0);
      }
  return plan;
}

namespace detail {

// Copies one region of a single (X,Y,Z) volume into `dst` (channel-strided by
// `nch`), applying the reflection and zero-filling voxels outside the volume.
template <typename T>
void extract_region(const T* vol, const std::array<std::int64_t, 3>& vshape, const SegmentationPlan& plan,
                    std::int64_t region, Orientation o, T* dst, std::int64_t nch) {
  const auto& org = plan.origins[static_cast<std::size_t>(region)];
  const auto& ext = plan.region_shape;
  const std::int64_t X = vshape[0], Y = vshape[1], Z = vshape[2];
  std::int64_t w = 0;
  for (std::int64_t i = 0; i < ext[0]; ++i) {
    const std::int64_t sx = org[0] + ((o & 4) ? ext[0] - 1 - i : i);
    for (std::int64_t j = 0; j < ext[1]; ++j) {
      const std::int64_t sy = org[1] + ((o & 2) ? ext[1] - 1 - j : j);
      for (std::int64_t l = 0; l < ext[2]; ++l, ++w) {
        const std::int64_t sz = org[2] + ((o & 1) ? ext[2] - 1 - l : l);
        const bool in = sx >= 0 && sx < X && sy >= 0 && sy < Y && sz >= 0 && sz < Z;
        dst[w * nch] = in ? vol[(sx * Y + sy) * Z + sz] : T(0);
      }
    }
  }
}

}  // namespace detail

// Stacks the plan's regions along the channel axis.  Accepts a single (X,Y,Z)
// volume or a batch (N,X,Y,Z,1); output channel c holds region c (row-major
// region-grid order) after its reflection.
template <typename T>
SegmentedVolume<T> segment(const Tensor<T>& volume, const SegmentationPlan& plan) {
  const bool batched = volume.rank() == 5;
  if (batched) {
    if (volume.dim(4) != 1) throw ShapeError("segment expects a single input channel, got " + volume.shape().str());
  } else if (volume.rank() != 3) {
    throw ShapeError("segment expects rank 3 (X,Y,Z) or rank 5 (N,X,Y,Z,1), got " + volume.shape().str());
  }
  const std::array<std::int64_t, 3> vshape{volume.dim(batched ? 1 : 0), volume.dim(batched ? 2 : 1), volume.dim(batched ? 3 : 2)};
  if (vshape != plan.input_shape)
    throw ShapeError("segment volume shape (" + std::to_string(vshape[0]) + "," + std::to_string(vshape[1]) + "," + std::to_string(vshape[2]) + ") does not match the plan");

  const std::int64_t N = batched ? volume.dim(0) : 1;
  const std::int64_t nch = plan.regions();
  const auto& ext = plan.region_shape;
  const std::int64_t region_voxels = ext[0] * ext[1] * ext[2];
  const std::int64_t vol_voxels = vshape[0] * vshape[1] * vshape[2];

  Shape out_shape;
  if (batched) out_shape.push_back(N);
  out_shape.push_back(ext[0]);
  out_shape.push_back(ext[1]);
  out_shape.push_back(ext[2]);
  out_shape.push_back(nch);

  SegmentedVolume<T> out{Tensor<T>(out_shape), plan};
  for (std::int64_t b = 0; b < N; ++b) {
    const T* vol = volume.data() + b * vol_voxels;
    T* dst = out.data.data() + b * region_voxels * nch;
    for (std::int64_t c = 0; c < nch; ++c)
      detail::extract_region(vol, vshape, plan, c, plan.orientation[static_cast<std::size_t>(c)], dst + c, nch);
  }
  return out;
}

enum class OrientMode { native, min_overlap, max_overlap };

inline OrientMode parse_orient_mode(const std::string& s) {
  if (s == "native") return OrientMode::native;
  if (s == "min_overlap") return OrientMode::min_overlap;
  if (s == "max_overlap") return OrientMode::max_overlap;
  throw ArgumentError("unknown orientation mode '" + s + "' (expected native, min_overlap or max_overlap)");
}

namespace detail {

// Soft Jaccard between a binary mask and the running mean of earlier masks.
inline double soft_jaccard(const std::vector<float>& mask, const std::vector<float>& mean) {
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    inter += std::min(mask[i], mean[i]);
    uni += std::max(mask[i], mean[i]);
  }
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace detail

// Chooses a reflection per region.  native resets every region to the
// identity; min_overlap / max_overlap walk the regions in channel order and
// pick, per region, the reflection whose foreground mask (|value| > tau on
// the reference volume) has the smallest / largest soft-Jaccard agreement
// with the running mean of the masks already chosen.  Ties keep the lowest
// orientation code, so the identity wins on an uninformative reference.
template <typename T>
SegmentationPlan orient_regions(const SegmentationPlan& plan, OrientMode mode, const Tensor<T>& reference, double tau = 0.0) {
  if (reference.rank() != 3) throw ShapeError("orientation reference must have rank 3 (X,Y,Z), got " + reference.shape().str());
  const std::array<std::int64_t, 3> vshape{reference.dim(0), reference.dim(1), reference.dim(2)};
  if (vshape != plan.input_shape) throw ShapeError("orientation reference shape " + reference.shape().str() + " does not match the plan");

  SegmentationPlan out = plan;
  std::fill(out.orientation.begin(), out.orientation.end(), 0);
  if (mode == OrientMode::native) return out;

  const auto& ext = plan.region_shape;
  const std::size_t voxels = static_cast<std::size_t>(ext[0] * ext[1] * ext[2]);
  std::vector<T> region(voxels);
  std::vector<float> mask(voxels), best_mask(voxels), mean(voxels, 0.0f);

  for (std::int64_t c = 0; c < plan.regions(); ++c) {
    Orientation best = 0;
    double best_score = 0;
    for (Orientation o = 0; o < kOrientations; ++o) {
      detail::extract_region(reference.data(), vshape, plan, c, o, region.data(), 1);
      for (std::size_t i = 0; i < voxels; ++i) mask[i] = std::abs(static_cast<double>(region[i])) > tau ? 1.0f : 0.0f;
      const double score = detail::soft_jaccard(mask, mean);
      const bool better = mode == OrientMode::min_overlap ? score < best_score : score > best_score;
      if (o == 0 || better) {
        best = o;
        best_score = score;
        best_mask = mask;
      }
    }
    out.orientation[static_cast<std::size_t>(c)] = best;
    const double n = static_cast<double>(c);
    for (std::size_t i = 0; i < voxels; ++i) mean[i] = static_cast<float>((mean[i] * n + best_mask[i]) / (n + 1.0));
  }
  return out;
}

// Mean over unordered channel pairs of the Jaccard index of their foreground
// masks (foreground = |value| > tau).  1.0 for identical channels, 0.0 for
// disjoint (or empty) ones; defined as 1.0 for fewer than two channels.
template <typename T>
double overlap_score(const SegmentedVolume<T>& seg, double tau = 0.0) {
  const Tensor<T>& d = seg.data;
  const std::int64_t nch = d.dim(d.rank() - 1);
  if (nch < 2) return 1.0;
  const std::int64_t voxels = d.numel() / nch;

  std::vector<std::vector<bool>> masks(static_cast<std::size_t>(nch), std::vector<bool>(static_cast<std::size_t>(voxels)));
  for (std::int64_t i = 0; i < d.numel(); ++i)
    masks[static_cast<std::size_t>(i % nch)][static_cast<std::size_t>(i / nch)] = std::abs(static_cast<double>(d[i])) > tau;

  double total = 0;
  std::int64_t pairs = 0;
  for (std::int64_t a = 0; a < nch; ++a)
    for (std::int64_t b = a + 1; b < nch; ++b, ++pairs) {
      std::int64_t inter = 0, uni = 0;
      for (std::int64_t v = 0; v < voxels; ++v) {
        const bool ma = masks[static_cast<std::size_t>(a)][static_cast<std::size_t>(v)];
        const bool mb = masks[static_cast<std::size_t>(b)][static_cast<std::size_t>(v)];
        inter += ma && mb;
        uni += ma || mb;
      }
      total += static_cast<double>(inter) / static_cast<double>(std::max<std::int64_t>(1, uni));
    }
  return total / static_cast<double>(pairs);
}

}  // namespace rcn
