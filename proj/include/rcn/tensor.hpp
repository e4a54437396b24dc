#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rcn/errors.hpp"

namespace rcn {

// Dense row-major shapes up to rank 5.  Rank 5 covers the largest layout used
// anywhere in the engine: batched channel-last volumes (N, X, Y, Z, C).
class Shape {
 public:
  static constexpr int kMaxRank = 5;

  Shape() = default;
  Shape(std::initializer_list<std::int64_t> dims) {
    if (static_cast<int>(dims.size()) > kMaxRank)
      throw ShapeError("shape rank exceeds " + std::to_string(kMaxRank));
    for (std::int64_t d : dims) push_back(d);
  }

  void push_back(std::int64_t d) {
    if (rank_ == kMaxRank) throw ShapeError("shape rank exceeds 5");
    if (d < 0) throw ShapeError("negative extent " + std::to_string(d));
    dims_[rank_++] = d;
  }

  int rank() const { return rank_; }

  std::int64_t operator[](int i) const { return dims_[check(i)]; }
  std::int64_t& operator[](int i) { return dims_[check(i)]; }

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (int i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }

  bool operator==(const Shape& o) const {
    return rank_ == o.rank_ &&
           std::equal(dims_.begin(), dims_.begin() + rank_, o.dims_.begin());
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::ostringstream os;
    os << '(';
    for (int i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
    os << ')';
    return os.str();
  }

 private:
  int check(int i) const {
    if (i < 0 || i >= rank_) throw ShapeError("axis " + std::to_string(i) + " out of range for rank " + std::to_string(rank_));
    return i;
  }

  std::array<std::int64_t, kMaxRank> dims_{};
  int rank_ = 0;
};

// Dense row-major tensor owning its storage.  Value type is float or double;
// everything downstream (layers, GEMM, file IO) is templated on the same T.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor requires float or double");

 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(shape), data_(static_cast<std::size_t>(shape.numel()), fill) {}
  Tensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_.numel())
      throw ShapeError("value count " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return shape_.rank(); }
  std::int64_t dim(int i) const { return shape_[i]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t flat) { return data_[static_cast<std::size_t>(flat)]; }
  const T& operator[](std::int64_t flat) const { return data_[static_cast<std::size_t>(flat)]; }

  template <typename... Ix>
  T& operator()(Ix... ix) {
    return data_[flat(ix...)];
  }
  template <typename... Ix>
  const T& operator()(Ix... ix) const {
    return data_[flat(ix...)];
  }

  // Row-major flat offset of a multi-index; rank must match exactly.
  template <typename... Ix>
  std::size_t flat(Ix... ix) const {
    static_assert((std::is_integral_v<Ix> && ...));
    if (sizeof...(Ix) != static_cast<std::size_t>(shape_.rank()))
      throw ShapeError("index rank mismatch for shape " + shape_.str());
    const std::int64_t idx[] = {static_cast<std::int64_t>(ix)...};
    std::int64_t off = 0;
    for (int a = 0; a < shape_.rank(); ++a) off = off * shape_[a] + idx[a];
    return static_cast<std::size_t>(off);
  }

  // Same data, new shape (element counts must agree).
  Tensor<T> reshaped(Shape s) const {
    if (s.numel() != numel()) throw ShapeError("reshape " + shape_.str() + " -> " + s.str() + " changes element count");
    Tensor<T> out;
    out.shape_ = s;
    out.data_ = data_;
    return out;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
T tensor_sum(const Tensor<T>& t) {
  T s = 0;
  for (std::int64_t i = 0; i < t.numel(); ++i) s += t[i];
  return s;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  T m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Pads `t` with zeros; pads[i] = {before, after} for axis i.
template <typename T>
Tensor<T> zero_pad(const Tensor<T>& t, const std::vector<std::pair<std::int64_t, std::int64_t>>& pads) {
  if (static_cast<int>(pads.size()) != t.rank())
    throw ShapeError("zero_pad expects one {before,after} pair per axis");
  Shape out_shape;
  for (int a = 0; a < t.rank(); ++a) {
    if (pads[a].first < 0 || pads[a].second < 0) throw ArgumentError("negative padding");
    out_shape.push_back(t.dim(a) + pads[a].first + pads[a].second);
  }
  Tensor<T> out(out_shape);
  if (t.numel() == 0) return out;

  // Copy the innermost axis as contiguous runs; walk the outer axes with an
  // odometer over the source index space.
  const int r = t.rank();
  std::array<std::int64_t, Shape::kMaxRank> idx{};
  const std::int64_t run = t.dim(r - 1);
  for (;;) {
    std::int64_t src_off = 0, dst_off = 0;
    for (int a = 0; a < r; ++a) {
      src_off = src_off * t.dim(a) + idx[a];
      dst_off = dst_off * out_shape[a] + idx[a] + pads[a].first;
    }
    std::memcpy(out.data() + dst_off, t.data() + src_off, static_cast<std::size_t>(run) * sizeof(T));
    int a = r - 2;
    for (; a >= 0; --a) {
      if (++idx[a] < t.dim(a)) break;
      idx[a] = 0;
    }
    if (a < 0) break;
  }
  return out;
}

// Concatenates channel-last tensors along the final axis.  All leading axes
// must agree; ranks must agree.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat_channels of zero tensors");
  const int r = parts[0].rank();
  if (r < 1) throw ShapeError("concat_channels needs rank >= 1");
  std::int64_t channels = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw ShapeError("concat_channels rank mismatch");
    for (int a = 0; a + 1 < r; ++a)
      if (p.dim(a) != parts[0].dim(a))
        throw ShapeError("concat_channels leading extent mismatch at axis " + std::to_string(a));
    channels += p.dim(r - 1);
  }
  Shape out_shape;
  for (int a = 0; a + 1 < r; ++a) out_shape.push_back(parts[0].dim(a));
  out_shape.push_back(channels);
  Tensor<T> out(out_shape);

  std::int64_t outer = 1;
  for (int a = 0; a + 1 < r; ++a) outer *= parts[0].dim(a);
  std::int64_t dst_c0 = 0;
  for (const auto& p : parts) {
    const std::int64_t c = p.dim(r - 1);
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * channels + dst_c0, p.data() + o * c, static_cast<std::size_t>(c) * sizeof(T));
    dst_c0 += c;
  }
  return out;
}

// Copies the axis-aligned box [origin, origin + extent) out of `t`.
template <typename T>
Tensor<T> slice_box(const Tensor<T>& t, const std::vector<std::int64_t>& origin, const std::vector<std::int64_t>& extent) {
  const int r = t.rank();
  if (static_cast<int>(origin.size()) != r || static_cast<int>(extent.size()) != r)
    throw ShapeError("slice_box origin/extent rank mismatch");
  Shape out_shape;
  for (int a = 0; a < r; ++a) {
    if (extent[a] < 0) throw ArgumentError("negative slice extent");
    if (origin[a] < 0 || origin[a] + extent[a] > t.dim(a))
      throw ShapeError("slice_box out of bounds on axis " + std::to_string(a) + ": [" + std::to_string(origin[a]) + "," + std::to_string(origin[a] + extent[a]) + ") vs extent " + std::to_string(t.dim(a)));
    out_shape.push_back(extent[a]);
  }
  Tensor<T> out(out_shape);
  if (out.numel() == 0) return out;

  std::array<std::int64_t, Shape::kMaxRank> idx{};
  const std::int64_t run = extent[r - 1];
  for (;;) {
    std::int64_t src_off = 0, dst_off = 0;
    for (int a = 0; a < r; ++a) {
      src_off = src_off * t.dim(a) + origin[a] + idx[a];
      dst_off = dst_off * out_shape[a] + idx[a];
    }
    std::memcpy(out.data() + dst_off, t.data() + src_off, static_cast<std::size_t>(run) * sizeof(T));
    int a = r - 2;
    for (; a >= 0; --a) {
      if (++idx[a] < extent[a]) break;
      idx[a] = 0;
    }
    if (a < 0) break;
  }
  return out;
}

}  // namespace rcn
