#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "rcn/gemm.hpp"
#include "rcn/tensor.hpp"

// Pointwise, pooling, normalization and dense layers with explicit forward
// and backward passes.  Everything is a pure function of its inputs except
// batchnorm_forward in train mode, which updates the running statistics of
// the state it is given (single-writer during training).

namespace rcn {

// ---------------------------------------------------------------------------
// eLU, alpha = 1: y = x for x > 0, e^x - 1 otherwise.

template <typename T>
Tensor<T> elu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : static_cast<T>(std::exp(static_cast<double>(x[i])) - 1.0);
  return y;
}

template <typename T>
Tensor<T> elu_backward(const Tensor<T>& x, const Tensor<T>& grad_y) {
  if (x.shape() != grad_y.shape()) throw ShapeError("elu_backward shape mismatch " + x.shape().str() + " vs " + grad_y.shape().str());
  Tensor<T> gx(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    gx[i] = x[i] > T(0) ? grad_y[i] : static_cast<T>(static_cast<double>(grad_y[i]) * std::exp(static_cast<double>(x[i])));
  return gx;
}

// ---------------------------------------------------------------------------
// 2x2x2 max pooling, stride 2, over the spatial axes of (N,X,Y,Z,C).
// Output extents are ceil(in/2): boundary windows simply clip to the
// in-bounds voxels (identical to padding with -inf).  argmax records the flat
// input index feeding each output, with first-occurrence tie-breaking in
// row-major window order.

template <typename T>
struct MaxPoolResult {
  Tensor<T> y;                       // (N, ceil(X/2), ceil(Y/2), ceil(Z/2), C)
  std::vector<std::int64_t> argmax;  // flat index into the input, one per output value
  Shape in_shape;
};

template <typename T>
MaxPoolResult<T> maxpool3d_forward(const Tensor<T>& x) {
  if (x.rank() != 5) throw ShapeError("maxpool3d input must have rank 5 (N,X,Y,Z,C), got " + x.shape().str());
  const std::int64_t N = x.dim(0), X = x.dim(1), Y = x.dim(2), Z = x.dim(3), C = x.dim(4);
  const std::int64_t OX = (X + 1) / 2, OY = (Y + 1) / 2, OZ = (Z + 1) / 2;

  MaxPoolResult<T> r{Tensor<T>(Shape{N, OX, OY, OZ, C}), {}, x.shape()};
  r.argmax.resize(static_cast<std::size_t>(r.y.numel()));

  std::int64_t o = 0;
  for (std::int64_t b = 0; b < N; ++b)
    for (std::int64_t px = 0; px < OX; ++px)
      for (std::int64_t py = 0; py < OY; ++py)
        for (std::int64_t pz = 0; pz < OZ; ++pz)
          for (std::int64_t c = 0; c < C; ++c, ++o) {
            T best{};
            std::int64_t best_i = -1;
            for (std::int64_t x2 = 2 * px; x2 < std::min(X, 2 * px + 2); ++x2)
              for (std::int64_t y2 = 2 * py; y2 < std::min(Y, 2 * py + 2); ++y2)
                for (std::int64_t z2 = 2 * pz; z2 < std::min(Z, 2 * pz + 2); ++z2) {
                  const std::int64_t i = static_cast<std::int64_t>(x.flat(b, x2, y2, z2, c));
                  if (best_i < 0 || x[i] > best) {
                    best = x[i];
                    best_i = i;
                  }
                }
            r.y[o] = best;
            r.argmax[static_cast<std::size_t>(o)] = best_i;
          }
  return r;
}

template <typename T>
Tensor<T> maxpool3d_backward(const MaxPoolResult<T>& fwd, const Tensor<T>& grad_y) {
  if (grad_y.shape() != fwd.y.shape()) throw ShapeError("maxpool3d_backward grad shape " + grad_y.shape().str() + " does not match pooled shape " + fwd.y.shape().str());
  Tensor<T> gx(fwd.in_shape);
  for (std::int64_t o = 0; o < grad_y.numel(); ++o) gx[fwd.argmax[static_cast<std::size_t>(o)]] += grad_y[o];
  return gx;
}

// ---------------------------------------------------------------------------
// Batch normalization over (N,X,Y,Z) per channel.

template <typename T>
struct BatchNormState {
  Tensor<T> gamma, beta;               // (C)
  Tensor<T> running_mean, running_var; // (C), eval-mode statistics
  T momentum = T(0.99);                // retention factor of the running stats
  T epsilon = T(1e-5);

  explicit BatchNormState(std::int64_t channels = 0)
      : gamma(Shape{channels}, T(1)), beta(Shape{channels}),
        running_mean(Shape{channels}), running_var(Shape{channels}, T(1)) {}

  std::int64_t channels() const { return gamma.dim(0); }
};

enum class BatchNormMode { train, eval };

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;              // normalized input, needed by backward
  std::vector<T> inv_std;      // per-channel 1/sqrt(var + eps)
};

template <typename T>
struct BatchNormResult {
  Tensor<T> y;
  BatchNormCache<T> cache;  // filled in train mode only
};

template <typename T>
BatchNormResult<T> batchnorm_forward(const Tensor<T>& x, BatchNormState<T>& state, BatchNormMode mode) {
  if (x.rank() != 5) throw ShapeError("batchnorm input must have rank 5 (N,X,Y,Z,C), got " + x.shape().str());
  const std::int64_t C = x.dim(4);
  if (C != state.channels()) throw ShapeError("batchnorm channel mismatch: input has " + std::to_string(C) + ", state has " + std::to_string(state.channels()));
  const std::int64_t R = x.numel() / C;  // reduce count per channel

  BatchNormResult<T> out{Tensor<T>(x.shape()), {}};
  if (mode == BatchNormMode::eval) {
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      const std::int64_t c = i % C;
      const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + static_cast<double>(state.epsilon)));
      out.y[i] = state.gamma[c] * ((x[i] - state.running_mean[c]) * inv) + state.beta[c];
    }
    return out;
  }

  std::vector<double> mean(static_cast<std::size_t>(C), 0.0), var(static_cast<std::size_t>(C), 0.0);
  for (std::int64_t i = 0; i < x.numel(); ++i) mean[static_cast<std::size_t>(i % C)] += static_cast<double>(x[i]);
  for (auto& m : mean) m /= static_cast<double>(R);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double d = static_cast<double>(x[i]) - mean[static_cast<std::size_t>(i % C)];
    var[static_cast<std::size_t>(i % C)] += d * d;
  }
  for (auto& v : var) v /= static_cast<double>(R);  // population variance

  out.cache.xhat = Tensor<T>(x.shape());
  out.cache.inv_std.resize(static_cast<std::size_t>(C));
  for (std::int64_t c = 0; c < C; ++c)
    out.cache.inv_std[static_cast<std::size_t>(c)] = static_cast<T>(1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + static_cast<double>(state.epsilon)));
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const std::int64_t c = i % C;
    const T xh = static_cast<T>((static_cast<double>(x[i]) - mean[static_cast<std::size_t>(c)]) * static_cast<double>(out.cache.inv_std[static_cast<std::size_t>(c)]));
    out.cache.xhat[i] = xh;
    out.y[i] = state.gamma[c] * xh + state.beta[c];
  }
  for (std::int64_t c = 0; c < C; ++c) {
    state.running_mean[c] = state.momentum * state.running_mean[c] + (T(1) - state.momentum) * static_cast<T>(mean[static_cast<std::size_t>(c)]);
    state.running_var[c] = state.momentum * state.running_var[c] + (T(1) - state.momentum) * static_cast<T>(var[static_cast<std::size_t>(c)]);
  }
  return out;
}

template <typename T>
struct BatchNormGrads {
  Tensor<T> x, gamma, beta;
};

// Backward through a train-mode forward (batch statistics participate in the
// gradient).
template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_y, const BatchNormCache<T>& cache, const BatchNormState<T>& state) {
  const Tensor<T>& xhat = cache.xhat;
  if (grad_y.shape() != xhat.shape()) throw ShapeError("batchnorm_backward grad shape " + grad_y.shape().str() + " does not match cached shape " + xhat.shape().str());
  const std::int64_t C = xhat.dim(4);
  const std::int64_t R = xhat.numel() / C;

  BatchNormGrads<T> g{Tensor<T>(xhat.shape()), Tensor<T>(Shape{C}), Tensor<T>(Shape{C})};
  std::vector<double> sum_gy(static_cast<std::size_t>(C), 0.0), sum_gy_xhat(static_cast<std::size_t>(C), 0.0);
  for (std::int64_t i = 0; i < grad_y.numel(); ++i) {
    const std::size_t c = static_cast<std::size_t>(i % C);
    sum_gy[c] += static_cast<double>(grad_y[i]);
    sum_gy_xhat[c] += static_cast<double>(grad_y[i]) * static_cast<double>(xhat[i]);
  }
  for (std::int64_t c = 0; c < C; ++c) {
    g.beta[c] = static_cast<T>(sum_gy[static_cast<std::size_t>(c)]);
    g.gamma[c] = static_cast<T>(sum_gy_xhat[static_cast<std::size_t>(c)]);
  }
  for (std::int64_t i = 0; i < grad_y.numel(); ++i) {
    const std::int64_t c = i % C;
    const std::size_t cu = static_cast<std::size_t>(c);
    const double gy = static_cast<double>(grad_y[i]);
    g.x[i] = static_cast<T>(static_cast<double>(state.gamma[c]) * static_cast<double>(cache.inv_std[cu]) / static_cast<double>(R) *
                            (static_cast<double>(R) * gy - sum_gy[cu] - static_cast<double>(xhat[i]) * sum_gy_xhat[cu]));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Dense layer: y = x W + b with x (N, fan_in), W (fan_in, fan_out).

template <typename T>
struct DenseLayer {
  Tensor<T> weights;  // (fan_in, fan_out)
  Tensor<T> bias;     // (fan_out)

  DenseLayer() = default;
  DenseLayer(Tensor<T> w, Tensor<T> b) : weights(std::move(w)), bias(std::move(b)) {
    if (weights.rank() != 2) throw ShapeError("dense weights must have rank 2, got " + weights.shape().str());
    if (bias.rank() != 1 || bias.dim(0) != weights.dim(1))
      throw ShapeError("dense bias must have shape (" + std::to_string(weights.dim(1)) + "), got " + bias.shape().str());
  }

  std::int64_t fan_in() const { return weights.dim(0); }
  std::int64_t fan_out() const { return weights.dim(1); }
};

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const DenseLayer<T>& layer, int threads = 1) {
  if (x.rank() != 2 || x.dim(1) != layer.fan_in())
    throw ShapeError("dense input must be (N," + std::to_string(layer.fan_in()) + "), got " + x.shape().str());
  const std::int64_t N = x.dim(0), fin = layer.fan_in(), fout = layer.fan_out();
  Tensor<T> y(Shape{N, fout});
  gemm<T>(N, fin, fout, x.data(), false, layer.weights.data(), false, y.data(), T(0), threads);
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += layer.bias[i % fout];
  return y;
}

template <typename T>
struct DenseGrads {
  Tensor<T> x, weights, bias;
};

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& x, const DenseLayer<T>& layer, const Tensor<T>& grad_y, int threads = 1) {
  const std::int64_t N = x.dim(0), fin = layer.fan_in(), fout = layer.fan_out();
  if (grad_y.shape() != Shape{N, fout}) throw ShapeError("dense grad shape " + grad_y.shape().str() + " does not match output (N," + std::to_string(fout) + ")");
  DenseGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(layer.weights.shape()), Tensor<T>(layer.bias.shape())};
  gemm<T>(N, fout, fin, grad_y.data(), false, layer.weights.data(), true, g.x.data(), T(0), threads);
  gemm<T>(fin, N, fout, x.data(), true, grad_y.data(), false, g.weights.data(), T(0), threads);
  for (std::int64_t i = 0; i < grad_y.numel(); ++i) g.bias[i % fout] += grad_y[i];
  return g;
}

// (N,X,Y,Z,C) -> (N, X*Y*Z*C); row-major, so this is a reshape.
template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("flatten needs rank >= 2, got " + x.shape().str());
  return x.reshaped(Shape{x.dim(0), x.numel() / x.dim(0)});
}

// ---------------------------------------------------------------------------
// Losses.

template <typename T>
double mse(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) throw ShapeError("mse shape mismatch " + pred.shape().str() + " vs " + target.shape().str());
  double s = 0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    s += d * d;
  }
  return s / static_cast<double>(pred.numel());
}

template <typename T>
double mae(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) throw ShapeError("mae shape mismatch " + pred.shape().str() + " vs " + target.shape().str());
  double s = 0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) s += std::abs(static_cast<double>(pred[i]) - static_cast<double>(target[i]));
  return s / static_cast<double>(pred.numel());
}

template <typename T>
Tensor<T> mse_grad(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) throw ShapeError("mse_grad shape mismatch " + pred.shape().str() + " vs " + target.shape().str());
  Tensor<T> g(pred.shape());
  const double scale = 2.0 / static_cast<double>(pred.numel());
  for (std::int64_t i = 0; i < pred.numel(); ++i) g[i] = static_cast<T>(scale * (static_cast<double>(pred[i]) - static_cast<double>(target[i])));
  return g;
}

}  // namespace rcn
