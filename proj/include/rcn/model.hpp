#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rcn/binio.hpp"
#include "rcn/conv.hpp"
#include "rcn/layers.hpp"
#include "rcn/rng.hpp"
#include "rcn/segmentation.hpp"

// Networks assembled from four copies of the block (conv, conv, batchnorm,
// maxpool) — every conv followed by an eLU — then flatten, a hidden dense
// layer with eLU, and a single linear output unit.  An ArchitectureSpec fully
// determines the network: block filter counts, segmentation rate (which fixes
// the input channels at k^3 and the spatial input at the region shape), and
// hidden width.

namespace rcn {

struct ArchitectureSpec {
  std::string name = "custom";
  std::array<std::int64_t, 4> block_filters{8, 16, 32, 64};
  std::int64_t k = 1;
  std::int64_t hidden_units = 256;
  std::array<std::int64_t, 3> input_shape{41, 49, 41};  // unsegmented volume
  std::int64_t boundary = 3;
  static constexpr std::int64_t kernel_side = 3;
  static constexpr std::int64_t output_units = 1;

  void validate() const {
    for (std::int64_t f : block_filters)
      if (f < 1) throw ArgumentError("block filter counts must be >= 1");
    if (hidden_units < 1) throw ArgumentError("hidden_units must be >= 1");
    if (k < 1) throw ArgumentError("segmentation rate must be >= 1");
    make_plan(input_shape, k, boundary);  // validates k against the extents
  }

  std::int64_t in_channels() const { return k * k * k; }

  // Spatial extents the network consumes: the region shape for k >= 2, the
  // volume itself for k = 1.
  std::array<std::int64_t, 3> region_shape() const { return make_plan(input_shape, k, boundary).region_shape; }
};

// The two canonical layouts plus their two ablations (same blocks, with the
// filter order and the segmentation toggled independently).
inline ArchitectureSpec spec_by_name(const std::string& name,
                                     std::array<std::int64_t, 3> input_shape = {41, 49, 41},
                                     std::int64_t boundary = 3) {
  ArchitectureSpec s;
  s.name = name;
  s.input_shape = input_shape;
  s.boundary = boundary;
  if (name == "baseline") {
    s.block_filters = {8, 16, 32, 64};
    s.k = 1;
  } else if (name == "proposed") {
    s.block_filters = {64, 32, 16, 8};
    s.k = 2;
  } else if (name == "segmentation-only") {
    s.block_filters = {8, 16, 32, 64};
    s.k = 2;
  } else if (name == "reverse-only") {
    s.block_filters = {64, 32, 16, 8};
    s.k = 1;
  } else {
    throw ArgumentError("unknown architecture '" + name + "' (expected baseline, proposed, segmentation-only or reverse-only)");
  }
  return s;
}

template <typename T>
struct ConvBlock {
  ConvFilter<T> conv1, conv2;
  BatchNormState<T> bn;
};

template <typename T>
struct Network {
  ArchitectureSpec spec;
  std::array<ConvBlock<T>, 4> blocks;
  DenseLayer<T> hidden, output;
  std::array<std::int64_t, 3> input_region{};  // spatial input extents
  std::int64_t flatten_size = 0;

  // All persistent tensors in serialization order (running stats included).
  std::vector<std::pair<std::string, Tensor<T>*>> state_tensors() {
    std::vector<std::pair<std::string, Tensor<T>*>> v;
    for (int i = 0; i < 4; ++i) {
      const std::string p = "block" + std::to_string(i + 1) + ".";
      v.emplace_back(p + "conv1.weights", &blocks[i].conv1.weights);
      v.emplace_back(p + "conv1.bias", &blocks[i].conv1.bias);
      v.emplace_back(p + "conv2.weights", &blocks[i].conv2.weights);
      v.emplace_back(p + "conv2.bias", &blocks[i].conv2.bias);
      v.emplace_back(p + "bn.gamma", &blocks[i].bn.gamma);
      v.emplace_back(p + "bn.beta", &blocks[i].bn.beta);
      v.emplace_back(p + "bn.running_mean", &blocks[i].bn.running_mean);
      v.emplace_back(p + "bn.running_var", &blocks[i].bn.running_var);
    }
    v.emplace_back("hidden.weights", &hidden.weights);
    v.emplace_back("hidden.bias", &hidden.bias);
    v.emplace_back("output.weights", &output.weights);
    v.emplace_back("output.bias", &output.bias);
    return v;
  }

  // Tensors touched by the optimizer, in a fixed documented order (running
  // statistics are not trainable).
  std::vector<Tensor<T>*> trainable_tensors() {
    std::vector<Tensor<T>*> v;
    for (int i = 0; i < 4; ++i) {
      v.push_back(&blocks[i].conv1.weights);
      v.push_back(&blocks[i].conv1.bias);
      v.push_back(&blocks[i].conv2.weights);
      v.push_back(&blocks[i].conv2.bias);
      v.push_back(&blocks[i].bn.gamma);
      v.push_back(&blocks[i].bn.beta);
    }
    v.push_back(&hidden.weights);
    v.push_back(&hidden.bias);
    v.push_back(&output.weights);
    v.push_back(&output.bias);
    return v;
  }
};

namespace detail {

inline std::int64_t pooled(std::int64_t e) { return (e + 1) / 2; }

template <typename T>
Tensor<T> xavier_uniform(Rng rng, Shape shape, std::int64_t fan_in, std::int64_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return rng_uniform<T>(rng, shape, -limit, limit);
}

}  // namespace detail

// Builds and Xavier-initializes a network.  Conv fans count the full
// receptive field (C*27 in, M*27 out); dense fans are the matrix extents.
// Each parameter tensor draws from its own fork of `seed`, so the layout of
// unrelated layers never shifts another layer's draws.
template <typename T>
Network<T> build(const ArchitectureSpec& spec, std::uint64_t seed) {
  spec.validate();
  Network<T> net;
  net.spec = spec;
  net.input_region = spec.region_shape();

  const std::int64_t l = ArchitectureSpec::kernel_side;
  const std::int64_t taps = l * l * l;
  Rng rng(seed);

  std::array<std::int64_t, 3> sp = net.input_region;
  std::int64_t c_in = spec.in_channels();
  for (int i = 0; i < 4; ++i) {
    const std::int64_t m = spec.block_filters[static_cast<std::size_t>(i)];
    net.blocks[i].conv1 = ConvFilter<T>(
        detail::xavier_uniform<T>(rng.fork(static_cast<std::uint64_t>(8 * i)), Shape{c_in, l, l, l, m}, c_in * taps, m * taps),
        Tensor<T>(Shape{m}));
    net.blocks[i].conv2 = ConvFilter<T>(
        detail::xavier_uniform<T>(rng.fork(static_cast<std::uint64_t>(8 * i + 1)), Shape{m, l, l, l, m}, m * taps, m * taps),
        Tensor<T>(Shape{m}));
    net.blocks[i].bn = BatchNormState<T>(m);
    for (auto& e : sp) e = detail::pooled(e);
    c_in = m;
  }
  net.flatten_size = sp[0] * sp[1] * sp[2] * c_in;

  net.hidden = DenseLayer<T>(
      detail::xavier_uniform<T>(rng.fork(100), Shape{net.flatten_size, spec.hidden_units}, net.flatten_size, spec.hidden_units),
      Tensor<T>(Shape{spec.hidden_units}));
  net.output = DenseLayer<T>(
      detail::xavier_uniform<T>(rng.fork(101), Shape{spec.hidden_units, ArchitectureSpec::output_units}, spec.hidden_units, ArchitectureSpec::output_units),
      Tensor<T>(Shape{ArchitectureSpec::output_units}));
  return net;
}

// Parameter accounting.  The headline weight counts exclude biases and
// batchnorm parameters; those are reported separately, and `total` covers
// every value the weight file stores (including running statistics), so the
// file payload is exactly total * sizeof(scalar).
struct ParamCounts {
  std::int64_t conv_weights = 0;
  std::int64_t fc_weights = 0;
  std::int64_t biases = 0;
  std::int64_t bn_params = 0;  // gamma, beta and both running statistics
  std::int64_t total = 0;
};

inline ParamCounts count_params(const ArchitectureSpec& spec) {
  spec.validate();
  const std::int64_t taps = ArchitectureSpec::kernel_side * ArchitectureSpec::kernel_side * ArchitectureSpec::kernel_side;
  ParamCounts pc;
  std::int64_t c_in = spec.in_channels();
  std::array<std::int64_t, 3> sp = spec.region_shape();
  for (std::int64_t m : spec.block_filters) {
    pc.conv_weights += c_in * taps * m + m * taps * m;
    pc.biases += 2 * m;
    pc.bn_params += 4 * m;
    for (auto& e : sp) e = detail::pooled(e);
    c_in = m;
  }
  const std::int64_t flat = sp[0] * sp[1] * sp[2] * c_in;
  pc.fc_weights = flat * spec.hidden_units + spec.hidden_units * ArchitectureSpec::output_units;
  pc.biases += spec.hidden_units + ArchitectureSpec::output_units;
  pc.total = pc.conv_weights + pc.fc_weights + pc.biases + pc.bn_params;
  return pc;
}

template <typename T>
ParamCounts count_params(const Network<T>& net) {
  return count_params(net.spec);
}

template <typename T>
struct BlockCache {
  Tensor<T> in, pre1, act1, pre2, act2;
  BatchNormCache<T> bn;
  MaxPoolResult<T> pool;
};

template <typename T>
struct ForwardCache {
  std::array<BlockCache<T>, 4> blocks;
  Tensor<T> flat, pre_h, act_h, pred;
};

enum class NetMode { train, eval };

namespace detail {

template <typename T>
void check_batch(const Network<T>& net, const Tensor<T>& batch) {
  const auto& r = net.input_region;
  const bool ok = batch.rank() == 5 && batch.dim(1) == r[0] && batch.dim(2) == r[1] && batch.dim(3) == r[2] &&
                  batch.dim(4) == net.spec.in_channels();
  if (!ok)
    throw ShapeError("batch shape " + batch.shape().str() + " does not match network input (N," + std::to_string(r[0]) + "," +
                     std::to_string(r[1]) + "," + std::to_string(r[2]) + "," + std::to_string(net.spec.in_channels()) + ")");
}

}  // namespace detail

// Full forward pass.  Train mode updates batchnorm running statistics and
// fills `cache` (when given) for the backward pass; eval mode uses the
// running statistics and leaves the network untouched.
template <typename T>
Tensor<T> forward(Network<T>& net, const Tensor<T>& batch, NetMode mode, int threads = 1, ForwardCache<T>* cache = nullptr) {
  detail::check_batch(net, batch);
  const BatchNormMode bn_mode = mode == NetMode::train ? BatchNormMode::train : BatchNormMode::eval;

  Tensor<T> x = batch;
  for (int i = 0; i < 4; ++i) {
    BlockCache<T>* bc = cache ? &cache->blocks[i] : nullptr;
    if (bc) bc->in = x;
    Tensor<T> pre1 = conv3d_forward(x, net.blocks[i].conv1, ConvMode::gemm, threads);
    Tensor<T> act1 = elu_forward(pre1);
    Tensor<T> pre2 = conv3d_forward(act1, net.blocks[i].conv2, ConvMode::gemm, threads);
    Tensor<T> act2 = elu_forward(pre2);
    BatchNormResult<T> bn = batchnorm_forward(act2, net.blocks[i].bn, bn_mode);
    MaxPoolResult<T> pool = maxpool3d_forward(bn.y);
    x = pool.y;
    if (bc) {
      bc->pre1 = std::move(pre1);
      bc->act1 = std::move(act1);
      bc->pre2 = std::move(pre2);
      bc->act2 = std::move(act2);
      bc->bn = std::move(bn.cache);
      bc->pool = std::move(pool);
    }
  }

  Tensor<T> flat = flatten(x);
  Tensor<T> pre_h = dense_forward(flat, net.hidden, threads);
  Tensor<T> act_h = elu_forward(pre_h);
  Tensor<T> pred = dense_forward(act_h, net.output, threads);
  if (cache) {
    cache->flat = std::move(flat);
    cache->pre_h = std::move(pre_h);
    cache->act_h = std::move(act_h);
    cache->pred = pred;
  }
  return pred;
}

template <typename T>
struct BlockGrads {
  Tensor<T> w1, b1, w2, b2, gamma, beta;
};

template <typename T>
struct NetGrads {
  std::array<BlockGrads<T>, 4> blocks;
  Tensor<T> hw, hb, ow, ob;

  // Same order as Network::trainable_tensors.
  std::vector<Tensor<T>*> refs() {
    std::vector<Tensor<T>*> v;
    for (int i = 0; i < 4; ++i) {
      v.push_back(&blocks[i].w1);
      v.push_back(&blocks[i].b1);
      v.push_back(&blocks[i].w2);
      v.push_back(&blocks[i].b2);
      v.push_back(&blocks[i].gamma);
      v.push_back(&blocks[i].beta);
    }
    v.push_back(&hw);
    v.push_back(&hb);
    v.push_back(&ow);
    v.push_back(&ob);
    return v;
  }
};

template <typename T>
struct BackwardResult {
  NetGrads<T> grads;
  Tensor<T> pred;
  double loss = 0;
};

// One train-mode forward (updating batchnorm running stats) plus the full
// backward pass of the MSE loss.
template <typename T>
BackwardResult<T> backward(Network<T>& net, const Tensor<T>& batch, const Tensor<T>& targets, int threads = 1) {
  if (targets.rank() != 2 || targets.dim(1) != 1 || targets.dim(0) != batch.dim(0))
    throw ShapeError("targets must have shape (N,1) matching the batch, got " + targets.shape().str());

  ForwardCache<T> cache;
  BackwardResult<T> out;
  out.pred = forward(net, batch, NetMode::train, threads, &cache);
  out.loss = mse(out.pred, targets);

  Tensor<T> g = mse_grad(out.pred, targets);
  DenseGrads<T> dout = dense_backward(cache.act_h, net.output, g, threads);
  out.grads.ow = std::move(dout.weights);
  out.grads.ob = std::move(dout.bias);
  Tensor<T> gh = elu_backward(cache.pre_h, dout.x);
  DenseGrads<T> dhid = dense_backward(cache.flat, net.hidden, gh, threads);
  out.grads.hw = std::move(dhid.weights);
  out.grads.hb = std::move(dhid.bias);

  Tensor<T> gx = dhid.x.reshaped(cache.blocks[3].pool.y.shape());
  for (int i = 3; i >= 0; --i) {
    BlockCache<T>& bc = cache.blocks[i];
    Tensor<T> g_bn_out = maxpool3d_backward(bc.pool, gx);
    BatchNormGrads<T> gbn = batchnorm_backward(g_bn_out, bc.bn, net.blocks[i].bn);
    out.grads.blocks[i].gamma = std::move(gbn.gamma);
    out.grads.blocks[i].beta = std::move(gbn.beta);
    Tensor<T> g_pre2 = elu_backward(bc.pre2, gbn.x);
    ConvGrads<T> gc2 = conv3d_backward(bc.act1, net.blocks[i].conv2, g_pre2, threads);
    out.grads.blocks[i].w2 = std::move(gc2.weights);
    out.grads.blocks[i].b2 = std::move(gc2.bias);
    Tensor<T> g_pre1 = elu_backward(bc.pre1, gc2.input);
    ConvGrads<T> gc1 = conv3d_backward(bc.in, net.blocks[i].conv1, g_pre1, threads);
    out.grads.blocks[i].w1 = std::move(gc1.weights);
    out.grads.blocks[i].b1 = std::move(gc1.bias);
    gx = std::move(gc1.input);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Weight file: magic RCNW, version u16, tensor count u16, then per tensor:
// name (u16 length + bytes), dtype u8 (0 = f32, 1 = f64), rank u8, extents
// u32 each, then the raw little-endian values.

inline constexpr std::uint16_t kWeightFormatVersion = 1;

template <typename T>
void save_weights(Network<T>& net, const std::string& path) {
  auto tensors = net.state_tensors();
  std::ofstream os = binio::open_out(path);
  os.write("RCNW", 4);
  binio::write_le<std::uint16_t>(os, kWeightFormatVersion);
  binio::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(tensors.size()));
  for (auto& [name, t] : tensors) {
    binio::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(static_cast<char>(binio::dtype_code<T>));
    os.put(static_cast<char>(t->rank()));
    for (int a = 0; a < t->rank(); ++a) binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t->dim(a)));
    binio::write_scalars(os, t->data(), t->numel());
  }
  if (!os) throw IoError("failed writing weights to '" + path + "'");
}

template <typename T>
Network<T> load_weights(const std::string& path, const ArchitectureSpec& spec) {
  std::ifstream is = binio::open_in(path);
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::string(magic, 4) != "RCNW") throw FormatError("'" + path + "' is not a weight file (bad magic)");
  const std::uint16_t version = binio::read_le<std::uint16_t>(is, "version");
  if (version != kWeightFormatVersion) throw FormatError("unsupported weight file version " + std::to_string(version));
  const std::uint16_t count = binio::read_le<std::uint16_t>(is, "tensor count");

  Network<T> net = build<T>(spec, 0);
  auto tensors = net.state_tensors();
  if (count != tensors.size())
    throw FormatError("weight file has " + std::to_string(count) + " tensors, architecture expects " + std::to_string(tensors.size()));

  for (auto& [name, t] : tensors) {
    const std::uint16_t nlen = binio::read_le<std::uint16_t>(is, "name length");
    std::string fname(nlen, '\0');
    is.read(fname.data(), nlen);
    if (is.gcount() != nlen) throw FormatError("truncated file while reading tensor name");
    if (fname != name) throw FormatError("layer '" + fname + "' does not match expected layer '" + name + "'");
    const int dtype = is.get();
    if (dtype != binio::dtype_code<T>) throw FormatError("layer '" + name + "' has dtype code " + std::to_string(dtype) + ", expected " + std::to_string(int(binio::dtype_code<T>)));
    const int rank = is.get();
    if (rank != t->rank()) throw FormatError("layer '" + name + "' has rank " + std::to_string(rank) + ", expected " + std::to_string(t->rank()));
    for (int a = 0; a < rank; ++a) {
      const std::uint32_t e = binio::read_le<std::uint32_t>(is, "extent");
      if (static_cast<std::int64_t>(e) != t->dim(a))
        throw FormatError("layer '" + name + "' has extent " + std::to_string(e) + " on axis " + std::to_string(a) + ", expected " + std::to_string(t->dim(a)));
    }
    binio::read_scalars(is, t->data(), t->numel(), "layer '" + name + "'");
  }
  return net;
}

}  // namespace rcn
