#include "rcn/model.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>

#include "rcn/errors.hpp"
#include "rcn/rng.hpp"
#include "rcn/tensor.hpp"

namespace rcn {
namespace {

double sum_abs(const Tensor<double>& t) {
  double s = 0;
  for (std::int64_t i = 0; i < t.numel(); ++i) s += std::abs(t[i]);
  return s;
}

// A four-block network small enough for exhaustive finite differences.
ArchitectureSpec tiny_spec() {
  ArchitectureSpec s;
  s.name = "tiny";
  s.block_filters = {2, 2, 2, 2};
  s.k = 1;
  s.hidden_units = 3;
  s.input_shape = {4, 4, 4};
  s.boundary = 0;
  return s;
}

TEST(SpecByName, FourVariants) {
  const auto baseline = spec_by_name("baseline");
  EXPECT_EQ(baseline.block_filters, (std::array<std::int64_t, 4>{8, 16, 32, 64}));
  EXPECT_EQ(baseline.k, 1);
  const auto proposed = spec_by_name("proposed");
  EXPECT_EQ(proposed.block_filters, (std::array<std::int64_t, 4>{64, 32, 16, 8}));
  EXPECT_EQ(proposed.k, 2);
  const auto seg_only = spec_by_name("segmentation-only");
  EXPECT_EQ(seg_only.block_filters, (std::array<std::int64_t, 4>{8, 16, 32, 64}));
  EXPECT_EQ(seg_only.k, 2);
  const auto rev_only = spec_by_name("reverse-only");
  EXPECT_EQ(rev_only.block_filters, (std::array<std::int64_t, 4>{64, 32, 16, 8}));
  EXPECT_EQ(rev_only.k, 1);
  EXPECT_EQ(baseline.hidden_units, 256);
  EXPECT_EQ(proposed.hidden_units, 256);
  EXPECT_THROW(spec_by_name("resnet"), ArgumentError);
}

TEST(CountParams, PinnedFullScaleNumbers) {
  const auto baseline = count_params(spec_by_name("baseline"));
  EXPECT_EQ(baseline.conv_weights, 219672);
  EXPECT_EQ(baseline.fc_weights, 590080);
  const auto proposed = count_params(spec_by_name("proposed"));
  EXPECT_EQ(proposed.conv_weights, 233280);
  EXPECT_EQ(proposed.fc_weights, 16640);
  // Both variants carry the same bias/batchnorm overhead: 120 filters across
  // the blocks plus the dense layers.
  for (const auto& pc : {baseline, proposed}) {
    EXPECT_EQ(pc.biases, 2 * 120 + 256 + 1);
    EXPECT_EQ(pc.bn_params, 4 * 120);
    EXPECT_EQ(pc.total, pc.conv_weights + pc.fc_weights + pc.biases + pc.bn_params);
  }
}

TEST(CountParams, HiddenWidthMatchesAcrossArchitectures) {
  // The wide-hidden proposed network and the narrow-hidden baseline bracket
  // each other's dense parameter count.
  auto proposed = spec_by_name("proposed");
  proposed.hidden_units = 9216;
  EXPECT_EQ(count_params(proposed).fc_weights, 599040);
  auto baseline = spec_by_name("baseline");
  baseline.hidden_units = 7;
  EXPECT_EQ(count_params(baseline).fc_weights, 16135);
  // 599,040 vs the baseline's 590,080 at 256 hidden units: within 1.6%.
  EXPECT_NEAR(599040.0 / 590080.0, 1.0, 0.016);
  // 16,135 vs the proposed 16,640: within 5%.
  EXPECT_NEAR(16135.0 / 16640.0, 1.0, 0.05);
}

TEST(Build, FlattenSizesAndSpatialChains) {
  const auto baseline = build<float>(spec_by_name("baseline"), 1);
  EXPECT_EQ(baseline.input_region, (std::array<std::int64_t, 3>{41, 49, 41}));
  EXPECT_EQ(baseline.flatten_size, 2304);  // (3,4,3) x 64 filters
  const auto proposed = build<float>(spec_by_name("proposed"), 1);
  EXPECT_EQ(proposed.input_region, (std::array<std::int64_t, 3>{23, 27, 23}));
  EXPECT_EQ(proposed.flatten_size, 64);  // (2,2,2) x 8 filters
  EXPECT_EQ(proposed.hidden.fan_in(), 64);
  EXPECT_EQ(proposed.hidden.fan_out(), 256);
  EXPECT_EQ(proposed.output.fan_in(), 256);
  EXPECT_EQ(proposed.output.fan_out(), 1);
}

TEST(Build, TensorShapesAndInventory) {
  auto net = build<float>(spec_by_name("proposed"), 3);
  EXPECT_EQ(net.blocks[0].conv1.weights.shape(), (Shape{8, 3, 3, 3, 64}));
  EXPECT_EQ(net.blocks[0].conv2.weights.shape(), (Shape{64, 3, 3, 3, 64}));
  EXPECT_EQ(net.blocks[3].conv1.weights.shape(), (Shape{16, 3, 3, 3, 8}));
  EXPECT_EQ(net.blocks[2].bn.channels(), 16);
  EXPECT_EQ(net.state_tensors().size(), 36u);     // 8 per block + 4 dense
  EXPECT_EQ(net.trainable_tensors().size(), 28u);  // 6 per block + 4 dense
  // The network holds exactly the counted number of persisted values.
  std::int64_t stored = 0;
  for (auto& [name, t] : net.state_tensors()) stored += t->numel();
  EXPECT_EQ(stored, count_params(net).total);
}

TEST(Build, XavierBoundsAndZeroBiases) {
  const auto net = build<float>(spec_by_name("baseline"), 7);
  // Block 1 conv 1: fan_in 1*27, fan_out 8*27.
  const double limit = std::sqrt(6.0 / (27.0 + 216.0));
  float max_abs = 0.0f;
  const auto& w = net.blocks[0].conv1.weights;
  for (std::int64_t i = 0; i < w.numel(); ++i) {
    EXPECT_LE(std::abs(w[i]), limit);
    max_abs = std::max(max_abs, std::abs(w[i]));
  }
  EXPECT_GT(max_abs, 0.5 * limit);  // the draw actually fills the range
  for (std::int64_t i = 0; i < net.blocks[0].conv1.bias.numel(); ++i) EXPECT_EQ(net.blocks[0].conv1.bias[i], 0.0f);
  for (std::int64_t i = 0; i < net.hidden.bias.numel(); ++i) EXPECT_EQ(net.hidden.bias[i], 0.0f);
  // Batchnorm starts as the identity transform.
  EXPECT_EQ(net.blocks[0].bn.gamma[0], 1.0f);
  EXPECT_EQ(net.blocks[0].bn.beta[0], 0.0f);
  EXPECT_EQ(net.blocks[0].bn.running_var[0], 1.0f);
}

TEST(Build, SeedDeterminesEveryWeight) {
  auto a = build<float>(tiny_spec(), 11);
  auto b = build<float>(tiny_spec(), 11);
  auto c = build<float>(tiny_spec(), 12);
  auto ta = a.state_tensors(), tb = b.state_tensors(), tc = c.state_tensors();
  bool any_diff_c = false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    ASSERT_EQ(ta[i].second->numel(), tb[i].second->numel());
    EXPECT_EQ(std::memcmp(ta[i].second->data(), tb[i].second->data(),
                          static_cast<std::size_t>(ta[i].second->numel()) * sizeof(float)),
              0)
        << ta[i].first;
    any_diff_c |= std::memcmp(ta[i].second->data(), tc[i].second->data(),
                              static_cast<std::size_t>(ta[i].second->numel()) * sizeof(float)) != 0;
  }
  EXPECT_TRUE(any_diff_c);
}

TEST(Forward, ShapesAndModes) {
  auto net = build<float>(tiny_spec(), 2);
  Rng rng(4);
  const auto batch = rng_uniform<float>(rng, Shape{3, 4, 4, 4, 1}, -1.0, 1.0);
  const auto pred = forward(net, batch, NetMode::train);
  EXPECT_EQ(pred.shape(), (Shape{3, 1}));

  // Eval mode must leave the running statistics untouched.
  const auto before = net.blocks[0].bn.running_mean[0];
  (void)forward(net, batch, NetMode::eval);
  EXPECT_EQ(net.blocks[0].bn.running_mean[0], before);
  // Train mode moves them.
  (void)forward(net, batch, NetMode::train);
  EXPECT_NE(net.blocks[0].bn.running_mean[0], before);

  Tensor<float> wrong(Shape{3, 4, 4, 4, 2});
  EXPECT_THROW(forward(net, wrong, NetMode::eval), ShapeError);
  Tensor<float> rank4(Shape{4, 4, 4, 1});
  EXPECT_THROW(forward(net, rank4, NetMode::eval), ShapeError);
}

TEST(Forward, ThreadCountDoesNotChangeBits) {
  auto net1 = build<float>(tiny_spec(), 6);
  auto net2 = build<float>(tiny_spec(), 6);
  Rng rng(5);
  const auto batch = rng_uniform<float>(rng, Shape{2, 4, 4, 4, 1}, -1.0, 1.0);
  const auto p1 = forward(net1, batch, NetMode::train, 1);
  const auto p2 = forward(net2, batch, NetMode::train, 3);
  EXPECT_EQ(std::memcmp(p1.data(), p2.data(), static_cast<std::size_t>(p1.numel()) * sizeof(float)), 0);
}

TEST(Backward, MatchesFiniteDifferencesEndToEnd) {
  ArchitectureSpec spec = tiny_spec();
  auto net = build<double>(spec, 21);
  Rng rng(22);
  const auto batch = rng_uniform<double>(rng, Shape{2, 4, 4, 4, 1}, -1.0, 1.0);
  Tensor<double> targets(Shape{2, 1});
  targets[0] = 0.3;
  targets[1] = -0.7;

  const auto result = backward(net, batch, targets);
  EXPECT_NEAR(result.loss, mse(result.pred, targets), 1e-12);

  // Train-mode loss depends only on the trainable tensors, so the running-
  // stat updates of repeated evaluations do not disturb the check.
  const auto loss = [&]() {
    auto pred = forward(net, batch, NetMode::train);
    return mse(pred, targets);
  };
  auto grads = const_cast<BackwardResult<double>&>(result).grads.refs();
  auto params = net.trainable_tensors();
  ASSERT_EQ(grads.size(), params.size());

  const double h = 1e-5;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor<double>& p = *params[t];
    const Tensor<double>& g = *grads[t];
    ASSERT_EQ(p.shape(), g.shape()) << "tensor " << t;
    // Every coordinate of the small tensors, a stride through the large ones.
    const std::int64_t stride = std::max<std::int64_t>(1, p.numel() / 25);
    for (std::int64_t i = 0; i < p.numel(); i += stride) {
      const double keep = p[i];
      p[i] = keep + h;
      const double up = loss();
      p[i] = keep - h;
      const double dn = loss();
      p[i] = keep;
      const double fd = (up - dn) / (2 * h);
      EXPECT_NEAR(g[i], fd, 1e-6 + 1e-4 * std::abs(fd)) << "tensor " << t << " index " << i;
    }
  }
}

TEST(Backward, ZeroOutputLayerZeroesUpstreamGradients) {
  auto net = build<double>(tiny_spec(), 30);
  net.output.weights.fill(0.0);
  Rng rng(31);
  const auto batch = rng_uniform<double>(rng, Shape{2, 4, 4, 4, 1}, -1.0, 1.0);
  Tensor<double> targets(Shape{2, 1});
  targets[0] = 1.0;
  targets[1] = 2.0;
  auto result = backward(net, batch, targets);
  // Nothing upstream of the zero matrix can influence the loss.
  EXPECT_EQ(sum_abs(result.grads.hw), 0.0);
  EXPECT_EQ(sum_abs(result.grads.hb), 0.0);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(sum_abs(result.grads.blocks[i].w1), 0.0);
    EXPECT_EQ(sum_abs(result.grads.blocks[i].w2), 0.0);
    EXPECT_EQ(sum_abs(result.grads.blocks[i].gamma), 0.0);
  }
  // The output layer itself still learns.
  EXPECT_GT(sum_abs(result.grads.ow) + sum_abs(result.grads.ob), 0.0);
}

TEST(Backward, RejectsBadTargets) {
  auto net = build<float>(tiny_spec(), 1);
  Rng rng(2);
  const auto batch = rng_uniform<float>(rng, Shape{2, 4, 4, 4, 1}, -1.0, 1.0);
  Tensor<float> flat(Shape{2});
  EXPECT_THROW(backward(net, batch, flat), ShapeError);
  Tensor<float> wide(Shape{2, 2});
  EXPECT_THROW(backward(net, batch, wide), ShapeError);
  Tensor<float> short_batch(Shape{3, 1});
  EXPECT_THROW(backward(net, batch, short_batch), ShapeError);
}

TEST(Weights, SaveLoadRoundTrip) {
  const std::string path = testing::TempDir() + "roundtrip.rcnw";
  auto net = build<float>(tiny_spec(), 40);
  // Move the running statistics off their initial values so they are covered.
  Rng rng(41);
  const auto batch = rng_uniform<float>(rng, Shape{2, 4, 4, 4, 1}, -1.0, 1.0);
  (void)forward(net, batch, NetMode::train);
  save_weights(net, path);

  auto loaded = load_weights<float>(path, tiny_spec());
  auto ta = net.state_tensors(), tb = loaded.state_tensors();
  for (std::size_t i = 0; i < ta.size(); ++i)
    EXPECT_EQ(std::memcmp(ta[i].second->data(), tb[i].second->data(),
                          static_cast<std::size_t>(ta[i].second->numel()) * sizeof(float)),
              0)
        << ta[i].first;
  std::remove(path.c_str());
}

TEST(Weights, MismatchedArchitectureIsRejected) {
  const std::string path = testing::TempDir() + "mismatch.rcnw";
  auto net = build<float>(tiny_spec(), 1);
  save_weights(net, path);
  ArchitectureSpec other = tiny_spec();
  other.block_filters = {3, 2, 2, 2};
  EXPECT_THROW(load_weights<float>(path, other), FormatError);
  // Same layout, different scalar type.
  EXPECT_THROW(load_weights<double>(path, tiny_spec()), FormatError);
  std::remove(path.c_str());
}

TEST(Weights, CorruptFilesAreRejected) {
  const std::string path = testing::TempDir() + "corrupt.rcnw";
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE this is not a weight file";
  }
  EXPECT_THROW(load_weights<float>(path, tiny_spec()), FormatError);
  {
    auto net = build<float>(tiny_spec(), 1);
    save_weights(net, path);
    // Truncate the tail.
    std::ifstream is(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    is.close();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  EXPECT_THROW(load_weights<float>(path, tiny_spec()), FormatError);
  EXPECT_THROW(load_weights<float>(testing::TempDir() + "does-not-exist.rcnw", tiny_spec()), IoError);
  std::remove(path.c_str());
}

TEST(Spec, ValidationRejectsBadConfigs) {
  ArchitectureSpec s = tiny_spec();
  s.block_filters[2] = 0;
  EXPECT_THROW(s.validate(), ArgumentError);
  s = tiny_spec();
  s.hidden_units = 0;
  EXPECT_THROW(s.validate(), ArgumentError);
  s = tiny_spec();
  s.k = 5;  // exceeds the 4-voxel extent
  EXPECT_THROW(s.validate(), ArgumentError);
}

}  // namespace
}  // namespace rcn
