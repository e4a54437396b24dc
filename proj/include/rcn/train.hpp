#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rcn/data.hpp"
#include "rcn/model.hpp"
#include "rcn/segmentation.hpp"

// Adam, the training protocol (multi-seed, per-epoch validation, checkpoint
// on the best validation MSE, test metrics from the restored checkpoint), and
// the three experiment sweeps: segmentation rate, hidden width, training-set
// size.

namespace rcn {

struct TrainConfig {
  double alpha = 1e-3, beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;  // Adam
  std::int64_t epochs = 700;
  std::int64_t batch_size = 4;
  std::int64_t n_seeds = 5;
  std::uint64_t base_seed = 1;
  std::optional<std::int64_t> train_subset;  // subsample of the train split
  std::optional<std::int64_t> patience;      // epochs without improvement before stopping
  ArchitectureSpec spec;
  int threads = 1;

  void validate() const {
    if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1)) throw ArgumentError("Adam betas must lie in (0,1)");
    if (alpha <= 0) throw ArgumentError("Adam alpha must be positive");
    if (epochs < 1 || batch_size < 1 || n_seeds < 1) throw ArgumentError("epochs, batch_size and seed count must be >= 1");
    spec.validate();
  }
};

struct RunResult {
  std::string spec_name;
  std::int64_t k = 1;
  std::uint64_t seed = 0;
  double val_mse = 0;   // best validation MSE (the checkpoint)
  double test_mse = 0;  // from the restored checkpoint
  double test_mae = 0;
  double minutes = 0;
  std::int64_t best_epoch = 0;
};

// ---------------------------------------------------------------------------
// Adam.

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::int64_t t = 0;

  static AdamState init(std::span<Tensor<T>* const> params) {
    AdamState s;
    for (Tensor<T>* p : params) {
      s.m.emplace_back(p->shape());
      s.v.emplace_back(p->shape());
    }
    return s;
  }
};

// Standard bias-corrected Adam update, applied in place.  `state.t` counts
// completed steps; each parameter's trajectory depends only on its own
// gradient history, so parameter ordering is immaterial.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state, const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("adam_step parameter/gradient/state count mismatch");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<T>& w = *params[p];
    const Tensor<T>& g = *grads[p];
    if (g.shape() != w.shape()) throw ShapeError("adam_step gradient shape " + g.shape().str() + " does not match parameter " + w.shape().str());
    Tensor<T>& m = state.m[p];
    Tensor<T>& v = state.v[p];
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - cfg.alpha * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.epsilon));
    }
  }
}

// ---------------------------------------------------------------------------
// In-memory dataset.

template <typename T>
struct SplitData {
  std::vector<Tensor<T>> volumes;  // rank 3, one per subject
  std::vector<T> labels;

  std::int64_t size() const { return static_cast<std::int64_t>(volumes.size()); }
};

template <typename T>
struct Dataset {
  SplitData<T> train, val, test;
  std::array<std::int64_t, 3> volume_shape{};
};

template <typename T = float>
Dataset<T> load_dataset(const std::string& manifest_path) {
  const Manifest m = read_manifest(manifest_path);
  Dataset<T> ds;
  for (const auto& e : m.entries) {
    Tensor<T> vol = read_volume<T>(m.resolve(e));
    if (vol.rank() != 3) throw FormatError("'" + e.path + "' has rank " + std::to_string(vol.rank()) + ", expected a rank-3 volume");
    SplitData<T>& split = e.split == "train" ? ds.train : (e.split == "val" ? ds.val : ds.test);
    if (ds.volume_shape[0] == 0) ds.volume_shape = {vol.dim(0), vol.dim(1), vol.dim(2)};
    if (vol.dim(0) != ds.volume_shape[0] || vol.dim(1) != ds.volume_shape[1] || vol.dim(2) != ds.volume_shape[2])
      throw FormatError("'" + e.path + "' has shape " + vol.shape().str() + ", expected a uniform dataset shape");
    split.volumes.push_back(std::move(vol));
    split.labels.push_back(static_cast<T>(e.label));
  }
  return ds;
}

namespace detail {

// Segments every volume of a split once up front; channels stay (X',Y',Z',C)
// so batches can be assembled by plain concatenation over N.
template <typename T>
std::vector<Tensor<T>> segment_split(const SplitData<T>& split, const SegmentationPlan& plan) {
  std::vector<Tensor<T>> out;
  out.reserve(split.volumes.size());
  for (const auto& v : split.volumes) out.push_back(segment(v, plan).data);
  return out;
}

template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& pool, std::span<const std::int64_t> idx) {
  const Shape& s = pool[0].shape();
  Tensor<T> batch(Shape{static_cast<std::int64_t>(idx.size()), s[0], s[1], s[2], s[3]});
  const std::int64_t stride = pool[0].numel();
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(pool[static_cast<std::size_t>(idx[i])].data(), stride, batch.data() + static_cast<std::int64_t>(i) * stride);
  return batch;
}

template <typename T>
Tensor<T> gather_labels(const std::vector<T>& labels, std::span<const std::int64_t> idx) {
  Tensor<T> t(Shape{static_cast<std::int64_t>(idx.size()), 1});
  for (std::size_t i = 0; i < idx.size(); ++i) t[static_cast<std::int64_t>(i)] = labels[static_cast<std::size_t>(idx[i])];
  return t;
}

// Mean squared / absolute error of the network over a whole split.
template <typename T>
std::pair<double, double> evaluate(Network<T>& net, const std::vector<Tensor<T>>& vols, const std::vector<T>& labels,
                                   std::int64_t batch_size, int threads) {
  double se = 0, ae = 0;
  const std::int64_t n = static_cast<std::int64_t>(vols.size());
  std::vector<std::int64_t> idx(static_cast<std::size_t>(batch_size));
  for (std::int64_t b0 = 0; b0 < n; b0 += batch_size) {
    const std::int64_t bn = std::min(batch_size, n - b0);
    idx.resize(static_cast<std::size_t>(bn));
    std::iota(idx.begin(), idx.end(), b0);
    Tensor<T> batch = stack_batch(vols, idx);
    Tensor<T> pred = forward(net, batch, NetMode::eval, threads);
    for (std::int64_t i = 0; i < bn; ++i) {
      const double d = static_cast<double>(pred[i]) - static_cast<double>(labels[static_cast<std::size_t>(b0 + i)]);
      se += d * d;
      ae += std::abs(d);
    }
  }
  return {se / static_cast<double>(n), ae / static_cast<double>(n)};
}

// Seeded uniform subsample without replacement (partial Fisher-Yates); the
// full size returns the identity selection.
inline std::vector<std::int64_t> subsample_indices(std::int64_t available, std::int64_t size, std::uint64_t seed) {
  if (size > available) throw ArgumentError("requested subset of " + std::to_string(size) + " from " + std::to_string(available) + " examples");
  std::vector<std::int64_t> idx(static_cast<std::size_t>(available));
  std::iota(idx.begin(), idx.end(), 0);
  if (size == available) return idx;
  Rng rng(seed);
  for (std::int64_t i = 0; i < size; ++i) {
    const std::int64_t j = i + static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(available - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(size));
  return idx;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training protocol.  One run: Xavier-init from the run seed, shuffled
// mini-batches (Fisher-Yates seeded with run seed + epoch index), validation
// MSE after every epoch, checkpoint on improvement, test metrics from the
// restored checkpoint.  `save_path`, when set, receives the checkpoint.

template <typename T = float>
RunResult train_one(const TrainConfig& cfg, const Dataset<T>& ds, std::uint64_t seed, const std::string& save_path = "") {
  cfg.validate();
  if (ds.train.size() == 0 || ds.val.size() == 0 || ds.test.size() == 0) throw ArgumentError("training needs non-empty train/val/test splits");

  const auto t_start = std::chrono::steady_clock::now();
  const SegmentationPlan plan = make_plan(ds.volume_shape, cfg.spec.k, cfg.spec.boundary);
  std::vector<Tensor<T>> train_v = detail::segment_split(ds.train, plan);
  std::vector<Tensor<T>> val_v = detail::segment_split(ds.val, plan);
  std::vector<Tensor<T>> test_v = detail::segment_split(ds.test, plan);
  std::vector<T> train_y = ds.train.labels;

  // Subsets are keyed by (run seed, size) so different sizes draw
  // independently rather than sharing a shuffle prefix.
  const std::int64_t subset = cfg.train_subset.value_or(static_cast<std::int64_t>(train_v.size()));
  std::vector<std::int64_t> pool_idx = detail::subsample_indices(
      static_cast<std::int64_t>(train_v.size()), subset,
      seed ^ (0xC0FFEEull + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(subset)));

  Network<T> net = build<T>(cfg.spec, seed);
  auto params = net.trainable_tensors();
  AdamState<T> adam = AdamState<T>::init(std::span<Tensor<T>* const>(params));

  Network<T> best_net = net;
  double best_val = std::numeric_limits<double>::infinity();
  std::int64_t best_epoch = 0;

  std::vector<std::int64_t> order = pool_idx;
  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(seed + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.next_below(i))]);

    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      std::span<const std::int64_t> idx(order.data() + b0, b1 - b0);
      Tensor<T> batch = detail::stack_batch(train_v, idx);
      Tensor<T> targets = detail::gather_labels(train_y, idx);
      BackwardResult<T> res = backward(net, batch, targets, cfg.threads);
      auto grefs = res.grads.refs();
      std::vector<const Tensor<T>*> cgrefs(grefs.begin(), grefs.end());
      adam_step(std::span<Tensor<T>* const>(params), std::span<const Tensor<T>* const>(cgrefs), adam, cfg);
    }

    const auto [val_mse, val_mae] = detail::evaluate(net, val_v, ds.val.labels, cfg.batch_size, cfg.threads);
    (void)val_mae;
    if (val_mse < best_val) {
      best_val = val_mse;
      best_epoch = epoch;
      best_net = net;
    } else if (cfg.patience && epoch - best_epoch >= *cfg.patience) {
      break;
    }
  }

  const auto [test_mse, test_mae] = detail::evaluate(best_net, test_v, ds.test.labels, cfg.batch_size, cfg.threads);
  if (!save_path.empty()) save_weights(best_net, save_path);

  RunResult r;
  r.spec_name = cfg.spec.name;
  r.k = cfg.spec.k;
  r.seed = seed;
  r.val_mse = best_val;
  r.test_mse = test_mse;
  r.test_mae = test_mae;
  r.best_epoch = best_epoch;
  r.minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count() / 60.0;
  return r;
}

// MSE/MAE of a trained network over one split (volumes are segmented with the
// network's own plan).
template <typename T = float>
std::pair<double, double> evaluate_split(Network<T>& net, const SplitData<T>& split, std::int64_t batch_size = 4, int threads = 1) {
  if (split.size() == 0) throw ArgumentError("evaluation split is empty");
  const auto& v0 = split.volumes.front();
  const SegmentationPlan plan = make_plan({v0.dim(0), v0.dim(1), v0.dim(2)}, net.spec.k, net.spec.boundary);
  std::vector<Tensor<T>> vols = detail::segment_split(split, plan);
  return detail::evaluate(net, vols, split.labels, batch_size, threads);
}

// The full protocol: one run per seed (base_seed, base_seed+1, ...).
template <typename T = float>
std::vector<RunResult> train(const TrainConfig& cfg, const Dataset<T>& ds, const std::string& save_dir = "") {
  std::vector<RunResult> out;
  for (std::int64_t i = 0; i < cfg.n_seeds; ++i) {
    const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(i);
    const std::string path = save_dir.empty() ? "" : save_dir + "/seed_" + std::to_string(seed) + ".rcnw";
    out.push_back(train_one(cfg, ds, seed, path));
  }
  return out;
}

inline double mean_of(const std::vector<RunResult>& rs, double RunResult::*field) {
  double s = 0;
  for (const auto& r : rs) s += r.*field;
  return s / static_cast<double>(rs.size());
}

inline double std_of(const std::vector<RunResult>& rs, double RunResult::*field) {
  if (rs.size() < 2) return 0;
  const double m = mean_of(rs, field);
  double s = 0;
  for (const auto& r : rs) s += (r.*field - m) * (r.*field - m);
  return std::sqrt(s / static_cast<double>(rs.size() - 1));
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Sweeps.

struct SweepKRow {
  std::int64_t k = 1;
  std::vector<RunResult> runs;
  double mean_val_mse = 0, std_val_mse = 0, mean_test_mse = 0, std_test_mse = 0;
};

struct SweepKResult {
  std::vector<SweepKRow> rows;
  std::int64_t selected_k = 1;  // lowest mean validation MSE
};

// Trains the configured layout at each rate and selects k by validation MSE.
template <typename T = float>
SweepKResult sweep_k(TrainConfig cfg, const Dataset<T>& ds, const std::vector<std::int64_t>& ks = {1, 2, 3, 4},
                     const std::string& save_dir = "") {
  if (ks.empty()) throw ArgumentError("sweep_k needs at least one rate");
  SweepKResult out;
  double best = std::numeric_limits<double>::infinity();
  for (std::int64_t k : ks) {
    cfg.spec.k = k;
    SweepKRow row;
    row.k = k;
    row.runs = train(cfg, ds, save_dir.empty() ? "" : save_dir + "/k" + std::to_string(k));
    row.mean_val_mse = mean_of(row.runs, &RunResult::val_mse);
    row.std_val_mse = std_of(row.runs, &RunResult::val_mse);
    row.mean_test_mse = mean_of(row.runs, &RunResult::test_mse);
    row.std_test_mse = std_of(row.runs, &RunResult::test_mse);
    if (row.mean_val_mse < best) {
      best = row.mean_val_mse;
      out.selected_k = k;
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

struct SweepHiddenRow {
  std::int64_t hidden_units = 0;
  std::int64_t fc_weights = 0;
  std::vector<RunResult> runs;
  double mean_val_mse = 0, mean_test_mse = 0, std_test_mse = 0;
};

template <typename T = float>
std::vector<SweepHiddenRow> sweep_hidden_units(TrainConfig cfg, const Dataset<T>& ds, const std::vector<std::int64_t>& grid) {
  if (grid.empty()) throw ArgumentError("sweep_hidden_units needs a non-empty grid");
  std::vector<SweepHiddenRow> rows;
  for (std::int64_t h : grid) {
    cfg.spec.hidden_units = h;
    SweepHiddenRow row;
    row.hidden_units = h;
    row.fc_weights = count_params(cfg.spec).fc_weights;
    row.runs = train(cfg, ds);
    row.mean_val_mse = mean_of(row.runs, &RunResult::val_mse);
    row.mean_test_mse = mean_of(row.runs, &RunResult::test_mse);
    row.std_test_mse = std_of(row.runs, &RunResult::test_mse);
    rows.push_back(std::move(row));
  }
  return rows;
}

struct SweepSizeRow {
  std::int64_t size = 0;
  std::vector<RunResult> runs;
  double mean_test_mse = 0, std_test_mse = 0;
};

template <typename T = float>
std::vector<SweepSizeRow> sweep_train_size(TrainConfig cfg, const Dataset<T>& ds, const std::vector<std::int64_t>& sizes) {
  if (sizes.empty()) throw ArgumentError("sweep_train_size needs at least one size");
  std::vector<SweepSizeRow> rows;
  for (std::int64_t s : sizes) {
    if (s > ds.train.size()) throw ArgumentError("training subset " + std::to_string(s) + " exceeds the train split of " + std::to_string(ds.train.size()));
    cfg.train_subset = s;
    SweepSizeRow row;
    row.size = s;
    row.runs = train(cfg, ds);
    row.mean_test_mse = mean_of(row.runs, &RunResult::test_mse);
    row.std_test_mse = std_of(row.runs, &RunResult::test_mse);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace rcn
