#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rcn/binio.hpp"
#include "rcn/rng.hpp"
#include "rcn/tensor.hpp"

// Volume file I/O, factor-3 pre-pooling, and a synthetic dataset generator.
// The generator produces aligned volumes (every subject shares one smooth
// template) carrying Gaussian blobs whose contribution to the regression
// label depends on which grid cell of the volume holds them — local patterns
// with region-dependent meaning, by construction.

namespace rcn {

// ---------------------------------------------------------------------------
// Volume container: magic BVOL, version u16, dtype u8 (0 = f32, 1 = f64),
// rank u8, extents u32 each, then raw little-endian row-major values.

inline constexpr std::uint16_t kVolumeFormatVersion = 1;

template <typename T>
void write_volume(const std::string& path, const Tensor<T>& t) {
  std::ofstream os = binio::open_out(path);
  os.write("BVOL", 4);
  binio::write_le<std::uint16_t>(os, kVolumeFormatVersion);
  os.put(static_cast<char>(binio::dtype_code<T>));
  os.put(static_cast<char>(t.rank()));
  for (int a = 0; a < t.rank(); ++a) binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.dim(a)));
  binio::write_scalars(os, t.data(), t.numel());
  if (!os) throw IoError("failed writing volume to '" + path + "'");
}

template <typename T>
Tensor<T> read_volume(const std::string& path) {
  std::ifstream is = binio::open_in(path);
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::string(magic, 4) != "BVOL") throw FormatError("'" + path + "' is not a volume file (bad magic)");
  const std::uint16_t version = binio::read_le<std::uint16_t>(is, "version");
  if (version != kVolumeFormatVersion) throw FormatError("unsupported volume file version " + std::to_string(version));
  const int dtype = is.get();
  const int rank = is.get();
  if (rank == EOF) throw FormatError("truncated volume header in '" + path + "'");
  if (dtype != 0 && dtype != 1) throw FormatError("unknown dtype code " + std::to_string(dtype) + " in '" + path + "'");
  if (rank < 1 || rank > Shape::kMaxRank) throw FormatError("volume rank " + std::to_string(rank) + " out of range in '" + path + "'");

  Shape shape;
  for (int a = 0; a < rank; ++a) {
    const std::uint32_t e = binio::read_le<std::uint32_t>(is, "extent");
    if (e == 0 || e > (std::uint32_t(1) << 24)) throw FormatError("volume extent " + std::to_string(e) + " out of range in '" + path + "'");
    shape.push_back(static_cast<std::int64_t>(e));
  }
  Tensor<T> t(shape);
  if (dtype == 0) {
    if constexpr (sizeof(T) == 4) {
      binio::read_scalars(is, t.data(), t.numel(), "volume payload");
    } else {
      for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(binio::read_scalar<float>(is, "volume payload"));
    }
  } else {
    if constexpr (sizeof(T) == 8) {
      binio::read_scalars(is, t.data(), t.numel(), "volume payload");
    } else {
      for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(binio::read_scalar<double>(is, "volume payload"));
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Manifest: CSV `path,label,split`, paths relative to the manifest location.

struct ManifestEntry {
  std::string path;
  double label = 0;
  std::string split;  // train | val | test
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::string dir;  // directory of the manifest file, for resolving paths

  std::vector<const ManifestEntry*> split(const std::string& name) const {
    std::vector<const ManifestEntry*> v;
    for (const auto& e : entries)
      if (e.split == name) v.push_back(&e);
    return v;
  }

  std::string resolve(const ManifestEntry& e) const { return dir.empty() ? e.path : dir + "/" + e.path; }
};

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "path,label,split\n";
  char buf[64];
  for (const auto& e : m.entries) {
    std::snprintf(buf, sizeof buf, "%.9g", e.label);
    os << e.path << ',' << buf << ',' << e.split << '\n';
  }
  if (!os) throw IoError("failed writing manifest to '" + path + "'");
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  Manifest m;
  m.dir = std::filesystem::path(path).parent_path().string();
  std::string line;
  if (!std::getline(is, line) || line != "path,label,split") throw FormatError("manifest '" + path + "' is missing the path,label,split header");
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.rfind(',');
    if (c1 == std::string::npos || c2 == c1) throw FormatError("manifest '" + path + "' line " + std::to_string(lineno) + " is not path,label,split");
    ManifestEntry e;
    e.path = line.substr(0, c1);
    e.split = line.substr(c2 + 1);
    try {
      e.label = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
    } catch (const std::exception&) {
      throw FormatError("manifest '" + path + "' line " + std::to_string(lineno) + " has a non-numeric label");
    }
    if (!std::isfinite(e.label)) throw FormatError("manifest '" + path + "' line " + std::to_string(lineno) + " has a non-finite label");
    if (e.split != "train" && e.split != "val" && e.split != "test")
      throw FormatError("manifest '" + path + "' line " + std::to_string(lineno) + " has unknown split '" + e.split + "'");
    m.entries.push_back(std::move(e));
  }
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    for (std::size_t j = i + 1; j < m.entries.size(); ++j)
      if (m.entries[i].path == m.entries[j].path) throw FormatError("manifest '" + path + "' lists '" + m.entries[i].path + "' twice");
  return m;
}

// ---------------------------------------------------------------------------
// Pre-pooling: every axis downsampled by `factor` with blocks anchored at
// multiples of factor; partial edge blocks reduce over the voxels present.

enum class PoolStrategy { average, max, naive };

inline PoolStrategy parse_pool_strategy(const std::string& s) {
  if (s == "average") return PoolStrategy::average;
  if (s == "max") return PoolStrategy::max;
  if (s == "naive") return PoolStrategy::naive;
  throw ArgumentError("unknown pooling strategy '" + s + "' (expected average, max or naive)");
}

template <typename T>
Tensor<T> prepool(const Tensor<T>& t, std::int64_t factor = 3, PoolStrategy strategy = PoolStrategy::average) {
  if (factor < 1) throw ArgumentError("pool factor must be >= 1, got " + std::to_string(factor));
  const int r = t.rank();
  Shape out_shape;
  for (int a = 0; a < r; ++a) out_shape.push_back((t.dim(a) + factor - 1) / factor);
  Tensor<T> out(out_shape);

  std::array<std::int64_t, Shape::kMaxRank> o{};
  for (std::int64_t w = 0; w < out.numel(); ++w) {
    // naive takes the block's first (lowest-index) voxel; the reductions walk
    // the whole block.
    std::array<std::int64_t, Shape::kMaxRank> lo{}, hi{};
    for (int a = 0; a < r; ++a) {
      lo[a] = o[a] * factor;
      hi[a] = std::min(t.dim(a), lo[a] + factor);
    }
    if (strategy == PoolStrategy::naive) {
      std::int64_t off = 0;
      for (int a = 0; a < r; ++a) off = off * t.dim(a) + lo[a];
      out[w] = t[off];
    } else {
      std::array<std::int64_t, Shape::kMaxRank> i = lo;
      double acc = 0;
      T mx{};
      std::int64_t count = 0;
      for (;;) {
        std::int64_t off = 0;
        for (int a = 0; a < r; ++a) off = off * t.dim(a) + i[a];
        if (count == 0) mx = t[off];
        mx = std::max(mx, t[off]);
        acc += static_cast<double>(t[off]);
        ++count;
        int a = r - 1;
        for (; a >= 0; --a) {
          if (++i[a] < hi[a]) break;
          i[a] = lo[a];
        }
        if (a < 0) break;
      }
      out[w] = strategy == PoolStrategy::max ? mx : static_cast<T>(acc / static_cast<double>(count));
    }
    int a = r - 1;
    for (; a >= 0; --a) {
      if (++o[a] < out_shape[a]) break;
      o[a] = 0;
    }
    if (a < 0) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic dataset generator.

struct GeneratorConfig {
  std::array<std::int64_t, 3> volume_shape{41, 49, 41};
  std::int64_t n_train = 524, n_val = 100, n_test = 100;
  std::int64_t blobs_per_volume = 12;
  std::array<double, 2> sigma_range{1.2, 2.5};      // blob radius
  std::array<double, 2> amplitude_range{0.5, 1.5};  // blob height
  std::int64_t r = 2;                               // weight grid rate
  std::vector<double> weights;                      // r^3 cell weights; default alternates +1/-1
  double sigma_label = 0.05;                        // label noise
  double sigma_voxel = 0.02;                        // voxel noise
  std::uint64_t seed = 1;
  bool raw = false;  // generate (3X-2, 3Y-2, 3Z-2) volumes for the pre-pool path

  std::array<double, 2> label_range{8.0, 21.0};

  std::vector<double> cell_weights() const {
    const std::int64_t cells = r * r * r;
    if (!weights.empty()) {
      if (static_cast<std::int64_t>(weights.size()) != cells)
        throw ArgumentError("generator needs " + std::to_string(cells) + " cell weights, got " + std::to_string(weights.size()));
      return weights;
    }
    std::vector<double> w(static_cast<std::size_t>(cells));
    for (std::int64_t i = 0; i < cells; ++i) w[static_cast<std::size_t>(i)] = (i % 2 == 0) ? 1.0 : -1.0;
    return w;
  }

  std::array<std::int64_t, 3> generated_shape() const {
    if (!raw) return volume_shape;
    return {3 * volume_shape[0] - 2, 3 * volume_shape[1] - 2, 3 * volume_shape[2] - 2};
  }
};

struct Blob {
  std::array<double, 3> center;
  double sigma = 1, amplitude = 0;
};

struct SubjectTruth {
  std::vector<Blob> blobs;
  double raw_label = 0;  // before the affine rescale to label_range
};

namespace detail {

// Smooth alignment template: a fixed superposition of low-frequency cosines,
// identical for every subject of a dataset.
template <typename T>
Tensor<T> make_template(const GeneratorConfig& cfg) {
  const auto vs = cfg.generated_shape();
  Rng rng = Rng(cfg.seed).fork(0);
  constexpr int kWaves = 6;
  double amp[kWaves], fx[kWaves], fy[kWaves], fz[kWaves], px[kWaves], py[kWaves], pz[kWaves];
  for (int w = 0; w < kWaves; ++w) {
    amp[w] = rng.uniform(0.2, 0.6);
    fx[w] = static_cast<double>(1 + rng.next_below(3));
    fy[w] = static_cast<double>(1 + rng.next_below(3));
    fz[w] = static_cast<double>(1 + rng.next_below(3));
    px[w] = rng.uniform(0, 6.283185307179586);
    py[w] = rng.uniform(0, 6.283185307179586);
    pz[w] = rng.uniform(0, 6.283185307179586);
  }
  Tensor<T> t(Shape{vs[0], vs[1], vs[2]});
  std::int64_t i = 0;
  for (std::int64_t x = 0; x < vs[0]; ++x)
    for (std::int64_t y = 0; y < vs[1]; ++y)
      for (std::int64_t z = 0; z < vs[2]; ++z, ++i) {
        double v = 0;
        for (int w = 0; w < kWaves; ++w)
          v += amp[w] * std::cos(6.283185307179586 * fx[w] * static_cast<double>(x) / static_cast<double>(vs[0]) + px[w]) *
               std::cos(6.283185307179586 * fy[w] * static_cast<double>(y) / static_cast<double>(vs[1]) + py[w]) *
               std::cos(6.283185307179586 * fz[w] * static_cast<double>(z) / static_cast<double>(vs[2]) + pz[w]);
        t[i] = static_cast<T>(v);
      }
  return t;
}

// Grid cell of a blob center: axes split at multiples of floor(extent/r),
// with the residual slab folded into the last cell (the same core-grid
// anchoring the segmentation uses).
inline std::int64_t weight_cell(const std::array<double, 3>& center, const std::array<std::int64_t, 3>& vs, std::int64_t r) {
  std::int64_t cell = 0;
  for (int a = 0; a < 3; ++a) {
    const std::int64_t core = vs[static_cast<std::size_t>(a)] / r;
    const std::int64_t c = std::min<std::int64_t>(r - 1, static_cast<std::int64_t>(center[static_cast<std::size_t>(a)]) / core);
    cell = cell * r + c;
  }
  return cell;
}

}  // namespace detail

// One subject: template + blobs + voxel noise, and the label the blobs imply.
// Deterministic given (cfg.seed, subject index) regardless of how subjects
// are batched across threads.
template <typename T>
Tensor<T> generate_subject(const GeneratorConfig& cfg, const Tensor<T>& tmpl, std::int64_t subject, SubjectTruth* truth = nullptr) {
  const auto vs = cfg.generated_shape();
  const std::vector<double> w = cfg.cell_weights();
  Rng rng = Rng(cfg.seed).fork(static_cast<std::uint64_t>(1 + subject));

  Tensor<T> vol = tmpl;
  double label = 0;
  std::vector<Blob> blobs;
  for (std::int64_t p = 0; p < cfg.blobs_per_volume; ++p) {
    Blob b;
    for (int a = 0; a < 3; ++a) b.center[static_cast<std::size_t>(a)] = rng.uniform(0, static_cast<double>(vs[static_cast<std::size_t>(a)]));
    b.sigma = rng.uniform(cfg.sigma_range[0], cfg.sigma_range[1]);
    b.amplitude = rng.uniform(cfg.amplitude_range[0], cfg.amplitude_range[1]);
    label += w[static_cast<std::size_t>(detail::weight_cell(b.center, vs, cfg.r))] * b.amplitude;

    // Rasterize within 3 sigma.
    const double inv2s2 = 1.0 / (2.0 * b.sigma * b.sigma);
    std::array<std::int64_t, 3> lo, hi;
    for (int a = 0; a < 3; ++a) {
      lo[static_cast<std::size_t>(a)] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(b.center[static_cast<std::size_t>(a)] - 3 * b.sigma)));
      hi[static_cast<std::size_t>(a)] = std::min<std::int64_t>(vs[static_cast<std::size_t>(a)], static_cast<std::int64_t>(std::ceil(b.center[static_cast<std::size_t>(a)] + 3 * b.sigma)) + 1);
    }
    for (std::int64_t x = lo[0]; x < hi[0]; ++x)
      for (std::int64_t y = lo[1]; y < hi[1]; ++y)
        for (std::int64_t z = lo[2]; z < hi[2]; ++z) {
          const double dx = static_cast<double>(x) - b.center[0];
          const double dy = static_cast<double>(y) - b.center[1];
          const double dz = static_cast<double>(z) - b.center[2];
          vol(x, y, z) += static_cast<T>(b.amplitude * std::exp(-(dx * dx + dy * dy + dz * dz) * inv2s2));
        }
    blobs.push_back(b);
  }
  if (cfg.sigma_voxel > 0)
    for (std::int64_t i = 0; i < vol.numel(); ++i) vol[i] += static_cast<T>(rng.normal(0, cfg.sigma_voxel));
  label += rng.normal(0, cfg.sigma_label);

  if (truth) {
    truth->blobs = std::move(blobs);
    truth->raw_label = label;
  }
  return vol;
}

// Affine map of raw labels onto cfg.label_range (degenerate spread maps to
// the midpoint).
inline std::vector<double> rescale_labels(const GeneratorConfig& cfg, const std::vector<double>& raw) {
  const auto [lo_it, hi_it] = std::minmax_element(raw.begin(), raw.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    out[i] = hi > lo ? cfg.label_range[0] + (raw[i] - lo) / (hi - lo) * (cfg.label_range[1] - cfg.label_range[0])
                     : 0.5 * (cfg.label_range[0] + cfg.label_range[1]);
  return out;
}

// Writes all volumes plus manifest.csv under out_dir; subjects may be
// generated across threads (each subject owns an independent stream).
template <typename T = float>
Manifest generate_dataset(const GeneratorConfig& cfg, const std::string& out_dir, int threads = 1) {
  if (cfg.n_train < 1 || cfg.n_val < 1 || cfg.n_test < 1) throw ArgumentError("every split needs at least one subject");
  std::filesystem::create_directories(out_dir);
  const std::int64_t n = cfg.n_train + cfg.n_val + cfg.n_test;
  const Tensor<T> tmpl = detail::make_template<T>(cfg);

  std::vector<SubjectTruth> truths(static_cast<std::size_t>(n));
  std::vector<std::string> names(static_cast<std::size_t>(n));
  const auto work = [&](std::int64_t s0, std::int64_t s1) {
    char buf[32];
    for (std::int64_t s = s0; s < s1; ++s) {
      std::snprintf(buf, sizeof buf, "vol_%04lld.bvol", static_cast<long long>(s));
      names[static_cast<std::size_t>(s)] = buf;
      Tensor<T> vol = generate_subject(cfg, tmpl, s, &truths[static_cast<std::size_t>(s)]);
      write_volume(out_dir + "/" + names[static_cast<std::size_t>(s)], vol);
    }
  };
  if (threads <= 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::int64_t per = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back(work, std::min<std::int64_t>(n, t * per), std::min<std::int64_t>(n, (t + 1) * per));
    for (auto& th : pool) th.join();
  }

  std::vector<double> raw(static_cast<std::size_t>(n));
  for (std::int64_t s = 0; s < n; ++s) raw[static_cast<std::size_t>(s)] = truths[static_cast<std::size_t>(s)].raw_label;
  const std::vector<double> labels = rescale_labels(cfg, raw);

  Manifest m;
  m.dir = out_dir;
  for (std::int64_t s = 0; s < n; ++s) {
    ManifestEntry e;
    e.path = names[static_cast<std::size_t>(s)];
    e.label = labels[static_cast<std::size_t>(s)];
    e.split = s < cfg.n_train ? "train" : (s < cfg.n_train + cfg.n_val ? "val" : "test");
    m.entries.push_back(std::move(e));
  }
  write_manifest(out_dir + "/manifest.csv", m);
  return m;
}

}  // namespace rcn
