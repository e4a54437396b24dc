// Command-line surface of the engine: dataset generation, preprocessing,
// segmentation, training and the experiment sweeps, the convolution-timing
// benchmark, and parameter accounting.  All reports are written as both CSV
// and JSON under --out; everything except wall-clock columns is reproducible
// byte-for-byte from --seed.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rcn/bench.hpp"
#include "rcn/data.hpp"
#include "rcn/model.hpp"
#include "rcn/report.hpp"
#include "rcn/segmentation.hpp"
#include "rcn/train.hpp"

namespace {

using nlohmann::json;

struct CommonOpts {
  std::uint64_t seed = 1;
  std::string out = ".";
  int threads = 1;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--seed", c.seed, "Base seed for every random choice");
  cmd->add_option("--out", c.out, "Output directory for reports and artifacts");
  cmd->add_option("--threads", c.threads, "Worker threads for the matrix product")->check(CLI::PositiveNumber);
}

struct ArchOpts {
  std::string arch = "baseline";
  std::vector<std::int64_t> filters;  // 4 values for a custom layout
  std::int64_t k = -1;
  std::int64_t hidden = -1;
  std::int64_t boundary = -1;
  std::vector<std::int64_t> input_shape;
};

void add_arch(CLI::App* cmd, ArchOpts& a, bool with_input_shape = false) {
  cmd->add_option("--arch", a.arch, "baseline | proposed | segmentation-only | reverse-only");
  cmd->add_option("--filters", a.filters, "Custom block filter counts (4 values)")->expected(4);
  cmd->add_option("--k", a.k, "Segmentation rate override");
  cmd->add_option("--hidden", a.hidden, "Hidden layer width override");
  cmd->add_option("--boundary", a.boundary, "Region boundary voxels override");
  if (with_input_shape) cmd->add_option("--input-shape", a.input_shape, "Volume extents X Y Z")->expected(3);
}

rcn::ArchitectureSpec make_spec(const ArchOpts& a, std::optional<std::array<std::int64_t, 3>> volume_shape) {
  rcn::ArchitectureSpec spec = rcn::spec_by_name(a.filters.empty() ? a.arch : "baseline");
  if (!a.filters.empty()) {
    spec.name = "custom";
    for (int i = 0; i < 4; ++i) spec.block_filters[i] = a.filters[static_cast<std::size_t>(i)];
    if (a.k < 0) spec.k = 1;
  }
  if (volume_shape) {
    spec.input_shape = *volume_shape;
  } else if (!a.input_shape.empty()) {
    spec.input_shape = {a.input_shape[0], a.input_shape[1], a.input_shape[2]};
  }
  if (a.k >= 0) spec.k = a.k;
  if (a.hidden >= 0) spec.hidden_units = a.hidden;
  if (a.boundary >= 0) spec.boundary = a.boundary;
  return spec;
}

json gen_cfg_json(const rcn::GeneratorConfig& cfg) {
  return {{"volume_shape", cfg.volume_shape},
          {"n_train", cfg.n_train},
          {"n_val", cfg.n_val},
          {"n_test", cfg.n_test},
          {"blobs_per_volume", cfg.blobs_per_volume},
          {"sigma_range", cfg.sigma_range},
          {"amplitude_range", cfg.amplitude_range},
          {"r", cfg.r},
          {"weights", cfg.weights},
          {"sigma_label", cfg.sigma_label},
          {"sigma_voxel", cfg.sigma_voxel},
          {"seed", cfg.seed},
          {"raw", cfg.raw},
          {"label_range", cfg.label_range}};
}

rcn::GeneratorConfig gen_cfg_from_json(const json& j) {
  rcn::GeneratorConfig cfg;
  const auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("volume_shape", cfg.volume_shape);
  get("n_train", cfg.n_train);
  get("n_val", cfg.n_val);
  get("n_test", cfg.n_test);
  get("blobs_per_volume", cfg.blobs_per_volume);
  get("sigma_range", cfg.sigma_range);
  get("amplitude_range", cfg.amplitude_range);
  get("r", cfg.r);
  get("weights", cfg.weights);
  get("sigma_label", cfg.sigma_label);
  get("sigma_voxel", cfg.sigma_voxel);
  get("seed", cfg.seed);
  get("raw", cfg.raw);
  get("label_range", cfg.label_range);
  return cfg;
}

void add_train_opts(CLI::App* cmd, rcn::TrainConfig& tc, std::string& data, std::int64_t& subset, std::int64_t& patience) {
  cmd->add_option("--data", data, "Dataset manifest (path,label,split CSV)")->required();
  cmd->add_option("--epochs", tc.epochs, "Epoch budget");
  cmd->add_option("--batch-size", tc.batch_size, "Mini-batch size");
  cmd->add_option("--seeds", tc.n_seeds, "Number of runs (seeds base, base+1, ...)");
  cmd->add_option("--alpha", tc.alpha, "Adam learning rate");
  cmd->add_option("--subset", subset, "Train on a seeded subsample of this size");
  cmd->add_option("--patience", patience, "Stop after this many epochs without validation improvement");
}

void finish_train_config(rcn::TrainConfig& tc, const CommonOpts& common, std::int64_t subset, std::int64_t patience) {
  tc.base_seed = common.seed;
  tc.threads = common.threads;
  if (subset > 0) tc.train_subset = subset;
  if (patience > 0) tc.patience = patience;
}

int run(int argc, char** argv) {
  CLI::App app{"volumetric regression CNN: training, segmentation and convolution-timing experiments"};
  app.require_subcommand(1);

  // gen-data ----------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic aligned-volume dataset");
  CommonOpts gen_common;
  add_common(gen, gen_common);
  std::string gen_config_path;
  std::vector<std::int64_t> gen_shape;
  rcn::GeneratorConfig gen_cfg_cli;
  gen_cfg_cli.n_train = -1;  // sentinel: fall back to config-file/default values
  std::int64_t gen_nval = -1, gen_ntest = -1, gen_blobs = -1, gen_r = -1;
  double gen_sigma_label = -1, gen_sigma_voxel = -1;
  std::vector<double> gen_weights;
  bool gen_raw = false;
  gen->add_option("--config", gen_config_path, "Generator config JSON (CLI flags override it)");
  gen->add_option("--shape", gen_shape, "Volume extents X Y Z")->expected(3);
  gen->add_option("--n-train", gen_cfg_cli.n_train, "Training subjects");
  gen->add_option("--n-val", gen_nval, "Validation subjects");
  gen->add_option("--n-test", gen_ntest, "Test subjects");
  gen->add_option("--blobs", gen_blobs, "Gaussian blobs per volume");
  gen->add_option("--r", gen_r, "Weight grid rate (r^3 cells)");
  gen->add_option("--weights", gen_weights, "Cell weights (r^3 values)");
  gen->add_option("--sigma-label", gen_sigma_label, "Label noise standard deviation");
  gen->add_option("--sigma-voxel", gen_sigma_voxel, "Voxel noise standard deviation");
  gen->add_flag("--raw", gen_raw, "Generate pre-pooling volumes (3X-2, 3Y-2, 3Z-2)");
  gen->callback([&] {
    rcn::GeneratorConfig cfg;
    if (!gen_config_path.empty()) {
      std::ifstream is(gen_config_path);
      if (!is) throw rcn::IoError("cannot open '" + gen_config_path + "'");
      json j;
      try {
        is >> j;
      } catch (const json::parse_error& e) {
        throw rcn::FormatError("config '" + gen_config_path + "' is not valid JSON: " + e.what());
      }
      cfg = gen_cfg_from_json(j);
    }
    if (!gen_shape.empty()) cfg.volume_shape = {gen_shape[0], gen_shape[1], gen_shape[2]};
    if (gen_cfg_cli.n_train >= 0) cfg.n_train = gen_cfg_cli.n_train;
    if (gen_nval >= 0) cfg.n_val = gen_nval;
    if (gen_ntest >= 0) cfg.n_test = gen_ntest;
    if (gen_blobs >= 0) cfg.blobs_per_volume = gen_blobs;
    if (gen_r >= 0) cfg.r = gen_r;
    if (!gen_weights.empty()) cfg.weights = gen_weights;
    if (gen_sigma_label >= 0) cfg.sigma_label = gen_sigma_label;
    if (gen_sigma_voxel >= 0) cfg.sigma_voxel = gen_sigma_voxel;
    if (gen_raw) cfg.raw = true;
    cfg.seed = gen_common.seed;

    rcn::Manifest m = rcn::generate_dataset<float>(cfg, gen_common.out, gen_common.threads);
    rcn::write_json(gen_common.out + "/gen_config.json", gen_cfg_json(cfg));
    json summary{{"subjects", m.entries.size()}, {"manifest", gen_common.out + "/manifest.csv"}, {"config", gen_cfg_json(cfg)}};
    std::cout << summary.dump(2) << '\n';
  });

  // preprocess ----------------------------------------------------------------
  auto* pre = app.add_subcommand("preprocess", "Pool a volume by a factor per axis");
  CommonOpts pre_common;
  add_common(pre, pre_common);
  std::string pre_in, pre_out, pre_strategy = "average";
  std::int64_t pre_factor = 3;
  pre->add_option("input", pre_in, "Input volume (.bvol)")->required();
  pre->add_option("output", pre_out, "Output volume (.bvol)")->required();
  pre->add_option("--strategy", pre_strategy, "average | max | naive");
  pre->add_option("--factor", pre_factor, "Pooling factor");
  pre->callback([&] {
    const rcn::Tensor<float> in = rcn::read_volume<float>(pre_in);
    rcn::write_volume(pre_out, rcn::prepool(in, pre_factor, rcn::parse_pool_strategy(pre_strategy)));
  });

  // segment -------------------------------------------------------------------
  auto* seg = app.add_subcommand("segment", "Split a volume into k^3 channel-stacked regions");
  CommonOpts seg_common;
  add_common(seg, seg_common);
  std::string seg_in, seg_out, seg_orient = "native";
  std::int64_t seg_k = 2, seg_boundary = 3;
  double seg_tau = 0.0;
  seg->add_option("input", seg_in, "Input volume (.bvol, rank 3)")->required();
  seg->add_option("output", seg_out, "Output segmented tensor (.bvol, rank 4)")->required();
  seg->add_option("--k", seg_k, "Segmentation rate");
  seg->add_option("--boundary", seg_boundary, "Boundary voxels added per dimension");
  seg->add_option("--orient", seg_orient, "native | min_overlap | max_overlap");
  seg->add_option("--tau", seg_tau, "Foreground threshold for the overlap objective");
  seg->callback([&] {
    const rcn::Tensor<float> vol = rcn::read_volume<float>(seg_in);
    if (vol.rank() != 3) throw rcn::FormatError("'" + seg_in + "' has rank " + std::to_string(vol.rank()) + ", expected 3");
    rcn::SegmentationPlan plan = rcn::make_plan({vol.dim(0), vol.dim(1), vol.dim(2)}, seg_k, seg_boundary);
    plan = rcn::orient_regions(plan, rcn::parse_orient_mode(seg_orient), vol, seg_tau);
    const auto segmented = rcn::segment(vol, plan);
    rcn::write_volume(seg_out, segmented.data);
    json j{{"k", plan.k},
           {"region_shape", plan.region_shape},
           {"channels", plan.regions()},
           {"orientation", plan.orientation},
           {"overlap_score", rcn::overlap_score(segmented, seg_tau)}};
    std::cout << j.dump(2) << '\n';
  });

  // train ---------------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Train one architecture across seeds");
  CommonOpts tr_common;
  add_common(tr, tr_common);
  ArchOpts tr_arch;
  add_arch(tr, tr_arch);
  rcn::TrainConfig tr_cfg;
  std::string tr_data;
  std::int64_t tr_subset = 0, tr_patience = 0;
  add_train_opts(tr, tr_cfg, tr_data, tr_subset, tr_patience);
  tr->callback([&] {
    const rcn::Dataset<float> ds = rcn::load_dataset<float>(tr_data);
    tr_cfg.spec = make_spec(tr_arch, ds.volume_shape);
    finish_train_config(tr_cfg, tr_common, tr_subset, tr_patience);
    std::filesystem::create_directories(tr_common.out);
    const std::vector<rcn::RunResult> runs = rcn::train(tr_cfg, ds, tr_common.out);
    rcn::write_run_csv(tr_common.out + "/runs.csv", runs);
    const json summary = rcn::runs_summary_json(runs);
    rcn::write_json(tr_common.out + "/summary.json", summary);
    std::cout << summary.dump(2) << '\n';
  });

  // eval ----------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Evaluate saved weights on a split");
  CommonOpts ev_common;
  add_common(ev, ev_common);
  ArchOpts ev_arch;
  add_arch(ev, ev_arch);
  std::string ev_data, ev_weights, ev_split = "test";
  std::int64_t ev_batch = 4;
  ev->add_option("--data", ev_data, "Dataset manifest")->required();
  ev->add_option("--weights", ev_weights, "Weight file (.rcnw)")->required();
  ev->add_option("--split", ev_split, "train | val | test");
  ev->add_option("--batch-size", ev_batch, "Evaluation batch size");
  ev->callback([&] {
    const rcn::Dataset<float> ds = rcn::load_dataset<float>(ev_data);
    const rcn::ArchitectureSpec spec = make_spec(ev_arch, ds.volume_shape);
    rcn::Network<float> net = rcn::load_weights<float>(ev_weights, spec);
    const rcn::SplitData<float>& split = ev_split == "train" ? ds.train : (ev_split == "val" ? ds.val : ds.test);
    if (ev_split != "train" && ev_split != "val" && ev_split != "test") throw rcn::ArgumentError("unknown split '" + ev_split + "'");
    const auto [mse_v, mae_v] = rcn::evaluate_split(net, split, ev_batch, ev_common.threads);
    std::filesystem::create_directories(ev_common.out);
    const json j{{"spec", spec.name}, {"k", spec.k}, {"split", ev_split}, {"mse", mse_v}, {"mae", mae_v}, {"examples", split.size()}};
    rcn::write_json(ev_common.out + "/eval.json", j);
    rcn::write_lines(ev_common.out + "/eval.csv", {"spec,k,split,mse,mae,examples",
                                                   spec.name + "," + std::to_string(spec.k) + "," + ev_split + "," + rcn::fmt_g(mse_v) + "," +
                                                       rcn::fmt_g(mae_v) + "," + std::to_string(split.size())});
    std::cout << j.dump(2) << '\n';
  });

  // sweep-k -------------------------------------------------------------------
  auto* swk = app.add_subcommand("sweep-k", "Train at several segmentation rates and select by validation MSE");
  CommonOpts swk_common;
  add_common(swk, swk_common);
  ArchOpts swk_arch;
  add_arch(swk, swk_arch);
  rcn::TrainConfig swk_cfg;
  std::string swk_data;
  std::int64_t swk_subset = 0, swk_patience = 0;
  std::vector<std::int64_t> swk_ks{1, 2, 3, 4};
  add_train_opts(swk, swk_cfg, swk_data, swk_subset, swk_patience);
  swk->add_option("--ks", swk_ks, "Rates to sweep");
  swk->callback([&] {
    const rcn::Dataset<float> ds = rcn::load_dataset<float>(swk_data);
    swk_cfg.spec = make_spec(swk_arch, ds.volume_shape);
    finish_train_config(swk_cfg, swk_common, swk_subset, swk_patience);
    std::filesystem::create_directories(swk_common.out);
    const rcn::SweepKResult res = rcn::sweep_k(swk_cfg, ds, swk_ks);
    rcn::write_sweep_k_reports(swk_common.out + "/sweep_k.csv", swk_common.out + "/sweep_k.json", res);
    std::cout << "selected k = " << res.selected_k << '\n';
  });

  // sweep-hidden ----------------------------------------------------------------
  auto* swh = app.add_subcommand("sweep-hidden", "Train across hidden-layer widths");
  CommonOpts swh_common;
  add_common(swh, swh_common);
  ArchOpts swh_arch;
  add_arch(swh, swh_arch);
  rcn::TrainConfig swh_cfg;
  std::string swh_data;
  std::int64_t swh_subset = 0, swh_patience = 0;
  std::vector<std::int64_t> swh_grid;
  add_train_opts(swh, swh_cfg, swh_data, swh_subset, swh_patience);
  swh->add_option("--grid", swh_grid, "Hidden widths to sweep")->required();
  swh->callback([&] {
    const rcn::Dataset<float> ds = rcn::load_dataset<float>(swh_data);
    swh_cfg.spec = make_spec(swh_arch, ds.volume_shape);
    finish_train_config(swh_cfg, swh_common, swh_subset, swh_patience);
    std::filesystem::create_directories(swh_common.out);
    const auto rows = rcn::sweep_hidden_units(swh_cfg, ds, swh_grid);
    rcn::write_sweep_hidden_reports(swh_common.out + "/sweep_hidden.csv", swh_common.out + "/sweep_hidden.json", rows);
    std::cout << "swept " << rows.size() << " hidden widths\n";
  });

  // sweep-size ------------------------------------------------------------------
  auto* sws = app.add_subcommand("sweep-size", "Train across training-set sizes");
  CommonOpts sws_common;
  add_common(sws, sws_common);
  ArchOpts sws_arch;
  add_arch(sws, sws_arch);
  rcn::TrainConfig sws_cfg;
  std::string sws_data;
  std::int64_t sws_subset = 0, sws_patience = 0;
  std::vector<std::string> sws_sizes;
  add_train_opts(sws, sws_cfg, sws_data, sws_subset, sws_patience);
  sws->add_option("--sizes", sws_sizes, "Training-set sizes (integers or 'full')")->required();
  sws->callback([&] {
    const rcn::Dataset<float> ds = rcn::load_dataset<float>(sws_data);
    sws_cfg.spec = make_spec(sws_arch, ds.volume_shape);
    finish_train_config(sws_cfg, sws_common, sws_subset, sws_patience);
    std::vector<std::int64_t> sizes;
    for (const auto& s : sws_sizes) {
      if (s == "full") {
        sizes.push_back(ds.train.size());
      } else {
        try {
          sizes.push_back(std::stoll(s));
        } catch (const std::exception&) {
          throw rcn::ArgumentError("size '" + s + "' is neither an integer nor 'full'");
        }
      }
    }
    std::filesystem::create_directories(sws_common.out);
    const auto rows = rcn::sweep_train_size(sws_cfg, ds, sizes);
    rcn::write_sweep_size_reports(sws_common.out + "/sweep_size.csv", sws_common.out + "/sweep_size.json", rows);
    std::cout << "swept " << rows.size() << " training sizes\n";
  });

  // bench-conv ------------------------------------------------------------------
  auto* bc = app.add_subcommand("bench-conv", "Time the lowered convolution across segmentation rates");
  CommonOpts bc_common;
  add_common(bc, bc_common);
  std::vector<std::int64_t> bc_ks = rcn::kDefaultBenchRates;
  std::int64_t bc_base = 72, bc_batch = 4, bc_filters = 8, bc_reps = 500;
  bc->add_option("--ks", bc_ks, "Rates (must divide the base extent)");
  bc->add_option("--base", bc_base, "Cubic volume side before segmentation");
  bc->add_option("--batch", bc_batch, "Batch size");
  bc->add_option("--filters", bc_filters, "Output filters");
  bc->add_option("--reps", bc_reps, "Timed repetitions per rate");
  bc->callback([&] {
    const auto records = rcn::bench_conv_sweep<float>(bc_ks, bc_base, bc_batch, bc_filters, bc_reps, bc_common.threads, bc_common.seed);
    std::filesystem::create_directories(bc_common.out);
    rcn::write_bench_csv(bc_common.out + "/bench.csv", records);
    json j{{"records", rcn::bench_json(records)}};
    if (records.size() >= 3) {
      const rcn::UShapeVerdict v = rcn::check_ushape(records);
      j["ushape"] = {{"pass", v.pass}, {"argmin_k", v.argmin_k}, {"detail", v.detail}};
      std::cout << (v.pass ? "U-shape: pass" : "U-shape: fail") << " — " << v.detail << '\n';
    }
    rcn::write_json(bc_common.out + "/bench.json", j);
    for (const auto& r : records) std::cout << rcn::bench_csv_row(r) << '\n';
  });

  // count-params ------------------------------------------------------------------
  auto* cp = app.add_subcommand("count-params", "Parameter accounting for an architecture");
  CommonOpts cp_common;
  add_common(cp, cp_common);
  ArchOpts cp_arch;
  add_arch(cp, cp_arch, /*with_input_shape=*/true);
  cp->callback([&] {
    const rcn::ArchitectureSpec spec = make_spec(cp_arch, std::nullopt);
    const rcn::ParamCounts pc = rcn::count_params(spec);
    const json j{{"spec", spec.name},       {"k", spec.k},
                 {"hidden_units", spec.hidden_units}, {"conv_weights", pc.conv_weights},
                 {"fc_weights", pc.fc_weights},       {"biases", pc.biases},
                 {"bn_params", pc.bn_params},         {"total", pc.total}};
    std::cout << j.dump(2) << '\n';
    std::filesystem::create_directories(cp_common.out);
    rcn::write_json(cp_common.out + "/params.json", j);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const rcn::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const rcn::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const rcn::ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const rcn::ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
