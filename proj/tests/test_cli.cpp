// End-to-end checks of the command-line tool: exit codes, report artifacts,
// and cross-command consistency, driving the real binary (path injected by
// the build as RCN_CLI_PATH).

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "rcn/data.hpp"
#include "rcn/tensor.hpp"

namespace rcn {
namespace {

using nlohmann::json;

struct CliRun {
  int code = -1;
  std::string out, err;
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

CliRun cli(const std::string& args) {
  static int n = 0;
  const std::string so = testing::TempDir() + "cli_stdout_" + std::to_string(n) + ".txt";
  const std::string se = testing::TempDir() + "cli_stderr_" + std::to_string(n) + ".txt";
  ++n;
  const std::string cmd = std::string(RCN_CLI_PATH) + " " + args + " >" + so + " 2>" + se;
  const int rc = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = slurp(so);
  r.err = slurp(se);
  std::remove(so.c_str());
  std::remove(se.c_str());
  return r;
}

// One tiny dataset, generated through the tool itself and shared by the
// training-path tests.
const std::string& dataset_dir() {
  static const std::string dir = [] {
    const std::string d = testing::TempDir() + "cli_ds";
    const CliRun r = cli("gen-data --shape 6 6 6 --n-train 3 --n-val 2 --n-test 2 --blobs 2 --seed 9 --out " + d);
    if (r.code != 0) ADD_FAILURE() << "dataset generation failed: " << r.err;
    return d;
  }();
  return dir;
}

std::string manifest() { return dataset_dir() + "/manifest.csv"; }

TEST(Cli, RequiresASubcommand) {
  const CliRun r = cli("");
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, HelpListsTheSubcommands) {
  const CliRun r = cli("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"gen-data", "preprocess", "segment", "train", "eval", "sweep-k", "sweep-hidden", "sweep-size", "bench-conv", "count-params"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, UnknownFlagIsAUsageError) {
  EXPECT_EQ(cli("count-params --bogus").code, 1);
}

TEST(Cli, CountParamsMatchesTheArchitectureTables) {
  const std::string dir = testing::TempDir() + "cli_params";
  const CliRun base = cli("count-params --arch baseline --out " + dir);
  ASSERT_EQ(base.code, 0) << base.err;
  const json jb = json::parse(base.out);
  EXPECT_EQ(jb.at("conv_weights").get<std::int64_t>(), 219672);
  EXPECT_EQ(jb.at("fc_weights").get<std::int64_t>(), 590080);
  EXPECT_EQ(jb.at("k").get<std::int64_t>(), 1);

  // The report file carries the same numbers.
  const json jf = json::parse(slurp(dir + "/params.json"));
  EXPECT_EQ(jf.at("conv_weights"), jb.at("conv_weights"));
  EXPECT_EQ(jf.at("total"), jb.at("total"));

  const CliRun prop = cli("count-params --arch proposed --out " + dir);
  ASSERT_EQ(prop.code, 0);
  const json jp = json::parse(prop.out);
  EXPECT_EQ(jp.at("conv_weights").get<std::int64_t>(), 233280);
  EXPECT_EQ(jp.at("fc_weights").get<std::int64_t>(), 16640);
  EXPECT_EQ(jp.at("k").get<std::int64_t>(), 2);
  std::filesystem::remove_all(dir);
}

TEST(Cli, GenDataWritesTheDataset) {
  const std::string dir = dataset_dir();
  ASSERT_TRUE(std::filesystem::exists(manifest()));
  EXPECT_TRUE(std::filesystem::exists(dir + "/gen_config.json"));
  const Manifest m = read_manifest(manifest());
  EXPECT_EQ(m.entries.size(), 7u);
  for (const auto& e : m.entries) EXPECT_TRUE(std::filesystem::exists(m.resolve(e))) << e.path;
  const json cfg = json::parse(slurp(dir + "/gen_config.json"));
  EXPECT_EQ(cfg.at("seed").get<std::uint64_t>(), 9u);
}

TEST(Cli, GenDataIsSeedReproducible) {
  const std::string a = testing::TempDir() + "cli_gen_a";
  const std::string b = testing::TempDir() + "cli_gen_b";
  const std::string c = testing::TempDir() + "cli_gen_c";
  const std::string flags = "gen-data --shape 5 5 5 --n-train 1 --n-val 1 --n-test 1 --blobs 1 --out ";
  ASSERT_EQ(cli(flags + a + " --seed 4").code, 0);
  ASSERT_EQ(cli(flags + b + " --seed 4").code, 0);
  ASSERT_EQ(cli(flags + c + " --seed 5").code, 0);
  EXPECT_EQ(slurp(a + "/manifest.csv"), slurp(b + "/manifest.csv"));
  EXPECT_EQ(slurp(a + "/vol_0000.bvol"), slurp(b + "/vol_0000.bvol"));
  EXPECT_NE(slurp(a + "/vol_0000.bvol"), slurp(c + "/vol_0000.bvol"));
  for (const auto& d : {a, b, c}) std::filesystem::remove_all(d);
}

TEST(Cli, PreprocessAppliesTheChosenReduction) {
  const std::string in = testing::TempDir() + "cli_pre_in.bvol";
  const std::string out = testing::TempDir() + "cli_pre_out.bvol";
  Tensor<float> t(Shape{9});
  for (std::int64_t i = 0; i < 9; ++i) t[i] = static_cast<float>(i + 1);
  write_volume(in, t);

  ASSERT_EQ(cli("preprocess " + in + " " + out + " --factor 3").code, 0);
  const Tensor<float> avg = read_volume<float>(out);
  ASSERT_EQ(avg.shape(), Shape{3});
  EXPECT_EQ(avg[0], 2.0f);
  EXPECT_EQ(avg[2], 8.0f);

  ASSERT_EQ(cli("preprocess " + in + " " + out + " --factor 3 --strategy max").code, 0);
  EXPECT_EQ(read_volume<float>(out)[2], 9.0f);

  EXPECT_EQ(cli("preprocess " + in + " " + out + " --strategy median").code, 1);  // unknown strategy
  EXPECT_EQ(cli("preprocess " + testing::TempDir() + "missing.bvol " + out).code, 2);
  std::remove(in.c_str());
  std::remove(out.c_str());
}

TEST(Cli, SegmentEmitsAChannelStack) {
  const std::string in = testing::TempDir() + "cli_seg_in.bvol";
  const std::string out = testing::TempDir() + "cli_seg_out.bvol";
  Tensor<float> vol(Shape{8, 8, 8});
  for (std::int64_t i = 0; i < vol.numel(); ++i) vol[i] = static_cast<float>(i % 13);
  write_volume(in, vol);

  const CliRun r = cli("segment " + in + " " + out + " --k 2 --boundary 1");
  ASSERT_EQ(r.code, 0) << r.err;
  const Tensor<float> seg = read_volume<float>(out);
  EXPECT_EQ(seg.shape(), (Shape{5, 5, 5, 8}));
  const json j = json::parse(r.out);
  EXPECT_EQ(j.at("k").get<std::int64_t>(), 2);
  EXPECT_EQ(j.at("channels").get<std::int64_t>(), 8);
  EXPECT_EQ(j.at("region_shape").get<std::vector<std::int64_t>>(), (std::vector<std::int64_t>{5, 5, 5}));

  EXPECT_EQ(cli("segment " + in + " " + out + " --k 50").code, 1);  // rate larger than the volume

  Tensor<float> flat(Shape{9});
  write_volume(in, flat);
  EXPECT_EQ(cli("segment " + in + " " + out).code, 2);  // wrong rank
  std::remove(in.c_str());
  std::remove(out.c_str());
}

std::string micro_arch_flags() { return "--filters 2 2 2 2 --k 1 --hidden 4 --boundary 0"; }

TEST(Cli, TrainThenEvalAgreeOnTheCheckpoint) {
  const std::string tdir = testing::TempDir() + "cli_train";
  const CliRun tr = cli("train --data " + manifest() + " " + micro_arch_flags() +
                        " --epochs 2 --seeds 1 --seed 3 --out " + tdir);
  ASSERT_EQ(tr.code, 0) << tr.err;
  ASSERT_TRUE(std::filesystem::exists(tdir + "/seed_3.rcnw"));
  ASSERT_TRUE(std::filesystem::exists(tdir + "/runs.csv"));
  const std::string csv = slurp(tdir + "/runs.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "spec,k,seed,val_mse,test_mse,test_mae,minutes,best_epoch");

  const json summary = json::parse(slurp(tdir + "/summary.json"));
  ASSERT_EQ(summary.at("runs").size(), 1u);
  const double test_mse = summary.at("runs")[0].at("test_mse").get<double>();

  const std::string edir = testing::TempDir() + "cli_eval";
  const CliRun ev = cli("eval --data " + manifest() + " " + micro_arch_flags() + " --weights " + tdir +
                        "/seed_3.rcnw --split test --out " + edir);
  ASSERT_EQ(ev.code, 0) << ev.err;
  const json ej = json::parse(slurp(edir + "/eval.json"));
  // Same weights, same batching, same arithmetic: the numbers must agree
  // exactly, not approximately.
  EXPECT_EQ(ej.at("mse").get<double>(), test_mse);
  EXPECT_EQ(ej.at("examples").get<std::int64_t>(), 2);
  std::filesystem::remove_all(tdir);
  std::filesystem::remove_all(edir);
}

TEST(Cli, TrainingIsSeedReproducible) {
  const std::string a = testing::TempDir() + "cli_rep_a";
  const std::string b = testing::TempDir() + "cli_rep_b";
  const std::string flags = "train --data " + manifest() + " " + micro_arch_flags() + " --epochs 1 --seeds 1 --seed 6 --out ";
  ASSERT_EQ(cli(flags + a).code, 0);
  ASSERT_EQ(cli(flags + b).code, 0);
  EXPECT_EQ(slurp(a + "/seed_6.rcnw"), slurp(b + "/seed_6.rcnw"));  // byte-identical weights
  const json ja = json::parse(slurp(a + "/summary.json"));
  const json jb = json::parse(slurp(b + "/summary.json"));
  EXPECT_EQ(ja.at("mean").at("val_mse"), jb.at("mean").at("val_mse"));
  EXPECT_EQ(ja.at("mean").at("test_mse"), jb.at("mean").at("test_mse"));
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(Cli, SweepKWritesReportsAndSelects) {
  const std::string dir = testing::TempDir() + "cli_sweepk";
  const CliRun r = cli("sweep-k --data " + manifest() + " --filters 2 2 2 2 --hidden 4 --boundary 0 --ks 1 2 --epochs 1 --seeds 1 --out " + dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("selected k = "), std::string::npos);
  const json j = json::parse(slurp(dir + "/sweep_k.json"));
  ASSERT_EQ(j.at("rows").size(), 2u);
  const std::int64_t sel = j.at("selected_k").get<std::int64_t>();
  EXPECT_TRUE(sel == 1 || sel == 2);
  const std::string csv = slurp(dir + "/sweep_k.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "k,spec,k,seed,val_mse,test_mse,test_mae,minutes,best_epoch");
  std::filesystem::remove_all(dir);
}

TEST(Cli, BenchConvWritesRecordsAndVerdict) {
  const std::string dir = testing::TempDir() + "cli_bench";
  const CliRun r = cli("bench-conv --ks 1 2 4 --base 8 --batch 1 --filters 2 --reps 2 --out " + dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(dir + "/bench.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "k,m,kdim,n,reps,threads,total_ms,mean_ms,std_ms");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);  // header + 3 rates
  const json j = json::parse(slurp(dir + "/bench.json"));
  ASSERT_EQ(j.at("records").size(), 3u);
  EXPECT_TRUE(j.contains("ushape"));
  EXPECT_TRUE(j.at("ushape").at("pass").is_boolean());
  EXPECT_EQ(j.at("records")[0].at("kdim").get<std::int64_t>(), 27);
  std::filesystem::remove_all(dir);
}

TEST(Cli, MissingManifestIsADataError) {
  EXPECT_EQ(cli("train --data " + testing::TempDir() + "no_manifest.csv --epochs 1").code, 2);
}

}  // namespace
}  // namespace rcn
