#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcn/bench.hpp"
#include "rcn/errors.hpp"
#include "rcn/train.hpp"

// CSV and JSON result writers.  Numbers are printed with fixed formats so a
// rerun with the same seed reproduces reports byte-for-byte (timing columns
// are the documented exception).

namespace rcn {

inline std::string fmt_g(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& l : lines) os << l << '\n';
  if (!os) throw IoError("failed writing '" + path + "'");
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << j.dump(2) << '\n';
  if (!os) throw IoError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Run results: CSV `spec,k,seed,val_mse,test_mse,test_mae,minutes,best_epoch`.

inline const char* run_csv_header() { return "spec,k,seed,val_mse,test_mse,test_mae,minutes,best_epoch"; }

inline std::string run_csv_row(const RunResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%lld,%llu,%s,%s,%s,%.3f,%lld", r.spec_name.c_str(), static_cast<long long>(r.k),
                static_cast<unsigned long long>(r.seed), fmt_g(r.val_mse).c_str(), fmt_g(r.test_mse).c_str(),
                fmt_g(r.test_mae).c_str(), r.minutes, static_cast<long long>(r.best_epoch));
  return buf;
}

inline void write_run_csv(const std::string& path, const std::vector<RunResult>& runs) {
  std::vector<std::string> lines{run_csv_header()};
  for (const auto& r : runs) lines.push_back(run_csv_row(r));
  write_lines(path, lines);
}

inline nlohmann::json run_json(const RunResult& r) {
  return {{"spec", r.spec_name}, {"k", r.k},       {"seed", r.seed},       {"val_mse", r.val_mse},
          {"test_mse", r.test_mse}, {"test_mae", r.test_mae}, {"minutes", r.minutes}, {"best_epoch", r.best_epoch}};
}

inline nlohmann::json runs_summary_json(const std::vector<RunResult>& runs) {
  nlohmann::json j;
  j["runs"] = nlohmann::json::array();
  for (const auto& r : runs) j["runs"].push_back(run_json(r));
  if (!runs.empty()) {
    j["spec"] = runs.front().spec_name;
    j["k"] = runs.front().k;
    j["mean"] = {{"val_mse", mean_of(runs, &RunResult::val_mse)},
                 {"test_mse", mean_of(runs, &RunResult::test_mse)},
                 {"test_mae", mean_of(runs, &RunResult::test_mae)},
                 {"minutes", mean_of(runs, &RunResult::minutes)}};
    j["std"] = {{"val_mse", std_of(runs, &RunResult::val_mse)},
                {"test_mse", std_of(runs, &RunResult::test_mse)},
                {"test_mae", std_of(runs, &RunResult::test_mae)}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// Benchmark records.

inline void write_bench_csv(const std::string& path, const std::vector<BenchRecord>& records) {
  std::vector<std::string> lines{bench_csv_header()};
  for (const auto& r : records) lines.push_back(bench_csv_row(r));
  write_lines(path, lines);
}

inline nlohmann::json bench_json(const std::vector<BenchRecord>& records) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : records)
    rows.push_back({{"k", r.k},
                    {"m", r.gemm.m},
                    {"kdim", r.gemm.k},
                    {"n", r.gemm.n},
                    {"reps", r.reps},
                    {"threads", r.threads},
                    {"total_ms", r.total_ms},
                    {"mean_ms", r.mean_ms},
                    {"std_ms", r.std_ms},
                    {"flop_count", r.flop_count}});
  return rows;
}

// ---------------------------------------------------------------------------
// Sweep tables.

inline void write_sweep_k_reports(const std::string& csv_path, const std::string& json_path, const SweepKResult& res) {
  std::vector<std::string> lines{std::string("k,") + run_csv_header()};
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : res.rows) {
    for (const auto& r : row.runs) lines.push_back(std::to_string(row.k) + "," + run_csv_row(r));
    j["rows"].push_back({{"k", row.k},
                         {"mean_val_mse", row.mean_val_mse},
                         {"std_val_mse", row.std_val_mse},
                         {"mean_test_mse", row.mean_test_mse},
                         {"std_test_mse", row.std_test_mse},
                         {"runs", runs_summary_json(row.runs)["runs"]}});
  }
  j["selected_k"] = res.selected_k;
  write_lines(csv_path, lines);
  write_json(json_path, j);
}

inline void write_sweep_hidden_reports(const std::string& csv_path, const std::string& json_path, const std::vector<SweepHiddenRow>& rows) {
  std::vector<std::string> lines{std::string("hidden_units,fc_weights,") + run_csv_header()};
  nlohmann::json j = nlohmann::json::array();
  for (const auto& row : rows) {
    for (const auto& r : row.runs)
      lines.push_back(std::to_string(row.hidden_units) + "," + std::to_string(row.fc_weights) + "," + run_csv_row(r));
    j.push_back({{"hidden_units", row.hidden_units},
                 {"fc_weights", row.fc_weights},
                 {"mean_val_mse", row.mean_val_mse},
                 {"mean_test_mse", row.mean_test_mse},
                 {"std_test_mse", row.std_test_mse}});
  }
  write_lines(csv_path, lines);
  write_json(json_path, j);
}

inline void write_sweep_size_reports(const std::string& csv_path, const std::string& json_path, const std::vector<SweepSizeRow>& rows) {
  std::vector<std::string> lines{std::string("train_size,") + run_csv_header()};
  nlohmann::json j = nlohmann::json::array();
  for (const auto& row : rows) {
    for (const auto& r : row.runs) lines.push_back(std::to_string(row.size) + "," + run_csv_row(r));
    j.push_back({{"train_size", row.size}, {"mean_test_mse", row.mean_test_mse}, {"std_test_mse", row.std_test_mse}});
  }
  write_lines(csv_path, lines);
  write_json(json_path, j);
}

}  // namespace rcn
