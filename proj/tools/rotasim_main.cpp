// Command-line front end: single runs, sweep matrices, transfer-model
// calibration, and plot-data reshaping.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rotasim/rotasim.hpp"

namespace {

using namespace rotasim;

int cmd_run(const std::string& config_path, const std::string& trace_path,
            const std::string& out_dir, std::int64_t seed_override, bool dump_block_table,
            bool iteration_trace, const std::string& tbt_mode) {
  RunConfig rc = run_config_from_json(read_json_file(config_path));
  if (!trace_path.empty()) {
    rc.workload.source = WorkloadSource::kTrace;
    rc.workload.trace_path = trace_path;
  }
  if (seed_override >= 0) {
    rc.sim.seed = static_cast<std::uint64_t>(seed_override);
    rc.workload.seed = static_cast<std::uint64_t>(seed_override);
  }
  const TbtAggregation mode =
      tbt_mode == "mean" ? TbtAggregation::kMeanGap : TbtAggregation::kMaxGap;

  std::filesystem::create_directories(out_dir);
  auto requests = build_workload(rc.workload);
  Simulator sim(rc.sim, std::move(requests));
  SimResult result = sim.run();
  const SimStats stats = compute_stats(result, rc.sim.slos, mode);

  write_json_file(out_dir + "/metrics.json", metrics_to_json(stats));
  write_text_file(out_dir + "/requests.csv", per_request_csv(result, mode));
  if (iteration_trace)
    write_text_file(out_dir + "/iterations.csv", iteration_trace_csv(result));
  if (dump_block_table)
    write_json_file(out_dir + "/block_table.json", block_table_dump(sim.table()));

  std::cout << metrics_to_json(stats).dump(2) << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir,
              std::int64_t seed_override, const std::string& tbt_mode) {
  ExperimentMatrix matrix = matrix_from_json(read_json_file(config_path));
  if (!out_dir.empty()) matrix.output_dir = out_dir;
  if (seed_override >= 0) {
    matrix.base.sim.seed = static_cast<std::uint64_t>(seed_override);
    matrix.base.workload.seed = static_cast<std::uint64_t>(seed_override);
  }
  const TbtAggregation mode =
      tbt_mode == "mean" ? TbtAggregation::kMeanGap : TbtAggregation::kMaxGap;
  MatrixSummary summary = run_matrix(matrix, mode);
  int failures = 0;
  for (const IndexRow& row : summary.rows)
    if (!row.ok) {
      ++failures;
      std::cerr << "cell " << row.cell_index << " rep " << row.repetition
                << " failed: " << row.error << "\n";
    }
  std::cout << "ran " << summary.rows.size() << " cells, " << failures << " failed; index at "
            << summary.index_path << "\n";
  return summary.all_ok ? 0 : 1;
}

int cmd_calibrate(const std::string& link_path, const std::string& targets_path,
                  const std::string& profile_path, const std::string& out_dir) {
  LinkProfile seed =
      link_path.empty() ? LinkProfile::default_gh200() : link_profile_from_json(read_json_file(link_path));
  CalibrationTargets targets = CalibrationTargets::gh200_defaults();
  if (!targets_path.empty()) {
    const json j = read_json_file(targets_path);
    auto row = [&](const char* key, CalibrationRow& r) {
      if (!j.contains(key)) return;
      r.d2h_gbps = j.at(key).value("d2h_gbps", r.d2h_gbps);
      r.h2d_gbps = j.at(key).value("h2d_gbps", r.h2d_gbps);
      r.e2e_ms = j.at(key).value("e2e_ms", r.e2e_ms);
    };
    row("naive", targets.naive);
    row("ms", targets.ms);
    row("ms_mk", targets.ms_mk);
    row("duplex", targets.duplex);
    row("ideal", targets.ideal);
    targets.tokens_per_direction = j.value("tokens_per_direction", targets.tokens_per_direction);
  }
  ModelProfile profile;
  if (profile_path.empty()) {
    profile.name = "qwen2.5-32b-like";
    profile.n_layers = 64;
    profile.kv_bytes_per_token_per_layer = 4096;
    profile.block_tokens = 16;
  } else {
    profile = model_profile_from_json(read_json_file(profile_path));
  }

  CalibrationReport report = calibrate(seed, targets, profile);
  std::filesystem::create_directories(out_dir);
  write_json_file(out_dir + "/gh200-calibrated.json", to_json(report.link));

  static const char* kRows[] = {"naive", "ms", "ms+mk", "duplex", "ideal"};
  std::printf("%-8s %12s %12s %8s\n", "method", "predicted", "target", "err");
  for (int i = 0; i < 5; ++i) {
    const double err = (report.predicted_ms[i] - report.target_ms[i]) / report.target_ms[i];
    std::printf("%-8s %9.2f ms %9.2f ms %+7.1f%%\n", kRows[i], report.predicted_ms[i],
                report.target_ms[i], err * 100.0);
  }
  std::printf("max relative error %.1f%%; calibrated profile written to %s\n",
              report.max_rel_err * 100.0, (out_dir + "/gh200-calibrated.json").c_str());
  return 0;
}

int cmd_plot_data(const std::string& index_path, const std::string& x_param,
                  const std::string& y_metric, const std::string& out_path) {
  std::ifstream in(index_path);
  if (!in) {
    std::cerr << "cannot open " << index_path << "\n";
    return 1;
  }
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto rows = parse_index_csv(text);
  const std::string csv = emit_plot_data(rows, x_param, y_metric);
  if (out_path.empty())
    std::cout << csv;
  else
    write_text_file(out_path, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SLO-aware rotary-scheduling serving simulator"};
  app.require_subcommand(1);

  std::string config_path, trace_path, out_dir = "out", tbt_mode = "strict";
  std::int64_t seed_override = -1;
  bool dump_block_table = false, iteration_trace = false;

  auto* run = app.add_subcommand("run", "run one simulation from a config file");
  run->add_option("--config", config_path, "run config JSON")->required();
  run->add_option("--trace", trace_path, "JSONL trace overriding the workload section");
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--seed", seed_override, "override sim and workload seeds");
  run->add_flag("--dump-block-table", dump_block_table, "write final block table JSON");
  run->add_flag("--iteration-trace", iteration_trace, "write per-iteration CSV");
  run->add_option("--tbt-mode", tbt_mode, "per-request TBT aggregation: strict|mean")
      ->check(CLI::IsMember({"strict", "mean"}));

  std::string sweep_config, sweep_out;
  auto* sweep = app.add_subcommand("sweep", "run an experiment matrix");
  sweep->add_option("--config", sweep_config, "matrix config JSON")->required();
  sweep->add_option("--out", sweep_out, "output directory (overrides output_dir)");
  sweep->add_option("--seed", seed_override, "override base seeds");
  sweep->add_option("--tbt-mode", tbt_mode, "per-request TBT aggregation: strict|mean")
      ->check(CLI::IsMember({"strict", "mean"}));

  std::string link_path, targets_path, profile_path;
  auto* cal = app.add_subcommand("calibrate", "fit the transfer model to measured rows");
  cal->add_option("--config", link_path, "seed link profile JSON (defaults to built-in)");
  cal->add_option("--targets", targets_path, "measured targets JSON (defaults to built-in)");
  cal->add_option("--profile", profile_path, "model profile JSON for the workload geometry");
  cal->add_option("--out", out_dir, "output directory");

  std::string index_path, x_param, y_metric, plot_out;
  auto* plot = app.add_subcommand("plot-data", "reshape an index CSV for plotting");
  plot->add_option("--index", index_path, "index.csv from a sweep")->required();
  plot->add_option("--x", x_param, "swept parameter for the x axis")->required();
  plot->add_option("--y", y_metric, "metric column")->required();
  plot->add_option("--out", plot_out, "output CSV path (stdout if omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(config_path, trace_path, out_dir, seed_override, dump_block_table,
                     iteration_trace, tbt_mode);
    if (sweep->parsed()) return cmd_sweep(sweep_config, sweep_out, seed_override, tbt_mode);
    if (cal->parsed()) return cmd_calibrate(link_path, targets_path, profile_path, out_dir);
    if (plot->parsed()) return cmd_plot_data(index_path, x_param, y_metric, plot_out);
  } catch (const rotasim::SimError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
