#pragma once

#include <cctype>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rotasim/engine.hpp"
#include "rotasim/io.hpp"
#include "rotasim/metrics.hpp"
#include "rotasim/workload.hpp"

namespace rotasim {

inline const std::vector<std::string>& supported_sweep_params() {
  static const std::vector<std::string> params = {"policy", "rps",    "alpha",      "beta_b",
                                                  "beta_f", "b_xfer", "engine_mode"};
  return params;
}

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"ttft_attainment", "tbt_attainment",
                                                 "p50_ttft_s",      "p99_ttft_s",
                                                 "p50_tbt_s",       "p99_tbt_s",
                                                 "throughput_tok_s", "n_requests"};
  return names;
}

struct ExperimentMatrix {
  RunConfig base;
  std::vector<std::pair<std::string, std::vector<json>>> sweeps;  // sorted by name
  int repetitions = 1;
  std::string output_dir = "out";
  std::int64_t max_cells = 4096;

  void validate() const {
    if (repetitions < 1) throw SimError(ErrorCode::kInvalidConfig, "repetitions must be >= 1");
    std::int64_t cells = 1;
    for (const auto& [name, values] : sweeps) {
      const auto& ok = supported_sweep_params();
      if (std::find(ok.begin(), ok.end(), name) == ok.end()) {
        std::string list;
        for (const auto& p : ok) list += (list.empty() ? "" : ", ") + p;
        throw SimError(ErrorCode::kInvalidConfig,
                       "unsupported sweep parameter '" + name + "' (supported: " + list + ")");
      }
      if (values.empty())
        throw SimError(ErrorCode::kInvalidConfig, "sweep '" + name + "' has no values");
      cells *= static_cast<std::int64_t>(values.size());
    }
    if (cells * repetitions > max_cells)
      throw SimError(ErrorCode::kInvalidConfig,
                     "matrix of " + std::to_string(cells * repetitions) +
                         " runs exceeds max_cells " + std::to_string(max_cells));
  }
};

inline ExperimentMatrix matrix_from_json(const json& j) {
  ExperimentMatrix m;
  m.base = run_config_from_json(j.contains("base") ? j.at("base") : j);
  if (j.contains("sweeps")) {
    for (const auto& [name, values] : j.at("sweeps").items()) {
      std::vector<json> vals(values.begin(), values.end());
      m.sweeps.emplace_back(name, std::move(vals));
    }
    std::sort(m.sweeps.begin(), m.sweeps.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
  }
  m.repetitions = j.value("repetitions", 1);
  m.output_dir = j.value("output_dir", m.output_dir);
  m.max_cells = j.value("max_cells", m.max_cells);
  m.validate();
  return m;
}

inline void apply_sweep_param(RunConfig& rc, const std::string& name, const json& value) {
  if (name == "policy")
    rc.sim.policy = parse_policy(value.get<std::string>());
  else if (name == "rps")
    rc.workload.rps = value.get<double>();
  else if (name == "alpha")
    rc.sim.vlt.alpha = value.get<double>();
  else if (name == "beta_b")
    rc.sim.vlt.beta_b = value.get<double>();
  else if (name == "beta_f")
    rc.sim.vlt.beta_f = value.get<double>();
  else if (name == "b_xfer")
    rc.sim.b_xfer = value.get<BlockCount>();
  else if (name == "engine_mode")
    rc.sim.engine_mode = parse_engine_mode(value.get<std::string>());
  else
    throw SimError(ErrorCode::kInvalidConfig, "unsupported sweep parameter '" + name + "'");
}

inline std::string sweep_value_string(const json& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

struct IndexRow {
  std::int64_t cell_index = 0;
  int repetition = 0;
  std::vector<std::pair<std::string, std::string>> params;  // swept name -> value
  bool ok = true;
  std::string error;
  SimStats stats;
  std::string metrics_file;
};

struct MatrixSummary {
  std::vector<IndexRow> rows;
  std::string index_csv;
  std::string index_path;
  bool all_ok = true;
};

namespace detail {

inline std::string metric_value(const SimStats& s, const std::string& name) {
  if (name == "ttft_attainment") return fmt_double(s.ttft_attainment);
  if (name == "tbt_attainment") return fmt_double(s.tbt_attainment);
  if (name == "p50_ttft_s") return fmt_double(s.p50_ttft_s);
  if (name == "p99_ttft_s") return fmt_double(s.p99_ttft_s);
  if (name == "p50_tbt_s") return fmt_double(s.p50_tbt_s);
  if (name == "p99_tbt_s") return fmt_double(s.p99_tbt_s);
  if (name == "throughput_tok_s") return fmt_double(s.throughput_tok_s);
  if (name == "n_requests") return std::to_string(s.n_requests);
  throw SimError(ErrorCode::kBadArgument, "unknown metric '" + name + "'");
}

inline std::string sanitize_for_filename(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.') c = '_';
  return s;
}

}  // namespace detail

/**
 * Run every cell of the cross product (last sweep varies fastest), write one
 * metrics JSON and per-request CSV per run plus an index CSV. Failed cells
 * are recorded and the matrix continues.
 */
inline MatrixSummary run_matrix(const ExperimentMatrix& matrix,
                                TbtAggregation tbt_mode = TbtAggregation::kMaxGap) {
  matrix.validate();
  std::filesystem::create_directories(matrix.output_dir);

  std::int64_t n_cells = 1;
  for (const auto& [name, values] : matrix.sweeps)
    n_cells *= static_cast<std::int64_t>(values.size());

  MatrixSummary summary;
  for (std::int64_t cell = 0; cell < n_cells; ++cell) {
    // Decode the odometer: last parameter varies fastest.
    std::vector<std::size_t> pick(matrix.sweeps.size(), 0);
    std::int64_t rem = cell;
    for (std::size_t k = matrix.sweeps.size(); k-- > 0;) {
      const auto n = static_cast<std::int64_t>(matrix.sweeps[k].second.size());
      pick[k] = static_cast<std::size_t>(rem % n);
      rem /= n;
    }
    for (int rep = 0; rep < matrix.repetitions; ++rep) {
      IndexRow row;
      row.cell_index = cell;
      row.repetition = rep;
      RunConfig rc = matrix.base;
      std::string tag;
      for (std::size_t k = 0; k < matrix.sweeps.size(); ++k) {
        const auto& [name, values] = matrix.sweeps[k];
        apply_sweep_param(rc, name, values[pick[k]]);
        row.params.emplace_back(name, sweep_value_string(values[pick[k]]));
        tag += name + "=" + detail::sanitize_for_filename(sweep_value_string(values[pick[k]])) +
               "__";
      }
      const std::uint64_t offset =
          static_cast<std::uint64_t>(cell) + static_cast<std::uint64_t>(rep) * 1000000ull;
      rc.sim.seed = matrix.base.sim.seed + offset;
      rc.workload.seed = matrix.base.workload.seed + offset;

      const std::string stem = "cell" + std::to_string(cell) + "__" + tag + "rep" +
                               std::to_string(rep);
      try {
        auto requests = build_workload(rc.workload);
        SimResult result = run_simulation(rc.sim, std::move(requests));
        row.stats = compute_stats(result, rc.sim.slos, tbt_mode);
        row.metrics_file = stem + ".metrics.json";
        write_json_file(matrix.output_dir + "/" + row.metrics_file,
                        metrics_to_json(row.stats));
        write_text_file(matrix.output_dir + "/" + stem + ".requests.csv",
                        per_request_csv(result, tbt_mode));
      } catch (const SimError& e) {
        row.ok = false;
        row.error = e.what();
        summary.all_ok = false;
      }
      summary.rows.push_back(std::move(row));
    }
  }

  std::ostringstream out;
  out << "cell_index,repetition";
  for (const auto& [name, values] : matrix.sweeps) out << ',' << name;
  out << ",status";
  for (const auto& m : metric_names()) out << ',' << m;
  out << ",metrics_file\n";
  for (const IndexRow& row : summary.rows) {
    out << row.cell_index << ',' << row.repetition;
    for (const auto& [name, value] : row.params) out << ',' << value;
    out << ',' << (row.ok ? "ok" : "failed");
    for (const auto& m : metric_names())
      out << ',' << (row.ok ? detail::metric_value(row.stats, m) : "");
    out << ',' << row.metrics_file << '\n';
  }
  summary.index_csv = out.str();
  summary.index_path = matrix.output_dir + "/index.csv";
  write_text_file(summary.index_path, summary.index_csv);
  return summary;
}

/**
 * Reshape index rows into a tidy CSV: one row per x value, one column per
 * combination of the remaining swept parameters.
 */
inline std::string emit_plot_data(const std::vector<IndexRow>& rows, const std::string& x_param,
                                  const std::string& y_metric) {
  const auto& metrics = metric_names();
  if (std::find(metrics.begin(), metrics.end(), y_metric) == metrics.end()) {
    std::string list;
    for (const auto& m : metrics) list += (list.empty() ? "" : ", ") + m;
    throw SimError(ErrorCode::kBadArgument,
                   "unknown metric '" + y_metric + "' (valid: " + list + ")");
  }
  std::set<std::string> swept;
  for (const IndexRow& row : rows)
    for (const auto& [name, value] : row.params) swept.insert(name);
  if (!swept.count(x_param)) {
    std::string list;
    for (const auto& s : swept) list += (list.empty() ? "" : ", ") + s;
    throw SimError(ErrorCode::kBadArgument,
                   "parameter '" + x_param + "' is not swept (swept: " +
                       (list.empty() ? "none" : list) + ")");
  }

  bool multi_rep = false;
  for (const IndexRow& row : rows) multi_rep |= row.repetition > 0;

  auto series_of = [&](const IndexRow& row) {
    std::string s;
    for (const auto& [name, value] : row.params) {
      if (name == x_param) continue;
      s += (s.empty() ? "" : "&") + name + "=" + value;
    }
    if (multi_rep) s += (s.empty() ? "" : "&") + std::string("rep=") + std::to_string(row.repetition);
    return s.empty() ? std::string("value") : s;
  };
  auto x_of = [&](const IndexRow& row) {
    for (const auto& [name, value] : row.params)
      if (name == x_param) return value;
    return std::string();
  };

  // Sort x numerically when possible, lexicographically otherwise.
  auto x_less = [](const std::string& a, const std::string& b) {
    try {
      std::size_t pa = 0, pb = 0;
      const double da = std::stod(a, &pa);
      const double db = std::stod(b, &pb);
      if (pa == a.size() && pb == b.size()) return da < db;
    } catch (...) {
    }
    return a < b;
  };

  std::vector<std::string> xs;
  std::set<std::string> series;
  std::map<std::pair<std::string, std::string>, std::string> values;
  for (const IndexRow& row : rows) {
    if (!row.ok) continue;
    const std::string x = x_of(row);
    const std::string s = series_of(row);
    if (std::find(xs.begin(), xs.end(), x) == xs.end()) xs.push_back(x);
    series.insert(s);
    values[{x, s}] = detail::metric_value(row.stats, y_metric);
  }
  std::sort(xs.begin(), xs.end(), x_less);

  std::ostringstream out;
  out << x_param;
  for (const auto& s : series) out << ',' << s;
  out << '\n';
  for (const auto& x : xs) {
    out << x;
    for (const auto& s : series) {
      auto it = values.find({x, s});
      out << ',' << (it == values.end() ? "" : it->second);
    }
    out << '\n';
  }
  return out.str();
}

/** Parse an index CSV produced by run_matrix back into rows. */
inline std::vector<IndexRow> parse_index_csv(const std::string& csv_text) {
  std::vector<IndexRow> rows;
  std::istringstream in(csv_text);
  std::string line;
  if (!std::getline(in, line)) return rows;
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    std::string field;
    while (std::getline(h, field, ',')) header.push_back(field);
  }
  const auto& metrics = metric_names();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream l(line);
    std::string field;
    while (std::getline(l, field, ',')) fields.push_back(field);
    fields.resize(header.size());
    IndexRow row;
    for (std::size_t i = 0; i < header.size(); ++i) {
      const std::string& key = header[i];
      const std::string& val = fields[i];
      if (key == "cell_index")
        row.cell_index = val.empty() ? 0 : std::stoll(val);
      else if (key == "repetition")
        row.repetition = val.empty() ? 0 : std::stoi(val);
      else if (key == "status")
        row.ok = val == "ok";
      else if (key == "metrics_file")
        row.metrics_file = val;
      else if (std::find(metrics.begin(), metrics.end(), key) != metrics.end()) {
        if (!val.empty()) {
          const double d = std::stod(val);
          if (key == "ttft_attainment") row.stats.ttft_attainment = d;
          if (key == "tbt_attainment") row.stats.tbt_attainment = d;
          if (key == "p50_ttft_s") row.stats.p50_ttft_s = d;
          if (key == "p99_ttft_s") row.stats.p99_ttft_s = d;
          if (key == "p50_tbt_s") row.stats.p50_tbt_s = d;
          if (key == "p99_tbt_s") row.stats.p99_tbt_s = d;
          if (key == "throughput_tok_s") row.stats.throughput_tok_s = d;
          if (key == "n_requests") row.stats.n_requests = static_cast<std::int64_t>(d);
        }
      } else {
        row.params.emplace_back(key, val);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace rotasim
