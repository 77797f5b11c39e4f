#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "rotasim/block_table.hpp"
#include "rotasim/engine.hpp"
#include "rotasim/metrics.hpp"
#include "rotasim/transfer.hpp"
#include "rotasim/workload.hpp"

namespace rotasim {

using nlohmann::json;

// ---- ModelProfile -----------------------------------------------------------

inline json to_json(const ModelProfile& p) {
  return json{{"name", p.name},
              {"n_layers", p.n_layers},
              {"kv_bytes_per_token_per_layer", p.kv_bytes_per_token_per_layer},
              {"block_tokens", p.block_tokens},
              {"compute_c0", p.compute_c0},
              {"compute_c1", p.compute_c1},
              {"compute_c2", p.compute_c2},
              {"compute_c3", p.compute_c3}};
}

inline ModelProfile model_profile_from_json(const json& j) {
  ModelProfile p;
  try {
    p.name = j.value("name", p.name);
    p.n_layers = j.at("n_layers").get<int>();
    p.kv_bytes_per_token_per_layer = j.at("kv_bytes_per_token_per_layer").get<Bytes>();
    p.block_tokens = j.value("block_tokens", 16);
    p.compute_c0 = j.value("compute_c0", p.compute_c0);
    p.compute_c1 = j.value("compute_c1", p.compute_c1);
    p.compute_c2 = j.value("compute_c2", p.compute_c2);
    p.compute_c3 = j.value("compute_c3", p.compute_c3);
  } catch (const json::exception& e) {
    throw SimError(ErrorCode::kParseError, std::string("model profile: ") + e.what());
  }
  p.validate();
  return p;
}

// ---- LinkProfile ------------------------------------------------------------

inline json to_json(const LinkProfile& l) {
  json curve = json::array();
  for (const auto& [bytes, gbps] : l.bw_curve) curve.push_back(json::array({bytes, gbps}));
  return json{{"bw_curve", curve},
              {"c2c_per_direction_cap", l.c2c_per_direction_cap},
              {"dram_total_cap", l.dram_total_cap},
              {"launch_overhead", l.launch_overhead},
              {"batch_launch_overhead", l.batch_launch_overhead},
              {"duplex_efficiency", l.duplex_efficiency}};
}

inline LinkProfile link_profile_from_json(const json& j) {
  LinkProfile l;
  try {
    l.bw_curve.clear();
    for (const auto& pair : j.at("bw_curve"))
      l.bw_curve.emplace_back(pair.at(0).get<Bytes>(), pair.at(1).get<double>());
    l.c2c_per_direction_cap = j.value("c2c_per_direction_cap", l.c2c_per_direction_cap);
    l.dram_total_cap = j.value("dram_total_cap", l.dram_total_cap);
    l.launch_overhead = j.value("launch_overhead", l.launch_overhead);
    l.batch_launch_overhead = j.value("batch_launch_overhead", l.batch_launch_overhead);
    l.duplex_efficiency = j.value("duplex_efficiency", l.duplex_efficiency);
  } catch (const json::exception& e) {
    throw SimError(ErrorCode::kParseError, std::string("link profile: ") + e.what());
  }
  l.validate();
  return l;
}

// ---- WorkloadSpec -----------------------------------------------------------

inline json to_json(const WorkloadSpec& w) {
  return json{{"source", w.source == WorkloadSource::kSynthetic ? "synthetic" : "trace"},
              {"rps", w.rps},
              {"n_requests", w.n_requests},
              {"prompt_len_dist", w.prompt_len_dist},
              {"output_len_dist", w.output_len_dist},
              {"trace_path", w.trace_path},
              {"seed", w.seed}};
}

inline WorkloadSpec workload_from_json(const json& j) {
  WorkloadSpec w;
  try {
    const std::string src = j.value("source", "synthetic");
    if (src == "synthetic")
      w.source = WorkloadSource::kSynthetic;
    else if (src == "trace")
      w.source = WorkloadSource::kTrace;
    else
      throw SimError(ErrorCode::kParseError, "workload source must be synthetic|trace");
    w.rps = j.value("rps", w.rps);
    w.n_requests = j.value("n_requests", w.n_requests);
    if (j.contains("prompt_len_dist")) w.prompt_len_dist = j.at("prompt_len_dist").get<std::vector<TokenCount>>();
    if (j.contains("output_len_dist")) w.output_len_dist = j.at("output_len_dist").get<std::vector<TokenCount>>();
    w.trace_path = j.value("trace_path", w.trace_path);
    w.seed = j.value("seed", w.seed);
  } catch (const json::exception& e) {
    throw SimError(ErrorCode::kParseError, std::string("workload spec: ") + e.what());
  }
  w.validate();
  return w;
}

// ---- SimConfig ----------------------------------------------------------------

inline json to_json(const SimConfig& c) {
  return json{{"hbm_capacity_blocks", c.hbm_capacity_blocks},
              {"dram_capacity_blocks", c.dram_capacity_blocks},
              {"policy", to_string(c.policy)},
              {"vlt", {{"alpha", c.vlt.alpha}, {"beta_b", c.vlt.beta_b}, {"beta_f", c.vlt.beta_f}}},
              {"slos", {{"ttft_slo", c.slos.ttft_slo}, {"tbt_slo", c.slos.tbt_slo}}},
              {"b_xfer", c.b_xfer},
              {"prefill_chunk_tokens", c.prefill_chunk_tokens},
              {"max_batch_tokens", c.max_batch_tokens},
              {"engine_mode", to_string(c.engine_mode)},
              {"pipeline_overlap", c.pipeline_overlap},
              {"seed", c.seed}};
}

inline void sim_section_from_json(const json& j, SimConfig& c) {
  try {
    c.hbm_capacity_blocks = j.value("hbm_capacity_blocks", c.hbm_capacity_blocks);
    c.dram_capacity_blocks = j.value("dram_capacity_blocks", c.dram_capacity_blocks);
    if (j.contains("policy")) c.policy = parse_policy(j.at("policy").get<std::string>());
    if (j.contains("vlt")) {
      const json& v = j.at("vlt");
      c.vlt.alpha = v.value("alpha", c.vlt.alpha);
      c.vlt.beta_b = v.value("beta_b", c.vlt.beta_b);
      c.vlt.beta_f = v.value("beta_f", c.vlt.beta_f);
    }
    if (j.contains("slos")) {
      const json& s = j.at("slos");
      c.slos.ttft_slo = s.value("ttft_slo", c.slos.ttft_slo);
      c.slos.tbt_slo = s.value("tbt_slo", c.slos.tbt_slo);
    }
    c.b_xfer = j.value("b_xfer", c.b_xfer);
    c.prefill_chunk_tokens = j.value("prefill_chunk_tokens", c.prefill_chunk_tokens);
    c.max_batch_tokens = j.value("max_batch_tokens", c.max_batch_tokens);
    if (j.contains("engine_mode"))
      c.engine_mode = parse_engine_mode(j.at("engine_mode").get<std::string>());
    c.pipeline_overlap = j.value("pipeline_overlap", c.pipeline_overlap);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw SimError(ErrorCode::kParseError, std::string("sim config: ") + e.what());
  }
}

/** Top-level run configuration: profile + link + sim + workload. */
struct RunConfig {
  SimConfig sim;
  WorkloadSpec workload;
};

inline RunConfig run_config_from_json(const json& j) {
  RunConfig rc;
  if (j.contains("profile")) rc.sim.profile = model_profile_from_json(j.at("profile"));
  if (j.contains("link")) rc.sim.link = link_profile_from_json(j.at("link"));
  if (j.contains("sim")) sim_section_from_json(j.at("sim"), rc.sim);
  if (j.contains("workload")) rc.workload = workload_from_json(j.at("workload"));
  rc.sim.validate();
  rc.workload.validate();
  return rc;
}

inline json to_json(const RunConfig& rc) {
  return json{{"profile", to_json(rc.sim.profile)},
              {"link", to_json(rc.sim.link)},
              {"sim", to_json(rc.sim)},
              {"workload", to_json(rc.workload)}};
}

// ---- results -------------------------------------------------------------------

inline json metrics_to_json(const SimStats& s) {
  return json{{"ttft_attainment", s.ttft_attainment},
              {"tbt_attainment", s.tbt_attainment},
              {"p50_ttft_s", s.p50_ttft_s},
              {"p99_ttft_s", s.p99_ttft_s},
              {"p50_tbt_s", s.p50_tbt_s},
              {"p99_tbt_s", s.p99_tbt_s},
              {"throughput_tok_s", s.throughput_tok_s},
              {"n_requests", s.n_requests}};
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace detail

inline std::string per_request_csv(const SimResult& result, TbtAggregation mode) {
  std::ostringstream out;
  out << "id,t_arr,ttft_s,max_tbt_s,n_tokens,n_preemptions\n";
  for (const RequestRecord& r : result.requests) {
    out << r.id << ',' << detail::fmt_double(r.t_arr) << ',' << detail::fmt_double(ttft(r)) << ','
        << detail::fmt_double(request_tbt(r, mode)) << ',' << r.token_times.size() << ','
        << r.n_preemptions << '\n';
  }
  return out.str();
}

inline std::string iteration_trace_csv(const SimResult& result) {
  std::ostringstream out;
  out << "index,start,compute_time,transfer_time,wall_time,batch_prefill_tokens,"
         "batch_decode_tokens,preempted,resumed,admitted,hbm_free_blocks\n";
  for (const IterationRecord& it : result.iterations) {
    out << it.index << ',' << detail::fmt_double(it.start) << ','
        << detail::fmt_double(it.compute_time) << ',' << detail::fmt_double(it.transfer_time)
        << ',' << detail::fmt_double(it.wall_time) << ',' << it.batch_prefill_tokens << ','
        << it.batch_decode_tokens << ',' << it.preempted << ',' << it.resumed << ','
        << it.admitted << ',' << it.hbm_free_blocks << '\n';
  }
  return out.str();
}

inline json block_table_dump(const BlockTable& table) {
  json blocks = json::object();
  for (const auto& [id, b] : table.all_blocks()) {
    json entry{{"owner", b.owner},
               {"sync_state", b.sync_state == SyncState::kSynced ? "SYNCED" : "DIRTY"},
               {"version", b.version},
               {"filled_tokens", b.filled_tokens}};
    entry["hbm_slot"] = b.hbm_slot ? json(*b.hbm_slot) : json(nullptr);
    entry["dram_slot"] = b.dram_slot ? json(*b.dram_slot) : json(nullptr);
    if (b.dram_slot) entry["dram_version"] = b.dram_version;
    blocks[std::to_string(id)] = std::move(entry);
  }
  return json{{"hbm_capacity_blocks", table.hbm_capacity()},
              {"dram_capacity_blocks", table.dram_capacity()},
              {"free_hbm", table.free_hbm()},
              {"free_dram", table.free_dram()},
              {"blocks", blocks}};
}

// ---- file helpers ----------------------------------------------------------------

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SimError(ErrorCode::kParseError, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw SimError(ErrorCode::kParseError, path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SimError(ErrorCode::kParseError, "cannot write " + path);
  out << text;
}

inline void write_json_file(const std::string& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace rotasim
