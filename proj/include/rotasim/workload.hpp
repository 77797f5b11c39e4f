#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rotasim/core.hpp"

namespace rotasim {

enum class WorkloadSource { kSynthetic, kTrace };

struct WorkloadSpec {
  WorkloadSource source = WorkloadSource::kSynthetic;
  double rps = 1.0;
  std::int64_t n_requests = 1;
  std::vector<TokenCount> prompt_len_dist = {256};  // sampled uniformly
  std::vector<TokenCount> output_len_dist = {64};
  std::string trace_path;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_requests < 1) throw SimError(ErrorCode::kInvalidConfig, "n_requests must be >= 1");
    if (source == WorkloadSource::kSynthetic) {
      if (rps <= 0) throw SimError(ErrorCode::kInvalidConfig, "rps must be > 0");
      if (prompt_len_dist.empty() || output_len_dist.empty())
        throw SimError(ErrorCode::kInvalidConfig, "length distributions must be nonempty");
      for (TokenCount v : prompt_len_dist)
        if (v < 1) throw SimError(ErrorCode::kInvalidConfig, "prompt lengths must be >= 1");
      for (TokenCount v : output_len_dist)
        if (v < 1) throw SimError(ErrorCode::kInvalidConfig, "output lengths must be >= 1");
    }
  }
};

namespace detail {

// 53-bit uniform in [0, 1); the transform is pinned so streams are identical
// across standard libraries.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

inline double exponential_gap(std::mt19937_64& rng, double rate) {
  return -std::log1p(-uniform01(rng)) / rate;
}

}  // namespace detail

/** n Poisson arrival times: i.i.d. exponential gaps of mean 1/rps. */
inline std::vector<Seconds> gen_arrivals(double rps, std::int64_t n, std::uint64_t seed) {
  if (rps <= 0) throw SimError(ErrorCode::kBadArgument, "rps must be > 0");
  if (n < 1) throw SimError(ErrorCode::kBadArgument, "n must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<Seconds> arrivals;
  arrivals.reserve(static_cast<std::size_t>(n));
  Seconds t = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    t += detail::exponential_gap(rng, rps);
    arrivals.push_back(t);
  }
  return arrivals;
}

/**
 * JSONL trace: one object per line with prompt_tokens, output_tokens and an
 * optional arrival_s. Requests with missing arrival_s carry t_arr = -1 and
 * get arrivals from gen_arrivals in build_workload.
 */
inline std::vector<Request> load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SimError(ErrorCode::kParseError, "cannot open trace file " + path);
  std::vector<Request> requests;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SimError(ErrorCode::kParseError,
                     path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("prompt_tokens") || !j.contains("output_tokens"))
      throw SimError(ErrorCode::kParseError, path + ":" + std::to_string(line_no) +
                                                 ": missing prompt_tokens/output_tokens");
    Request r;
    r.id = static_cast<RequestId>(requests.size() + 1);
    r.prompt_tokens = j.at("prompt_tokens").get<TokenCount>();
    r.output_tokens = j.at("output_tokens").get<TokenCount>();
    if (r.prompt_tokens < 0 || r.output_tokens < 0)
      throw SimError(ErrorCode::kNegativeLength,
                     path + ":" + std::to_string(line_no) + ": negative token length");
    r.t_arr = j.contains("arrival_s") ? j.at("arrival_s").get<double>() : -1.0;
    requests.push_back(std::move(r));
  }
  return requests;
}

/** Materialize a workload: synthetic sampling or trace ingestion. */
inline std::vector<Request> build_workload(const WorkloadSpec& spec) {
  spec.validate();
  std::vector<Request> requests;
  if (spec.source == WorkloadSource::kTrace) {
    requests = load_trace(spec.trace_path);
    if (requests.empty()) return requests;
    if (static_cast<std::int64_t>(requests.size()) > spec.n_requests)
      requests.resize(static_cast<std::size_t>(spec.n_requests));  // file order
    const bool need_arrivals =
        std::any_of(requests.begin(), requests.end(), [](const Request& r) { return r.t_arr < 0; });
    if (need_arrivals) {
      auto arrivals =
          gen_arrivals(spec.rps, static_cast<std::int64_t>(requests.size()), spec.seed);
      for (std::size_t i = 0; i < requests.size(); ++i) requests[i].t_arr = arrivals[i];
    }
    return requests;
  }

  auto arrivals = gen_arrivals(spec.rps, spec.n_requests, spec.seed);
  std::mt19937_64 len_rng(spec.seed + 0x9e3779b97f4a7c15ull);
  requests.reserve(static_cast<std::size_t>(spec.n_requests));
  for (std::int64_t i = 0; i < spec.n_requests; ++i) {
    Request r;
    r.id = static_cast<RequestId>(i + 1);
    r.t_arr = arrivals[static_cast<std::size_t>(i)];
    r.prompt_tokens = spec.prompt_len_dist[len_rng() % spec.prompt_len_dist.size()];
    r.output_tokens = spec.output_len_dist[len_rng() % spec.output_len_dist.size()];
    requests.push_back(std::move(r));
  }
  return requests;
}

}  // namespace rotasim
