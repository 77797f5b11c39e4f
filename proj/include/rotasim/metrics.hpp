#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "rotasim/core.hpp"

namespace rotasim {

struct RequestRecord {
  RequestId id = 0;
  Seconds t_arr = 0.0;
  TokenCount prompt_tokens = 0;
  TokenCount output_tokens = 0;
  std::vector<Seconds> token_times;
  Seconds finish_time = 0.0;
  int n_preemptions = 0;
  int n_forced_preemptions = 0;
};

struct IterationRecord {
  std::int64_t index = 0;
  Seconds start = 0.0;
  double compute_time = 0.0;
  double transfer_time = 0.0;
  double wall_time = 0.0;
  TokenCount batch_prefill_tokens = 0;
  TokenCount batch_decode_tokens = 0;
  int preempted = 0;
  int resumed = 0;
  int admitted = 0;
  BlockCount hbm_free_blocks = 0;
  // Extra instrumentation, not part of the trace CSV.
  BlockCount d2h_blocks = 0;
  BlockCount h2d_blocks = 0;
  BlockCount eager_blocks = 0;
};

struct SimResult {
  std::vector<RequestRecord> requests;
  std::vector<IterationRecord> iterations;
  // Instrumentation counters maintained by the engine.
  std::int64_t race_violations = 0;
  std::int64_t preemption_events = 0;
  std::int64_t preemption_swapout_blocks = 0;  // blocks actually transferred at preemption
  std::int64_t preemption_held_blocks = 0;     // blocks held by requests when preempted
  // First-time preemptions only: no earlier swap-out has replicated anything.
  std::int64_t first_preemption_events = 0;
  std::int64_t first_preemption_swapout_blocks = 0;
  std::int64_t first_preemption_held_blocks = 0;
};

enum class TbtAggregation { kMaxGap, kMeanGap };

inline Seconds ttft(const RequestRecord& r) {
  if (r.token_times.empty())
    throw SimError(ErrorCode::kBadArgument,
                   "TTFT undefined for request " + std::to_string(r.id) + " with no tokens");
  return r.token_times.front() - r.t_arr;
}

inline std::vector<Seconds> tbt_gaps(const RequestRecord& r) {
  if (r.token_times.empty())
    throw SimError(ErrorCode::kBadArgument, "TBT undefined for an unfinished request");
  std::vector<Seconds> gaps;
  gaps.reserve(r.token_times.size());
  for (std::size_t i = 1; i < r.token_times.size(); ++i)
    gaps.push_back(r.token_times[i] - r.token_times[i - 1]);
  return gaps;
}

inline double request_tbt(const RequestRecord& r, TbtAggregation mode) {
  const auto gaps = tbt_gaps(r);
  if (gaps.empty()) return 0.0;  // single-token outputs attain TBT vacuously
  if (mode == TbtAggregation::kMaxGap) return *std::max_element(gaps.begin(), gaps.end());
  double sum = 0.0;
  for (double g : gaps) sum += g;
  return sum / static_cast<double>(gaps.size());
}

/** Fractions of requests meeting the TTFT and TBT thresholds. */
inline std::pair<double, double> slo_attainment(const SimResult& result, const SloSpec& slos,
                                                TbtAggregation mode = TbtAggregation::kMaxGap) {
  if (result.requests.empty()) return {1.0, 1.0};
  std::int64_t ttft_ok = 0, tbt_ok = 0;
  for (const RequestRecord& r : result.requests) {
    if (ttft(r) <= slos.ttft_slo) ++ttft_ok;
    if (request_tbt(r, mode) <= slos.tbt_slo) ++tbt_ok;
  }
  const double n = static_cast<double>(result.requests.size());
  return {static_cast<double>(ttft_ok) / n, static_cast<double>(tbt_ok) / n};
}

/** Nearest-rank percentile, p in [0, 100]. */
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw SimError(ErrorCode::kBadArgument, "percentile of empty input");
  if (p < 0 || p > 100) throw SimError(ErrorCode::kBadArgument, "percentile rank out of range");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  const auto rank = static_cast<std::size_t>(std::max(1.0, std::ceil(p / 100.0 * n)));
  return values[rank - 1];
}

/** Total emitted tokens divided by the span from first arrival to last completion. */
inline double throughput(const SimResult& result) {
  if (result.requests.empty()) return 0.0;
  std::int64_t tokens = 0;
  Seconds first_arrival = result.requests.front().t_arr;
  Seconds last_finish = 0.0;
  for (const RequestRecord& r : result.requests) {
    tokens += static_cast<std::int64_t>(r.token_times.size());
    first_arrival = std::min(first_arrival, r.t_arr);
    last_finish = std::max(last_finish, r.finish_time);
  }
  const double span = last_finish - first_arrival;
  if (span <= 0) return 0.0;
  return static_cast<double>(tokens) / span;
}

/** The aggregate block reported as metrics JSON. */
struct SimStats {
  double ttft_attainment = 1.0;
  double tbt_attainment = 1.0;
  double p50_ttft_s = 0.0;
  double p99_ttft_s = 0.0;
  double p50_tbt_s = 0.0;
  double p99_tbt_s = 0.0;
  double throughput_tok_s = 0.0;
  std::int64_t n_requests = 0;
};

inline SimStats compute_stats(const SimResult& result, const SloSpec& slos,
                              TbtAggregation mode = TbtAggregation::kMaxGap) {
  SimStats stats;
  stats.n_requests = static_cast<std::int64_t>(result.requests.size());
  if (result.requests.empty()) return stats;
  const auto [ttft_rate, tbt_rate] = slo_attainment(result, slos, mode);
  stats.ttft_attainment = ttft_rate;
  stats.tbt_attainment = tbt_rate;
  std::vector<double> ttfts;
  std::vector<double> gaps;  // pooled over all requests
  ttfts.reserve(result.requests.size());
  for (const RequestRecord& r : result.requests) {
    ttfts.push_back(ttft(r));
    for (double g : tbt_gaps(r)) gaps.push_back(g);
  }
  stats.p50_ttft_s = percentile(ttfts, 50);
  stats.p99_ttft_s = percentile(ttfts, 99);
  if (!gaps.empty()) {
    stats.p50_tbt_s = percentile(gaps, 50);
    stats.p99_tbt_s = percentile(gaps, 99);
  }
  stats.throughput_tok_s = throughput(result);
  return stats;
}

}  // namespace rotasim
