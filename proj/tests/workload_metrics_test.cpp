#include "rotasim/workload.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "rotasim/metrics.hpp"

namespace rotasim {
namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path);
  out << content;
  return path.string();
}

TEST(GenArrivals, BasicContracts) {
  const auto one = gen_arrivals(10.0, 1, 5);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_GT(one[0], 0.0);

  const auto a = gen_arrivals(20.0, 10000, 123);
  const auto b = gen_arrivals(20.0, 10000, 123);
  EXPECT_EQ(a, b);  // same seed, same stream
  EXPECT_NE(a, gen_arrivals(20.0, 10000, 124));
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));

  // Law of large numbers: sample mean gap within 5% of 1/rps.
  const double mean_gap = a.back() / static_cast<double>(a.size());
  EXPECT_NEAR(mean_gap, 0.05, 0.05 * 0.05);

  EXPECT_THROW(gen_arrivals(0.0, 10, 1), SimError);
  EXPECT_THROW(gen_arrivals(1.0, 0, 1), SimError);
}

TEST(LoadTrace, FieldMapping) {
  const auto path = write_temp("rotasim_trace_ok.jsonl",
                               "{\"prompt_tokens\":128,\"output_tokens\":64}\n"
                               "{\"prompt_tokens\":32,\"output_tokens\":8,\"arrival_s\":1.5}\n");
  const auto reqs = load_trace(path);
  ASSERT_EQ(reqs.size(), 2u);
  EXPECT_EQ(reqs[0].prompt_tokens, 128);
  EXPECT_EQ(reqs[0].output_tokens, 64);
  EXPECT_LT(reqs[0].t_arr, 0.0);  // missing arrival_s: filled later
  EXPECT_DOUBLE_EQ(reqs[1].t_arr, 1.5);
}

TEST(LoadTrace, EmptyFile) {
  const auto path = write_temp("rotasim_trace_empty.jsonl", "");
  EXPECT_TRUE(load_trace(path).empty());
}

TEST(LoadTrace, NegativeLengthNamesLine) {
  const auto path = write_temp("rotasim_trace_neg.jsonl",
                               "{\"prompt_tokens\":128,\"output_tokens\":64}\n"
                               "{\"prompt_tokens\":128,\"output_tokens\":-1}\n");
  try {
    load_trace(path);
    FAIL() << "expected NEGATIVE_LENGTH";
  } catch (const SimError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNegativeLength);
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
}

TEST(LoadTrace, ParseErrorNamesLine) {
  const auto path = write_temp("rotasim_trace_bad.jsonl",
                               "{\"prompt_tokens\":128,\"output_tokens\":64}\n"
                               "not json\n");
  try {
    load_trace(path);
    FAIL() << "expected PARSE_ERROR";
  } catch (const SimError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParseError);
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
}

TEST(BuildWorkload, TraceTruncationAndArrivalFill) {
  const auto path = write_temp("rotasim_trace_fill.jsonl",
                               "{\"prompt_tokens\":10,\"output_tokens\":2}\n"
                               "{\"prompt_tokens\":20,\"output_tokens\":3}\n"
                               "{\"prompt_tokens\":30,\"output_tokens\":4}\n");
  WorkloadSpec spec;
  spec.source = WorkloadSource::kTrace;
  spec.trace_path = path;
  spec.n_requests = 2;  // rows beyond n_requests are dropped in file order
  spec.rps = 5.0;
  spec.seed = 9;
  const auto reqs = build_workload(spec);
  ASSERT_EQ(reqs.size(), 2u);
  EXPECT_EQ(reqs[0].prompt_tokens, 10);
  EXPECT_EQ(reqs[1].prompt_tokens, 20);
  EXPECT_GT(reqs[0].t_arr, 0.0);
  EXPECT_GT(reqs[1].t_arr, reqs[0].t_arr);
}

TEST(BuildWorkload, SyntheticDeterminism) {
  WorkloadSpec spec;
  spec.rps = 10.0;
  spec.n_requests = 100;
  spec.prompt_len_dist = {64, 128, 256};
  spec.output_len_dist = {8, 16};
  spec.seed = 77;
  const auto a = build_workload(spec);
  const auto b = build_workload(spec);
  ASSERT_EQ(a.size(), 100u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].prompt_tokens, b[i].prompt_tokens);
    EXPECT_DOUBLE_EQ(a[i].t_arr, b[i].t_arr);
  }
}

RequestRecord record_with_times(std::vector<Seconds> times, Seconds t_arr = 0.0) {
  RequestRecord r;
  r.id = 1;
  r.t_arr = t_arr;
  r.token_times = std::move(times);
  r.finish_time = r.token_times.empty() ? t_arr : r.token_times.back();
  return r;
}

TEST(Metrics, TtftAndGaps) {
  const auto r = record_with_times({1.0, 1.1, 1.4});
  EXPECT_DOUBLE_EQ(ttft(r), 1.0);
  const auto gaps = tbt_gaps(r);
  ASSERT_EQ(gaps.size(), 2u);
  EXPECT_NEAR(gaps[0], 0.1, 1e-12);
  EXPECT_NEAR(gaps[1], 0.3, 1e-12);
  const auto single = record_with_times({2.0});
  EXPECT_TRUE(tbt_gaps(single).empty());
  EXPECT_THROW(ttft(record_with_times({})), SimError);
}

TEST(Metrics, RotaryPauseShowsUpAsGap) {
  // A 0.5 s pause between tokens 2 and 3 must appear in the gap list.
  const auto r = record_with_times({1.0, 1.01, 1.51, 1.52});
  const auto gaps = tbt_gaps(r);
  EXPECT_GE(*std::max_element(gaps.begin(), gaps.end()), 0.5);
}

TEST(Metrics, SloAttainment) {
  SimResult result;
  result.requests.push_back(record_with_times({0.001, 0.002}));          // instant
  result.requests.push_back(record_with_times({6.0, 6.05}, 0.0));       // ttft 6 > 5
  auto [ttft_rate, tbt_rate] = slo_attainment(result, SloSpec{5.0, 0.1});
  EXPECT_DOUBLE_EQ(ttft_rate, 0.5);
  EXPECT_DOUBLE_EQ(tbt_rate, 1.0);

  SimResult gappy;
  gappy.requests.push_back(record_with_times({0.1, 0.25}));  // one 150ms gap
  auto [t2, b2] = slo_attainment(gappy, SloSpec{5.0, 0.1});
  EXPECT_DOUBLE_EQ(t2, 1.0);
  EXPECT_DOUBLE_EQ(b2, 0.0);
  // Mean-gap mode is more forgiving by construction.
  auto [t3, b3] = slo_attainment(gappy, SloSpec{5.0, 0.1}, TbtAggregation::kMeanGap);
  EXPECT_DOUBLE_EQ(b3, 0.0);  // single gap: mean == max
}

TEST(Metrics, AttainmentMonotoneInThreshold) {
  SimResult result;
  for (int i = 1; i <= 20; ++i)
    result.requests.push_back(record_with_times({0.1 * i, 0.1 * i + 0.01 * i}));
  double prev_ttft = -1, prev_tbt = -1;
  for (double scale : {0.2, 0.5, 1.0, 2.0, 4.0}) {
    auto [tr, br] = slo_attainment(result, SloSpec{scale, 0.05 * scale});
    EXPECT_GE(tr, prev_ttft);
    EXPECT_GE(br, prev_tbt);
    EXPECT_GE(tr, 0.0);
    EXPECT_LE(tr, 1.0);
    prev_ttft = tr;
    prev_tbt = br;
  }
}

TEST(Metrics, PercentileNearestRank) {
  std::vector<double> grid;
  for (int i = 1; i <= 100; ++i) grid.push_back(i);
  EXPECT_DOUBLE_EQ(percentile(grid, 99), 99.0);
  EXPECT_DOUBLE_EQ(percentile(grid, 50), 50.0);
  EXPECT_DOUBLE_EQ(percentile({3.5}, 12), 3.5);
  EXPECT_THROW(percentile({}, 50), SimError);
  EXPECT_THROW(percentile({1.0}, 101), SimError);
  // Monotone in p, bounded by extremes.
  double prev = -1;
  for (double p : {0.0, 10.0, 25.0, 50.0, 90.0, 99.0, 100.0}) {
    const double v = percentile(grid, p);
    EXPECT_GE(v, prev);
    EXPECT_GE(v, 1.0);
    EXPECT_LE(v, 100.0);
    prev = v;
  }
}

TEST(Metrics, Throughput) {
  SimResult result;
  // 10 requests x 100 tokens over a 10 s span.
  for (int i = 0; i < 10; ++i) {
    std::vector<Seconds> times;
    for (int k = 1; k <= 100; ++k) times.push_back(10.0 * k / 100.0);
    auto rec = record_with_times(std::move(times));
    rec.id = i + 1;
    result.requests.push_back(std::move(rec));
  }
  EXPECT_DOUBLE_EQ(throughput(result), 100.0);
}

TEST(Metrics, StatsP99AtLeastP50) {
  SimResult result;
  for (int i = 1; i <= 50; ++i)
    result.requests.push_back(record_with_times({0.05 * i, 0.05 * i + 0.001 * i}));
  const SimStats stats = compute_stats(result, SloSpec{5.0, 0.1});
  EXPECT_GE(stats.p99_ttft_s, stats.p50_ttft_s);
  EXPECT_GE(stats.p99_tbt_s, stats.p50_tbt_s);
  EXPECT_EQ(stats.n_requests, 50);
}

}  // namespace
}  // namespace rotasim
