#include "rotasim/engine.hpp"

#include <gtest/gtest.h>

#include "rotasim/io.hpp"
#include "rotasim/workload.hpp"

namespace rotasim {
namespace {

ModelProfile toy_profile() {
  ModelProfile p;
  p.name = "toy";
  p.n_layers = 8;
  p.kv_bytes_per_token_per_layer = 4096;
  p.block_tokens = 16;
  return p;
}

SimConfig base_config() {
  SimConfig cfg;
  cfg.profile = toy_profile();
  cfg.link = LinkProfile::default_gh200();
  cfg.hbm_capacity_blocks = 512;
  cfg.dram_capacity_blocks = 4096;
  cfg.policy = PolicyKind::kFcfs;
  cfg.b_xfer = 32;
  cfg.prefill_chunk_tokens = 512;
  cfg.max_batch_tokens = 2048;
  cfg.engine_mode = EngineMode::kDuplex;
  return cfg;
}

Request make_request(RequestId id, Seconds t_arr, TokenCount prompt, TokenCount output) {
  Request r;
  r.id = id;
  r.t_arr = t_arr;
  r.prompt_tokens = prompt;
  r.output_tokens = output;
  return r;
}

TEST(Run, EmptyWorkload) {
  const SimResult result = run_simulation(base_config(), {});
  EXPECT_TRUE(result.requests.empty());
  EXPECT_TRUE(result.iterations.empty());
}

TEST(Run, SingleRequestTimeline) {
  std::vector<Request> reqs = {make_request(1, 0.0, 16, 4)};
  for (PolicyKind policy : {PolicyKind::kFcfs, PolicyKind::kLvf}) {
    SimConfig cfg = base_config();
    cfg.policy = policy;
    const SimResult result = run_simulation(cfg, reqs);
    ASSERT_EQ(result.requests.size(), 1u);
    const auto& times = result.requests[0].token_times;
    ASSERT_EQ(times.size(), 4u);
    for (std::size_t i = 1; i < times.size(); ++i) EXPECT_GT(times[i], times[i - 1]);
  }
  // No contention: FCFS and LVF give identical timelines.
  SimConfig fcfs = base_config();
  SimConfig lvf = base_config();
  lvf.policy = PolicyKind::kLvf;
  EXPECT_EQ(run_simulation(fcfs, reqs).requests[0].token_times,
            run_simulation(lvf, reqs).requests[0].token_times);
}

TEST(Run, ContentionPairBothFinishWithPreemption) {
  SimConfig cfg = base_config();
  cfg.policy = PolicyKind::kLvf;
  cfg.hbm_capacity_blocks = 8;
  cfg.dram_capacity_blocks = 64;
  cfg.b_xfer = 4;
  std::vector<Request> reqs = {make_request(1, 0.0, 64, 64), make_request(2, 0.001, 64, 64)};
  const SimResult result = run_simulation(cfg, reqs);
  ASSERT_EQ(result.requests.size(), 2u);
  for (const auto& r : result.requests)
    EXPECT_EQ(static_cast<TokenCount>(r.token_times.size()), r.output_tokens);
  EXPECT_GE(result.preemption_events, 1);
}

TEST(Step, DecodeBatchContract) {
  SimConfig cfg = base_config();
  std::vector<Request> reqs;
  for (int i = 0; i < 8; ++i) reqs.push_back(make_request(i + 1, 0.0, 16, 4));
  const SimResult result = run_simulation(cfg, reqs);
  ASSERT_GE(result.iterations.size(), 2u);
  EXPECT_EQ(result.iterations[0].batch_prefill_tokens, 8 * 16);
  EXPECT_EQ(result.iterations[1].batch_decode_tokens, 8);
  // Every decode token lands exactly at its iteration boundary.
  const Seconds end1 = result.iterations[1].start + result.iterations[1].wall_time;
  for (const auto& r : result.requests) {
    ASSERT_GE(r.token_times.size(), 2u);
    EXPECT_DOUBLE_EQ(r.token_times[1], end1);
  }
}

TEST(Step, ChunkedPrefillEmitsFirstTokenAtFinalChunk) {
  SimConfig cfg = base_config();
  cfg.prefill_chunk_tokens = 2048;
  cfg.max_batch_tokens = 2048;
  std::vector<Request> reqs = {make_request(1, 0.0, 4096, 2)};
  const SimResult result = run_simulation(cfg, reqs);
  ASSERT_GE(result.iterations.size(), 2u);
  EXPECT_EQ(result.iterations[0].batch_prefill_tokens, 2048);
  EXPECT_EQ(result.iterations[1].batch_prefill_tokens, 2048);
  const Seconds second_end = result.iterations[1].start + result.iterations[1].wall_time;
  EXPECT_DOUBLE_EQ(result.requests[0].token_times.front(), second_end);
}

TEST(Step, WallTimeContract) {
  for (bool overlap : {true, false}) {
    SimConfig cfg = base_config();
    cfg.policy = PolicyKind::kLvf;
    cfg.pipeline_overlap = overlap;
    cfg.hbm_capacity_blocks = 16;
    cfg.dram_capacity_blocks = 128;
    cfg.b_xfer = 8;
    std::vector<Request> reqs;
    for (int i = 0; i < 6; ++i) reqs.push_back(make_request(i + 1, 0.0, 64, 32));
    const SimResult result = run_simulation(cfg, reqs);
    bool saw_transfer = false;
    for (const auto& it : result.iterations) {
      if (overlap)
        EXPECT_DOUBLE_EQ(it.wall_time, std::max(it.compute_time, it.transfer_time));
      else
        EXPECT_DOUBLE_EQ(it.wall_time, it.compute_time + it.transfer_time);
      saw_transfer |= it.transfer_time > 0;
    }
    EXPECT_TRUE(saw_transfer);
  }
}

TEST(Reconcile, MaximalPrefix) {
  SimConfig cfg = base_config();
  cfg.hbm_capacity_blocks = 4;
  // a needs 3 blocks (48 tokens), b needs 2 (32 tokens).
  std::vector<Request> reqs = {make_request(1, 0.0, 48, 1), make_request(2, 0.0, 32, 1)};
  Simulator sim(cfg, reqs);

  SchedulingDecision d;
  d.prioritized = {1, 2};
  d.admitted_waiting = {1, 2};
  sim.reconcile(d);
  EXPECT_EQ(d.prioritized, (std::vector<RequestId>{1}));  // b deferred, not skipped past
  EXPECT_EQ(d.admitted_waiting, (std::vector<RequestId>{1}));

  SchedulingDecision feasible;
  feasible.prioritized = {2};
  feasible.admitted_waiting = {2};
  sim.reconcile(feasible);
  EXPECT_EQ(feasible.prioritized, (std::vector<RequestId>{2}));

  SchedulingDecision empty;
  sim.reconcile(empty);
  EXPECT_TRUE(empty.prioritized.empty());
}

TEST(Run, DeterministicByteIdentical) {
  SimConfig cfg = base_config();
  cfg.policy = PolicyKind::kLvf;
  cfg.hbm_capacity_blocks = 64;
  cfg.b_xfer = 16;
  WorkloadSpec wl;
  wl.rps = 50.0;
  wl.n_requests = 60;
  wl.prompt_len_dist = {64, 128, 256};
  wl.output_len_dist = {16, 32, 64};
  wl.seed = 42;
  const auto reqs = build_workload(wl);
  const SimResult a = run_simulation(cfg, reqs);
  const SimResult b = run_simulation(cfg, reqs);
  const std::string ja = metrics_to_json(compute_stats(a, cfg.slos)).dump();
  const std::string jb = metrics_to_json(compute_stats(b, cfg.slos)).dump();
  EXPECT_EQ(ja, jb);
  ASSERT_EQ(a.requests.size(), b.requests.size());
  for (std::size_t i = 0; i < a.requests.size(); ++i)
    EXPECT_EQ(a.requests[i].token_times, b.requests[i].token_times);
}

TEST(Run, TokenConservationAndOccupancyBounds) {
  SimConfig cfg = base_config();
  cfg.policy = PolicyKind::kLvf;
  cfg.hbm_capacity_blocks = 48;
  cfg.dram_capacity_blocks = 512;
  cfg.b_xfer = 12;
  WorkloadSpec wl;
  wl.rps = 80.0;
  wl.n_requests = 50;
  wl.prompt_len_dist = {64, 128};
  wl.output_len_dist = {16, 48};
  wl.seed = 7;
  const SimResult result = run_simulation(cfg, build_workload(wl));
  for (const auto& r : result.requests) {
    EXPECT_EQ(static_cast<TokenCount>(r.token_times.size()), r.output_tokens);
    for (std::size_t i = 1; i < r.token_times.size(); ++i)
      EXPECT_GT(r.token_times[i], r.token_times[i - 1]);
  }
  for (const auto& it : result.iterations) {
    EXPECT_GE(it.hbm_free_blocks, 0);
    EXPECT_LE(it.wall_time, it.compute_time + it.transfer_time + 1e-12);
  }
  EXPECT_EQ(result.race_violations, 0);
}

TEST(Run, NoContentionMakesLvfMatchFcfs) {
  SimConfig cfg = base_config();
  cfg.hbm_capacity_blocks = 2048;  // ample: step-1 fallback throughout
  WorkloadSpec wl;
  wl.rps = 20.0;
  wl.n_requests = 40;
  wl.prompt_len_dist = {64, 128, 256};
  wl.output_len_dist = {8, 16, 32};
  wl.seed = 3;
  const auto reqs = build_workload(wl);
  SimConfig lvf = cfg;
  lvf.policy = PolicyKind::kLvf;
  const SimResult rf = run_simulation(cfg, reqs);
  const SimResult rl = run_simulation(lvf, reqs);
  ASSERT_EQ(rf.requests.size(), rl.requests.size());
  for (std::size_t i = 0; i < rf.requests.size(); ++i)
    EXPECT_EQ(rf.requests[i].token_times, rl.requests[i].token_times);
}

TEST(Run, SingleOversizedRequestDeadlocks) {
  SimConfig cfg = base_config();
  cfg.hbm_capacity_blocks = 4;
  cfg.dram_capacity_blocks = 64;
  std::vector<Request> reqs = {make_request(77, 0.0, 80, 4)};  // 5 blocks > 4
  try {
    run_simulation(cfg, reqs);
    FAIL() << "expected DEADLOCK";
  } catch (const SimError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDeadlock);
    EXPECT_NE(std::string(e.what()).find("77"), std::string::npos);
  }
}

TEST(Run, ForcedPreemptionOnBlockExhaustion) {
  SimConfig cfg = base_config();
  cfg.policy = PolicyKind::kFcfs;
  cfg.hbm_capacity_blocks = 9;
  cfg.dram_capacity_blocks = 128;
  cfg.b_xfer = 4;
  // Both fit at admission (4+4 blocks) but outgrow HBM while decoding.
  std::vector<Request> reqs = {make_request(1, 0.0, 64, 40), make_request(2, 0.0, 64, 40)};
  const SimResult result = run_simulation(cfg, reqs);
  int forced = 0;
  for (const auto& r : result.requests) forced += r.n_forced_preemptions;
  EXPECT_GE(forced, 1);
  for (const auto& r : result.requests)
    EXPECT_EQ(static_cast<TokenCount>(r.token_times.size()), r.output_tokens);
}

TEST(Run, EagerBudgetIsTheLeftoverOnly) {
  SimConfig cfg = base_config();
  cfg.policy = PolicyKind::kLvf;
  cfg.hbm_capacity_blocks = 48;
  cfg.dram_capacity_blocks = 1024;
  cfg.b_xfer = 16;
  WorkloadSpec wl;
  wl.rps = 60.0;
  wl.n_requests = 60;
  wl.prompt_len_dist = {64, 128, 256};
  wl.output_len_dist = {16, 32};
  wl.seed = 21;
  const SimResult result = run_simulation(cfg, build_workload(wl));
  for (const auto& it : result.iterations) {
    const BlockCount mandatory = it.d2h_blocks - it.eager_blocks + it.h2d_blocks;
    EXPECT_LE(it.eager_blocks, std::max<BlockCount>(0, cfg.b_xfer - mandatory))
        << "iteration " << it.index;
  }
}

TEST(Run, EngineModeChangesTransferCost) {
  SimConfig cfg = base_config();
  cfg.policy = PolicyKind::kLvf;
  cfg.hbm_capacity_blocks = 24;
  cfg.dram_capacity_blocks = 256;
  cfg.b_xfer = 12;
  WorkloadSpec wl;
  wl.rps = 100.0;
  wl.n_requests = 30;
  wl.prompt_len_dist = {128};
  wl.output_len_dist = {32};
  wl.seed = 11;
  const auto reqs = build_workload(wl);

  auto total_transfer = [&](EngineMode mode) {
    SimConfig c = cfg;
    c.engine_mode = mode;
    double sum = 0.0;
    for (const auto& it : run_simulation(c, reqs).iterations) sum += it.transfer_time;
    return sum;
  };
  const double naive = total_transfer(EngineMode::kNaive);
  const double ms = total_transfer(EngineMode::kMs);
  const double ms_mk = total_transfer(EngineMode::kMsMk);
  EXPECT_GT(naive, ms);
  EXPECT_GT(ms, ms_mk);
}

}  // namespace
}  // namespace rotasim
