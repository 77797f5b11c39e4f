#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "rotasim/block_table.hpp"
#include "rotasim/core.hpp"
#include "rotasim/metrics.hpp"
#include "rotasim/scheduler.hpp"
#include "rotasim/transfer.hpp"

namespace rotasim {

// Rotation-engine variants: per-segment copies, merged segments, merged
// segments + batched kernel (still direction-serialized), and the full-duplex
// engine with eager block rotation.
enum class EngineMode { kNaive, kMs, kMsMk, kDuplex };

inline const char* to_string(EngineMode m) {
  switch (m) {
    case EngineMode::kNaive: return "naive";
    case EngineMode::kMs: return "ms";
    case EngineMode::kMsMk: return "ms-mk";
    case EngineMode::kDuplex: return "duplex";
  }
  return "unknown";
}

inline EngineMode parse_engine_mode(const std::string& name) {
  if (name == "naive") return EngineMode::kNaive;
  if (name == "ms") return EngineMode::kMs;
  if (name == "ms-mk" || name == "ms_mk") return EngineMode::kMsMk;
  if (name == "duplex") return EngineMode::kDuplex;
  throw SimError(ErrorCode::kInvalidConfig,
                 "unknown engine mode '" + name + "' (expected naive|ms|ms-mk|duplex)");
}

struct SimConfig {
  ModelProfile profile;
  LinkProfile link = LinkProfile::default_gh200();
  BlockCount hbm_capacity_blocks = 256;
  BlockCount dram_capacity_blocks = 8192;
  PolicyKind policy = PolicyKind::kLvf;
  VltParams vlt;
  SloSpec slos;
  BlockCount b_xfer = 64;  // total blocks per iteration, both directions
  TokenCount prefill_chunk_tokens = 512;
  TokenCount max_batch_tokens = 2048;
  EngineMode engine_mode = EngineMode::kDuplex;
  bool pipeline_overlap = true;
  std::uint64_t seed = 0;

  void validate() const {
    profile.validate();
    link.validate();
    vlt.validate();
    slos.validate();
    if (hbm_capacity_blocks <= 0 || dram_capacity_blocks <= 0)
      throw SimError(ErrorCode::kInvalidConfig, "capacities must be > 0");
    if (b_xfer < 0) throw SimError(ErrorCode::kInvalidConfig, "b_xfer must be >= 0");
    if (prefill_chunk_tokens < 1)
      throw SimError(ErrorCode::kInvalidConfig, "prefill_chunk_tokens must be >= 1");
    if (max_batch_tokens < 1)
      throw SimError(ErrorCode::kInvalidConfig, "max_batch_tokens must be >= 1");
    if (profile.compute_c0 <= 0)
      throw SimError(ErrorCode::kInvalidConfig,
                     "compute_c0 must be > 0 so iterations occupy wall time");
  }
};

/**
 * Deterministic continuous-batching loop with chunked prefill, proactive or
 * passive preemption via the configured policy, and transfer timing from the
 * link model. Strictly single-threaded.
 */
class Simulator {
 public:
  Simulator(SimConfig cfg, std::vector<Request> requests)
      : cfg_(std::move(cfg)),
        requests_(std::move(requests)),
        table_(cfg_.hbm_capacity_blocks, cfg_.dram_capacity_blocks, cfg_.profile) {
    cfg_.validate();
    std::stable_sort(requests_.begin(), requests_.end(), [](const Request& a, const Request& b) {
      if (a.t_arr != b.t_arr) return a.t_arr < b.t_arr;
      return a.id < b.id;
    });
    for (Request& r : requests_) {
      r.state = RequestState::kWaiting;
      if (r.prompt_tokens < 1 || r.output_tokens < 1)
        throw SimError(ErrorCode::kInvalidConfig,
                       "request " + std::to_string(r.id) + " has non-positive lengths");
    }
  }

  SimResult run() {
    if (!requests_.empty()) {
      clock_.advance_to(requests_.front().t_arr);
      while (finished_ < requests_.size()) step();
    }
    for (const Request& r : requests_) {
      RequestRecord rec;
      rec.id = r.id;
      rec.t_arr = r.t_arr;
      rec.prompt_tokens = r.prompt_tokens;
      rec.output_tokens = r.output_tokens;
      rec.token_times = r.token_times;
      rec.finish_time = r.token_times.empty() ? r.t_arr : r.token_times.back();
      rec.n_preemptions = r.n_preemptions;
      rec.n_forced_preemptions = r.n_forced_preemptions;
      result_.requests.push_back(std::move(rec));
    }
    result_.iterations = iterations_;
    return result_;
  }

  const BlockTable& table() const { return table_; }
  Seconds now() const { return clock_.now; }

  /** One engine iteration; callers normally just use run(). */
  IterationRecord step() {
    admit_arrivals();

    std::vector<Request*> running, waiting, rotary;
    collect_queues(running, waiting, rotary);

    if (running.empty() && waiting.empty() && rotary.empty()) {
      if (next_arrival_ < requests_.size()) {
        clock_.advance_to(requests_[next_arrival_].t_arr);
        admit_arrivals();
        collect_queues(running, waiting, rotary);
      } else {
        throw SimError(ErrorCode::kDeadlock, "no requests left but simulation not finished");
      }
    }

    for (const Request* r : waiting) check_fits_at_all(*r);
    for (const Request* r : rotary) check_fits_at_all(*r);

    IterationRecord rec;
    rec.index = static_cast<std::int64_t>(iterations_.size());
    rec.start = clock_.now;

    // Scheduling quantum is one iteration.
    auto demand = [this](const Request& r) { return scheduling_demand(r); };
    SchedulingDecision decision =
        schedule(cfg_.policy, std::span<Request* const>(running), std::span<Request* const>(waiting),
                 std::span<Request* const>(rotary), demand, cfg_.b_xfer, table_.free_hbm(),
                 clock_.now, cfg_.vlt, cfg_.slos);

    // Swap-out plans first: they establish how much HBM actually frees.
    std::vector<TransferPlan> d2h_plans;
    std::vector<RequestId> preempt_ok;
    for (RequestId id : decision.preempted) {
      if (auto plan = try_plan_swapout(request_by_id(id))) {
        if (!plan->empty()) d2h_plans.push_back(std::move(*plan));
        preempt_ok.push_back(id);
      }
    }
    decision.preempted = std::move(preempt_ok);

    reconcile(decision);
    apply_decision(decision, as_mutable_span(), clock_.now);
    for (RequestId id : decision.preempted) sync_blocks(request_by_id(id));

    // In serialized modes the D2H finishes before the H2D starts, so the
    // preempted slots are reusable within this iteration.
    if (serialized_directions())
      for (const TransferPlan& p : d2h_plans) table_.complete_plan(p);

    std::vector<TransferPlan> h2d_plans;
    for (RequestId id : decision.resumed_rotary)
      h2d_plans.push_back(table_.plan_swapin(id, transfer_mode()));

    // Batch formation: decodes first, prefill chunks fill the token budget.
    std::vector<Request*> decoders, prefillers;
    for (Request* r : sorted_running()) (r->prefilling() ? prefillers : decoders).push_back(r);
    TokenCount budget = cfg_.max_batch_tokens;
    std::vector<Request*> batch_decode;
    for (Request* r : decoders) {
      if (budget < 1) break;
      batch_decode.push_back(r);
      budget -= 1;
    }
    std::vector<std::pair<Request*, TokenCount>> batch_prefill;
    for (Request* r : prefillers) {
      const TokenCount chunk =
          std::min({cfg_.prefill_chunk_tokens, r->prompt_tokens - r->prefilled_tokens, budget});
      if (chunk <= 0) continue;
      batch_prefill.emplace_back(r, chunk);
      budget -= chunk;
    }

    // Grow each batch member's block tail; OOM forces passive preemption,
    // youngest arrival first.
    for (Request* r : batch_decode) ensure_tail_blocks(*r, 0, d2h_plans);
    for (auto& [r, chunk] : batch_prefill) ensure_tail_blocks(*r, chunk, d2h_plans);
    std::erase_if(batch_decode,
                  [](const Request* r) { return r->state != RequestState::kRunning; });
    std::erase_if(batch_prefill,
                  [](const auto& e) { return e.first->state != RequestState::kRunning; });

    BlockCount mandatory_blocks = 0;
    for (const TransferPlan& p : d2h_plans) mandatory_blocks += static_cast<BlockCount>(p.blocks.size());
    for (const TransferPlan& p : h2d_plans) mandatory_blocks += static_cast<BlockCount>(p.blocks.size());

    TransferPlan eager;
    if (cfg_.engine_mode == EngineMode::kDuplex) {
      const BlockCount eager_budget = std::max<BlockCount>(0, cfg_.b_xfer - mandatory_blocks);
      eager = table_.plan_eager_rotation(eager_budget, running_by_vlt_asc(), transfer_mode());
      if (!eager.empty()) d2h_plans.push_back(eager);
    }

    const TransferPlan merged_d2h = merge_plans(d2h_plans);
    const TransferPlan merged_h2d = merge_plans(h2d_plans);
    // Only concurrent directions can race; serialized modes order D2H first.
    if (!serialized_directions())
      result_.race_violations += count_slot_overlap(merged_d2h, merged_h2d);

    double transfer_time = 0.0;
    if (cfg_.engine_mode == EngineMode::kDuplex)
      transfer_time = duplex_transfer_time(merged_d2h, merged_h2d, cfg_.link);
    else
      transfer_time = uni_transfer_time(merged_d2h, cfg_.link) +
                      uni_transfer_time(merged_h2d, cfg_.link);

    TokenCount prefill_tokens = 0, kv_attended = 0;
    for (const auto& [r, chunk] : batch_prefill) {
      prefill_tokens += chunk;
      kv_attended += r->prefilled_tokens + chunk;
    }
    const TokenCount decode_tokens = static_cast<TokenCount>(batch_decode.size());
    for (const Request* r : batch_decode) kv_attended += r->prompt_tokens + r->generated_tokens;

    double compute_time = 0.0;
    if (decode_tokens + prefill_tokens > 0) {
      compute_time = cfg_.profile.compute_c0 + cfg_.profile.compute_c1 * prefill_tokens +
                     cfg_.profile.compute_c2 * decode_tokens +
                     cfg_.profile.compute_c3 * kv_attended;
    }

    const double wall = cfg_.pipeline_overlap ? std::max(compute_time, transfer_time)
                                              : compute_time + transfer_time;
    clock_.advance_by(wall);
    const Seconds end = clock_.now;

    if (!serialized_directions())
      for (const TransferPlan& p : d2h_plans) table_.complete_plan(p);
    for (const TransferPlan& p : h2d_plans) table_.complete_plan(p);

    // Token emission at the iteration boundary.
    TokenCount emitted = 0;
    for (auto& [r, chunk] : batch_prefill) {
      table_.record_tokens(r->id, chunk);
      r->prefilled_tokens += chunk;
      sync_blocks(*r);
      if (!r->prefilling()) {
        emit_token(*r, end);
        ++emitted;
      }
    }
    for (Request* r : batch_decode) {
      table_.record_tokens(r->id, 1);
      emit_token(*r, end);
      ++emitted;
    }

    if (emitted == 0 && prefill_tokens == 0) {
      if (++no_progress_iterations_ > 500000)
        throw SimError(ErrorCode::kDeadlock, "engine made no progress for 500000 iterations");
    } else {
      no_progress_iterations_ = 0;
    }

    if (rec.index % 8 == 0) table_.check_invariants();

    rec.compute_time = compute_time;
    rec.transfer_time = transfer_time;
    rec.wall_time = wall;
    rec.batch_prefill_tokens = prefill_tokens;
    rec.batch_decode_tokens = decode_tokens;
    rec.preempted = static_cast<int>(decision.preempted.size()) + forced_this_iteration_;
    rec.resumed = static_cast<int>(decision.resumed_rotary.size());
    rec.admitted = static_cast<int>(decision.admitted_waiting.size());
    rec.hbm_free_blocks = table_.free_hbm();
    rec.d2h_blocks = static_cast<BlockCount>(merged_d2h.blocks.size());
    rec.h2d_blocks = static_cast<BlockCount>(merged_h2d.blocks.size());
    rec.eager_blocks = static_cast<BlockCount>(eager.blocks.size());
    forced_this_iteration_ = 0;
    iterations_.push_back(rec);
    return rec;
  }

  /**
   * Keep the maximal prefix of prioritized requests whose demand fits the
   * HBM that is actually available once the preempted blocks free.
   */
  void reconcile(SchedulingDecision& decision) const {
    BlockCount avail = table_.free_hbm();
    if (serialized_directions()) avail += table_.pending_free_hbm();
    std::vector<RequestId> kept;
    for (RequestId id : decision.prioritized) {
      const Request& r = request_by_id(id);
      const BlockCount need = scheduling_demand(r);
      if (need > avail) break;
      avail -= need;
      kept.push_back(id);
    }
    auto member = [&kept](RequestId id) {
      return std::find(kept.begin(), kept.end(), id) != kept.end();
    };
    std::erase_if(decision.admitted_waiting, [&](RequestId id) { return !member(id); });
    std::erase_if(decision.resumed_rotary, [&](RequestId id) { return !member(id); });
    decision.prioritized = std::move(kept);
  }

 private:
  void admit_arrivals() {
    while (next_arrival_ < requests_.size() && requests_[next_arrival_].t_arr <= clock_.now)
      ++next_arrival_;
  }

  void collect_queues(std::vector<Request*>& running, std::vector<Request*>& waiting,
                      std::vector<Request*>& rotary) {
    for (std::size_t i = 0; i < next_arrival_; ++i) {
      Request& r = requests_[i];
      switch (r.state) {
        case RequestState::kRunning: running.push_back(&r); break;
        case RequestState::kWaiting: waiting.push_back(&r); break;
        case RequestState::kRotary: rotary.push_back(&r); break;
        case RequestState::kFinished: break;
      }
    }
  }

  std::vector<Request*> sorted_running() {
    std::vector<Request*> out;
    for (std::size_t i = 0; i < next_arrival_; ++i)
      if (requests_[i].state == RequestState::kRunning) out.push_back(&requests_[i]);
    std::sort(out.begin(), out.end(), [](const Request* a, const Request* b) {
      if (a->t_arr != b->t_arr) return a->t_arr < b->t_arr;
      return a->id < b->id;
    });
    return out;
  }

  std::vector<RequestId> running_by_vlt_asc() {
    struct Entry {
      Request* r;
      double vlt;
    };
    std::vector<Entry> entries;
    for (std::size_t i = 0; i < next_arrival_; ++i) {
      Request& r = requests_[i];
      if (r.state == RequestState::kRunning)
        entries.push_back({&r, compute_vlt(r, clock_.now, cfg_.vlt, cfg_.slos)});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.vlt != b.vlt) return a.vlt < b.vlt;
      if (a.r->t_arr != b.r->t_arr) return a.r->t_arr < b.r->t_arr;
      return a.r->id < b.r->id;
    });
    std::vector<RequestId> ids;
    ids.reserve(entries.size());
    for (const Entry& e : entries) ids.push_back(e.r->id);
    return ids;
  }

  std::span<Request* const> as_mutable_span() {
    ptrs_.clear();
    for (Request& r : requests_) ptrs_.push_back(&r);
    return ptrs_;
  }

  Request& request_by_id(RequestId id) {
    for (Request& r : requests_)
      if (r.id == id) return r;
    throw SimError(ErrorCode::kBadArgument, "unknown request " + std::to_string(id));
  }
  const Request& request_by_id(RequestId id) const {
    return const_cast<Simulator*>(this)->request_by_id(id);
  }

  bool serialized_directions() const { return cfg_.engine_mode != EngineMode::kDuplex; }

  TransferMode transfer_mode() const {
    switch (cfg_.engine_mode) {
      case EngineMode::kNaive: return TransferMode::kPerSegment;
      case EngineMode::kMs: return TransferMode::kPerSegmentMerged;
      case EngineMode::kMsMk:
      case EngineMode::kDuplex: return TransferMode::kBatched;
    }
    return TransferMode::kBatched;
  }

  /** HBM blocks the request must hold to run its next step. */
  BlockCount scheduling_demand(const Request& r) const {
    switch (r.state) {
      case RequestState::kWaiting:
        return blocks_needed(std::min(cfg_.prefill_chunk_tokens, r.prompt_tokens), 0,
                             cfg_.profile);
      case RequestState::kRotary:
        if (r.prefilling())
          return blocks_needed(
              std::min(r.prefilled_tokens + cfg_.prefill_chunk_tokens, r.prompt_tokens), 0,
              cfg_.profile);
        return blocks_needed(r.prompt_tokens, r.generated_tokens, cfg_.profile);
      case RequestState::kRunning:
        return table_.held_blocks(r.id);
      case RequestState::kFinished:
        break;
    }
    return 0;
  }

  void check_fits_at_all(const Request& r) const {
    if (scheduling_demand(r) > cfg_.hbm_capacity_blocks)
      throw SimError(ErrorCode::kDeadlock, "request " + std::to_string(r.id) +
                                               " exceeds total HBM capacity and can never run");
  }

  std::optional<TransferPlan> try_plan_swapout(const Request& r) {
    const BlockCount held = table_.held_blocks(r.id);
    try {
      TransferPlan plan = table_.plan_preemption_swapout(r.id, transfer_mode());
      result_.preemption_events += 1;
      result_.preemption_swapout_blocks += static_cast<std::int64_t>(plan.blocks.size());
      result_.preemption_held_blocks += held;
      if (r.n_preemptions == 0) {
        result_.first_preemption_events += 1;
        result_.first_preemption_swapout_blocks += static_cast<std::int64_t>(plan.blocks.size());
        result_.first_preemption_held_blocks += held;
      }
      return plan;
    } catch (const SimError& e) {
      if (e.code() == ErrorCode::kDramFull) return std::nullopt;  // excluded this iteration
      throw;
    }
  }

  /** Allocate the blocks this iteration's tokens will write. */
  void ensure_tail_blocks(Request& r, TokenCount prefill_chunk, std::vector<TransferPlan>& d2h) {
    if (r.state != RequestState::kRunning) return;
    const TokenCount target_tokens = r.prefilling()
                                         ? r.prefilled_tokens + prefill_chunk
                                         : r.prompt_tokens + r.generated_tokens;
    const BlockCount target = blocks_needed(target_tokens, 0, cfg_.profile);
    const BlockCount need = target - table_.held_blocks(r.id);
    if (need <= 0) return;
    std::set<RequestId> unusable;  // victims whose swap-out hit DRAM_FULL
    while (need > table_.free_hbm() && r.state == RequestState::kRunning) {
      Request* victim = youngest_running(unusable);
      if (victim == nullptr) break;
      if (!force_preempt(*victim, d2h)) {
        unusable.insert(victim->id);
        continue;
      }
      if (victim == &r) return;  // the failing request was youngest: it yields
    }
    if (r.state != RequestState::kRunning) return;
    if (need > table_.free_hbm()) {
      // Preempted slots may only free at iteration end (in-flight D2H):
      // nothing left to take this iteration, so the request yields too.
      if (!force_preempt(r, d2h))
        throw SimError(ErrorCode::kDramFull,
                       "request " + std::to_string(r.id) + " can neither grow nor swap out");
      return;
    }
    table_.allocate_blocks(r.id, need, Tier::kHbm);
    sync_blocks(r);
  }

  Request* youngest_running(const std::set<RequestId>& excluded) {
    Request* best = nullptr;
    for (std::size_t i = 0; i < next_arrival_; ++i) {
      Request& r = requests_[i];
      if (r.state != RequestState::kRunning || excluded.count(r.id)) continue;
      if (best == nullptr || r.t_arr > best->t_arr || (r.t_arr == best->t_arr && r.id > best->id))
        best = &r;
    }
    return best;
  }

  bool force_preempt(Request& r, std::vector<TransferPlan>& d2h) {
    auto plan = try_plan_swapout(r);
    if (!plan) return false;
    if (serialized_directions()) table_.complete_plan(*plan);  // D2H lands before any H2D
    if (!plan->empty()) d2h.push_back(std::move(*plan));
    if (r.token_times.empty()) r.t_last = clock_.now;
    r.state = RequestState::kRotary;
    r.n_preemptions += 1;
    r.n_forced_preemptions += 1;
    r.preempted_by_oom = true;
    forced_this_iteration_ += 1;
    sync_blocks(r);
    return true;
  }

  void emit_token(Request& r, Seconds at) {
    r.token_times.push_back(at);
    r.generated_tokens += 1;
    r.t_last = at;
    if (r.generated_tokens >= r.output_tokens) {
      r.state = RequestState::kFinished;
      table_.release_request(r.id);
      r.blocks.clear();
      finished_ += 1;
    } else {
      sync_blocks(r);
    }
  }

  void sync_blocks(Request& r) { r.blocks = table_.blocks_of(r.id); }

  static std::int64_t count_slot_overlap(const TransferPlan& d2h, const TransferPlan& h2d) {
    std::int64_t n = 0;
    std::vector<int> reads = d2h.hbm_slots;
    std::sort(reads.begin(), reads.end());
    for (int slot : h2d.hbm_slots)
      if (std::binary_search(reads.begin(), reads.end(), slot)) ++n;
    return n;
  }

  SimConfig cfg_;
  std::vector<Request> requests_;
  BlockTable table_;
  SimClock clock_;
  SimResult result_;
  std::vector<IterationRecord> iterations_;
  std::vector<Request*> ptrs_;
  std::size_t next_arrival_ = 0;
  std::size_t finished_ = 0;
  int forced_this_iteration_ = 0;
  int no_progress_iterations_ = 0;
};

inline SimResult run_simulation(const SimConfig& cfg, std::vector<Request> requests) {
  Simulator sim(cfg, std::move(requests));
  return sim.run();
}

}  // namespace rotasim
