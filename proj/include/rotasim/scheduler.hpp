#pragma once

#include <algorithm>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "rotasim/core.hpp"

namespace rotasim {

enum class PolicyKind { kFcfs, kWaitingFirst, kSwappedFirst, kSjfOracle, kLvf };

inline const char* to_string(PolicyKind p) {
  switch (p) {
    case PolicyKind::kFcfs: return "fcfs";
    case PolicyKind::kWaitingFirst: return "wf";
    case PolicyKind::kSwappedFirst: return "sf";
    case PolicyKind::kSjfOracle: return "sjf-oracle";
    case PolicyKind::kLvf: return "lvf";
  }
  return "unknown";
}

inline PolicyKind parse_policy(const std::string& name) {
  if (name == "fcfs") return PolicyKind::kFcfs;
  if (name == "wf") return PolicyKind::kWaitingFirst;
  if (name == "sf") return PolicyKind::kSwappedFirst;
  if (name == "sjf-oracle") return PolicyKind::kSjfOracle;
  if (name == "lvf") return PolicyKind::kLvf;
  throw SimError(ErrorCode::kInvalidConfig,
                 "unknown policy '" + name + "' (expected fcfs|wf|sf|sjf-oracle|lvf)");
}

/**
 * Virtual lag time: positive lag for waiting/rotary requests past their
 * tolerance, negative advance for running ones.
 */
inline double compute_vlt(const Request& r, Seconds now, const VltParams& params,
                          const SloSpec& slos) {
  switch (r.state) {
    case RequestState::kRotary:
      return params.alpha * std::max(0.0, now - r.t_last - params.beta_b * slos.tbt_slo);
    case RequestState::kWaiting:
      return std::max(0.0, now - r.t_arr - params.beta_f * slos.ttft_slo);
    case RequestState::kRunning:
      return -(now - r.t_run);
    case RequestState::kFinished:
      break;
  }
  throw SimError(ErrorCode::kBadArgument, "VLT is undefined for FINISHED requests");
}

struct SchedulingDecision {
  std::vector<RequestId> preempted;    // tail-scan order
  std::vector<RequestId> prioritized;  // admission order
  std::vector<RequestId> admitted_waiting;
  std::vector<RequestId> resumed_rotary;

  bool empty() const { return preempted.empty() && prioritized.empty(); }
};

using BlockDemandFn = std::function<BlockCount(const Request&)>;

namespace detail {

inline bool arrival_less(const Request* a, const Request* b) {
  if (a->t_arr != b->t_arr) return a->t_arr < b->t_arr;
  return a->id < b->id;
}

inline std::vector<const Request*> by_arrival(std::span<const Request* const> q) {
  std::vector<const Request*> out(q.begin(), q.end());
  std::sort(out.begin(), out.end(), arrival_less);
  return out;
}

inline void classify(const Request* r, SchedulingDecision& d) {
  d.prioritized.push_back(r->id);
  if (r->state == RequestState::kWaiting)
    d.admitted_waiting.push_back(r->id);
  else
    d.resumed_rotary.push_back(r->id);
}

}  // namespace detail

/**
 * Largest-VLT-first scheduling.
 *
 * Step 1: if free HBM already covers every waiting/rotary request, fall back
 * to FCFS admission of all of them. Otherwise sort everything by VLT
 * (descending, ties broken by earlier arrival), pick non-negative-VLT
 * requests from the head within b_hbm + b_xfer blocks, then walk the tail
 * preempting negative-VLT running requests until the extra block demand
 * B_swap = b_xfer - B_left is covered.
 */
inline SchedulingDecision lvf_schedule(std::span<const Request* const> running,
                                       std::span<const Request* const> waiting,
                                       std::span<const Request* const> rotary,
                                       const BlockDemandFn& blk, BlockCount b_xfer,
                                       BlockCount b_hbm, Seconds now, const VltParams& params,
                                       const SloSpec& slos) {
  SchedulingDecision decision;

  BlockCount inactive_demand = 0;
  for (const Request* r : waiting) inactive_demand += blk(*r);
  for (const Request* r : rotary) inactive_demand += blk(*r);

  if (b_hbm >= inactive_demand) {  // contention check: fall back to FCFS
    std::vector<const Request*> merged;
    merged.insert(merged.end(), waiting.begin(), waiting.end());
    merged.insert(merged.end(), rotary.begin(), rotary.end());
    std::sort(merged.begin(), merged.end(), detail::arrival_less);
    for (const Request* r : merged) detail::classify(r, decision);
    return decision;
  }

  struct Entry {
    const Request* req;
    double vlt;
  };
  std::vector<Entry> all;
  all.reserve(running.size() + waiting.size() + rotary.size());
  for (auto q : {running, waiting, rotary})
    for (const Request* r : q) all.push_back({r, compute_vlt(*r, now, params, slos)});

  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) {
    if (a.vlt != b.vlt) return a.vlt > b.vlt;
    return detail::arrival_less(a.req, b.req);
  });

  BlockCount b_left = b_hbm + b_xfer;
  for (const Entry& e : all) {
    if (e.req->state == RequestState::kRunning) continue;
    if (e.vlt >= 0 && blk(*e.req) <= b_left) {
      detail::classify(e.req, decision);
      b_left -= blk(*e.req);
    }
  }

  BlockCount b_swap = b_xfer - b_left;
  for (auto it = all.rbegin(); it != all.rend(); ++it) {
    if (it->vlt < 0 && b_swap > 0) {
      decision.preempted.push_back(it->req->id);
      b_swap -= blk(*it->req);
    }
  }
  return decision;
}

/**
 * Common entry point for all policies. Static policies admit in queue order
 * and stop at the first request that does not fit; only WF preempts
 * proactively (youngest arrival first).
 */
inline SchedulingDecision schedule(PolicyKind policy, std::span<const Request* const> running,
                                   std::span<const Request* const> waiting,
                                   std::span<const Request* const> rotary,
                                   const BlockDemandFn& blk, BlockCount b_xfer, BlockCount b_hbm,
                                   Seconds now, const VltParams& params, const SloSpec& slos) {
  if (policy == PolicyKind::kLvf)
    return lvf_schedule(running, waiting, rotary, blk, b_xfer, b_hbm, now, params, slos);

  SchedulingDecision decision;
  auto rot = detail::by_arrival(rotary);
  auto wait = detail::by_arrival(waiting);

  // Admission order and per-phase budgets differ per policy.
  std::vector<std::vector<const Request*>> phases;
  switch (policy) {
    case PolicyKind::kFcfs: {
      std::vector<const Request*> merged;
      merged.insert(merged.end(), rot.begin(), rot.end());
      merged.insert(merged.end(), wait.begin(), wait.end());
      std::sort(merged.begin(), merged.end(), detail::arrival_less);
      phases.push_back(std::move(merged));
      break;
    }
    case PolicyKind::kSwappedFirst:
      phases.push_back(rot);
      phases.push_back(wait);
      break;
    case PolicyKind::kSjfOracle: {
      std::sort(wait.begin(), wait.end(), [](const Request* a, const Request* b) {
        if (a->output_tokens != b->output_tokens) return a->output_tokens < b->output_tokens;
        return detail::arrival_less(a, b);
      });
      phases.push_back(rot);
      phases.push_back(wait);
      break;
    }
    case PolicyKind::kWaitingFirst:
      phases.push_back(wait);
      phases.push_back(rot);
      break;
    case PolicyKind::kLvf:
      break;  // handled above
  }

  const bool is_wf = policy == PolicyKind::kWaitingFirst;
  BlockCount b_left = is_wf ? b_hbm + b_xfer : b_hbm;
  for (std::size_t phase = 0; phase < phases.size(); ++phase) {
    if (is_wf && phase == 1) {
      // Rotary requests never trigger WF preemption: physical leftover only.
      b_left = std::max<BlockCount>(0, b_left - b_xfer);
    }
    for (const Request* r : phases[phase]) {
      if (blk(*r) > b_left) break;
      detail::classify(r, decision);
      b_left -= blk(*r);
    }
    if (is_wf && phase == 0) {
      BlockCount b_swap = b_xfer - b_left;
      std::vector<const Request*> victims(running.begin(), running.end());
      std::sort(victims.begin(), victims.end(),
                [](const Request* a, const Request* b) { return detail::arrival_less(b, a); });
      for (const Request* v : victims) {
        if (b_swap <= 0) break;
        decision.preempted.push_back(v->id);
        b_swap -= blk(*v);
      }
    }
  }
  return decision;
}

/**
 * Apply state transitions of a decision: preempted RUNNING->ROTARY,
 * prioritized WAITING/ROTARY->RUNNING with t_run = now. Completion
 * transitions are the engine's job.
 */
inline void apply_decision(const SchedulingDecision& decision, std::span<Request* const> requests,
                           Seconds now) {
  std::unordered_map<RequestId, Request*> by_id;
  by_id.reserve(requests.size());
  for (Request* r : requests) by_id[r->id] = r;

  auto lookup = [&](RequestId id) -> Request& {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw SimError(ErrorCode::kBadArgument, "decision references unknown request " + std::to_string(id));
    if (it->second->state == RequestState::kFinished)
      throw SimError(ErrorCode::kBadTransition,
                     "no transitions allowed from FINISHED (request " + std::to_string(id) + ")");
    return *it->second;
  };

  for (RequestId id : decision.preempted) {
    Request& r = lookup(id);
    if (r.state != RequestState::kRunning)
      throw SimError(ErrorCode::kBadTransition, "preempted request was not RUNNING");
    if (r.token_times.empty()) r.t_last = now;  // lag measured from the pause
    r.state = RequestState::kRotary;
    r.n_preemptions += 1;
    r.preempted_by_oom = false;
  }
  for (RequestId id : decision.prioritized) {
    Request& r = lookup(id);
    if (r.state != RequestState::kWaiting && r.state != RequestState::kRotary)
      throw SimError(ErrorCode::kBadTransition, "prioritized request was not WAITING or ROTARY");
    r.state = RequestState::kRunning;
    r.t_run = now;
  }
}

}  // namespace rotasim
