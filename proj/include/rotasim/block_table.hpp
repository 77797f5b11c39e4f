#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "rotasim/core.hpp"

namespace rotasim {

enum class Tier { kHbm, kDram };
enum class SyncState { kDirty, kSynced };
enum class TransferDirection { kD2H, kH2D };

// One transfer operation per segment, per merged block, or one batched call.
enum class TransferMode { kPerSegment, kPerSegmentMerged, kBatched };

inline const char* to_string(TransferDirection d) {
  return d == TransferDirection::kD2H ? "D2H" : "H2D";
}

struct TransferPlan {
  TransferDirection direction = TransferDirection::kD2H;
  TransferMode mode = TransferMode::kBatched;
  std::int64_t segments = 0;
  Bytes segment_bytes = 0;
  Bytes total_bytes = 0;
  std::vector<BlockId> blocks;
  std::vector<int> hbm_slots;  // slot read (D2H) or written (H2D), per block
  bool release_hbm_on_complete = false;

  bool empty() const { return blocks.empty(); }
};

/** Fold per-request plans of one direction/mode into a single plan. */
inline TransferPlan merge_plans(std::span<const TransferPlan> plans) {
  TransferPlan merged;
  bool first = true;
  for (const TransferPlan& p : plans) {
    if (p.empty()) continue;
    if (first) {
      merged = p;
      first = false;
      continue;
    }
    if (p.direction != merged.direction || p.mode != merged.mode)
      throw SimError(ErrorCode::kBadArgument, "cannot merge plans of mixed direction/mode");
    merged.segments += p.segments;
    merged.total_bytes += p.total_bytes;
    merged.blocks.insert(merged.blocks.end(), p.blocks.begin(), p.blocks.end());
    merged.hbm_slots.insert(merged.hbm_slots.end(), p.hbm_slots.begin(), p.hbm_slots.end());
    merged.release_hbm_on_complete |= p.release_hbm_on_complete;
  }
  return merged;
}

enum class LayoutKind { kLayerFirst, kBlockFirst };

/**
 * Byte offset of (layer, block) in a pool of pool_blocks blocks. Layer-first
 * strides blocks by one segment; block-first makes a block's layers
 * contiguous, striding blocks by n_layers segments.
 */
inline Bytes address_of(LayoutKind layout, int layer, std::int64_t block,
                        const ModelProfile& profile, std::int64_t pool_blocks) {
  if (layer < 0 || layer >= profile.n_layers)
    throw SimError(ErrorCode::kBadArgument, "layer index out of range");
  if (block < 0 || block >= pool_blocks)
    throw SimError(ErrorCode::kBadArgument, "block index out of range");
  const Bytes seg = segment_bytes(profile);
  if (layout == LayoutKind::kLayerFirst)
    return (static_cast<Bytes>(layer) * pool_blocks + block) * seg;
  return (static_cast<Bytes>(block) * profile.n_layers + layer) * seg;
}

/**
 * Paged KV bookkeeping across HBM and DRAM. Contents are modeled as version
 * counters; a DRAM replica is valid iff dram_version == version. Single-owner
 * state machine: only the simulation loop mutates it.
 */
class BlockTable {
 public:
  struct BlockInfo {
    RequestId owner = 0;
    std::optional<int> hbm_slot;
    std::optional<int> dram_slot;
    SyncState sync_state = SyncState::kDirty;
    std::uint64_t version = 0;
    std::uint64_t dram_version = 0;  // meaningful only while dram_slot is set
    TokenCount filled_tokens = 0;
    bool hbm_freeing = false;  // slot pinned by an in-flight D2H

    bool replicated() const {
      return hbm_slot.has_value() && dram_slot.has_value() && dram_version == version;
    }
    bool dram_valid() const { return dram_slot.has_value() && dram_version == version; }
  };

  BlockTable(BlockCount hbm_capacity, BlockCount dram_capacity, ModelProfile profile)
      : profile_(std::move(profile)),
        hbm_capacity_(hbm_capacity),
        dram_capacity_(dram_capacity) {
    if (hbm_capacity <= 0 || dram_capacity <= 0)
      throw SimError(ErrorCode::kInvalidConfig, "tier capacities must be > 0");
    profile_.validate();
    for (BlockCount i = 0; i < hbm_capacity; ++i) free_hbm_.insert(static_cast<int>(i));
    for (BlockCount i = 0; i < dram_capacity; ++i) free_dram_.insert(static_cast<int>(i));
  }

  // ---- allocation -------------------------------------------------------

  std::vector<BlockId> allocate_blocks(RequestId owner, BlockCount n, Tier tier) {
    if (n < 0) throw SimError(ErrorCode::kBadArgument, "allocation count must be >= 0");
    auto& pool = tier == Tier::kHbm ? free_hbm_ : free_dram_;
    if (static_cast<BlockCount>(pool.size()) < n)
      throw SimError(ErrorCode::kCapacityExceeded,
                     "request " + std::to_string(owner) + " needs " + std::to_string(n) +
                         " blocks, " + std::to_string(pool.size()) + " free");
    std::vector<BlockId> ids;
    ids.reserve(static_cast<std::size_t>(n));
    auto& alloc = requests_[owner];
    for (BlockCount i = 0; i < n; ++i) {
      const int slot = *pool.begin();
      pool.erase(pool.begin());
      const BlockId id = next_block_id_++;
      BlockInfo info;
      info.owner = owner;
      if (tier == Tier::kHbm)
        info.hbm_slot = slot;
      else
        info.dram_slot = slot;
      blocks_.emplace(id, info);
      alloc.blocks.push_back(id);
      ids.push_back(id);
    }
    return ids;
  }

  /** Advance the owner's write cursor; returns blocks newly SYNCED. */
  std::vector<BlockId> record_tokens(RequestId owner, TokenCount tokens) {
    if (tokens < 0) throw SimError(ErrorCode::kBadArgument, "token count must be >= 0");
    auto& alloc = requests_[owner];
    const TokenCount p = profile_.block_tokens;
    const TokenCount capacity = static_cast<TokenCount>(alloc.blocks.size()) * p;
    if (alloc.cursor + tokens > capacity)
      throw SimError(ErrorCode::kOverflow,
                     "request " + std::to_string(owner) + " writes past allocated blocks");
    std::vector<BlockId> newly_synced;
    if (tokens == 0) return newly_synced;
    const TokenCount begin = alloc.cursor;
    const TokenCount end = alloc.cursor + tokens;
    for (TokenCount idx = begin / p; idx * p < end; ++idx) {
      if (!blocks_.at(alloc.blocks[static_cast<std::size_t>(idx)]).hbm_slot)
        throw SimError(ErrorCode::kBadTransition,
                       "request " + std::to_string(owner) + " writes a non-resident block");
    }
    for (TokenCount idx = begin / p; idx * p < end; ++idx) {
      BlockInfo& b = blocks_.at(alloc.blocks[static_cast<std::size_t>(idx)]);
      b.version += 1;
      b.filled_tokens = std::min<TokenCount>(p, end - idx * p);
      if (b.dram_slot) {  // replica is stale the moment the block is written
        free_dram_.insert(*b.dram_slot);
        b.dram_slot.reset();
      }
      if (b.filled_tokens == p && b.sync_state == SyncState::kDirty) {
        b.sync_state = SyncState::kSynced;
        newly_synced.push_back(alloc.blocks[static_cast<std::size_t>(idx)]);
      }
    }
    alloc.cursor = end;
    return newly_synced;
  }

  // ---- transfer planning -------------------------------------------------

  /**
   * Background copy of up to budget SYNCED, unreplicated HBM blocks, walking
   * requests most-likely-preempted first. HBM is not freed.
   */
  TransferPlan plan_eager_rotation(BlockCount budget, std::span<const RequestId> running_by_vlt_asc,
                                   TransferMode mode) {
    TransferPlan plan = make_plan(TransferDirection::kD2H, mode);
    if (budget <= 0) return plan;
    for (RequestId rid : running_by_vlt_asc) {
      auto it = requests_.find(rid);
      if (it == requests_.end()) continue;
      for (BlockId bid : it->second.blocks) {
        if (static_cast<BlockCount>(plan.blocks.size()) >= budget) return finalize(plan);
        BlockInfo& b = blocks_.at(bid);
        if (b.sync_state != SyncState::kSynced || !b.hbm_slot || b.dram_valid()) continue;
        if (free_dram_.empty()) return finalize(plan);
        attach_dram_slot(b);
        plan.blocks.push_back(bid);
        plan.hbm_slots.push_back(*b.hbm_slot);
      }
    }
    return finalize(plan);
  }

  /**
   * Swap-out for a preempted request: replicated and empty blocks are
   * discarded immediately; only blocks lacking a valid DRAM copy transfer.
   * After completion every HBM slot of the request is free and DRAM holds a
   * full copy.
   */
  TransferPlan plan_preemption_swapout(RequestId owner, TransferMode mode) {
    TransferPlan plan = make_plan(TransferDirection::kD2H, mode);
    plan.release_hbm_on_complete = true;
    auto it = requests_.find(owner);
    if (it == requests_.end()) return finalize(plan);
    auto& alloc = it->second;

    BlockCount unreplicated = 0;
    for (BlockId bid : alloc.blocks) {
      const BlockInfo& b = blocks_.at(bid);
      if (b.hbm_slot && b.filled_tokens > 0 && !b.dram_valid()) ++unreplicated;
    }
    if (unreplicated > static_cast<BlockCount>(free_dram_.size()))
      throw SimError(ErrorCode::kDramFull, "request " + std::to_string(owner) + " needs " +
                                               std::to_string(unreplicated) + " DRAM blocks");

    std::vector<BlockId> kept;
    for (BlockId bid : alloc.blocks) {
      BlockInfo& b = blocks_.at(bid);
      if (b.filled_tokens == 0) {  // never written: drop outright
        release_hbm_slot(b);
        if (b.dram_slot) {
          free_dram_.insert(*b.dram_slot);
          b.dram_slot.reset();
        }
        blocks_.erase(bid);
        continue;
      }
      kept.push_back(bid);
      if (!b.hbm_slot) continue;  // already DRAM-only
      if (b.dram_valid()) {
        release_hbm_slot(b);  // discard: a valid copy already lives in DRAM
        continue;
      }
      attach_dram_slot(b);
      b.hbm_freeing = true;
      pending_free_hbm_ += 1;
      plan.blocks.push_back(bid);
      plan.hbm_slots.push_back(*b.hbm_slot);
    }
    alloc.blocks = std::move(kept);
    return finalize(plan);
  }

  /** Swap-in of a rotary request into freshly allocated HBM slots. */
  TransferPlan plan_swapin(RequestId owner, TransferMode mode) {
    TransferPlan plan = make_plan(TransferDirection::kH2D, mode);
    auto it = requests_.find(owner);
    if (it == requests_.end()) return finalize(plan);
    auto& alloc = it->second;
    BlockCount need = 0;
    for (BlockId bid : alloc.blocks) {
      const BlockInfo& b = blocks_.at(bid);
      if (!b.dram_valid())
        throw SimError(ErrorCode::kBadArgument,
                       "request " + std::to_string(owner) + " lacks a complete DRAM copy");
      if (!b.hbm_slot) ++need;
    }
    if (need > static_cast<BlockCount>(free_hbm_.size()))
      throw SimError(ErrorCode::kCapacityExceeded,
                     "swap-in of request " + std::to_string(owner) + " needs " +
                         std::to_string(need) + " HBM blocks, " +
                         std::to_string(free_hbm_.size()) + " free");
    for (BlockId bid : alloc.blocks) {
      BlockInfo& b = blocks_.at(bid);
      if (b.hbm_slot) continue;
      const int slot = *free_hbm_.begin();
      free_hbm_.erase(free_hbm_.begin());
      b.hbm_slot = slot;  // destination is a fresh slot: no reader can race it
      plan.blocks.push_back(bid);
      plan.hbm_slots.push_back(slot);
    }
    return finalize(plan);
  }

  /** Residency/version effects once a plan's transfer has finished. */
  void complete_plan(const TransferPlan& plan) {
    for (BlockId bid : plan.blocks) {
      auto it = blocks_.find(bid);
      if (it == blocks_.end()) continue;
      BlockInfo& b = it->second;
      if (plan.direction == TransferDirection::kD2H) {
        b.dram_version = b.version;
        if (plan.release_hbm_on_complete) {
          if (b.hbm_freeing) {
            b.hbm_freeing = false;
            pending_free_hbm_ -= 1;
          }
          release_hbm_slot(b);
        }
      }
      // H2D: the HBM copy now matches the retained DRAM replica.
    }
  }

  /** FINISHED requests free both tiers immediately. */
  void release_request(RequestId owner) {
    auto it = requests_.find(owner);
    if (it == requests_.end()) return;
    for (BlockId bid : it->second.blocks) {
      BlockInfo& b = blocks_.at(bid);
      if (b.hbm_freeing)
        throw SimError(ErrorCode::kBadTransition, "release while a swap-out is in flight");
      release_hbm_slot(b);
      if (b.dram_slot) {
        free_dram_.insert(*b.dram_slot);
        b.dram_slot.reset();
      }
      blocks_.erase(bid);
    }
    requests_.erase(it);
  }

  // ---- queries -----------------------------------------------------------

  BlockCount hbm_capacity() const { return hbm_capacity_; }
  BlockCount dram_capacity() const { return dram_capacity_; }
  BlockCount free_hbm() const { return static_cast<BlockCount>(free_hbm_.size()); }
  BlockCount free_dram() const { return static_cast<BlockCount>(free_dram_.size()); }
  BlockCount pending_free_hbm() const { return pending_free_hbm_; }
  BlockCount occupied_hbm() const { return hbm_capacity_ - free_hbm(); }
  BlockCount occupied_dram() const { return dram_capacity_ - free_dram(); }

  BlockCount held_blocks(RequestId owner) const {
    auto it = requests_.find(owner);
    return it == requests_.end() ? 0 : static_cast<BlockCount>(it->second.blocks.size());
  }

  BlockCount held_hbm_blocks(RequestId owner) const {
    auto it = requests_.find(owner);
    if (it == requests_.end()) return 0;
    BlockCount n = 0;
    for (BlockId bid : it->second.blocks)
      if (blocks_.at(bid).hbm_slot) ++n;
    return n;
  }

  /** HBM slots a preemption would hand back immediately (no transfer). */
  BlockCount discardable_hbm_blocks(RequestId owner) const {
    auto it = requests_.find(owner);
    if (it == requests_.end()) return 0;
    BlockCount n = 0;
    for (BlockId bid : it->second.blocks) {
      const BlockInfo& b = blocks_.at(bid);
      if (b.hbm_slot && (b.filled_tokens == 0 || b.dram_valid())) ++n;
    }
    return n;
  }

  std::vector<BlockId> blocks_of(RequestId owner) const {
    auto it = requests_.find(owner);
    return it == requests_.end() ? std::vector<BlockId>{} : it->second.blocks;
  }

  TokenCount write_cursor(RequestId owner) const {
    auto it = requests_.find(owner);
    return it == requests_.end() ? 0 : it->second.cursor;
  }

  const BlockInfo& block(BlockId id) const { return blocks_.at(id); }
  const std::map<BlockId, BlockInfo>& all_blocks() const { return blocks_; }
  const ModelProfile& profile() const { return profile_; }

  /** Conservation and exclusivity checks; throws on corruption. */
  void check_invariants() const {
    std::set<int> hbm_used, dram_used;
    for (const auto& [id, b] : blocks_) {
      if (!b.hbm_slot && !b.dram_slot)
        throw SimError(ErrorCode::kBadTransition, "owned block has no residency");
      if (b.hbm_slot && !hbm_used.insert(*b.hbm_slot).second)
        throw SimError(ErrorCode::kBadTransition, "HBM slot double-mapped");
      if (b.dram_slot && !dram_used.insert(*b.dram_slot).second)
        throw SimError(ErrorCode::kBadTransition, "DRAM slot double-mapped");
      if (b.sync_state == SyncState::kSynced && b.filled_tokens != profile_.block_tokens)
        throw SimError(ErrorCode::kBadTransition, "SYNCED block not fully written");
      if (b.hbm_slot && b.dram_slot && b.dram_version != b.version)
        throw SimError(ErrorCode::kBadTransition, "replicated block with stale DRAM version");
    }
    if (hbm_used.size() + free_hbm_.size() != static_cast<std::size_t>(hbm_capacity_))
      throw SimError(ErrorCode::kBadTransition, "HBM slot conservation violated");
    if (dram_used.size() + free_dram_.size() != static_cast<std::size_t>(dram_capacity_))
      throw SimError(ErrorCode::kBadTransition, "DRAM slot conservation violated");
  }

 private:
  struct RequestAlloc {
    std::vector<BlockId> blocks;
    TokenCount cursor = 0;
  };

  TransferPlan make_plan(TransferDirection dir, TransferMode mode) const {
    TransferPlan plan;
    plan.direction = dir;
    plan.mode = mode;
    return plan;
  }

  TransferPlan& finalize(TransferPlan& plan) const {
    const Bytes blk = block_bytes(profile_);
    const std::int64_t n = static_cast<std::int64_t>(plan.blocks.size());
    if (plan.mode == TransferMode::kPerSegment) {
      plan.segments = n * profile_.n_layers;
      plan.segment_bytes = segment_bytes(profile_);
    } else {
      plan.segments = n;
      plan.segment_bytes = blk;
    }
    plan.total_bytes = n * blk;
    return plan;
  }

  void attach_dram_slot(BlockInfo& b) {
    const int slot = *free_dram_.begin();
    free_dram_.erase(free_dram_.begin());
    b.dram_slot = slot;
    b.dram_version = b.version - 1;  // stale until the copy completes
  }

  void release_hbm_slot(BlockInfo& b) {
    if (!b.hbm_slot) return;
    free_hbm_.insert(*b.hbm_slot);
    b.hbm_slot.reset();
  }

  ModelProfile profile_;
  BlockCount hbm_capacity_ = 0;
  BlockCount dram_capacity_ = 0;
  std::map<BlockId, BlockInfo> blocks_;
  std::map<RequestId, RequestAlloc> requests_;
  std::set<int> free_hbm_;
  std::set<int> free_dram_;
  BlockCount pending_free_hbm_ = 0;
  BlockId next_block_id_ = 1;
};

}  // namespace rotasim
