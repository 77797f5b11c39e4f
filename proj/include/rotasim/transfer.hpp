#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "rotasim/block_table.hpp"
#include "rotasim/core.hpp"

namespace rotasim {

inline constexpr double kGiB = 1024.0 * 1024.0 * 1024.0;

/**
 * Analytic timing of KV transfers over a C2C-style link: a bandwidth curve
 * over transfer-unit size (log-linear in size), per-launch overheads, a
 * per-direction cap and a shared half-duplex DRAM ceiling scaled by a global
 * efficiency factor.
 */
struct LinkProfile {
  std::vector<std::pair<Bytes, double>> bw_curve;  // (segment bytes, GB/s), ascending
  double c2c_per_direction_cap = 450.0;            // GB/s
  double dram_total_cap = 384.0;                   // GB/s, both directions combined
  double launch_overhead = 10e-6;                  // seconds per transfer kernel
  double batch_launch_overhead = 2e-6;             // seconds per batched call
  double duplex_efficiency = 0.94;

  void validate() const {
    if (bw_curve.empty()) throw SimError(ErrorCode::kInvalidConfig, "bw_curve is empty");
    for (std::size_t i = 0; i < bw_curve.size(); ++i) {
      if (bw_curve[i].second <= 0)
        throw SimError(ErrorCode::kInvalidConfig, "bandwidth values must be > 0");
      if (bw_curve[i].second > c2c_per_direction_cap)
        throw SimError(ErrorCode::kInvalidConfig, "curve value exceeds per-direction cap");
      if (i > 0 && (bw_curve[i].first <= bw_curve[i - 1].first ||
                    bw_curve[i].second < bw_curve[i - 1].second))
        throw SimError(ErrorCode::kInvalidConfig, "bw_curve must be non-decreasing");
    }
    if (duplex_efficiency <= 0 || duplex_efficiency > 1)
      throw SimError(ErrorCode::kInvalidConfig, "duplex_efficiency must be in (0,1]");
    if (launch_overhead < 0 || batch_launch_overhead < 0)
      throw SimError(ErrorCode::kInvalidConfig, "launch overheads must be >= 0");
  }

  static LinkProfile default_gh200() {
    LinkProfile link;
    link.bw_curve = {{64ull << 10, 9.0},
                     {1ull << 20, 80.0},
                     {4ull << 20, 140.0},
                     {8ull << 20, 200.0},
                     {64ull << 20, 240.0}};
    return link;
  }

  /** PCIe-class link for swap-bandwidth comparisons: same model, lower curve. */
  static LinkProfile default_pcie_gen5() {
    LinkProfile link;
    link.bw_curve = {{64ull << 10, 4.0},
                     {1ull << 20, 20.0},
                     {4ull << 20, 40.0},
                     {8ull << 20, 55.0},
                     {64ull << 20, 60.0}};
    link.c2c_per_direction_cap = 64.0;
    link.dram_total_cap = 128.0;
    link.duplex_efficiency = 1.0;
    return link;
  }
};

/** Interpolate the curve log-linearly in size; clamp outside its range. */
inline double bandwidth_lookup(Bytes seg_bytes, const LinkProfile& link) {
  if (seg_bytes == 0) throw SimError(ErrorCode::kBadArgument, "segment size must be > 0");
  const auto& curve = link.bw_curve;
  if (seg_bytes <= curve.front().first) return curve.front().second;
  if (seg_bytes >= curve.back().first) return curve.back().second;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    if (seg_bytes > curve[i].first) continue;
    const double x0 = std::log(static_cast<double>(curve[i - 1].first));
    const double x1 = std::log(static_cast<double>(curve[i].first));
    const double x = std::log(static_cast<double>(seg_bytes));
    const double t = (x - x0) / (x1 - x0);
    return curve[i - 1].second + t * (curve[i].second - curve[i - 1].second);
  }
  return curve.back().second;
}

namespace detail {

// A batched call keeps the DMA queues full, so the stream behaves like one
// transfer of the whole batch; per-segment modes pay wire time at the unit
// size.
inline Bytes effective_unit_bytes(const TransferPlan& plan) {
  return plan.mode == TransferMode::kBatched ? plan.total_bytes : plan.segment_bytes;
}

inline double launch_time(const TransferPlan& plan, const LinkProfile& link) {
  if (plan.mode == TransferMode::kBatched) return link.batch_launch_overhead;
  return static_cast<double>(plan.segments) * link.launch_overhead;
}

inline double capped_rate(const TransferPlan& plan, const LinkProfile& link) {
  return std::min(bandwidth_lookup(effective_unit_bytes(plan), link),
                  link.c2c_per_direction_cap);
}

}  // namespace detail

/** Seconds to run one plan alone: launch overheads plus wire time. */
inline double uni_transfer_time(const TransferPlan& plan, const LinkProfile& link) {
  if (plan.empty()) return 0.0;
  const double rate = detail::capped_rate(plan, link);
  return detail::launch_time(plan, link) + static_cast<double>(plan.total_bytes) / kGiB / rate;
}

/** Per-direction rates for concurrent plans after the shared DRAM cap. */
inline std::pair<double, double> duplex_rates(const TransferPlan& d2h, const TransferPlan& h2d,
                                              const LinkProfile& link) {
  double r_d2h = d2h.empty() ? 0.0 : detail::capped_rate(d2h, link);
  double r_h2d = h2d.empty() ? 0.0 : detail::capped_rate(h2d, link);
  const double ceiling = link.duplex_efficiency * link.dram_total_cap;
  if (r_d2h + r_h2d > ceiling) {
    const double scale = ceiling / (r_d2h + r_h2d);
    r_d2h *= scale;
    r_h2d *= scale;
  }
  return {r_d2h, r_h2d};
}

/**
 * Seconds to run both directions concurrently. Falls back to the serialized
 * sum when the shared-DRAM ceiling would make concurrency slower.
 */
inline double duplex_transfer_time(const TransferPlan& d2h, const TransferPlan& h2d,
                                   const LinkProfile& link) {
  if (d2h.empty()) return uni_transfer_time(h2d, link);
  if (h2d.empty()) return uni_transfer_time(d2h, link);
  const auto [r_d2h, r_h2d] = duplex_rates(d2h, h2d, link);
  const double t_d2h =
      detail::launch_time(d2h, link) + static_cast<double>(d2h.total_bytes) / kGiB / r_d2h;
  const double t_h2d =
      detail::launch_time(h2d, link) + static_cast<double>(h2d.total_bytes) / kGiB / r_h2d;
  const double concurrent = std::max(t_d2h, t_h2d);
  const double serialized = uni_transfer_time(d2h, link) + uni_transfer_time(h2d, link);
  return std::min(concurrent, serialized);
}

// ---- calibration ----------------------------------------------------------

struct CalibrationRow {
  double d2h_gbps = 0.0;
  double h2d_gbps = 0.0;
  double e2e_ms = 0.0;
};

/** Measured engine-variant rows for a bidirectional transfer workload. */
struct CalibrationTargets {
  CalibrationRow naive;
  CalibrationRow ms;
  CalibrationRow ms_mk;
  CalibrationRow duplex;
  CalibrationRow ideal;
  TokenCount tokens_per_direction = 32768;

  static CalibrationTargets gh200_defaults() {
    CalibrationTargets t;
    t.naive = {10.75, 9.86, 1556.15};
    t.ms = {80.05, 133.51, 159.87};
    t.ms_mk = {238.95, 269.69, 63.14};
    t.duplex = {180.99, 179.37, 46.80};
    t.ideal = {192.00, 192.00, 41.66};
    return t;
  }
};

struct CalibrationReport {
  LinkProfile link;
  // Order: naive, ms, ms_mk, duplex, ideal.
  std::array<double, 5> predicted_ms{};
  std::array<double, 5> target_ms{};
  double max_rel_err = 0.0;
};

namespace detail {

inline TransferPlan calibration_plan(TransferDirection dir, TransferMode mode,
                                     const ModelProfile& profile, TokenCount tokens) {
  TransferPlan plan;
  plan.direction = dir;
  plan.mode = mode;
  const std::int64_t n_blocks = blocks_needed(tokens, 0, profile);
  plan.blocks.assign(static_cast<std::size_t>(n_blocks), 0);
  plan.hbm_slots.assign(static_cast<std::size_t>(n_blocks), 0);
  if (mode == TransferMode::kPerSegment) {
    plan.segments = n_blocks * profile.n_layers;
    plan.segment_bytes = segment_bytes(profile);
  } else {
    plan.segments = n_blocks;
    plan.segment_bytes = block_bytes(profile);
  }
  plan.total_bytes = static_cast<Bytes>(n_blocks) * block_bytes(profile);
  return plan;
}

inline std::array<double, 5> predict_e2e_ms(const LinkProfile& link, const ModelProfile& profile,
                                            TokenCount tokens) {
  using TD = TransferDirection;
  using TM = TransferMode;
  auto p = [&](TD d, TM m) { return calibration_plan(d, m, profile, tokens); };
  const double naive = uni_transfer_time(p(TD::kD2H, TM::kPerSegment), link) +
                       uni_transfer_time(p(TD::kH2D, TM::kPerSegment), link);
  const double ms = uni_transfer_time(p(TD::kD2H, TM::kPerSegmentMerged), link) +
                    uni_transfer_time(p(TD::kH2D, TM::kPerSegmentMerged), link);
  const double ms_mk = uni_transfer_time(p(TD::kD2H, TM::kBatched), link) +
                       uni_transfer_time(p(TD::kH2D, TM::kBatched), link);
  const double duplex =
      duplex_transfer_time(p(TD::kD2H, TM::kBatched), p(TD::kH2D, TM::kBatched), link);
  LinkProfile ideal_link = link;
  ideal_link.duplex_efficiency = 1.0;
  ideal_link.launch_overhead = 0.0;
  ideal_link.batch_launch_overhead = 0.0;
  const double ideal =
      duplex_transfer_time(p(TD::kD2H, TM::kBatched), p(TD::kH2D, TM::kBatched), ideal_link);
  return {naive * 1e3, ms * 1e3, ms_mk * 1e3, duplex * 1e3, ideal * 1e3};
}

inline void set_curve_point(LinkProfile& link, Bytes size, double gbps) {
  for (auto& [s, v] : link.bw_curve) {
    if (s == size) {
      v = gbps;
      return;
    }
  }
  link.bw_curve.emplace_back(size, gbps);
  std::sort(link.bw_curve.begin(), link.bw_curve.end());
}

inline double curve_point(const LinkProfile& link, Bytes size) {
  for (const auto& [s, v] : link.bw_curve)
    if (s == size) return v;
  return bandwidth_lookup(size, link);
}

}  // namespace detail

/**
 * Fit launch_overhead, the curve points at the workload's segment and block
 * sizes, and the duplex efficiency against measured rows; every predicted
 * E2E time must land within tolerance with the row ordering preserved.
 */
inline CalibrationReport calibrate(const LinkProfile& seed, const CalibrationTargets& targets,
                                   const ModelProfile& profile, double tolerance = 0.15) {
  seed.validate();
  profile.validate();
  const TokenCount tokens = targets.tokens_per_direction;
  const Bytes seg = segment_bytes(profile);
  const Bytes blk = block_bytes(profile);
  const std::int64_t n_blocks = blocks_needed(tokens, 0, profile);
  const std::int64_t n_segments = n_blocks * profile.n_layers;
  const double wire_gib = static_cast<double>(n_blocks) * static_cast<double>(blk) / kGiB;

  LinkProfile base = seed;
  base.duplex_efficiency =
      std::clamp((targets.duplex.d2h_gbps + targets.duplex.h2d_gbps) / base.dram_total_cap,
                 0.01, 1.0);

  // Curve-monotonicity bounds for the two fitted points.
  auto neighbours = [&](Bytes size) {
    double lo = 0.05, hi = base.c2c_per_direction_cap;
    for (const auto& [s, v] : base.bw_curve) {
      if (s < size) lo = std::max(lo, v);
      if (s > size) hi = std::min(hi, v);
    }
    return std::pair<double, double>(lo, hi);
  };
  const auto [blk_lo, blk_hi] = neighbours(blk);

  std::vector<double> blk_candidates = {detail::curve_point(base, blk)};
  for (double v = blk_lo; v <= blk_hi + 1e-9; v += 0.5) blk_candidates.push_back(v);

  const std::array<double, 4> target_row = {targets.naive.e2e_ms, targets.ms.e2e_ms,
                                            targets.ms_mk.e2e_ms, targets.duplex.e2e_ms};

  CalibrationReport best;
  best.max_rel_err = std::numeric_limits<double>::infinity();
  for (double bw_blk : blk_candidates) {
    if (bw_blk < blk_lo || bw_blk > blk_hi) continue;
    // Solve the merged-segment row for the launch overhead, then the
    // per-segment row for the small-segment curve point.
    const double launch =
        (targets.ms.e2e_ms / 2e3 - wire_gib / bw_blk) / static_cast<double>(n_blocks);
    if (launch < base.batch_launch_overhead) continue;
    const double naive_wire = targets.naive.e2e_ms / 2e3 - static_cast<double>(n_segments) * launch;
    if (naive_wire <= 0) continue;
    const double bw_seg = wire_gib / naive_wire;
    const auto [seg_lo, seg_hi] = neighbours(seg);
    LinkProfile cand = base;
    cand.launch_overhead = launch;
    detail::set_curve_point(cand, blk, bw_blk);
    detail::set_curve_point(cand, seg, std::clamp(bw_seg, seg_lo, seg_hi));
    try {
      cand.validate();
    } catch (const SimError&) {
      continue;
    }
    const auto pred = detail::predict_e2e_ms(cand, profile, tokens);
    double err = 0.0;
    for (int i = 0; i < 4; ++i)
      err = std::max(err, std::abs(pred[i] - target_row[i]) / target_row[i]);
    const bool ordered = pred[0] > pred[1] && pred[1] > pred[2] && pred[2] > pred[3] &&
                         pred[3] > pred[4];
    if (!ordered) continue;
    if (err < best.max_rel_err - 1e-12) {
      best.link = cand;
      best.predicted_ms = pred;
      best.max_rel_err = err;
    }
  }

  best.target_ms = {targets.naive.e2e_ms, targets.ms.e2e_ms, targets.ms_mk.e2e_ms,
                    targets.duplex.e2e_ms, targets.ideal.e2e_ms};
  if (best.max_rel_err > tolerance)
    throw SimError(ErrorCode::kCalibrationFailed,
                   "no parameterization within tolerance; the timing model does not fit");
  return best;
}

}  // namespace rotasim
