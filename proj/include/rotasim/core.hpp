#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rotasim {

using Seconds = double;
using Bytes = std::uint64_t;
using TokenCount = std::int64_t;
using BlockCount = std::int64_t;
using RequestId = std::uint64_t;
using BlockId = std::uint64_t;

enum class ErrorCode {
  kInvalidConfig,
  kCapacityExceeded,
  kOverflow,
  kDramFull,
  kParseError,
  kNegativeLength,
  kCalibrationFailed,
  kDeadlock,
  kBadTransition,
  kBadArgument,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::kInvalidConfig: return "INVALID_CONFIG";
    case ErrorCode::kCapacityExceeded: return "CAPACITY_EXCEEDED";
    case ErrorCode::kOverflow: return "OVERFLOW";
    case ErrorCode::kDramFull: return "DRAM_FULL";
    case ErrorCode::kParseError: return "PARSE_ERROR";
    case ErrorCode::kNegativeLength: return "NEGATIVE_LENGTH";
    case ErrorCode::kCalibrationFailed: return "CALIBRATION_FAILED";
    case ErrorCode::kDeadlock: return "DEADLOCK";
    case ErrorCode::kBadTransition: return "BAD_TRANSITION";
    case ErrorCode::kBadArgument: return "BAD_ARGUMENT";
  }
  return "UNKNOWN";
}

class SimError : public std::runtime_error {
 public:
  SimError(ErrorCode code, const std::string& msg)
      : std::runtime_error(std::string(to_string(code)) + ": " + msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

/** Static model geometry plus the affine iteration-cost coefficients. */
struct ModelProfile {
  std::string name = "default";
  int n_layers = 1;
  Bytes kv_bytes_per_token_per_layer = 1;
  int block_tokens = 16;
  double compute_c0 = 2e-3;   // seconds per iteration
  double compute_c1 = 20e-6;  // seconds per prefill token
  double compute_c2 = 40e-6;  // seconds per decode token
  double compute_c3 = 1e-9;   // seconds per KV token attended

  void validate() const {
    if (n_layers < 1) throw SimError(ErrorCode::kInvalidConfig, "n_layers must be >= 1");
    if (kv_bytes_per_token_per_layer == 0)
      throw SimError(ErrorCode::kInvalidConfig, "kv_bytes_per_token_per_layer must be > 0");
    if (block_tokens < 1) throw SimError(ErrorCode::kInvalidConfig, "block_tokens must be >= 1");
    if (compute_c0 < 0 || compute_c1 < 0 || compute_c2 < 0 || compute_c3 < 0)
      throw SimError(ErrorCode::kInvalidConfig, "cost coefficients must be >= 0");
  }
};

/** Latency targets: S_F for the first token, S_B between tokens. */
struct SloSpec {
  double ttft_slo = 5.0;
  double tbt_slo = 0.1;

  void validate() const {
    if (ttft_slo <= 0 || tbt_slo <= 0)
      throw SimError(ErrorCode::kInvalidConfig, "SLO thresholds must be strictly positive");
  }
};

/** Lag-metric knobs: alpha weights rotary lag, beta_b/beta_f are tolerances. */
struct VltParams {
  double alpha = 3.0;
  double beta_b = 0.0;
  double beta_f = 0.5;

  void validate() const {
    if (alpha < 0) throw SimError(ErrorCode::kInvalidConfig, "alpha must be >= 0");
  }
};

enum class RequestState { kWaiting, kRunning, kRotary, kFinished };

inline const char* to_string(RequestState s) {
  switch (s) {
    case RequestState::kWaiting: return "WAITING";
    case RequestState::kRunning: return "RUNNING";
    case RequestState::kRotary: return "ROTARY";
    case RequestState::kFinished: return "FINISHED";
  }
  return "UNKNOWN";
}

struct Request {
  RequestId id = 0;
  Seconds t_arr = 0.0;
  TokenCount prompt_tokens = 0;
  TokenCount output_tokens = 1;  // oracle generation length
  TokenCount generated_tokens = 0;
  TokenCount prefilled_tokens = 0;
  RequestState state = RequestState::kWaiting;
  Seconds t_run = 0.0;   // last entry into RUNNING
  Seconds t_last = 0.0;  // last generated token; pause instant if paused token-less
  std::vector<Seconds> token_times;
  std::vector<BlockId> blocks;

  int n_preemptions = 0;
  int n_forced_preemptions = 0;
  bool preempted_by_oom = false;  // most recent preemption was a forced OOM one

  bool prefilling() const { return prefilled_tokens < prompt_tokens; }
  bool finished() const { return state == RequestState::kFinished; }
};

struct SimClock {
  Seconds now = 0.0;

  void advance_to(Seconds t) {
    if (t < now) throw SimError(ErrorCode::kBadArgument, "clock must not move backwards");
    now = t;
  }
  void advance_by(Seconds dt) { advance_to(now + dt); }
};

inline BlockCount blocks_needed(TokenCount prompt_tokens, TokenCount produced_tokens,
                                const ModelProfile& profile) {
  if (prompt_tokens < 0 || produced_tokens < 0)
    throw SimError(ErrorCode::kBadArgument, "token counts must be >= 0");
  const TokenCount total = prompt_tokens + produced_tokens;
  const TokenCount p = profile.block_tokens;
  return (total + p - 1) / p;
}

/** One layer x one block: the largest contiguous KV region. */
inline Bytes segment_bytes(const ModelProfile& profile) {
  return static_cast<Bytes>(profile.block_tokens) * profile.kv_bytes_per_token_per_layer;
}

/** All layers of one block. */
inline Bytes block_bytes(const ModelProfile& profile) {
  return static_cast<Bytes>(profile.n_layers) * segment_bytes(profile);
}

}  // namespace rotasim
