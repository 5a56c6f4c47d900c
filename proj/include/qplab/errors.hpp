#pragma once

#include <stdexcept>
#include <string>

namespace qplab {

// Failure conditions surfaced by the numerical kernels. Each maps 1:1 onto an
// exception so callers (and the CLI) can react without parsing messages.
enum class errc {
  rational_detected,
  overflow,
  bad_input,
  snap_failure,
  strip_exceeded,
  singular_sample,
  not_homotopic_to_identity,
  non_real_sampler,
  grid_too_short,
  degenerate_window,
  degenerate_leading_coefficient,
  pairing_violation,
  splitting_degenerate,
  branch_discontinuity,
  center_degenerate,
  frame_alignment_failure,
  small_divisor_overflow,
  window_rejected,
  window_violation,
  config_error,
  task_error,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::rational_detected: return "RationalDetected";
    case errc::overflow: return "Overflow";
    case errc::bad_input: return "BadInput";
    case errc::snap_failure: return "SnapFailure";
    case errc::strip_exceeded: return "StripExceeded";
    case errc::singular_sample: return "SingularSample";
    case errc::not_homotopic_to_identity: return "NotHomotopicToIdentity";
    case errc::non_real_sampler: return "NonRealSampler";
    case errc::grid_too_short: return "GridTooShort";
    case errc::degenerate_window: return "DegenerateWindow";
    case errc::degenerate_leading_coefficient: return "DegenerateLeadingCoefficient";
    case errc::pairing_violation: return "PairingViolation";
    case errc::splitting_degenerate: return "SplittingDegenerate";
    case errc::branch_discontinuity: return "BranchDiscontinuity";
    case errc::center_degenerate: return "CenterDegenerate";
    case errc::frame_alignment_failure: return "FrameAlignmentFailure";
    case errc::small_divisor_overflow: return "SmallDivisorOverflow";
    case errc::window_rejected: return "WindowRejected";
    case errc::window_violation: return "WindowViolation";
    case errc::config_error: return "ConfigError";
    case errc::task_error: return "TaskError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  errc code() const { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, errc code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace qplab
