#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oblv/host_iface.hpp"
#include "oblv/oblivious_sched.hpp"

namespace oblv {

inline constexpr double kSignificance = 0.01;
inline constexpr std::size_t kMinUniformitySamples = 1000;

struct PeerRate {
  std::uint64_t peer = 0;
  std::uint64_t frames = 0;
  std::uint64_t bytes = 0;
  std::vector<double> window_bps;  // full windows only
  double mean_bps = 0;
};

struct TraceVerdict {
  bool shape_equal = false;
  std::optional<std::size_t> first_mismatch;  // event index
  std::optional<double> offset_uniformity_p;
  double timing_cv = 0;
  std::vector<PeerRate> rates;
};

// Shape equality: kind, payload length and timestamp of every event match and
// the traces have equal length; offsets are ignored. Throws
// Errc::config_mismatch when the traces were produced under different round
// configurations.
TraceVerdict compare_traces(std::span<const HostCallEvent> a, const RoundConfig& config_a,
                            std::span<const HostCallEvent> b, const RoundConfig& config_b);

// Chi-square goodness of fit of `samples` against the uniform distribution on
// [lo, hi). Adjacent values are pooled so that every cell expects at least 5
// samples. Throws Errc::insufficient_data below kMinUniformitySamples.
double uniformity_test(std::span<const std::uint64_t> samples, std::uint64_t lo, std::uint64_t hi);

// Block indexes of the disk_read events within [lo, hi).
std::vector<std::uint64_t> read_blocks(std::span<const HostCallEvent> trace, std::uint64_t lo, std::uint64_t hi);

// Coefficient of variation of the gaps between consecutive distinct
// timestamps; 0 for a perfectly periodic trace.
double timing_cv(std::span<const HostCallEvent> trace);

// Per-peer net_write byte rates over consecutive windows of `window` ns.
std::vector<PeerRate> rate_report(std::span<const HostCallEvent> trace, SimTime window);

// True when more than half of the p-values exceed alpha.
bool majority_pass(std::span<const double> p_values, double alpha = kSignificance);

std::string describe(const TraceVerdict& verdict);

}  // namespace oblv
