#include "oblv/adversary.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "oblv/error.hpp"

namespace oblv {

TraceVerdict compare_traces(std::span<const HostCallEvent> a, const RoundConfig& config_a,
                            std::span<const HostCallEvent> b, const RoundConfig& config_b) {
  if (!(config_a == config_b)) throw Error(Errc::config_mismatch, "traces recorded under different round configs");
  TraceVerdict v;
  const auto n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i].kind != b[i].kind || a[i].payload_len != b[i].payload_len || a[i].timestamp != b[i].timestamp) {
      v.first_mismatch = i;
      break;
    }
  }
  if (!v.first_mismatch && a.size() != b.size()) v.first_mismatch = n;
  v.shape_equal = !v.first_mismatch;
  v.timing_cv = std::max(timing_cv(a), timing_cv(b));
  return v;
}

double uniformity_test(std::span<const std::uint64_t> samples, std::uint64_t lo, std::uint64_t hi) {
  if (hi <= lo) throw Error(Errc::parameter, "empty uniformity domain");
  if (samples.size() < kMinUniformitySamples) {
    throw Error(Errc::insufficient_data, std::to_string(samples.size()) + " samples, need " +
                                             std::to_string(kMinUniformitySamples));
  }
  const std::uint64_t k = hi - lo;
  const double n = static_cast<double>(samples.size());
  const double per_value = n / static_cast<double>(k);
  const std::uint64_t group = per_value >= 5.0 ? 1 : static_cast<std::uint64_t>(std::ceil(5.0 / per_value));
  const std::uint64_t cells = k / group;
  if (cells < 2) throw Error(Errc::insufficient_data, "too few samples for two cells");

  std::vector<double> observed(cells, 0.0);
  for (auto s : samples) {
    if (s < lo || s >= hi) throw Error(Errc::range, "sample " + std::to_string(s) + " outside the domain");
    // The remainder values are pooled into the last cell.
    observed[std::min((s - lo) / group, cells - 1)] += 1.0;
  }
  double stat = 0;
  for (std::uint64_t c = 0; c < cells; ++c) {
    const std::uint64_t width = c + 1 == cells ? k - group * (cells - 1) : group;
    const double expected = n * static_cast<double>(width) / static_cast<double>(k);
    const double d = observed[c] - expected;
    stat += d * d / expected;
  }
  boost::math::chi_squared dist(static_cast<double>(cells - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

std::vector<std::uint64_t> read_blocks(std::span<const HostCallEvent> trace, std::uint64_t lo, std::uint64_t hi) {
  std::vector<std::uint64_t> out;
  for (const auto& e : trace) {
    if (e.kind != HostCallKind::disk_read) continue;
    const auto blk = e.offset / kBlockSize;
    if (blk >= lo && blk < hi) out.push_back(blk);
  }
  return out;
}

double timing_cv(std::span<const HostCallEvent> trace) {
  std::vector<double> gaps;
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i].timestamp != trace[i - 1].timestamp) {
      gaps.push_back(static_cast<double>(trace[i].timestamp - trace[i - 1].timestamp));
    }
  }
  if (gaps.size() < 2) return 0;
  double mean = 0;
  for (auto g : gaps) mean += g;
  mean /= static_cast<double>(gaps.size());
  double var = 0;
  for (auto g : gaps) var += (g - mean) * (g - mean);
  var /= static_cast<double>(gaps.size());
  return std::sqrt(var) / mean;
}

std::vector<PeerRate> rate_report(std::span<const HostCallEvent> trace, SimTime window) {
  if (window == 0) throw Error(Errc::parameter, "rate window must be positive");
  std::map<std::uint64_t, PeerRate> by_peer;
  std::map<std::uint64_t, std::map<std::uint64_t, std::uint64_t>> bytes_in_window;
  std::optional<SimTime> start;
  SimTime end = 0;
  for (const auto& e : trace) {
    if (e.kind != HostCallKind::net_write) continue;
    if (!start) start = e.timestamp;
    end = e.timestamp;
    auto& p = by_peer[e.offset];
    p.peer = e.offset;
    ++p.frames;
    p.bytes += e.payload_len;
    bytes_in_window[e.offset][(e.timestamp - *start) / window] += e.payload_len;
  }
  std::vector<PeerRate> out;
  if (!start) return out;
  const std::uint64_t full_windows = (end - *start) / window;
  const double seconds = static_cast<double>(window) / 1e9;
  for (auto& [peer, p] : by_peer) {
    double sum = 0;
    for (std::uint64_t w = 0; w < full_windows; ++w) {
      auto it = bytes_in_window[peer].find(w);
      const double bytes = it == bytes_in_window[peer].end() ? 0.0 : static_cast<double>(it->second);
      p.window_bps.push_back(bytes * 8 / seconds);
      sum += p.window_bps.back();
    }
    if (full_windows > 0) p.mean_bps = sum / static_cast<double>(full_windows);
    out.push_back(std::move(p));
  }
  return out;
}

bool majority_pass(std::span<const double> p_values, double alpha) {
  const auto passed = std::count_if(p_values.begin(), p_values.end(), [alpha](double p) { return p > alpha; });
  return 2 * static_cast<std::size_t>(passed) > p_values.size();
}

std::string describe(const TraceVerdict& v) {
  std::ostringstream out;
  out << "shape_equal=" << (v.shape_equal ? "true" : "false") << "\n";
  if (v.first_mismatch) out << "first_mismatch=" << *v.first_mismatch << "\n";
  if (v.offset_uniformity_p) out << "offset_uniformity_p=" << *v.offset_uniformity_p << "\n";
  out << "timing_cv=" << v.timing_cv << "\n";
  for (const auto& r : v.rates) {
    out << "peer " << r.peer << ": frames=" << r.frames << " mean_bps=" << r.mean_bps << "\n";
  }
  return out.str();
}

}  // namespace oblv
