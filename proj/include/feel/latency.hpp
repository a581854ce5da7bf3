#pragma once

#include <compare>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "feel/channel.hpp"
#include "feel/types.hpp"

namespace feel {

struct PayloadSpec {
  std::int64_t params = 1;        // S
  int bits_per_param = 16;        // q
  double flops_per_sample = 1e6;  // C

  // Model and gradient payloads are the same size.
  double bits() const { return static_cast<double>(bits_per_param) * static_cast<double>(params); }
};

/// Seconds, or "unreachable" for a device with no bandwidth. Unreachable
/// compares above every finite latency and refuses to take part in sums.
class Latency {
 public:
  constexpr Latency() = default;
  constexpr explicit Latency(double seconds) : seconds_(seconds) {}

  static constexpr Latency unreachable() {
    Latency out;
    out.unreachable_ = true;
    return out;
  }

  constexpr bool finite() const { return !unreachable_; }

  double seconds() const {
    if (unreachable_) {
      throw InvalidInput("latency of an unreachable device has no finite value");
    }
    return seconds_;
  }

  // Ordering for max/min selection: unreachable is the top element.
  constexpr std::partial_ordering operator<=>(const Latency& other) const {
    if (unreachable_ || other.unreachable_) {
      return static_cast<int>(unreachable_) <=> static_cast<int>(other.unreachable_);
    }
    return seconds_ <=> other.seconds_;
  }
  constexpr bool operator==(const Latency& other) const = default;

  Latency operator+(const Latency& other) const { return Latency(seconds() + other.seconds()); }

 private:
  double seconds_ = 0.0;
  bool unreachable_ = false;
};

enum class ComputeScope {
  kFleet,      // max over every device, as the protocol waits for all reports
  kScheduled,  // max over the scheduled devices only
};

/// qS / (B log2(1 + gamma)) with the fleet-minimum downlink SNR.
double broadcast_latency(const PayloadSpec& payload, const ChannelConfig& config,
                         const ChannelSnapshot& snapshot);

/// n_k C / f_k.
double compute_latency(const DeviceProfile& profile, const PayloadSpec& payload);

/// qS / (B_k log2(1 + gamma_k)); unreachable when B_k is zero.
Latency upload_latency(const PayloadSpec& payload, double bandwidth_hz, double snr);

/// Minimax bandwidth split for a fixed per-hertz rate R_m = log2(1 + gamma_m):
/// B_m = (B / R_m) / sum_j (1 / R_j). Upload latencies come out equal.
template <typename Scalar>
VectorX<Scalar> allocate_bandwidth(std::span<const Scalar> snr, Scalar total_bandwidth) {
  if (snr.empty()) {
    throw InvalidInput("allocate_bandwidth: empty scheduled set");
  }
  if (!(total_bandwidth > Scalar(0))) {
    throw InvalidInput("allocate_bandwidth: total bandwidth must be positive");
  }
  VectorX<Scalar> inverse_rate(static_cast<Eigen::Index>(snr.size()));
  for (std::size_t m = 0; m < snr.size(); ++m) {
    if (!(snr[m] > Scalar(0))) {
      throw InvalidInput("allocate_bandwidth: every SNR must be positive");
    }
    using std::log2;
    inverse_rate(static_cast<Eigen::Index>(m)) = Scalar(1) / log2(Scalar(1) + snr[m]);
  }
  return total_bandwidth * inverse_rate / inverse_rate.sum();
}

/// Equal-latency split when noise scales with the allocated band, so that
/// the per-hertz rate depends on B_m. Solved by nested bisection.
Eigen::VectorXd allocate_bandwidth_scaled_noise(std::span<const double> reference_snr,
                                                double reference_bandwidth_hz,
                                                double total_bandwidth_hz, double payload_bits);

struct UploadPlan {
  std::vector<std::size_t> devices;  // zero-based device indices
  std::vector<double> bandwidth_hz;
  std::vector<Latency> upload;
  Latency round_upload;  // slowest scheduled upload
};

/// A lone device takes the whole band; several share it by the minimax rule.
UploadPlan plan_upload(const PayloadSpec& payload, const ChannelConfig& config,
                       const ChannelSnapshot& snapshot, std::span<const std::size_t> scheduled);

struct LatencyBreakdown {
  double broadcast_s = 0.0;                  // T^B
  std::vector<double> compute_s;             // T_k^C for every device
  double compute_term_s = 0.0;               // max T^C over the configured scope
  std::vector<Latency> upload_s;             // T_k^U with the full band, every device
  std::vector<Latency> round_total_s;        // T_k = T^B + max T^C + T_k^U
  Latency round_upload_s;                    // upload term of the realized round
  Latency round_s;                           // simulated-clock increment
};

LatencyBreakdown round_latency(double broadcast_s, std::span<const double> compute_s,
                               std::span<const Latency> full_band_upload,
                               std::span<const std::size_t> scheduled,
                               const Latency& round_upload, ComputeScope scope);

}  // namespace feel
