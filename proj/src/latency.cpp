#include "feel/latency.hpp"

#include <algorithm>
#include <cmath>

namespace feel {

double broadcast_latency(const PayloadSpec& payload, const ChannelConfig& config,
                         const ChannelSnapshot& snapshot) {
  const double rate = downlink_rate(config, snapshot);
  if (!(rate > 0.0)) {
    throw InvalidInput("broadcast_latency: downlink rate is zero");
  }
  return payload.bits() / rate;
}

double compute_latency(const DeviceProfile& profile, const PayloadSpec& payload) {
  if (!(profile.flops > 0.0)) {
    throw InvalidInput("compute_latency: device " + std::to_string(profile.id) +
                       " has nonpositive FLOP rate");
  }
  return static_cast<double>(profile.samples) * payload.flops_per_sample / profile.flops;
}

Latency upload_latency(const PayloadSpec& payload, double bandwidth_hz, double snr) {
  const double rate = uplink_rate(bandwidth_hz, snr);
  if (rate == 0.0) {
    return Latency::unreachable();
  }
  return Latency(payload.bits() / rate);
}

namespace {

// Bandwidth at which a device's scaled-noise rate reaches `target_rate`.
double bandwidth_for_rate(double reference_snr, double reference_bandwidth_hz,
                          double target_rate) {
  const auto rate = [&](double b) {
    return b * std::log2(1.0 + reference_snr * reference_bandwidth_hz / b);
  };
  // The rate is increasing in b and bounded by snr*B_ref/ln 2.
  const double ceiling = reference_snr * reference_bandwidth_hz / std::log(2.0);
  if (target_rate >= ceiling) {
    return std::numeric_limits<double>::infinity();
  }
  double lo = 0.0;
  double hi = reference_bandwidth_hz;
  while (rate(hi) < target_rate) {
    hi *= 2.0;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (rate(mid) < target_rate ? lo : hi) = mid;
  }
  return hi;
}

}  // namespace

Eigen::VectorXd allocate_bandwidth_scaled_noise(std::span<const double> reference_snr,
                                                double reference_bandwidth_hz,
                                                double total_bandwidth_hz, double payload_bits) {
  if (reference_snr.empty() || !(total_bandwidth_hz > 0.0) || !(payload_bits > 0.0)) {
    throw InvalidInput("allocate_bandwidth_scaled_noise: invalid inputs");
  }
  const auto demand = [&](double latency) {
    double sum = 0.0;
    for (double snr : reference_snr) {
      sum += bandwidth_for_rate(snr, reference_bandwidth_hz, payload_bits / latency);
    }
    return sum;
  };
  // Start from the fixed-SNR answer and bracket the common latency.
  double lo = 0.0;
  double hi = 0.0;
  for (double snr : reference_snr) {
    hi += payload_bits / (total_bandwidth_hz * std::log2(1.0 + snr));
  }
  while (demand(hi) > total_bandwidth_hz) {
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (demand(mid) > total_bandwidth_hz ? lo : hi) = mid;
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(reference_snr.size()));
  for (std::size_t m = 0; m < reference_snr.size(); ++m) {
    out(static_cast<Eigen::Index>(m)) =
        bandwidth_for_rate(reference_snr[m], reference_bandwidth_hz, payload_bits / hi);
  }
  // Spread the bisection residue so the band is used exactly.
  return out * (total_bandwidth_hz / out.sum());
}

UploadPlan plan_upload(const PayloadSpec& payload, const ChannelConfig& config,
                       const ChannelSnapshot& snapshot, std::span<const std::size_t> scheduled) {
  if (scheduled.empty()) {
    throw InvalidInput("plan_upload: nothing scheduled");
  }
  UploadPlan plan;
  plan.devices.assign(scheduled.begin(), scheduled.end());
  std::vector<double> snr;
  for (auto k : scheduled) {
    if (k >= snapshot.uplink_snr.size()) {
      throw InvalidInput("plan_upload: device index out of range");
    }
    snr.push_back(snapshot.uplink_snr[k]);
  }

  Eigen::VectorXd bandwidth;
  if (scheduled.size() == 1) {
    bandwidth = Eigen::VectorXd::Constant(1, config.bandwidth_hz);
  } else if (config.snr_mode == SnrMode::kFixed) {
    bandwidth = allocate_bandwidth<double>(snr, config.bandwidth_hz);
  } else {
    bandwidth = allocate_bandwidth_scaled_noise(snr, config.bandwidth_hz, config.bandwidth_hz,
                                                payload.bits());
  }

  plan.round_upload = Latency(0.0);
  for (std::size_t m = 0; m < snr.size(); ++m) {
    const double b = bandwidth(static_cast<Eigen::Index>(m));
    plan.bandwidth_hz.push_back(b);
    const double effective =
        b > 0.0 ? snr_at_bandwidth(snr[m], config.bandwidth_hz, b, config.snr_mode) : snr[m];
    plan.upload.push_back(upload_latency(payload, b, effective));
    plan.round_upload = std::max(plan.round_upload, plan.upload.back());
  }
  return plan;
}

LatencyBreakdown round_latency(double broadcast_s, std::span<const double> compute_s,
                               std::span<const Latency> full_band_upload,
                               std::span<const std::size_t> scheduled,
                               const Latency& round_upload, ComputeScope scope) {
  if (compute_s.empty() || compute_s.size() != full_band_upload.size()) {
    throw InvalidInput("round_latency: per-device inputs have mismatched lengths");
  }
  LatencyBreakdown out;
  out.broadcast_s = broadcast_s;
  out.compute_s.assign(compute_s.begin(), compute_s.end());
  out.upload_s.assign(full_band_upload.begin(), full_band_upload.end());

  if (scope == ComputeScope::kFleet || scheduled.empty()) {
    out.compute_term_s = *std::max_element(compute_s.begin(), compute_s.end());
  } else {
    for (auto k : scheduled) {
      out.compute_term_s = std::max(out.compute_term_s, compute_s[k]);
    }
  }

  const Latency fixed(broadcast_s + out.compute_term_s);
  for (const auto& upload : full_band_upload) {
    out.round_total_s.push_back(upload.finite() ? fixed + upload : Latency::unreachable());
  }
  out.round_upload_s = round_upload;
  out.round_s = round_upload.finite() ? fixed + round_upload : Latency::unreachable();
  return out;
}

}  // namespace feel
