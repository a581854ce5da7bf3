#include "feel/channel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "feel/types.hpp"

namespace feel {

double path_loss_db(double distance_km, const ChannelConfig& config) {
  if (!(distance_km > 0.0)) {
    throw InvalidInput("path_loss_db: distance must be positive");
  }
  return config.pathloss_intercept_db + config.pathloss_slope_db * std::log10(distance_km);
}

double dbm_to_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }

double link_snr(double tx_power_dbm, double distance_km, double fading_gain, double bandwidth_hz,
                const ChannelConfig& config) {
  if (!(bandwidth_hz > 0.0)) {
    throw InvalidInput("link_snr: bandwidth must be positive");
  }
  const double noise_dbm = config.noise_dbm_per_hz + 10.0 * std::log10(bandwidth_hz);
  const double snr_db = tx_power_dbm - path_loss_db(distance_km, config) - noise_dbm;
  return std::pow(10.0, snr_db / 10.0) * fading_gain;
}

std::vector<double> place_devices(int count, const ChannelConfig& config, Rng& rng) {
  if (count < 1 || !(config.cell_radius_km > config.min_distance_km) ||
      !(config.min_distance_km > 0.0)) {
    throw InvalidInput("place_devices: need count >= 1 and 0 < min distance < radius");
  }
  const double inner2 = config.min_distance_km * config.min_distance_km;
  const double outer2 = config.cell_radius_km * config.cell_radius_km;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    out.push_back(std::sqrt(inner2 + uniform01(rng) * (outer2 - inner2)));
  }
  return out;
}

namespace {

double fading_gain(Fading fading, Rng& rng) {
  if (fading == Fading::kNone) {
    return 1.0;
  }
  // Unit-mean exponential power gain; 1 - u lies in (0, 1].
  double gain = -std::log(1.0 - uniform01(rng));
  return std::max(gain, std::numeric_limits<double>::min());
}

}  // namespace

ChannelSnapshot draw_snapshot(std::span<const DeviceProfile> profiles, const ChannelConfig& config,
                              int round_index, Rng& rng) {
  if (profiles.empty()) {
    throw InvalidInput("draw_snapshot: empty fleet");
  }
  ChannelSnapshot snap;
  snap.round_index = round_index;
  snap.downlink_snr = std::numeric_limits<double>::infinity();
  for (const auto& device : profiles) {
    const double up_gain = fading_gain(config.fading, rng);
    const double down_gain = fading_gain(config.fading, rng);
    snap.uplink_snr.push_back(
        link_snr(device.tx_power_dbm, device.distance_km, up_gain, config.bandwidth_hz, config));
    const double down = link_snr(config.server_tx_power_dbm, device.distance_km, down_gain,
                                 config.bandwidth_hz, config);
    snap.device_downlink_snr.push_back(down);
    snap.downlink_snr = std::min(snap.downlink_snr, down);
  }
  return snap;
}

double uplink_rate(double bandwidth_hz, double snr) {
  if (bandwidth_hz < 0.0 || snr < 0.0) {
    throw InvalidInput("uplink_rate: bandwidth and SNR must be nonnegative");
  }
  if (bandwidth_hz == 0.0) {
    return 0.0;
  }
  return bandwidth_hz * std::log2(1.0 + snr);
}

double downlink_rate(const ChannelConfig& config, const ChannelSnapshot& snapshot) {
  return uplink_rate(config.bandwidth_hz, snapshot.downlink_snr);
}

double snr_at_bandwidth(double reference_snr, double reference_bandwidth_hz,
                        double allocated_bandwidth_hz, SnrMode mode) {
  if (mode == SnrMode::kFixed) {
    return reference_snr;
  }
  if (!(allocated_bandwidth_hz > 0.0)) {
    throw InvalidInput("snr_at_bandwidth: allocated bandwidth must be positive");
  }
  return reference_snr * reference_bandwidth_hz / allocated_bandwidth_hz;
}

}  // namespace feel
