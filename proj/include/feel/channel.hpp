#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "feel/random.hpp"

namespace feel {

enum class Fading { kNone, kRayleighBlock };

// kFixed keeps gamma_k at its reference-bandwidth value whatever bandwidth is
// later allocated. kScaledNoise lets noise power follow the allocated band.
enum class SnrMode { kFixed, kScaledNoise };

struct ChannelConfig {
  double bandwidth_hz = 1e6;
  double noise_dbm_per_hz = -174.0;
  double server_tx_power_dbm = 46.0;
  double device_tx_power_dbm = 24.0;
  double pathloss_intercept_db = 128.1;
  double pathloss_slope_db = 37.6;
  double cell_radius_km = 0.5;
  double min_distance_km = 0.01;
  Fading fading = Fading::kRayleighBlock;
  SnrMode snr_mode = SnrMode::kFixed;
};

struct DeviceProfile {
  int id = 0;
  std::int64_t samples = 1;  // n_k
  double flops = 1e9;        // f_k, FLOP/s
  double distance_km = 0.1;
  double tx_power_dbm = 24.0;
};

struct ChannelSnapshot {
  std::vector<double> uplink_snr;    // gamma_k, linear, at the reference bandwidth
  std::vector<double> device_downlink_snr;
  double downlink_snr = 0.0;         // fleet minimum of device_downlink_snr
  int round_index = 0;
};

double path_loss_db(double distance_km, const ChannelConfig& config = {});

double dbm_to_mw(double dbm);

/// Received SNR (linear) at `bandwidth_hz` for a link with the given
/// transmit power, distance and linear fading power gain.
double link_snr(double tx_power_dbm, double distance_km, double fading_gain,
                double bandwidth_hz, const ChannelConfig& config);

/// Distances uniform over the annulus [min_distance_km, cell_radius_km].
std::vector<double> place_devices(int count, const ChannelConfig& config, Rng& rng);

/// Per-round SNRs. Rayleigh block fading draws one unit-mean exponential
/// power gain per device and direction from `rng`; kNone consumes nothing.
ChannelSnapshot draw_snapshot(std::span<const DeviceProfile> profiles, const ChannelConfig& config,
                              int round_index, Rng& rng);

/// B_k log2(1 + gamma_k) in bit/s; zero when B_k is zero.
double uplink_rate(double bandwidth_hz, double snr);

double downlink_rate(const ChannelConfig& config, const ChannelSnapshot& snapshot);

/// SNR seen on an allocated band, given the SNR at the reference bandwidth.
double snr_at_bandwidth(double reference_snr, double reference_bandwidth_hz,
                        double allocated_bandwidth_hz, SnrMode mode);

}  // namespace feel
