#pragma once

#include <cstdint>
#include <string>

#include "aquags/gaussians.hpp"
#include "aquags/waterfield.hpp"

namespace aquags {

inline constexpr uint32_t kCheckpointVersion = 1;

/// Binary layout (little-endian):
///   "AQGS-CKPT" | u32 version | f64 r_max | u64 N |
///   positions N*3, rotations N*4, log_scales N*3, opacity_logits N, colors N*3 (f64) |
///   u64 M | water parameters M (f64, WaterField::flatten order) |
///   u64 L | config echo (L bytes, key = value lines) | u64 seed | u64 iteration
struct Checkpoint {
  double r_max = 1;
  GaussianCloud cloud;
  WaterField water;
  std::string config_echo;
  uint64_t seed = 0;
  uint64_t iteration = 0;
};

// Written to a temporary file and renamed into place.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Standalone sections with the same encoding, tagged by kind.
void save_cloud_fragment(const std::string& path, const GaussianCloud& cloud);
GaussianCloud load_cloud_fragment(const std::string& path);
void save_water_fragment(const std::string& path, const WaterField& water);
WaterField load_water_fragment(const std::string& path);

}  // namespace aquags
