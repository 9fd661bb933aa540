#pragma once
// Portable seeded randomness. std::*_distribution output differs between
// standard libraries, so the transforms below are spelled out to keep
// benchmark outcomes identical across machines.

#include <cstdint>
#include <random>

#include "equicontact/liegroup.hpp"

namespace equicontact {

/// splitmix64 finalizer, used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t stream) : engine_(mix_seed(seed, stream)) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  std::uint64_t next_u64() { return engine_(); }

  Vec3 uniform_vec3(double lo, double hi);
  Vec3 normal_vec3(double stddev);
  /// Haar-uniform rotation.
  Rotation uniform_rotation();
  /// Rotation uniform on SO(3), translation uniform in the cube [-half, half]^3.
  Pose random_pose(double half_extent);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace equicontact
