#include "equicontact/random.hpp"

#include <cmath>
#include <numbers>

namespace equicontact {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

Vec3 Rng::uniform_vec3(double lo, double hi) {
  const double x = uniform(lo, hi);
  const double y = uniform(lo, hi);
  const double z = uniform(lo, hi);
  return {x, y, z};
}

Vec3 Rng::normal_vec3(double stddev) {
  const double x = normal();
  const double y = normal();
  const double z = normal();
  return stddev * Vec3(x, y, z);
}

Rotation Rng::uniform_rotation() {
  // Shoemake's uniform unit quaternion.
  const double u1 = uniform();
  const double u2 = uniform();
  const double u3 = uniform();
  const double a = std::sqrt(1.0 - u1);
  const double b = std::sqrt(u1);
  const double t2 = 2.0 * std::numbers::pi * u2;
  const double t3 = 2.0 * std::numbers::pi * u3;
  const Eigen::Quaterniond q(b * std::cos(t3), a * std::sin(t2), a * std::cos(t2), b * std::sin(t3));
  return Rotation::unchecked(q.normalized().toRotationMatrix());
}

Pose Rng::random_pose(double half_extent) {
  const Rotation R = uniform_rotation();
  return {uniform_vec3(-half_extent, half_extent), R};
}

}  // namespace equicontact
