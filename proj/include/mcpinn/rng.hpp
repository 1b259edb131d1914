#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace mcpinn {

// Counter-based splittable RNG.
//
// A stream is addressed by (root_seed, path), where path is a list of
// non-negative integers such as (purpose, epoch, point, group). Draw n of a
// stream is a pure function of the address, so results never depend on thread
// scheduling or on how many draws other streams have consumed.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : key_(key) {}

  // Raw 64-bit draw; random access by counter.
  std::uint64_t next_u64() { return mix64(key_ + (++n_) * 0x9E3779B97F4A7C15ull); }

  // Uniform on (0, 1]; never returns 0 so that powers u^{1/k} stay positive.
  double next_uniform() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Box-Muller pair; consumes exactly two uniforms.
  void next_normal_pair(double& z0, double& z1) {
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    z0 = r * std::cos(6.283185307179586476925286766559 * u2);
    z1 = r * std::sin(6.283185307179586476925286766559 * u2);
  }

  double next_normal() {
    double z0, z1;
    next_normal_pair(z0, z1);
    return z0;
  }

  std::uint64_t draws() const { return n_; }

 private:
  std::uint64_t key_;
  std::uint64_t n_ = 0;
};

struct RngKey {
  std::uint64_t root_seed = 0;
  std::vector<std::uint64_t> path;

  RngKey() = default;
  explicit RngKey(std::uint64_t root) : root_seed(root) {}

  RngKey child(std::uint64_t index) const {
    RngKey k = *this;
    k.path.push_back(index);
    return k;
  }

  // Folds root and path into a single stream key. Distinct paths give
  // statistically independent streams; (a, b) never collides with (a*K + b)
  // style flattening because every level passes through the full mixer.
  std::uint64_t fold() const {
    std::uint64_t k = mix64(root_seed ^ 0x6D6370696E6E0001ull);
    for (std::uint64_t p : path) k = mix64(k ^ mix64(p ^ 0xA5A5A5A55A5A5A5Aull));
    return k;
  }

  RngStream stream() const { return RngStream(fold()); }
};

// Reserved top-level purposes under a run's root key. Everything below an
// epoch's training draws hangs off kTrain/epoch/point/group.
enum RngPurpose : std::uint64_t {
  kTrainPurpose = 0,
  kDataPurpose = 1,
  kTestPointsPurpose = 2,
  kInitPurpose = 3,
  kAbcPurpose = 4,
  kEstimatePurpose = 5,
};

}  // namespace mcpinn
