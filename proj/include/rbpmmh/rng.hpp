#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace rbpmmh {

/// Mix a root seed with a list of stream coordinates into a 64-bit seed.
/// Distinct coordinate tuples give statistically independent substreams,
/// so per-particle draws do not depend on how work is scheduled.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> keys);

/// Stream tags used with derive_seed. Values are part of the reproducibility
/// contract: changing them changes every seeded result.
namespace stream {
inline constexpr std::uint64_t particle = 0x5041525449434cULL;
inline constexpr std::uint64_t resample = 0x5245534d504cULL;
inline constexpr std::uint64_t final_pick = 0x46494e414cULL;
inline constexpr std::uint64_t path = 0x50415448ULL;
inline constexpr std::uint64_t proposal = 0x50524f50ULL;
inline constexpr std::uint64_t accept = 0x41434350ULL;
inline constexpr std::uint64_t smc = 0x534d43ULL;
inline constexpr std::uint64_t metamodel = 0x4d455441ULL;
inline constexpr std::uint64_t deviation = 0x44455649ULL;
inline constexpr std::uint64_t noise = 0x4e4f4953ULL;
}  // namespace stream

/// Thin wrapper over std::mt19937_64 with the two draws the library needs.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng substream(std::uint64_t root, std::initializer_list<std::uint64_t> keys) {
    return Rng(derive_seed(root, keys));
  }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }

  std::mt19937_64& engine() { return engine_; }

private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace rbpmmh
