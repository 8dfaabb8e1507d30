#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

namespace snpassoc {

using Rng = std::mt19937_64;

// SplitMix64 finaliser.
inline std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seeds for replicate `index` of task stream `stream` are a pure function of
// the master seed, so replicates can run in any order on any worker.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t index = 0) noexcept {
  return mix64(mix64(mix64(master) ^ (stream * 0xd1b54a32d192ed03ULL)) ^ index);
}

// Named streams keep derived seeds of different procedures apart.
namespace stream {
inline constexpr std::uint64_t folds = 1;
inline constexpr std::uint64_t cv_fold = 2;
inline constexpr std::uint64_t permutation = 3;
inline constexpr std::uint64_t permutation_retry = 4;
inline constexpr std::uint64_t balance = 5;
inline constexpr std::uint64_t bootstrap = 6;
inline constexpr std::uint64_t bootstrap_retry = 7;
inline constexpr std::uint64_t sgb_subsample = 8;
inline constexpr std::uint64_t anneal_restart = 9;
inline constexpr std::uint64_t anneal_probe = 10;
inline constexpr std::uint64_t cvim_replicate = 11;
inline constexpr std::uint64_t column_permutation = 12;
inline constexpr std::uint64_t synth_retry = 13;
inline constexpr std::uint64_t model_training = 14;
inline constexpr std::uint64_t feature_subsample = 15;
}  // namespace stream

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// Fisher-Yates, written out so the permutation only depends on the engine.
template <class T>
void fisher_yates(std::span<T> values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    std::swap(values[i - 1], values[j]);
  }
}

inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  fisher_yates(std::span<std::size_t>(p), rng);
  return p;
}

}  // namespace snpassoc
