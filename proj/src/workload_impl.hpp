#pragma once

#include <cstdint>
#include <memory>
#include <random>

#include "mw/workload.hpp"

namespace mw {

std::unique_ptr<Workload> make_noisy_quadratic(const WorkloadSpec& spec);
std::unique_ptr<Workload> make_tiny_lm(const WorkloadSpec& spec);

/// Generator seeded from a (seed, stream, index) triple.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace mw
