#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace fmlab {

using Engine = std::mt19937_64;

// Derives an independent seed for substream `stream` of `seed` (splitmix64
// finalizer applied twice). Every parallel unit of work draws from its own
// substream so results never depend on scheduling order.
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream);

inline Engine make_engine(std::uint64_t seed, std::uint64_t stream) {
  return Engine(substream_seed(seed, stream));
}

// d x n matrix of independent standard normal draws.
Eigen::MatrixXd standard_normal(Engine& rng, Eigen::Index d, Eigen::Index n);

double uniform01(Engine& rng);

}  // namespace fmlab
