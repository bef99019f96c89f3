#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "nact/train.hpp"

namespace nact {

struct Cifar10 {
  Dataset train;
  Dataset test;
  // Per-channel training-set means (R, G, B), subtracted from both splits.
  std::array<double, 3> channel_mean = {0.0, 0.0, 0.0};
};

// Reads data_batch_1..5.bin and test_batch.bin from dir. Each record is
// 3073 bytes: one label byte (0..9) followed by 32x32 pixel bytes per plane
// in R, G, B order. Pixels are scaled to [0, 1] and the per-channel training
// mean is subtracted from both splits. Throws ErrorCode::Io for missing
// files or sizes that are not a whole number of records.
Cifar10 load_cifar10(const std::string& dir);

// Two interleaved half-circles with Gaussian noise of the given standard
// deviation, n_per_class points each, labels 0 and 1, mean-subtracted.
Dataset two_moons(int n_per_class, double noise, std::uint64_t seed);

// Pads each 32x32 plane of a (possibly mean-subtracted) CIFAR image with a
// 4-pixel zero border, takes a random 32x32 crop, and mirrors it left-right
// with probability 1/2.
Eigen::VectorXd augment_cifar_image(const Eigen::VectorXd& image,
                                    std::mt19937_64& rng);

}  // namespace nact
