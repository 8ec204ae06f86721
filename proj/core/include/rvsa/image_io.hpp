#pragma once

#include <string>
#include <vector>

#include "rvsa/tensor.hpp"

namespace rvsa {

/// Reads a netpbm image (P1/P2/P3 ASCII or P5/P6 binary) into a C x H x W
/// tensor with values scaled to [0, 1].
Tensor load_netpbm(const std::string& path);

/// Writes a grayscale (1 channel) tensor as binary PGM, values clamped to
/// [0, 1] and scaled to 0..255.
void write_pgm(const std::string& path, const Tensor& image);

/// All .pgm/.ppm/.pbm files in a directory, sorted by filename, converted
/// to `channels` (grayscale average or channel replication as needed).
std::vector<Tensor> load_image_dir(const std::string& dir, int channels);

}  // namespace rvsa
