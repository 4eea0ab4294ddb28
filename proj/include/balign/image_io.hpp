#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "balign/sampler.hpp"

namespace balign {

/// Linear map [-1, 1] -> [0, 255] with rounding and clamping.
std::uint8_t intensity_to_byte(double v);
double byte_to_intensity(std::uint8_t b);

/// Binary 8-bit PGM (P5), single channel.
void write_pgm(const std::filesystem::path& path, const Image& image);
Image read_pgm(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_pgm(const Image& image);

/// What a write/read round trip through PGM yields.
Image quantize_8bit(const Image& image);

}  // namespace balign
