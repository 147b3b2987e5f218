#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace flowattack::pngio {

// Thin libpng wrappers. Readers are strict: bit depth and channel count
// must match the expected format exactly.

void write_png8(const std::string& path, int height, int width, int channels,
                const std::vector<uint8_t>& interleaved);

void write_png16(const std::string& path, int height, int width, int channels,
                 const std::vector<uint16_t>& interleaved);

std::vector<uint8_t> read_png8(const std::string& path, int expected_channels,
                               int& height, int& width);

std::vector<uint16_t> read_png16(const std::string& path, int expected_channels,
                                 int& height, int& width);

}  // namespace flowattack::pngio
