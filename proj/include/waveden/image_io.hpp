#pragma once

// 8-bit image file handling. PNG (RGB; gray and alpha variants are expanded
// or stripped on read) and binary PGM. Values map to [0,1] by /255; writes
// clamp to [0,1] and round.

#include <string>

#include "waveden/dataset.hpp"

namespace waveden {

Image read_image(const std::string& path);

// Format chosen by extension: .png writes RGB, .pgm writes the channel mean.
void write_image(const std::string& path, const Image& img);

}  // namespace waveden
