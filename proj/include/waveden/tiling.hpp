#pragma once

// Whole-image inference through the fixed-size network input: the image is
// covered by training-patch-sized tiles with configurable overlap and the
// overlapping predictions are blended with linear feather weights. A single
// exactly-fitting tile bypasses blending entirely.

#include "waveden/dataset.hpp"
#include "waveden/model.hpp"

namespace waveden {

// Tile start offsets covering [0, len) with the last tile flush against the
// end; requires len >= tile.
std::vector<int64_t> tile_positions(int64_t len, int64_t tile, int64_t overlap);

Image denoise_tiled(const Model<float>& model, const Image& noisy, int64_t overlap);

Image clamp_image(Image img);

}  // namespace waveden
