#include "waveden/tiling.hpp"

#include <algorithm>

namespace waveden {

std::vector<int64_t> tile_positions(int64_t len, int64_t tile, int64_t overlap) {
  detail::check(len >= tile, "tile_positions: image extent smaller than tile");
  detail::check(overlap >= 0 && overlap < tile, "tile_positions: overlap must be in [0, tile)");
  std::vector<int64_t> xs;
  const int64_t stride = tile - overlap;
  for (int64_t p = 0;; p += stride) {
    if (p + tile >= len) {
      if (xs.empty() || xs.back() != len - tile) xs.push_back(len - tile);
      break;
    }
    xs.push_back(p);
  }
  return xs;
}

namespace {

// Symmetric reflection pad on the bottom/right edges.
Image reflect_pad(const Image& img, int64_t bottom, int64_t right) {
  Image out = make_image(img.height + bottom, img.width + right);
  auto mirror = [](int64_t i, int64_t n) {
    if (i < n) return i;
    const int64_t m = 2 * (n - 1) - i;
    return std::max<int64_t>(0, m);
  };
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < out.height; ++y)
      for (int64_t x = 0; x < out.width; ++x)
        out.at(c, y, x) = img.at(c, mirror(y, img.height), mirror(x, img.width));
  return out;
}

float feather(int64_t u, int64_t tile, int64_t overlap) {
  const int64_t r = std::min<int64_t>({u + 1, tile - u, overlap + 1});
  return float(r) / float(overlap + 1);
}

}  // namespace

Image clamp_image(Image img) {
  for (float& v : img.chw) v = std::min(1.0f, std::max(0.0f, v));
  return img;
}

Image denoise_tiled(const Model<float>& model, const Image& noisy, int64_t overlap) {
  NoGradGuard no_grad;
  const int64_t tile = model.config().train_patch;

  if (noisy.height == tile && noisy.width == tile)
    return to_image(model.forward(to_tensor(noisy)));

  if (noisy.height < tile || noisy.width < tile) {
    const Image padded = reflect_pad(noisy, std::max<int64_t>(0, tile - noisy.height),
                                     std::max<int64_t>(0, tile - noisy.width));
    Image full = denoise_tiled(model, padded, overlap);
    Image out = make_image(noisy.height, noisy.width);
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < noisy.height; ++y)
        for (int64_t x = 0; x < noisy.width; ++x) out.at(c, y, x) = full.at(c, y, x);
    return out;
  }

  const auto ys = tile_positions(noisy.height, tile, overlap);
  const auto xs = tile_positions(noisy.width, tile, overlap);

  std::vector<float> acc(size_t(3 * noisy.height * noisy.width), 0.0f);
  std::vector<float> wsum(size_t(noisy.height * noisy.width), 0.0f);
  Image tile_img = make_image(tile, tile);
  for (int64_t ty : ys)
    for (int64_t tx : xs) {
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < tile; ++y)
          for (int64_t x = 0; x < tile; ++x) tile_img.at(c, y, x) = noisy.at(c, ty + y, tx + x);
      const Image pred = to_image(model.forward(to_tensor(tile_img)));
      for (int64_t y = 0; y < tile; ++y) {
        const float wy = feather(y, tile, overlap);
        for (int64_t x = 0; x < tile; ++x) {
          const float w = wy * feather(x, tile, overlap);
          wsum[size_t((ty + y) * noisy.width + tx + x)] += w;
          for (int64_t c = 0; c < 3; ++c)
            acc[size_t((c * noisy.height + ty + y) * noisy.width + tx + x)] +=
                w * pred.at(c, y, x);
        }
      }
    }

  Image out = make_image(noisy.height, noisy.width);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < noisy.height; ++y)
      for (int64_t x = 0; x < noisy.width; ++x)
        out.at(c, y, x) = acc[size_t((c * noisy.height + y) * noisy.width + x)] /
                          wsum[size_t(y * noisy.width + x)];
  return out;
}

}  // namespace waveden
