#pragma once

// Paired noisy/clean image handling: synthetic Gaussian corruption, folder
// ingestion, patch cropping, and dihedral augmentation. Pixel values live in
// [0,1]; noise standard deviations are quoted on the 0..255 scale.

#include <cstdint>
#include <string>
#include <vector>

#include "waveden/rng.hpp"
#include "waveden/tensor.hpp"

namespace waveden {

struct Image {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<float> chw;  // 3 x H x W, row-major

  bool empty() const { return chw.empty(); }
  float& at(int64_t c, int64_t y, int64_t x) { return chw[size_t((c * height + y) * width + x)]; }
  float at(int64_t c, int64_t y, int64_t x) const {
    return chw[size_t((c * height + y) * width + x)];
  }
};

Image make_image(int64_t height, int64_t width, float fill = 0.0f);

Tensor<float> to_tensor(const Image& img, bool requires_grad = false);
Image to_image(const Tensor<float>& t);

struct Provenance {
  enum class Kind { synthetic, folder };
  Kind kind = Kind::synthetic;
  float sigma = 0.0f;  // synthetic only
  std::string path;    // folder only
};

struct ImagePair {
  Image noisy, clean;
  Provenance provenance;
};

// noisy = clean + n/255 with n ~ N(0, sigma^2) i.i.d. per pixel-channel.
// The noisy member is intentionally not clipped.
ImagePair synthesize_awgn(const Image& clean, float sigma, Rng& rng);

// Reads <root>/noisy/<stem>.{png,pgm} matched against <root>/clean/<stem>...
// by identical stem; unmatched stems on either side are an error listing the
// orphans. Pairs come back sorted by stem.
std::vector<ImagePair> load_paired_folder(const std::string& root);

ImagePair crop_pair(const ImagePair& pair, int64_t patch, int64_t top, int64_t left);

// Uniformly random aligned crops, identical for both members.
std::vector<ImagePair> sample_patches(const ImagePair& pair, int64_t patch, int64_t count,
                                      Rng& rng);

// The eight square symmetries; index layout: (t & 3) quarter-turns, then a
// horizontal flip when t >= 4.
Image dihedral(const Image& img, int t);

// Applies one uniformly chosen dihedral transform to both pair members.
ImagePair augment_pair(const ImagePair& pair, Rng& rng);

}  // namespace waveden
