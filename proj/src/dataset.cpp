#include "waveden/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <sstream>

#include "waveden/image_io.hpp"

namespace waveden {

namespace fs = std::filesystem;

Image make_image(int64_t height, int64_t width, float fill) {
  Image img;
  img.height = height;
  img.width = width;
  img.chw.assign(size_t(3 * height * width), fill);
  return img;
}

Tensor<float> to_tensor(const Image& img, bool requires_grad) {
  return Tensor<float>::from({3, img.height, img.width}, img.chw, requires_grad);
}

Image to_image(const Tensor<float>& t) {
  detail::check(t.ndim() == 3 && t.extent(0) == 3,
                "to_image: expects 3xHxW, got " + detail::shape_str(t.shape()));
  Image img;
  img.height = t.extent(1);
  img.width = t.extent(2);
  img.chw.assign(t.data().begin(), t.data().end());
  return img;
}

ImagePair synthesize_awgn(const Image& clean, float sigma, Rng& rng) {
  detail::check(sigma >= 0.0f, "synthesize_awgn: sigma must be non-negative");
  ImagePair pair;
  pair.clean = clean;
  pair.noisy = clean;
  if (sigma > 0.0f) {
    const float s = sigma / 255.0f;
    for (float& v : pair.noisy.chw) v += s * float(rng.normal());
  }
  pair.provenance = {Provenance::Kind::synthetic, sigma, ""};
  return pair;
}

std::vector<ImagePair> load_paired_folder(const std::string& root) {
  const fs::path noisy_dir = fs::path(root) / "noisy";
  const fs::path clean_dir = fs::path(root) / "clean";
  detail::check(fs::is_directory(noisy_dir) && fs::is_directory(clean_dir),
                "load_paired_folder: " + root + " must contain noisy/ and clean/");

  auto scan = [](const fs::path& dir) {
    std::map<std::string, fs::path> stems;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (!e.is_regular_file()) continue;
      const std::string ext = e.path().extension().string();
      if (ext == ".png" || ext == ".pgm") stems.emplace(e.path().stem().string(), e.path());
    }
    return stems;
  };
  const auto noisy = scan(noisy_dir);
  const auto clean = scan(clean_dir);

  std::vector<std::string> orphans;
  for (const auto& [stem, p] : noisy)
    if (!clean.count(stem)) orphans.push_back("noisy/" + p.filename().string());
  for (const auto& [stem, p] : clean)
    if (!noisy.count(stem)) orphans.push_back("clean/" + p.filename().string());
  if (!orphans.empty()) {
    std::ostringstream os;
    os << "load_paired_folder: unmatched files under " << root << ":";
    for (const auto& o : orphans) os << ' ' << o;
    detail::fail(os.str());
  }

  std::vector<ImagePair> pairs;
  for (const auto& [stem, npath] : noisy) {
    ImagePair pair;
    pair.noisy = read_image(npath.string());
    pair.clean = read_image(clean.at(stem).string());
    detail::check(pair.noisy.height == pair.clean.height && pair.noisy.width == pair.clean.width,
                  "load_paired_folder: size mismatch for stem " + stem);
    pair.provenance = {Provenance::Kind::folder, 0.0f, npath.string()};
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

ImagePair crop_pair(const ImagePair& pair, int64_t patch, int64_t top, int64_t left) {
  const Image& ref = pair.clean;
  detail::check(patch >= 1 && top >= 0 && left >= 0 && top + patch <= ref.height &&
                    left + patch <= ref.width,
                "crop_pair: crop outside image bounds");
  auto crop = [&](const Image& src) {
    Image out = make_image(patch, patch);
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < patch; ++y)
        for (int64_t x = 0; x < patch; ++x) out.at(c, y, x) = src.at(c, top + y, left + x);
    return out;
  };
  ImagePair out;
  out.noisy = crop(pair.noisy);
  out.clean = crop(pair.clean);
  out.provenance = pair.provenance;
  return out;
}

std::vector<ImagePair> sample_patches(const ImagePair& pair, int64_t patch, int64_t count,
                                      Rng& rng) {
  detail::check(patch <= pair.clean.height && patch <= pair.clean.width,
                "sample_patches: patch " + std::to_string(patch) + " exceeds image " +
                    std::to_string(pair.clean.height) + "x" + std::to_string(pair.clean.width));
  std::vector<ImagePair> out;
  out.reserve(size_t(count));
  for (int64_t i = 0; i < count; ++i) {
    const int64_t top = rng.uniform_int(pair.clean.height - patch + 1);
    const int64_t left = rng.uniform_int(pair.clean.width - patch + 1);
    out.push_back(crop_pair(pair, patch, top, left));
  }
  return out;
}

Image dihedral(const Image& img, int t) {
  detail::check(t >= 0 && t < 8, "dihedral: transform index out of range");
  const int rot = t & 3;
  const bool flip = t >= 4;
  if (rot != 0)
    detail::check(img.height == img.width, "dihedral: rotation requires a square image");
  Image out = make_image(img.height, img.width);
  const int64_t n = img.height;
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < img.height; ++y)
      for (int64_t x = 0; x < img.width; ++x) {
        int64_t sy = y, sx = x;
        if (flip) sx = img.width - 1 - sx;
        // inverse quarter-turns: out(y,x) = in(rot^-1(y,x))
        for (int r = 0; r < rot; ++r) {
          const int64_t ty = sx, tx = n - 1 - sy;
          sy = ty;
          sx = tx;
        }
        out.at(c, y, x) = img.at(c, sy, sx);
      }
  return out;
}

ImagePair augment_pair(const ImagePair& pair, Rng& rng) {
  detail::check(pair.clean.height == pair.clean.width,
                "augment_pair: rotations require square patches");
  const int t = int(rng.uniform_int(8));
  ImagePair out;
  out.noisy = dihedral(pair.noisy, t);
  out.clean = dihedral(pair.clean, t);
  out.provenance = pair.provenance;
  return out;
}

}  // namespace waveden
