#pragma once

// Evaluation metrics. Accumulations run in double; the tensor pipeline is
// unaffected.

#include "waveden/dataset.hpp"

namespace waveden {

// 10*log10(peak^2 / MSE) over all channels; identical images report +inf.
double psnr(const Image& a, const Image& b, double peak = 1.0);

// Mean local structural similarity on the luminance (channel mean), 11x11
// Gaussian window with sigma 1.5, k1=0.01, k2=0.03, dynamic range 1.0.
// Borders without full window support are excluded.
double ssim(const Image& a, const Image& b);

}  // namespace waveden
