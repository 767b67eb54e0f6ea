#pragma once

#include <string>

#include "core/tensor.hpp"

// PNG image I/O and pixel-space metrics. Images are float tensors shaped
// [3, H, W] with values in [0, 1], channel-major like the rest of the code.
namespace fasdiff::media {

Tensor<float> load_png(const std::string& path);
void write_png(const std::string& path, const Tensor<float>& rgb);

// peak signal-to-noise ratio in dB; +inf when the inputs are identical
double psnr(const Tensor<float>& a, const Tensor<float>& b, double peak = 1.0);

}  // namespace fasdiff::media
