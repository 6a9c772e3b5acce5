#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fusedet/tensor.hpp"

namespace fusedet {

// Binary PPM (P6, maxval 255) <-> [3,H,W] tensors with values in [0,1].
Tensor decode_ppm(const std::string& bytes, const std::string& origin = "<memory>");
std::string encode_ppm(const Tensor& image);

Tensor load_image(const std::filesystem::path& path);
void save_image(const Tensor& image, const std::filesystem::path& path);

// Bilinear resampling of a [C,H,W] tensor (pixel-center aligned).
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

}  // namespace fusedet
