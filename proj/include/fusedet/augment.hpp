#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fusedet/rng.hpp"
#include "fusedet/tensor.hpp"

namespace fusedet {

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  friend bool operator==(const Range&, const Range&) = default;
};

// Pixel-scale parameters on [0,1] images. Augmentations run in the order the
// fields are declared.
struct AugmentationConfig {
  double crop_prob = 0.3;
  double crop_fraction_max = 0.1;
  double hflip_prob = 0.5;
  double blur_prob = 0.2;
  Range blur_sigma{0.0, 0.6};
  double noise_prob = 0.3;
  Range noise_sigma{0.0, 0.03};
  double contrast_prob = 0.3;
  Range contrast_alpha{0.8, 1.2};
  double multiply_prob = 0.3;
  Range multiply{0.8, 1.2};

  static AugmentationConfig identity();

  // Throws ConfigError when a range is reversed or outside its allowed bounds.
  void validate() const;

  friend bool operator==(const AugmentationConfig&, const AugmentationConfig&) = default;
};

void to_json(nlohmann::json& j, const AugmentationConfig& c);
void from_json(const nlohmann::json& j, AugmentationConfig& c);

// Normalized 1-D Gaussian taps, radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

Tensor crop_and_resize(const Tensor& image, double left, double right, double top, double bottom);
Tensor hflip(const Tensor& image);
// Separable blur with replicated edges. sigma == 0 returns the input.
Tensor gaussian_blur(const Tensor& image, double sigma);
Tensor linear_contrast(const Tensor& image, double alpha);
Tensor multiply(const Tensor& image, double factor);

Tensor augment(const Tensor& image, const AugmentationConfig& cfg, Rng& rng);

// Per-sample stream: identical regardless of processing order.
std::uint64_t augmentation_seed(std::uint64_t seed, const std::string& video_id,
                                std::size_t frame_index, std::size_t epoch);

}  // namespace fusedet
