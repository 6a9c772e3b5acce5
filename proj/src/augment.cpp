#include "fusedet/augment.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "fusedet/errors.hpp"

namespace fusedet {

using nlohmann::json;

AugmentationConfig AugmentationConfig::identity() {
  AugmentationConfig c;
  c.crop_prob = c.hflip_prob = c.blur_prob = c.noise_prob = c.contrast_prob = c.multiply_prob = 0.0;
  return c;
}

namespace {

void check_prob(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0))
    throw ConfigError(std::string("augmentation ") + name + " must be in [0,1]");
}

void check_range(const Range& r, double lo, double hi, const char* name) {
  if (!(r.lo <= r.hi) || r.lo < lo || r.hi > hi)
    throw ConfigError(std::string("augmentation ") + name + " range [" + std::to_string(r.lo) +
                      ", " + std::to_string(r.hi) + "] must be ordered and within [" +
                      std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

void require_image(const Tensor& image, const char* what) {
  if (image.rank() != 3)
    throw ShapeError(std::string(what) + ": expected [C,H,W], got " + shape_string(image.shape()));
}

double sample(const Tensor& img, std::size_t c, double sy, double sx) {
  const std::size_t H = img.dim(1), W = img.dim(2);
  sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(sy));
  const auto x0 = static_cast<std::size_t>(std::floor(sx));
  const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
  const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
  const double top = img.at(c, y0, x0) * (1 - fx) + img.at(c, y0, x1) * fx;
  const double bot = img.at(c, y1, x0) * (1 - fx) + img.at(c, y1, x1) * fx;
  return top * (1 - fy) + bot * fy;
}

}  // namespace

void AugmentationConfig::validate() const {
  check_prob(crop_prob, "crop_prob");
  check_prob(hflip_prob, "hflip_prob");
  check_prob(blur_prob, "blur_prob");
  check_prob(noise_prob, "noise_prob");
  check_prob(contrast_prob, "contrast_prob");
  check_prob(multiply_prob, "multiply_prob");
  if (!(crop_fraction_max >= 0.0 && crop_fraction_max <= 0.2))
    throw ConfigError("augmentation crop_fraction_max must be in [0,0.2]");
  check_range(blur_sigma, 0.0, 2.0, "blur_sigma");
  check_range(noise_sigma, 0.0, 0.1, "noise_sigma");
  check_range(contrast_alpha, 0.6, 1.4, "contrast_alpha");
  check_range(multiply, 0.7, 1.3, "multiply");
}

void to_json(json& j, const AugmentationConfig& c) {
  j = json{{"crop_prob", c.crop_prob},
           {"crop_fraction_max", c.crop_fraction_max},
           {"hflip_prob", c.hflip_prob},
           {"blur_prob", c.blur_prob},
           {"blur_sigma", {c.blur_sigma.lo, c.blur_sigma.hi}},
           {"noise_prob", c.noise_prob},
           {"noise_sigma", {c.noise_sigma.lo, c.noise_sigma.hi}},
           {"contrast_prob", c.contrast_prob},
           {"contrast_alpha", {c.contrast_alpha.lo, c.contrast_alpha.hi}},
           {"multiply_prob", c.multiply_prob},
           {"multiply", {c.multiply.lo, c.multiply.hi}}};
}

void from_json(const json& j, AugmentationConfig& c) {
  const AugmentationConfig d;
  auto range = [&j](const char* key, Range def) {
    if (!j.contains(key)) return def;
    const auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != 2) throw ConfigError(std::string("augmentation ") + key + " needs [lo, hi]");
    return Range{v[0], v[1]};
  };
  c.crop_prob = j.value("crop_prob", d.crop_prob);
  c.crop_fraction_max = j.value("crop_fraction_max", d.crop_fraction_max);
  c.hflip_prob = j.value("hflip_prob", d.hflip_prob);
  c.blur_prob = j.value("blur_prob", d.blur_prob);
  c.blur_sigma = range("blur_sigma", d.blur_sigma);
  c.noise_prob = j.value("noise_prob", d.noise_prob);
  c.noise_sigma = range("noise_sigma", d.noise_sigma);
  c.contrast_prob = j.value("contrast_prob", d.contrast_prob);
  c.contrast_alpha = range("contrast_alpha", d.contrast_alpha);
  c.multiply_prob = j.value("multiply_prob", d.multiply_prob);
  c.multiply = range("multiply", d.multiply);
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma >= 0.0)) throw ConfigError("gaussian_kernel: sigma must be non-negative");
  if (sigma == 0.0) return {1.0};
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

Tensor crop_and_resize(const Tensor& image, double left, double right, double top,
                       double bottom) {
  require_image(image, "crop_and_resize");
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const double x0 = left * static_cast<double>(W);
  const double cw = (1.0 - left - right) * static_cast<double>(W);
  const double y0 = top * static_cast<double>(H);
  const double ch = (1.0 - top - bottom) * static_cast<double>(H);
  if (!(cw > 0.0 && ch > 0.0)) throw ConfigError("crop_and_resize: empty crop region");
  Tensor out(image.shape());
  for (std::size_t oy = 0; oy < H; ++oy) {
    const double sy = y0 + (static_cast<double>(oy) + 0.5) * ch / static_cast<double>(H) - 0.5;
    for (std::size_t ox = 0; ox < W; ++ox) {
      const double sx = x0 + (static_cast<double>(ox) + 0.5) * cw / static_cast<double>(W) - 0.5;
      for (std::size_t c = 0; c < C; ++c) out.at(c, oy, ox) = sample(image, c, sy, sx);
    }
  }
  return out;
}

Tensor hflip(const Tensor& image) {
  require_image(image, "hflip");
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) out.at(c, y, x) = image.at(c, y, W - 1 - x);
  return out;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  require_image(image, "gaussian_blur");
  if (sigma == 0.0) return image;
  const std::vector<double> k = gaussian_kernel(sigma);
  const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  auto clampi = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  Tensor tmp(image.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double s = 0.0;
        for (std::ptrdiff_t d = -r; d <= r; ++d)
          s += k[static_cast<std::size_t>(d + r)] *
               image.at(c, y, clampi(static_cast<std::ptrdiff_t>(x) + d, W));
        tmp.at(c, y, x) = s;
      }
  Tensor out(image.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double s = 0.0;
        for (std::ptrdiff_t d = -r; d <= r; ++d)
          s += k[static_cast<std::size_t>(d + r)] *
               tmp.at(c, clampi(static_cast<std::ptrdiff_t>(y) + d, H), x);
        out.at(c, y, x) = s;
      }
  return out;
}

Tensor linear_contrast(const Tensor& image, double alpha) {
  Tensor out = image;
  for (double& v : out.data()) v = alpha * (v - 0.5) + 0.5;
  return out;
}

Tensor multiply(const Tensor& image, double factor) {
  Tensor out = image;
  for (double& v : out.data()) v *= factor;
  return out;
}

Tensor augment(const Tensor& image, const AugmentationConfig& cfg, Rng& rng) {
  require_image(image, "augment");
  Tensor x = image;
  bool touched = false;
  if (rng.bernoulli(cfg.crop_prob)) {
    const double l = rng.uniform(0.0, cfg.crop_fraction_max);
    const double r = rng.uniform(0.0, cfg.crop_fraction_max);
    const double t = rng.uniform(0.0, cfg.crop_fraction_max);
    const double b = rng.uniform(0.0, cfg.crop_fraction_max);
    x = crop_and_resize(x, l, r, t, b);
    touched = true;
  }
  if (rng.bernoulli(cfg.hflip_prob)) {
    x = hflip(x);
    touched = true;
  }
  if (rng.bernoulli(cfg.blur_prob)) {
    x = gaussian_blur(x, rng.uniform(cfg.blur_sigma.lo, cfg.blur_sigma.hi));
    touched = true;
  }
  if (rng.bernoulli(cfg.noise_prob)) {
    const double sigma = rng.uniform(cfg.noise_sigma.lo, cfg.noise_sigma.hi);
    for (double& v : x.data()) v += sigma * rng.normal();
    touched = true;
  }
  if (rng.bernoulli(cfg.contrast_prob)) {
    x = linear_contrast(x, rng.uniform(cfg.contrast_alpha.lo, cfg.contrast_alpha.hi));
    touched = true;
  }
  if (rng.bernoulli(cfg.multiply_prob)) {
    x = multiply(x, rng.uniform(cfg.multiply.lo, cfg.multiply.hi));
    touched = true;
  }
  if (touched)
    for (double& v : x.data()) v = std::clamp(v, 0.0, 1.0);
  return x;
}

std::uint64_t augmentation_seed(std::uint64_t seed, const std::string& video_id,
                                std::size_t frame_index, std::size_t epoch) {
  return derive_seed(seed, std::string_view("augment"), std::string_view(video_id),
                     static_cast<std::uint64_t>(frame_index), static_cast<std::uint64_t>(epoch));
}

}  // namespace fusedet
