#include "fusedet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace fusedet {

namespace {

struct Cursor {
  const std::string& s;
  std::size_t pos = 0;

  void skip_space_and_comments() {
    while (pos < s.size()) {
      if (std::isspace(static_cast<unsigned char>(s[pos]))) {
        ++pos;
      } else if (s[pos] == '#') {
        while (pos < s.size() && s[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }

  bool read_uint(std::size_t& out) {
    skip_space_and_comments();
    std::size_t start = pos;
    out = 0;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
      out = out * 10 + static_cast<std::size_t>(s[pos] - '0');
      if (out > (1u << 24)) return false;
      ++pos;
    }
    return pos > start;
  }
};

}  // namespace

Tensor decode_ppm(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
    throw FormatError(origin + ": not a binary PPM (missing P6 magic)");
  Cursor cur{bytes, 2};
  std::size_t width = 0, height = 0, maxval = 0;
  if (!cur.read_uint(width) || !cur.read_uint(height) || !cur.read_uint(maxval))
    throw FormatError(origin + ": malformed PPM header");
  if (width == 0 || height == 0)
    throw FormatError(origin + ": PPM dimensions must be positive");
  if (maxval != 255) throw FormatError(origin + ": only 8-bit PPM (maxval 255) is supported");
  if (cur.pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[cur.pos])))
    throw FormatError(origin + ": truncated PPM header");
  ++cur.pos;
  const std::size_t need = width * height * 3;
  const std::size_t have = bytes.size() - cur.pos;
  if (have < need)
    throw FormatError(origin + ": truncated payload, " + std::to_string(have) + " of " +
                      std::to_string(need) + " bytes");
  if (have > need)
    throw FormatError(origin + ": payload of " + std::to_string(have) +
                      " bytes does not match dimensions " + std::to_string(width) + "x" +
                      std::to_string(height));
  Tensor img({3, height, width});
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + cur.pos);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = *p++ / 255.0;
  return img;
}

std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("encode_ppm: expected [3,H,W], got " + shape_string(image.shape()));
  const std::size_t H = image.dim(1), W = image.dim(2);
  std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  out.reserve(out.size() + H * W * 3);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::floor(image.at(c, y, x) * 255.0 + 0.5);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(v, 0.0, 255.0))));
      }
  return out;
}

Tensor load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_ppm(bytes, path.string());
}

void save_image(const Tensor& image, const std::filesystem::path& path) {
  const std::string bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) throw ShapeError("resize_bilinear: expected [C,H,W]");
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (H == height && W == width) return image;
  Tensor out({C, height, width});
  auto axis = [](std::size_t o, std::size_t out_len, std::size_t in_len) {
    double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in_len) /
                   static_cast<double>(out_len) -
               0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in_len - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min(i0 + 1, in_len - 1);
    return std::tuple{i0, i1, s - static_cast<double>(i0)};
  };
  for (std::size_t oy = 0; oy < height; ++oy) {
    const auto [y0, y1, fy] = axis(oy, height, H);
    for (std::size_t ox = 0; ox < width; ++ox) {
      const auto [x0, x1, fx] = axis(ox, width, W);
      for (std::size_t c = 0; c < C; ++c) {
        const double top = image.at(c, y0, x0) * (1 - fx) + image.at(c, y0, x1) * fx;
        const double bot = image.at(c, y1, x0) * (1 - fx) + image.at(c, y1, x1) * fx;
        out.at(c, oy, ox) = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

}  // namespace fusedet
