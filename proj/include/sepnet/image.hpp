#pragma once

#include <zlib.h>

#include <cctype>
#include <fstream>
#include <sstream>

#include "sepnet/tensor.hpp"

namespace sepnet {

// Single-channel image, pixels in [0,1], row-major.
struct ImageBuffer {
  int64_t width = 0, height = 0;
  std::vector<float> pixels;

  ImageBuffer() = default;
  ImageBuffer(int64_t w, int64_t h, float fill = 0.f)
      : width(w), height(h), pixels(static_cast<size_t>(w * h), fill) {
    if (w < 1 || h < 1) throw ConfigError("image dimensions must be positive");
  }
  float& at(int64_t y, int64_t x) { return pixels[static_cast<size_t>(y * width + x)]; }
  float at(int64_t y, int64_t x) const { return pixels[static_cast<size_t>(y * width + x)]; }
};

// ---- PGM (binary P5, 8-bit) ----

inline ImageBuffer read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  auto next_token = [&]() {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
      if (c == '#') {
        while ((c = in.get()) != EOF && c != '\n') {}
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
    return tok;
  };
  if (next_token() != "P5") throw IoError("not a binary PGM (P5) file: " + path);
  const int64_t w = std::stoll(next_token());
  const int64_t h = std::stoll(next_token());
  const int64_t maxval = std::stoll(next_token());
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
    throw IoError("unsupported PGM header in " + path);
  ImageBuffer img(w, h);
  std::vector<uint8_t> raw(static_cast<size_t>(w * h));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw IoError("truncated PGM payload in " + path);
  for (size_t i = 0; i < raw.size(); ++i)
    img.pixels[i] = static_cast<float>(raw[i]) / static_cast<float>(maxval);
  return img;
}

inline void write_pgm(const std::string& path, const ImageBuffer& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image: " + path);
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  for (float v : img.pixels) {
    const int q = static_cast<int>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
    out.put(static_cast<char>(q));
  }
  if (!out) throw IoError("write failed: " + path);
}

// ---- PNG (8-bit grayscale or RGB, non-interlaced) ----

namespace pngdetail {

inline uint32_t be32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

inline uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
  if (pb <= pc) return static_cast<uint8_t>(b);
  return static_cast<uint8_t>(c);
}

}  // namespace pngdetail

inline ImageBuffer read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() < 8 || !std::equal(sig, sig + 8, bytes.begin()))
    throw IoError("not a PNG file: " + path);
  size_t pos = 8;
  int64_t w = 0, h = 0;
  int color_type = -1, channels = 0;
  std::vector<uint8_t> idat;
  while (pos + 8 <= bytes.size()) {
    const uint32_t len = pngdetail::be32(&bytes[pos]);
    const std::string type(reinterpret_cast<const char*>(&bytes[pos + 4]), 4);
    pos += 8;
    if (pos + len + 4 > bytes.size()) throw IoError("truncated PNG chunk in " + path);
    const uint8_t* data = &bytes[pos];
    if (type == "IHDR") {
      w = pngdetail::be32(data);
      h = pngdetail::be32(data + 4);
      const int bit_depth = data[8];
      color_type = data[9];
      const int interlace = data[12];
      if (bit_depth != 8 || (color_type != 0 && color_type != 2) || interlace != 0)
        throw IoError("unsupported PNG (need 8-bit gray or RGB, non-interlaced): " + path);
      channels = color_type == 0 ? 1 : 3;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    pos += len + 4;  // skip chunk CRC
  }
  if (w < 1 || h < 1 || idat.empty()) throw IoError("PNG missing IHDR/IDAT: " + path);

  const size_t stride = static_cast<size_t>(w) * static_cast<size_t>(channels);
  std::vector<uint8_t> raw(static_cast<size_t>(h) * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw IoError("PNG inflate failed: " + path);

  // Undo per-row filters in place.
  const size_t bpp = static_cast<size_t>(channels);
  std::vector<uint8_t> prev(stride, 0);
  std::vector<uint8_t> cur(stride);
  ImageBuffer img(w, h);
  for (int64_t y = 0; y < h; ++y) {
    const uint8_t* row = &raw[static_cast<size_t>(y) * (stride + 1)];
    const uint8_t filter = row[0];
    for (size_t x = 0; x < stride; ++x) {
      const int rx = row[1 + x];
      const int a = x >= bpp ? cur[x - bpp] : 0;
      const int b = prev[x];
      const int c = x >= bpp ? prev[x - bpp] : 0;
      int v;
      switch (filter) {
        case 0: v = rx; break;
        case 1: v = rx + a; break;
        case 2: v = rx + b; break;
        case 3: v = rx + (a + b) / 2; break;
        case 4: v = rx + pngdetail::paeth(a, b, c); break;
        default: throw IoError("bad PNG filter type in " + path);
      }
      cur[x] = static_cast<uint8_t>(v & 0xff);
    }
    for (int64_t x = 0; x < w; ++x) {
      float g;
      if (channels == 1) {
        g = cur[static_cast<size_t>(x)] / 255.f;
      } else {
        const uint8_t* px = &cur[static_cast<size_t>(x) * 3];
        g = (0.299f * px[0] + 0.587f * px[1] + 0.114f * px[2]) / 255.f;
      }
      img.at(y, x) = std::clamp(g, 0.f, 1.f);
    }
    std::swap(prev, cur);
  }
  return img;
}

inline ImageBuffer read_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open image: " + path);
  char head[2] = {0, 0};
  probe.read(head, 2);
  probe.close();
  if (head[0] == 'P' && head[1] == '5') return read_pgm(path);
  if (static_cast<uint8_t>(head[0]) == 0x89 && head[1] == 'P') return read_png(path);
  throw IoError("unrecognized image format (expect PGM P5 or PNG): " + path);
}

// ---- geometric transforms ----

inline float sample_bilinear(const ImageBuffer& img, double y, double x) {
  // out-of-bounds reads as 0
  const int64_t x0 = static_cast<int64_t>(std::floor(x));
  const int64_t y0 = static_cast<int64_t>(std::floor(y));
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  auto px = [&](int64_t yy, int64_t xx) -> double {
    if (yy < 0 || yy >= img.height || xx < 0 || xx >= img.width) return 0.0;
    return img.at(yy, xx);
  };
  const double v = px(y0, x0) * (1 - fx) * (1 - fy) + px(y0, x0 + 1) * fx * (1 - fy) +
                   px(y0 + 1, x0) * (1 - fx) * fy + px(y0 + 1, x0 + 1) * fx * fy;
  return static_cast<float>(v);
}

inline ImageBuffer hflip(const ImageBuffer& img) {
  ImageBuffer out(img.width, img.height);
  for (int64_t y = 0; y < img.height; ++y)
    for (int64_t x = 0; x < img.width; ++x) out.at(y, x) = img.at(y, img.width - 1 - x);
  return out;
}

// Counterclockwise rotation about the image center, bilinear resampling,
// zero fill outside the source.
inline ImageBuffer rotate_deg(const ImageBuffer& img, double degrees) {
  const double rad = degrees * std::acos(-1.0) / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cx = (static_cast<double>(img.width) - 1) / 2.0;
  const double cy = (static_cast<double>(img.height) - 1) / 2.0;
  ImageBuffer out(img.width, img.height);
  for (int64_t y = 0; y < img.height; ++y)
    for (int64_t x = 0; x < img.width; ++x) {
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      // inverse map: rotate output coords by -angle (y axis points down)
      const double sx = cx + cs * dx - sn * dy;
      const double sy = cy + sn * dx + cs * dy;
      out.at(y, x) = sample_bilinear(img, sy, sx);
    }
  return out;
}

// Smooth random displacement: a seeded coarse grid of offsets, bilinearly
// upsampled to full resolution. Amplitude is in pixels.
inline ImageBuffer distort(const ImageBuffer& img, double amplitude_px, uint64_t seed) {
  constexpr int64_t grid = 4;
  std::vector<double> gx(static_cast<size_t>(grid * grid)), gy(gx.size());
  Rng rng(seed);
  for (size_t i = 0; i < gx.size(); ++i) {
    gx[i] = rng.uniform(-amplitude_px, amplitude_px);
    gy[i] = rng.uniform(-amplitude_px, amplitude_px);
  }
  auto field = [&](const std::vector<double>& g, double y, double x) {
    const double u = x / static_cast<double>(img.width - 1 > 0 ? img.width - 1 : 1) *
                     static_cast<double>(grid - 1);
    const double v = y / static_cast<double>(img.height - 1 > 0 ? img.height - 1 : 1) *
                     static_cast<double>(grid - 1);
    const int64_t u0 = std::min<int64_t>(static_cast<int64_t>(u), grid - 2);
    const int64_t v0 = std::min<int64_t>(static_cast<int64_t>(v), grid - 2);
    const double fu = u - static_cast<double>(u0), fv = v - static_cast<double>(v0);
    auto at = [&](int64_t r, int64_t c) { return g[static_cast<size_t>(r * grid + c)]; };
    return at(v0, u0) * (1 - fu) * (1 - fv) + at(v0, u0 + 1) * fu * (1 - fv) +
           at(v0 + 1, u0) * (1 - fu) * fv + at(v0 + 1, u0 + 1) * fu * fv;
  };
  ImageBuffer out(img.width, img.height);
  for (int64_t y = 0; y < img.height; ++y)
    for (int64_t x = 0; x < img.width; ++x)
      out.at(y, x) = sample_bilinear(img, static_cast<double>(y) + field(gy, y, x),
                                     static_cast<double>(x) + field(gx, y, x));
  return out;
}

// Bilinear resize, half-pixel centers (align_corners = false).
inline ImageBuffer resize_bilinear(const ImageBuffer& img, int64_t out_h, int64_t out_w) {
  if (out_h < 1 || out_w < 1) throw ConfigError("resize target must be >= 1x1");
  if (out_h == img.height && out_w == img.width) return img;
  ImageBuffer out(out_w, out_h);
  const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
  for (int64_t y = 0; y < out_h; ++y)
    for (int64_t x = 0; x < out_w; ++x) {
      double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
      double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
      src_y = std::clamp(src_y, 0.0, static_cast<double>(img.height - 1));
      src_x = std::clamp(src_x, 0.0, static_cast<double>(img.width - 1));
      out.at(y, x) = sample_bilinear(img, src_y, src_x);
    }
  return out;
}

template <typename T>
Tensor<T> image_to_tensor(const ImageBuffer& img) {
  Tensor<T> t({1, img.height, img.width});
  for (size_t i = 0; i < img.pixels.size(); ++i)
    t.data[i] = static_cast<T>(std::clamp(img.pixels[i], 0.f, 1.f));
  return t;
}

}  // namespace sepnet
