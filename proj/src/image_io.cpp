#include "fspnet/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fspnet/errors.hpp"

namespace fspnet {

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[5],
                  const std::vector<std::uint8_t>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc =
      crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

constexpr std::uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

std::uint8_t paeth(std::uint8_t a, std::uint8_t b, std::uint8_t c) {
  const int p = int(a) + int(b) - int(c);
  const int pa = std::abs(p - int(a));
  const int pb = std::abs(p - int(b));
  const int pc = std::abs(p - int(c));
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png(const std::string& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw DataError("write_png: unsupported channel count " +
                    std::to_string(img.channels));
  }
  if (img.px.size() != img.h * img.w * img.channels) {
    throw DataError("write_png: pixel buffer does not match dimensions");
  }
  const std::size_t stride = img.w * img.channels;
  std::vector<std::uint8_t> raw;
  raw.reserve(img.h * (stride + 1));
  for (std::size_t y = 0; y < img.h; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), img.px.begin() + y * stride,
               img.px.begin() + (y + 1) * stride);
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw DataError("write_png: compression failed for " + path);
  }
  comp.resize(comp_len);

  std::vector<std::uint8_t> file(kPngSig, kPngSig + 8);
  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(img.w));
  put_be32(ihdr, static_cast<std::uint32_t>(img.h));
  ihdr.push_back(8);                                  // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);          // gray / rgb
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(file, "IHDR", ihdr);
  append_chunk(file, "IDAT", comp);
  append_chunk(file, "IEND", {});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_png: cannot open " + path);
  out.write(reinterpret_cast<const char*>(file.data()),
            static_cast<std::streamsize>(file.size()));
}

Image8 read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_png: cannot open " + path);
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (file.size() < 8 || std::memcmp(file.data(), kPngSig, 8) != 0) {
    throw DataError("read_png: not a PNG file: " + path);
  }
  Image8 img;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  std::size_t bpp = 0;
  while (pos + 8 <= file.size()) {
    const std::uint32_t len = get_be32(file.data() + pos);
    const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
    const std::uint8_t* data = file.data() + pos + 8;
    if (pos + 12 + len > file.size()) {
      throw DataError("read_png: truncated chunk in " + path);
    }
    if (std::memcmp(type, "IHDR", 4) == 0) {
      img.w = get_be32(data);
      img.h = get_be32(data + 4);
      const std::uint8_t depth = data[8], color = data[9], interlace = data[12];
      if (depth != 8 || (color != 0 && color != 2) || interlace != 0) {
        throw DataError("read_png: only 8-bit gray/RGB non-interlaced PNGs "
                        "are supported: " +
                        path);
      }
      img.channels = color == 0 ? 1 : 3;
      bpp = img.channels;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (img.w == 0 || img.h == 0 || idat.empty()) {
    throw DataError("read_png: missing image data in " + path);
  }
  const std::size_t stride = img.w * bpp;
  std::vector<std::uint8_t> raw(img.h * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(),
                 static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size()) {
    throw DataError("read_png: corrupt image data in " + path);
  }
  img.px.assign(img.h * stride, 0);
  std::vector<std::uint8_t> prev(stride, 0);
  for (std::size_t y = 0; y < img.h; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* src = raw.data() + y * (stride + 1) + 1;
    std::uint8_t* dst = img.px.data() + y * stride;
    for (std::size_t x = 0; x < stride; ++x) {
      const std::uint8_t left = x >= bpp ? dst[x - bpp] : 0;
      const std::uint8_t up = prev[x];
      const std::uint8_t ul = x >= bpp ? prev[x - bpp] : 0;
      std::uint8_t v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v = static_cast<std::uint8_t>(v + left); break;
        case 2: v = static_cast<std::uint8_t>(v + up); break;
        case 3: v = static_cast<std::uint8_t>(v + (int(left) + int(up)) / 2); break;
        case 4: v = static_cast<std::uint8_t>(v + paeth(left, up, ul)); break;
        default:
          throw DataError("read_png: bad filter type in " + path);
      }
      dst[x] = v;
    }
    std::memcpy(prev.data(), dst, stride);
  }
  return img;
}

void write_pgm(const std::string& path, const Image8& img) {
  if (img.channels != 1) throw DataError("write_pgm: grayscale only");
  std::ofstream out(path);
  if (!out) throw DataError("write_pgm: cannot open " + path);
  out << "P2\n" << img.w << ' ' << img.h << "\n255\n";
  for (std::size_t y = 0; y < img.h; ++y) {
    for (std::size_t x = 0; x < img.w; ++x) {
      if (x) out << ' ';
      out << static_cast<int>(img.px[y * img.w + x]);
    }
    out << '\n';
  }
}

Image8 read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_pgm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P2" && magic != "P5") {
    throw DataError("read_pgm: not a PGM file: " + path);
  }
  auto next_token = [&in]() {
    std::string tok;
    for (;;) {
      in >> tok;
      if (!in) throw DataError("read_pgm: truncated header");
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
  };
  Image8 img;
  img.w = std::stoul(next_token());
  img.h = std::stoul(next_token());
  const unsigned maxval = static_cast<unsigned>(std::stoul(next_token()));
  if (maxval == 0 || maxval > 255) {
    throw DataError("read_pgm: unsupported max value in " + path);
  }
  img.channels = 1;
  img.px.resize(img.h * img.w);
  if (magic == "P5") {
    in.get();  // single whitespace after maxval
    in.read(reinterpret_cast<char*>(img.px.data()),
            static_cast<std::streamsize>(img.px.size()));
    if (!in) throw DataError("read_pgm: truncated pixel data in " + path);
  } else {
    for (auto& p : img.px) {
      unsigned v;
      in >> v;
      if (!in) throw DataError("read_pgm: truncated pixel data in " + path);
      p = static_cast<std::uint8_t>(v);
    }
  }
  return img;
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

ScoreMap to_score_map(const Image8& img) {
  if (img.channels != 1) throw DataError("score maps must be grayscale");
  ScoreMap m{img.h, img.w, {}};
  m.v.resize(img.px.size());
  for (std::size_t i = 0; i < img.px.size(); ++i)
    m.v[i] = static_cast<double>(img.px[i]) / 255.0;
  return m;
}

Image8 from_score_map(const ScoreMap& map) {
  Image8 img{map.h, map.w, 1, {}};
  img.px.resize(map.v.size());
  for (std::size_t i = 0; i < map.v.size(); ++i) {
    const double c = std::clamp(map.v[i], 0.0, 1.0);
    img.px[i] = static_cast<std::uint8_t>(std::lround(c * 255.0));
  }
  return img;
}

BinaryMask to_binary_mask(const Image8& img) {
  if (img.channels != 1) throw DataError("masks must be grayscale");
  BinaryMask m{img.h, img.w, {}};
  m.v.resize(img.px.size());
  for (std::size_t i = 0; i < img.px.size(); ++i)
    m.v[i] = img.px[i] >= 128 ? 1 : 0;  // 0.5 binarization on load
  return m;
}

Image8 from_binary_mask(const BinaryMask& mask) {
  Image8 img{mask.h, mask.w, 1, {}};
  img.px.resize(mask.v.size());
  for (std::size_t i = 0; i < mask.v.size(); ++i)
    img.px[i] = mask.v[i] ? 255 : 0;
  return img;
}

namespace {

Image8 read_any_gray(const std::string& path) {
  Image8 img = has_suffix(path, ".pgm") ? read_pgm(path) : read_png(path);
  if (img.channels == 3) {
    throw DataError("expected a grayscale image: " + path);
  }
  return img;
}

}  // namespace

ScoreMap load_score(const std::string& path) {
  return to_score_map(read_any_gray(path));
}

void save_score(const std::string& path, const ScoreMap& map) {
  if (has_suffix(path, ".pgm"))
    write_pgm(path, from_score_map(map));
  else
    write_png(path, from_score_map(map));
}

BinaryMask load_mask(const std::string& path) {
  return to_binary_mask(read_any_gray(path));
}

void save_mask(const std::string& path, const BinaryMask& mask) {
  if (has_suffix(path, ".pgm"))
    write_pgm(path, from_binary_mask(mask));
  else
    write_png(path, from_binary_mask(mask));
}

Tensor load_image_rgb(const std::string& path) {
  Image8 img = has_suffix(path, ".pgm") ? read_pgm(path) : read_png(path);
  std::vector<double> data(3 * img.h * img.w);
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t i = 0; i < img.h * img.w; ++i) {
      const std::uint8_t px =
          img.channels == 3 ? img.px[i * 3 + ch] : img.px[i];
      data[ch * img.h * img.w + i] = static_cast<double>(px) / 255.0;
    }
  return Tensor::from_data({3, img.h, img.w}, std::move(data));
}

void save_image_rgb(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DataError("save_image_rgb: expected 3 x H x W, got " +
                    shape_str(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  Image8 img{h, w, 3, {}};
  img.px.resize(3 * h * w);
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double c = std::clamp(image.values()[ch * h * w + i], 0.0, 1.0);
      img.px[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(c * 255.0));
    }
  write_png(path, img);
}

}  // namespace fspnet
