#include "gblab/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "gblab/errors.hpp"

namespace gblab {
namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

uint32_t get_u32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& payload) {
  put_u32(out, uint32_t(payload.size()));
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + start, uInt(out.size() - start));
  put_u32(out, crc);
}

constexpr uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

}  // namespace

void write_png(const std::string& path, const ImageU8& image) {
  if (image.channels != 1 && image.channels != 3)
    throw InvalidArgument("png writer supports 1 or 3 channels");
  if (image.width <= 0 || image.height <= 0 ||
      int64_t(image.pixels.size()) != image.width * image.height * image.channels)
    throw InvalidArgument("png writer: pixel buffer does not match dimensions");

  std::vector<uint8_t> ihdr;
  put_u32(ihdr, uint32_t(image.width));
  put_u32(ihdr, uint32_t(image.height));
  ihdr.push_back(8);                                  // bit depth
  ihdr.push_back(image.channels == 1 ? 0 : 2);        // colour type
  ihdr.push_back(0);                                  // compression
  ihdr.push_back(0);                                  // filter method
  ihdr.push_back(0);                                  // no interlace

  const size_t stride = size_t(image.width * image.channels);
  std::vector<uint8_t> raw;
  raw.reserve((stride + 1) * size_t(image.height));
  for (int64_t y = 0; y < image.height; ++y) {
    raw.push_back(0);  // filter type: none
    raw.insert(raw.end(), image.pixels.begin() + int64_t(y * int64_t(stride)),
               image.pixels.begin() + int64_t(y * int64_t(stride) + int64_t(stride)));
  }

  uLongf bound = compressBound(uLong(raw.size()));
  std::vector<uint8_t> idat(bound);
  if (compress2(idat.data(), &bound, raw.data(), uLong(raw.size()), 6) != Z_OK)
    throw IoError("png deflate failed for " + path);
  idat.resize(bound);

  std::vector<uint8_t> file;
  file.insert(file.end(), kSignature, kSignature + 8);
  append_chunk(file, "IHDR", ihdr);
  append_chunk(file, "IDAT", idat);
  append_chunk(file, "IEND", {});

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(file.data()), std::streamsize(file.size()));
  if (!out) throw IoError("short write: " + path);
}

ImageU8 read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<uint8_t> file((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
  if (file.size() < 8 || std::memcmp(file.data(), kSignature, 8) != 0)
    throw IoError("not a png file: " + path);

  ImageU8 image;
  std::vector<uint8_t> idat;
  bool saw_ihdr = false, saw_iend = false;
  size_t pos = 8;
  while (pos + 12 <= file.size() && !saw_iend) {
    const uint32_t len = get_u32(&file[pos]);
    if (pos + 12 + len > file.size()) throw IoError("truncated chunk in " + path);
    const char* type = reinterpret_cast<const char*>(&file[pos + 4]);
    const uint8_t* payload = &file[pos + 8];
    const uint32_t stored_crc = get_u32(&file[pos + 8 + len]);
    uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, &file[pos + 4], uInt(4 + len));
    if (crc != stored_crc) throw IoError("chunk crc mismatch in " + path);

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError("bad IHDR in " + path);
      image.width = get_u32(payload);
      image.height = get_u32(payload + 4);
      const uint8_t depth = payload[8], colour = payload[9], interlace = payload[12];
      if (depth != 8 || (colour != 0 && colour != 2) || interlace != 0)
        throw IoError("unsupported png format (need 8-bit gray or rgb): " + path);
      image.channels = colour == 0 ? 1 : 3;
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend || image.width <= 0 || image.height <= 0)
    throw IoError("malformed png: " + path);

  const size_t stride = size_t(image.width * image.channels);
  std::vector<uint8_t> raw((stride + 1) * size_t(image.height));
  uLongf raw_len = uLongf(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw IoError("png inflate failed for " + path);

  const int64_t bpp = image.channels;  // bytes per pixel at depth 8
  image.pixels.assign(stride * size_t(image.height), 0);
  for (int64_t y = 0; y < image.height; ++y) {
    const uint8_t filter = raw[size_t(y) * (stride + 1)];
    const uint8_t* src = &raw[size_t(y) * (stride + 1) + 1];
    uint8_t* dst = &image.pixels[size_t(y) * stride];
    const uint8_t* up = y > 0 ? &image.pixels[size_t(y - 1) * stride] : nullptr;
    for (int64_t i = 0; i < int64_t(stride); ++i) {
      const int left = i >= bpp ? dst[i - bpp] : 0;
      const int above = up ? up[i] : 0;
      const int corner = (up && i >= bpp) ? up[i - bpp] : 0;
      int val = src[i];
      switch (filter) {
        case 0: break;
        case 1: val += left; break;
        case 2: val += above; break;
        case 3: val += (left + above) / 2; break;
        case 4: val += paeth(left, above, corner); break;
        default: throw IoError("unknown png filter in " + path);
      }
      dst[i] = uint8_t(val & 0xff);
    }
  }
  return image;
}

}  // namespace gblab
