#pragma once

#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "groupalign/common.hpp"

namespace groupalign {

struct RgbImage {
    int h = 0, w = 0;
    std::vector<std::uint8_t> rgb;  // h*w*3

    RgbImage() = default;
    RgbImage(int h_, int w_) : h(h_), w(w_), rgb(static_cast<std::size_t>(h_) * w_ * 3, 0) {}
    std::uint8_t* px(int y, int x) { return rgb.data() + (static_cast<std::size_t>(y) * w + x) * 3; }
    const std::uint8_t* px(int y, int x) const {
        return rgb.data() + (static_cast<std::size_t>(y) * w + x) * 3;
    }
};

struct IndexedImage {
    int h = 0, w = 0;
    std::vector<std::uint8_t> idx;  // h*w
    std::vector<std::array<std::uint8_t, 3>> palette;

    IndexedImage() = default;
    IndexedImage(int h_, int w_) : h(h_), w(w_), idx(static_cast<std::size_t>(h_) * w_, 0) {}
    std::uint8_t& at(int y, int x) { return idx[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return idx[static_cast<std::size_t>(y) * w + x]; }
};

namespace pngio {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline void write_chunk(std::vector<std::uint8_t>& out, const char type[4],
                        const std::vector<std::uint8_t>& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

inline std::vector<std::uint8_t> zlib_deflate(const std::vector<std::uint8_t>& raw) {
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> out(bound);
    if (compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw DataError("png: deflate failed");
    out.resize(bound);
    return out;
}

inline std::vector<std::uint8_t> zlib_inflate(const std::vector<std::uint8_t>& comp,
                                              std::size_t expected) {
    std::vector<std::uint8_t> out(expected);
    uLongf out_len = static_cast<uLongf>(expected);
    const int rc = uncompress(out.data(), &out_len, comp.data(), static_cast<uLong>(comp.size()));
    if (rc != Z_OK || out_len != expected) throw DataError("png: inflate failed");
    return out;
}

inline void save_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path);
}

inline std::vector<std::uint8_t> load_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("cannot read file: " + path);
    const std::streamsize n = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!in) throw DataError("read failed: " + path);
    return bytes;
}

inline const std::uint8_t kSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

inline std::vector<std::uint8_t> encode(int h, int w, int color_type,
                                        const std::vector<std::uint8_t>& pixels,
                                        const std::vector<std::array<std::uint8_t, 3>>* palette) {
    const int bpp = color_type == 2 ? 3 : 1;
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(h) * (static_cast<std::size_t>(w) * bpp + 1));
    for (int y = 0; y < h; ++y) {
        raw.push_back(0);  // filter: none
        const std::uint8_t* row = pixels.data() + static_cast<std::size_t>(y) * w * bpp;
        raw.insert(raw.end(), row, row + static_cast<std::size_t>(w) * bpp);
    }
    std::vector<std::uint8_t> out(kSig, kSig + 8);
    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(w));
    put_u32(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(static_cast<std::uint8_t>(color_type));
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(out, "IHDR", ihdr);
    if (color_type == 3) {
        std::vector<std::uint8_t> plte;
        for (const auto& c : *palette) {
            plte.push_back(c[0]);
            plte.push_back(c[1]);
            plte.push_back(c[2]);
        }
        write_chunk(out, "PLTE", plte);
    }
    write_chunk(out, "IDAT", zlib_deflate(raw));
    write_chunk(out, "IEND", {});
    return out;
}

struct Decoded {
    int h = 0, w = 0;
    int color_type = 0;
    std::vector<std::uint8_t> pixels;  // unfiltered, bpp per color type
    std::vector<std::array<std::uint8_t, 3>> palette;
};

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

inline Decoded decode(const std::string& path) {
    const std::vector<std::uint8_t> bytes = load_bytes(path);
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSig, 8) != 0)
        throw DataError("not a PNG file: " + path);
    Decoded d;
    int bit_depth = 0;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t len = (bytes[pos] << 24) | (bytes[pos + 1] << 16) |
                                  (bytes[pos + 2] << 8) | bytes[pos + 3];
        if (pos + 12 + len > bytes.size()) throw DataError("truncated PNG: " + path);
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const std::uint8_t* data = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            d.w = (data[0] << 24) | (data[1] << 16) | (data[2] << 8) | data[3];
            d.h = (data[4] << 24) | (data[5] << 16) | (data[6] << 8) | data[7];
            bit_depth = data[8];
            d.color_type = data[9];
            if (bit_depth != 8) throw DataError("unsupported PNG bit depth in " + path);
            if (d.color_type != 0 && d.color_type != 2 && d.color_type != 3)
                throw DataError("unsupported PNG color type in " + path);
            if (data[12] != 0) throw DataError("interlaced PNG not supported: " + path);
        } else if (std::memcmp(type, "PLTE", 4) == 0) {
            for (std::uint32_t i = 0; i + 2 < len; i += 3)
                d.palette.push_back({data[i], data[i + 1], data[i + 2]});
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (d.h <= 0 || d.w <= 0) throw DataError("PNG missing IHDR: " + path);
    const int bpp = d.color_type == 2 ? 3 : 1;
    const std::size_t stride = static_cast<std::size_t>(d.w) * bpp;
    const std::vector<std::uint8_t> raw =
        zlib_inflate(idat, static_cast<std::size_t>(d.h) * (stride + 1));
    d.pixels.assign(static_cast<std::size_t>(d.h) * stride, 0);
    for (int y = 0; y < d.h; ++y) {
        const std::uint8_t filter = raw[static_cast<std::size_t>(y) * (stride + 1)];
        const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * (stride + 1) + 1;
        std::uint8_t* dst = d.pixels.data() + static_cast<std::size_t>(y) * stride;
        const std::uint8_t* up = y > 0 ? dst - stride : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= static_cast<std::size_t>(bpp) ? dst[i - bpp] : 0;
            const int b = up ? up[i] : 0;
            const int c = (up && i >= static_cast<std::size_t>(bpp)) ? up[i - bpp] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw DataError("bad PNG filter in " + path);
            }
            dst[i] = static_cast<std::uint8_t>(v & 0xff);
        }
    }
    return d;
}

}  // namespace pngio

inline void write_png(const std::string& path, const RgbImage& img) {
    pngio::save_bytes(path, pngio::encode(img.h, img.w, 2, img.rgb, nullptr));
}

inline void write_png(const std::string& path, const IndexedImage& img) {
    if (img.palette.empty()) throw DataError("indexed PNG needs a palette");
    pngio::save_bytes(path, pngio::encode(img.h, img.w, 3, img.idx, &img.palette));
}

inline RgbImage read_png_rgb(const std::string& path) {
    pngio::Decoded d = pngio::decode(path);
    RgbImage img(d.h, d.w);
    if (d.color_type == 2) {
        img.rgb = d.pixels;
    } else if (d.color_type == 0) {
        for (std::size_t i = 0; i < d.pixels.size(); ++i) {
            img.rgb[i * 3] = img.rgb[i * 3 + 1] = img.rgb[i * 3 + 2] = d.pixels[i];
        }
    } else {
        for (std::size_t i = 0; i < d.pixels.size(); ++i) {
            if (d.pixels[i] >= d.palette.size())
                throw DataError("palette index out of range in " + path);
            const auto& c = d.palette[d.pixels[i]];
            img.rgb[i * 3] = c[0];
            img.rgb[i * 3 + 1] = c[1];
            img.rgb[i * 3 + 2] = c[2];
        }
    }
    return img;
}

inline IndexedImage read_png_indexed(const std::string& path) {
    pngio::Decoded d = pngio::decode(path);
    IndexedImage img(d.h, d.w);
    if (d.color_type == 3) {
        img.idx = d.pixels;
        img.palette = d.palette;
    } else if (d.color_type == 0) {
        // grayscale label maps: raw values are the indices
        img.idx = d.pixels;
    } else {
        throw DataError("expected an indexed or grayscale label image: " + path);
    }
    return img;
}

}  // namespace groupalign
