#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "defleye/error.hpp"

namespace defleye {

/// Real-valued raster, row-major, values nominally in [0, 1].
struct Image {
    int width = 0, height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

    double& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
    size_t size() const { return data.size(); }
    bool same_size(const Image& o) const { return width == o.width && height == o.height; }
};

/// 16-bit big-endian PGM (P5, maxval 65535); values clamped to [0, 1].
void write_pgm16(const std::string& path, const Image& image);
Image read_pgm16(const std::string& path);

/// 8-bit grayscale PNG for quick inspection (zlib-compressed).
void write_png8(const std::string& path, const Image& image);

/// Multi-channel binary raster container with a fixed 64-byte header:
/// magic[4] | u32 width | u32 height | u32 channel_count | 12 x char[4] tags,
/// followed by channel-major float64 little-endian planes.
struct ChannelStack {
    std::string magic;  // 4 chars, e.g. "DGT1"
    int width = 0, height = 0;
    std::vector<std::string> tags;             // 4 chars each
    std::vector<std::vector<double>> planes;   // one per tag, width*height

    void add(const std::string& tag, std::vector<double> plane);
    const std::vector<double>& plane(const std::string& tag) const;
    bool has(const std::string& tag) const;
};

void write_channels(const std::string& path, const ChannelStack& stack);
ChannelStack read_channels(const std::string& path, const std::string& expected_magic = "");

}  // namespace defleye
