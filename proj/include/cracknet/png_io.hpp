#pragma once
#include <cstdint>
#include <string>
#include <vector>

namespace cracknet {

// Row-major interleaved 8-bit image, 1 (gray) or 3 (rgb) channels.
struct Image8 {
    int width = 0, height = 0, channels = 0;
    std::vector<uint8_t> pixels;

    uint8_t at(int r, int c, int ch = 0) const {
        return pixels[((size_t)r * width + c) * channels + ch];
    }
};

// Single-channel 16-bit image (probability maps, label ids).
struct Image16 {
    int width = 0, height = 0;
    std::vector<uint16_t> pixels;
};

// PNG or JPEG, decided by file magic. Alpha is dropped, 16-bit samples are
// scaled to 8, palette images expanded.
Image8 read_image8(const std::string& path);

void write_png8(const std::string& path, const Image8& img);

Image16 read_png16(const std::string& path);
void write_png16(const std::string& path, const Image16& img);

}  // namespace cracknet
