#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace kw {

// Interleaved 8-bit RGB raster, row-major.
struct Raster {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    static constexpr int kChannels = 3;

    Raster() = default;
    Raster(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * kChannels, 0) {}

    std::uint8_t* px(int row, int col) { return data.data() + (static_cast<std::size_t>(row) * width + col) * kChannels; }
    const std::uint8_t* px(int row, int col) const {
        return data.data() + (static_cast<std::size_t>(row) * width + col) * kChannels;
    }

    // Copy of the window [top, top+h) x [left, left+w).
    Raster crop(int top, int left, int h, int w) const;
    // Writes `src` with its top-left corner at (top, left).
    void paste(const Raster& src, int top, int left);

    friend bool operator==(const Raster&, const Raster&) = default;
};

enum class ImageFormat { png, jpeg, unknown };

ImageFormat sniff_format(std::span<const std::uint8_t> bytes) noexcept;

// Decodes PNG or JPEG to RGB8. Throws MalformedImageError on anything else.
Raster decode_image(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Raster& raster);

}  // namespace kw
