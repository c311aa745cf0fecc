#include "kilnwatch/raster.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>

#include <jpeglib.h>
#include <png.h>

#include "kilnwatch/errors.hpp"
#include "kilnwatch/tile_ingest.hpp"

namespace kw {

Raster Raster::crop(int top, int left, int h, int w) const {
    if (top < 0 || left < 0 || h < 0 || w < 0 || top + h > height || left + w > width)
        throw ValidationError("crop window outside raster");
    Raster out(w, h);
    const std::size_t row_bytes = static_cast<std::size_t>(w) * kChannels;
    for (int r = 0; r < h; ++r) std::memcpy(out.px(r, 0), px(top + r, left), row_bytes);
    return out;
}

void Raster::paste(const Raster& src, int top, int left) {
    if (top < 0 || left < 0 || top + src.height > height || left + src.width > width)
        throw ValidationError("paste window outside raster");
    const std::size_t row_bytes = static_cast<std::size_t>(src.width) * kChannels;
    for (int r = 0; r < src.height; ++r) std::memcpy(px(top + r, left), src.px(r, 0), row_bytes);
}

ImageFormat sniff_format(std::span<const std::uint8_t> bytes) noexcept {
    static constexpr std::uint8_t kPng[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPng, 8) == 0) return ImageFormat::png;
    if (bytes.size() >= 3 && bytes[0] == 0xff && bytes[1] == 0xd8 && bytes[2] == 0xff) return ImageFormat::jpeg;
    return ImageFormat::unknown;
}

namespace {

Raster decode_png(std::span<const std::uint8_t> bytes) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw ingest::MalformedImageError(std::string("png: ") + image.message);
    image.format = PNG_FORMAT_RGB;
    Raster out(static_cast<int>(image.width), static_cast<int>(image.height));
    if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw ingest::MalformedImageError("png: " + msg);
    }
    return out;
}

struct JpegError {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegError*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

// libjpeg reports truncated or corrupt data as warnings (level -1) and keeps going; a tile
// with invented pixels is worse than a failed fetch, so those abort too.
void jpeg_emit_message(j_common_ptr cinfo, int msg_level) {
    if (msg_level < 0) jpeg_error_exit(cinfo);
}

Raster decode_jpeg(std::span<const std::uint8_t> bytes) {
    jpeg_decompress_struct cinfo;
    JpegError err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_exit;
    err.mgr.emit_message = jpeg_emit_message;
    // Raster is constructed outside the setjmp scope so no destructor is skipped by longjmp.
    Raster out;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw ingest::MalformedImageError(std::string("jpeg: ") + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    out.width = static_cast<int>(cinfo.output_width);
    out.height = static_cast<int>(cinfo.output_height);
    out.data.assign(static_cast<std::size_t>(out.width) * out.height * Raster::kChannels, 0);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.px(static_cast<int>(cinfo.output_scanline), 0);
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

}  // namespace

Raster decode_image(std::span<const std::uint8_t> bytes) {
    switch (sniff_format(bytes)) {
        case ImageFormat::png: return decode_png(bytes);
        case ImageFormat::jpeg: return decode_jpeg(bytes);
        case ImageFormat::unknown: break;
    }
    throw ingest::MalformedImageError("payload is neither PNG nor JPEG");
}

std::vector<std::uint8_t> encode_png(const Raster& raster) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(raster.width);
    image.height = static_cast<png_uint_32>(raster.height);
    image.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, raster.data.data(), 0, nullptr))
        throw IoError(std::string("png encode: ") + image.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, raster.data.data(), 0, nullptr))
        throw IoError(std::string("png encode: ") + image.message);
    out.resize(size);
    return out;
}

}  // namespace kw
