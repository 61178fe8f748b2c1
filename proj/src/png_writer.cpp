#include "bodygps/png_writer.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "bodygps/errors.hpp"

namespace bodygps {
namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), length);
}

void no_flush(png_structp) {}

[[noreturn]] void raise_png_error(png_structp, png_const_charp message) { throw Error(std::string("png: ") + message); }

}  // namespace

std::string encode_png_gray8(std::span<const std::uint8_t> pixels, int width, int height) {
    if (width <= 0 || height <= 0) throw ShapeError("png dimensions must be positive");
    if (pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
        throw ShapeError("png pixel buffer does not match dimensions");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, raise_png_error, nullptr);
    if (!png) throw Error("png: cannot create write struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error("png: cannot create info struct");
    }

    std::string out;
    try {
        png_set_write_fn(png, &out, append_bytes, no_flush);
        png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                     PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_set_compression_level(png, 6);
        png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_NONE);
        png_write_info(png, info);
        for (int row = 0; row < height; ++row)
            png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(row) * width));
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
    return out;
}

Slice8 render_slice(const Volume& v, Axis axis, std::int64_t index, const IntensityWindow& window) {
    const auto& d = v.geometry().dims;
    const int a = static_cast<int>(axis);
    const int u = a == 0 ? 1 : 0;
    const int w = a == 2 ? 1 : 2;
    if (index < 0 || index >= d[a])
        throw std::out_of_range("slice index " + std::to_string(index) + " outside [0, " + std::to_string(d[a]) + ")");

    Slice8 s;
    s.width = static_cast<int>(d[u]);
    s.height = static_cast<int>(d[w]);
    s.pixels.resize(static_cast<std::size_t>(s.width) * s.height);
    const double span = window.hi - window.lo;
    std::array<std::int64_t, 3> ijk{};
    ijk[a] = index;
    for (int row = 0; row < s.height; ++row) {
        ijk[w] = row;
        for (int col = 0; col < s.width; ++col) {
            ijk[u] = col;
            const double t = std::clamp((static_cast<double>(v.at(ijk[0], ijk[1], ijk[2])) - window.lo) / span, 0.0, 1.0);
            s.pixels[static_cast<std::size_t>(row) * s.width + col] = static_cast<std::uint8_t>(std::lround(255.0 * t));
        }
    }
    return s;
}

}  // namespace bodygps
