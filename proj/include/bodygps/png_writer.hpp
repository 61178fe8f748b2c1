#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bodygps/sampler.hpp"
#include "bodygps/volume.hpp"

namespace bodygps {

/// Encodes an 8-bit grayscale image (row-major, `width * height` bytes) as a
/// PNG byte string. Output is deterministic for fixed input.
std::string encode_png_gray8(std::span<const std::uint8_t> pixels, int width, int height);

struct Slice8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major
};

/// Windowed 8-bit slice perpendicular to `axis` at voxel `index`. Columns run
/// along the first remaining axis and rows along the second (z slices: x
/// across, y down). Values map to round(255 * clamp((v - lo) / (hi - lo))).
/// Throws std::out_of_range when `index` is outside the volume.
Slice8 render_slice(const Volume& v, Axis axis, std::int64_t index, const IntensityWindow& window);

}  // namespace bodygps
