#include "bodygps/volume.hpp"

#include <algorithm>
#include <string>

namespace bodygps {

void ImageGeometry::validate() const {
    if (dims.i < 1 || dims.j < 1 || dims.k < 1)
        throw ShapeError("dims must be >= 1 along every axis");
    for (int a = 0; a < 3; ++a) {
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
            throw ShapeError("spacing must be positive and finite along axis " + std::to_string(a));
        if (!std::isfinite(origin[a]))
            throw ShapeError("origin must be finite");
    }
}

Box ImageGeometry::bounds() const {
    return {origin, voxel_to_world(dims.i - 1, dims.j - 1, dims.k - 1)};
}

float sample_trilinear(const Volume& v, const WorldPoint& p) {
    const ImageGeometry& g = v.geometry();
    const Vec3 c = g.world_to_voxel(p);
    const double fx = std::floor(c.x), fy = std::floor(c.y), fz = std::floor(c.z);
    const auto i0 = static_cast<std::int64_t>(fx);
    const auto j0 = static_cast<std::int64_t>(fy);
    const auto k0 = static_cast<std::int64_t>(fz);
    const double tx = c.x - fx, ty = c.y - fy, tz = c.z - fz;

    auto value = [&](std::int64_t i, std::int64_t j, std::int64_t k) -> double {
        return g.in_bounds(i, j, k) ? v.at(i, j, k) : v.background();
    };
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz) {
        const double wz = dz ? tz : 1.0 - tz;
        if (wz == 0.0) continue;
        for (int dy = 0; dy < 2; ++dy) {
            const double wy = dy ? ty : 1.0 - ty;
            if (wy == 0.0) continue;
            for (int dx = 0; dx < 2; ++dx) {
                const double wx = dx ? tx : 1.0 - tx;
                if (wx == 0.0) continue;
                acc += wx * wy * wz * value(i0 + dx, j0 + dy, k0 + dz);
            }
        }
    }
    return static_cast<float>(acc);
}

std::pair<float, float> intensity_range(const Volume& v) {
    const auto [lo, hi] = std::minmax_element(v.voxels().begin(), v.voxels().end());
    return {*lo, *hi};
}

Volume embed_centered(const Volume& v, const Index3& dims) {
    const auto& g = v.geometry();
    if (dims.i < g.dims.i || dims.j < g.dims.j || dims.k < g.dims.k)
        throw ShapeError("embedding target must be at least as large as the volume");
    const Index3 shift{(dims.i - g.dims.i) / 2, (dims.j - g.dims.j) / 2, (dims.k - g.dims.k) / 2};
    ImageGeometry big{dims, g.spacing,
                      {g.origin.x - static_cast<double>(shift.i) * g.spacing.x,
                       g.origin.y - static_cast<double>(shift.j) * g.spacing.y,
                       g.origin.z - static_cast<double>(shift.k) * g.spacing.z}};
    std::vector<float> data(big.voxel_count(), v.background());
    for (std::int64_t k = 0; k < g.dims.k; ++k)
        for (std::int64_t j = 0; j < g.dims.j; ++j)
            for (std::int64_t i = 0; i < g.dims.i; ++i)
                data[big.flat_index(i + shift.i, j + shift.j, k + shift.k)] = v.at(i, j, k);
    return Volume(big, std::move(data), v.background());
}

}  // namespace bodygps
