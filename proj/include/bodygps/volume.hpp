#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bodygps/errors.hpp"
#include "bodygps/geometry.hpp"

namespace bodygps {

/// Axis-aligned voxel lattice: dims, per-axis spacing (mm) and the world
/// position of voxel (0,0,0)'s center. No direction cosines.
struct ImageGeometry {
    Index3 dims{1, 1, 1};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{};

    void validate() const;

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims.i) * static_cast<std::size_t>(dims.j) * static_cast<std::size_t>(dims.k);
    }
    std::size_t flat_index(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return static_cast<std::size_t>(i + dims.i * (j + dims.j * k));
    }
    bool in_bounds(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < dims.i && j < dims.j && k < dims.k;
    }

    /// Continuous voxel coordinates, unclamped.
    Vec3 world_to_voxel(const WorldPoint& p) const {
        return {(p.x - origin.x) / spacing.x, (p.y - origin.y) / spacing.y, (p.z - origin.z) / spacing.z};
    }
    WorldPoint voxel_to_world(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return {origin.x + static_cast<double>(i) * spacing.x, origin.y + static_cast<double>(j) * spacing.y,
                origin.z + static_cast<double>(k) * spacing.z};
    }
    /// Nearest voxel index, rounding half away from zero.
    Index3 nearest_index(const WorldPoint& p) const {
        const Vec3 c = world_to_voxel(p);
        return {static_cast<std::int64_t>(std::round(c.x)), static_cast<std::int64_t>(std::round(c.y)),
                static_cast<std::int64_t>(std::round(c.z))};
    }

    /// Box spanned by the voxel centers.
    Box bounds() const;
    WorldPoint center() const { return bounds().center(); }

    friend bool operator==(const ImageGeometry&, const ImageGeometry&) = default;
};

/// Immutable-after-construction voxel grid with an out-of-bounds fill value.
template <typename T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    Grid(ImageGeometry geometry, std::vector<T> voxels, T background)
        : geometry_(geometry), voxels_(std::move(voxels)), background_(background) {
        geometry_.validate();
        if (voxels_.size() != geometry_.voxel_count())
            throw ShapeError("voxel buffer has " + std::to_string(voxels_.size()) + " elements, geometry needs " +
                             std::to_string(geometry_.voxel_count()));
    }
    Grid(ImageGeometry geometry, T fill, T background)
        : Grid(geometry, std::vector<T>(checked_count(geometry), fill), background) {}

    const ImageGeometry& geometry() const { return geometry_; }
    const Index3& dims() const { return geometry_.dims; }
    const Vec3& spacing() const { return geometry_.spacing; }
    const Vec3& origin() const { return geometry_.origin; }
    T background() const { return background_; }
    std::span<const T> voxels() const { return voxels_; }
    std::span<T> mutable_voxels() { return voxels_; }

    T at(std::int64_t i, std::int64_t j, std::int64_t k) const { return voxels_[geometry_.flat_index(i, j, k)]; }
    T& at(std::int64_t i, std::int64_t j, std::int64_t k) { return voxels_[geometry_.flat_index(i, j, k)]; }

    /// Nearest-neighbor memory lookup; background outside the lattice.
    T sample_nearest(const WorldPoint& p) const {
        const Vec3 c = geometry_.world_to_voxel(p);
        const double ri = std::round(c.x), rj = std::round(c.y), rk = std::round(c.z);
        // Range check on doubles first: far-away or NaN points never reach the int cast.
        if (!(ri >= 0.0 && rj >= 0.0 && rk >= 0.0 && ri < static_cast<double>(geometry_.dims.i) &&
              rj < static_cast<double>(geometry_.dims.j) && rk < static_cast<double>(geometry_.dims.k)))
            return background_;
        return voxels_[geometry_.flat_index(static_cast<std::int64_t>(ri), static_cast<std::int64_t>(rj),
                                            static_cast<std::int64_t>(rk))];
    }

private:
    static std::size_t checked_count(const ImageGeometry& g) {
        g.validate();
        return g.voxel_count();
    }

    ImageGeometry geometry_;
    std::vector<T> voxels_;
    T background_{};
};

using Volume = Grid<float>;
using LabelVolume = Grid<std::uint8_t>;

/// Free-function forms of the geometry operations.
inline Vec3 world_to_voxel(const Volume& v, const WorldPoint& p) { return v.geometry().world_to_voxel(p); }
inline WorldPoint voxel_to_world(const Volume& v, std::int64_t i, std::int64_t j, std::int64_t k) {
    return v.geometry().voxel_to_world(i, j, k);
}
inline float sample_nearest(const Volume& v, const WorldPoint& p) { return v.sample_nearest(p); }

/// Trilinear interpolation; used only when generating synthetic data.
float sample_trilinear(const Volume& v, const WorldPoint& p);

/// Min/max over the voxel buffer.
std::pair<float, float> intensity_range(const Volume& v);

/// Larger volume with the same spacing and v centered in it (world positions
/// of v's voxels unchanged); other voxels take v's background.
Volume embed_centered(const Volume& v, const Index3& dims);

}  // namespace bodygps
