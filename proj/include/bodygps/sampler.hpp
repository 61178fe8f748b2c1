#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bodygps/volume.hpp"

namespace bodygps {

enum class Axis { X = 0, Y = 1, Z = 2 };

char axis_name(Axis a);

/// Square grid lying in the plane through the query point normal to `normal`.
struct PlaneGridSpec {
    Axis normal = Axis::Z;
    int side = 27;
    double step_mm = 4.0;
    friend bool operator==(const PlaneGridSpec&, const PlaneGridSpec&) = default;
};

/// Cubic grid centered on the query point.
struct CubeGridSpec {
    int side = 9;
    double step_mm = 2.0;
    friend bool operator==(const CubeGridSpec&, const CubeGridSpec&) = default;
};

/// The "3.5D" sampling pattern: orthogonal plane grids followed by cube grids.
///
/// Offset order is part of the model contract: planes in listed order, then
/// cubes in listed order; within a grid indices run lexicographically over
/// (k, j, i) with i fastest, each symmetric about zero. For a plane the two
/// in-plane axes take the roles of i and j in increasing axis order (normal x:
/// i=y, j=z; normal y: i=x, j=z; normal z: i=x, j=y).
class DescriptorLayout {
public:
    DescriptorLayout(std::vector<PlaneGridSpec> planes, std::vector<CubeGridSpec> cubes);

    const std::vector<PlaneGridSpec>& planes() const { return planes_; }
    const std::vector<CubeGridSpec>& cubes() const { return cubes_; }
    std::size_t total_len() const { return total_len_; }

    /// Canonical text form, one grid per line.
    std::string canonical_text() const;
    /// 64-bit FNV-1a of canonical_text(); embedded in model files.
    std::uint64_t fingerprint() const;

    friend bool operator==(const DescriptorLayout&, const DescriptorLayout&) = default;

private:
    std::vector<PlaneGridSpec> planes_;
    std::vector<CubeGridSpec> cubes_;
    std::size_t total_len_ = 0;
};

/// Three 27x27 planes at 4 mm, then 9x9x9 cubes at 2, 3, 5, 8, 12, 28, 64 mm.
DescriptorLayout default_layout();

/// One mm offset per descriptor element, in layout order.
std::vector<Vec3> offsets(const DescriptorLayout& layout);

std::uint64_t fnv1a64(std::string_view text);

struct IntensityWindow {
    double lo = -1024.0;
    double hi = 3071.0;

    IntensityWindow() = default;
    IntensityWindow(double lo_, double hi_);
    friend bool operator==(const IntensityWindow&, const IntensityWindow&) = default;
};

/// clamp(raw, lo, hi) mapped affinely onto [0, 1].
double normalize_intensity(double raw, const IntensityWindow& w);

using Descriptor = std::vector<float>;

/// Precomputed offsets plus window; the hot path for descriptor extraction.
/// Immutable, so one instance can serve any number of threads.
class DescriptorSampler {
public:
    explicit DescriptorSampler(DescriptorLayout layout, IntensityWindow window = {});

    const DescriptorLayout& layout() const { return layout_; }
    const IntensityWindow& window() const { return window_; }
    std::size_t size() const { return offsets_.size(); }
    const std::vector<Vec3>& offsets() const { return offsets_; }

    Descriptor extract(const Volume& v, const WorldPoint& p) const;
    /// Writes size() values into `out`.
    void extract_into(const Volume& v, const WorldPoint& p, std::span<float> out) const;

private:
    DescriptorLayout layout_;
    IntensityWindow window_;
    std::vector<Vec3> offsets_;
};

/// Convenience form; rebuilds the offset table on every call.
Descriptor extract(const Volume& v, const WorldPoint& p, const DescriptorLayout& layout, const IntensityWindow& w);

}  // namespace bodygps
