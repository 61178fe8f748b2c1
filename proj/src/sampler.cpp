#include "bodygps/sampler.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

namespace bodygps {
namespace {

std::string format_step(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

void check_grid(int side, double step, const char* kind) {
    if (side < 1 || side % 2 == 0)
        throw ConfigError(std::string(kind) + " grid side must be a positive odd integer, got " +
                          std::to_string(side));
    if (!(step > 0.0) || !std::isfinite(step))
        throw ConfigError(std::string(kind) + " grid step must be positive");
}

}  // namespace

char axis_name(Axis a) { return "xyz"[static_cast<int>(a)]; }

DescriptorLayout::DescriptorLayout(std::vector<PlaneGridSpec> planes, std::vector<CubeGridSpec> cubes)
    : planes_(std::move(planes)), cubes_(std::move(cubes)) {
    for (const auto& p : planes_) {
        check_grid(p.side, p.step_mm, "plane");
        total_len_ += static_cast<std::size_t>(p.side) * p.side;
    }
    for (const auto& c : cubes_) {
        check_grid(c.side, c.step_mm, "cube");
        total_len_ += static_cast<std::size_t>(c.side) * c.side * c.side;
    }
    if (total_len_ == 0) throw ConfigError("descriptor layout is empty");
}

std::string DescriptorLayout::canonical_text() const {
    std::string text;
    for (const auto& p : planes_)
        text += std::string("plane ") + axis_name(p.normal) + " " + std::to_string(p.side) + " " +
                format_step(p.step_mm) + "\n";
    for (const auto& c : cubes_) text += "cube " + std::to_string(c.side) + " " + format_step(c.step_mm) + "\n";
    return text;
}

std::uint64_t DescriptorLayout::fingerprint() const { return fnv1a64(canonical_text()); }

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

DescriptorLayout default_layout() {
    std::vector<PlaneGridSpec> planes{{Axis::X, 27, 4.0}, {Axis::Y, 27, 4.0}, {Axis::Z, 27, 4.0}};
    std::vector<CubeGridSpec> cubes;
    for (double step : {2.0, 3.0, 5.0, 8.0, 12.0, 28.0, 64.0}) cubes.push_back({9, step});
    return DescriptorLayout(std::move(planes), std::move(cubes));
}

std::vector<Vec3> offsets(const DescriptorLayout& layout) {
    std::vector<Vec3> out;
    out.reserve(layout.total_len());
    for (const auto& p : layout.planes()) {
        const int h = (p.side - 1) / 2;
        const int normal = static_cast<int>(p.normal);
        const int ax_i = normal == 0 ? 1 : 0;
        const int ax_j = normal == 2 ? 1 : 2;
        for (int j = -h; j <= h; ++j)
            for (int i = -h; i <= h; ++i) {
                Vec3 o;
                o[ax_i] = i * p.step_mm;
                o[ax_j] = j * p.step_mm;
                out.push_back(o);
            }
    }
    for (const auto& c : layout.cubes()) {
        const int h = (c.side - 1) / 2;
        for (int k = -h; k <= h; ++k)
            for (int j = -h; j <= h; ++j)
                for (int i = -h; i <= h; ++i) out.push_back({i * c.step_mm, j * c.step_mm, k * c.step_mm});
    }
    return out;
}

IntensityWindow::IntensityWindow(double lo_, double hi_) : lo(lo_), hi(hi_) {
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
        throw ConfigError("intensity window requires finite lo < hi");
}

double normalize_intensity(double raw, const IntensityWindow& w) {
    return (std::clamp(raw, w.lo, w.hi) - w.lo) / (w.hi - w.lo);
}

DescriptorSampler::DescriptorSampler(DescriptorLayout layout, IntensityWindow window)
    : layout_(std::move(layout)), window_(window), offsets_(bodygps::offsets(layout_)) {}

Descriptor DescriptorSampler::extract(const Volume& v, const WorldPoint& p) const {
    Descriptor d(offsets_.size());
    extract_into(v, p, d);
    return d;
}

void DescriptorSampler::extract_into(const Volume& v, const WorldPoint& p, std::span<float> out) const {
    if (out.size() != offsets_.size())
        throw ShapeError("descriptor buffer has " + std::to_string(out.size()) + " slots, layout needs " +
                         std::to_string(offsets_.size()));
    const double lo = window_.lo, hi = window_.hi, width = hi - lo;
    for (std::size_t n = 0; n < offsets_.size(); ++n) {
        const double raw = v.sample_nearest(p + offsets_[n]);
        out[n] = static_cast<float>((std::clamp(raw, lo, hi) - lo) / width);
    }
}

Descriptor extract(const Volume& v, const WorldPoint& p, const DescriptorLayout& layout, const IntensityWindow& w) {
    return DescriptorSampler(layout, w).extract(v, p);
}

}  // namespace bodygps
