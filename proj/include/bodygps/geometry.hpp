#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace bodygps {

/// Plain 3-vector in millimeters. WorldPoint is the same type; normalized
/// atlas coordinates use the distinct NormalizedCoord (see atlas.hpp).
struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
    constexpr double& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }

    constexpr Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    constexpr Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    constexpr Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

    friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
    friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
    friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
    friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
    friend constexpr Vec3 operator/(const Vec3& a, double s) { return {a.x / s, a.y / s, a.z / s}; }
    friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
    friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

using WorldPoint = Vec3;

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }
inline bool is_finite(const Vec3& a) { return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z); }

struct Index3 {
    std::int64_t i = 0;
    std::int64_t j = 0;
    std::int64_t k = 0;

    constexpr std::int64_t operator[](int axis) const { return axis == 0 ? i : (axis == 1 ? j : k); }
    friend constexpr bool operator==(const Index3&, const Index3&) = default;
};

/// Axis-aligned box, inclusive on both ends.
struct Box {
    Vec3 lo;
    Vec3 hi;

    bool contains(const Vec3& p) const {
        return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
    }
    Vec3 clamp(const Vec3& p) const;
    Vec3 center() const { return (lo + hi) * 0.5; }
};

inline Vec3 Box::clamp(const Vec3& p) const {
    auto c = [](double v, double a, double b) { return v < a ? a : (v > b ? b : v); };
    return {c(p.x, lo.x, hi.x), c(p.y, lo.y, hi.y), c(p.z, lo.z, hi.z)};
}

}  // namespace bodygps
