#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dhgcn/errors.hpp"
#include "dhgcn/geometry.hpp"
#include "dhgcn/rng.hpp"

namespace dhgcn {

enum class ShapeClass : int {
    sphere = 0,
    cube,
    cylinder,
    torus,
    cone,
    capsule,
    cross,
    pyramid,
};

constexpr int kNumShapeClasses = 8;

inline const std::vector<std::string>& shape_class_names() {
    static const std::vector<std::string> names = {"sphere", "cube",    "cylinder", "torus",
                                                   "cone",   "capsule", "cross",    "pyramid"};
    return names;
}

/// Per-class surface parameters (slots documented below):
///   sphere   [radius]
///   cube     [hx, hy, hz]           half extents
///   cylinder [radius, half_height]
///   torus    [major_r, minor_r]
///   cone     [base_radius, height]
///   capsule  [radius, half_height]  half height of the cylindrical section
///   cross    [arm_half_len, arm_half_width]
///   pyramid  [base_half, height]
struct SyntheticSpec {
    ShapeClass cls = ShapeClass::sphere;
    int points = 512;
    std::uint64_t seed = 1;
    std::array<double, 4> params{1.0, 0.0, 0.0, 0.0};

    void validate() const {
        if (points < 8) throw ConfigError("synthetic cloud needs >= 8 points");
        int c = static_cast<int>(cls);
        if (c < 0 || c >= kNumShapeClasses) throw ConfigError("invalid shape class");
    }
};

/// Draws per-class shape parameters from fixed ranges.
inline SyntheticSpec random_spec(ShapeClass cls, int points, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.cls = cls;
    spec.points = points;
    spec.seed = seed;
    auto rng = make_rng({seed, 0x73706563ULL, static_cast<std::uint64_t>(cls)});
    auto u = [&rng](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    switch (cls) {
        case ShapeClass::sphere: spec.params = {u(0.7, 1.0), 0, 0, 0}; break;
        case ShapeClass::cube: spec.params = {u(0.5, 0.9), u(0.5, 0.9), u(0.5, 0.9), 0}; break;
        case ShapeClass::cylinder: spec.params = {u(0.4, 0.7), u(0.7, 1.1), 0, 0}; break;
        case ShapeClass::torus: spec.params = {u(0.55, 0.8), u(0.15, 0.3), 0, 0}; break;
        case ShapeClass::cone: spec.params = {u(0.5, 0.8), u(1.0, 1.6), 0, 0}; break;
        case ShapeClass::capsule: spec.params = {u(0.3, 0.5), u(0.5, 0.9), 0, 0}; break;
        case ShapeClass::cross: spec.params = {u(0.7, 1.0), u(0.12, 0.25), 0, 0}; break;
        case ShapeClass::pyramid: spec.params = {u(0.5, 0.8), u(1.0, 1.5), 0, 0}; break;
    }
    return spec;
}

namespace detail {

inline Point sample_sphere_dir(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uz(-1.0, 1.0);
    std::uniform_real_distribution<double> uphi(0.0, 2.0 * std::numbers::pi);
    const double z = uz(rng);
    const double phi = uphi(rng);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {r * std::cos(phi), r * std::sin(phi), z};
}

/// Area-weighted uniform sample on the surface of a box with half extents h.
inline Point sample_box_surface(const std::array<double, 3>& h, std::mt19937_64& rng) {
    const double ax = h[1] * h[2], ay = h[0] * h[2], az = h[0] * h[1];
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double pick = u01(rng) * (ax + ay + az);
    const double sign = u01(rng) < 0.5 ? -1.0 : 1.0;
    std::uniform_real_distribution<double> ux(-h[0], h[0]), uy(-h[1], h[1]), uz(-h[2], h[2]);
    if (pick < ax) return {sign * h[0], uy(rng), uz(rng)};
    if (pick < ax + ay) return {ux(rng), sign * h[1], uz(rng)};
    return {ux(rng), uy(rng), sign * h[2]};
}

inline Point sample_triangle(const Point& a, const Point& b, const Point& c,
                             std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    double r1 = std::sqrt(u01(rng)), r2 = u01(rng);
    Point p;
    for (int d = 0; d < 3; ++d)
        p[d] = (1 - r1) * a[d] + r1 * (1 - r2) * b[d] + r1 * r2 * c[d];
    return p;
}

}  // namespace detail

/// Deterministic surface sampling of the ideal shape (no jitter). The label
/// is the class id.
inline PointCloud sample_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    auto rng = make_rng({spec.seed, 0x73616d70ULL});
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_real_distribution<double> uang(0.0, 2.0 * std::numbers::pi);
    const auto& pr = spec.params;

    PointCloud cloud;
    cloud.label = static_cast<int>(spec.cls);
    cloud.pts.reserve(spec.points);

    for (int i = 0; i < spec.points; ++i) {
        Point p{0, 0, 0};
        switch (spec.cls) {
            case ShapeClass::sphere: {
                const Point d = detail::sample_sphere_dir(rng);
                p = {pr[0] * d[0], pr[0] * d[1], pr[0] * d[2]};
                break;
            }
            case ShapeClass::cube:
                p = detail::sample_box_surface({pr[0], pr[1], pr[2]}, rng);
                break;
            case ShapeClass::cylinder: {
                const double r = pr[0], hh = pr[1];
                const double lateral = 2.0 * std::numbers::pi * r * 2.0 * hh;
                const double caps = 2.0 * std::numbers::pi * r * r;
                if (u01(rng) * (lateral + caps) < lateral) {
                    const double a = uang(rng);
                    p = {r * std::cos(a), r * std::sin(a),
                         std::uniform_real_distribution<double>(-hh, hh)(rng)};
                } else {
                    const double a = uang(rng), rr = r * std::sqrt(u01(rng));
                    const double z = u01(rng) < 0.5 ? -hh : hh;
                    p = {rr * std::cos(a), rr * std::sin(a), z};
                }
                break;
            }
            case ShapeClass::torus: {
                const double R = pr[0], r = pr[1];
                const double theta = uang(rng);
                double phi;
                for (;;) {  // rejection for uniform area
                    phi = uang(rng);
                    if (u01(rng) < (R + r * std::cos(phi)) / (R + r)) break;
                }
                const double ring = R + r * std::cos(phi);
                p = {ring * std::cos(theta), ring * std::sin(theta), r * std::sin(phi)};
                break;
            }
            case ShapeClass::cone: {
                const double r = pr[0], h = pr[1];
                const double slant = std::sqrt(r * r + h * h);
                const double lateral = std::numbers::pi * r * slant;
                const double base = std::numbers::pi * r * r;
                const double a = uang(rng);
                if (u01(rng) * (lateral + base) < lateral) {
                    const double t = std::sqrt(u01(rng));  // radius fraction
                    p = {r * t * std::cos(a), r * t * std::sin(a), h * (1.0 - t)};
                } else {
                    const double rr = r * std::sqrt(u01(rng));
                    p = {rr * std::cos(a), rr * std::sin(a), 0.0};
                }
                // center the cone vertically
                p[2] -= h / 2.0;
                break;
            }
            case ShapeClass::capsule: {
                const double r = pr[0], hh = pr[1];
                const double lateral = 2.0 * std::numbers::pi * r * 2.0 * hh;
                const double spheres = 4.0 * std::numbers::pi * r * r;
                if (u01(rng) * (lateral + spheres) < lateral) {
                    const double a = uang(rng);
                    p = {r * std::cos(a), r * std::sin(a),
                         std::uniform_real_distribution<double>(-hh, hh)(rng)};
                } else {
                    Point d = detail::sample_sphere_dir(rng);
                    const double zoff = d[2] >= 0.0 ? hh : -hh;
                    p = {r * d[0], r * d[1], r * d[2] + zoff};
                }
                break;
            }
            case ShapeClass::cross: {
                const double L = pr[0], w = pr[1];
                const std::array<std::array<double, 3>, 3> arms = {
                    {{L, w, w}, {w, L, w}, {w, w, L}}};
                double areas[3];
                double total = 0.0;
                for (int a = 0; a < 3; ++a) {
                    const auto& h = arms[a];
                    areas[a] = 8.0 * (h[1] * h[2] + h[0] * h[2] + h[0] * h[1]);
                    total += areas[a];
                }
                double pick = u01(rng) * total;
                int arm = 0;
                while (arm < 2 && pick >= areas[arm]) pick -= areas[arm], ++arm;
                p = detail::sample_box_surface(arms[arm], rng);
                break;
            }
            case ShapeClass::pyramid: {
                const double a = pr[0], h = pr[1];
                const Point apex{0, 0, h};
                const Point c0{-a, -a, 0}, c1{a, -a, 0}, c2{a, a, 0}, c3{-a, a, 0};
                const double slant = std::sqrt(h * h + a * a);
                const double face = a * slant;  // half of 2a * slant
                const double base = 4.0 * a * a;
                double pick = u01(rng) * (4.0 * face + base);
                if (pick < 4.0 * face) {
                    const int f = std::min(3, static_cast<int>(pick / face));
                    const Point* corners[4][2] = {{&c0, &c1}, {&c1, &c2}, {&c2, &c3}, {&c3, &c0}};
                    p = detail::sample_triangle(*corners[f][0], *corners[f][1], apex, rng);
                } else {
                    std::uniform_real_distribution<double> ub(-a, a);
                    p = {ub(rng), ub(rng), 0.0};
                }
                p[2] -= h / 2.0;
                break;
            }
        }
        cloud.pts.push_back(p);
    }
    return cloud;
}

}  // namespace dhgcn
