#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dhgcn/autodiff.hpp"
#include "dhgcn/errors.hpp"
#include "dhgcn/tensor.hpp"

namespace dhgcn {

using Point = std::array<double, 3>;

struct PointCloud {
    std::vector<Point> pts;
    int label = -1;

    int size() const { return static_cast<int>(pts.size()); }

    /// N x 3 tensor view of the coordinates.
    Tensor coords() const {
        Tensor t({size(), 3});
        for (int i = 0; i < size(); ++i)
            for (int d = 0; d < 3; ++d) t.data[static_cast<std::size_t>(i) * 3 + d] = pts[i][d];
        return t;
    }
};

struct AABB {
    Point lo{0.0, 0.0, 0.0};
    Point hi{0.0, 0.0, 0.0};

    double volume() const {
        double v = 1.0;
        for (int d = 0; d < 3; ++d) v *= std::max(0.0, hi[d] - lo[d]);
        return v;
    }

    /// Closed-interval overlap on every axis (touching faces intersect).
    bool intersects(const AABB& o) const {
        for (int d = 0; d < 3; ++d)
            if (lo[d] > o.hi[d] || o.lo[d] > hi[d]) return false;
        return true;
    }
};

/// Centers the cloud at the origin and scales so the farthest point has unit
/// norm. A zero-extent cloud is centered and left unscaled; `degenerate`
/// reports that case when non-null.
inline PointCloud normalize_unit_sphere(const PointCloud& cloud, bool* degenerate = nullptr) {
    if (cloud.size() < 1) throw DataError("normalize_unit_sphere: empty cloud");
    Point c{0.0, 0.0, 0.0};
    for (const Point& p : cloud.pts)
        for (int d = 0; d < 3; ++d) c[d] += p[d];
    for (int d = 0; d < 3; ++d) c[d] /= cloud.size();

    PointCloud out;
    out.label = cloud.label;
    out.pts.resize(cloud.pts.size());
    double max_norm = 0.0;
    for (std::size_t i = 0; i < cloud.pts.size(); ++i) {
        double n2 = 0.0;
        for (int d = 0; d < 3; ++d) {
            out.pts[i][d] = cloud.pts[i][d] - c[d];
            n2 += out.pts[i][d] * out.pts[i][d];
        }
        max_norm = std::max(max_norm, std::sqrt(n2));
    }
    if (max_norm == 0.0) {
        if (degenerate) *degenerate = true;
        return out;
    }
    if (degenerate) *degenerate = false;
    for (Point& p : out.pts)
        for (int d = 0; d < 3; ++d) p[d] /= max_norm;
    return out;
}

/// Indices of the k nearest keys per query (Euclidean, ascending distance,
/// ties to the lower index). Row-major queries (m x d) and keys (n x d).
/// When queries and keys are the same set, each query's own index appears.
inline std::vector<int> knn(const double* queries, int m, const double* keys, int n, int d,
                            int k) {
    if (k < 1 || k > n)
        throw ConfigError("knn: k=" + std::to_string(k) + " outside [1," + std::to_string(n) + "]");
    if (d < 1) throw ConfigError("knn: dimension must be >= 1");

    // d2(q,key) = |q|^2 + |key|^2 - 2 q.key via one gemm
    std::vector<double> qn(m), kn(n);
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += queries[i * d + j] * queries[i * d + j];
        qn[i] = s;
    }
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += keys[i * d + j] * keys[i * d + j];
        kn[i] = s;
    }
    std::vector<double> dots(static_cast<std::size_t>(m) * n);
    gemm(false, true, m, n, d, queries, keys, dots.data(), false);

    std::vector<int> out(static_cast<std::size_t>(m) * k);
    std::vector<std::pair<double, int>> cand(n);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double d2 = qn[i] + kn[j] - 2.0 * dots[static_cast<std::size_t>(i) * n + j];
            cand[j] = {d2 < 0.0 ? 0.0 : d2, j};
        }
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(i) * k + j] = cand[j].second;
    }
    return out;
}

inline std::vector<int> knn(const Tensor& queries, const Tensor& keys, int k) {
    if (queries.rank() != 2 || keys.rank() != 2 || queries.shape[1] != keys.shape[1])
        throw ShapeError("knn shape mismatch: " + shape_str(queries.shape) + " vs " +
                         shape_str(keys.shape));
    return knn(queries.data.data(), queries.shape[0], keys.data.data(), keys.shape[0],
               queries.shape[1], k);
}

enum class RotationMode { none, z_uniform, so3 };

struct AugmentParams {
    RotationMode rotation = RotationMode::none;
    double scale_lo = 1.0;
    double scale_hi = 1.0;
    double jitter_sigma = 0.0;
    double jitter_clip = 0.0;

    void validate() const {
        if (scale_lo > scale_hi) throw ConfigError("augment: scale_lo > scale_hi");
        if (jitter_sigma < 0.0 || jitter_clip < 0.0)
            throw ConfigError("augment: jitter parameters must be >= 0");
    }

    static AugmentParams pretrain_default() {
        AugmentParams p;
        p.rotation = RotationMode::z_uniform;
        p.scale_lo = 0.8;
        p.scale_hi = 1.2;
        p.jitter_sigma = 0.01;
        p.jitter_clip = 0.02;
        return p;
    }
};

/// Rotation, then per-axis scale, then clipped Gaussian jitter. Label kept.
inline PointCloud augment(const PointCloud& cloud, const AugmentParams& params,
                          std::mt19937_64& rng) {
    params.validate();
    PointCloud out = cloud;

    if (params.rotation == RotationMode::z_uniform) {
        std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
        const double a = angle(rng);
        const double ca = std::cos(a), sa = std::sin(a);
        for (Point& p : out.pts) {
            const double x = p[0], y = p[1];
            p[0] = ca * x - sa * y;
            p[1] = sa * x + ca * y;
        }
    } else if (params.rotation == RotationMode::so3) {
        // uniform rotation from a uniform quaternion
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        const double u1 = u01(rng), u2 = u01(rng), u3 = u01(rng);
        const double two_pi = 2.0 * std::numbers::pi;
        const double qw = std::sqrt(1.0 - u1) * std::sin(two_pi * u2);
        const double qx = std::sqrt(1.0 - u1) * std::cos(two_pi * u2);
        const double qy = std::sqrt(u1) * std::sin(two_pi * u3);
        const double qz = std::sqrt(u1) * std::cos(two_pi * u3);
        const double r[3][3] = {
            {1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)},
            {2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)},
            {2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)}};
        for (Point& p : out.pts) {
            const Point q = p;
            for (int i = 0; i < 3; ++i)
                p[i] = r[i][0] * q[0] + r[i][1] * q[1] + r[i][2] * q[2];
        }
    }

    if (params.scale_lo != 1.0 || params.scale_hi != 1.0) {
        std::uniform_real_distribution<double> sdist(params.scale_lo, params.scale_hi);
        const double sx = sdist(rng), sy = sdist(rng), sz = sdist(rng);
        for (Point& p : out.pts) {
            p[0] *= sx;
            p[1] *= sy;
            p[2] *= sz;
        }
    }

    if (params.jitter_sigma > 0.0) {
        std::normal_distribution<double> jdist(0.0, params.jitter_sigma);
        for (Point& p : out.pts)
            for (int d = 0; d < 3; ++d)
                p[d] += std::clamp(jdist(rng), -params.jitter_clip, params.jitter_clip);
    }
    return out;
}

/// Plain-text XYZ: one "x y z" triple per line, 9 significant digits.
inline void save_points(const PointCloud& cloud, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open for writing: " + path);
    char buf[128];
    for (const Point& p : cloud.pts) {
        std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", p[0], p[1], p[2]);
        f << buf;
    }
    if (!f) throw DataError("write failed: " + path);
}

inline PointCloud load_points(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open: " + path);
    PointCloud cloud;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream is(line);
        Point p;
        if (!(is >> p[0] >> p[1] >> p[2]))
            throw DataError(path + ": parse error at line " + std::to_string(line_no));
        std::string extra;
        if (is >> extra)
            throw DataError(path + ": expected 3 columns at line " + std::to_string(line_no));
        cloud.pts.push_back(p);
    }
    if (cloud.pts.empty()) throw DataError(path + ": no points");
    return cloud;
}

}  // namespace dhgcn
