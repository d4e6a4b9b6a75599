#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dhgcn/errors.hpp"
#include "dhgcn/geometry.hpp"

namespace dhgcn {

/// Voxel assignment of a point cloud into s^3 parts.
struct Partition {
    int split = 0;
    std::vector<int> assignment;          // per point: part id in [0, V)
    std::vector<std::vector<int>> parts;  // per part: point indices, ascending
    std::vector<char> nonempty;

    int num_parts() const { return split * split * split; }

    std::vector<int> valid_ids() const {
        std::vector<int> ids;
        for (int i = 0; i < num_parts(); ++i)
            if (nonempty[i]) ids.push_back(i);
        return ids;
    }

    /// For each point, the index of its part within valid_ids().
    std::vector<int> compact_assignment() const {
        std::vector<int> part_to_compact(num_parts(), -1);
        int next = 0;
        for (int i = 0; i < num_parts(); ++i)
            if (nonempty[i]) part_to_compact[i] = next++;
        std::vector<int> out(assignment.size());
        for (std::size_t p = 0; p < assignment.size(); ++p)
            out[p] = part_to_compact[assignment[p]];
        return out;
    }
};

/// Pairwise part hop distances with a validity mask. Distances are in
/// [0, delta]; pairs touching an empty part are invalid and hold -1.
struct HopMatrix {
    int V = 0;
    int delta = 0;
    std::vector<int> dist;    // V*V
    std::vector<char> valid;  // V*V

    int at(int i, int j) const { return dist[static_cast<std::size_t>(i) * V + j]; }
    bool is_valid(int i, int j) const { return valid[static_cast<std::size_t>(i) * V + j] != 0; }
};

/// Maps points into the s^3 grid over the cloud's tight bounding cube (the
/// cube has the max axis extent as side and is centered per axis). Cell
/// indices clamp to [0, s-1], so boundary points land in the last cell.
inline Partition voxelize(const PointCloud& cloud, int s) {
    if (cloud.size() < 1) throw DataError("voxelize: empty cloud");
    if (s < 2) throw ConfigError("voxelize: split must be >= 2");

    Point lo = cloud.pts[0], hi = cloud.pts[0];
    for (const Point& p : cloud.pts)
        for (int d = 0; d < 3; ++d) {
            lo[d] = std::min(lo[d], p[d]);
            hi[d] = std::max(hi[d], p[d]);
        }
    double side = 0.0;
    for (int d = 0; d < 3; ++d) side = std::max(side, hi[d] - lo[d]);

    Point corner;
    for (int d = 0; d < 3; ++d) corner[d] = 0.5 * (lo[d] + hi[d]) - 0.5 * side;

    Partition part;
    part.split = s;
    const int v = part.num_parts();
    part.parts.assign(v, {});
    part.nonempty.assign(v, 0);
    part.assignment.resize(cloud.pts.size());

    const double cell = side / s;
    for (int i = 0; i < cloud.size(); ++i) {
        int idx[3] = {0, 0, 0};
        if (cell > 0.0) {
            for (int d = 0; d < 3; ++d) {
                int c = static_cast<int>(std::floor((cloud.pts[i][d] - corner[d]) / cell));
                idx[d] = std::clamp(c, 0, s - 1);
            }
        }
        const int flat = (idx[0] * s + idx[1]) * s + idx[2];
        part.assignment[i] = flat;
        part.parts[flat].push_back(i);
        part.nonempty[flat] = 1;
    }
    return part;
}

/// Tight box of the given points scaled about its center by `factor` per
/// axis. An empty point set maps to the canonical zero box at the origin.
inline AABB scaled_aabb(const PointCloud& cloud, const std::vector<int>& point_ids,
                        double factor) {
    if (factor < 1.0) throw ConfigError("scaled_aabb: factor must be >= 1");
    AABB box;
    if (point_ids.empty()) return box;
    Point lo = cloud.pts[point_ids[0]], hi = lo;
    for (int id : point_ids)
        for (int d = 0; d < 3; ++d) {
            lo[d] = std::min(lo[d], cloud.pts[id][d]);
            hi[d] = std::max(hi[d], cloud.pts[id][d]);
        }
    for (int d = 0; d < 3; ++d) {
        const double center = 0.5 * (lo[d] + hi[d]);
        const double half = 0.5 * (hi[d] - lo[d]) * factor;
        box.lo[d] = center - half;
        box.hi[d] = center + half;
    }
    return box;
}

/// A[i][j] = both parts non-empty and their boxes overlap on every axis
/// (closed intervals: touching counts). Self-loops on non-empty parts.
inline std::vector<char> build_adjacency(const std::vector<AABB>& boxes,
                                         const std::vector<char>& nonempty) {
    const int v = static_cast<int>(boxes.size());
    if (static_cast<int>(nonempty.size()) != v)
        throw ShapeError("build_adjacency: mask size mismatch");
    std::vector<char> adj(static_cast<std::size_t>(v) * v, 0);
    for (int i = 0; i < v; ++i) {
        if (!nonempty[i]) continue;
        adj[static_cast<std::size_t>(i) * v + i] = 1;
        for (int j = i + 1; j < v; ++j) {
            if (!nonempty[j]) continue;
            if (boxes[i].intersects(boxes[j])) {
                adj[static_cast<std::size_t>(i) * v + j] = 1;
                adj[static_cast<std::size_t>(j) * v + i] = 1;
            }
        }
    }
    return adj;
}

/// BFS hop distances over the part graph, truncated at delta; unreachable
/// valid pairs also map to delta. Non-empty parts are read off the diagonal.
inline HopMatrix hop_distances(const std::vector<char>& adjacency, int v, int delta) {
    if (static_cast<int>(adjacency.size()) != v * v)
        throw ShapeError("hop_distances: adjacency size mismatch");
    if (delta < 1) throw ConfigError("hop_distances: delta must be >= 1");

    std::vector<char> nonempty(v);
    for (int i = 0; i < v; ++i) nonempty[i] = adjacency[static_cast<std::size_t>(i) * v + i];

    HopMatrix hops;
    hops.V = v;
    hops.delta = delta;
    hops.dist.assign(static_cast<std::size_t>(v) * v, -1);
    hops.valid.assign(static_cast<std::size_t>(v) * v, 0);

    std::vector<int> bfs(v);
    std::vector<int> depth(v);
    for (int src = 0; src < v; ++src) {
        if (!nonempty[src]) continue;
        std::vector<int> d(v, -1);
        int head = 0, tail = 0;
        bfs[tail] = src;
        depth[tail++] = 0;
        d[src] = 0;
        while (head < tail) {
            const int cur = bfs[head];
            const int cd = depth[head++];
            if (cd >= delta) continue;  // deeper nodes truncate to delta anyway
            for (int nb = 0; nb < v; ++nb) {
                if (nb == cur || !adjacency[static_cast<std::size_t>(cur) * v + nb]) continue;
                if (d[nb] < 0) {
                    d[nb] = cd + 1;
                    bfs[tail] = nb;
                    depth[tail++] = cd + 1;
                }
            }
        }
        for (int dst = 0; dst < v; ++dst) {
            if (!nonempty[dst]) continue;
            const std::size_t k = static_cast<std::size_t>(src) * v + dst;
            hops.valid[k] = 1;
            hops.dist[k] = d[dst] < 0 ? delta : std::min(d[dst], delta);
        }
    }
    return hops;
}

/// Full pipeline: voxelize, per-part scaled boxes, box-intersection
/// adjacency, truncated BFS distances. delta = s + 1.
inline std::pair<Partition, HopMatrix> ground_truth(const PointCloud& cloud, int s,
                                                    double factor) {
    Partition part = voxelize(cloud, s);
    const int v = part.num_parts();
    std::vector<AABB> boxes(v);
    for (int i = 0; i < v; ++i) boxes[i] = scaled_aabb(cloud, part.parts[i], factor);
    std::vector<char> adj = build_adjacency(boxes, part.nonempty);
    HopMatrix hops = hop_distances(adj, v, s + 1);
    return {std::move(part), std::move(hops)};
}

/// CSV export: header "V,s,delta" values, then V rows of V integers with -1
/// for invalid (empty-part) pairs.
inline void write_hops_csv(const HopMatrix& hops, int s, std::ostream& os) {
    os << hops.V << ',' << s << ',' << hops.delta << '\n';
    for (int i = 0; i < hops.V; ++i) {
        for (int j = 0; j < hops.V; ++j) {
            if (j) os << ',';
            os << (hops.is_valid(i, j) ? hops.at(i, j) : -1);
        }
        os << '\n';
    }
}

}  // namespace dhgcn
