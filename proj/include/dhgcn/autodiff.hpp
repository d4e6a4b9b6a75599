#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dhgcn/errors.hpp"
#include "dhgcn/tensor.hpp"

#if defined(__has_include)
#if __has_include(<Eigen/Core>)
#include <Eigen/Core>
#define DHGCN_GEMM_EIGEN 1
#endif
#endif

namespace dhgcn {

// C (m x n) = op(A) * op(B), optionally accumulating into C.
// op(A) is A (m x k) or, when trans_a, A stored as (k x m) and used transposed.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a,
                 const double* b, double* c, bool accumulate) {
#ifdef DHGCN_GEMM_EIGEN
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> ma(a, trans_a ? k : m, trans_a ? m : k);
    Eigen::Map<const Mat> mb(b, trans_b ? n : k, trans_b ? k : n);
    Eigen::Map<Mat> mc(c, m, n);
    if (!trans_a && !trans_b) {
        if (accumulate) mc.noalias() += ma * mb; else mc.noalias() = ma * mb;
    } else if (trans_a && !trans_b) {
        if (accumulate) mc.noalias() += ma.transpose() * mb; else mc.noalias() = ma.transpose() * mb;
    } else if (!trans_a && trans_b) {
        if (accumulate) mc.noalias() += ma * mb.transpose(); else mc.noalias() = ma * mb.transpose();
    } else {
        if (accumulate) mc.noalias() += ma.transpose() * mb.transpose();
        else mc.noalias() = ma.transpose() * mb.transpose();
    }
#else
    if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
    auto ld_a = trans_a ? m : k;
    auto ld_b = trans_b ? k : n;
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double av = trans_a ? a[static_cast<std::size_t>(p) * ld_a + i]
                                      : a[static_cast<std::size_t>(i) * ld_a + p];
            if (av == 0.0) continue;
            const double* brow = trans_b ? nullptr : b + static_cast<std::size_t>(p) * ld_b;
            double* crow = c + static_cast<std::size_t>(i) * n;
            if (!trans_b) {
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            } else {
                for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<std::size_t>(j) * ld_b + p];
            }
        }
    }
#endif
}

/// Named learnable parameters with paired gradient accumulators.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor value;
        std::vector<double> grad;
    };

    int add(const std::string& name, Tensor init) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        int id = static_cast<int>(entries_.size());
        std::size_t n = init.data.size();
        entries_.push_back({name, std::move(init), std::vector<double>(n, 0.0)});
        index_[name] = id;
        return id;
    }

    int index_of(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    int size() const { return static_cast<int>(entries_.size()); }

    Tensor& value(int id) { return entries_.at(id).value; }
    const Tensor& value(int id) const { return entries_.at(id).value; }
    Tensor& value(const std::string& name) { return value(require(name)); }
    const Tensor& value(const std::string& name) const { return entries_.at(require(name)).value; }

    std::vector<double>& grad(int id) { return entries_.at(id).grad; }
    const std::vector<double>& grad(int id) const { return entries_.at(id).grad; }
    std::vector<double>& grad(const std::string& name) { return grad(require(name)); }

    const std::string& name(int id) const { return entries_.at(id).name; }

    void zero_grads() {
        for (auto& e : entries_) std::fill(e.grad.begin(), e.grad.end(), 0.0);
    }

    std::int64_t total_coords() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

    const std::vector<Entry>& entries() const { return entries_; }

private:
    int require(const std::string& name) const {
        int id = index_of(name);
        if (id < 0) throw ConfigError("unknown parameter name: " + name);
        return id;
    }

    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> index_;
};

/// Handle to a node on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Recorded computation graph. Ops execute eagerly; each node keeps the
/// value plus a closure that propagates gradients to its inputs. Nodes are
/// emitted in topological order, so one reverse sweep is a full backward pass.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    int size() const { return static_cast<int>(nodes_.size()); }

    const Tensor& value(Var v) const { return node(v).value; }

    /// Gradient of the last backward root w.r.t. node v (zeros if unreached).
    Tensor grad(Var v) const {
        const Node& n = node(v);
        Tensor g(n.value.shape);
        if (!n.grad.empty()) g.data = n.grad;
        return g;
    }

    Var input(Tensor t) { return emit(std::move(t), {}, nullptr); }

    Var input(Shape s, std::vector<double> d) { return input(Tensor(std::move(s), std::move(d))); }

    /// Leaf bound to a ParamStore entry; backward() accumulates into the store.
    Var param(const ParamStore& store, const std::string& name) {
        int pid = store.index_of(name);
        if (pid < 0) throw ConfigError("unknown parameter name: " + name);
        return param(store, pid);
    }

    Var param(const ParamStore& store, int pid) {
        Var v = emit(store.value(pid), {}, nullptr);
        nodes_.back().param_idx = pid;
        return v;
    }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        check_same(a, b, "add");
        Tensor out = value(a);
        const Tensor& tb = value(b);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
        return emit(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, const Node& n) {
            t.axpy(ia, n.grad, 1.0);
            t.axpy(ib, n.grad, 1.0);
        });
    }

    Var add_scalar(Var a, double c) {
        Tensor out = value(a);
        for (double& v : out.data) v += c;
        return emit(std::move(out), {a.id}, [ia = a.id](Tape& t, const Node& n) {
            t.axpy(ia, n.grad, 1.0);
        });
    }

    Var sub(Var a, Var b) {
        check_same(a, b, "sub");
        Tensor out = value(a);
        const Tensor& tb = value(b);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i];
        return emit(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, const Node& n) {
            t.axpy(ia, n.grad, 1.0);
            t.axpy(ib, n.grad, -1.0);
        });
    }

    Var sub_scalar(Var a, double c) { return add_scalar(a, -c); }

    Var mul(Var a, Var b) {
        check_same(a, b, "mul");
        Tensor out = value(a);
        const Tensor& tb = value(b);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
        return emit(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, const Node& n) {
            std::vector<double>& ga = t.gbuf(ia);
            std::vector<double>& gb = t.gbuf(ib);
            const std::vector<double>& da = t.nodes_[ia].value.data;
            const std::vector<double>& db = t.nodes_[ib].value.data;
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                ga[i] += n.grad[i] * db[i];
                gb[i] += n.grad[i] * da[i];
            }
        });
    }

    Var scale(Var a, double c) {
        Tensor out = value(a);
        for (double& v : out.data) v *= c;
        return emit(std::move(out), {a.id}, [ia = a.id, c](Tape& t, const Node& n) {
            t.axpy(ia, n.grad, c);
        });
    }

    Var leaky_relu(Var a, double slope) {
        Tensor out = value(a);
        for (double& v : out.data) v = v > 0.0 ? v : slope * v;
        return emit(std::move(out), {a.id}, [ia = a.id, slope](Tape& t, const Node& n) {
            std::vector<double>& ga = t.gbuf(ia);
            const std::vector<double>& x = t.nodes_[ia].value.data;
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                ga[i] += n.grad[i] * (x[i] > 0.0 ? 1.0 : slope);
        });
    }

    Var exp_(Var a) {
        Tensor out = value(a);
        for (double& v : out.data) v = std::exp(v);
        if (!out.finite()) throw NumericError("exp produced non-finite values");
        return emit(std::move(out), {a.id}, [ia = a.id](Tape& t, const Node& n) {
            std::vector<double>& ga = t.gbuf(ia);
            for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * n.value.data[i];
        });
    }

    Var log_(Var a) {
        Tensor out = value(a);
        for (double& v : out.data) {
            if (!(v > 0.0)) throw NumericError("log requires strictly positive input");
            v = std::log(v);
        }
        return emit(std::move(out), {a.id}, [ia = a.id](Tape& t, const Node& n) {
            std::vector<double>& ga = t.gbuf(ia);
            const std::vector<double>& x = t.nodes_[ia].value.data;
            for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] / x[i];
        });
    }

    // ---- linear algebra ----

    Var matmul(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0])
            throw ShapeError("matmul shape mismatch: " + shape_str(ta.shape) + " x " +
                             shape_str(tb.shape));
        const int m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
        Tensor out({m, n});
        gemm(false, false, m, n, k, ta.data.data(), tb.data.data(), out.data.data(), false);
        return emit(std::move(out), {a.id, b.id},
                    [ia = a.id, ib = b.id, m, k, n](Tape& t, const Node& node) {
                        // dA += dC * B^T; dB += A^T * dC
                        gemm(false, true, m, k, n, node.grad.data(),
                             t.nodes_[ib].value.data.data(), t.gbuf(ia).data(), true);
                        gemm(true, false, k, n, m, t.nodes_[ia].value.data.data(),
                             node.grad.data(), t.gbuf(ib).data(), true);
                    });
    }

    /// x*W + bias broadcast over rows. x: M x K, w: K x N, b: [N] or [1,N].
    Var affine(Var x, Var w, Var b) {
        const Tensor& tx = value(x);
        const Tensor& tw = value(w);
        const Tensor& tb = value(b);
        if (tx.rank() != 2 || tw.rank() != 2 || tx.shape[1] != tw.shape[0])
            throw ShapeError("affine shape mismatch: " + shape_str(tx.shape) + " x " +
                             shape_str(tw.shape));
        const int m = tx.shape[0], k = tx.shape[1], n = tw.shape[1];
        if (tb.size() != n)
            throw ShapeError("affine bias length " + std::to_string(tb.size()) + " vs cols " +
                             std::to_string(n));
        Tensor out({m, n});
        gemm(false, false, m, n, k, tx.data.data(), tw.data.data(), out.data.data(), false);
        for (int r = 0; r < m; ++r) {
            double* row = out.data.data() + static_cast<std::size_t>(r) * n;
            for (int j = 0; j < n; ++j) row[j] += tb.data[j];
        }
        return emit(std::move(out), {x.id, w.id, b.id},
                    [ix = x.id, iw = w.id, ib = b.id, m, k, n](Tape& t, const Node& node) {
                        gemm(false, true, m, k, n, node.grad.data(),
                             t.nodes_[iw].value.data.data(), t.gbuf(ix).data(), true);
                        gemm(true, false, k, n, m, t.nodes_[ix].value.data.data(),
                             node.grad.data(), t.gbuf(iw).data(), true);
                        std::vector<double>& gb = t.gbuf(ib);
                        for (int r = 0; r < m; ++r) {
                            const double* g = node.grad.data() + static_cast<std::size_t>(r) * n;
                            for (int j = 0; j < n; ++j) gb[j] += g[j];
                        }
                    });
    }

    // ---- reductions ----

    Var reduce_max(Var a, int axis) {
        const Tensor& ta = value(a);
        auto [outer, an, inner] = reduce_dims(ta.shape, axis);
        Tensor out(reduced_shape(ta.shape, axis));
        std::vector<std::int64_t> arg(out.data.size());
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t i = 0; i < inner; ++i) {
                double best = -std::numeric_limits<double>::infinity();
                std::int64_t best_idx = -1;
                for (std::int64_t j = 0; j < an; ++j) {
                    std::int64_t idx = (o * an + j) * inner + i;
                    if (ta.data[idx] > best) {  // ties keep the lowest index
                        best = ta.data[idx];
                        best_idx = idx;
                    }
                }
                out.data[o * inner + i] = best;
                arg[o * inner + i] = best_idx;
            }
        }
        return emit(std::move(out), {a.id},
                    [ia = a.id, arg = std::move(arg)](Tape& t, const Node& n) {
                        std::vector<double>& ga = t.gbuf(ia);
                        for (std::size_t e = 0; e < n.grad.size(); ++e) ga[arg[e]] += n.grad[e];
                    });
    }

    Var reduce_sum(Var a, int axis) {
        const Tensor& ta = value(a);
        auto [outer, an, inner] = reduce_dims(ta.shape, axis);
        Tensor out(reduced_shape(ta.shape, axis));
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t j = 0; j < an; ++j)
                for (std::int64_t i = 0; i < inner; ++i)
                    out.data[o * inner + i] += ta.data[(o * an + j) * inner + i];
        return emit(std::move(out), {a.id},
                    [ia = a.id, outer, an, inner](Tape& t, const Node& n) {
                        std::vector<double>& ga = t.gbuf(ia);
                        for (std::int64_t o = 0; o < outer; ++o)
                            for (std::int64_t j = 0; j < an; ++j)
                                for (std::int64_t i = 0; i < inner; ++i)
                                    ga[(o * an + j) * inner + i] += n.grad[o * inner + i];
                    });
    }

    Var sum_all(Var a) {
        const Tensor& ta = value(a);
        double s = 0.0;
        for (double v : ta.data) s += v;
        return emit(Tensor::scalar(s), {a.id}, [ia = a.id](Tape& t, const Node& n) {
            std::vector<double>& ga = t.gbuf(ia);
            for (double& g : ga) g += n.grad[0];
        });
    }

    // ---- structure ----

    Var concat_last(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (ta.rank() != tb.rank())
            throw ShapeError("concat_last rank mismatch: " + shape_str(ta.shape) + " vs " +
                             shape_str(tb.shape));
        Shape lead_a(ta.shape.begin(), ta.shape.end() - 1);
        Shape lead_b(tb.shape.begin(), tb.shape.end() - 1);
        if (lead_a != lead_b)
            throw ShapeError("concat_last leading dims mismatch: " + shape_str(ta.shape) +
                             " vs " + shape_str(tb.shape));
        const std::int64_t rows = lead_a.empty() ? 1 : shape_numel(lead_a);
        const int ca = ta.shape.back(), cb = tb.shape.back();
        Shape os = ta.shape;
        os.back() = ca + cb;
        Tensor out(os);
        for (std::int64_t r = 0; r < rows; ++r) {
            std::copy_n(ta.data.begin() + r * ca, ca, out.data.begin() + r * (ca + cb));
            std::copy_n(tb.data.begin() + r * cb, cb, out.data.begin() + r * (ca + cb) + ca);
        }
        return emit(std::move(out), {a.id, b.id},
                    [ia = a.id, ib = b.id, rows, ca, cb](Tape& t, const Node& n) {
                        std::vector<double>& ga = t.gbuf(ia);
                        std::vector<double>& gb = t.gbuf(ib);
                        for (std::int64_t r = 0; r < rows; ++r) {
                            for (int c = 0; c < ca; ++c) ga[r * ca + c] += n.grad[r * (ca + cb) + c];
                            for (int c = 0; c < cb; ++c)
                                gb[r * cb + c] += n.grad[r * (ca + cb) + ca + c];
                        }
                    });
    }

    Var reshape(Var a, Shape s) {
        const Tensor& ta = value(a);
        if (shape_numel(s) != ta.size())
            throw ShapeError("reshape " + shape_str(ta.shape) + " -> " + shape_str(s) +
                             " changes element count");
        Tensor out(std::move(s), ta.data);
        return emit(std::move(out), {a.id}, [ia = a.id](Tape& t, const Node& n) {
            std::vector<double>& ga = t.gbuf(ia);
            for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
        });
    }

    Var slice_cols(Var a, int c0, int c1) {
        const Tensor& ta = value(a);
        if (ta.rank() != 2) throw ShapeError("slice_cols needs rank 2, got " + shape_str(ta.shape));
        const int rows = ta.shape[0], cols = ta.shape[1];
        if (c0 < 0 || c1 > cols || c0 >= c1)
            throw ShapeError("slice_cols range [" + std::to_string(c0) + "," +
                             std::to_string(c1) + ") out of " + std::to_string(cols));
        Tensor out({rows, c1 - c0});
        for (int r = 0; r < rows; ++r)
            std::copy_n(ta.data.begin() + static_cast<std::size_t>(r) * cols + c0, c1 - c0,
                        out.data.begin() + static_cast<std::size_t>(r) * (c1 - c0));
        return emit(std::move(out), {a.id},
                    [ia = a.id, rows, cols, c0, w = c1 - c0](Tape& t, const Node& n) {
                        std::vector<double>& ga = t.gbuf(ia);
                        for (int r = 0; r < rows; ++r)
                            for (int c = 0; c < w; ++c)
                                ga[static_cast<std::size_t>(r) * cols + c0 + c] +=
                                    n.grad[static_cast<std::size_t>(r) * w + c];
                    });
    }

    Var gather_rows(Var a, std::vector<int> idx) {
        const Tensor& ta = value(a);
        if (ta.rank() < 2) throw ShapeError("gather_rows needs rank >= 2");
        if (idx.empty()) throw ShapeError("gather_rows with empty index list");
        const int rows = ta.shape[0];
        const std::int64_t cols = ta.size() / rows;
        for (int r : idx)
            if (r < 0 || r >= rows) throw ShapeError("gather_rows index out of range");
        Shape os = ta.shape;
        os[0] = static_cast<int>(idx.size());
        Tensor out(os);
        for (std::size_t r = 0; r < idx.size(); ++r)
            std::copy_n(ta.data.begin() + idx[r] * cols, cols, out.data.begin() + r * cols);
        return emit(std::move(out), {a.id},
                    [ia = a.id, idx = std::move(idx), cols](Tape& t, const Node& n) {
                        std::vector<double>& ga = t.gbuf(ia);
                        for (std::size_t r = 0; r < idx.size(); ++r)
                            for (std::int64_t c = 0; c < cols; ++c)
                                ga[idx[r] * cols + c] += n.grad[r * cols + c];
                    });
    }

    Var tile_rows(Var a, int rows) {
        const Tensor& ta = value(a);
        if (!(ta.rank() == 1 || (ta.rank() == 2 && ta.shape[0] == 1)))
            throw ShapeError("tile_rows needs [C] or [1,C], got " + shape_str(ta.shape));
        const int cols = static_cast<int>(ta.size());
        Tensor out({rows, cols});
        for (int r = 0; r < rows; ++r)
            std::copy_n(ta.data.begin(), cols, out.data.begin() + static_cast<std::size_t>(r) * cols);
        return emit(std::move(out), {a.id}, [ia = a.id, rows, cols](Tape& t, const Node& n) {
            std::vector<double>& ga = t.gbuf(ia);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) ga[c] += n.grad[static_cast<std::size_t>(r) * cols + c];
        });
    }

    /// out[r,c] = a[r,c] * s[r]; s has shape [M] or [M,1].
    Var scale_rows(Var a, Var s) {
        const Tensor& ta = value(a);
        const Tensor& ts = value(s);
        if (ta.rank() != 2) throw ShapeError("scale_rows needs rank-2 input");
        const int rows = ta.shape[0], cols = ta.shape[1];
        if (ts.size() != rows)
            throw ShapeError("scale_rows scale length " + std::to_string(ts.size()) +
                             " vs rows " + std::to_string(rows));
        Tensor out({rows, cols});
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
                out.data[static_cast<std::size_t>(r) * cols + c] =
                    ta.data[static_cast<std::size_t>(r) * cols + c] * ts.data[r];
        return emit(std::move(out), {a.id, s.id},
                    [ia = a.id, is = s.id, rows, cols](Tape& t, const Node& n) {
                        std::vector<double>& ga = t.gbuf(ia);
                        std::vector<double>& gs = t.gbuf(is);
                        const std::vector<double>& da = t.nodes_[ia].value.data;
                        const std::vector<double>& ds = t.nodes_[is].value.data;
                        for (int r = 0; r < rows; ++r) {
                            double acc = 0.0;
                            for (int c = 0; c < cols; ++c) {
                                const std::size_t k = static_cast<std::size_t>(r) * cols + c;
                                ga[k] += n.grad[k] * ds[r];
                                acc += n.grad[k] * da[k];
                            }
                            gs[r] += acc;
                        }
                    });
    }

    /// Fused edge features: out[r] = [h[centers[r]], h[neighbors[r]] - h[centers[r]]].
    Var edge_features(Var h, std::vector<int> centers, std::vector<int> neighbors) {
        const Tensor& th = value(h);
        if (th.rank() != 2) throw ShapeError("edge_features needs rank-2 features");
        if (centers.size() != neighbors.size() || centers.empty())
            throw ShapeError("edge_features index lists must be equal-length and non-empty");
        const int n_rows = th.shape[0], c = th.shape[1];
        for (std::size_t r = 0; r < centers.size(); ++r)
            if (centers[r] < 0 || centers[r] >= n_rows || neighbors[r] < 0 || neighbors[r] >= n_rows)
                throw ShapeError("edge_features index out of range");
        const int m = static_cast<int>(centers.size());
        Tensor out({m, 2 * c});
        for (int r = 0; r < m; ++r) {
            const double* hc = th.data.data() + static_cast<std::size_t>(centers[r]) * c;
            const double* hn = th.data.data() + static_cast<std::size_t>(neighbors[r]) * c;
            double* o = out.data.data() + static_cast<std::size_t>(r) * 2 * c;
            for (int j = 0; j < c; ++j) {
                o[j] = hc[j];
                o[c + j] = hn[j] - hc[j];
            }
        }
        return emit(std::move(out), {h.id},
                    [ih = h.id, centers = std::move(centers), neighbors = std::move(neighbors),
                     c](Tape& t, const Node& n) {
                        std::vector<double>& gh = t.gbuf(ih);
                        for (std::size_t r = 0; r < centers.size(); ++r) {
                            const double* g = n.grad.data() + r * 2 * c;
                            double* gc = gh.data() + static_cast<std::size_t>(centers[r]) * c;
                            double* gn = gh.data() + static_cast<std::size_t>(neighbors[r]) * c;
                            for (int j = 0; j < c; ++j) {
                                gc[j] += g[j] - g[c + j];
                                gn[j] += g[c + j];
                            }
                        }
                    });
    }

    /// Per-part componentwise max over point rows; empty parts yield zero rows.
    Var part_max_pool(Var h, const std::vector<std::vector<int>>& parts) {
        const Tensor& th = value(h);
        if (th.rank() != 2) throw ShapeError("part_max_pool needs rank-2 features");
        const int n_rows = th.shape[0], c = th.shape[1];
        const int v = static_cast<int>(parts.size());
        Tensor out({v, c});
        std::vector<std::int64_t> arg(static_cast<std::size_t>(v) * c, -1);
        for (int p = 0; p < v; ++p) {
            if (parts[p].empty()) continue;
            for (int j = 0; j < c; ++j) {
                double best = -std::numeric_limits<double>::infinity();
                std::int64_t best_row = -1;
                for (int row : parts[p]) {
                    if (row < 0 || row >= n_rows) throw ShapeError("part_max_pool index out of range");
                    double val = th.data[static_cast<std::size_t>(row) * c + j];
                    if (val > best) {
                        best = val;
                        best_row = row;
                    }
                }
                out.data[static_cast<std::size_t>(p) * c + j] = best;
                arg[static_cast<std::size_t>(p) * c + j] = best_row * c + j;
            }
        }
        return emit(std::move(out), {h.id},
                    [ih = h.id, arg = std::move(arg)](Tape& t, const Node& n) {
                        std::vector<double>& gh = t.gbuf(ih);
                        for (std::size_t e = 0; e < n.grad.size(); ++e)
                            if (arg[e] >= 0) gh[arg[e]] += n.grad[e];
                    });
    }

    // ---- probability ----

    /// Masked softmax along an axis. Masked entries are exactly zero; the
    /// unmasked entries of each slice sum to one. A fully masked slice is an error.
    Var softmax_masked(Var a, const std::vector<char>& mask, int axis) {
        const Tensor& ta = value(a);
        if (static_cast<std::int64_t>(mask.size()) != ta.size())
            throw ShapeError("softmax_masked mask size mismatch");
        auto [outer, an, inner] = reduce_dims(ta.shape, axis);
        Tensor out(ta.shape);
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t i = 0; i < inner; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (std::int64_t j = 0; j < an; ++j) {
                    std::int64_t idx = (o * an + j) * inner + i;
                    if (mask[idx] && ta.data[idx] > mx) mx = ta.data[idx];
                }
                if (mx == -std::numeric_limits<double>::infinity())
                    throw NumericError("softmax_masked: fully masked slice");
                double sum = 0.0;
                for (std::int64_t j = 0; j < an; ++j) {
                    std::int64_t idx = (o * an + j) * inner + i;
                    double e = mask[idx] ? std::exp(ta.data[idx] - mx) : 0.0;
                    out.data[idx] = e;
                    sum += e;
                }
                for (std::int64_t j = 0; j < an; ++j) out.data[(o * an + j) * inner + i] /= sum;
            }
        }
        return emit(std::move(out), {a.id},
                    [ia = a.id, mask, outer, an, inner](Tape& t, const Node& n) {
                        std::vector<double>& ga = t.gbuf(ia);
                        for (std::int64_t o = 0; o < outer; ++o) {
                            for (std::int64_t i = 0; i < inner; ++i) {
                                double dot = 0.0;
                                for (std::int64_t j = 0; j < an; ++j) {
                                    std::int64_t idx = (o * an + j) * inner + i;
                                    dot += n.grad[idx] * n.value.data[idx];
                                }
                                for (std::int64_t j = 0; j < an; ++j) {
                                    std::int64_t idx = (o * an + j) * inner + i;
                                    if (mask[idx])
                                        ga[idx] += n.value.data[idx] * (n.grad[idx] - dot);
                                }
                            }
                        }
                    });
    }

    /// Mean over rows of -log softmax(logits)[target]. Returns a scalar.
    Var cross_entropy_logits(Var logits, const std::vector<int>& targets) {
        const Tensor& tl = value(logits);
        if (tl.rank() != 2) throw ShapeError("cross_entropy_logits needs rank-2 logits");
        const int m = tl.shape[0], k = tl.shape[1];
        if (static_cast<int>(targets.size()) != m)
            throw ShapeError("cross_entropy_logits target count mismatch");
        std::vector<double> probs(static_cast<std::size_t>(m) * k);
        double total = 0.0;
        for (int r = 0; r < m; ++r) {
            if (targets[r] < 0 || targets[r] >= k)
                throw DataError("cross_entropy_logits target class " + std::to_string(targets[r]) +
                                " out of [0," + std::to_string(k) + ")");
            const double* row = tl.data.data() + static_cast<std::size_t>(r) * k;
            double mx = *std::max_element(row, row + k);
            double sum = 0.0;
            for (int j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
            double lse = mx + std::log(sum);
            total += lse - row[targets[r]];
            for (int j = 0; j < k; ++j)
                probs[static_cast<std::size_t>(r) * k + j] = std::exp(row[j] - lse);
        }
        double loss = total / m;
        if (!std::isfinite(loss)) throw NumericError("cross_entropy_logits produced non-finite loss");
        return emit(Tensor::scalar(loss), {logits.id},
                    [il = logits.id, targets, probs = std::move(probs), m, k](Tape& t,
                                                                              const Node& n) {
                        std::vector<double>& gl = t.gbuf(il);
                        const double g = n.grad[0] / m;
                        for (int r = 0; r < m; ++r)
                            for (int j = 0; j < k; ++j)
                                gl[static_cast<std::size_t>(r) * k + j] +=
                                    g * (probs[static_cast<std::size_t>(r) * k + j] -
                                         (j == targets[r] ? 1.0 : 0.0));
                    });
    }

    /// Inverted dropout: zero with probability `rate`, scale survivors by
    /// 1/(1-rate). Identity when not training.
    Var dropout(Var a, double rate, bool training, std::mt19937_64& rng) {
        if (rate < 0.0 || rate >= 1.0)
            throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(rate));
        if (!training || rate == 0.0) {
            Tensor out = value(a);
            return emit(std::move(out), {a.id}, [ia = a.id](Tape& t, const Node& n) {
                t.axpy(ia, n.grad, 1.0);
            });
        }
        const Tensor& ta = value(a);
        const double keep_scale = 1.0 / (1.0 - rate);
        std::uniform_real_distribution<double> dist(0.0, 1.0);
        std::vector<char> keep(ta.data.size());
        Tensor out(ta.shape);
        for (std::size_t i = 0; i < ta.data.size(); ++i) {
            keep[i] = dist(rng) >= rate ? 1 : 0;
            out.data[i] = keep[i] ? ta.data[i] * keep_scale : 0.0;
        }
        return emit(std::move(out), {a.id},
                    [ia = a.id, keep = std::move(keep), keep_scale](Tape& t, const Node& n) {
                        std::vector<double>& ga = t.gbuf(ia);
                        for (std::size_t i = 0; i < n.grad.size(); ++i)
                            if (keep[i]) ga[i] += n.grad[i] * keep_scale;
                    });
    }

    /// Overwrite a node's stored value in place (shape-preserving). Downstream
    /// nodes are unaffected because ops execute eagerly; used by verification
    /// harnesses to inject values mid-forward.
    void poke_value(Var v, const Tensor& t) {
        Node& n = node_mut(v);
        if (!same_shape(n.value.shape, t.shape))
            throw ShapeError("poke_value shape mismatch: " + shape_str(n.value.shape) + " vs " +
                             shape_str(t.shape));
        n.value.data = t.data;
    }

    // ---- backward ----

    /// Reverse sweep from a scalar root. Visits each reachable node once
    /// (emission order is topological). If `store` is given, gradients of
    /// bound parameter leaves are accumulated into it.
    void backward(Var root, ParamStore* store = nullptr) {
        const Node& rn = node(root);
        if (rn.value.size() != 1)
            throw ShapeError("backward root must be scalar, got shape " + shape_str(rn.value.shape));
        for (auto& n : nodes_) {
            n.grad.clear();
            n.live = false;
        }
        gbuf(root.id)[0] = 1.0;
        nodes_[root.id].live = true;
        for (int id = root.id; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.live) continue;
            for (int in : n.inputs) nodes_[in].live = true;
            if (n.backward) n.backward(*this, n);
        }
        if (store) accumulate_param_grads(*store);
    }

    /// Adds gradients of parameter-bound leaves into the store accumulators.
    void accumulate_param_grads(ParamStore& store) const {
        for (const Node& n : nodes_) {
            if (n.param_idx < 0 || n.grad.empty()) continue;
            std::vector<double>& g = store.grad(n.param_idx);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    }

    /// Per-parameter gradient sums from this tape, indexed like the store.
    std::vector<std::vector<double>> export_param_grads(int n_params) const {
        std::vector<std::vector<double>> out(n_params);
        for (const Node& n : nodes_) {
            if (n.param_idx < 0 || n.grad.empty()) continue;
            std::vector<double>& g = out[n.param_idx];
            if (g.empty()) g.assign(n.grad.size(), 0.0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        return out;
    }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        std::function<void(Tape&, const Node&)> backward;
        std::vector<int> inputs;
        int param_idx = -1;
        bool live = false;
    };

    const Node& node(Var v) const {
        if (v.id < 0 || v.id >= size()) throw Error("invalid tape variable");
        return nodes_[v.id];
    }

    Node& node_mut(Var v) {
        if (v.id < 0 || v.id >= size()) throw Error("invalid tape variable");
        return nodes_[v.id];
    }

    Var emit(Tensor val, std::vector<int> inputs, std::function<void(Tape&, const Node&)> back) {
        Node n;
        n.value = std::move(val);
        n.inputs = std::move(inputs);
        n.backward = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<double>& gbuf(int id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad.assign(n.value.data.size(), 0.0);
        return n.grad;
    }

    void axpy(int id, const std::vector<double>& g, double alpha) {
        std::vector<double>& ga = gbuf(id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += alpha * g[i];
    }

    void check_same(Var a, Var b, const char* op) const {
        const Tensor& ta = node(a).value;
        const Tensor& tb = node(b).value;
        if (!same_shape(ta.shape, tb.shape))
            throw ShapeError(std::string(op) + " shape mismatch: " + shape_str(ta.shape) +
                             " vs " + shape_str(tb.shape));
    }

    static std::tuple<std::int64_t, std::int64_t, std::int64_t> reduce_dims(const Shape& s,
                                                                            int axis) {
        if (axis < 0 || axis >= static_cast<int>(s.size()))
            throw ShapeError("axis " + std::to_string(axis) + " invalid for shape " + shape_str(s));
        std::int64_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= s[i];
        for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) inner *= s[i];
        return {outer, s[axis], inner};
    }

    static Shape reduced_shape(const Shape& s, int axis) {
        Shape out;
        for (int i = 0; i < static_cast<int>(s.size()); ++i)
            if (i != axis) out.push_back(s[i]);
        if (out.empty()) out.push_back(1);
        return out;
    }

    // deque keeps node references stable while ops append
    std::deque<Node> nodes_;
};

}  // namespace dhgcn
