#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "dhgcn/autodiff.hpp"
#include "dhgcn/errors.hpp"
#include "dhgcn/geometry.hpp"
#include "dhgcn/optim.hpp"
#include "dhgcn/partition.hpp"
#include "dhgcn/rng.hpp"

namespace dhgcn {

/// How predicted hop logits turn into an attention kernel weight: `soft`
/// takes the softmax-probability-weighted kernel value, `argmax` evaluates
/// the kernel at the most likely hop (constant w.r.t. gradients).
enum class KernelMode { soft, argmax };

enum class LossMode { per_layer, last_layer };

/// G(x) = exp(-x^2 / (2 sigma^2)) / sqrt(2 pi)
inline double gaussian_kernel(double x, double sigma2) {
    if (sigma2 <= 0.0) throw ConfigError("gaussian kernel needs sigma2 > 0");
    return std::exp(-x * x / (2.0 * sigma2)) / std::sqrt(2.0 * std::numbers::pi);
}

struct ModelConfig {
    int layers = 3;
    int channels = 64;
    int k = 16;
    int split = 3;
    int heads = 4;
    double sigma2 = 1.0;
    std::vector<int> lambda;  // empty: 0 for the first layer, 1 afterwards
    int fusion_dim = 256;
    KernelMode kernel_mode = KernelMode::soft;
    LossMode loss_mode = LossMode::per_layer;
    bool avg_pool = false;
    std::uint64_t seed = 1;

    int max_hop() const { return split + 1; }
    int hop_classes() const { return split + 2; }
    int descriptor_dim() const { return avg_pool ? 2 * fusion_dim : fusion_dim; }

    std::vector<int> lambda_schedule() const {
        if (!lambda.empty()) return lambda;
        std::vector<int> sched(layers, 1);
        sched[0] = 0;
        return sched;
    }

    void validate() const {
        if (layers < 1) throw ConfigError("layers must be >= 1");
        if (heads < 1 || channels % heads != 0)
            throw ConfigError("channels (" + std::to_string(channels) +
                              ") must be divisible by heads (" + std::to_string(heads) + ")");
        if (split < 2) throw ConfigError("split must be >= 2");
        if (sigma2 <= 0.0) throw ConfigError("sigma2 must be > 0");
        if (k < 1) throw ConfigError("k must be >= 1");
        if (fusion_dim < 1) throw ConfigError("fusion_dim must be >= 1");
        if (!lambda.empty() && static_cast<int>(lambda.size()) != layers)
            throw ConfigError("lambda list length must equal layers");
        for (int l : lambda)
            if (l != 0 && l != 1) throw ConfigError("lambda entries must be 0 or 1");
    }
};

/// Shared linear stack; weights live in a ParamStore and are bound onto the
/// tape at apply time.
struct Mlp {
    struct Layer {
        int w = -1;  // param id, shape [in,out]
        int b = -1;  // param id, shape [out]
    };
    std::vector<Layer> layers;
    double slope = 0.2;
    bool activate_last = true;

    Var apply(Tape& tape, const ParamStore& params, Var x) const {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            Var w = tape.param(params, layers[i].w);
            Var b = tape.param(params, layers[i].b);
            x = tape.affine(x, w, b);
            if (activate_last || i + 1 < layers.size()) x = tape.leaky_relu(x, slope);
        }
        return x;
    }

    int out_dim(const ParamStore& params) const {
        return params.value(layers.back().w).shape[1];
    }
};

inline Mlp make_mlp(ParamStore& params, const std::string& prefix, const std::vector<int>& dims,
                    bool activate_last, std::mt19937_64& rng, double slope = 0.2) {
    if (dims.size() < 2) throw ConfigError("mlp needs at least [in,out] dims");
    Mlp mlp;
    mlp.activate_last = activate_last;
    mlp.slope = slope;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        Mlp::Layer layer;
        layer.w = params.add(prefix + "." + std::to_string(i) + ".w",
                             kaiming_init({dims[i], dims[i + 1]}, dims[i], slope, rng));
        layer.b = params.add(prefix + "." + std::to_string(i) + ".b",
                             fan_in_init({dims[i + 1]}, dims[i], rng));
        mlp.layers.push_back(layer);
    }
    return mlp;
}

// ---- stage ops ----

/// EdgeConv-style point convolution: kNN in the current feature space,
/// per-edge [h_i, h_j - h_i] through the shared MLP, max over neighbors.
/// Neighbor indices are recomputed per call unless `cached` is given.
inline Var point_feature_conv(Tape& tape, const ParamStore& params, Var h, int k, const Mlp& gp,
                              const std::vector<int>* cached = nullptr,
                              std::vector<int>* knn_out = nullptr) {
    const Tensor& th = tape.value(h);
    const int n = th.shape[0];
    if (k > n) throw ConfigError("point_feature_conv: k > point count");
    std::vector<int> idx;
    if (cached) {
        idx = *cached;
    } else {
        idx = knn(th, th, k);
    }
    if (knn_out) *knn_out = idx;
    std::vector<int> centers(static_cast<std::size_t>(n) * k);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) centers[static_cast<std::size_t>(i) * k + j] = i;
    Var e = tape.edge_features(h, std::move(centers), idx);
    e = gp.apply(tape, params, e);
    const int c = tape.value(e).shape[1];
    return tape.reduce_max(tape.reshape(e, {n, k, c}), 1);
}

/// Componentwise max over all points; returns a 1 x C row.
inline Var global_max_pool(Tape& tape, Var h) {
    const int c = tape.value(h).shape[1];
    return tape.reshape(tape.reduce_max(h, 0), {1, c});
}

/// Per-part max pooling to V x C (zero rows for empty parts).
inline Var part_max_pool(Tape& tape, Var h, const Partition& partition) {
    return tape.part_max_pool(h, partition.parts);
}

/// Edge features [f_i, f_j - f_i] for every ordered pair of the complete
/// part graph; rows ordered i-major. Output (V'^2) x 2C.
inline Var part_edge_features(Tape& tape, Var f) {
    const int vp = tape.value(f).shape[0];
    std::vector<int> centers(static_cast<std::size_t>(vp) * vp);
    std::vector<int> neighbors(centers.size());
    for (int i = 0; i < vp; ++i)
        for (int j = 0; j < vp; ++j) {
            centers[static_cast<std::size_t>(i) * vp + j] = i;
            neighbors[static_cast<std::size_t>(i) * vp + j] = j;
        }
    return tape.edge_features(f, std::move(centers), std::move(neighbors));
}

inline Var part_conv(Tape& tape, const ParamStore& params, const Mlp& gm, Var e) {
    return gm.apply(tape, params, e);
}

inline Var hop_head(Tape& tape, const ParamStore& params, const Mlp& gh, Var e_prime) {
    return gh.apply(tape, params, e_prime);
}

/// Mean cross-entropy over the given pair targets (valid pairs only; callers
/// pass targets for the compacted non-empty graph).
inline Var hop_distance_loss(Tape& tape, Var logits, const std::vector<int>& targets) {
    if (targets.empty()) throw DataError("hop_distance_loss: no valid pairs");
    return tape.cross_entropy_logits(logits, targets);
}

/// Per-pair kernel weight from hop logits. soft: sum_k softmax(logits)_k G(k);
/// argmax: G(argmax_k logits), treated as a constant. Returns shape [M].
inline Var kernel_weight(Tape& tape, Var logits, double sigma2, KernelMode mode) {
    const Tensor& tl = tape.value(logits);
    if (tl.rank() != 2) throw ShapeError("kernel_weight needs rank-2 logits");
    const int m = tl.shape[0], k = tl.shape[1];
    if (mode == KernelMode::argmax) {
        Tensor w({m});
        for (int r = 0; r < m; ++r) {
            const double* row = tl.data.data() + static_cast<std::size_t>(r) * k;
            const int best = static_cast<int>(std::max_element(row, row + k) - row);
            w.data[r] = gaussian_kernel(static_cast<double>(best), sigma2);
        }
        return tape.input(std::move(w));
    }
    std::vector<char> mask(static_cast<std::size_t>(m) * k, 1);
    Var probs = tape.softmax_masked(logits, mask, 1);
    Tensor kvec({k, 1});
    for (int j = 0; j < k; ++j) kvec.data[j] = gaussian_kernel(static_cast<double>(j), sigma2);
    return tape.reshape(tape.matmul(probs, tape.input(std::move(kvec))), {m});
}

/// Attention scores for one head. lambda=1 scales the head's edge features by
/// the kernel weight before the scalar map; lambda=0 ignores the weights
/// entirely. e_slice is (V'^2) x (C/H); returns (V'^2) x 1.
inline Var hga_scores(Tape& tape, const ParamStore& params, const Mlp& ga, Var e_slice, Var w,
                      int lambda) {
    if (lambda != 0 && lambda != 1) throw ConfigError("lambda must be 0 or 1");
    Var x = e_slice;
    if (lambda == 1) {
        if (!w.valid()) throw ConfigError("hga_scores: lambda=1 requires kernel weights");
        x = tape.scale_rows(e_slice, w);
    }
    return ga.apply(tape, params, x);
}

/// Row softmax over neighbors: scores (V'^2) x 1 -> alpha V' x V'.
inline Var hga_normalize(Tape& tape, Var scores, int vp) {
    Var t2 = tape.reshape(scores, {vp, vp});
    std::vector<char> mask(static_cast<std::size_t>(vp) * vp, 1);
    return tape.softmax_masked(t2, mask, 1);
}

/// f~_i = max_j alpha_ij * e'_ij for one head slice. alpha V' x V',
/// e_slice (V'^2) x Ch; returns V' x Ch.
inline Var hga_aggregate(Tape& tape, Var alpha, Var e_slice) {
    const int vp = tape.value(alpha).shape[0];
    const int ch = tape.value(e_slice).shape[1];
    Var weighted = tape.scale_rows(e_slice, tape.reshape(alpha, {vp * vp}));
    return tape.reduce_max(tape.reshape(weighted, {vp, vp, ch}), 1);
}

/// h~_j = f~_{part(j)} + h_j. `compact_assignment` maps each point to its
/// part's row in the compacted part tensor.
inline Var revise_point_features(Tape& tape, Var f_tilde, Var h,
                                 const std::vector<int>& compact_assignment) {
    return tape.add(h, tape.gather_rows(f_tilde, compact_assignment));
}

inline Var total_selfsup_loss(Tape& tape, const std::vector<Var>& losses, LossMode mode) {
    if (losses.empty()) throw ConfigError("total_selfsup_loss: no layer losses");
    if (mode == LossMode::last_layer) return losses.back();
    Var total = losses[0];
    for (std::size_t i = 1; i < losses.size(); ++i) total = tape.add(total, losses[i]);
    return total;
}

// ---- whole network ----

struct ForwardOptions {
    bool training = false;
    /// Per-layer kNN indices to reuse (fixes topology for gradient checks).
    const std::vector<std::vector<int>>* knn_cache = nullptr;
    std::vector<std::vector<int>>* knn_out = nullptr;
    /// Per-layer replacement of the predicted hop logits (compact (V'^2) x K).
    const std::vector<Tensor>* override_logits = nullptr;
    /// Added to the pooled features of empty parts (verification hook).
    double perturb_empty = 0.0;
};

struct TapeForward {
    std::vector<int> valid_ids;
    std::vector<int> hop_targets;  // compact, row i-major
    std::vector<Var> point_features;
    std::vector<Var> part_features;
    std::vector<Var> hop_logits;
    std::vector<std::vector<Var>> attention;  // [layer][head], V' x V'
    std::vector<Var> layer_losses;
    Var total_loss;
    Var descriptor;
};

struct LayerOutput {
    Tensor point_features;
    Tensor part_features;
    Tensor hop_logits;
    std::vector<Tensor> attention;
    double loss = 0.0;
};

struct ForwardOutput {
    int V = 0;
    std::vector<int> valid_ids;
    std::vector<int> hop_targets;
    std::vector<LayerOutput> layers;
    Tensor descriptor;
    double total_loss = 0.0;
};

class Model {
public:
    ModelConfig cfg;
    ParamStore params;

    explicit Model(ModelConfig config) : cfg(std::move(config)) {
        cfg.validate();
        auto rng = make_rng({cfg.seed, 0x696e6974ULL});
        const int c = cfg.channels;
        for (int l = 0; l < cfg.layers; ++l) {
            const std::string p = "layer" + std::to_string(l);
            const int in = l == 0 ? 3 : c;
            LayerParams lp;
            lp.gp = make_mlp(params, p + ".gp", {2 * in, c}, true, rng);
            lp.gm = make_mlp(params, p + ".gm", {2 * c, c, c}, true, rng);
            lp.gh = make_mlp(params, p + ".gh", {c, c, cfg.hop_classes()}, false, rng);
            for (int h = 0; h < cfg.heads; ++h)
                lp.ga.push_back(make_mlp(params, p + ".ga" + std::to_string(h),
                                         {c / cfg.heads, 1}, false, rng));
            layers_.push_back(std::move(lp));
        }
        fusion_ = make_mlp(params, "fusion", {cfg.layers * c, cfg.fusion_dim}, true, rng);
    }

    TapeForward forward(Tape& tape, const PointCloud& cloud, const Partition& partition,
                        const HopMatrix& hops, const ForwardOptions& opt = {}) const {
        if (partition.split != cfg.split)
            throw ConfigError("partition split does not match model config");
        if (hops.V != partition.num_parts() || hops.delta != cfg.max_hop())
            throw ConfigError("hop matrix does not match model config");
        const int n = cloud.size();
        if (n < cfg.k) throw ConfigError("cloud smaller than k");

        TapeForward out;
        out.valid_ids = partition.valid_ids();
        const int vp = static_cast<int>(out.valid_ids.size());
        out.hop_targets.reserve(static_cast<std::size_t>(vp) * vp);
        for (int a = 0; a < vp; ++a)
            for (int b = 0; b < vp; ++b)
                out.hop_targets.push_back(hops.at(out.valid_ids[a], out.valid_ids[b]));
        const std::vector<int> compact = partition.compact_assignment();
        const std::vector<int> lambda = cfg.lambda_schedule();
        const int ch = cfg.channels / cfg.heads;

        if (opt.knn_out) opt.knn_out->assign(cfg.layers, {});
        Var h = tape.input(cloud.coords());
        for (int l = 0; l < cfg.layers; ++l) {
            const LayerParams& lp = layers_[l];
            const std::vector<int>* cached =
                opt.knn_cache ? &(*opt.knn_cache)[l] : nullptr;
            std::vector<int>* knn_sink = opt.knn_out ? &(*opt.knn_out)[l] : nullptr;
            h = point_feature_conv(tape, params, h, cfg.k, lp.gp, cached, knn_sink);

            Var f_full = part_max_pool(tape, h, partition);
            if (opt.perturb_empty != 0.0) {
                Tensor v = tape.value(f_full);
                for (int p = 0; p < partition.num_parts(); ++p)
                    if (!partition.nonempty[p])
                        for (int j = 0; j < cfg.channels; ++j)
                            v.data[static_cast<std::size_t>(p) * cfg.channels + j] +=
                                opt.perturb_empty;
                tape.poke_value(f_full, v);
            }
            Var f = tape.gather_rows(f_full, out.valid_ids);
            out.part_features.push_back(f);

            Var e = part_edge_features(tape, f);
            Var e_prime = part_conv(tape, params, lp.gm, e);
            Var logits = hop_head(tape, params, lp.gh, e_prime);
            if (opt.override_logits) tape.poke_value(logits, (*opt.override_logits)[l]);
            out.hop_logits.push_back(logits);
            out.layer_losses.push_back(hop_distance_loss(tape, logits, out.hop_targets));

            Var w;
            if (lambda[l] == 1) w = kernel_weight(tape, logits, cfg.sigma2, cfg.kernel_mode);

            std::vector<Var> head_alphas;
            std::vector<Var> head_feats;
            for (int hd = 0; hd < cfg.heads; ++hd) {
                Var slice = tape.slice_cols(e_prime, hd * ch, (hd + 1) * ch);
                Var scores = hga_scores(tape, params, lp.ga[hd], slice, w, lambda[l]);
                Var alpha = hga_normalize(tape, scores, vp);
                head_alphas.push_back(alpha);
                head_feats.push_back(hga_aggregate(tape, alpha, slice));
            }
            out.attention.push_back(std::move(head_alphas));
            Var f_tilde = head_feats[0];
            for (int hd = 1; hd < cfg.heads; ++hd)
                f_tilde = tape.concat_last(f_tilde, head_feats[hd]);

            h = revise_point_features(tape, f_tilde, h, compact);
            out.point_features.push_back(h);
        }

        Var cat = out.point_features[0];
        for (int l = 1; l < cfg.layers; ++l) cat = tape.concat_last(cat, out.point_features[l]);
        Var fused = fusion_.apply(tape, params, cat);
        Var desc = global_max_pool(tape, fused);
        if (cfg.avg_pool) {
            Var avg = tape.reshape(tape.scale(tape.reduce_sum(fused, 0), 1.0 / n),
                                   {1, cfg.fusion_dim});
            desc = tape.concat_last(desc, avg);
        }
        out.descriptor = desc;
        out.total_loss = total_selfsup_loss(tape, out.layer_losses, cfg.loss_mode);
        return out;
    }

    /// Value-level forward on a private tape.
    ForwardOutput run(const PointCloud& cloud, const Partition& partition, const HopMatrix& hops,
                      const ForwardOptions& opt = {}) const {
        Tape tape;
        TapeForward tf = forward(tape, cloud, partition, hops, opt);
        ForwardOutput out;
        out.V = partition.num_parts();
        out.valid_ids = tf.valid_ids;
        out.hop_targets = tf.hop_targets;
        for (int l = 0; l < cfg.layers; ++l) {
            LayerOutput lo;
            lo.point_features = tape.value(tf.point_features[l]);
            lo.part_features = tape.value(tf.part_features[l]);
            lo.hop_logits = tape.value(tf.hop_logits[l]);
            for (const Var& a : tf.attention[l]) lo.attention.push_back(tape.value(a));
            lo.loss = tape.value(tf.layer_losses[l]).data[0];
            out.layers.push_back(std::move(lo));
        }
        out.descriptor = tape.value(tf.descriptor);
        out.total_loss = tape.value(tf.total_loss).data[0];
        return out;
    }

    /// Ground truth + forward in one call (scale is the box up-scaling factor).
    ForwardOutput run(const PointCloud& cloud, double box_scale = 1.2,
                      const ForwardOptions& opt = {}) const {
        auto [partition, hops] = ground_truth(cloud, cfg.split, box_scale);
        return run(cloud, partition, hops, opt);
    }

private:
    struct LayerParams {
        Mlp gp, gm, gh;
        std::vector<Mlp> ga;
    };
    std::vector<LayerParams> layers_;
    Mlp fusion_;
};

// ---- metrics and exports ----

/// Fraction of pairs whose argmax logit equals the target hop.
inline std::pair<long, long> hop_accuracy_counts(const Tensor& logits,
                                                 const std::vector<int>& targets) {
    if (logits.rank() != 2 || logits.shape[0] != static_cast<int>(targets.size()))
        throw ShapeError("hop_accuracy_counts shape mismatch");
    const int k = logits.shape[1];
    long correct = 0;
    for (std::size_t r = 0; r < targets.size(); ++r) {
        const double* row = logits.data.data() + r * k;
        const int best = static_cast<int>(std::max_element(row, row + k) - row);
        if (best == targets[r]) ++correct;
    }
    return {correct, static_cast<long>(targets.size())};
}

inline double hop_accuracy(const Tensor& logits, const std::vector<int>& targets) {
    auto [correct, total] = hop_accuracy_counts(logits, targets);
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

/// Attention in the full V-indexed view: zero when either part is empty.
inline double attention_at(const ForwardOutput& fo, int layer, int head, int i, int j) {
    const auto& ids = fo.valid_ids;
    const auto it_i = std::find(ids.begin(), ids.end(), i);
    const auto it_j = std::find(ids.begin(), ids.end(), j);
    if (it_i == ids.end() || it_j == ids.end()) return 0.0;
    const int a = static_cast<int>(it_i - ids.begin());
    const int b = static_cast<int>(it_j - ids.begin());
    return fo.layers[layer].attention[head].at(a, b);
}

/// CSV columns: layer,head,i,j,alpha over valid ordered pairs (part ids).
inline void write_attention_csv(const ForwardOutput& fo, std::ostream& os) {
    os << "layer,head,i,j,alpha\n";
    char buf[64];
    const int vp = static_cast<int>(fo.valid_ids.size());
    for (std::size_t l = 0; l < fo.layers.size(); ++l)
        for (std::size_t h = 0; h < fo.layers[l].attention.size(); ++h)
            for (int a = 0; a < vp; ++a)
                for (int b = 0; b < vp; ++b) {
                    std::snprintf(buf, sizeof(buf), "%.9g",
                                  fo.layers[l].attention[h].at(a, b));
                    os << l << ',' << h << ',' << fo.valid_ids[a] << ',' << fo.valid_ids[b]
                       << ',' << buf << '\n';
                }
}

/// CSV columns: layer,i,j,argmax_hop,gt_hop over valid ordered pairs.
inline void write_predicted_hops_csv(const ForwardOutput& fo, std::ostream& os) {
    os << "layer,i,j,argmax_hop,gt_hop\n";
    const int vp = static_cast<int>(fo.valid_ids.size());
    for (std::size_t l = 0; l < fo.layers.size(); ++l) {
        const Tensor& logits = fo.layers[l].hop_logits;
        const int k = logits.shape[1];
        for (int a = 0; a < vp; ++a)
            for (int b = 0; b < vp; ++b) {
                const double* row = logits.data.data() + (static_cast<std::size_t>(a) * vp + b) * k;
                const int best = static_cast<int>(std::max_element(row, row + k) - row);
                os << l << ',' << fo.valid_ids[a] << ',' << fo.valid_ids[b] << ',' << best << ','
                   << fo.hop_targets[static_cast<std::size_t>(a) * vp + b] << '\n';
            }
    }
}

}  // namespace dhgcn
