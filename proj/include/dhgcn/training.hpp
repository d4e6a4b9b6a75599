#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dhgcn/dataset.hpp"
#include "dhgcn/errors.hpp"
#include "dhgcn/geometry.hpp"
#include "dhgcn/model.hpp"
#include "dhgcn/optim.hpp"
#include "dhgcn/partition.hpp"
#include "dhgcn/rng.hpp"

namespace dhgcn {

struct TrainConfig {
    int epochs = 30;
    int batch = 8;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    bool augment_enabled = true;
    AugmentParams augment = AugmentParams::pretrain_default();
    double box_scale = 1.2;
    double train_fraction = 1.0;
    double dropout = 0.5;
    std::uint64_t seed = 1;
    int threads = 1;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch < 1) throw ConfigError("batch must be >= 1");
        if (lr <= 0.0) throw ConfigError("lr must be > 0");
        if (train_fraction <= 0.0 || train_fraction > 1.0)
            throw ConfigError("train_fraction must be in (0,1]");
        if (threads < 1) throw ConfigError("threads must be >= 1");
        if (box_scale < 1.0) throw ConfigError("box_scale must be >= 1");
        augment.validate();
    }
};

struct Metrics {
    double hop_accuracy = -1.0;
    std::vector<double> per_layer_hop_acc;
    double cls_accuracy = -1.0;
    std::vector<double> loss_curve;
};

struct Checkpoint {
    ModelConfig config;
    ParamStore params;
    std::vector<std::pair<std::string, std::string>> meta;

    std::string meta_value(const std::string& key) const {
        for (const auto& [k, v] : meta)
            if (k == key) return v;
        return {};
    }

    void set_meta(const std::string& key, const std::string& value) {
        for (auto& [k, v] : meta)
            if (k == key) {
                v = value;
                return;
            }
        meta.emplace_back(key, value);
    }
};

// ---- config serialization ----

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string serialize_model_config(const ModelConfig& cfg) {
    std::ostringstream os;
    os << "layers=" << cfg.layers << "\n";
    os << "channels=" << cfg.channels << "\n";
    os << "k=" << cfg.k << "\n";
    os << "split=" << cfg.split << "\n";
    os << "heads=" << cfg.heads << "\n";
    os << "sigma2=" << format_double(cfg.sigma2) << "\n";
    os << "lambda=";
    const std::vector<int> sched = cfg.lambda_schedule();
    for (std::size_t i = 0; i < sched.size(); ++i) os << (i ? "," : "") << sched[i];
    os << "\n";
    os << "fusion_dim=" << cfg.fusion_dim << "\n";
    os << "kernel_mode=" << (cfg.kernel_mode == KernelMode::soft ? "soft" : "argmax") << "\n";
    os << "loss_mode=" << (cfg.loss_mode == LossMode::per_layer ? "per_layer" : "last_layer")
       << "\n";
    os << "avg_pool=" << (cfg.avg_pool ? 1 : 0) << "\n";
    os << "seed=" << cfg.seed << "\n";
    return os.str();
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline ModelConfig parse_model_config(const std::string& text,
                                      std::vector<std::pair<std::string, std::string>>* meta) {
    ModelConfig cfg;
    cfg.lambda.clear();
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("checkpoint config: malformed line " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key.rfind("meta.", 0) == 0) {
            if (meta) meta->emplace_back(key.substr(5), val);
            continue;
        }
        if (key == "layers") cfg.layers = std::stoi(val);
        else if (key == "channels") cfg.channels = std::stoi(val);
        else if (key == "k") cfg.k = std::stoi(val);
        else if (key == "split") cfg.split = std::stoi(val);
        else if (key == "heads") cfg.heads = std::stoi(val);
        else if (key == "sigma2") cfg.sigma2 = std::stod(val);
        else if (key == "lambda") {
            cfg.lambda.clear();
            std::istringstream ls(val);
            std::string tok;
            while (std::getline(ls, tok, ',')) cfg.lambda.push_back(std::stoi(tok));
        } else if (key == "fusion_dim") cfg.fusion_dim = std::stoi(val);
        else if (key == "kernel_mode") {
            if (val == "soft") cfg.kernel_mode = KernelMode::soft;
            else if (val == "argmax") cfg.kernel_mode = KernelMode::argmax;
            else throw DataError("checkpoint config: unknown kernel_mode " + val);
        } else if (key == "loss_mode") {
            if (val == "per_layer") cfg.loss_mode = LossMode::per_layer;
            else if (val == "last_layer") cfg.loss_mode = LossMode::last_layer;
            else throw DataError("checkpoint config: unknown loss_mode " + val);
        } else if (key == "avg_pool") cfg.avg_pool = std::stoi(val) != 0;
        else if (key == "seed") cfg.seed = std::stoull(val);
        else if (key == "config_hash") { /* checked by the loader */ }
        else throw DataError("checkpoint config: unknown key " + key);
    }
    cfg.validate();
    return cfg;
}

// ---- checkpoint binary format ----
// magic "DHGC", u32 version, length-prefixed config text (key=value lines,
// includes meta.* entries and config_hash), u32 parameter count, then per
// parameter: length-prefixed name, u32 rank, u32 dims, little-endian f64 data.

namespace detail {

constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw DataError("truncated checkpoint file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    const std::string cfg_text = serialize_model_config(ckpt.config);
    std::string text = cfg_text;
    text += "config_hash=" + std::to_string(fnv1a64(cfg_text)) + "\n";
    for (const auto& [k, v] : ckpt.meta) text += "meta." + k + "=" + v + "\n";

    std::string out;
    out += "DHGC";
    detail::put_u32(out, detail::kCheckpointVersion);
    detail::put_u64(out, text.size());
    out += text;
    detail::put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
    for (int i = 0; i < ckpt.params.size(); ++i) {
        const std::string& name = ckpt.params.name(i);
        const Tensor& t = ckpt.params.value(i);
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
        for (double v : t.data) detail::put_f64(out, v);
    }

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();
    detail::Reader r{buf};

    if (r.bytes(4) != "DHGC") throw DataError("bad checkpoint magic in " + path);
    const std::uint32_t version = r.u32();
    if (version != detail::kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));

    const std::uint64_t text_len = r.u64();
    const std::string text = r.bytes(text_len);

    Checkpoint ckpt;
    ckpt.config = parse_model_config(text, &ckpt.meta);

    // verify stored hash against the canonical serialization
    const std::string expect_hash = std::to_string(fnv1a64(serialize_model_config(ckpt.config)));
    bool hash_seen = false;
    std::istringstream ts(text);
    std::string line;
    while (std::getline(ts, line)) {
        if (line.rfind("config_hash=", 0) == 0) {
            hash_seen = true;
            if (line.substr(12) != expect_hash)
                throw DataError("checkpoint config hash mismatch in " + path);
        }
    }
    if (!hash_seen) throw DataError("checkpoint missing config hash in " + path);

    const std::uint32_t n_params = r.u32();
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.bytes(name_len);
        const std::uint32_t rank = r.u32();
        if (rank == 0 || rank > 8) throw DataError("checkpoint parameter rank out of range");
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(r.u32());
        Tensor t(shape);
        for (double& v : t.data) v = r.f64();
        ckpt.params.add(name, std::move(t));
    }
    if (r.pos != buf.size()) throw DataError("trailing bytes in checkpoint " + path);

    // every expected backbone parameter must exist; extras must be the probe head
    Model reference(ckpt.config);
    for (const auto& e : reference.params.entries()) {
        const int id = ckpt.params.index_of(e.name);
        if (id < 0) throw DataError("checkpoint missing parameter " + e.name);
        if (!same_shape(ckpt.params.value(id).shape, e.value.shape))
            throw DataError("checkpoint parameter shape mismatch for " + e.name);
    }
    for (const auto& e : ckpt.params.entries()) {
        if (reference.params.has(e.name)) continue;
        if (e.name != "probe.w" && e.name != "probe.b")
            throw DataError("unknown parameter name in checkpoint: " + e.name);
    }
    return ckpt;
}

inline Model model_from_checkpoint(const Checkpoint& ckpt) {
    Model model(ckpt.config);
    for (int i = 0; i < model.params.size(); ++i) {
        const std::string& name = model.params.name(i);
        model.params.value(i) = ckpt.params.value(name);
    }
    return model;
}

// ---- shared helpers ----

namespace detail {

template <typename Fn>
inline void run_indexed(int count, int threads, Fn&& fn) {
    if (threads <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    const int workers = std::min(threads, count);
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct SampleResult {
    double loss = 0.0;
    std::vector<std::array<long, 2>> layer_counts;  // {correct, total} per layer
    std::vector<std::vector<double>> grads;
};

inline std::vector<PointCloud> normalized_clouds(const std::vector<PointCloud>& clouds) {
    std::vector<PointCloud> out;
    out.reserve(clouds.size());
    for (const PointCloud& c : clouds) out.push_back(normalize_unit_sphere(c));
    return out;
}

}  // namespace detail

struct PretrainResult {
    Checkpoint checkpoint;
    Metrics metrics;
};

/// Self-supervised pretraining with the per-layer hop loss. Deterministic
/// under (model seed, train seed) regardless of thread count: gradients are
/// reduced in fixed sample order and per-sample RNG streams are derived from
/// (seed, epoch, sample index).
inline PretrainResult pretrain(const Dataset& dataset, const ModelConfig& model_cfg,
                               const TrainConfig& train_cfg, std::ostream* log = nullptr) {
    train_cfg.validate();
    if (dataset.train.empty()) throw DataError("pretrain: empty train set");

    const std::vector<PointCloud> clouds = detail::normalized_clouds(dataset.train);
    const int n = static_cast<int>(clouds.size());
    Model model(model_cfg);

    const long steps_per_epoch = (n + train_cfg.batch - 1) / train_cfg.batch;
    OptimizerState opt(model.params, train_cfg.lr, train_cfg.momentum, train_cfg.weight_decay,
                       static_cast<long>(train_cfg.epochs) * steps_per_epoch);

    Metrics metrics;
    std::vector<double> final_layer_acc(model.cfg.layers, 0.0);

    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        auto shuffle_rng = make_rng({train_cfg.seed, 0x73687566ULL,
                                     static_cast<std::uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0.0;
        std::vector<std::array<long, 2>> epoch_counts(model.cfg.layers, {0, 0});

        for (int start = 0; start < n; start += train_cfg.batch) {
            const int m = std::min(train_cfg.batch, n - start);
            std::vector<detail::SampleResult> results(m);
            detail::run_indexed(m, train_cfg.threads, [&](int i) {
                const int sample_idx = order[start + i];
                PointCloud cloud = clouds[sample_idx];
                if (train_cfg.augment_enabled) {
                    auto aug_rng = make_rng({train_cfg.seed, 0x61756776ULL,
                                             static_cast<std::uint64_t>(epoch),
                                             static_cast<std::uint64_t>(sample_idx)});
                    cloud = augment(cloud, train_cfg.augment, aug_rng);
                }
                auto [partition, hops] = ground_truth(cloud, model.cfg.split, train_cfg.box_scale);
                Tape tape;
                ForwardOptions fopt;
                fopt.training = true;
                TapeForward tf = model.forward(tape, cloud, partition, hops, fopt);
                detail::SampleResult& r = results[i];
                r.loss = tape.value(tf.total_loss).data[0];
                if (!std::isfinite(r.loss))
                    throw NumericError("pretrain: non-finite loss at train sample " +
                                       std::to_string(sample_idx));
                for (int l = 0; l < model.cfg.layers; ++l) {
                    auto [c, t] = hop_accuracy_counts(tape.value(tf.hop_logits[l]),
                                                      tf.hop_targets);
                    r.layer_counts.push_back({c, t});
                }
                tape.backward(tf.total_loss);
                r.grads = tape.export_param_grads(model.params.size());
            });

            // fixed-order reduction keeps runs bitwise reproducible
            for (int i = 0; i < m; ++i) {
                epoch_loss += results[i].loss;
                for (int l = 0; l < model.cfg.layers; ++l) {
                    epoch_counts[l][0] += results[i].layer_counts[l][0];
                    epoch_counts[l][1] += results[i].layer_counts[l][1];
                }
                for (int p = 0; p < model.params.size(); ++p) {
                    if (results[i].grads[p].empty()) continue;
                    std::vector<double>& g = model.params.grad(p);
                    const std::vector<double>& s = results[i].grads[p];
                    for (std::size_t j = 0; j < g.size(); ++j) g[j] += s[j];
                }
            }
            const double inv = 1.0 / m;
            for (int p = 0; p < model.params.size(); ++p)
                for (double& g : model.params.grad(p)) g *= inv;
            sgd_step(model.params, opt);
        }

        metrics.loss_curve.push_back(epoch_loss / n);
        double acc_sum = 0.0;
        for (int l = 0; l < model.cfg.layers; ++l) {
            final_layer_acc[l] = epoch_counts[l][1] > 0
                                     ? static_cast<double>(epoch_counts[l][0]) / epoch_counts[l][1]
                                     : 0.0;
            acc_sum += final_layer_acc[l];
        }
        if (log) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "epoch %d/%d loss=%.6f hop_acc=%.4f lr=%.5f\n",
                          epoch + 1, train_cfg.epochs, epoch_loss / n,
                          acc_sum / model.cfg.layers, opt.learning_rate());
            (*log) << buf << std::flush;
        }
    }

    metrics.per_layer_hop_acc = final_layer_acc;
    metrics.hop_accuracy =
        std::accumulate(final_layer_acc.begin(), final_layer_acc.end(), 0.0) / model.cfg.layers;

    PretrainResult result;
    result.checkpoint.config = model.cfg;
    result.checkpoint.params = model.params;
    result.checkpoint.set_meta("epochs", std::to_string(train_cfg.epochs));
    result.checkpoint.set_meta("train_seed", std::to_string(train_cfg.seed));
    result.checkpoint.set_meta("final_loss", format_double(metrics.loss_curve.back()));
    result.checkpoint.set_meta("train_hop_acc", format_double(metrics.hop_accuracy));
    result.metrics = metrics;
    return result;
}

/// Eval-mode descriptors for a list of normalized clouds; optionally
/// accumulates per-layer hop accuracy counts over the same forward passes.
inline Tensor compute_descriptors(const Model& model, const std::vector<PointCloud>& clouds,
                                  int threads, double box_scale,
                                  std::vector<std::array<long, 2>>* hop_counts = nullptr) {
    const int n = static_cast<int>(clouds.size());
    if (n == 0) throw DataError("compute_descriptors: no clouds");
    Tensor out({n, model.cfg.descriptor_dim()});
    std::vector<std::vector<std::array<long, 2>>> counts(n);
    detail::run_indexed(n, threads, [&](int i) {
        ForwardOutput fo = model.run(clouds[i], box_scale);
        std::copy(fo.descriptor.data.begin(), fo.descriptor.data.end(),
                  out.data.begin() + static_cast<std::size_t>(i) * model.cfg.descriptor_dim());
        if (hop_counts) {
            counts[i].resize(model.cfg.layers);
            for (int l = 0; l < model.cfg.layers; ++l) {
                auto [c, t] = hop_accuracy_counts(fo.layers[l].hop_logits, fo.hop_targets);
                counts[i][l] = {c, t};
            }
        }
    });
    if (hop_counts) {
        hop_counts->assign(model.cfg.layers, {0, 0});
        for (int i = 0; i < n; ++i)
            for (int l = 0; l < model.cfg.layers; ++l) {
                (*hop_counts)[l][0] += counts[i][l][0];
                (*hop_counts)[l][1] += counts[i][l][1];
            }
    }
    return out;
}

inline Metrics hop_metrics_from_counts(const std::vector<std::array<long, 2>>& counts) {
    Metrics m;
    double sum = 0.0;
    for (const auto& [c, t] : counts) {
        const double acc = t > 0 ? static_cast<double>(c) / t : 0.0;
        m.per_layer_hop_acc.push_back(acc);
        sum += acc;
    }
    m.hop_accuracy = counts.empty() ? -1.0 : sum / static_cast<double>(counts.size());
    return m;
}

struct ProbeResult {
    Metrics metrics;
    Checkpoint checkpoint;  // input checkpoint plus the trained probe head
    int samples_used = 0;
};

/// Freezes the backbone and trains a single linear classifier on the global
/// descriptor (cross-entropy, dropout on the descriptor). Descriptors are
/// extracted once in eval mode, so the backbone parameters are never touched.
inline ProbeResult linear_probe(const Checkpoint& ckpt, const Dataset& dataset,
                                const TrainConfig& train_cfg, std::ostream* log = nullptr) {
    train_cfg.validate();
    if (dataset.train.empty() || dataset.test.empty())
        throw DataError("linear_probe: needs train and test clouds");
    const int num_classes = dataset.num_classes();
    for (const PointCloud& c : dataset.train)
        if (c.label < 0 || c.label >= num_classes)
            throw DataError("linear_probe: train label out of range");

    const Model model = model_from_checkpoint(ckpt);
    const int dd = model.cfg.descriptor_dim();

    // seeded limited-data selection
    const int n_train_all = static_cast<int>(dataset.train.size());
    std::vector<int> order(n_train_all);
    std::iota(order.begin(), order.end(), 0);
    auto frac_rng = make_rng({train_cfg.seed, 0x66726163ULL});
    std::shuffle(order.begin(), order.end(), frac_rng);
    const int n_used =
        static_cast<int>(std::ceil(train_cfg.train_fraction * n_train_all));
    order.resize(std::max(1, n_used));

    std::vector<PointCloud> train_clouds;
    std::vector<int> train_labels;
    for (int idx : order) {
        train_clouds.push_back(normalize_unit_sphere(dataset.train[idx]));
        train_labels.push_back(dataset.train[idx].label);
    }
    const std::vector<PointCloud> test_clouds = detail::normalized_clouds(dataset.test);

    const Tensor train_desc =
        compute_descriptors(model, train_clouds, train_cfg.threads, train_cfg.box_scale);
    std::vector<std::array<long, 2>> test_counts;
    const Tensor test_desc = compute_descriptors(model, test_clouds, train_cfg.threads,
                                                 train_cfg.box_scale, &test_counts);

    ParamStore head;
    auto init_rng = make_rng({train_cfg.seed, 0x70726f62ULL});
    const int w_id = head.add("probe.w", fan_in_init({dd, num_classes}, dd, init_rng));
    const int b_id = head.add("probe.b", fan_in_init({num_classes}, dd, init_rng));

    const int m = static_cast<int>(train_clouds.size());
    const long steps_per_epoch = (m + train_cfg.batch - 1) / train_cfg.batch;
    OptimizerState opt(head, train_cfg.lr, train_cfg.momentum, train_cfg.weight_decay,
                       static_cast<long>(train_cfg.epochs) * steps_per_epoch);

    Metrics metrics;
    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        std::vector<int> perm(m);
        std::iota(perm.begin(), perm.end(), 0);
        auto shuffle_rng = make_rng({train_cfg.seed, 0x70736866ULL,
                                     static_cast<std::uint64_t>(epoch)});
        std::shuffle(perm.begin(), perm.end(), shuffle_rng);

        double epoch_loss = 0.0;
        for (int start = 0; start < m; start += train_cfg.batch) {
            const int bsz = std::min(train_cfg.batch, m - start);
            for (int i = 0; i < bsz; ++i) {
                const int idx = perm[start + i];
                Tape tape;
                Var x = tape.input({1, dd},
                                   std::vector<double>(
                                       train_desc.data.begin() + static_cast<std::size_t>(idx) * dd,
                                       train_desc.data.begin() +
                                           static_cast<std::size_t>(idx + 1) * dd));
                auto drop_rng = make_rng({train_cfg.seed, 0x64726f70ULL,
                                          static_cast<std::uint64_t>(epoch),
                                          static_cast<std::uint64_t>(idx)});
                x = tape.dropout(x, train_cfg.dropout, true, drop_rng);
                Var logits = tape.add(tape.matmul(x, tape.param(head, w_id)),
                                      tape.tile_rows(tape.param(head, b_id), 1));
                Var loss = tape.cross_entropy_logits(logits, {train_labels[idx]});
                epoch_loss += tape.value(loss).data[0];
                tape.backward(loss, &head);
            }
            const double inv = 1.0 / bsz;
            for (int p = 0; p < head.size(); ++p)
                for (double& g : head.grad(p)) g *= inv;
            sgd_step(head, opt);
        }
        metrics.loss_curve.push_back(epoch_loss / m);
        if (log) {
            char buf[120];
            std::snprintf(buf, sizeof(buf), "probe epoch %d/%d loss=%.6f\n", epoch + 1,
                          train_cfg.epochs, epoch_loss / m);
            (*log) << buf << std::flush;
        }
    }

    // test accuracy of the trained head (no dropout at eval)
    const Tensor& w = head.value(w_id);
    const Tensor& b = head.value(b_id);
    long correct = 0;
    for (std::size_t i = 0; i < test_clouds.size(); ++i) {
        std::vector<double> logits(num_classes, 0.0);
        for (int c = 0; c < num_classes; ++c) {
            double s = b.data[c];
            for (int d = 0; d < dd; ++d)
                s += test_desc.data[i * dd + d] * w.data[static_cast<std::size_t>(d) * num_classes + c];
            logits[c] = s;
        }
        const int best = static_cast<int>(
            std::max_element(logits.begin(), logits.end()) - logits.begin());
        if (best == dataset.test[i].label) ++correct;
    }
    metrics.cls_accuracy = static_cast<double>(correct) / static_cast<double>(test_clouds.size());

    const Metrics hop = hop_metrics_from_counts(test_counts);
    metrics.hop_accuracy = hop.hop_accuracy;
    metrics.per_layer_hop_acc = hop.per_layer_hop_acc;

    ProbeResult result;
    result.metrics = metrics;
    result.samples_used = m;
    result.checkpoint = ckpt;
    if (result.checkpoint.params.has("probe.w")) {
        result.checkpoint.params.value("probe.w") = head.value(w_id);
        result.checkpoint.params.value("probe.b") = head.value(b_id);
    } else {
        result.checkpoint.params.add("probe.w", head.value(w_id));
        result.checkpoint.params.add("probe.b", head.value(b_id));
    }
    result.checkpoint.set_meta("probe_classes", std::to_string(num_classes));
    result.checkpoint.set_meta("probe_fraction", format_double(train_cfg.train_fraction));
    result.checkpoint.set_meta("probe_samples", std::to_string(m));
    result.checkpoint.set_meta("probe_accuracy", format_double(metrics.cls_accuracy));
    return result;
}

/// Hop accuracy over the test set (valid pairs only, averaged over layers)
/// plus classification accuracy when the checkpoint carries a probe head.
inline Metrics evaluate(const Checkpoint& ckpt, const Dataset& dataset, int threads = 1,
                        double box_scale = 1.2) {
    if (dataset.test.empty()) throw DataError("evaluate: empty test set");
    const Model model = model_from_checkpoint(ckpt);
    const std::vector<PointCloud> test_clouds = detail::normalized_clouds(dataset.test);

    std::vector<std::array<long, 2>> counts;
    const Tensor desc = compute_descriptors(model, test_clouds, threads, box_scale, &counts);
    Metrics metrics = hop_metrics_from_counts(counts);

    if (ckpt.params.has("probe.w")) {
        const Tensor& w = ckpt.params.value("probe.w");
        const Tensor& b = ckpt.params.value("probe.b");
        const int num_classes = w.shape[1];
        const int dd = w.shape[0];
        if (dd != model.cfg.descriptor_dim())
            throw DataError("probe head does not match descriptor size");
        if (num_classes != dataset.num_classes())
            throw DataError("probe head class count does not match dataset");
        long correct = 0;
        for (std::size_t i = 0; i < test_clouds.size(); ++i) {
            int best = 0;
            double best_v = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < num_classes; ++c) {
                double s = b.data[c];
                for (int d = 0; d < dd; ++d)
                    s += desc.data[i * dd + d] * w.data[static_cast<std::size_t>(d) * num_classes + c];
                if (s > best_v) {
                    best_v = s;
                    best = c;
                }
            }
            if (best == dataset.test[i].label) ++correct;
        }
        metrics.cls_accuracy =
            static_cast<double>(correct) / static_cast<double>(test_clouds.size());
    }
    return metrics;
}

// ---- sigma ablation ----

struct SigmaResult {
    double sigma2 = 0.0;
    double hop_acc = 0.0;
    double cls_acc = 0.0;
};

/// Pretrain + probe per sigma^2 under shared seeds.
inline std::vector<SigmaResult> ablate_sigma(const std::vector<double>& values,
                                             const Dataset& dataset, const ModelConfig& base_cfg,
                                             const TrainConfig& train_cfg,
                                             std::ostream* log = nullptr) {
    if (values.empty()) throw ConfigError("ablate_sigma: no values");
    std::vector<SigmaResult> rows;
    for (double s2 : values) {
        if (s2 <= 0.0) throw ConfigError("ablate_sigma: sigma2 must be > 0");
        ModelConfig cfg = base_cfg;
        cfg.sigma2 = s2;
        if (log) (*log) << "sigma2=" << s2 << "\n";
        PretrainResult pre = pretrain(dataset, cfg, train_cfg, log);
        ProbeResult probe = linear_probe(pre.checkpoint, dataset, train_cfg, nullptr);
        SigmaResult row;
        row.sigma2 = s2;
        row.hop_acc = probe.metrics.hop_accuracy;
        row.cls_acc = probe.metrics.cls_accuracy;
        rows.push_back(row);
    }
    return rows;
}

inline void write_sigma_csv(const std::vector<SigmaResult>& rows, std::ostream& os) {
    os << "sigma2,hop_acc,cls_acc\n";
    char buf[96];
    for (const SigmaResult& r : rows) {
        std::snprintf(buf, sizeof(buf), "%g,%.6f,%.6f\n", r.sigma2, r.hop_acc, r.cls_acc);
        os << buf;
    }
}

inline void write_metrics_csv(const Metrics& m, std::ostream& os) {
    os << "metric,value\n";
    char buf[64];
    auto emit = [&](const std::string& k, double v) {
        std::snprintf(buf, sizeof(buf), "%.6f", v);
        os << k << ',' << buf << '\n';
    };
    if (m.hop_accuracy >= 0.0) emit("hop_accuracy", m.hop_accuracy);
    for (std::size_t l = 0; l < m.per_layer_hop_acc.size(); ++l)
        emit("hop_accuracy_layer" + std::to_string(l), m.per_layer_hop_acc[l]);
    if (m.cls_accuracy >= 0.0) emit("cls_accuracy", m.cls_accuracy);
}

inline void write_loss_curve_csv(const std::vector<double>& curve, std::ostream& os) {
    os << "epoch,loss\n";
    char buf[48];
    for (std::size_t e = 0; e < curve.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", e, curve[e]);
        os << buf;
    }
}

}  // namespace dhgcn
