// Command-line entry point: dataset generation, partition inspection,
// self-supervised pretraining, linear probing, evaluation, ablations and
// verification, all deterministic under --seed.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dhgcn/dhgcn.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitVerification = 3;

/// Ordered key=value manifest; every command writes one so a run can be
/// replayed exactly.
class Manifest {
public:
    explicit Manifest(std::string command) { add("command", std::move(command)); }

    void add(const std::string& key, const std::string& value) {
        entries_.emplace_back(key, value);
    }
    void add(const std::string& key, const char* value) { entries_.emplace_back(key, value); }
    void add(const std::string& key, double value) { add(key, dhgcn::format_double(value)); }
    void add(const std::string& key, int value) { add(key, std::to_string(value)); }
    void add(const std::string& key, long value) { add(key, std::to_string(value)); }
    void add(const std::string& key, std::uint64_t value) { add(key, std::to_string(value)); }
    void add(const std::string& key, bool value) { add(key, std::string(value ? "1" : "0")); }

    void write(const std::string& path) const {
        if (path.empty()) return;
        const fs::path parent = fs::path(path).parent_path();
        if (!parent.empty()) fs::create_directories(parent);
        std::ofstream f(path);
        if (!f) throw dhgcn::DataError("cannot write manifest: " + path);
        for (const auto& [k, v] : entries_) f << k << "=" << v << "\n";
    }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

void add_model_flags(CLI::App* cmd, dhgcn::ModelConfig& cfg, std::string& lambda_str,
                     std::string& kernel_mode, std::string& loss_mode) {
    cmd->add_option("--layers", cfg.layers, "HopGraphConv layer count");
    cmd->add_option("--channels", cfg.channels, "feature channels per layer");
    cmd->add_option("--k", cfg.k, "backbone kNN neighbor count");
    cmd->add_option("--split", cfg.split, "voxel split s (V = s^3)");
    cmd->add_option("--heads", cfg.heads, "attention heads");
    cmd->add_option("--sigma2", cfg.sigma2, "Gaussian kernel sigma^2");
    cmd->add_option("--lambda", lambda_str,
                    "per-layer hop-embedding switches, e.g. 0,1,1 (default: 0 then 1s)");
    cmd->add_option("--fusion-dim", cfg.fusion_dim, "fusion MLP output width");
    cmd->add_option("--kernel-mode", kernel_mode, "kernel weight mode: soft|argmax")
        ->check(CLI::IsMember({"soft", "argmax"}));
    cmd->add_option("--loss-mode", loss_mode, "hop loss mode: per_layer|last_layer")
        ->check(CLI::IsMember({"per_layer", "last_layer"}));
    cmd->add_flag("--avg-pool", cfg.avg_pool, "concatenate max and mean pooled descriptors");
}

void resolve_model_flags(dhgcn::ModelConfig& cfg, const std::string& lambda_str,
                         const std::string& kernel_mode, const std::string& loss_mode,
                         std::uint64_t seed) {
    if (!lambda_str.empty()) {
        cfg.lambda.clear();
        std::istringstream is(lambda_str);
        std::string tok;
        while (std::getline(is, tok, ',')) cfg.lambda.push_back(std::stoi(tok));
    }
    cfg.kernel_mode = kernel_mode == "argmax" ? dhgcn::KernelMode::argmax
                                              : dhgcn::KernelMode::soft;
    cfg.loss_mode = loss_mode == "last_layer" ? dhgcn::LossMode::last_layer
                                              : dhgcn::LossMode::per_layer;
    cfg.seed = seed;
    cfg.validate();
}

void add_train_flags(CLI::App* cmd, dhgcn::TrainConfig& cfg, bool& no_augment) {
    cmd->add_option("--epochs", cfg.epochs, "training epochs");
    cmd->add_option("--batch", cfg.batch, "batch size");
    cmd->add_option("--lr", cfg.lr, "base learning rate (cosine schedule)");
    cmd->add_option("--momentum", cfg.momentum, "SGD momentum");
    cmd->add_option("--weight-decay", cfg.weight_decay, "weight decay");
    cmd->add_option("--threads", cfg.threads, "parallel samples per batch (1 = reference order)");
    cmd->add_option("--scale", cfg.box_scale, "bounding-box up-scaling factor");
    cmd->add_option("--dropout", cfg.dropout, "dropout rate on the probe descriptor");
    cmd->add_flag("--no-augment", no_augment, "disable training augmentation");
}

void manifest_model(Manifest& m, const dhgcn::ModelConfig& cfg) {
    m.add("model.layers", cfg.layers);
    m.add("model.channels", cfg.channels);
    m.add("model.k", cfg.k);
    m.add("model.split", cfg.split);
    m.add("model.heads", cfg.heads);
    m.add("model.sigma2", cfg.sigma2);
    std::string lam;
    for (int v : cfg.lambda_schedule()) lam += (lam.empty() ? "" : ",") + std::to_string(v);
    m.add("model.lambda", lam);
    m.add("model.fusion_dim", cfg.fusion_dim);
    m.add("model.kernel_mode", cfg.kernel_mode == dhgcn::KernelMode::soft ? "soft" : "argmax");
    m.add("model.loss_mode",
          cfg.loss_mode == dhgcn::LossMode::per_layer ? "per_layer" : "last_layer");
    m.add("model.avg_pool", cfg.avg_pool);
    m.add("model.seed", cfg.seed);
}

void manifest_train(Manifest& m, const dhgcn::TrainConfig& cfg) {
    m.add("train.epochs", cfg.epochs);
    m.add("train.batch", cfg.batch);
    m.add("train.lr", cfg.lr);
    m.add("train.momentum", cfg.momentum);
    m.add("train.weight_decay", cfg.weight_decay);
    m.add("train.augment", cfg.augment_enabled);
    m.add("train.box_scale", cfg.box_scale);
    m.add("train.train_fraction", cfg.train_fraction);
    m.add("train.dropout", cfg.dropout);
    m.add("train.seed", cfg.seed);
    m.add("train.threads", cfg.threads);
}

void write_text_file(const std::string& path, const std::string& content) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    std::ofstream f(path);
    if (!f) throw dhgcn::DataError("cannot open for writing: " + path);
    f << content;
    if (!f) throw dhgcn::DataError("write failed: " + path);
}

int run(int argc, char** argv) {
    CLI::App app{"hop-distance graph network on voxelized point clouds"};
    app.require_subcommand(1);

    // ---- gen-data ----
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic shape dataset");
    std::string gen_out;
    dhgcn::DatasetGenConfig gen_cfg;
    std::string gen_manifest;
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--classes", gen_cfg.classes, "number of shape classes");
    gen->add_option("--per-class", gen_cfg.per_class, "clouds per class");
    gen->add_option("--points", gen_cfg.points, "points per cloud");
    gen->add_option("--train-per-class", gen_cfg.train_per_class,
                    "train clouds per class (default 4/5 of per-class)");
    gen->add_option("--seed", gen_cfg.seed, "generation seed");
    gen->add_option("--manifest", gen_manifest, "manifest path (default <out>/manifest.txt)");

    // ---- partition ----
    auto* part_cmd = app.add_subcommand("partition", "voxelize a cloud and export hop distances");
    std::string part_input, part_out, part_manifest;
    int part_split = 3;
    double part_scale = 1.2;
    part_cmd->add_option("--input", part_input, "input .xyz file")->required();
    part_cmd->add_option("--split", part_split, "voxel split s");
    part_cmd->add_option("--scale", part_scale, "bounding-box up-scaling factor");
    part_cmd->add_option("--out-hops", part_out, "output hop-matrix CSV")->required();
    part_cmd->add_option("--manifest", part_manifest, "manifest path (default <out-hops>.manifest)");

    // ---- pretrain ----
    auto* pre = app.add_subcommand("pretrain", "self-supervised hop-distance pretraining");
    std::string pre_data, pre_out, pre_losses, pre_manifest, pre_lambda, pre_kernel = "soft",
                                                             pre_loss_mode = "per_layer";
    dhgcn::ModelConfig pre_mcfg;
    dhgcn::TrainConfig pre_tcfg;
    bool pre_no_augment = false;
    std::uint64_t pre_seed = 1;
    pre->add_option("--data", pre_data, "dataset directory")->required();
    pre->add_option("--out", pre_out, "output checkpoint path")->required();
    pre->add_option("--losses", pre_losses, "loss curve CSV (default <out>.losses.csv)");
    pre->add_option("--seed", pre_seed, "seed for init, shuffling and augmentation");
    add_model_flags(pre, pre_mcfg, pre_lambda, pre_kernel, pre_loss_mode);
    add_train_flags(pre, pre_tcfg, pre_no_augment);
    pre->add_option("--manifest", pre_manifest, "manifest path (default <out>.manifest)");

    // ---- probe ----
    auto* probe = app.add_subcommand("probe", "train a linear classifier on frozen features");
    std::string probe_ckpt, probe_data, probe_out, probe_metrics, probe_manifest;
    dhgcn::TrainConfig probe_tcfg;
    bool probe_no_augment = false;
    std::uint64_t probe_seed = 1;
    probe->add_option("--ckpt", probe_ckpt, "pretrained checkpoint")->required();
    probe->add_option("--data", probe_data, "dataset directory")->required();
    probe->add_option("--out", probe_out, "output checkpoint with probe head");
    probe->add_option("--metrics", probe_metrics, "metrics CSV path");
    probe->add_option("--train-fraction", probe_tcfg.train_fraction,
                      "fraction of the train split to use");
    probe->add_option("--seed", probe_seed, "probe seed");
    add_train_flags(probe, probe_tcfg, probe_no_augment);
    probe->add_option("--manifest", probe_manifest, "manifest path");

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    std::string ev_ckpt, ev_data, ev_metrics, ev_manifest = "eval.manifest";
    int ev_threads = 1;
    double ev_scale = 1.2;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--metrics", ev_metrics, "metrics CSV path");
    ev->add_option("--threads", ev_threads, "parallel forward passes");
    ev->add_option("--scale", ev_scale, "bounding-box up-scaling factor");
    ev->add_option("--manifest", ev_manifest, "manifest path");

    // ---- ablate-sigma ----
    auto* ab = app.add_subcommand("ablate-sigma", "pretrain+probe sweep over sigma^2 values");
    std::string ab_data, ab_out, ab_values = "0.2,0.5,1.0,2.0,5.0", ab_manifest, ab_lambda,
                ab_kernel = "soft", ab_loss_mode = "per_layer";
    dhgcn::ModelConfig ab_mcfg;
    dhgcn::TrainConfig ab_tcfg;
    bool ab_no_augment = false;
    std::uint64_t ab_seed = 1;
    ab->add_option("--data", ab_data, "dataset directory")->required();
    ab->add_option("--values", ab_values, "comma-separated sigma^2 values");
    ab->add_option("--out", ab_out, "output CSV")->required();
    ab->add_option("--seed", ab_seed, "shared seed for all runs");
    add_model_flags(ab, ab_mcfg, ab_lambda, ab_kernel, ab_loss_mode);
    add_train_flags(ab, ab_tcfg, ab_no_augment);
    ab->add_option("--manifest", ab_manifest, "manifest path (default <out>.manifest)");

    // ---- gradcheck ----
    auto* gc = app.add_subcommand("gradcheck",
                                  "compare analytic gradients against central differences");
    std::uint64_t gc_seed = 1;
    double gc_eps = 1e-4, gc_threshold = 1e-4;
    int gc_points = 64;
    std::string gc_manifest = "gradcheck.manifest", gc_lambda, gc_kernel = "soft",
                gc_loss_mode = "per_layer";
    dhgcn::ModelConfig gc_mcfg;
    gc_mcfg.layers = 2;
    gc_mcfg.channels = 8;
    gc_mcfg.split = 2;
    gc_mcfg.heads = 2;
    gc->add_option("--seed", gc_seed, "cloud and init seed");
    gc->add_option("--eps", gc_eps, "central difference step");
    gc->add_option("--threshold", gc_threshold, "max tolerated relative error");
    gc->add_option("--points", gc_points, "points in the check cloud");
    add_model_flags(gc, gc_mcfg, gc_lambda, gc_kernel, gc_loss_mode);
    gc->add_option("--manifest", gc_manifest, "manifest path");

    // ---- export-attention ----
    auto* ex = app.add_subcommand("export-attention",
                                  "run one cloud and export attention (and hop) CSVs");
    std::string ex_ckpt, ex_input, ex_out, ex_hops, ex_manifest;
    double ex_scale = 1.2;
    ex->add_option("--ckpt", ex_ckpt, "checkpoint path")->required();
    ex->add_option("--input", ex_input, "input .xyz file")->required();
    ex->add_option("--out", ex_out, "attention CSV path")->required();
    ex->add_option("--out-hops", ex_hops, "predicted hop CSV path");
    ex->add_option("--scale", ex_scale, "bounding-box up-scaling factor");
    ex->add_option("--manifest", ex_manifest, "manifest path (default <out>.manifest)");

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        gen_cfg.validate();
        dhgcn::write_dataset(gen_cfg, gen_out);
        Manifest m("gen-data");
        m.add("out", gen_out);
        m.add("classes", gen_cfg.classes);
        m.add("per_class", gen_cfg.per_class);
        m.add("points", gen_cfg.points);
        m.add("train_per_class", gen_cfg.resolved_train_per_class());
        m.add("seed", gen_cfg.seed);
        m.write(gen_manifest.empty() ? (fs::path(gen_out) / "manifest.txt").string()
                                     : gen_manifest);
        std::cout << "wrote " << gen_cfg.classes << " classes x " << gen_cfg.per_class
                  << " clouds (" << gen_cfg.points << " points each) to " << gen_out << "\n";
        return 0;
    }

    if (part_cmd->parsed()) {
        const dhgcn::PointCloud cloud = dhgcn::load_points(part_input);
        auto [partition, hops] = dhgcn::ground_truth(cloud, part_split, part_scale);
        std::ostringstream csv;
        dhgcn::write_hops_csv(hops, part_split, csv);
        write_text_file(part_out, csv.str());

        int nonempty = 0, max_pts = 0;
        for (const auto& p : partition.parts) {
            if (!p.empty()) ++nonempty;
            max_pts = std::max(max_pts, static_cast<int>(p.size()));
        }
        std::cout << "points: " << cloud.size() << "\n"
                  << "parts: " << partition.num_parts() << " (" << nonempty << " non-empty)\n"
                  << "max points in a part: " << max_pts << "\n"
                  << "hop matrix written to " << part_out << "\n";

        Manifest m("partition");
        m.add("input", part_input);
        m.add("split", part_split);
        m.add("scale", part_scale);
        m.add("out_hops", part_out);
        m.add("nonempty_parts", nonempty);
        m.write(part_manifest.empty() ? part_out + ".manifest" : part_manifest);
        return 0;
    }

    if (pre->parsed()) {
        resolve_model_flags(pre_mcfg, pre_lambda, pre_kernel, pre_loss_mode, pre_seed);
        pre_tcfg.seed = pre_seed;
        pre_tcfg.augment_enabled = !pre_no_augment;
        pre_tcfg.validate();
        const dhgcn::Dataset dataset = dhgcn::load_dataset(pre_data);
        dhgcn::PretrainResult result = dhgcn::pretrain(dataset, pre_mcfg, pre_tcfg, &std::cout);
        dhgcn::save_checkpoint(result.checkpoint, pre_out);
        std::ostringstream losses;
        dhgcn::write_loss_curve_csv(result.metrics.loss_curve, losses);
        write_text_file(pre_losses.empty() ? pre_out + ".losses.csv" : pre_losses, losses.str());

        Manifest m("pretrain");
        m.add("data", pre_data);
        m.add("out", pre_out);
        m.add("train_clouds", static_cast<long>(dataset.train.size()));
        manifest_model(m, pre_mcfg);
        manifest_train(m, pre_tcfg);
        m.add("final_loss", result.metrics.loss_curve.back());
        m.add("train_hop_acc", result.metrics.hop_accuracy);
        m.write(pre_manifest.empty() ? pre_out + ".manifest" : pre_manifest);
        std::cout << "checkpoint written to " << pre_out << "\n";
        return 0;
    }

    if (probe->parsed()) {
        probe_tcfg.seed = probe_seed;
        probe_tcfg.augment_enabled = !probe_no_augment;
        probe_tcfg.validate();
        const dhgcn::Checkpoint ckpt = dhgcn::load_checkpoint(probe_ckpt);
        const dhgcn::Dataset dataset = dhgcn::load_dataset(probe_data);
        dhgcn::ProbeResult result = dhgcn::linear_probe(ckpt, dataset, probe_tcfg, &std::cout);
        if (!probe_out.empty()) dhgcn::save_checkpoint(result.checkpoint, probe_out);
        if (!probe_metrics.empty()) {
            std::ostringstream ms;
            dhgcn::write_metrics_csv(result.metrics, ms);
            write_text_file(probe_metrics, ms.str());
        }
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "probe accuracy=%.4f hop_accuracy=%.4f (samples used: %d)\n",
                      result.metrics.cls_accuracy, result.metrics.hop_accuracy,
                      result.samples_used);
        std::cout << buf;

        Manifest m("probe");
        m.add("ckpt", probe_ckpt);
        m.add("data", probe_data);
        m.add("out", probe_out);
        m.add("metrics", probe_metrics);
        manifest_train(m, probe_tcfg);
        m.add("samples_used", result.samples_used);
        m.add("cls_accuracy", result.metrics.cls_accuracy);
        m.write(probe_manifest.empty()
                    ? (probe_out.empty() ? std::string("probe.manifest") : probe_out + ".manifest")
                    : probe_manifest);
        return 0;
    }

    if (ev->parsed()) {
        const dhgcn::Checkpoint ckpt = dhgcn::load_checkpoint(ev_ckpt);
        const dhgcn::Dataset dataset = dhgcn::load_dataset(ev_data);
        const dhgcn::Metrics metrics = dhgcn::evaluate(ckpt, dataset, ev_threads, ev_scale);
        char buf[120];
        std::snprintf(buf, sizeof(buf), "hop_accuracy=%.4f\n", metrics.hop_accuracy);
        std::cout << buf;
        for (std::size_t l = 0; l < metrics.per_layer_hop_acc.size(); ++l) {
            std::snprintf(buf, sizeof(buf), "hop_accuracy_layer%zu=%.4f\n", l,
                          metrics.per_layer_hop_acc[l]);
            std::cout << buf;
        }
        if (metrics.cls_accuracy >= 0.0) {
            std::snprintf(buf, sizeof(buf), "cls_accuracy=%.4f\n", metrics.cls_accuracy);
            std::cout << buf;
        }
        if (!ev_metrics.empty()) {
            std::ostringstream ms;
            dhgcn::write_metrics_csv(metrics, ms);
            write_text_file(ev_metrics, ms.str());
        }
        Manifest m("eval");
        m.add("ckpt", ev_ckpt);
        m.add("data", ev_data);
        m.add("threads", ev_threads);
        m.add("scale", ev_scale);
        m.add("hop_accuracy", metrics.hop_accuracy);
        if (metrics.cls_accuracy >= 0.0) m.add("cls_accuracy", metrics.cls_accuracy);
        m.write(ev_manifest);
        return 0;
    }

    if (ab->parsed()) {
        resolve_model_flags(ab_mcfg, ab_lambda, ab_kernel, ab_loss_mode, ab_seed);
        ab_tcfg.seed = ab_seed;
        ab_tcfg.augment_enabled = !ab_no_augment;
        ab_tcfg.validate();
        std::vector<double> values;
        {
            std::istringstream is(ab_values);
            std::string tok;
            while (std::getline(is, tok, ',')) values.push_back(std::stod(tok));
        }
        const dhgcn::Dataset dataset = dhgcn::load_dataset(ab_data);
        const auto rows = dhgcn::ablate_sigma(values, dataset, ab_mcfg, ab_tcfg, &std::cout);
        std::ostringstream csv;
        dhgcn::write_sigma_csv(rows, csv);
        write_text_file(ab_out, csv.str());
        std::cout << "sigma ablation table written to " << ab_out << "\n";

        Manifest m("ablate-sigma");
        m.add("data", ab_data);
        m.add("values", ab_values);
        m.add("out", ab_out);
        manifest_model(m, ab_mcfg);
        manifest_train(m, ab_tcfg);
        m.write(ab_manifest.empty() ? ab_out + ".manifest" : ab_manifest);
        return 0;
    }

    if (gc->parsed()) {
        resolve_model_flags(gc_mcfg, gc_lambda, gc_kernel, gc_loss_mode, gc_seed);
        const dhgcn::PointCloud cloud = dhgcn::normalize_unit_sphere(dhgcn::sample_synthetic(
            dhgcn::random_spec(dhgcn::ShapeClass::cylinder, gc_points, gc_seed)));
        dhgcn::Model model(gc_mcfg);
        auto [partition, hops] = dhgcn::ground_truth(cloud, gc_mcfg.split, 1.2);

        std::vector<std::vector<int>> knn_cache;
        {
            dhgcn::Tape tape;
            dhgcn::ForwardOptions opt;
            opt.knn_out = &knn_cache;
            model.forward(tape, cloud, partition, hops, opt);
        }
        auto loss_fn = [&](bool with_grad) {
            dhgcn::Tape tape;
            dhgcn::ForwardOptions opt;
            opt.knn_cache = &knn_cache;
            dhgcn::TapeForward tf = model.forward(tape, cloud, partition, hops, opt);
            const double v = tape.value(tf.total_loss).data[0];
            if (with_grad) {
                model.params.zero_grads();
                tape.backward(tf.total_loss, &model.params);
            }
            return v;
        };
        const double err = dhgcn::grad_check(loss_fn, model.params, gc_eps);
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "gradcheck: max relative error %.3e over %lld coordinates (threshold %g)\n",
                      err, static_cast<long long>(model.params.total_coords()), gc_threshold);
        std::cout << buf;

        Manifest m("gradcheck");
        m.add("seed", gc_seed);
        m.add("eps", gc_eps);
        m.add("threshold", gc_threshold);
        m.add("points", gc_points);
        manifest_model(m, gc_mcfg);
        m.add("max_rel_error", err);
        m.write(gc_manifest);
        if (!(err < gc_threshold)) {
            std::cout << "gradcheck FAILED\n";
            return kExitVerification;
        }
        std::cout << "gradcheck passed\n";
        return 0;
    }

    if (ex->parsed()) {
        const dhgcn::Checkpoint ckpt = dhgcn::load_checkpoint(ex_ckpt);
        const dhgcn::Model model = dhgcn::model_from_checkpoint(ckpt);
        const dhgcn::PointCloud cloud =
            dhgcn::normalize_unit_sphere(dhgcn::load_points(ex_input));
        const dhgcn::ForwardOutput fo = model.run(cloud, ex_scale);
        {
            std::ostringstream os;
            dhgcn::write_attention_csv(fo, os);
            write_text_file(ex_out, os.str());
        }
        if (!ex_hops.empty()) {
            std::ostringstream os;
            dhgcn::write_predicted_hops_csv(fo, os);
            write_text_file(ex_hops, os.str());
        }
        std::cout << "attention written to " << ex_out << "\n";

        Manifest m("export-attention");
        m.add("ckpt", ex_ckpt);
        m.add("input", ex_input);
        m.add("out", ex_out);
        m.add("out_hops", ex_hops);
        m.add("scale", ex_scale);
        m.write(ex_manifest.empty() ? ex_out + ".manifest" : ex_manifest);
        return 0;
    }

    return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const dhgcn::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const dhgcn::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitData;
    } catch (const dhgcn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const dhgcn::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}
