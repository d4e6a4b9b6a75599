#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "dhgcn/dataset.hpp"
#include "dhgcn/training.hpp"

using namespace dhgcn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    fs::path dir = fs::temp_directory_path() / "dhgcn_train_test";
    fs::create_directories(dir);
    return dir;
}

Dataset tiny_dataset(int per_class = 4, int points = 64, std::uint64_t seed = 1) {
    DatasetGenConfig cfg;
    cfg.classes = 4;
    cfg.per_class = per_class;
    cfg.points = points;
    cfg.train_per_class = per_class / 2;
    cfg.seed = seed;
    return generate_dataset(cfg);
}

ModelConfig tiny_model(std::uint64_t seed = 1) {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.channels = 8;
    cfg.k = 8;
    cfg.split = 2;
    cfg.heads = 2;
    cfg.fusion_dim = 16;
    cfg.seed = seed;
    return cfg;
}

TrainConfig tiny_train(int epochs = 1, std::uint64_t seed = 1) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch = 4;
    cfg.lr = 0.05;
    cfg.seed = seed;
    return cfg;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("checkpoint round trip is bitwise lossless") {
    const fs::path dir = temp_dir();
    Model model(tiny_model(3));
    Checkpoint ckpt;
    ckpt.config = model.cfg;
    ckpt.params = model.params;
    ckpt.set_meta("epochs", "0");

    const fs::path p1 = dir / "a.dhg";
    const fs::path p2 = dir / "b.dhg";
    save_checkpoint(ckpt, p1.string());
    Checkpoint loaded = load_checkpoint(p1.string());
    save_checkpoint(loaded, p2.string());
    CHECK(file_bytes(p1) == file_bytes(p2));

    REQUIRE(loaded.params.size() == ckpt.params.size());
    for (int i = 0; i < ckpt.params.size(); ++i) {
        CHECK(loaded.params.name(i) == ckpt.params.name(i));
        CHECK(loaded.params.value(i).shape == ckpt.params.value(i).shape);
        CHECK(loaded.params.value(i).data == ckpt.params.value(i).data);
    }
    CHECK(loaded.meta_value("epochs") == "0");
}

TEST_CASE("checkpoint error paths") {
    const fs::path dir = temp_dir();
    Model model(tiny_model(5));
    Checkpoint ckpt;
    ckpt.config = model.cfg;
    ckpt.params = model.params;
    const fs::path p = dir / "c.dhg";
    save_checkpoint(ckpt, p.string());

    SECTION("corrupted magic") {
        std::string bytes = file_bytes(p);
        bytes[0] = 'X';
        const fs::path bad = dir / "bad_magic.dhg";
        std::ofstream(bad, std::ios::binary) << bytes;
        CHECK_THROWS_WITH(load_checkpoint(bad.string()),
                          Catch::Matchers::ContainsSubstring("magic"));
    }

    SECTION("truncated file") {
        std::string bytes = file_bytes(p);
        bytes.resize(bytes.size() / 2);
        const fs::path bad = dir / "trunc.dhg";
        std::ofstream(bad, std::ios::binary) << bytes;
        CHECK_THROWS_WITH(load_checkpoint(bad.string()),
                          Catch::Matchers::ContainsSubstring("truncated"));
    }

    SECTION("unknown parameter name") {
        Checkpoint extra = ckpt;
        extra.params.add("bogus.w", Tensor({2, 2}));
        const fs::path bad = dir / "unknown.dhg";
        save_checkpoint(extra, bad.string());
        CHECK_THROWS_WITH(load_checkpoint(bad.string()),
                          Catch::Matchers::ContainsSubstring("unknown parameter"));
    }

    SECTION("missing parameter") {
        Checkpoint missing;
        missing.config = ckpt.config;
        missing.params.add(ckpt.params.name(0), ckpt.params.value(0));
        const fs::path bad = dir / "missing.dhg";
        save_checkpoint(missing, bad.string());
        CHECK_THROWS_WITH(load_checkpoint(bad.string()),
                          Catch::Matchers::ContainsSubstring("missing parameter"));
    }
}

TEST_CASE("model config serialization round trips") {
    ModelConfig cfg = tiny_model(9);
    cfg.lambda = {1, 0};
    cfg.kernel_mode = KernelMode::argmax;
    cfg.loss_mode = LossMode::last_layer;
    cfg.avg_pool = true;
    cfg.sigma2 = 0.2;
    const std::string text = serialize_model_config(cfg);
    std::vector<std::pair<std::string, std::string>> meta;
    ModelConfig back = parse_model_config(text, &meta);
    CHECK(serialize_model_config(back) == text);
}

TEST_CASE("pretrain: checkpoint re-evaluates to the identical loss") {
    Dataset ds = tiny_dataset();
    ModelConfig mcfg = tiny_model();
    TrainConfig tcfg = tiny_train(1);
    PretrainResult result = pretrain(ds, mcfg, tcfg);

    const fs::path p = temp_dir() / "pre.dhg";
    save_checkpoint(result.checkpoint, p.string());
    Checkpoint loaded = load_checkpoint(p.string());

    Metrics m1 = evaluate(result.checkpoint, ds);
    Metrics m2 = evaluate(loaded, ds);
    CHECK(m1.hop_accuracy == m2.hop_accuracy);
    CHECK(m1.per_layer_hop_acc == m2.per_layer_hop_acc);
}

TEST_CASE("pretrain loss decreases over training") {
    Dataset ds = tiny_dataset(8, 96, 2);
    ModelConfig mcfg = tiny_model(2);
    TrainConfig tcfg = tiny_train(10, 2);
    PretrainResult result = pretrain(ds, mcfg, tcfg);
    REQUIRE(result.metrics.loss_curve.size() == 10);
    CHECK(result.metrics.loss_curve[9] < result.metrics.loss_curve[0]);
}

TEST_CASE("pretrain is deterministic, also across thread counts") {
    Dataset ds = tiny_dataset();
    ModelConfig mcfg = tiny_model(7);
    TrainConfig a = tiny_train(2, 7);
    TrainConfig b = tiny_train(2, 7);
    b.threads = 2;

    PretrainResult ra1 = pretrain(ds, mcfg, a);
    PretrainResult ra2 = pretrain(ds, mcfg, a);
    PretrainResult rb = pretrain(ds, mcfg, b);

    CHECK(ra1.metrics.loss_curve == ra2.metrics.loss_curve);
    CHECK(ra1.metrics.loss_curve == rb.metrics.loss_curve);
    for (int i = 0; i < ra1.checkpoint.params.size(); ++i) {
        CHECK(ra1.checkpoint.params.value(i).data == ra2.checkpoint.params.value(i).data);
        CHECK(ra1.checkpoint.params.value(i).data == rb.checkpoint.params.value(i).data);
    }
}

TEST_CASE("linear probe: fraction counting and the freeze contract") {
    Dataset ds = tiny_dataset(6, 64, 3);  // 4 classes x 3 train
    ModelConfig mcfg = tiny_model(3);
    TrainConfig tcfg = tiny_train(2, 3);
    PretrainResult pre = pretrain(ds, mcfg, tcfg);

    std::vector<std::vector<double>> before;
    for (const auto& e : pre.checkpoint.params.entries()) before.push_back(e.value.data);

    TrainConfig probe_cfg = tiny_train(3, 3);
    probe_cfg.train_fraction = 0.1;  // ceil(0.1 * 12) = 2
    ProbeResult probe = linear_probe(pre.checkpoint, ds, probe_cfg);
    CHECK(probe.samples_used == 2);
    CHECK(probe.metrics.cls_accuracy >= 0.0);
    CHECK(probe.metrics.cls_accuracy <= 1.0);
    REQUIRE(probe.metrics.loss_curve.size() == 3);

    // frozen backbone: bitwise identical before and after probing
    int i = 0;
    for (const auto& e : pre.checkpoint.params.entries()) CHECK(e.value.data == before[i++]);

    // the probe head travels with the checkpoint
    CHECK(probe.checkpoint.params.has("probe.w"));
    CHECK(probe.checkpoint.meta_value("probe_classes") == "4");
    Metrics eval_metrics = evaluate(probe.checkpoint, ds);
    CHECK(eval_metrics.cls_accuracy >= 0.0);
}

TEST_CASE("probing an untrained backbone runs and reports a baseline") {
    Dataset ds = tiny_dataset(4, 64, 5);
    Model model(tiny_model(5));
    Checkpoint ckpt;
    ckpt.config = model.cfg;
    ckpt.params = model.params;
    TrainConfig tcfg = tiny_train(2, 5);
    ProbeResult probe = linear_probe(ckpt, ds, tcfg);
    CHECK(probe.metrics.cls_accuracy >= 0.0);  // chance floor is 1/4; no threshold required
}

TEST_CASE("evaluate is deterministic and masks empty parts") {
    Dataset ds = tiny_dataset();
    Model model(tiny_model(6));
    Checkpoint ckpt;
    ckpt.config = model.cfg;
    ckpt.params = model.params;

    Metrics a = evaluate(ckpt, ds);
    Metrics b = evaluate(ckpt, ds, 2);
    CHECK(a.hop_accuracy == b.hop_accuracy);
    CHECK(a.per_layer_hop_acc == b.per_layer_hop_acc);

    // hop accuracy counts only valid ordered pairs
    PointCloud cloud = normalize_unit_sphere(ds.test[0]);
    auto [part, hops] = ground_truth(cloud, model.cfg.split, 1.2);
    ForwardOutput fo = model.run(cloud, part, hops);
    const long vp = static_cast<long>(fo.valid_ids.size());
    auto [correct, total] = hop_accuracy_counts(fo.layers[0].hop_logits, fo.hop_targets);
    CHECK(total == vp * vp);
}

TEST_CASE("hop accuracy is 1.0 for injected perfect logits") {
    Dataset ds = tiny_dataset();
    ModelConfig mcfg = tiny_model(8);
    Model model(mcfg);
    PointCloud cloud = normalize_unit_sphere(ds.test[0]);
    auto [part, hops] = ground_truth(cloud, mcfg.split, 1.2);
    ForwardOutput fo = model.run(cloud, part, hops);

    const int vp = static_cast<int>(fo.valid_ids.size());
    Tensor perfect({vp * vp, mcfg.hop_classes()});
    for (int r = 0; r < vp * vp; ++r) perfect.at(r, fo.hop_targets[r]) = 20.0;
    CHECK(hop_accuracy(perfect, fo.hop_targets) == 1.0);

    std::vector<Tensor> inject(mcfg.layers, perfect);
    ForwardOptions opt;
    opt.override_logits = &inject;
    ForwardOutput fo2 = model.run(cloud, part, hops, opt);
    for (int l = 0; l < mcfg.layers; ++l)
        CHECK(hop_accuracy(fo2.layers[l].hop_logits, fo2.hop_targets) == 1.0);
}

TEST_CASE("sigma ablation emits one row per value") {
    Dataset ds = tiny_dataset();
    ModelConfig mcfg = tiny_model(4);
    TrainConfig tcfg = tiny_train(1, 4);
    const std::vector<double> values = {0.2, 0.5, 1.0, 2.0, 5.0};
    const auto rows = ablate_sigma(values, ds, mcfg, tcfg);
    REQUIRE(rows.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(rows[i].sigma2 == values[i]);
        CHECK(rows[i].hop_acc >= 0.0);
        CHECK(rows[i].cls_acc >= 0.0);
    }
    std::ostringstream os;
    write_sigma_csv(rows, os);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    CHECK(line == "sigma2,hop_acc,cls_acc");
    int count = 0;
    while (std::getline(is, line)) ++count;
    CHECK(count == 5);
}

TEST_CASE("non-finite losses abort with the offending sample") {
    Dataset ds = tiny_dataset();
    ModelConfig mcfg = tiny_model(10);
    TrainConfig tcfg = tiny_train(1, 10);
    tcfg.lr = 1e9;  // guaranteed blow-up
    tcfg.epochs = 8;
    CHECK_THROWS_AS(pretrain(ds, mcfg, tcfg), NumericError);
}

TEST_CASE("metrics CSV writers") {
    Metrics m;
    m.hop_accuracy = 0.75;
    m.per_layer_hop_acc = {0.7, 0.8};
    m.cls_accuracy = 0.5;
    std::ostringstream os;
    write_metrics_csv(m, os);
    const std::string text = os.str();
    CHECK(text.find("metric,value\n") == 0);
    CHECK(text.find("hop_accuracy,0.750000") != std::string::npos);
    CHECK(text.find("hop_accuracy_layer1,0.800000") != std::string::npos);
    CHECK(text.find("cls_accuracy,0.500000") != std::string::npos);

    std::ostringstream os2;
    write_loss_curve_csv({1.5, 0.5}, os2);
    CHECK(os2.str().find("epoch,loss\n0,1.5\n1,0.5\n") == 0);
}
