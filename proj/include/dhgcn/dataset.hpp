#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dhgcn/errors.hpp"
#include "dhgcn/geometry.hpp"
#include "dhgcn/rng.hpp"
#include "dhgcn/synthetic.hpp"

namespace dhgcn {

struct DatasetGenConfig {
    int classes = kNumShapeClasses;
    int per_class = 125;
    int points = 512;
    int train_per_class = -1;  // default: 4/5 of per_class
    std::uint64_t seed = 1;

    int resolved_train_per_class() const {
        int t = train_per_class >= 0 ? train_per_class : (per_class * 4) / 5;
        if (t < 1 || t >= per_class)
            throw ConfigError("train_per_class must be in [1, per_class)");
        return t;
    }

    void validate() const {
        if (classes < 1 || classes > kNumShapeClasses)
            throw ConfigError("classes must be in [1," + std::to_string(kNumShapeClasses) + "]");
        if (per_class < 2) throw ConfigError("per_class must be >= 2");
        if (points < 8) throw ConfigError("points must be >= 8");
        resolved_train_per_class();
    }
};

struct Dataset {
    std::vector<std::string> class_names;
    std::vector<PointCloud> train;
    std::vector<PointCloud> test;

    int num_classes() const { return static_cast<int>(class_names.size()); }
};

inline std::uint64_t cloud_seed(std::uint64_t base, int cls, int index) {
    return mix_seed({base, 0x636c6f75ULL, static_cast<std::uint64_t>(cls),
                     static_cast<std::uint64_t>(index)});
}

/// Deterministic synthetic dataset with a seeded per-class train/test split.
inline Dataset generate_dataset(const DatasetGenConfig& cfg) {
    cfg.validate();
    const int train_n = cfg.resolved_train_per_class();
    Dataset ds;
    for (int c = 0; c < cfg.classes; ++c) ds.class_names.push_back(shape_class_names()[c]);
    for (int c = 0; c < cfg.classes; ++c) {
        std::vector<int> order(cfg.per_class);
        std::iota(order.begin(), order.end(), 0);
        auto split_rng = make_rng({cfg.seed, 0x73706c74ULL, static_cast<std::uint64_t>(c)});
        std::shuffle(order.begin(), order.end(), split_rng);
        std::vector<char> is_train(cfg.per_class, 0);
        for (int i = 0; i < train_n; ++i) is_train[order[i]] = 1;

        for (int i = 0; i < cfg.per_class; ++i) {
            SyntheticSpec spec = random_spec(static_cast<ShapeClass>(c), cfg.points,
                                             cloud_seed(cfg.seed, c, i));
            PointCloud cloud = sample_synthetic(spec);
            (is_train[i] ? ds.train : ds.test).push_back(std::move(cloud));
        }
    }
    return ds;
}

/// Layout: <root>/<class_name>/<id>.xyz, classes.txt with one class name per
/// label, split.txt with lines "train|test <class>/<id>.xyz".
inline void write_dataset(const DatasetGenConfig& cfg, const std::string& root) {
    cfg.validate();
    namespace fs = std::filesystem;
    const int train_n = cfg.resolved_train_per_class();
    fs::create_directories(root);

    std::ofstream classes(fs::path(root) / "classes.txt");
    if (!classes) throw DataError("cannot write classes.txt under " + root);
    for (int c = 0; c < cfg.classes; ++c) classes << shape_class_names()[c] << "\n";
    classes.close();

    std::ofstream split(fs::path(root) / "split.txt");
    if (!split) throw DataError("cannot write split.txt under " + root);

    char name[64];
    for (int c = 0; c < cfg.classes; ++c) {
        const std::string& cls_name = shape_class_names()[c];
        fs::create_directories(fs::path(root) / cls_name);

        std::vector<int> order(cfg.per_class);
        std::iota(order.begin(), order.end(), 0);
        auto split_rng = make_rng({cfg.seed, 0x73706c74ULL, static_cast<std::uint64_t>(c)});
        std::shuffle(order.begin(), order.end(), split_rng);
        std::vector<char> is_train(cfg.per_class, 0);
        for (int i = 0; i < train_n; ++i) is_train[order[i]] = 1;

        for (int i = 0; i < cfg.per_class; ++i) {
            SyntheticSpec spec = random_spec(static_cast<ShapeClass>(c), cfg.points,
                                             cloud_seed(cfg.seed, c, i));
            PointCloud cloud = sample_synthetic(spec);
            std::snprintf(name, sizeof(name), "%03d.xyz", i);
            save_points(cloud, (fs::path(root) / cls_name / name).string());
            split << (is_train[i] ? "train " : "test ") << cls_name << "/" << name << "\n";
        }
    }
    if (!split) throw DataError("write failed: split.txt");
}

inline Dataset load_dataset(const std::string& root) {
    namespace fs = std::filesystem;
    Dataset ds;

    std::ifstream classes(fs::path(root) / "classes.txt");
    if (!classes) throw DataError("cannot open classes.txt under " + root);
    std::string line;
    while (std::getline(classes, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) ds.class_names.push_back(line);
    }
    if (ds.class_names.empty()) throw DataError("classes.txt is empty");

    std::ifstream split(fs::path(root) / "split.txt");
    if (!split) throw DataError("cannot open split.txt under " + root);
    int line_no = 0;
    while (std::getline(split, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto sp = line.find(' ');
        if (sp == std::string::npos)
            throw DataError("split.txt: malformed line " + std::to_string(line_no));
        const std::string tag = line.substr(0, sp);
        const std::string rel = line.substr(sp + 1);
        if (tag != "train" && tag != "test")
            throw DataError("split.txt: unknown tag '" + tag + "' at line " +
                            std::to_string(line_no));
        const auto slash = rel.find('/');
        if (slash == std::string::npos)
            throw DataError("split.txt: malformed path at line " + std::to_string(line_no));
        const std::string cls_name = rel.substr(0, slash);
        const auto it = std::find(ds.class_names.begin(), ds.class_names.end(), cls_name);
        if (it == ds.class_names.end())
            throw DataError("split.txt: unknown class '" + cls_name + "' at line " +
                            std::to_string(line_no));
        PointCloud cloud = load_points((fs::path(root) / rel).string());
        cloud.label = static_cast<int>(it - ds.class_names.begin());
        (tag == "train" ? ds.train : ds.test).push_back(std::move(cloud));
    }
    if (ds.train.empty() && ds.test.empty()) throw DataError("split.txt lists no clouds");
    return ds;
}

}  // namespace dhgcn
