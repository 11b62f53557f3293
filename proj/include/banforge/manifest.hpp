#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "banforge/pipeline.hpp"

namespace banforge {

// Data source descriptor resolved from the manifest's "data" object.
struct DataConfig {
    enum class Kind { kBlobs, kCifar10, kCifar100, kText };
    Kind kind = Kind::kBlobs;

    // blobs
    int classes = 3;
    std::size_t train_samples = 2000;
    std::size_t val_samples = 500;
    std::size_t test_samples = 2000;
    double noise = 0.5;
    double label_flip = 0.0;
    int dim = 2;

    // cifar10 / cifar100
    std::filesystem::path dir;
    std::size_t subset_train = 0; // 0 = all
    std::size_t subset_test = 0;
    double val_fraction = 0.1; // carved from the (subset) train split
    bool normalize = true;
    bool augment = false;

    // text
    std::filesystem::path path;
    std::size_t seq_len = 35;
    double train_frac = 0.8;
    double val_frac = 0.1;
};

// Declarative experiment description (JSON, versioned schema).
struct RunManifest {
    int schema_version = 1;
    std::string name;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "runs";
    DataConfig data;
    std::vector<ModelSpec> models; // one spec, or generations+1 for a chain
    TrainConfig train;
    int generations = 1;

    // ConfigError diagnostics name the offending field.
    static RunManifest load(const std::filesystem::path& path);
    static RunManifest parse(const std::string& text, const std::filesystem::path& base_dir);

    // Checks invariants and that referenced paths exist.
    void validate() const;

    std::filesystem::path run_dir() const { return output_dir / name; }
    std::string to_json() const; // resolved manifest, written into the run dir
};

// Builds the bundle described by the config. All randomness is keyed from
// `seed`, so a manifest fully determines its data.
DataBundle load_data(const DataConfig& config, std::uint64_t seed);

} // namespace banforge
