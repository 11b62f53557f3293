#include "banforge/manifest.hpp"

#include <algorithm>

#include <json.hpp>

#include "banforge/fsio.hpp"
#include "banforge/rng.hpp"

namespace banforge {

namespace {

using nlohmann::json;

constexpr std::uint64_t kBlobValTag = 0x76616c00ULL;
constexpr std::uint64_t kBlobTestTag = 0x74657374ULL;
constexpr std::uint64_t kSubsetTag = 0x73756273ULL;

[[noreturn]] void field_error(const std::string& field, const std::string& detail) {
    throw ConfigError("manifest field '" + field + "': " + detail);
}

template <typename T>
T get_field(const json& j, const std::string& field, const char* type_name) {
    if (!j.contains(field)) field_error(field, "missing");
    try {
        return j.at(field).get<T>();
    } catch (const json::exception&) {
        field_error(field, std::string("expected ") + type_name);
    }
}

template <typename T>
T get_field_or(const json& j, const std::string& field, T fallback, const char* type_name) {
    if (!j.contains(field)) return fallback;
    try {
        return j.at(field).get<T>();
    } catch (const json::exception&) {
        field_error(field, std::string("expected ") + type_name);
    }
}

DataConfig parse_data(const json& j, const std::filesystem::path& base_dir) {
    DataConfig d;
    const std::string kind = get_field<std::string>(j, "kind", "string");
    if (kind == "blobs") {
        d.kind = DataConfig::Kind::kBlobs;
        d.classes = get_field_or<int>(j, "classes", d.classes, "integer");
        d.train_samples = get_field_or<std::size_t>(j, "train_samples", d.train_samples, "integer");
        d.val_samples = get_field_or<std::size_t>(j, "val_samples", d.val_samples, "integer");
        d.test_samples = get_field_or<std::size_t>(j, "test_samples", d.test_samples, "integer");
        d.noise = get_field_or<double>(j, "noise", d.noise, "number");
        d.label_flip = get_field_or<double>(j, "label_flip", d.label_flip, "number");
        d.dim = get_field_or<int>(j, "dim", d.dim, "integer");
    } else if (kind == "cifar10" || kind == "cifar100") {
        d.kind = kind == "cifar10" ? DataConfig::Kind::kCifar10 : DataConfig::Kind::kCifar100;
        d.dir = base_dir / get_field<std::string>(j, "dir", "string");
        d.subset_train = get_field_or<std::size_t>(j, "subset_train", 0, "integer");
        d.subset_test = get_field_or<std::size_t>(j, "subset_test", 0, "integer");
        d.val_fraction = get_field_or<double>(j, "val_fraction", d.val_fraction, "number");
        d.normalize = get_field_or<bool>(j, "normalize", d.normalize, "boolean");
        d.augment = get_field_or<bool>(j, "augment", d.augment, "boolean");
    } else if (kind == "text") {
        d.kind = DataConfig::Kind::kText;
        d.path = base_dir / get_field<std::string>(j, "path", "string");
        d.seq_len = get_field_or<std::size_t>(j, "seq_len", d.seq_len, "integer");
        d.train_frac = get_field_or<double>(j, "train_frac", d.train_frac, "number");
        d.val_frac = get_field_or<double>(j, "val_frac", d.val_frac, "number");
    } else {
        field_error("data.kind", "unknown kind '" + kind + "' (expected blobs|cifar10|cifar100|text)");
    }
    return d;
}

ModelSpec parse_model(const json& j) {
    ModelSpec spec;
    try {
        spec.family = family_from_name(get_field<std::string>(j, "family", "string"));
    } catch (const ArgumentError& e) {
        field_error("model.family", e.what());
    }
    spec.depth = get_field_or<int>(j, "depth", spec.depth, "integer");
    spec.width = get_field_or<int>(j, "width", spec.width, "integer");
    spec.compression = get_field_or<double>(j, "compression", spec.compression, "number");
    spec.num_classes = get_field_or<int>(j, "num_classes", spec.num_classes, "integer");
    if (j.contains("input_shape")) {
        try {
            spec.input_shape = j.at("input_shape").get<std::vector<std::size_t>>();
        } catch (const json::exception&) {
            field_error("model.input_shape", "expected an array of positive integers");
        }
    }
    spec.init_seed = get_field_or<std::uint64_t>(j, "init_seed", 0, "integer");
    return spec;
}

DistillObjective parse_objective(const json& j, std::uint64_t run_seed) {
    DistillObjective o;
    try {
        o.kind = objective_from_name(get_field_or<std::string>(j, "kind", "ce", "string"));
    } catch (const ArgumentError& e) {
        field_error("objective.kind", e.what());
    }
    o.temperature = get_field_or<double>(j, "temperature", 1.0, "number");
    o.label_weight = get_field_or<double>(j, "label_weight", 1.0, "number");
    o.permutation_seed = get_field_or<std::uint64_t>(j, "permutation_seed", run_seed, "integer");
    return o;
}

TrainConfig parse_train(const json& j, std::uint64_t run_seed) {
    TrainConfig t;
    t.epochs = get_field_or<int>(j, "epochs", t.epochs, "integer");
    t.batch_size = get_field_or<int>(j, "batch_size", t.batch_size, "integer");
    t.learning_rate = get_field_or<double>(j, "lr", t.learning_rate, "number");
    t.momentum = get_field_or<double>(j, "momentum", t.momentum, "number");
    t.weight_decay = get_field_or<double>(j, "weight_decay", t.weight_decay, "number");
    t.seed = run_seed;
    if (j.contains("metric")) {
        try {
            t.metric = metric_from_name(j.at("metric").get<std::string>());
        } catch (const std::exception& e) {
            field_error("train.metric", e.what());
        }
    }
    t.share_frozen_edges = get_field_or<bool>(j, "share_frozen_edges", false, "boolean");
    t.cache_teacher_probs = get_field_or<bool>(j, "cache_teacher_probs", false, "boolean");
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        const std::string kind = get_field_or<std::string>(s, "kind", "step", "string");
        if (kind == "step") {
            t.schedule.kind = LrSchedule::Kind::kStep;
            t.schedule.milestones = get_field_or<std::vector<int>>(s, "milestones", {}, "integer array");
        } else if (kind == "adaptive") {
            t.schedule.kind = LrSchedule::Kind::kAdaptive;
            t.schedule.patience = get_field_or<int>(s, "patience", 1, "integer");
        } else {
            field_error("train.schedule.kind", "expected step|adaptive");
        }
        t.schedule.factor = get_field_or<double>(s, "factor", t.schedule.factor, "number");
    }
    return t;
}

json data_to_json(const DataConfig& d) {
    json j;
    switch (d.kind) {
        case DataConfig::Kind::kBlobs:
            j["kind"] = "blobs";
            j["classes"] = d.classes;
            j["train_samples"] = d.train_samples;
            j["val_samples"] = d.val_samples;
            j["test_samples"] = d.test_samples;
            j["noise"] = d.noise;
            j["label_flip"] = d.label_flip;
            j["dim"] = d.dim;
            break;
        case DataConfig::Kind::kCifar10:
        case DataConfig::Kind::kCifar100:
            j["kind"] = d.kind == DataConfig::Kind::kCifar10 ? "cifar10" : "cifar100";
            j["dir"] = d.dir.string();
            j["subset_train"] = d.subset_train;
            j["subset_test"] = d.subset_test;
            j["val_fraction"] = d.val_fraction;
            j["normalize"] = d.normalize;
            j["augment"] = d.augment;
            break;
        case DataConfig::Kind::kText:
            j["kind"] = "text";
            j["path"] = d.path.string();
            j["seq_len"] = d.seq_len;
            j["train_frac"] = d.train_frac;
            j["val_frac"] = d.val_frac;
            break;
    }
    return j;
}

json model_to_json(const ModelSpec& m) {
    json j;
    j["family"] = family_name(m.family);
    j["depth"] = m.depth;
    j["width"] = m.width;
    j["compression"] = m.compression;
    j["num_classes"] = m.num_classes;
    j["input_shape"] = m.input_shape;
    j["init_seed"] = m.init_seed;
    return j;
}

} // namespace

RunManifest RunManifest::parse(const std::string& text, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("manifest is not valid JSON: ") + e.what());
    }

    RunManifest m;
    m.schema_version = get_field_or<int>(j, "schema_version", 1, "integer");
    if (m.schema_version != 1) field_error("schema_version", "unsupported version");
    m.name = get_field<std::string>(j, "name", "string");
    m.seed = get_field_or<std::uint64_t>(j, "seed", 0, "integer");
    m.output_dir = base_dir / get_field_or<std::string>(j, "output_dir", "runs", "string");

    if (!j.contains("data")) field_error("data", "missing");
    m.data = parse_data(j.at("data"), base_dir);

    if (j.contains("models")) {
        if (!j.at("models").is_array() || j.at("models").empty()) {
            field_error("models", "expected a nonempty array of model specs");
        }
        for (const json& jm : j.at("models")) m.models.push_back(parse_model(jm));
    } else if (j.contains("model")) {
        m.models.push_back(parse_model(j.at("model")));
    } else {
        field_error("model", "missing (provide 'model' or 'models')");
    }

    m.train = j.contains("train") ? parse_train(j.at("train"), m.seed) : TrainConfig{};
    m.train.seed = m.seed;
    m.train.objective = j.contains("objective") ? parse_objective(j.at("objective"), m.seed) : DistillObjective{};
    m.generations = get_field_or<int>(j, "generations", 1, "integer");
    return m;
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw ConfigError("manifest path does not exist: " + path.string());
    }
    return parse(read_file_text(path), path.parent_path());
}

void RunManifest::validate() const {
    if (name.empty()) field_error("name", "must be nonempty");
    if (generations < 1) field_error("generations", "must be >= 1");
    if (models.size() != 1 && models.size() != static_cast<std::size_t>(generations) + 1) {
        field_error("models", "need 1 spec or generations+1 specs, got " + std::to_string(models.size()));
    }
    for (const ModelSpec& spec : models) {
        try {
            spec.validate();
        } catch (const ArgumentError& e) {
            throw ConfigError(std::string("manifest field 'model': ") + e.what());
        }
    }
    switch (data.kind) {
        case DataConfig::Kind::kBlobs:
            break;
        case DataConfig::Kind::kCifar10:
        case DataConfig::Kind::kCifar100:
            if (!std::filesystem::exists(data.dir)) field_error("data.dir", "path does not exist: " + data.dir.string());
            break;
        case DataConfig::Kind::kText:
            if (!std::filesystem::exists(data.path)) {
                field_error("data.path", "path does not exist: " + data.path.string());
            }
            break;
    }
    DistillObjective objective = train.objective;
    try {
        objective.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(std::string("manifest field 'objective': ") + e.what());
    }
}

std::string RunManifest::to_json() const {
    json j;
    j["schema_version"] = schema_version;
    j["name"] = name;
    j["seed"] = seed;
    j["output_dir"] = output_dir.string();
    j["data"] = data_to_json(data);
    json jm = json::array();
    for (const ModelSpec& m : models) jm.push_back(model_to_json(m));
    j["models"] = jm;
    json jt;
    jt["epochs"] = train.epochs;
    jt["batch_size"] = train.batch_size;
    jt["lr"] = train.learning_rate;
    jt["momentum"] = train.momentum;
    jt["weight_decay"] = train.weight_decay;
    jt["metric"] = metric_name(train.metric);
    jt["share_frozen_edges"] = train.share_frozen_edges;
    jt["cache_teacher_probs"] = train.cache_teacher_probs;
    json js;
    js["kind"] = train.schedule.kind == LrSchedule::Kind::kStep ? "step" : "adaptive";
    js["factor"] = train.schedule.factor;
    js["milestones"] = train.schedule.milestones;
    js["patience"] = train.schedule.patience;
    jt["schedule"] = js;
    j["train"] = jt;
    json jo;
    jo["kind"] = objective_name(train.objective.kind);
    jo["temperature"] = train.objective.temperature;
    jo["label_weight"] = train.objective.label_weight;
    jo["permutation_seed"] = train.objective.permutation_seed;
    j["objective"] = jo;
    j["generations"] = generations;
    return j.dump(2) + "\n";
}

DataBundle load_data(const DataConfig& config, std::uint64_t seed) {
    DataBundle bundle;
    switch (config.kind) {
        case DataConfig::Kind::kBlobs: {
            bundle.train = make_blobs(config.classes, config.train_samples, config.noise, config.label_flip, seed,
                                      config.dim);
            bundle.val = make_blobs(config.classes, config.val_samples, config.noise, config.label_flip,
                                    Rng::splitmix64(seed ^ kBlobValTag), config.dim);
            bundle.test = make_blobs(config.classes, config.test_samples, config.noise, config.label_flip,
                                     Rng::splitmix64(seed ^ kBlobTestTag), config.dim);
            bundle.val.split = "val";
            bundle.test.split = "test";
            break;
        }
        case DataConfig::Kind::kCifar10:
        case DataConfig::Kind::kCifar100: {
            Dataset train, test;
            if (config.kind == DataConfig::Kind::kCifar10) {
                train = load_cifar10_train(config.dir);
                test = load_cifar10_test(config.dir);
            } else {
                train = load_cifar100_split(config.dir / "train.bin", "train");
                test = load_cifar100_split(config.dir / "test.bin", "test");
            }
            if (config.subset_train > 0) train = stratified_subset(train, config.subset_train, seed ^ kSubsetTag);
            if (config.subset_test > 0) {
                test = stratified_subset(test, config.subset_test, Rng::splitmix64(seed ^ kSubsetTag));
            }
            // Carve the validation split off the train tail.
            const auto val_count = std::max<std::size_t>(
                1, static_cast<std::size_t>(static_cast<double>(train.size()) * config.val_fraction));
            if (val_count >= train.size()) throw ConfigError("manifest field 'data.val_fraction': leaves no train data");
            std::vector<std::size_t> train_idx, val_idx;
            for (std::size_t i = 0; i + val_count < train.size(); ++i) train_idx.push_back(i);
            for (std::size_t i = train.size() - val_count; i < train.size(); ++i) val_idx.push_back(i);
            bundle.val = train.subset(val_idx);
            bundle.train = train.subset(train_idx);
            bundle.test = std::move(test);
            bundle.train.split = "train";
            bundle.val.split = "val";
            if (config.normalize) {
                const ChannelStats stats = compute_channel_stats(bundle.train);
                apply_normalization(bundle.train, stats);
                apply_normalization(bundle.val, stats);
                apply_normalization(bundle.test, stats);
            }
            bundle.augment_train = config.augment;
            break;
        }
        case DataConfig::Kind::kText: {
            bundle.corpus = load_char_corpus(config.path, config.train_frac, config.val_frac);
            bundle.seq_len = config.seq_len;
            break;
        }
    }
    return bundle;
}

} // namespace banforge
