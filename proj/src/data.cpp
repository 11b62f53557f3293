#include "banforge/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "banforge/fsio.hpp"
#include "banforge/rng.hpp"

namespace banforge {

namespace {

constexpr std::size_t kCifarPixels = 3 * 32 * 32;

Tensor decode_cifar_planes(std::span<const unsigned char> planes) {
    Tensor image({3, 32, 32});
    for (std::size_t i = 0; i < kCifarPixels; ++i) {
        image[i] = static_cast<real>(planes[i]) / real(255);
    }
    return image;
}

void encode_cifar_planes(const Tensor& image, std::vector<unsigned char>& out) {
    if (image.shape() != std::vector<std::size_t>{3, 32, 32}) {
        throw ArgumentError("cifar image must be [3,32,32], got " + image.shape_str());
    }
    for (std::size_t i = 0; i < kCifarPixels; ++i) {
        const double v = static_cast<double>(image[i]) * 255.0;
        const long b = std::lround(v);
        if (b < 0 || b > 255 || std::abs(v - static_cast<double>(b)) > 1e-6) {
            throw ArgumentError("cifar image value at index " + std::to_string(i) + " is not a byte/255 level");
        }
        out.push_back(static_cast<unsigned char>(b));
    }
}

Dataset dataset_from_records(std::vector<CifarRecord> records, int num_classes, std::string split) {
    if (records.empty()) throw FormatError("cifar: no records");
    Tensor inputs({records.size(), 3, 32, 32});
    std::vector<int> labels(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        std::copy(records[i].image.data(), records[i].image.data() + kCifarPixels,
                  inputs.data() + i * kCifarPixels);
        labels[i] = records[i].label;
    }
    Dataset ds;
    ds.inputs = std::move(inputs);
    ds.labels = std::move(labels);
    ds.num_classes = num_classes;
    ds.split = std::move(split);
    return ds;
}

std::vector<CifarRecord> parse_cifar_file(const std::filesystem::path& file, bool cifar100) {
    const std::vector<unsigned char> bytes = read_file_bytes(file);
    const std::size_t record_size = cifar100 ? 3074 : 3073;
    if (bytes.empty() || bytes.size() % record_size != 0) {
        throw FormatError(file.string() + ": size " + std::to_string(bytes.size()) +
                          " is not a multiple of the " + std::to_string(record_size) + "-byte record");
    }
    std::vector<CifarRecord> records;
    records.reserve(bytes.size() / record_size);
    for (std::size_t off = 0; off < bytes.size(); off += record_size) {
        std::span<const unsigned char> slice(bytes.data() + off, record_size);
        try {
            records.push_back(cifar100 ? parse_cifar100_record(slice) : parse_cifar10_record(slice));
        } catch (const FormatError& e) {
            throw FormatError(file.string() + " at byte offset " + std::to_string(off) + ": " + e.what());
        }
    }
    return records;
}

} // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
    if (indices.empty()) throw ArgumentError("dataset subset needs at least one index");
    Dataset out;
    out.inputs = gather_rows(indices);
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(labels.at(i));
    out.num_classes = num_classes;
    out.split = split;
    out.stats = stats;
    return out;
}

Tensor Dataset::gather_rows(const std::vector<std::size_t>& indices) const {
    const std::size_t elems = row_elems();
    std::vector<std::size_t> shape = inputs.shape();
    shape[0] = indices.size();
    Tensor out(std::move(shape));
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= size()) throw ArgumentError("dataset index out of range");
        std::copy(inputs.data() + indices[i] * elems, inputs.data() + (indices[i] + 1) * elems,
                  out.data() + i * elems);
    }
    return out;
}

CifarRecord parse_cifar10_record(std::span<const unsigned char> bytes) {
    if (bytes.size() != 3073) {
        throw FormatError("cifar10 record must be 3073 bytes, got " + std::to_string(bytes.size()));
    }
    if (bytes[0] >= 10) {
        throw FormatError("cifar10 label byte at offset 0 is " + std::to_string(bytes[0]) + ", expected [0,10)");
    }
    return {static_cast<int>(bytes[0]), decode_cifar_planes(bytes.subspan(1))};
}

std::vector<unsigned char> serialize_cifar10_record(const CifarRecord& record) {
    if (record.label < 0 || record.label >= 10) throw ArgumentError("cifar10 label out of range");
    std::vector<unsigned char> out;
    out.reserve(3073);
    out.push_back(static_cast<unsigned char>(record.label));
    encode_cifar_planes(record.image, out);
    return out;
}

CifarRecord parse_cifar100_record(std::span<const unsigned char> bytes) {
    if (bytes.size() != 3074) {
        throw FormatError("cifar100 record must be 3074 bytes, got " + std::to_string(bytes.size()));
    }
    if (bytes[0] >= 20) {
        throw FormatError("cifar100 coarse label byte at offset 0 is " + std::to_string(bytes[0]));
    }
    if (bytes[1] >= 100) {
        throw FormatError("cifar100 fine label byte at offset 1 is " + std::to_string(bytes[1]));
    }
    return {static_cast<int>(bytes[1]), decode_cifar_planes(bytes.subspan(2))};
}

std::vector<unsigned char> serialize_cifar100_record(const CifarRecord& record, int coarse_label) {
    if (record.label < 0 || record.label >= 100) throw ArgumentError("cifar100 fine label out of range");
    if (coarse_label < 0 || coarse_label >= 20) throw ArgumentError("cifar100 coarse label out of range");
    std::vector<unsigned char> out;
    out.reserve(3074);
    out.push_back(static_cast<unsigned char>(coarse_label));
    out.push_back(static_cast<unsigned char>(record.label));
    encode_cifar_planes(record.image, out);
    return out;
}

Dataset load_cifar10_train(const std::filesystem::path& dir) {
    std::vector<CifarRecord> records;
    for (int i = 1; i <= 5; ++i) {
        const auto file = dir / ("data_batch_" + std::to_string(i) + ".bin");
        if (i > 1 && !std::filesystem::exists(file)) break; // accept shorter synthetic sets
        auto part = parse_cifar_file(file, false);
        records.insert(records.end(), part.begin(), part.end());
    }
    return dataset_from_records(std::move(records), 10, "train");
}

Dataset load_cifar10_test(const std::filesystem::path& dir) {
    return dataset_from_records(parse_cifar_file(dir / "test_batch.bin", false), 10, "test");
}

Dataset load_cifar100_split(const std::filesystem::path& file, const std::string& split) {
    return dataset_from_records(parse_cifar_file(file, true), 100, split);
}

Dataset stratified_subset(const Dataset& source, std::size_t count, std::uint64_t seed) {
    if (count == 0 || count > source.size()) {
        throw ArgumentError("stratified subset count " + std::to_string(count) + " out of range");
    }
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(source.num_classes));
    for (std::size_t i = 0; i < source.size(); ++i) {
        by_class[static_cast<std::size_t>(source.labels[i])].push_back(i);
    }
    const std::size_t classes = by_class.size();
    std::vector<std::size_t> quota(classes, count / classes);
    for (std::size_t c = 0; c < count % classes; ++c) quota[c] += 1;

    std::vector<std::size_t> chosen;
    chosen.reserve(count);
    for (std::size_t c = 0; c < classes; ++c) {
        if (quota[c] > by_class[c].size()) {
            throw ArgumentError("stratified subset: class " + std::to_string(c) + " has only " +
                                std::to_string(by_class[c].size()) + " samples, need " + std::to_string(quota[c]));
        }
        Rng rng = Rng::keyed(seed, {0x73747261ULL, c});
        rng.shuffle(by_class[c]);
        chosen.insert(chosen.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(quota[c]));
    }
    std::sort(chosen.begin(), chosen.end());
    return source.subset(chosen);
}

Dataset make_blobs(int classes, std::size_t samples, double noise, double label_flip, std::uint64_t seed, int dim) {
    if (classes < 2) throw ArgumentError("make_blobs: need at least 2 classes");
    if (samples == 0) throw ArgumentError("make_blobs: need at least one sample");
    if (noise <= 0.0) throw ArgumentError("make_blobs: noise must be positive");
    if (label_flip < 0.0 || label_flip >= 0.5) throw ArgumentError("make_blobs: label_flip must lie in [0, 0.5)");
    if (dim < 2) throw ArgumentError("make_blobs: dim must be >= 2");

    const double radius = 3.0;
    Rng rng(seed);
    Tensor inputs({samples, static_cast<std::size_t>(dim)});
    std::vector<int> labels(samples);
    for (std::size_t s = 0; s < samples; ++s) {
        const int cls = static_cast<int>(s % static_cast<std::size_t>(classes));
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(cls) / static_cast<double>(classes);
        real* row = inputs.data() + s * static_cast<std::size_t>(dim);
        row[0] = static_cast<real>(radius * std::cos(angle) + noise * rng.normal());
        row[1] = static_cast<real>(radius * std::sin(angle) + noise * rng.normal());
        for (int d = 2; d < dim; ++d) row[d] = static_cast<real>(noise * rng.normal());

        int label = cls;
        if (label_flip > 0.0 && rng.uniform() < label_flip) {
            const auto shift = 1 + rng.below(static_cast<std::uint64_t>(classes - 1));
            label = static_cast<int>((static_cast<std::uint64_t>(cls) + shift) % static_cast<std::uint64_t>(classes));
        }
        labels[s] = label;
    }
    Dataset ds;
    ds.inputs = std::move(inputs);
    ds.labels = std::move(labels);
    ds.num_classes = classes;
    ds.split = "train";
    return ds;
}

ChannelStats compute_channel_stats(const Dataset& train) {
    if (train.size() == 0) throw ArgumentError("channel stats on an empty dataset");
    const Tensor& x = train.inputs;
    std::size_t channels = 0;
    std::size_t inner = 0; // elements per channel per sample
    if (x.rank() == 2) {
        channels = x.dim(1);
        inner = 1;
    } else if (x.rank() == 4) {
        channels = x.dim(1);
        inner = x.dim(2) * x.dim(3);
    } else {
        throw ArgumentError("channel stats need [N,d] or [N,C,H,W] inputs, got " + x.shape_str());
    }
    const std::size_t n = x.dim(0);
    ChannelStats stats;
    stats.mean.assign(channels, 0.0);
    stats.stddev.assign(channels, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t c = 0; c < channels; ++c) {
            const real* p = x.data() + (s * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) stats.mean[c] += static_cast<double>(p[i]);
        }
    }
    const double count = static_cast<double>(n * inner);
    for (std::size_t c = 0; c < channels; ++c) stats.mean[c] /= count;
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t c = 0; c < channels; ++c) {
            const real* p = x.data() + (s * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                const double d = static_cast<double>(p[i]) - stats.mean[c];
                stats.stddev[c] += d * d;
            }
        }
    }
    for (std::size_t c = 0; c < channels; ++c) stats.stddev[c] = std::sqrt(stats.stddev[c] / count);
    return stats;
}

void apply_normalization(Dataset& ds, const ChannelStats& stats) {
    Tensor& x = ds.inputs;
    const std::size_t channels = stats.mean.size();
    std::size_t inner = 1;
    if (x.rank() == 4) {
        inner = x.dim(2) * x.dim(3);
    } else if (x.rank() != 2) {
        throw ArgumentError("normalization needs [N,d] or [N,C,H,W] inputs, got " + x.shape_str());
    }
    if (x.dim(1) != channels) throw ArgumentError("normalization stats channel count mismatch");
    const std::size_t n = x.dim(0);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t c = 0; c < channels; ++c) {
            const double sd = stats.stddev[c] > 1e-12 ? stats.stddev[c] : 1.0;
            real* p = x.data() + (s * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                p[i] = static_cast<real>((static_cast<double>(p[i]) - stats.mean[c]) / sd);
            }
        }
    }
    ds.stats = stats;
}

std::span<const int> CharCorpus::split_ids(const std::string& split) const {
    if (split == "train") return {ids.data(), train_end};
    if (split == "val") return {ids.data() + train_end, val_end - train_end};
    if (split == "test") return {ids.data() + val_end, ids.size() - val_end};
    throw ArgumentError("unknown corpus split: " + split);
}

CharCorpus corpus_from_text(const std::string& text, double train_frac, double val_frac) {
    if (text.empty()) throw FormatError("corpus text is empty");
    if (train_frac <= 0.0 || val_frac < 0.0 || train_frac + val_frac > 1.0) {
        throw ArgumentError("corpus split fractions must satisfy train > 0, val >= 0, train + val <= 1");
    }
    CharCorpus corpus;
    std::unordered_map<char, int> char_to_id;
    corpus.ids.reserve(text.size());
    for (char ch : text) {
        auto [it, inserted] = char_to_id.emplace(ch, static_cast<int>(corpus.vocab.size()));
        if (inserted) corpus.vocab.push_back(ch);
        corpus.ids.push_back(it->second);
    }
    const auto n = corpus.ids.size();
    corpus.train_end = std::max<std::size_t>(1, static_cast<std::size_t>(static_cast<double>(n) * train_frac));
    corpus.val_end = std::min(n, corpus.train_end +
                                     static_cast<std::size_t>(static_cast<double>(n) * val_frac));
    return corpus;
}

CharCorpus load_char_corpus(const std::filesystem::path& path, double train_frac, double val_frac) {
    std::string text = read_file_text(path);
    if (text.empty()) throw FormatError(path.string() + ": corpus file is empty");
    return corpus_from_text(text, train_frac, val_frac);
}

LmWindows make_lm_windows(const CharCorpus& corpus, const std::string& split, std::size_t seq_len) {
    if (seq_len == 0) throw ArgumentError("lm windows need seq_len >= 1");
    const std::span<const int> ids = corpus.split_ids(split);
    if (ids.size() < seq_len + 1) {
        throw ArgumentError("corpus split '" + split + "' has " + std::to_string(ids.size()) +
                            " tokens, too short for seq_len " + std::to_string(seq_len));
    }
    const std::size_t count = (ids.size() - 1) / seq_len;
    LmWindows w;
    w.seq_len = seq_len;
    w.inputs = Tensor({count, seq_len});
    w.targets.resize(count * seq_len);
    for (std::size_t s = 0; s < count; ++s) {
        const std::size_t base = s * seq_len;
        for (std::size_t t = 0; t < seq_len; ++t) {
            w.inputs[s * seq_len + t] = static_cast<real>(ids[base + t]);
            w.targets[s * seq_len + t] = ids[base + t + 1];
        }
    }
    return w;
}

} // namespace banforge
