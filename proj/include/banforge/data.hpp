#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "banforge/tensor.hpp"

namespace banforge {

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

// Immutable labelled dataset. Inputs are [N, ...]; labels are per-row class
// ids in [0, num_classes).
struct Dataset {
    Tensor inputs;
    std::vector<int> labels;
    int num_classes = 0;
    std::string split; // train|val|test
    ChannelStats stats; // train-derived once normalized

    std::size_t size() const { return inputs.numel() == 0 ? 0 : inputs.dim(0); }
    std::size_t row_elems() const { return size() == 0 ? 0 : inputs.numel() / size(); }

    Dataset subset(const std::vector<std::size_t>& indices) const;
    Tensor gather_rows(const std::vector<std::size_t>& indices) const;
};

// --- CIFAR binary container -------------------------------------------------

struct CifarRecord {
    int label = 0;
    Tensor image; // [3,32,32], values in [0,1] (byte / 255)
};

// 3073-byte record: label byte then R,G,B planes row-major.
CifarRecord parse_cifar10_record(std::span<const unsigned char> bytes);
std::vector<unsigned char> serialize_cifar10_record(const CifarRecord& record);

// 3074-byte record: coarse label byte, fine label byte, planes. Fine label used.
CifarRecord parse_cifar100_record(std::span<const unsigned char> bytes);
std::vector<unsigned char> serialize_cifar100_record(const CifarRecord& record, int coarse_label = 0);

// data_batch_1..5.bin / test_batch.bin as distributed.
Dataset load_cifar10_train(const std::filesystem::path& dir);
Dataset load_cifar10_test(const std::filesystem::path& dir);
// train.bin / test.bin as distributed.
Dataset load_cifar100_split(const std::filesystem::path& file, const std::string& split);

// Seed-deterministic class-proportional subset; selected indices ascending.
Dataset stratified_subset(const Dataset& source, std::size_t count, std::uint64_t seed);

// --- Synthetic classification data ------------------------------------------

// Gaussian clusters centered on a circle of radius 3 in the first two input
// dimensions. Sample s starts as class s mod classes before label flipping,
// so tests can recover the pre-flip assignment. A flipped label is drawn
// uniformly from the other classes.
Dataset make_blobs(int classes, std::size_t samples, double noise, double label_flip, std::uint64_t seed,
                   int dim = 2);

// --- Normalization ------------------------------------------------------------

// Per-channel (rank-4 inputs) or per-feature (rank-2) mean and population std
// over the train split.
ChannelStats compute_channel_stats(const Dataset& train);
// x' = (x - mean) / std. Channels with near-zero variance are left unscaled.
void apply_normalization(Dataset& ds, const ChannelStats& stats);

// --- Character corpus ---------------------------------------------------------

struct CharCorpus {
    std::vector<int> ids;
    std::string vocab; // vocab[id] = char, ordered by first appearance
    std::size_t train_end = 0;
    std::size_t val_end = 0; // [0,train_end) train, [train_end,val_end) val, rest test

    std::size_t vocab_size() const { return vocab.size(); }
    std::span<const int> split_ids(const std::string& split) const;
};

CharCorpus corpus_from_text(const std::string& text, double train_frac = 0.8, double val_frac = 0.1);
CharCorpus load_char_corpus(const std::filesystem::path& path, double train_frac = 0.8, double val_frac = 0.1);

// Contiguous next-token windows over one split: inputs [N, T] token ids,
// targets sample-major (targets[s*T + t] follows inputs row s position t).
struct LmWindows {
    Tensor inputs;
    std::vector<int> targets;
    std::size_t seq_len = 0;

    std::size_t size() const { return inputs.numel() == 0 ? 0 : inputs.dim(0); }
};

LmWindows make_lm_windows(const CharCorpus& corpus, const std::string& split, std::size_t seq_len);

} // namespace banforge
