#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "banforge/data.hpp"
#include "banforge/objectives.hpp"
#include "banforge/rng.hpp"
#include "banforge/tensor.hpp"

namespace banforge::test {

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<real>(rng.uniform(lo, hi));
    return t;
}

// Valid teacher rows: softmax of random logits (rows sum to 1 exactly up to
// the normalizing division).
inline Tensor random_prob_rows(std::size_t b, std::size_t n, Rng& rng, double logit_scale = 2.0) {
    return softmax(random_tensor({b, n}, rng, -logit_scale, logit_scale), 1.0);
}

inline std::vector<int> random_labels(std::size_t b, std::size_t n, Rng& rng) {
    std::vector<int> labels(b);
    for (std::size_t s = 0; s < b; ++s) labels[s] = static_cast<int>(rng.below(n));
    return labels;
}

// Fresh scratch directory under the build tree; unique per call.
inline std::filesystem::path scratch_dir(const std::string& tag) {
    static int counter = 0;
    const auto dir = std::filesystem::temp_directory_path() /
                     ("banforge-test-" + tag + "-" + std::to_string(++counter) + "-" +
                      std::to_string(static_cast<unsigned>(::getpid())));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Writes a synthetic dataset in the CIFAR-10 binary layout: class-dependent
// oriented sinusoid patterns plus noise, quantized to bytes.
inline void write_synthetic_cifar10(const std::filesystem::path& dir, std::size_t train_count,
                                    std::size_t test_count, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    auto make_file = [&](const std::filesystem::path& file, std::size_t count, std::uint64_t file_seed) {
        Rng rng(file_seed);
        std::vector<unsigned char> bytes;
        bytes.reserve(count * 3073);
        for (std::size_t i = 0; i < count; ++i) {
            const int label = static_cast<int>(i % 10);
            CifarRecord rec;
            rec.label = label;
            rec.image = Tensor({3, 32, 32});
            const double fx = 1.0 + label % 5;
            const double fy = 1.0 + label / 5;
            for (std::size_t c = 0; c < 3; ++c) {
                for (std::size_t y = 0; y < 32; ++y) {
                    for (std::size_t x = 0; x < 32; ++x) {
                        double v = 0.5 + 0.35 * std::sin(2.0 * 3.14159265358979 *
                                                         (fx * static_cast<double>(x) + fy * static_cast<double>(y)) /
                                                             32.0 +
                                                         static_cast<double>(c));
                        v += 0.08 * rng.normal();
                        const long q = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
                        rec.image[(c * 32 + y) * 32 + x] = static_cast<real>(q) / real(255);
                    }
                }
            }
            const auto rec_bytes = serialize_cifar10_record(rec);
            bytes.insert(bytes.end(), rec_bytes.begin(), rec_bytes.end());
        }
        std::ofstream out(file, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    };
    make_file(dir / "data_batch_1.bin", train_count, seed);
    make_file(dir / "test_batch.bin", test_count, Rng::splitmix64(seed + 1));
}

// Deterministic pseudo-English text for LM tests.
inline std::string synthetic_text(std::size_t target_chars, std::uint64_t seed) {
    static const char* words[] = {"the",  "born",  "again", "net",   "learns", "from", "soft",
                                  "target", "rows", "and",   "labels", "while", "dark", "knowledge",
                                  "moves", "between", "students", "of", "each", "generation"};
    Rng rng(seed);
    std::string text;
    text.reserve(target_chars + 16);
    while (text.size() < target_chars) {
        text += words[rng.below(sizeof(words) / sizeof(words[0]))];
        text += rng.uniform() < 0.15 ? ".\n" : " ";
    }
    return text;
}

} // namespace banforge::test
