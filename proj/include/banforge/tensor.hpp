#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "banforge/error.hpp"

namespace banforge {

// Element type of every tensor. 64-bit by default; define BANFORGE_REAL32 at
// build time to trade precision for speed (the test tolerances assume 64-bit).
#ifdef BANFORGE_REAL32
using real = float;
#else
using real = double;
#endif

// Dense n-dimensional array, row-major. A rank-0 tensor is a scalar.
// Tensors are plain values: cheap to move, copied explicitly, immutable by
// convention once handed to the graph.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<real> data);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, real value);
    static Tensor scalar(real value);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

    real* data() { return data_.data(); }
    const real* data() const { return data_.data(); }

    real& operator[](std::size_t i) { return data_[i]; }
    real operator[](std::size_t i) const { return data_[i]; }

    real& at2(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    real at2(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    bool all_finite() const;

    // FNV-1a over shape and raw element bytes. Used by determinism checks.
    std::uint64_t checksum() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<real> data_;
};

// Throws NumericError naming `what` if any element is non-finite.
void ensure_finite(const Tensor& t, const char* what);

// Row-wise softmax of a [b, n] tensor at the given temperature, computed with
// max-subtraction. Rows of the result sum to 1 within 1e-12 (64-bit).
// temperature <= 0 is an ArgumentError; non-finite logits a NumericError.
Tensor softmax(const Tensor& logits, double temperature = 1.0);

// Row-wise log softmax of z / T via logsumexp with max-subtraction.
Tensor log_softmax(const Tensor& logits, double temperature = 1.0);

// exp(mean of per-token negative log-likelihoods).
double perplexity_from_nll(const std::vector<double>& per_token_nll);

std::uint64_t fnv1a64(const void* bytes, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);

} // namespace banforge
