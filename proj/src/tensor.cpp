#include "banforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace banforge {

namespace {

std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw ArgumentError("tensor shape has a zero extent");
        n *= d;
    }
    return n;
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(checked_numel(shape_), real(0)) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<real> data) : shape_(std::move(shape)) {
    if (checked_numel(shape_) != data.size()) {
        throw ArgumentError("tensor data length does not match shape product");
    }
    data_ = std::move(data);
}

Tensor Tensor::full(std::vector<std::size_t> shape, real value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor Tensor::scalar(real value) {
    Tensor t;
    t.data_.assign(1, value);
    return t;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ',';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

bool Tensor::all_finite() const {
    for (real v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::uint64_t Tensor::checksum() const {
    std::uint64_t h = fnv1a64(nullptr, 0);
    std::uint64_t rank = shape_.size();
    h = fnv1a64(&rank, sizeof(rank), h);
    for (std::size_t d : shape_) {
        std::uint64_t d64 = d;
        h = fnv1a64(&d64, sizeof(d64), h);
    }
    return fnv1a64(data_.data(), data_.size() * sizeof(real), h);
}

void ensure_finite(const Tensor& t, const char* what) {
    if (!t.all_finite()) {
        throw NumericError(std::string(what) + " produced a non-finite value");
    }
}

Tensor softmax(const Tensor& logits, double temperature) {
    if (temperature <= 0.0) throw ArgumentError("softmax temperature must be positive");
    if (logits.rank() != 2) throw ArgumentError("softmax expects a [b,n] tensor, got " + logits.shape_str());
    if (!logits.all_finite()) throw NumericError("softmax input logits are non-finite");

    const std::size_t rows = logits.dim(0);
    const std::size_t cols = logits.dim(1);
    Tensor out(logits.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const real* z = logits.data() + r * cols;
        real* q = out.data() + r * cols;
        real maxv = z[0];
        for (std::size_t c = 1; c < cols; ++c) maxv = std::max(maxv, z[c]);
        real sum = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            q[c] = std::exp((z[c] - maxv) / static_cast<real>(temperature));
            sum += q[c];
        }
        for (std::size_t c = 0; c < cols; ++c) q[c] /= sum;
    }
    ensure_finite(out, "softmax");
    return out;
}

Tensor log_softmax(const Tensor& logits, double temperature) {
    if (temperature <= 0.0) throw ArgumentError("log_softmax temperature must be positive");
    if (logits.rank() != 2) throw ArgumentError("log_softmax expects a [b,n] tensor, got " + logits.shape_str());
    if (!logits.all_finite()) throw NumericError("log_softmax input logits are non-finite");

    const std::size_t rows = logits.dim(0);
    const std::size_t cols = logits.dim(1);
    const real inv_t = real(1) / static_cast<real>(temperature);
    Tensor out(logits.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const real* z = logits.data() + r * cols;
        real* y = out.data() + r * cols;
        real maxv = z[0];
        for (std::size_t c = 1; c < cols; ++c) maxv = std::max(maxv, z[c]);
        real sum = 0;
        for (std::size_t c = 0; c < cols; ++c) sum += std::exp((z[c] - maxv) * inv_t);
        const real lse = std::log(sum) + maxv * inv_t;
        for (std::size_t c = 0; c < cols; ++c) y[c] = z[c] * inv_t - lse;
    }
    ensure_finite(out, "log_softmax");
    return out;
}

double perplexity_from_nll(const std::vector<double>& per_token_nll) {
    if (per_token_nll.empty()) throw ArgumentError("perplexity over an empty token list");
    double total = 0.0;
    for (double v : per_token_nll) total += v;
    return std::exp(total / static_cast<double>(per_token_nll.size()));
}

std::uint64_t fnv1a64(const void* bytes, std::size_t len, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace banforge
