#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "banforge/tensor.hpp"

namespace banforge {

// Named map from parameter identifier to tensor, iterated in insertion order.
// Names are unique and shapes are immutable once added; insertion order is
// the declaration order used by checkpoints and gradient accumulation.
class ParameterSet {
public:
    void add(const std::string& name, Tensor value);

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    // Replaces the stored tensor; the new shape must match the declared one.
    void set(const std::string& name, Tensor value);

    const std::string& name(std::size_t i) const { return entries_[i].first; }
    Tensor& value(std::size_t i) { return entries_[i].second; }
    const Tensor& value(std::size_t i) const { return entries_[i].second; }

    std::size_t total_elements() const;
    std::uint64_t checksum() const;

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

} // namespace banforge
