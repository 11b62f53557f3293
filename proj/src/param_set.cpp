#include "banforge/param_set.hpp"

namespace banforge {

void ParameterSet::add(const std::string& name, Tensor value) {
    if (name.empty()) throw ArgumentError("parameter name must be nonempty");
    if (index_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(value));
}

Tensor& ParameterSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
    return entries_[it->second].second;
}

const Tensor& ParameterSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
    return entries_[it->second].second;
}

void ParameterSet::set(const std::string& name, Tensor value) {
    Tensor& slot = at(name);
    if (!slot.same_shape(value)) {
        throw ArgumentError("parameter " + name + " shape is immutable: declared " + slot.shape_str() +
                            ", got " + value.shape_str());
    }
    slot = std::move(value);
}

std::size_t ParameterSet::total_elements() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
}

std::uint64_t ParameterSet::checksum() const {
    std::uint64_t h = fnv1a64(nullptr, 0);
    for (const auto& [name, t] : entries_) {
        h = fnv1a64(name.data(), name.size(), h);
        std::uint64_t tc = t.checksum();
        h = fnv1a64(&tc, sizeof(tc), h);
    }
    return h;
}

} // namespace banforge
