#pragma once

#include <filesystem>

#include "banforge/model.hpp"

namespace banforge {

// Versioned binary checkpoint container, format "BANF" v1:
//   magic "BANF" | u16 version | model spec | parameter tensors in
//   declaration order, 64-bit little-endian values | trailing FNV-1a-64
//   checksum of all preceding bytes.
// Loading verifies magic, version and checksum (FormatError on mismatch).

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const ParameterSet& params);
void save_checkpoint(const std::filesystem::path& path, const Model& model);

struct Checkpoint {
    ModelSpec spec;
    ParameterSet params;

    Model to_model() const;
    TeacherSnapshot to_snapshot(int generation) const;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace banforge
