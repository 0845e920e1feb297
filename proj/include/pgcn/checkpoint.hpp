#pragma once

#include <string>
#include <vector>

#include "pgcn/optim.hpp"

namespace pgcn {

// Container layout: "PGCN", a version byte, an 8-byte little-endian manifest
// length, a JSON manifest ({name, dtype, shape, offset} per tensor), the raw
// float32 payload in manifest order, and a CRC-32 of the payload.
void save_checkpoint(const std::string& path, const ParamList& tensors);

// Restores into the given tensors, matched by name. The whole file is
// validated (magic, version, manifest/tensor bijection, shapes, CRC) before
// any tensor is touched, so a bad file never leaves a half-loaded model.
void load_checkpoint(const std::string& path, ParamList& tensors);

struct CheckpointEntry {
    std::string name;
    Shape shape;
};

// Manifest only; no payload validation.
std::vector<CheckpointEntry> peek_checkpoint(const std::string& path);

}  // namespace pgcn
