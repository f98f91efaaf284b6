// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "aliif/model.hpp"

namespace aliif {

// Binary checkpoint layout (all integers little-endian):
//   magic "ALIF" | u32 version=1 | u32 mode (0=liif, 1=aliif)
//   u32 K | u32 D | u32 B | u32 n_widths=4
//   u32 widths[4] = {mlp_layers, mlp_hidden, expansion_layers, expansion_hidden}
//   f32 parameter blocks in declared parameter order
//   u64 FNV-1a checksum of every preceding byte
// A human-readable sidecar at <path>.manifest records config, seed and the
// behavior flags (outer_relu, share_ensemble_weights), which the loader
// applies when present.
void save_checkpoint(ModelT<float>& model, const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& manifest_extra = {});

ModelT<float> load_checkpoint(const std::string& path);

// Stored checksum of an existing checkpoint file (validates the file).
uint64_t checkpoint_checksum(const std::string& path);

uint64_t fnv1a_bytes(const uint8_t* data, size_t len);

}  // namespace aliif
