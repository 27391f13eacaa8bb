// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mile/model.hpp"
#include "mile/optim.hpp"

namespace mile {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind { kFull, kAdapter };

/// File layout (all integers little-endian):
///   "MILECKPT" u32 version u32 header_bytes header_text u64 tensor_count
///   then per tensor: u32 name_bytes name u8 dtype u32 ndim u64 dims[ndim] payload
/// The header is "key=value" lines: model fields as model.<field>, plus
/// plan, kind and free-form entries (optimizer options, training position).
struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig config;
  std::string plan;
  CheckpointKind kind = CheckpointKind::kFull;
  std::map<std::string, std::string> extra;
};

struct TensorRecord {
  std::string name;
  DType dtype = DType::kFloat32;
  Shape shape;
  // Payload widened to double; float payloads round-trip exactly.
  std::vector<double> values;
};

struct CheckpointFile {
  CheckpointHeader header;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
};

// Optimizer moments are stored as optim/m/<param> and optim/v/<param>.
inline constexpr const char* kOptimFirstPrefix = "optim/m/";
inline constexpr const char* kOptimSecondPrefix = "optim/v/";

/// Writes model tensors (all of them for kFull, adapters only for kAdapter)
/// and, when given, the optimizer state. The file is written to a temporary
/// name and renamed, so an existing checkpoint survives a failed save.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const MileModel<T>& model,
                     const std::string& plan, CheckpointKind kind,
                     const OptimizerState<T>* optimizer = nullptr,
                     const std::map<std::string, std::string>& extra = {});

CheckpointFile read_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint tensors into `model`, which must have the same config and
/// the same adapters attached. A full checkpoint must cover every model
/// tensor; an adapter checkpoint covers exactly the attached adapters and
/// leaves base weights untouched. Fills `optimizer` when the file carries
/// optimizer state (its `step` stays -1 otherwise).
template <typename T>
CheckpointHeader load_checkpoint(const std::filesystem::path& path, MileModel<T>& model,
                                 OptimizerState<T>* optimizer = nullptr);

}  // namespace mile
