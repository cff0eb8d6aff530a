#pragma once

// Checkpoint file layout (all integers little-endian):
//   bytes 0-7    magic "NCAPCKPT"
//   bytes 8-15   u64 header length H
//   next H bytes UTF-8 JSON header:
//                  {"format_version": 1,
//                   "hyperparameters": {...},
//                   "vocabulary": [corpus words in id order],
//                   "tensors": {name: {"shape": [...], "byte_offset": o, "byte_length": n}}}
//   remainder    blob of 32-bit IEEE floats; offsets are relative to the blob
//                start, tensors are laid out in parameter order and cover the
//                blob exactly.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nightcap/model.hpp"

namespace nightcap {

inline constexpr int kCheckpointFormatVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const CaptionModel& model);
/// Throws FormatError (with a byte position where one applies).
CaptionModel deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const CaptionModel& model, const std::filesystem::path& path);
CaptionModel load_checkpoint(const std::filesystem::path& path);

nlohmann::json hyperparameters_to_json(const ModelConfig& config);
ModelConfig hyperparameters_from_json(const nlohmann::json& json);

/// Short content hash of the serialized checkpoint.
std::string model_id(const CaptionModel& model);

}  // namespace nightcap
