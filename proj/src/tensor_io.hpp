#pragma once

// Binary model files: 8-byte magic, u32 version, u32 metadata length, JSON metadata,
// then every named parameter and buffer as (name, dims, little-endian f32 data).

#include <cstdint>
#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "json.hpp"

namespace lnm::detail {

void write_model_file(const std::filesystem::path& path, const char (&magic)[9], std::uint32_t version,
                      const nlohmann::json& meta, torch::nn::Module& module);

/// Reads the metadata only; `bytes` keeps the payload for load_model_tensors.
nlohmann::json read_model_meta(const std::filesystem::path& path, const char (&magic)[9],
                               std::uint32_t version, std::string& bytes, size_t& payload_offset);

void load_model_tensors(const std::string& bytes, size_t payload_offset, torch::nn::Module& module,
                        const std::string& what);

}  // namespace lnm::detail
