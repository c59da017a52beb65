#pragma once

// "GBET" tensor files: magic "GBET", u8 version (1), u8 rank, rank x u32 LE
// dims, then the row-major f32 LE payload.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "gbe/tensor.hpp"

namespace gbe {

inline constexpr std::uint8_t kGbetVersion = 1;

std::vector<std::uint8_t> encode_tensor(const Tensor<float>& t);
// Decodes one tensor starting at `offset`; advances `offset` past it.
// `what` names the source in error messages.
Tensor<float> decode_tensor(const std::vector<std::uint8_t>& bytes, std::size_t& offset, const std::string& what);

void write_tensor(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> read_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

// Lowercase hex SHA-256 of a byte buffer.
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);

using NamedTensors = std::map<std::string, Tensor<float>>;

// Checkpoint = <path>.gbet holding concatenated tensors plus <path>.json
// mapping each name to its byte offset.
void write_checkpoint(const std::filesystem::path& stem, const std::vector<std::pair<std::string, Tensor<float>>>& tensors);
NamedTensors read_checkpoint(const std::filesystem::path& stem);

}  // namespace gbe
