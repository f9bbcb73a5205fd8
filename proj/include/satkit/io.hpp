#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace satkit::io {

std::string sha256_hex(const void* data, std::size_t n);
std::string sha256_hex(std::span<const std::byte> bytes);

// Raw array payloads are little-endian, C-order, no header. Saliency maps are
// stored as f32; checkpoints as f64 so reloads reproduce forwards bit-exactly.
std::vector<std::byte> pack_f32_le(std::span<const double> values);
std::vector<double> unpack_f32_le(std::span<const std::byte> bytes);
std::vector<std::byte> pack_f64_le(std::span<const double> values);
std::vector<double> unpack_f64_le(std::span<const std::byte> bytes);

void write_file(const std::filesystem::path& p, std::span<const std::byte> bytes);
std::vector<std::byte> read_file(const std::filesystem::path& p);
void write_text(const std::filesystem::path& p, std::string_view text);
std::string read_text(const std::filesystem::path& p);

}  // namespace satkit::io
