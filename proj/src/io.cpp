#include "satkit/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "satkit/errors.hpp"

namespace satkit::io {

std::string sha256_hex(const void* data, std::size_t n) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_hex(std::span<const std::byte> bytes) {
  return sha256_hex(bytes.data(), bytes.size());
}

namespace {

template <class UInt>
void put_le(std::byte* dst, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    dst[i] = static_cast<std::byte>((v >> (8 * i)) & 0xff);
  }
}

template <class UInt>
UInt get_le(const std::byte* src) {
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    v |= static_cast<UInt>(static_cast<unsigned char>(src[i])) << (8 * i);
  }
  return v;
}

}  // namespace

std::vector<std::byte> pack_f32_le(std::span<const double> values) {
  std::vector<std::byte> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    float f = static_cast<float>(values[i]);
    put_le(out.data() + 4 * i, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

std::vector<double> unpack_f32_le(std::span<const std::byte> bytes) {
  if (bytes.size() % 4 != 0) throw MissingArtifactError("f32 payload size not a multiple of 4");
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(bytes.data() + 4 * i)));
  }
  return out;
}

std::vector<std::byte> pack_f64_le(std::span<const double> values) {
  std::vector<std::byte> out(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    put_le(out.data() + 8 * i, std::bit_cast<std::uint64_t>(values[i]));
  }
  return out;
}

std::vector<double> unpack_f64_le(std::span<const std::byte> bytes) {
  if (bytes.size() % 8 != 0) throw MissingArtifactError("f64 payload size not a multiple of 8");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes.data() + 8 * i));
  }
  return out;
}

void write_file(const std::filesystem::path& p, std::span<const std::byte> bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open for writing: " + p.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed: " + p.string());
}

std::vector<std::byte> read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  if (!f) throw MissingArtifactError("cannot open: " + p.string());
  auto n = static_cast<std::size_t>(f.tellg());
  f.seekg(0);
  std::vector<std::byte> bytes(n);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
  if (!f) throw MissingArtifactError("read failed: " + p.string());
  return bytes;
}

void write_text(const std::filesystem::path& p, std::string_view text) {
  write_file(p, std::as_bytes(std::span<const char>(text.data(), text.size())));
}

std::string read_text(const std::filesystem::path& p) {
  auto bytes = read_file(p);
  return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

}  // namespace satkit::io
