#include "satkit/checkpoint.hpp"

#include <cstring>

#include "satkit/errors.hpp"
#include "satkit/io.hpp"

namespace satkit::models {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'S', 'A', 'T', 'K', 'I', 'T', 'C', 'K'};
}

void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     const std::string& training_mode_tag, const json& metadata) {
  auto params = model.parameters();
  json plist = json::array();
  std::vector<std::byte> payload;
  std::size_t offset = 0;
  for (const auto& p : params) {
    auto bytes = io::pack_f64_le(std::span<const double>(p.tensor->data(), p.tensor->size()));
    plist.push_back({{"name", p.name},
                     {"dtype", "f64"},
                     {"shape", p.tensor->shape()},
                     {"offset", offset},
                     {"sha256", io::sha256_hex(bytes)}});
    offset += bytes.size();
    payload.insert(payload.end(), bytes.begin(), bytes.end());
  }
  json manifest = {{"format", "satkit-checkpoint-v1"},
                   {"architecture_id", model.architecture_id()},
                   {"num_classes", model.num_classes()},
                   {"input",
                    {{"channels", model.input_spec().channels},
                     {"height", model.input_spec().height},
                     {"width", model.input_spec().width}}},
                   {"training_mode_tag", training_mode_tag},
                   {"metadata", metadata},
                   {"params", plist}};
  std::string mtext = manifest.dump();

  std::vector<std::byte> out;
  out.reserve(sizeof(kMagic) + 8 + mtext.size() + payload.size());
  auto push = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    out.insert(out.end(), b, b + n);
  };
  push(kMagic, sizeof(kMagic));
  std::uint64_t mlen = mtext.size();
  std::byte len_le[8];
  for (int i = 0; i < 8; ++i) len_le[i] = static_cast<std::byte>((mlen >> (8 * i)) & 0xff);
  push(len_le, 8);
  push(mtext.data(), mtext.size());
  out.insert(out.end(), payload.begin(), payload.end());
  io::write_file(path, out);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  if (bytes.size() < sizeof(kMagic) + 8 ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw MissingArtifactError("not a satkit checkpoint: " + path.string());
  }
  std::uint64_t mlen = 0;
  for (int i = 0; i < 8; ++i) {
    mlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[sizeof(kMagic) + i]))
            << (8 * i);
  }
  std::size_t mstart = sizeof(kMagic) + 8;
  if (bytes.size() < mstart + mlen) throw MissingArtifactError("truncated checkpoint manifest");
  json manifest;
  try {
    manifest = json::parse(std::string(reinterpret_cast<const char*>(bytes.data()) + mstart,
                                       mlen));
  } catch (const json::exception& e) {
    throw MissingArtifactError("corrupt checkpoint manifest: " + std::string(e.what()));
  }

  CheckpointInfo info;
  info.architecture_id = manifest.at("architecture_id").get<std::string>();
  info.num_classes = manifest.at("num_classes").get<int>();
  info.input.channels = manifest.at("input").at("channels").get<std::size_t>();
  info.input.height = manifest.at("input").at("height").get<std::size_t>();
  info.input.width = manifest.at("input").at("width").get<std::size_t>();
  info.training_mode_tag = manifest.value("training_mode_tag", "");
  info.metadata = manifest.value("metadata", json::object());

  Model model = Model::make(info.architecture_id, info.input, info.num_classes, 0);
  auto params = model.parameters();
  const auto& plist = manifest.at("params");
  if (plist.size() != params.size()) {
    throw MissingArtifactError("checkpoint parameter list does not match architecture");
  }
  const std::size_t payload_start = mstart + mlen;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = plist[i];
    auto shape = e.at("shape").get<std::vector<std::size_t>>();
    if (shape != params[i].tensor->shape()) {
      throw MissingArtifactError("checkpoint shape mismatch for " + params[i].name);
    }
    std::size_t off = payload_start + e.at("offset").get<std::size_t>();
    std::size_t nbytes = params[i].tensor->size() * 8;
    if (bytes.size() < off + nbytes) throw MissingArtifactError("truncated checkpoint payload");
    std::span<const std::byte> chunk(bytes.data() + off, nbytes);
    if (io::sha256_hex(chunk) != e.at("sha256").get<std::string>()) {
      throw MissingArtifactError("checkpoint checksum mismatch for " + params[i].name);
    }
    auto values = io::unpack_f64_le(chunk);
    std::copy(values.begin(), values.end(), params[i].tensor->data());
  }
  return {std::move(model), std::move(info)};
}

}  // namespace satkit::models
