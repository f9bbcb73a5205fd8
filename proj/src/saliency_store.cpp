#include "satkit/saliency_store.hpp"

#include <json.hpp>

#include "satkit/errors.hpp"
#include "satkit/io.hpp"

namespace satkit::data {

using nlohmann::json;

SaliencyStore SaliencyStore::create(const std::filesystem::path& root, const std::string& method,
                                    const std::string& teacher_id, bool partial, bool overwrite) {
  auto manifest = root / "manifest.json";
  if (std::filesystem::exists(manifest) && !overwrite) {
    throw ConfigError("saliency store already exists (use force to overwrite): " + root.string());
  }
  std::filesystem::create_directories(root / "maps");
  SaliencyStore s;
  s.root_ = root;
  s.method_ = method;
  s.teacher_id_ = teacher_id;
  s.partial_ = partial;
  return s;
}

SaliencyStore SaliencyStore::open(const std::filesystem::path& root) {
  auto manifest_path = root / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw MissingArtifactError("no saliency store manifest at " + manifest_path.string());
  }
  json m;
  try {
    m = json::parse(io::read_text(manifest_path));
  } catch (const json::exception& e) {
    throw MissingArtifactError("corrupt store manifest: " + std::string(e.what()));
  }
  SaliencyStore s;
  s.root_ = root;
  s.method_ = m.value("method", "");
  s.teacher_id_ = m.value("teacher_id", "");
  s.partial_ = m.value("partial", false);
  for (const auto& [id, e] : m.at("entries").items()) {
    Entry entry;
    entry.file = e.at("file").get<std::string>();
    entry.dtype = e.value("dtype", "f32");
    entry.shape = e.at("shape").get<std::vector<std::size_t>>();
    entry.sha256 = e.at("sha256").get<std::string>();
    entry.kind = e.value("kind", "raw");
    entry.class_index = e.value("class_index", 0);
    entry.method = e.value("method", s.method_);
    entry.teacher_id = e.value("teacher_id", s.teacher_id_);
    s.entries_.emplace(id, std::move(entry));
  }
  return s;
}

void SaliencyStore::put(const std::string& sample_id, const saliency::SaliencyMap& map) {
  map.validate();
  auto payload = io::pack_f32_le(std::span<const double>(map.values.data(), map.values.size()));
  Entry e;
  e.file = "maps/" + sample_id + ".f32";
  e.shape = map.values.shape();
  e.sha256 = io::sha256_hex(payload);
  e.kind = saliency::map_kind_name(map.kind);
  e.class_index = map.class_index;
  e.method = map.method.empty() ? method_ : map.method;
  e.teacher_id = map.teacher_id.empty() ? teacher_id_ : map.teacher_id;
  io::write_file(root_ / e.file, payload);
  entries_[sample_id] = std::move(e);
}

saliency::SaliencyMap SaliencyStore::get(const std::string& sample_id) const {
  auto it = entries_.find(sample_id);
  if (it == entries_.end()) {
    throw MissingArtifactError("saliency store has no entry for sample " + sample_id);
  }
  const Entry& e = it->second;
  auto payload = io::read_file(root_ / e.file);
  if (io::sha256_hex(payload) != e.sha256) {
    throw MissingArtifactError("checksum mismatch for saliency payload of " + sample_id);
  }
  auto values = io::unpack_f32_le(payload);
  if (values.size() != Tensor::count(e.shape)) {
    throw MissingArtifactError("payload size does not match declared shape for " + sample_id);
  }
  saliency::SaliencyMap map;
  map.values = Tensor(e.shape, std::move(values));
  map.kind = saliency::map_kind_from_name(e.kind);
  map.method = e.method;
  map.teacher_id = e.teacher_id;
  map.class_index = e.class_index;
  return map;
}

std::vector<std::string> SaliencyStore::missing_ids(const Dataset& ds) const {
  std::vector<std::string> missing;
  for (const auto& s : ds.samples) {
    if (!entries_.count(s.id)) missing.push_back(s.id);
  }
  return missing;
}

void SaliencyStore::save_manifest() const {
  json entries = json::object();
  for (const auto& [id, e] : entries_) {
    entries[id] = {{"file", e.file},       {"dtype", e.dtype},
                   {"shape", e.shape},     {"sha256", e.sha256},
                   {"kind", e.kind},       {"class_index", e.class_index},
                   {"method", e.method},   {"teacher_id", e.teacher_id}};
  }
  json m = {{"format", "satkit-saliency-store-v1"},
            {"method", method_},
            {"teacher_id", teacher_id_},
            {"partial", partial_},
            {"entries", entries}};
  io::write_text(root_ / "manifest.json", m.dump(2));
}

}  // namespace satkit::data
