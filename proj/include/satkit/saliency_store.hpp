#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "satkit/dataset.hpp"
#include "satkit/saliency_map.hpp"

namespace satkit::data {

// Persistent per-sample saliency maps:
//   <root>/manifest.json
//   <root>/maps/<sample_id>.f32   (raw little-endian float32, C-order)
// Single writer; concurrent reads are safe. Payload checksums are verified
// on every load.
class SaliencyStore {
 public:
  struct Entry {
    std::string file;
    std::string dtype = "f32";
    std::vector<std::size_t> shape;
    std::string sha256;
    std::string kind;  // "raw" | "signed"
    int class_index = 0;
    std::string method;
    std::string teacher_id;
  };

  // Creates a fresh store directory. Fails if a manifest already exists
  // unless overwrite is set.
  static SaliencyStore create(const std::filesystem::path& root, const std::string& method,
                              const std::string& teacher_id, bool partial = false,
                              bool overwrite = false);
  static SaliencyStore open(const std::filesystem::path& root);

  void put(const std::string& sample_id, const saliency::SaliencyMap& map);
  saliency::SaliencyMap get(const std::string& sample_id) const;
  bool contains(const std::string& sample_id) const { return entries_.count(sample_id) > 0; }

  // Ids in the dataset with no store entry; empty means the store covers it.
  std::vector<std::string> missing_ids(const Dataset& ds) const;

  void save_manifest() const;

  const std::filesystem::path& root() const { return root_; }
  const std::string& method() const { return method_; }
  const std::string& teacher_id() const { return teacher_id_; }
  bool partial() const { return partial_; }
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  SaliencyStore() = default;
  std::filesystem::path root_;
  std::string method_;
  std::string teacher_id_;
  bool partial_ = false;
  std::map<std::string, Entry> entries_;
};

}  // namespace satkit::data
