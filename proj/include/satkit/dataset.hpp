#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "satkit/tensor.hpp"

namespace satkit::data {

// Half-open pixel box: x in [x0,x1), y in [y0,y1).
struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct Annotation {
  enum class Kind { bounding_box, segmentation_mask };
  Kind kind = Kind::bounding_box;
  std::optional<BoundingBox> bbox;
  Tensor mask;  // [H,W] of {0,1}; set iff kind == segmentation_mask

  void validate(std::size_t height, std::size_t width) const;
};

// [H,W] tensor of {0,1}; 1 inside the box.
Tensor bbox_to_mask(const BoundingBox& box, std::size_t height, std::size_t width);

struct Sample {
  std::string id;
  Tensor image;  // [C,H,W], values in [0,1]
  int label = 0;
};

struct Dataset {
  std::string name;
  std::vector<Sample> samples;
  std::map<std::string, Annotation> annotations;
  int num_classes = 0;

  std::size_t size() const { return samples.size(); }
  std::size_t channels() const { return samples.at(0).image.dim(0); }
  std::size_t height() const { return samples.at(0).image.dim(1); }
  std::size_t width() const { return samples.at(0).image.dim(2); }

  // Enforces the dataset invariants: uniform shapes, [0,1] pixels,
  // labels in [0,k), unique ids, annotations within bounds.
  void validate() const;
};

struct SubsetSpec {
  std::vector<int> classes;  // original class ids; labels remapped to positions
  int per_class = 0;
};

struct LoaderInfo {
  int num_classes = 0;
  std::size_t channels = 0, height = 0, width = 0;
  int default_per_class = 0;
  int max_per_class = 0;
  bool has_annotations = false;
};

const std::map<std::string, LoaderInfo>& registered_loaders();

// Deterministic for fixed (name, subset, seed). Registered names:
// "digits" (grayscale procedural digits), "shapes_rgb" (colored shapes),
// "synthetic_blobs" (textured rectangles with bounding-box annotations).
Dataset load_dataset(const std::string& name, const std::optional<SubsetSpec>& subset,
                     std::uint64_t seed);

struct Batch {
  Tensor images;  // [B,C,H,W]
  std::vector<int> labels;
  std::vector<std::string> ids;
  std::size_t size() const { return labels.size(); }
};

// Partitions the dataset; order is a pure function of (shuffle_seed, epoch);
// last batch may be short.
std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t shuffle_seed,
                           std::uint64_t epoch);

}  // namespace satkit::data
