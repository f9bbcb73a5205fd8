#pragma once

#include <string>

#include "satkit/tensor.hpp"

namespace satkit::saliency {

enum class MapKind { raw, signed_ };

// Per-pixel attribution for one sample's ground-truth class. Signed maps take
// values only in {-1, 0, +1}; raw maps hold finite floats.
struct SaliencyMap {
  Tensor values;  // [C,H,W]
  MapKind kind = MapKind::raw;
  std::string method;
  std::string teacher_id;
  int class_index = 0;

  void validate() const {
    if (values.rank() != 3) throw ShapeError("saliency map must be [C,H,W]");
    if (kind == MapKind::signed_) {
      for (std::size_t i = 0; i < values.size(); ++i) {
        double v = values[i];
        if (v != -1.0 && v != 0.0 && v != 1.0) {
          throw ConfigError("signed saliency map values must be in {-1,0,+1}");
        }
      }
    } else if (!values.all_finite()) {
      throw NumericalError("raw saliency map contains non-finite values");
    }
  }
};

inline const char* map_kind_name(MapKind k) { return k == MapKind::raw ? "raw" : "signed"; }

inline MapKind map_kind_from_name(const std::string& s) {
  if (s == "raw") return MapKind::raw;
  if (s == "signed") return MapKind::signed_;
  throw ConfigError("unknown saliency map kind: " + s);
}

}  // namespace satkit::saliency
