#include "satkit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "satkit/errors.hpp"
#include "satkit/rng.hpp"

namespace satkit::data {

void Annotation::validate(std::size_t height, std::size_t width) const {
  if (kind == Kind::bounding_box) {
    if (!bbox) throw ConfigError("bounding_box annotation without a box");
    if (!mask.empty()) throw ConfigError("bounding_box annotation must not carry a mask");
    const auto& b = *bbox;
    if (!(0 <= b.x0 && b.x0 < b.x1 && b.x1 <= static_cast<int>(width)) ||
        !(0 <= b.y0 && b.y0 < b.y1 && b.y1 <= static_cast<int>(height))) {
      throw ConfigError("bbox outside image bounds");
    }
  } else {
    if (bbox) throw ConfigError("segmentation_mask annotation must not carry a box");
    if (mask.rank() != 2 || mask.dim(0) != height || mask.dim(1) != width) {
      throw ShapeError("segmentation mask shape mismatch");
    }
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i] != 0.0 && mask[i] != 1.0) throw ConfigError("mask values must be 0/1");
    }
  }
}

Tensor bbox_to_mask(const BoundingBox& box, std::size_t height, std::size_t width) {
  if (!(0 <= box.x0 && box.x0 < box.x1 && box.x1 <= static_cast<int>(width)) ||
      !(0 <= box.y0 && box.y0 < box.y1 && box.y1 <= static_cast<int>(height))) {
    throw ConfigError("bbox outside image bounds");
  }
  Tensor m({height, width});
  for (int y = box.y0; y < box.y1; ++y) {
    for (int x = box.x0; x < box.x1; ++x) {
      m[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)] = 1.0;
    }
  }
  return m;
}

void Dataset::validate() const {
  if (samples.empty()) throw ConfigError("dataset has no samples");
  const auto& shape = samples.front().image.shape();
  if (shape.size() != 3) throw ShapeError("images must be [C,H,W]");
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (s.image.shape() != shape) throw ShapeError("all images must share one shape");
    for (std::size_t i = 0; i < s.image.size(); ++i) {
      double v = s.image[i];
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("pixel values must lie in [0,1]");
    }
    if (s.label < 0 || s.label >= num_classes) throw ConfigError("label out of range");
    if (!ids.insert(s.id).second) throw ConfigError("duplicate sample id: " + s.id);
  }
  for (const auto& [id, ann] : annotations) {
    if (!ids.count(id)) throw ConfigError("annotation for unknown sample: " + id);
    ann.validate(shape[1], shape[2]);
  }
}

namespace {

constexpr std::size_t kImage = 16;  // all built-in sets are 16x16

// 5x7 glyph bitmaps for digits 0..9, MSB = leftmost pixel.
constexpr unsigned char kGlyphs[10][7] = {
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
};

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Fixed per-class pixel-sign pattern. Added at low amplitude it is a highly
// predictive but epsilon-fragile cue, the synthetic analogue of the
// non-robust features that make standard-trained image models attackable.
double class_texture(const char* tag, int cls, std::size_t h, std::size_t w) {
  std::uint64_t bits = rng::splitmix64(
      rng::key(rng::hash_str(tag), "class-texture", static_cast<std::uint64_t>(cls),
               h * kImage + w));
  return (bits & 1ULL) ? 1.0 : -1.0;
}

constexpr double kTextureAmp = 2.0 / 255.0;

// Procedural 16x16 grayscale digits: 2x-scaled 5x7 glyph, jittered placement,
// low contrast, distractor strokes at glyph contrast, brightness jitter and
// pixel noise. Deliberately keeps decision margins tight so that desk-scale
// epsilons (a few /255) already bite on standard-trained models.
Sample make_digit(int cls, int instance, std::uint64_t seed) {
  rng::Stream st(rng::key(seed, "digits-sample", static_cast<std::uint64_t>(cls),
                          static_cast<std::uint64_t>(instance)));
  Tensor img({1, kImage, kImage});
  double bg = st.uniform(0.3, 0.5);
  double contrast = st.uniform(0.16, 0.24);
  int ox = static_cast<int>(st.uniform_index(kImage - 10 + 1));
  int oy = static_cast<int>(st.uniform_index(kImage - 14 + 1));
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = bg;
  // distractor strokes share the glyph contrast so intensity alone is useless
  int strokes = 1 + static_cast<int>(st.uniform_index(2));
  for (int s = 0; s < strokes; ++s) {
    int w = 1 + static_cast<int>(st.uniform_index(3));
    int h = 1 + static_cast<int>(st.uniform_index(3));
    int x0 = static_cast<int>(st.uniform_index(kImage - static_cast<std::size_t>(w)));
    int y0 = static_cast<int>(st.uniform_index(kImage - static_cast<std::size_t>(h)));
    for (int y = y0; y < y0 + h; ++y) {
      for (int x = x0; x < x0 + w; ++x) {
        img.at3(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = bg + contrast;
      }
    }
  }
  for (int gy = 0; gy < 7; ++gy) {
    for (int gx = 0; gx < 5; ++gx) {
      if ((kGlyphs[cls][gy] >> (4 - gx)) & 1) {
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            int y = oy + 2 * gy + dy;
            int x = ox + 2 * gx + dx;
            img.at3(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = bg + contrast;
          }
        }
      }
    }
  }
  for (std::size_t h = 0; h < kImage; ++h) {
    for (std::size_t w = 0; w < kImage; ++w) {
      img.at3(0, h, w) = clamp01(img.at3(0, h, w) + kTextureAmp * class_texture("digits", cls, h, w) +
                                 st.normal(0.0, 0.06));
    }
  }
  return Sample{"", std::move(img), cls};
}

// 16x16 RGB shapes; class is the shape (square, disk, cross, stripes),
// color and placement are nuisance factors.
Sample make_shape(int cls, int instance, std::uint64_t seed) {
  rng::Stream st(rng::key(seed, "shapes-sample", static_cast<std::uint64_t>(cls),
                          static_cast<std::uint64_t>(instance)));
  Tensor img({3, kImage, kImage});
  double bg = st.uniform(0.1, 0.3);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = bg;
  double color[3];
  std::size_t dominant = st.uniform_index(3);
  for (std::size_t c = 0; c < 3; ++c) {
    color[c] = (c == dominant) ? st.uniform(0.7, 0.95) : st.uniform(0.2, 0.45);
  }
  int half = 3 + static_cast<int>(st.uniform_index(2));  // 3..4
  int cx = half + 1 + static_cast<int>(st.uniform_index(kImage - 2 * (half + 1)));
  int cy = half + 1 + static_cast<int>(st.uniform_index(kImage - 2 * (half + 1)));
  auto paint = [&](int x, int y) {
    for (std::size_t c = 0; c < 3; ++c) {
      img.at3(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = color[c];
    }
  };
  for (int y = cy - half; y <= cy + half; ++y) {
    for (int x = cx - half; x <= cx + half; ++x) {
      int dx = x - cx, dy = y - cy;
      bool on = false;
      switch (cls) {
        case 0: on = true; break;                                        // square
        case 1: on = dx * dx + dy * dy <= half * half; break;            // disk
        case 2: on = (std::abs(dx) <= 1 || std::abs(dy) <= 1); break;    // cross
        case 3: on = ((y - (cy - half)) % 2 == 0); break;                // stripes
        default: break;
      }
      if (on) paint(x, y);
    }
  }
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = clamp01(img[i] + st.normal(0.0, 0.08));
  }
  return Sample{"", std::move(img), cls};
}

// 16x16 RGB noise field with one textured rectangle; the class signal lives
// entirely inside the rectangle, whose exact box is emitted as annotation.
Sample make_blob(int cls, int instance, std::uint64_t seed, Annotation* ann) {
  rng::Stream st(rng::key(seed, "blobs-sample", static_cast<std::uint64_t>(cls),
                          static_cast<std::uint64_t>(instance)));
  Tensor img({3, kImage, kImage});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = clamp01(st.uniform(0.2, 0.6));
  int w = 6 + static_cast<int>(st.uniform_index(4));  // 6..9
  int h = 6 + static_cast<int>(st.uniform_index(4));
  int x0 = static_cast<int>(st.uniform_index(kImage - static_cast<std::size_t>(w) + 1));
  int y0 = static_cast<int>(st.uniform_index(kImage - static_cast<std::size_t>(h) + 1));
  double mid = st.uniform(0.35, 0.5);
  double contrast = st.uniform(0.06, 0.12);
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) {
      bool bright = false;
      switch (cls) {
        case 0: bright = true; break;                       // solid patch
        case 1: bright = ((x + y) % 2 == 0); break;         // checkerboard
        case 2: bright = (x % 2 == 0); break;               // vertical stripes
        default: break;
      }
      double base = bright ? mid + contrast : mid - contrast;
      double tex = kTextureAmp * class_texture("blobs", cls, static_cast<std::size_t>(y),
                                               static_cast<std::size_t>(x));
      for (std::size_t c = 0; c < 3; ++c) {
        img.at3(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            clamp01(base + tex + st.normal(0.0, 0.04));
      }
    }
  }
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = clamp01(img[i] + st.normal(0.0, 0.06));
  }
  if (ann) {
    ann->kind = Annotation::Kind::bounding_box;
    ann->bbox = BoundingBox{x0, y0, x0 + w, y0 + h};
  }
  return Sample{"", std::move(img), cls};
}

}  // namespace

const std::map<std::string, LoaderInfo>& registered_loaders() {
  static const std::map<std::string, LoaderInfo> kLoaders = {
      {"digits", {10, 1, kImage, kImage, 100, 1000, false}},
      {"shapes_rgb", {4, 3, kImage, kImage, 100, 1000, false}},
      {"synthetic_blobs", {3, 3, kImage, kImage, 100, 1000, true}},
  };
  return kLoaders;
}

Dataset load_dataset(const std::string& name, const std::optional<SubsetSpec>& subset,
                     std::uint64_t seed) {
  auto it = registered_loaders().find(name);
  if (it == registered_loaders().end()) throw ConfigError("unknown dataset: " + name);
  const LoaderInfo& info = it->second;

  std::vector<int> classes;
  int per_class = info.default_per_class;
  if (subset) {
    classes = subset->classes;
    if (classes.empty()) throw ConfigError("subset with empty class list");
    per_class = subset->per_class > 0 ? subset->per_class : info.default_per_class;
    std::set<int> seen;
    for (int c : classes) {
      if (c < 0 || c >= info.num_classes) throw ConfigError("subset class out of range");
      if (!seen.insert(c).second) throw ConfigError("duplicate class in subset");
    }
  } else {
    for (int c = 0; c < info.num_classes; ++c) classes.push_back(c);
  }
  if (per_class > info.max_per_class) {
    throw ConfigError("subset requests more samples than available (" +
                      std::to_string(per_class) + " > " + std::to_string(info.max_per_class) +
                      " per class)");
  }

  Dataset ds;
  ds.name = name;
  ds.num_classes = static_cast<int>(classes.size());
  for (std::size_t pos = 0; pos < classes.size(); ++pos) {
    int cls = classes[pos];
    for (int j = 0; j < per_class; ++j) {
      Sample s;
      Annotation ann;
      bool has_ann = false;
      if (name == "digits") {
        s = make_digit(cls, j, seed);
      } else if (name == "shapes_rgb") {
        s = make_shape(cls, j, seed);
      } else {
        s = make_blob(cls, j, seed, &ann);
        has_ann = true;
      }
      s.id = name + "-s" + std::to_string(seed) + "-c" + std::to_string(cls) + "-i" +
             std::to_string(j);
      s.label = static_cast<int>(pos);  // dense remap in listed order
      if (has_ann) ds.annotations.emplace(s.id, std::move(ann));
      ds.samples.push_back(std::move(s));
    }
  }
  ds.validate();
  return ds;
}

std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t shuffle_seed,
                           std::uint64_t epoch) {
  if (ds.samples.empty()) throw ConfigError("cannot batch an empty dataset");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");

  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng::Stream st(rng::key(shuffle_seed, "shuffle", epoch));
  st.shuffle(order);

  const std::size_t C = ds.channels(), H = ds.height(), W = ds.width();
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::size_t n = std::min(batch_size, order.size() - start);
    Batch b;
    b.images = Tensor({n, C, H, W});
    b.labels.reserve(n);
    b.ids.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      const Sample& s = ds.samples[order[start + k]];
      std::copy(s.image.data(), s.image.data() + s.image.size(),
                b.images.data() + k * C * H * W);
      b.labels.push_back(s.label);
      b.ids.push_back(s.id);
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace satkit::data
