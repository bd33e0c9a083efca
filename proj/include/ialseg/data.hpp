#pragma once

// Procedural street scenes and their on-disk form.
//
// A scene is a stack of horizontal bands (sky, building/tree background,
// fence, sidewalk, road) over which a handful of small objects (cars, signs,
// pedestrians) are painted. The objects are the rare, most-important classes.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ialseg/hierarchy.hpp"
#include "ialseg/tensor.hpp"

namespace ialseg {

namespace scene_class {
enum : int { Sky = 0, Building, Tree, Road, Sidewalk, Fence, Car, Sign, Pedestrian, Count };
}

/// Nine synthetic classes in three groups of three.
inline ImportanceHierarchy synthetic_hierarchy() {
  const char* names[] = {"sky", "building", "tree", "road", "sidewalk", "fence", "car", "sign", "pedestrian"};
  std::vector<ClassDef> classes;
  for (int i = 0; i < scene_class::Count; ++i) classes.push_back({i, names[i]});
  return ImportanceHierarchy(std::move(classes), {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}});
}

struct SceneConfig {
  std::size_t height = 64, width = 128;
  // Band boundaries as fractions of the height, top to bottom:
  // sky | background | fence | sidewalk | road.
  double sky_end = 0.28, background_end = 0.56, fence_end = 0.63, sidewalk_end = 0.73;
  std::size_t band_jitter = 2;  // rows each boundary may move per scene
  std::size_t min_objects = 2, max_objects = 6;
  std::size_t min_object_size = 6, max_object_size = 14;  // pixels along the long side
  double color_jitter = 0.06;  // per-region shift of the class mean color
  double noise = 0.10;         // std-dev of per-pixel Gaussian noise
  std::uint64_t seed = 0;

  void validate() const {
    if (height < 8 || width < 8) throw Error("scene config: image must be at least 8x8");
    if (!(0 < sky_end && sky_end < background_end && background_end < fence_end && fence_end < sidewalk_end &&
          sidewalk_end < 1.0))
      throw Error("scene config: band fractions must be strictly increasing inside (0, 1)");
    if (min_objects > max_objects) throw Error("scene config: min_objects exceeds max_objects");
    if (max_objects > 0 && (min_object_size < 2 || min_object_size > max_object_size))
      throw Error("scene config: object size range must satisfy 2 <= min <= max");
    if (max_objects > 0 && 2 * max_object_size >= std::min(height, width))
      throw Error("scene config: objects must be smaller than half the image's short side");
    if (noise < 0 || color_jitter < 0) throw Error("scene config: noise amplitudes must be non-negative");
    const double min_band = std::min({sky_end, background_end - sky_end, fence_end - background_end,
                                      sidewalk_end - fence_end, 1.0 - sidewalk_end});
    if (static_cast<double>(2 * band_jitter) >= min_band * static_cast<double>(height))
      throw Error("scene config: band jitter can swallow a band");
  }
};

inline nlohmann::json to_json(const SceneConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"sky_end", c.sky_end},
          {"background_end", c.background_end},
          {"fence_end", c.fence_end},
          {"sidewalk_end", c.sidewalk_end},
          {"band_jitter", c.band_jitter},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"min_object_size", c.min_object_size},
          {"max_object_size", c.max_object_size},
          {"color_jitter", c.color_jitter},
          {"noise", c.noise},
          {"seed", c.seed}};
}

inline SceneConfig scene_config_from_json(const nlohmann::json& j, SceneConfig c = {}) {
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("height", c.height);
    get("width", c.width);
    get("sky_end", c.sky_end);
    get("background_end", c.background_end);
    get("fence_end", c.fence_end);
    get("sidewalk_end", c.sidewalk_end);
    get("band_jitter", c.band_jitter);
    get("min_objects", c.min_objects);
    get("max_objects", c.max_objects);
    get("min_object_size", c.min_object_size);
    get("max_object_size", c.max_object_size);
    get("color_jitter", c.color_jitter);
    get("noise", c.noise);
    get("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed scene config: ") + e.what());
  }
  return c;
}

struct Sample {
  Tensor<float> image;  // 1 x H x W x 3, values in [0, 1]
  LabelMap labels;      // 1 x H x W
};

namespace detail {
struct Rgb {
  double r, g, b;
};

inline constexpr Rgb kClassColor[scene_class::Count] = {
    {0.55, 0.70, 0.90},  // sky
    {0.50, 0.45, 0.45},  // building
    {0.30, 0.45, 0.25},  // tree
    {0.38, 0.38, 0.40},  // road
    {0.58, 0.54, 0.50},  // sidewalk
    {0.52, 0.42, 0.32},  // fence
    {0.55, 0.30, 0.30},  // car
    {0.75, 0.68, 0.30},  // sign
    {0.50, 0.38, 0.48},  // pedestrian
};

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

inline std::size_t uniform_int(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

// Box-Muller on the generator's raw output keeps the stream portable.
inline double gaussian(std::mt19937_64& rng) {
  const double u1 = std::max(uniform(rng, 0.0, 1.0), 1e-300), u2 = uniform(rng, 0.0, 1.0);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}
}  // namespace detail

/// Deterministic scene number `index` of the configured family.
inline Sample generate_scene(const SceneConfig& c, std::uint64_t index) {
  c.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(c.seed), static_cast<std::uint32_t>(c.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  const std::size_t h = c.height, w = c.width;
  LabelMap lab(1, h, w, 0);

  auto boundary = [&](double frac) {
    const auto base = static_cast<long>(std::lround(frac * static_cast<double>(h)));
    const long j = c.band_jitter ? static_cast<long>(detail::uniform_int(rng, 0, 2 * c.band_jitter)) -
                                       static_cast<long>(c.band_jitter)
                                 : 0;
    return static_cast<std::size_t>(base + j);
  };
  const std::size_t b_sky = boundary(c.sky_end), b_bg = boundary(c.background_end), b_fence = boundary(c.fence_end),
                    b_side = boundary(c.sidewalk_end);

  // Background alternates building and tree segments along x.
  std::vector<int> bg_class(w);
  {
    int cls = rng() % 2 ? scene_class::Building : scene_class::Tree;
    std::size_t x = 0;
    while (x < w) {
      const std::size_t len = detail::uniform_int(rng, w / 8, w / 3);
      for (std::size_t i = x; i < std::min(w, x + len); ++i) bg_class[i] = cls;
      x += len;
      cls = cls == scene_class::Building ? scene_class::Tree : scene_class::Building;
    }
  }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      int cls = scene_class::Road;
      if (y < b_sky) cls = scene_class::Sky;
      else if (y < b_bg) cls = bg_class[x];
      else if (y < b_fence) cls = scene_class::Fence;
      else if (y < b_side) cls = scene_class::Sidewalk;
      lab.at(0, y, x) = cls;
    }

  // Region colors: one jittered color per class per scene, one per object.
  std::vector<detail::Rgb> region_color(scene_class::Count);
  auto jitter = [&](detail::Rgb col) {
    return detail::Rgb{col.r + detail::uniform(rng, -c.color_jitter, c.color_jitter),
                       col.g + detail::uniform(rng, -c.color_jitter, c.color_jitter),
                       col.b + detail::uniform(rng, -c.color_jitter, c.color_jitter)};
  };
  for (int k = 0; k < scene_class::Count; ++k) region_color[static_cast<std::size_t>(k)] = jitter(detail::kClassColor[k]);
  std::vector<detail::Rgb> pixel_color(h * w);
  for (std::size_t i = 0; i < h * w; ++i) pixel_color[i] = region_color[static_cast<std::size_t>(lab.ids[i])];

  const std::size_t n_obj = c.max_objects ? detail::uniform_int(rng, c.min_objects, c.max_objects) : 0;
  for (std::size_t o = 0; o < n_obj; ++o) {
    const int kind = scene_class::Car + static_cast<int>(rng() % 3);
    const std::size_t s = detail::uniform_int(rng, c.min_object_size, c.max_object_size);
    std::size_t ow = s, oh = s;
    std::size_t y_lo = 0, y_hi = h - 1;  // admissible range of the object's bottom row
    bool ellipse = false;
    if (kind == scene_class::Car) {
      oh = std::max<std::size_t>(2, s / 2);
      y_lo = std::max(b_side, oh);
      y_hi = h - 1;
    } else if (kind == scene_class::Sign) {
      ow = oh = std::max<std::size_t>(2, s / 2);
      ellipse = true;
      y_lo = std::max(b_sky, oh);
      y_hi = std::max(y_lo, b_bg - 1);
    } else {
      ow = std::max<std::size_t>(2, s / 3);
      y_lo = std::max(b_bg, oh);
      y_hi = std::max(y_lo, b_side + (h - b_side) / 3);
    }
    y_hi = std::min(y_hi, h - 1);
    y_lo = std::min(y_lo, y_hi);
    const std::size_t bottom = detail::uniform_int(rng, y_lo, y_hi);
    const std::size_t left = detail::uniform_int(rng, 0, w - ow);
    const detail::Rgb col = jitter(detail::kClassColor[kind]);
    const double cy = static_cast<double>(oh) / 2.0, cx = static_cast<double>(ow) / 2.0;
    for (std::size_t dy = 0; dy < oh; ++dy)
      for (std::size_t dx = 0; dx < ow; ++dx) {
        if (ellipse) {
          const double ny = (static_cast<double>(dy) + 0.5 - cy) / cy, nx = (static_cast<double>(dx) + 0.5 - cx) / cx;
          if (nx * nx + ny * ny > 1.0) continue;
        }
        const std::size_t y = bottom + 1 - oh + dy, x = left + dx;
        lab.at(0, y, x) = kind;
        pixel_color[y * w + x] = col;
      }
  }

  Sample s{Tensor<float>::nhwc(1, h, w, 3), std::move(lab)};
  for (std::size_t i = 0; i < h * w; ++i) {
    const auto& col = pixel_color[i];
    const double rgb[3] = {col.r, col.g, col.b};
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double n = c.noise > 0 ? c.noise * detail::gaussian(rng) : 0.0;
      s.image[i * 3 + ch] = static_cast<float>(std::clamp(rgb[ch] + n, 0.0, 1.0));
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Netpbm I/O: binary P6 for images, binary P5 for label maps, maxval 255.

namespace detail {
inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("failed writing '" + path + "'");
}

struct NetpbmHeader {
  std::size_t width = 0, height = 0, offset = 0;
};

inline NetpbmHeader parse_netpbm_header(const std::string& bytes, const char* magic) {
  if (bytes.size() < 2 || bytes.compare(0, 2, magic) != 0)
    throw Error(std::string("bad netpbm magic, expected ") + magic);
  std::size_t pos = 2;
  auto next_int = [&]() -> std::size_t {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
      throw Error("malformed netpbm header");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
      if (v > (1u << 24)) throw Error("netpbm header value too large");
    }
    return v;
  };
  NetpbmHeader hdr;
  hdr.width = next_int();
  hdr.height = next_int();
  const std::size_t maxval = next_int();
  if (maxval != 255) throw Error("unsupported netpbm maxval " + std::to_string(maxval) + " (only 255)");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw Error("malformed netpbm header");
  hdr.offset = pos + 1;
  return hdr;
}
}  // namespace detail

/// Values are quantized as round(255 * clamp(v, 0, 1)).
inline std::string encode_ppm(const Tensor<float>& image) {
  if (image.rank() != 4 || image.n() != 1 || image.c() != 3) throw Error("encode_ppm: expected 1 x H x W x 3 image");
  std::string out = "P6\n" + std::to_string(image.w()) + " " + std::to_string(image.h()) + "\n255\n";
  out.reserve(out.size() + image.size());
  for (float v : image.vec())
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
  return out;
}

inline Tensor<float> decode_ppm(const std::string& bytes) {
  const auto hdr = detail::parse_netpbm_header(bytes, "P6");
  const std::size_t n = hdr.width * hdr.height * 3;
  if (bytes.size() - hdr.offset < n) throw Error("PPM payload truncated");
  auto img = Tensor<float>::nhwc(1, hdr.height, hdr.width, 3);
  for (std::size_t i = 0; i < n; ++i)
    img[i] = static_cast<float>(static_cast<unsigned char>(bytes[hdr.offset + i])) / 255.0f;
  return img;
}

inline std::string encode_pgm(const LabelMap& labels) {
  if (labels.batch != 1) throw Error("encode_pgm: expected a single label map");
  std::string out = "P5\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) + "\n255\n";
  for (int id : labels.ids) {
    if (id < 0 || id > 255) throw Error("encode_pgm: label id " + std::to_string(id) + " does not fit a byte");
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

inline LabelMap decode_pgm(const std::string& bytes) {
  const auto hdr = detail::parse_netpbm_header(bytes, "P5");
  const std::size_t n = hdr.width * hdr.height;
  if (bytes.size() - hdr.offset < n) throw Error("PGM payload truncated");
  LabelMap lab(1, hdr.height, hdr.width, 0);
  for (std::size_t i = 0; i < n; ++i) lab.ids[i] = static_cast<unsigned char>(bytes[hdr.offset + i]);
  return lab;
}

inline void save_ppm(const std::string& path, const Tensor<float>& image) { detail::write_file(path, encode_ppm(image)); }
inline Tensor<float> load_ppm(const std::string& path) { return decode_ppm(detail::read_file(path)); }
inline void save_pgm(const std::string& path, const LabelMap& labels) { detail::write_file(path, encode_pgm(labels)); }
inline LabelMap load_pgm(const std::string& path) { return decode_pgm(detail::read_file(path)); }

// ---------------------------------------------------------------------------
// Dataset directories: images/NNNNN.ppm, labels/NNNNN.pgm, meta.json.

struct Dataset {
  std::vector<Sample> samples;
  ImportanceHierarchy hierarchy = synthetic_hierarchy();
  nlohmann::json meta;

  std::vector<LabelMap> label_maps() const {
    std::vector<LabelMap> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.labels);
    return out;
  }
};

inline std::string sample_stem(std::size_t i) {
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

/// Scenes first_index .. first_index + count - 1.
inline Dataset generate_dataset(const SceneConfig& c, std::size_t count, std::uint64_t first_index = 0) {
  Dataset d;
  d.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) d.samples.push_back(generate_scene(c, first_index + i));
  d.meta = {{"hierarchy", hierarchy_to_json(d.hierarchy)},
            {"seed", c.seed},
            {"first_index", first_index},
            {"count", count},
            {"config", to_json(c)}};
  return d;
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& d) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    save_ppm((dir / "images" / (sample_stem(i) + ".ppm")).string(), d.samples[i].image);
    save_pgm((dir / "labels" / (sample_stem(i) + ".pgm")).string(), d.samples[i].labels);
  }
  nlohmann::json meta = d.meta;
  meta["hierarchy"] = hierarchy_to_json(d.hierarchy);
  meta["count"] = d.samples.size();
  detail::write_file((dir / "meta.json").string(), meta.dump(2) + "\n");
}

/// Reads every images/NNNNN.ppm with a matching labels/NNNNN.pgm, in name order.
/// The hierarchy comes from meta.json unless the caller supplies one.
inline Dataset read_dataset(const std::filesystem::path& dir,
                            const std::optional<ImportanceHierarchy>& hierarchy = std::nullopt) {
  namespace fs = std::filesystem;
  Dataset d;
  const fs::path meta_path = dir / "meta.json";
  if (fs::exists(meta_path)) {
    try {
      d.meta = nlohmann::json::parse(detail::read_file(meta_path.string()));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("dataset meta.json is not valid JSON: " + std::string(e.what()));
    }
  }
  if (hierarchy) d.hierarchy = *hierarchy;
  else if (d.meta.contains("hierarchy")) d.hierarchy = hierarchy_from_json(d.meta["hierarchy"]);
  else throw Error("dataset '" + dir.string() + "' has no meta.json hierarchy and none was supplied");

  if (!fs::is_directory(dir / "images")) throw Error("dataset '" + dir.string() + "' has no images/ directory");
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(dir / "images"))
    if (e.path().extension() == ".ppm") stems.push_back(e.path().stem().string());
  std::sort(stems.begin(), stems.end());
  for (const auto& stem : stems) {
    Sample s{load_ppm((dir / "images" / (stem + ".ppm")).string()),
             load_pgm((dir / "labels" / (stem + ".pgm")).string())};
    if (s.labels.height != s.image.h() || s.labels.width != s.image.w())
      throw Error("dataset sample " + stem + ": image and label sizes differ");
    for (std::size_t i = 0; i < s.labels.pixels(); ++i) {
      const int id = s.labels.ids[i];
      if (!d.hierarchy.is_ignored(id) && static_cast<std::size_t>(id) >= d.hierarchy.num_classes())
        throw Error("dataset sample " + stem + ": label id " + std::to_string(id) + " not in the class table");
    }
    d.samples.push_back(std::move(s));
  }
  if (d.samples.empty()) throw Error("dataset '" + dir.string() + "' is empty");
  return d;
}

// ---------------------------------------------------------------------------

/// Shuffled index batches for one epoch; the permutation depends only on
/// epoch_seed and the final short batch is kept.
inline std::vector<std::vector<std::size_t>> batches(std::size_t dataset_size, std::size_t batch_size,
                                                     std::uint64_t epoch_seed) {
  if (batch_size == 0) throw Error("batch size must be positive");
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(epoch_seed);
  for (std::size_t i = dataset_size; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < dataset_size; i += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(dataset_size, i + batch_size)));
  return out;
}

/// Stacks the selected samples into an N x H x W x 3 image batch and label map.
template <typename T>
std::pair<Tensor<T>, LabelMap> make_batch(const Dataset& d, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error("make_batch: empty batch");
  const auto& first = d.samples.at(indices[0]);
  const std::size_t h = first.image.h(), w = first.image.w(), px = h * w;
  auto img = Tensor<T>::nhwc(indices.size(), h, w, 3);
  LabelMap lab(indices.size(), h, w, 0);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& s = d.samples.at(indices[b]);
    if (s.image.h() != h || s.image.w() != w) throw Error("make_batch: samples differ in size");
    std::transform(s.image.vec().begin(), s.image.vec().end(), img.data() + b * px * 3,
                   [](float v) { return static_cast<T>(v); });
    std::copy(s.labels.ids.begin(), s.labels.ids.end(), lab.ids.begin() + static_cast<std::ptrdiff_t>(b * px));
  }
  return {std::move(img), std::move(lab)};
}

}  // namespace ialseg
