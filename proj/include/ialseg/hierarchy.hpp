#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ialseg/tensor.hpp"

namespace ialseg {

struct ClassDef {
  int id = 0;
  std::string name;
  friend bool operator==(const ClassDef&, const ClassDef&) = default;
};

/// Dense per-pixel ground truth for a batch of images, indexed (b, y, x).
struct LabelMap {
  std::size_t batch = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<int> ids;

  LabelMap() = default;
  LabelMap(std::size_t b, std::size_t h, std::size_t w, int fill = 0)
      : batch(b), height(h), width(w), ids(b * h * w, fill) {}
  LabelMap(std::size_t b, std::size_t h, std::size_t w, std::vector<int> v)
      : batch(b), height(h), width(w), ids(std::move(v)) {
    if (ids.size() != b * h * w) throw Error("label map payload does not match its shape");
  }

  std::size_t pixels() const noexcept { return ids.size(); }
  int& at(std::size_t b, std::size_t y, std::size_t x) { return ids[(b * height + y) * width + x]; }
  int at(std::size_t b, std::size_t y, std::size_t x) const { return ids[(b * height + y) * width + x]; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Ordered partition of the class table into importance groups.
///
/// Group rank 1 is the least important group, rank G the most important. An
/// optional ignore id marks void pixels, which carry no group rank at all.
class ImportanceHierarchy {
 public:
  ImportanceHierarchy(std::vector<ClassDef> classes, std::vector<std::vector<int>> groups,
                      std::optional<int> ignore_id = std::nullopt)
      : classes_(std::move(classes)), groups_(std::move(groups)), ignore_id_(ignore_id) {
    validate();
  }

  std::size_t num_classes() const noexcept { return classes_.size(); }
  std::size_t num_groups() const noexcept { return groups_.size(); }
  const std::vector<ClassDef>& classes() const noexcept { return classes_; }
  const std::vector<std::vector<int>>& groups() const noexcept { return groups_; }
  /// Members of group `rank` (1-based).
  const std::vector<int>& group(int rank) const { return groups_.at(static_cast<std::size_t>(rank - 1)); }
  std::optional<int> ignore_id() const noexcept { return ignore_id_; }
  bool is_ignored(int id) const noexcept { return ignore_id_ && *ignore_id_ == id; }

  /// 1-based group rank of a class id; throws on ids outside the table.
  int rank_of(int class_id) const {
    if (class_id < 0 || static_cast<std::size_t>(class_id) >= rank_.size())
      throw Error("unknown class id " + std::to_string(class_id));
    return rank_[static_cast<std::size_t>(class_id)];
  }

  friend bool operator==(const ImportanceHierarchy& a, const ImportanceHierarchy& b) {
    return a.classes_ == b.classes_ && a.groups_ == b.groups_ && a.ignore_id_ == b.ignore_id_;
  }

 private:
  void validate() {
    const std::size_t c = classes_.size();
    if (c == 0) throw Error("class table is empty");
    std::vector<int> seen(c, 0);
    for (const auto& cls : classes_) {
      if (cls.id < 0 || static_cast<std::size_t>(cls.id) >= c)
        throw Error("class id " + std::to_string(cls.id) + " outside dense range [0," + std::to_string(c) + ")");
      if (seen[static_cast<std::size_t>(cls.id)]++) throw Error("duplicate class id " + std::to_string(cls.id));
    }
    if (groups_.empty()) throw Error("hierarchy needs at least one group");
    rank_.assign(c, 0);
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      if (groups_[g].empty()) throw Error("group " + std::to_string(g + 1) + " is empty");
      for (int id : groups_[g]) {
        if (id < 0 || static_cast<std::size_t>(id) >= c)
          throw Error("group " + std::to_string(g + 1) + " references unknown class id " + std::to_string(id));
        if (rank_[static_cast<std::size_t>(id)] != 0)
          throw Error("class " + std::to_string(id) + " assigned to more than one group");
        rank_[static_cast<std::size_t>(id)] = static_cast<int>(g + 1);
      }
    }
    for (std::size_t id = 0; id < c; ++id)
      if (rank_[id] == 0) throw Error("class " + std::to_string(id) + " unassigned");
    if (ignore_id_ && *ignore_id_ >= 0 && static_cast<std::size_t>(*ignore_id_) < c)
      throw Error("ignore id " + std::to_string(*ignore_id_) + " collides with a class id");
  }

  std::vector<ClassDef> classes_;
  std::vector<std::vector<int>> groups_;
  std::optional<int> ignore_id_;
  std::vector<int> rank_;
};

enum class CellValue : std::uint8_t { Zero = 0, One = 1, DontCare = 2 };

/// Importance matrix M_t at group granularity: cells[r-1] is the value for rank r.
struct MatrixSpec {
  int index = 1;
  std::vector<CellValue> cells;

  CellValue cell(int rank) const { return cells.at(static_cast<std::size_t>(rank - 1)); }
  friend bool operator==(const MatrixSpec&, const MatrixSpec&) = default;
};

struct TriStateMap {
  std::size_t batch = 1, height = 0, width = 0;
  std::vector<CellValue> cells;
};

/// Per-pixel group rank; 0 marks ignored pixels.
struct GroupRankMap {
  std::size_t batch = 1, height = 0, width = 0;
  std::vector<int> ranks;
};

/// Matrices M_1..M_{G-1}: rank r of M_t is DontCare below t, Zero at t and One above.
inline std::vector<MatrixSpec> build_matrix_specs(const ImportanceHierarchy& h) {
  const int g = static_cast<int>(h.num_groups());
  if (g < 2) throw Error("no matrices for single-group hierarchy");
  std::vector<MatrixSpec> specs;
  for (int t = 1; t < g; ++t) {
    MatrixSpec m{t, {}};
    for (int r = 1; r <= g; ++r)
      m.cells.push_back(r < t ? CellValue::DontCare : (r == t ? CellValue::Zero : CellValue::One));
    specs.push_back(std::move(m));
  }
  return specs;
}

namespace detail {
inline std::string position(std::size_t b, std::size_t y, std::size_t x) {
  return "(" + std::to_string(b) + "," + std::to_string(y) + "," + std::to_string(x) + ")";
}

inline int checked_rank(const ImportanceHierarchy& h, const LabelMap& labels, std::size_t i) {
  const int id = labels.ids[i];
  if (h.is_ignored(id)) return 0;
  if (id < 0 || static_cast<std::size_t>(id) >= h.num_classes()) {
    const std::size_t x = i % labels.width, y = (i / labels.width) % labels.height,
                      b = i / (labels.width * labels.height);
    throw Error("unknown class id " + std::to_string(id) + " at " + position(b, y, x));
  }
  return h.rank_of(id);
}
}  // namespace detail

inline GroupRankMap group_rank_map(const ImportanceHierarchy& h, const LabelMap& labels) {
  GroupRankMap out{labels.batch, labels.height, labels.width, std::vector<int>(labels.pixels())};
  for (std::size_t i = 0; i < labels.pixels(); ++i) out.ranks[i] = detail::checked_rank(h, labels, i);
  return out;
}

/// Ignored pixels rasterize to DontCare.
inline TriStateMap rasterize_matrix(const MatrixSpec& spec, const ImportanceHierarchy& h, const LabelMap& labels) {
  if (spec.cells.size() != h.num_groups()) throw Error("matrix spec does not match hierarchy group count");
  TriStateMap out{labels.batch, labels.height, labels.width, std::vector<CellValue>(labels.pixels())};
  for (std::size_t i = 0; i < labels.pixels(); ++i) {
    const int r = detail::checked_rank(h, labels, i);
    out.cells[i] = r == 0 ? CellValue::DontCare : spec.cell(r);
  }
  return out;
}

inline ImportanceHierarchy hierarchy_from_json(const nlohmann::json& j) {
  try {
    std::vector<ClassDef> classes;
    for (const auto& c : j.at("classes")) classes.push_back({c.at("id").get<int>(), c.at("name").get<std::string>()});
    auto groups = j.at("groups").get<std::vector<std::vector<int>>>();
    std::optional<int> ignore;
    if (j.contains("ignore_id") && !j["ignore_id"].is_null()) ignore = j["ignore_id"].get<int>();
    return ImportanceHierarchy(std::move(classes), std::move(groups), ignore);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed hierarchy config: ") + e.what());
  }
}

inline nlohmann::json hierarchy_to_json(const ImportanceHierarchy& h) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : h.classes()) classes.push_back({{"id", c.id}, {"name", c.name}});
  nlohmann::json j;
  j["classes"] = std::move(classes);
  j["groups"] = h.groups();
  j["ignore_id"] = h.ignore_id() ? nlohmann::json(*h.ignore_id()) : nlohmann::json(nullptr);
  return j;
}

inline ImportanceHierarchy parse_hierarchy(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("hierarchy config is not valid JSON: ") + e.what());
  }
  return hierarchy_from_json(j);
}

inline std::string serialize_hierarchy(const ImportanceHierarchy& h) { return hierarchy_to_json(h).dump(2) + "\n"; }

/// The 11-class CamVid ranking: G1 sky/building/tree, G2 pole/road/sidewalk/fence,
/// G3 sign/car/pedestrian/bicyclist.
inline ImportanceHierarchy camvid_hierarchy() {
  const char* names[] = {"sky", "building", "pole", "road", "sidewalk", "tree",
                         "sign", "fence", "car", "pedestrian", "bicyclist"};
  std::vector<ClassDef> classes;
  for (int i = 0; i < 11; ++i) classes.push_back({i, names[i]});
  return ImportanceHierarchy(std::move(classes), {{0, 1, 5}, {2, 3, 4, 7}, {6, 8, 9, 10}});
}

/// The 19-class Cityscapes ranking, void pixels labelled 255.
inline ImportanceHierarchy cityscapes_hierarchy() {
  const char* names[] = {"road",       "sidewalk", "building", "wall",  "fence", "pole",  "traffic light",
                         "traffic sign", "vegetation", "terrain", "sky", "person", "rider", "car",
                         "truck",      "bus",      "train",    "motorcycle", "bicycle"};
  std::vector<ClassDef> classes;
  for (int i = 0; i < 19; ++i) classes.push_back({i, names[i]});
  return ImportanceHierarchy(std::move(classes),
                             {{0, 2, 3, 8, 9, 10}, {1, 4, 5, 11, 13}, {6, 7, 12, 14, 15, 16, 17, 18}}, 255);
}

}  // namespace ialseg
