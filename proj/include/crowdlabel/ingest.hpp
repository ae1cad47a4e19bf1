#pragma once

#include <algorithm>
#include <deque>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "crowdlabel/core.hpp"
#include "crowdlabel/jsonl.hpp"

namespace crowdlabel {

// ---------------------------------------------------------------------------
// Class metadata

struct SuperclassInfo {
  std::string name;
  std::optional<int> expected_count;
};

/// Ordered list of superclasses; the index is the superclass id.
class SuperclassRegistry {
 public:
  SuperclassRegistry() = default;
  explicit SuperclassRegistry(std::vector<SuperclassInfo> entries) : entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (!by_name_.emplace(entries_[i].name, static_cast<int>(i)).second)
        fail("superclass registry: duplicate superclass '", entries_[i].name, "'");
    }
  }

  std::optional<int> find(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
  }

  int add(const std::string& name) {
    if (auto id = find(name)) return *id;
    entries_.push_back({name, std::nullopt});
    by_name_.emplace(name, static_cast<int>(entries_.size() - 1));
    return static_cast<int>(entries_.size() - 1);
  }

  std::size_t size() const { return entries_.size(); }
  const SuperclassInfo& operator[](int id) const { return entries_.at(static_cast<std::size_t>(id)); }
  const std::vector<SuperclassInfo>& entries() const { return entries_; }

 private:
  std::vector<SuperclassInfo> entries_;
  std::map<std::string, int> by_name_;
};

/// The eleven manually grouped ImageNet superclasses with their class counts.
inline SuperclassRegistry imagenet_superclasses() {
  return SuperclassRegistry({{"Dogs", 130},
                             {"Other mammals", 88},
                             {"Bird", 59},
                             {"Reptiles, fish, amphibians", 60},
                             {"Invertebrates", 61},
                             {"Food, plants, fungi", 63},
                             {"Devices", 172},
                             {"Structures, furnishing", 90},
                             {"Clothes, covering", 92},
                             {"Implements, containers, misc. objects", 117},
                             {"Vehicles", 68}});
}

struct ClassInfo {
  std::string wnid;
  std::vector<std::string> names;
  std::string wiki_url;
  int superclass = 0;
};

class ClassTable {
 public:
  ClassTable() = default;
  ClassTable(std::vector<ClassInfo> classes, SuperclassRegistry registry)
      : classes_(std::move(classes)), registry_(std::move(registry)) {
    for (std::size_t i = 0; i < classes_.size(); ++i) by_wnid_[classes_[i].wnid] = static_cast<ClassId>(i);
  }

  std::size_t size() const { return classes_.size(); }
  bool valid(ClassId c) const { return c >= 0 && static_cast<std::size_t>(c) < classes_.size(); }
  const ClassInfo& operator[](ClassId c) const { return classes_.at(static_cast<std::size_t>(c)); }
  int superclass_of(ClassId c) const { return (*this)[c].superclass; }
  const SuperclassRegistry& superclasses() const { return registry_; }

  std::optional<ClassId> find_wnid(const std::string& wnid) const {
    auto it = by_wnid_.find(wnid);
    if (it == by_wnid_.end()) return std::nullopt;
    return it->second;
  }

  std::string display_name(ClassId c) const {
    const auto& info = (*this)[c];
    return info.names.empty() ? info.wnid : info.names.front();
  }

 private:
  std::vector<ClassInfo> classes_;
  SuperclassRegistry registry_;
  std::unordered_map<std::string, ClassId> by_wnid_;
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline int parse_int(const std::string& s, const std::string& ctx) {
  try {
    std::size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ctx, ": expected integer, got '", s, "'");
  }
}

inline bool skippable(const std::string& line) {
  auto t = trim(line);
  return t.empty() || t[0] == '#';
}

}  // namespace detail

/// Reads `name<TAB>expected_count` rows (count optional).
inline SuperclassRegistry parse_superclass_registry(std::istream& in) {
  std::vector<SuperclassInfo> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    auto cols = detail::split(line, '\t');
    SuperclassInfo info{detail::trim(cols[0]), std::nullopt};
    if (cols.size() > 1 && !detail::trim(cols[1]).empty())
      info.expected_count = detail::parse_int(detail::trim(cols[1]), "superclasses:" + std::to_string(lineno));
    entries.push_back(std::move(info));
  }
  return SuperclassRegistry(std::move(entries));
}

/// Parses classes.tsv. When `registry` is given, every superclass must be
/// registered and expected counts are cross-checked; otherwise superclasses
/// are registered in order of first appearance.
inline ClassTable parse_class_table(std::istream& in, std::optional<SuperclassRegistry> registry = std::nullopt) {
  const bool closed = registry.has_value();
  SuperclassRegistry reg = closed ? std::move(*registry) : SuperclassRegistry{};
  std::map<int, ClassInfo> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    const std::string ctx = "classes.tsv:" + std::to_string(lineno);
    auto cols = detail::split(line, '\t');
    if (cols.size() != 5) fail(ctx, ": expected 5 tab-separated columns, got ", cols.size());
    int id = detail::parse_int(detail::trim(cols[0]), ctx);
    ClassInfo info;
    info.wnid = detail::trim(cols[1]);
    for (auto& n : detail::split(cols[2], ','))
      if (auto t = detail::trim(n); !t.empty()) info.names.push_back(t);
    info.wiki_url = detail::trim(cols[3]);
    const std::string sc = detail::trim(cols[4]);
    if (closed) {
      auto found = reg.find(sc);
      if (!found) fail(ctx, ": unknown superclass '", sc, "'");
      info.superclass = *found;
    } else {
      info.superclass = reg.add(sc);
    }
    if (!rows.emplace(id, std::move(info)).second) fail(ctx, ": duplicate class id ", id);
  }
  if (rows.size() < 2) fail("class table needs at least 2 classes, got ", rows.size());
  std::vector<ClassInfo> classes;
  std::set<std::string> wnids;
  for (auto& [id, info] : rows) {
    if (id != static_cast<int>(classes.size()))
      fail("class ids must be dense 0..", rows.size() - 1, "; missing id ", classes.size());
    if (!wnids.insert(info.wnid).second) fail("duplicate wnid '", info.wnid, "' (class id ", id, ")");
    classes.push_back(std::move(info));
  }
  std::vector<int> counts(reg.size(), 0);
  for (const auto& c : classes) ++counts[static_cast<std::size_t>(c.superclass)];
  for (std::size_t s = 0; s < reg.size(); ++s) {
    const auto& e = reg[static_cast<int>(s)];
    if (e.expected_count && *e.expected_count != counts[s])
      fail("superclass '", e.name, "' expects ", *e.expected_count, " classes, table has ", counts[s]);
  }
  return ClassTable(std::move(classes), std::move(reg));
}

inline ClassTable load_class_table(const std::filesystem::path& path,
                                   const std::optional<std::filesystem::path>& registry_path = std::nullopt) {
  std::ifstream in(path);
  if (!in) fail("cannot open ", path.string());
  std::optional<SuperclassRegistry> reg;
  if (registry_path) {
    std::ifstream rin(*registry_path);
    if (!rin) fail("cannot open ", registry_path->string());
    reg = parse_superclass_registry(rin);
  }
  return parse_class_table(in, std::move(reg));
}

// ---------------------------------------------------------------------------
// Hierarchy

/// Is-a graph over wnids. Distances ignore edge direction.
class Hierarchy {
 public:
  Hierarchy() = default;

  void add_edge(const std::string& parent, const std::string& child) {
    int p = intern(parent);
    int c = intern(child);
    if (p == c) fail("hierarchy: self loop on ", parent);
    if (!edges_.emplace(parent, child).second) return;
    children_[static_cast<std::size_t>(p)].push_back(c);
    undirected_[static_cast<std::size_t>(p)].push_back(c);
    undirected_[static_cast<std::size_t>(c)].push_back(p);
  }

  int add_node(const std::string& wnid) { return intern(wnid); }

  bool contains(const std::string& wnid) const { return index_.count(wnid) > 0; }
  std::size_t node_count() const { return names_.size(); }
  const std::set<std::pair<std::string, std::string>>& edges() const { return edges_; }

  int node(const std::string& wnid) const {
    auto it = index_.find(wnid);
    if (it == index_.end()) fail("hierarchy: unknown node '", wnid, "'");
    return it->second;
  }

  /// Unweighted BFS distances from `source` to every node; -1 if unreachable.
  std::vector<int> distances_from(int source) const {
    std::vector<int> dist(names_.size(), -1);
    std::deque<int> queue{source};
    dist[static_cast<std::size_t>(source)] = 0;
    while (!queue.empty()) {
      int u = queue.front();
      queue.pop_front();
      for (int v : undirected_[static_cast<std::size_t>(u)]) {
        if (dist[static_cast<std::size_t>(v)] < 0) {
          dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
          queue.push_back(v);
        }
      }
    }
    return dist;
  }

  bool is_acyclic() const {
    std::vector<int> indegree(names_.size(), 0);
    for (const auto& out : children_)
      for (int c : out) ++indegree[static_cast<std::size_t>(c)];
    std::vector<int> ready;
    for (std::size_t i = 0; i < indegree.size(); ++i)
      if (indegree[i] == 0) ready.push_back(static_cast<int>(i));
    std::size_t seen = 0;
    while (!ready.empty()) {
      int u = ready.back();
      ready.pop_back();
      ++seen;
      for (int c : children_[static_cast<std::size_t>(u)])
        if (--indegree[static_cast<std::size_t>(c)] == 0) ready.push_back(c);
    }
    return seen == names_.size();
  }

  /// Every class wnid must be a node and the directed graph must be acyclic.
  void validate(const ClassTable& table) const {
    for (ClassId c = 0; c < static_cast<ClassId>(table.size()); ++c)
      if (!contains(table[c].wnid)) fail("hierarchy: class ", c, " (", table[c].wnid, ") is not a node");
    if (!is_acyclic()) fail("hierarchy: directed graph has a cycle");
  }

 private:
  int intern(const std::string& wnid) {
    auto [it, inserted] = index_.emplace(wnid, static_cast<int>(names_.size()));
    if (inserted) {
      names_.push_back(wnid);
      children_.emplace_back();
      undirected_.emplace_back();
    }
    return it->second;
  }

  std::unordered_map<std::string, int> index_;
  std::vector<std::string> names_;
  std::vector<std::vector<int>> children_;
  std::vector<std::vector<int>> undirected_;
  std::set<std::pair<std::string, std::string>> edges_;
};

inline Hierarchy parse_hierarchy(std::istream& in) {
  Hierarchy h;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    auto cols = detail::split(line, '\t');
    if (cols.size() != 2) fail("hierarchy.tsv:", lineno, ": expected parent<TAB>child");
    h.add_edge(detail::trim(cols[0]), detail::trim(cols[1]));
  }
  return h;
}

inline Hierarchy load_hierarchy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open ", path.string());
  return parse_hierarchy(in);
}

/// Undirected shortest-path length; nullopt when the nodes are disconnected
/// (callers treat that as infinite distance). Throws on unknown nodes.
inline std::optional<int> hierarchy_distance(const Hierarchy& h, const std::string& a, const std::string& b) {
  int na = h.node(a);
  int nb = h.node(b);
  if (na == nb) return 0;
  int d = h.distances_from(na)[static_cast<std::size_t>(nb)];
  if (d < 0) return std::nullopt;
  return d;
}

/// Memoizing class-to-class distance lookup. Not thread-safe; give each
/// worker thread its own instance.
class ClassDistance {
 public:
  ClassDistance(const Hierarchy& h, const ClassTable& table) : hierarchy_(&h) {
    nodes_.reserve(table.size());
    for (ClassId c = 0; c < static_cast<ClassId>(table.size()); ++c) nodes_.push_back(h.node(table[c].wnid));
  }

  std::optional<int> operator()(ClassId a, ClassId b) {
    if (a == b) return 0;
    auto it = cache_.find(a);
    if (it == cache_.end()) it = cache_.emplace(a, hierarchy_->distances_from(nodes_.at(static_cast<std::size_t>(a)))).first;
    int d = it->second[static_cast<std::size_t>(nodes_.at(static_cast<std::size_t>(b)))];
    if (d < 0) return std::nullopt;
    return d;
  }

  /// True when the classes are more than `threshold` edges apart or disconnected.
  bool farther_than(ClassId a, ClassId b, int threshold) {
    auto d = (*this)(a, b);
    return !d || *d > threshold;
  }

 private:
  const Hierarchy* hierarchy_;
  std::vector<int> nodes_;
  std::unordered_map<ClassId, std::vector<int>> cache_;
};

// ---------------------------------------------------------------------------
// Dataset index

/// Image ids with their dataset label. Images with `study == false` are only
/// used as grid controls and never annotated.
class DatasetIndex {
 public:
  void add(const ImageId& image, ClassId label, bool study = true) {
    if (!labels_.emplace(image, label).second) fail("dataset: duplicate image id '", image, "'");
    if (study)
      study_.insert(image);
    by_class_[label].push_back(image);
  }

  bool contains(const ImageId& image) const { return labels_.count(image) > 0; }
  bool is_study(const ImageId& image) const { return study_.count(image) > 0; }

  ClassId label(const ImageId& image) const {
    auto it = labels_.find(image);
    if (it == labels_.end()) fail("dataset: unknown image '", image, "'");
    return it->second;
  }

  const std::set<ImageId>& study_images() const { return study_; }
  const std::map<ImageId, ClassId>& labels() const { return labels_; }

  /// All images (study and control-only) whose dataset label is `c`, in insertion order.
  const std::vector<ImageId>& images_of_class(ClassId c) const {
    static const std::vector<ImageId> kEmpty;
    auto it = by_class_.find(c);
    return it == by_class_.end() ? kEmpty : it->second;
  }

  /// Study images per class.
  std::map<ClassId, int> images_per_class() const {
    std::map<ClassId, int> out;
    for (const auto& im : study_) ++out[label(im)];
    return out;
  }

 private:
  std::map<ImageId, ClassId> labels_;
  std::set<ImageId> study_;
  std::map<ClassId, std::vector<ImageId>> by_class_;
};

inline DatasetIndex dataset_from_records(const std::vector<json>& records, const ClassTable& table) {
  DatasetIndex index;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto ctx = "dataset.jsonl:" + std::to_string(i + 1);
    auto image = field<std::string>(records[i], "image", ctx);
    auto label = field<int>(records[i], "dataset_label", ctx);
    if (!table.valid(label)) fail(ctx, ": invalid dataset_label ", label);
    index.add(image, label, records[i].value("study", true));
  }
  return index;
}

inline DatasetIndex load_dataset(const std::filesystem::path& path, const ClassTable& table) {
  return dataset_from_records(read_jsonl(path), table);
}

// ---------------------------------------------------------------------------
// Model predictions

struct PredictionSet {
  std::string model_id;
  std::map<ImageId, std::vector<ClassId>> ranked;
  std::optional<double> declared_top1;
  std::optional<double> declared_top5;

  const std::vector<ClassId>* find(const ImageId& image) const {
    auto it = ranked.find(image);
    return it == ranked.end() ? nullptr : &it->second;
  }

  ClassId top1(const ImageId& image) const {
    const auto* r = find(image);
    if (!r || r->empty()) fail("model '", model_id, "' has no prediction for image '", image, "'");
    return r->front();
  }
};

/// Builds one PredictionSet per model from predictions.jsonl records.
/// Records without an "image" key carry declared accuracies for a model.
inline std::vector<PredictionSet> predictions_from_records(const std::vector<json>& records, const ClassTable& table,
                                                           std::size_t k_min = 5, const std::string& what = "predictions") {
  std::map<std::string, PredictionSet> models;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto ctx = what + ":" + std::to_string(i + 1);
    const auto& r = records[i];
    auto model = field<std::string>(r, "model", ctx);
    auto& set = models[model];
    set.model_id = model;
    if (!r.contains("image")) {
      if (r.contains("declared_top1")) set.declared_top1 = r.at("declared_top1").get<double>();
      if (r.contains("declared_top5")) set.declared_top5 = r.at("declared_top5").get<double>();
      continue;
    }
    auto image = field<std::string>(r, "image", ctx);
    auto topk = field<std::vector<int>>(r, "topk", ctx);
    if (topk.size() < k_min) fail(ctx, ": ranked list has ", topk.size(), " entries, need at least ", k_min);
    std::set<int> seen;
    for (int c : topk) {
      if (!table.valid(c)) fail(ctx, ": invalid class id ", c);
      if (!seen.insert(c).second) fail(ctx, ": duplicate class ", c, " in ranked list");
    }
    if (!set.ranked.emplace(image, std::move(topk)).second)
      fail(ctx, ": duplicate prediction for image '", image, "' in model '", model, "'");
  }
  std::vector<PredictionSet> out;
  for (auto& [_, s] : models) out.push_back(std::move(s));
  return out;
}

inline std::vector<PredictionSet> load_predictions(const std::vector<std::filesystem::path>& paths,
                                                   const ClassTable& table, std::size_t k_min = 5) {
  std::vector<json> all;
  for (const auto& p : paths) {
    auto recs = read_jsonl(p);
    all.insert(all.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  return predictions_from_records(all, table, k_min, paths.size() == 1 ? paths.front().string() : "predictions");
}

/// Study images each model has no prediction for.
inline std::map<std::string, std::vector<ImageId>> prediction_coverage_gaps(const std::vector<PredictionSet>& preds,
                                                                            const DatasetIndex& index) {
  std::map<std::string, std::vector<ImageId>> gaps;
  for (const auto& p : preds) {
    auto& g = gaps[p.model_id];
    for (const auto& im : index.study_images())
      if (!p.find(im)) g.push_back(im);
  }
  return gaps;
}

// ---------------------------------------------------------------------------
// Potential labels

struct PotentialLabelSet {
  std::map<ImageId, std::set<ClassId>> pools;
  /// Images missing from every prediction file; their pool is the dataset label alone.
  std::set<ImageId> flagged;

  const std::set<ClassId>& pool(const ImageId& image) const {
    auto it = pools.find(image);
    if (it == pools.end()) fail("no potential labels for image '", image, "'");
    return it->second;
  }

  /// pool size -> number of images
  std::map<std::size_t, std::size_t> size_histogram() const {
    std::map<std::size_t, std::size_t> h;
    for (const auto& [_, p] : pools) ++h[p.size()];
    return h;
  }

  double mean_size() const {
    if (pools.empty()) return 0.0;
    std::size_t total = 0;
    for (const auto& [_, p] : pools) total += p.size();
    return static_cast<double>(total) / static_cast<double>(pools.size());
  }
};

/// Union of every model's top-`top` predictions plus the dataset label, for
/// each study image.
inline PotentialLabelSet build_potential_labels(const std::vector<PredictionSet>& preds, const DatasetIndex& index,
                                                std::size_t top = 5) {
  if (preds.empty()) fail("build_potential_labels: no prediction sets loaded");
  PotentialLabelSet out;
  for (const auto& image : index.study_images()) {
    auto& pool = out.pools[image];
    pool.insert(index.label(image));
    bool covered = false;
    for (const auto& p : preds) {
      const auto* r = p.find(image);
      if (!r) continue;
      covered = true;
      for (std::size_t i = 0; i < std::min(top, r->size()); ++i) pool.insert((*r)[i]);
    }
    if (!covered) out.flagged.insert(image);
  }
  return out;
}

}  // namespace crowdlabel
