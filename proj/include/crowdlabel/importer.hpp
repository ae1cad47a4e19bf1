#pragma once

// Adapter from externally released multi-label annotation files to the
// canonical ImageAnnotation form. The released schema is not formally
// documented, so the reader accepts the common shapes: a JSON array or JSONL
// of records, or an object keyed by image id. Recognized record keys:
//   image id   : image | filename | file | id   (or the enclosing object key)
//   objects    : objects | labels | multi_labels | valid_labels
//                (integers or {"label": int} objects)
//   main       : main | main_label | main_object
//   count      : num_objects | count | number_of_objects  (default |objects|)
//   confidence : count_confidence, main_confidence        (default 1)
//   flags      : sf_zero, never_selected                  (booleans, optional)

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crowdlabel/classify.hpp"
#include "crowdlabel/ingest.hpp"
#include "crowdlabel/jsonl.hpp"

namespace crowdlabel {

struct ImportResult {
  std::vector<ImageAnnotation> annotations;
  std::vector<std::string> unmatched_images;
  std::size_t sf_zero_flags = 0;
  std::size_t never_selected_flags = 0;
  bool has_sf_zero_field = false;
  bool has_never_selected_field = false;

  std::size_t multi_object() const {
    std::size_t n = 0;
    for (const auto& a : annotations) n += a.multi_object;
    return n;
  }
  /// Multi-object images whose main label differs from the dataset label.
  std::size_t multi_object_main_disagreements() const {
    std::size_t n = 0;
    for (const auto& a : annotations) n += a.multi_object && a.main_label != a.dataset_label;
    return n;
  }
};

namespace detail {

inline const json* first_key(const json& j, std::initializer_list<const char*> keys) {
  for (const char* k : keys)
    if (auto it = j.find(k); it != j.end() && !it->is_null()) return &*it;
  return nullptr;
}

inline int label_of(const json& v, const std::string& ctx) {
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_object()) {
    if (const auto* l = first_key(v, {"label", "class", "class_id", "id"}); l && l->is_number_integer())
      return l->get<int>();
  }
  if (v.is_string()) return std::stoi(v.get<std::string>());
  fail(ctx, ": cannot read a class id from ", v.dump());
}

inline std::optional<ImageId> match_image(const std::string& raw, const DatasetIndex& index) {
  if (index.contains(raw)) return raw;
  const auto stem = std::filesystem::path(raw).stem().string();
  if (index.contains(stem)) return stem;
  const auto base = std::filesystem::path(raw).filename().string();
  if (index.contains(base)) return base;
  return std::nullopt;
}

}  // namespace detail

inline ImportResult import_released_annotations(const json& doc, const DatasetIndex& index, const ClassTable& table) {
  std::vector<std::pair<std::string, const json*>> records;
  if (doc.is_array()) {
    for (const auto& r : doc) records.emplace_back("", &r);
  } else if (doc.is_object()) {
    for (const auto& [k, v] : doc.items()) records.emplace_back(k, &v);
  } else {
    fail("released annotations: expected an array or object at top level");
  }

  ImportResult out;
  std::set<ImageId> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& [key, rec] = records[i];
    const std::string ctx = "released annotation " + std::to_string(i + 1);
    if (!rec->is_object()) fail(ctx, ": record is not an object");
    std::string raw = key;
    if (const auto* id = detail::first_key(*rec, {"image", "filename", "file", "id"}); id && id->is_string())
      raw = id->get<std::string>();
    if (raw.empty()) fail(ctx, ": no image id");
    auto image = detail::match_image(raw, index);
    if (!image) {
      out.unmatched_images.push_back(raw);
      continue;
    }
    if (!seen.insert(*image).second) fail(ctx, ": duplicate image '", *image, "'");

    ImageAnnotation a;
    a.image = *image;
    a.dataset_label = index.label(*image);
    a.provenance = AnnotationProvenance::kImported;
    std::vector<ClassId> objects;
    if (const auto* objs = detail::first_key(*rec, {"objects", "labels", "multi_labels", "valid_labels"})) {
      if (!objs->is_array()) fail(ctx, ": objects must be an array");
      for (const auto& o : *objs) {
        int c = detail::label_of(o, ctx);
        if (!table.valid(c)) fail(ctx, ": invalid class id ", c);
        if (std::find(objects.begin(), objects.end(), c) == objects.end()) objects.push_back(c);
      }
    }
    if (objects.empty()) objects.push_back(a.dataset_label);
    for (ClassId c : objects) a.partition.blocks.push_back({{c}, c, 0});
    a.main_label = objects.front();
    if (const auto* m = detail::first_key(*rec, {"main", "main_label", "main_object"})) a.main_label = detail::label_of(*m, ctx);
    a.num_objects = static_cast<int>(objects.size());
    if (const auto* n = detail::first_key(*rec, {"num_objects", "count", "number_of_objects"}); n && n->is_number())
      a.num_objects = n->get<int>();
    a.count_confidence = rec->value("count_confidence", 1.0);
    a.main_confidence = rec->value("main_confidence", 1.0);
    a.multi_object = a.num_objects >= 2;
    if (rec->contains("sf_zero")) out.has_sf_zero_field = true, out.sf_zero_flags += rec->at("sf_zero").get<bool>();
    if (rec->contains("never_selected"))
      out.has_never_selected_field = true, out.never_selected_flags += rec->at("never_selected").get<bool>();
    out.annotations.push_back(std::move(a));
  }
  std::sort(out.annotations.begin(), out.annotations.end(),
            [](const auto& x, const auto& y) { return x.image < y.image; });
  return out;
}

/// Reads a JSON document, or JSONL when the file is not one JSON value.
inline json read_released_file(const std::filesystem::path& path) {
  const auto text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    std::istringstream in(text);
    return json(parse_jsonl(in, path.string()));
  }
}

}  // namespace crowdlabel
