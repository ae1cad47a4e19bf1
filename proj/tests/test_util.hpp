#pragma once

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "crowdlabel/crowdlabel.hpp"

namespace crowdlabel::testing {

/// Class table "c0".."c{n-1}" with wnids w0.., all in superclass "S" unless
/// a superclass name per class is given.
inline ClassTable toy_table(int n, const std::vector<std::string>& supers = {}) {
  std::ostringstream os;
  for (int i = 0; i < n; ++i)
    os << i << "\tw" << i << "\tc" << i << "\thttps://example.org/c" << i << "\t"
       << (supers.empty() ? std::string("S") : supers[static_cast<std::size_t>(i)]) << "\n";
  std::istringstream in(os.str());
  return parse_class_table(in);
}

/// Star hierarchy: root -> w_i for every class, so distinct classes are 2 apart.
inline Hierarchy star_hierarchy(int n) {
  Hierarchy h;
  for (int i = 0; i < n; ++i) h.add_edge("root", "w" + std::to_string(i));
  return h;
}

inline ClassifyResponse resp(std::vector<ClassId> valid, std::optional<ClassId> main = std::nullopt,
                             std::string worker = "w", std::string task = "t") {
  ClassifyResponse r;
  r.task_id = std::move(task);
  r.worker = std::move(worker);
  r.valid = std::move(valid);
  r.main = main ? main : (r.valid.empty() ? std::nullopt : std::optional<ClassId>(r.valid.front()));
  return r;
}

/// Aggregated annotation with one single-member block per object label.
inline ImageAnnotation make_annotation(const ImageId& image, ClassId dataset_label, std::vector<ClassId> objects,
                                       std::optional<ClassId> main = std::nullopt) {
  ImageAnnotation a;
  a.image = image;
  a.dataset_label = dataset_label;
  std::sort(objects.begin(), objects.end());
  for (ClassId c : objects) a.partition.blocks.push_back({{c}, c, 1});
  a.num_objects = static_cast<int>(objects.size());
  a.multi_object = a.num_objects >= 2;
  a.main_label = main ? *main : dataset_label;
  return a;
}

inline PredictionSet make_predictions(const std::string& model, const std::map<ImageId, std::vector<ClassId>>& ranked) {
  PredictionSet p;
  p.model_id = model;
  p.ranked = ranked;
  return p;
}

}  // namespace crowdlabel::testing
