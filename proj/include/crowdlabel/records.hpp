#pragma once

// JSON forms of every pipeline record. Field names follow the canonical
// jsonl schemas; readers reject records with missing or mistyped fields.

#include <map>
#include <string>
#include <vector>

#include "crowdlabel/candidates.hpp"
#include "crowdlabel/classify.hpp"
#include "crowdlabel/contains.hpp"
#include "crowdlabel/jsonl.hpp"

namespace crowdlabel::records {

// --- CONTAINS ---------------------------------------------------------------

inline json to_json(const GridTask& t) {
  json j{{"task_id", t.task_id}, {"query_label", t.query_label}, {"shown", t.shown}, {"controls", t.controls}};
  if (!t.distractors.empty()) j["distractors"] = t.distractors;
  return j;
}

inline GridTask grid_from_json(const json& j, const std::string& ctx = "grid") {
  GridTask t;
  t.task_id = field<std::string>(j, "task_id", ctx);
  t.query_label = field<int>(j, "query_label", ctx);
  t.shown = field<std::vector<std::string>>(j, "shown", ctx);
  t.controls = field<std::vector<std::string>>(j, "controls", ctx);
  if (j.contains("distractors")) t.distractors = field<std::vector<std::string>>(j, "distractors", ctx);
  return t;
}

inline json to_json(const GridResponse& r) {
  return json{{"task_id", r.task_id}, {"worker", r.worker}, {"selected", r.selected}};
}

inline GridResponse contains_response_from_json(const json& j, const std::string& ctx = "contains response") {
  GridResponse r;
  r.task_id = field<std::string>(j, "task_id", ctx);
  r.worker = field<std::string>(j, "worker", ctx);
  r.selected = field<std::vector<std::string>>(j, "selected", ctx);
  return r;
}

inline std::vector<json> sf_to_records(const SelectionFrequencyTable& sft) {
  std::vector<json> out;
  for (const auto& [image, labels] : sft.entries())
    for (const auto& [label, e] : labels)
      out.push_back(json{{"image", image}, {"label", label}, {"affirmed", e.affirmed}, {"shown_to", e.shown_to}, {"sf", e.sf()}});
  return out;
}

inline SelectionFrequencyTable sf_from_records(const std::vector<json>& recs) {
  SelectionFrequencyTable sft;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto ctx = "sf.jsonl:" + std::to_string(i + 1);
    sft.add(field<std::string>(recs[i], "image", ctx), field<int>(recs[i], "label", ctx),
            field<int>(recs[i], "affirmed", ctx), field<int>(recs[i], "shown_to", ctx));
  }
  return sft;
}

inline json to_json(const QcReport& r) {
  json dropped = json::array();
  for (const auto& d : r.dropped) dropped.push_back(json{{"task_id", d.task_id}, {"worker", d.worker}, {"reason", d.reason}});
  return json{{"dropped_workers", r.dropped_workers},
              {"dropped", dropped},
              {"reason_counts", r.reason_counts()},
              {"retained", r.retained},
              {"total", r.total}};
}

// --- candidates -------------------------------------------------------------

inline json to_json(const CandidateSet& c) {
  json prov = json::object();
  for (const auto& [label, rule] : c.provenance) prov[std::to_string(label)] = static_cast<int>(rule);
  return json{{"image", c.image}, {"candidates", c.labels}, {"provenance", prov}};
}

inline CandidateSet candidates_from_json(const json& j, const std::string& ctx = "candidates") {
  CandidateSet c;
  c.image = field<std::string>(j, "image", ctx);
  c.labels = field<std::vector<int>>(j, "candidates", ctx);
  bool have_in = false;
  const auto provenance = field<json>(j, "provenance", ctx);
  for (const auto& [k, v] : provenance.items()) {
    const ClassId label = std::stoi(k);
    const auto rule = static_cast<CandidateRule>(v.get<int>());
    c.provenance[label] = rule;
    if (rule == CandidateRule::kDatasetLabel) c.dataset_label = label, have_in = true;
  }
  if (!have_in) fail(ctx, ": provenance lacks the dataset label (rule 1)");
  return c;
}

inline json to_json(const EligibilityDecision& d) {
  return json{{"image", d.image}, {"eligible", d.eligible}, {"reason", to_string(d.reason)}};
}

inline EligibilityDecision eligibility_from_json(const json& j, const std::string& ctx = "eligibility") {
  EligibilityDecision d;
  d.image = field<std::string>(j, "image", ctx);
  d.eligible = field<bool>(j, "eligible", ctx);
  d.reason = eligibility_reason_from_string(field<std::string>(j, "reason", ctx));
  return d;
}

// --- CLASSIFY ---------------------------------------------------------------

inline json to_json(const ClassifyTask& t) {
  return json{{"task_id", t.task_id},
              {"image", t.image},
              {"dataset_label", t.dataset_label},
              {"candidates", t.candidates},
              {"annotators", t.annotators}};
}

inline ClassifyTask classify_task_from_json(const json& j, const std::string& ctx = "classify task") {
  ClassifyTask t;
  t.task_id = field<std::string>(j, "task_id", ctx);
  t.image = field<std::string>(j, "image", ctx);
  t.dataset_label = field<int>(j, "dataset_label", ctx);
  t.candidates = field<std::vector<int>>(j, "candidates", ctx);
  t.annotators = j.value("annotators", 9);
  return t;
}

inline json to_json(const ClassifyResponse& r) {
  json j{{"task_id", r.task_id}, {"worker", r.worker}, {"image", r.image}, {"valid", r.valid}};
  j["main"] = r.main ? json(*r.main) : json(nullptr);
  return j;
}

inline ClassifyResponse classify_response_from_json(const json& j, const std::string& ctx = "classify response") {
  ClassifyResponse r;
  r.task_id = field<std::string>(j, "task_id", ctx);
  r.worker = field<std::string>(j, "worker", ctx);
  r.image = j.value("image", std::string{});
  r.valid = field<std::vector<int>>(j, "valid", ctx);
  if (auto it = j.find("main"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) fail(ctx, ": field 'main' has wrong type");
    r.main = it->get<int>();
  }
  return r;
}

inline json to_json(const ImageAnnotation& a) {
  json objects = json::array();
  for (const auto& b : a.partition.blocks)
    objects.push_back(json{{"label", b.label}, {"members", b.members}, {"votes", b.votes}});
  json j{{"image", a.image},
         {"dataset_label", a.dataset_label},
         {"num_objects", a.num_objects},
         {"count_confidence", a.count_confidence},
         {"main_label", a.main_label},
         {"main_confidence", a.main_confidence},
         {"objects", objects},
         {"multi_object", a.multi_object},
         {"provenance", to_string(a.provenance)}};
  if (a.voted_main) j["voted_main"] = *a.voted_main;
  if (a.partition.violation_cost) j["violation_cost"] = a.partition.violation_cost;
  if (a.partition.fallback) j["partition_fallback"] = true;
  return j;
}

inline ImageAnnotation annotation_from_json(const json& j, const std::string& ctx = "annotation") {
  ImageAnnotation a;
  a.image = field<std::string>(j, "image", ctx);
  a.dataset_label = field<int>(j, "dataset_label", ctx);
  a.num_objects = field<int>(j, "num_objects", ctx);
  a.count_confidence = field<double>(j, "count_confidence", ctx);
  a.main_label = field<int>(j, "main_label", ctx);
  a.main_confidence = field<double>(j, "main_confidence", ctx);
  for (const auto& o : field<json>(j, "objects", ctx)) {
    ObjectBlock b;
    b.label = field<int>(o, "label", ctx);
    b.members = field<std::vector<int>>(o, "members", ctx);
    b.votes = o.value("votes", 0);
    a.partition.blocks.push_back(std::move(b));
  }
  a.multi_object = field<bool>(j, "multi_object", ctx);
  a.provenance = provenance_from_string(field<std::string>(j, "provenance", ctx));
  if (j.contains("voted_main")) a.voted_main = j.at("voted_main").get<int>();
  a.partition.violation_cost = j.value("violation_cost", 0);
  a.partition.fallback = j.value("partition_fallback", false);
  return a;
}

// --- bulk helpers -----------------------------------------------------------

template <typename T>
std::vector<json> to_records(const std::vector<T>& items) {
  std::vector<json> out;
  out.reserve(items.size());
  for (const auto& x : items) out.push_back(to_json(x));
  return out;
}

template <typename F>
auto from_records(const std::vector<json>& recs, F&& parse, const std::string& what) {
  std::vector<decltype(parse(recs.front(), std::string{}))> out;
  out.reserve(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) out.push_back(parse(recs[i], what + ":" + std::to_string(i + 1)));
  return out;
}

}  // namespace crowdlabel::records
