#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crowdlabel/candidates.hpp"
#include "crowdlabel/contains.hpp"
#include "crowdlabel/core.hpp"
#include "crowdlabel/rng.hpp"
#include "crowdlabel/set_partition.hpp"

namespace crowdlabel {

struct ClassifyTask {
  TaskId task_id;
  ImageId image;
  ClassId dataset_label = 0;
  std::vector<ClassId> candidates;  // presentation order
  int annotators = 9;
};

struct ClassifyResponse {
  TaskId task_id;
  WorkerId worker;
  ImageId image;
  std::vector<ClassId> valid;  // one label per perceived object
  std::optional<ClassId> main;
};

struct ObjectBlock {
  std::vector<ClassId> members;  // ascending
  ClassId label = 0;
  int votes = 0;  // selection count of `label`
};

struct ObjectPartition {
  std::vector<ObjectBlock> blocks;  // ordered by smallest member
  int violation_cost = 0;
  bool fallback = false;  // fewer distinct labels than the voted object count

  const ObjectBlock* block_containing(ClassId c) const {
    for (const auto& b : blocks)
      if (std::find(b.members.begin(), b.members.end(), c) != b.members.end()) return &b;
    return nullptr;
  }

  bool has_label(ClassId c) const {
    return std::any_of(blocks.begin(), blocks.end(), [c](const ObjectBlock& b) { return b.label == c; });
  }
};

enum class AnnotationProvenance { kAggregated, kAuto, kNoResponses, kImported };

inline const char* to_string(AnnotationProvenance p) {
  switch (p) {
    case AnnotationProvenance::kAggregated: return "aggregated";
    case AnnotationProvenance::kAuto: return "auto";
    case AnnotationProvenance::kNoResponses: return "no_responses";
    case AnnotationProvenance::kImported: return "imported";
  }
  return "?";
}

inline AnnotationProvenance provenance_from_string(const std::string& s) {
  if (s == "aggregated") return AnnotationProvenance::kAggregated;
  if (s == "auto") return AnnotationProvenance::kAuto;
  if (s == "no_responses") return AnnotationProvenance::kNoResponses;
  if (s == "imported") return AnnotationProvenance::kImported;
  fail("unknown annotation provenance '", s, "'");
}

struct ImageAnnotation {
  ImageId image;
  ClassId dataset_label = 0;
  int num_objects = 1;
  double count_confidence = 1.0;
  ClassId main_label = 0;
  double main_confidence = 1.0;
  ObjectPartition partition;
  bool multi_object = false;
  AnnotationProvenance provenance = AnnotationProvenance::kAggregated;
  /// Set when the voted main label was replaced by its block's label.
  std::optional<ClassId> voted_main;

  std::vector<ClassId> object_labels() const {
    std::vector<ClassId> out;
    for (const auto& b : partition.blocks) out.push_back(b.label);
    return out;
  }
  bool has_object(ClassId c) const { return partition.has_label(c); }
};

/// Single-object annotation equal to the dataset label.
inline ImageAnnotation auto_annotation(const ImageId& image, ClassId dataset_label,
                                       AnnotationProvenance provenance = AnnotationProvenance::kAuto) {
  ImageAnnotation a;
  a.image = image;
  a.dataset_label = dataset_label;
  a.main_label = dataset_label;
  a.partition.blocks.push_back({{dataset_label}, dataset_label, 0});
  a.provenance = provenance;
  return a;
}

// ---------------------------------------------------------------------------
// Task construction

inline std::string classify_task_id(const ImageId& image) { return "c-" + image; }

struct ClassifyBuild {
  std::vector<ClassifyTask> tasks;
  std::vector<ImageAnnotation> auto_annotations;
};

/// One task per eligible image with candidates in a seeded shuffled order;
/// every other image gets an auto-annotation.
inline ClassifyBuild build_classify_tasks(const std::map<ImageId, CandidateSet>& candidates,
                                          const std::map<ImageId, EligibilityDecision>& eligibility,
                                          std::uint64_t seed, int annotators = 9) {
  ClassifyBuild out;
  for (const auto& [image, cs] : candidates) {
    auto it = eligibility.find(image);
    if (it == eligibility.end()) fail("no eligibility decision for image '", image, "'");
    if (!it->second.eligible || cs.labels.size() < 2) {
      out.auto_annotations.push_back(auto_annotation(image, cs.dataset_label));
      continue;
    }
    ClassifyTask t;
    t.task_id = classify_task_id(image);
    t.image = image;
    t.dataset_label = cs.dataset_label;
    t.candidates = cs.labels;
    t.annotators = annotators;
    Rng rng(derive_seed(seed, "classify-order", image));
    rng.shuffle(t.candidates);
    out.tasks.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quality control

inline std::optional<std::string> classify_response_flag(const ClassifyTask& task, const ClassifyResponse& r) {
  if (r.valid.empty()) return reason::kEmptyValid;
  const std::set<ClassId> valid(r.valid.begin(), r.valid.end());
  if (!r.main || !valid.count(*r.main)) return reason::kMainNotValid;
  const std::set<ClassId> cands(task.candidates.begin(), task.candidates.end());
  for (ClassId c : valid)
    if (!cands.count(c)) return reason::kLabelNotCandidate;
  return std::nullopt;
}

struct ClassifyQcResult {
  std::vector<ClassifyResponse> retained;
  QcReport report;
};

/// Flags responses with no valid label, a main label outside the valid set,
/// or labels that were not candidates; then drops every response of workers
/// whose flagged share exceeds `worker_flag_share`.
inline ClassifyQcResult apply_classify_qc(const std::vector<ClassifyTask>& tasks,
                                          const std::vector<ClassifyResponse>& responses,
                                          double worker_flag_share = 1.0 / 3.0) {
  std::map<TaskId, const ClassifyTask*> by_id;
  for (const auto& t : tasks)
    if (!by_id.emplace(t.task_id, &t).second) fail("duplicate classify task id '", t.task_id, "'");

  ClassifyQcResult out;
  out.report.total = responses.size();
  std::set<std::pair<TaskId, WorkerId>> seen;
  std::vector<std::pair<const ClassifyResponse*, std::optional<std::string>>> unique;
  std::map<WorkerId, std::pair<std::size_t, std::size_t>> stats;  // (flagged, total)
  for (const auto& r : responses) {
    auto it = by_id.find(r.task_id);
    if (it == by_id.end()) fail("classify response references unknown task '", r.task_id, "'");
    if (!r.image.empty() && r.image != it->second->image)
      fail("classify response for task '", r.task_id, "' names image '", r.image, "'");
    if (!seen.emplace(r.task_id, r.worker).second) {
      out.report.dropped.push_back({r.task_id, r.worker, reason::kDuplicate});
      continue;
    }
    auto flag = classify_response_flag(*it->second, r);
    auto& s = stats[r.worker];
    s.second += 1;
    if (flag) s.first += 1;
    unique.emplace_back(&r, std::move(flag));
  }
  for (const auto& [w, s] : stats)
    if (strictly_greater(static_cast<double>(s.first) / static_cast<double>(s.second), worker_flag_share))
      out.report.dropped_workers.insert(w);
  for (const auto& [r, flag] : unique) {
    if (flag) {
      out.report.dropped.push_back({r->task_id, r->worker, *flag});
    } else if (out.report.dropped_workers.count(r->worker)) {
      out.report.dropped.push_back({r->task_id, r->worker, reason::kWorkerFlaggedShare});
    } else {
      out.retained.push_back(*r);
      if (out.retained.back().image.empty()) out.retained.back().image = by_id.at(r->task_id)->image;
    }
  }
  out.report.retained = out.retained.size();
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct VoteSummary {
  int num_objects = 0;
  double count_confidence = 0.0;
  ClassId main_label = 0;
  double main_confidence = 0.0;
};

inline std::map<ClassId, int> selection_counts(const std::vector<ClassifyResponse>& responses) {
  std::map<ClassId, int> counts;
  for (const auto& r : responses)
    for (ClassId c : std::set<ClassId>(r.valid.begin(), r.valid.end())) ++counts[c];
  return counts;
}

/// Majority votes over object count (ties toward fewer objects) and main
/// label (ties toward the label selected more often overall, then the
/// smaller id). Confidences are the winning share of responses.
inline VoteSummary aggregate_votes(const std::vector<ClassifyResponse>& responses) {
  if (responses.empty()) fail("aggregate_votes: no responses");
  std::map<int, int> count_votes;
  std::map<ClassId, int> main_votes;
  for (const auto& r : responses) {
    ++count_votes[static_cast<int>(std::set<ClassId>(r.valid.begin(), r.valid.end()).size())];
    if (!r.main) fail("aggregate_votes: response (", r.task_id, ", ", r.worker, ") has no main label");
    ++main_votes[*r.main];
  }
  const auto totals = selection_counts(responses);
  const double n = static_cast<double>(responses.size());

  VoteSummary v;
  int best = -1;
  for (const auto& [count, votes] : count_votes)  // ascending count: strict > keeps the smaller on ties
    if (votes > best) best = votes, v.num_objects = count;
  v.count_confidence = best / n;

  best = -1;
  int best_total = -1;
  for (const auto& [label, votes] : main_votes) {
    auto t = totals.find(label);
    const int total = t == totals.end() ? 0 : t->second;
    if (votes > best || (votes == best && total > best_total)) {
      best = votes;
      best_total = total;
      v.main_label = label;
    }
  }
  v.main_confidence = best / n;
  return v;
}

inline constexpr std::size_t kMaxPartitionLabels = 12;

/// Exhaustive search for the grouping of selected labels into k objects.
///
/// Cost counts (response, label pair) incidents where one response selected
/// both labels but the partition merges them. Among minimum-cost partitions
/// the one maximizing the sum of per-block best selection counts wins, then
/// the lexicographically smallest block list. With fewer distinct labels
/// than k, every label becomes its own block and `fallback` is set.
inline ObjectPartition partition_objects(const std::vector<ClassifyResponse>& responses, int k) {
  if (k < 1) fail("partition_objects: object count must be positive, got ", k);
  const auto counts = selection_counts(responses);
  if (counts.empty()) fail("partition_objects: no selected labels");
  std::vector<ClassId> labels;
  for (const auto& [c, _] : counts) labels.push_back(c);
  const std::size_t n = labels.size();
  if (n > kMaxPartitionLabels)
    fail("partition_objects: ", n, " distinct labels exceeds the exhaustive-search limit of ", kMaxPartitionLabels);

  ObjectPartition out;
  if (static_cast<int>(n) < k) {
    out.fallback = true;
    k = static_cast<int>(n);
  }

  std::vector<int> count_of(n);
  for (std::size_t i = 0; i < n; ++i) count_of[i] = counts.at(labels[i]);
  std::vector<std::vector<int>> together(n, std::vector<int>(n, 0));
  for (const auto& r : responses) {
    std::vector<std::size_t> idx;
    for (ClassId c : std::set<ClassId>(r.valid.begin(), r.valid.end()))
      idx.push_back(static_cast<std::size_t>(std::lower_bound(labels.begin(), labels.end(), c) - labels.begin()));
    for (std::size_t a = 0; a < idx.size(); ++a)
      for (std::size_t b = a + 1; b < idx.size(); ++b) ++together[idx[a]][idx[b]];
  }

  auto canonical = [&](std::span<const int> rgs) {
    std::vector<std::vector<ClassId>> blocks(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i) blocks[static_cast<std::size_t>(rgs[i])].push_back(labels[i]);
    return blocks;
  };

  int best_cost = -1;
  int best_score = -1;
  std::vector<int> best_rgs;
  std::vector<int> block_max(static_cast<std::size_t>(k));
  for_each_set_partition(n, k, [&](std::span<const int> rgs) {
    int cost = 0;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        if (rgs[a] == rgs[b]) cost += together[a][b];
    std::fill(block_max.begin(), block_max.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& m = block_max[static_cast<std::size_t>(rgs[i])];
      m = std::max(m, count_of[i]);
    }
    int score = 0;
    for (int m : block_max) score += m;
    bool better = best_cost < 0 || cost < best_cost || (cost == best_cost && score > best_score) ||
                  (cost == best_cost && score == best_score && canonical(rgs) < canonical(best_rgs));
    if (better) {
      best_cost = cost;
      best_score = score;
      best_rgs.assign(rgs.begin(), rgs.end());
    }
  });

  out.violation_cost = best_cost;
  for (auto& members : canonical(best_rgs)) {
    ObjectBlock b;
    b.members = std::move(members);
    b.label = b.members.front();
    for (ClassId c : b.members)
      if (counts.at(c) > counts.at(b.label)) b.label = c;
    b.votes = counts.at(b.label);
    out.blocks.push_back(std::move(b));
  }
  return out;
}

/// Full per-image aggregation: votes, partition, and main-label coercion to
/// the label of the block that contains it.
inline ImageAnnotation annotate_image(const ImageId& image, ClassId dataset_label,
                                      const std::vector<ClassifyResponse>& responses) {
  if (responses.empty()) return auto_annotation(image, dataset_label, AnnotationProvenance::kNoResponses);
  const auto votes = aggregate_votes(responses);
  ImageAnnotation a;
  a.image = image;
  a.dataset_label = dataset_label;
  a.partition = partition_objects(responses, votes.num_objects);
  a.num_objects = static_cast<int>(a.partition.blocks.size());
  a.count_confidence = votes.count_confidence;
  a.main_confidence = votes.main_confidence;
  a.main_label = votes.main_label;
  if (!a.partition.has_label(votes.main_label)) {
    const auto* block = a.partition.block_containing(votes.main_label);
    if (!block) fail("annotate_image: main label ", votes.main_label, " not among selected labels of '", image, "'");
    a.voted_main = votes.main_label;
    a.main_label = block->label;
  }
  a.multi_object = a.num_objects >= 2;
  a.provenance = AnnotationProvenance::kAggregated;
  return a;
}

/// Annotates every task from its retained responses and merges the
/// auto-annotations. Output is ordered by image id.
inline std::vector<ImageAnnotation> aggregate_classify(const std::vector<ClassifyTask>& tasks,
                                                       const std::vector<ClassifyResponse>& retained,
                                                       const std::vector<ImageAnnotation>& auto_annotations) {
  std::map<TaskId, std::vector<ClassifyResponse>> by_task;
  for (const auto& r : retained) by_task[r.task_id].push_back(r);
  std::map<ImageId, ImageAnnotation> out;
  for (const auto& a : auto_annotations) out.emplace(a.image, a);
  for (const auto& t : tasks) {
    auto it = by_task.find(t.task_id);
    static const std::vector<ClassifyResponse> kNone;
    auto ann = annotate_image(t.image, t.dataset_label, it == by_task.end() ? kNone : it->second);
    if (!out.emplace(t.image, std::move(ann)).second) fail("image '", t.image, "' annotated twice");
  }
  std::vector<ImageAnnotation> v;
  v.reserve(out.size());
  for (auto& [_, a] : out) v.push_back(std::move(a));
  return v;
}

}  // namespace crowdlabel
