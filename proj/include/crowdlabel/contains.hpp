#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crowdlabel/config.hpp"
#include "crowdlabel/core.hpp"
#include "crowdlabel/ingest.hpp"
#include "crowdlabel/rng.hpp"

namespace crowdlabel {

/// One CONTAINS grid: a query label and the images shown for it.
///
/// `shown` holds three disjoint kinds of image: targets (the (image, label)
/// pairs being measured), controls (dataset label == query label) and, only
/// when a class has too few control images to fill the grid, distractors
/// (images that neither carry nor were proposed for the label). Only targets
/// receive selection frequencies.
struct GridTask {
  TaskId task_id;
  ClassId query_label = 0;
  std::vector<ImageId> shown;
  std::vector<ImageId> controls;
  std::vector<ImageId> distractors;
  std::uint64_t seed = 0;

  std::vector<ImageId> targets() const {
    std::set<ImageId> skip(controls.begin(), controls.end());
    skip.insert(distractors.begin(), distractors.end());
    std::vector<ImageId> out;
    for (const auto& im : shown)
      if (!skip.count(im)) out.push_back(im);
    return out;
  }
};

struct GridResponse {
  TaskId task_id;
  WorkerId worker;
  std::vector<ImageId> selected;
};

struct DroppedResponse {
  TaskId task_id;
  WorkerId worker;
  std::string reason;
};

struct QcReport {
  std::set<WorkerId> dropped_workers;
  std::vector<DroppedResponse> dropped;
  std::size_t retained = 0;
  std::size_t total = 0;

  std::map<std::string, std::size_t> reason_counts() const {
    std::map<std::string, std::size_t> out;
    for (const auto& d : dropped) ++out[d.reason];
    return out;
  }
};

namespace reason {
inline constexpr const char* kWorkerLowControlRate = "worker_low_control_rate";
inline constexpr const char* kTaskLowControlRate = "task_low_control_rate";
inline constexpr const char* kDuplicate = "duplicate_submission";
inline constexpr const char* kEmptyValid = "empty_valid";
inline constexpr const char* kMainNotValid = "main_not_valid";
inline constexpr const char* kLabelNotCandidate = "label_not_candidate";
inline constexpr const char* kWorkerFlaggedShare = "worker_flagged_share";
}  // namespace reason

// ---------------------------------------------------------------------------
// Grid construction

inline std::string grid_task_id(ClassId label, std::size_t chunk) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "g%05d-%03zu", label, chunk);
  return buf;
}

/// Builds the CONTAINS grids. Each (image, potential label) pair lands in
/// exactly one grid for that label. A label's candidate images are shuffled,
/// cut into chunks of at most grid_size - min_controls, and every chunk is
/// padded to grid_size with controls sampled without replacement. If the
/// class has fewer spare control images than padding slots, the remaining
/// slots take distractors; fewer than min_controls controls is an error.
inline std::vector<GridTask> build_grids(const PotentialLabelSet& pool, const DatasetIndex& index,
                                         const PipelineConfig& config) {
  config.validate();
  if (pool.pools.empty()) fail("build_grids: empty potential-label pool");
  const auto grid_size = static_cast<std::size_t>(config.grid_size);
  const auto min_controls = static_cast<std::size_t>(config.min_controls);
  const std::size_t chunk_cap = grid_size - min_controls;

  std::map<ClassId, std::vector<ImageId>> by_label;
  for (const auto& [image, labels] : pool.pools)
    for (ClassId l : labels) by_label[l].push_back(image);

  std::vector<GridTask> grids;
  for (auto& [label, candidates] : by_label) {
    const auto& eligible = index.images_of_class(label);
    if (eligible.size() < min_controls)
      fail("build_grids: insufficient control images for label ", label, ": need ", min_controls, ", have ",
           eligible.size());
    Rng order(derive_seed(config.seed, "grid-order", static_cast<std::uint64_t>(label)));
    order.shuffle(candidates);

    std::vector<ImageId> distractor_pool;  // built on first use
    for (std::size_t start = 0, ci = 0; start < candidates.size(); start += chunk_cap, ++ci) {
      const std::size_t end = std::min(candidates.size(), start + chunk_cap);
      std::vector<ImageId> chunk(candidates.begin() + static_cast<std::ptrdiff_t>(start),
                                 candidates.begin() + static_cast<std::ptrdiff_t>(end));
      const std::set<ImageId> in_chunk(chunk.begin(), chunk.end());
      GridTask task;
      task.task_id = grid_task_id(label, ci);
      task.query_label = label;
      task.seed = derive_seed(config.seed, "grid", static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(ci));
      Rng rng(task.seed);

      std::vector<ImageId> spare;
      for (const auto& im : eligible)
        if (!in_chunk.count(im)) spare.push_back(im);
      std::sort(spare.begin(), spare.end());
      const std::size_t padding = grid_size - chunk.size();
      task.controls = rng.sample(spare, padding);
      if (task.controls.size() < min_controls)
        fail("build_grids: insufficient control images for label ", label, " in grid ", task.task_id, ": need ",
             min_controls, ", have ", task.controls.size());

      if (task.controls.size() < padding) {
        if (distractor_pool.empty()) {
          for (const auto& [im, l] : index.labels()) {
            if (l == label) continue;
            auto it = pool.pools.find(im);
            if (it != pool.pools.end() && it->second.count(label)) continue;
            distractor_pool.push_back(im);
          }
        }
        task.distractors = rng.sample(distractor_pool, padding - task.controls.size());
        if (task.controls.size() + task.distractors.size() < padding)
          fail("build_grids: not enough images to fill grid ", task.task_id);
      }

      task.shown = chunk;
      task.shown.insert(task.shown.end(), task.controls.begin(), task.controls.end());
      task.shown.insert(task.shown.end(), task.distractors.begin(), task.distractors.end());
      rng.shuffle(task.shown);
      grids.push_back(std::move(task));
    }
  }
  return grids;
}

// ---------------------------------------------------------------------------
// Quality control

inline double control_selection_rate(const GridTask& task, const GridResponse& r) {
  if (task.controls.empty()) return 1.0;
  const std::set<ImageId> sel(r.selected.begin(), r.selected.end());
  std::size_t hit = 0;
  for (const auto& c : task.controls) hit += sel.count(c);
  return static_cast<double>(hit) / static_cast<double>(task.controls.size());
}

struct ContainsQcThresholds {
  double worker_control_rate = 0.20;
  double worker_bad_share = 0.50;
  double task_control_rate = 0.40;

  static ContainsQcThresholds from(const PipelineConfig& c) {
    return {c.worker_control_rate, c.worker_bad_share, c.task_control_rate};
  }
};

inline std::map<TaskId, const GridTask*> index_tasks(const std::vector<GridTask>& tasks) {
  std::map<TaskId, const GridTask*> out;
  for (const auto& t : tasks)
    if (!out.emplace(t.task_id, &t).second) fail("duplicate grid task id '", t.task_id, "'");
  return out;
}

struct ContainsQcResult {
  std::vector<GridResponse> retained;
  QcReport report;
};

/// Worker-level filter first (a worker is dropped when the share of their
/// tasks with control rate < worker_control_rate is >= worker_bad_share),
/// then per-response filter (control rate < task_control_rate). A repeated
/// (task, worker) submission keeps only the first.
inline ContainsQcResult apply_contains_qc(const std::vector<GridTask>& tasks, const std::vector<GridResponse>& responses,
                                          const ContainsQcThresholds& th = {}) {
  const auto by_id = index_tasks(tasks);
  ContainsQcResult out;
  out.report.total = responses.size();

  std::vector<const GridResponse*> unique;
  std::set<std::pair<TaskId, WorkerId>> seen;
  std::vector<double> rate_of;
  std::map<WorkerId, std::pair<std::size_t, std::size_t>> worker_stats;  // (bad, total)
  for (const auto& r : responses) {
    auto it = by_id.find(r.task_id);
    if (it == by_id.end()) fail("contains response references unknown task '", r.task_id, "'");
    const std::set<ImageId> shown(it->second->shown.begin(), it->second->shown.end());
    for (const auto& im : r.selected)
      if (!shown.count(im)) fail("contains response (", r.task_id, ", ", r.worker, ") selects unshown image '", im, "'");
    if (!seen.emplace(r.task_id, r.worker).second) {
      out.report.dropped.push_back({r.task_id, r.worker, reason::kDuplicate});
      continue;
    }
    unique.push_back(&r);
    const double rate = control_selection_rate(*it->second, r);
    rate_of.push_back(rate);
    auto& ws = worker_stats[r.worker];
    ws.second += 1;
    if (strictly_less(rate, th.worker_control_rate)) ws.first += 1;
  }

  for (const auto& [w, s] : worker_stats) {
    const double share = static_cast<double>(s.first) / static_cast<double>(s.second);
    if (approx_ge(share, th.worker_bad_share)) out.report.dropped_workers.insert(w);
  }

  for (std::size_t i = 0; i < unique.size(); ++i) {
    const auto& r = *unique[i];
    if (out.report.dropped_workers.count(r.worker)) {
      out.report.dropped.push_back({r.task_id, r.worker, reason::kWorkerLowControlRate});
    } else if (strictly_less(rate_of[i], th.task_control_rate)) {
      out.report.dropped.push_back({r.task_id, r.worker, reason::kTaskLowControlRate});
    } else {
      out.retained.push_back(r);
    }
  }
  out.report.retained = out.retained.size();
  return out;
}

// ---------------------------------------------------------------------------
// Selection frequencies

struct SfEntry {
  int affirmed = 0;
  int shown_to = 0;
  double sf() const { return static_cast<double>(affirmed) / static_cast<double>(shown_to); }
};

/// Per (image, label) selection frequency. Pairs never shown to a retained
/// annotator are absent rather than zero.
class SelectionFrequencyTable {
 public:
  void add(const ImageId& image, ClassId label, int affirmed, int shown_to) {
    if (shown_to <= 0) fail("selection frequency needs shown_to > 0 for (", image, ", ", label, ")");
    if (affirmed < 0 || affirmed > shown_to) fail("affirmed out of range for (", image, ", ", label, ")");
    auto& e = table_[image][label];
    e.affirmed += affirmed;
    e.shown_to += shown_to;
  }

  const SfEntry* find(const ImageId& image, ClassId label) const {
    auto it = table_.find(image);
    if (it == table_.end()) return nullptr;
    auto jt = it->second.find(label);
    return jt == it->second.end() ? nullptr : &jt->second;
  }

  std::optional<double> sf(const ImageId& image, ClassId label) const {
    const auto* e = find(image, label);
    if (!e) return std::nullopt;
    return e->sf();
  }

  /// Absent pairs read as 0.
  double sf_or_zero(const ImageId& image, ClassId label) const { return sf(image, label).value_or(0.0); }

  const std::map<ClassId, SfEntry>& labels_of(const ImageId& image) const {
    static const std::map<ClassId, SfEntry> kEmpty;
    auto it = table_.find(image);
    return it == table_.end() ? kEmpty : it->second;
  }

  const std::map<ImageId, std::map<ClassId, SfEntry>>& entries() const { return table_; }
  std::size_t image_count() const { return table_.size(); }

  /// Grids that had no retained response; their pairs are absent.
  std::set<TaskId> flagged_grids;

 private:
  std::map<ImageId, std::map<ClassId, SfEntry>> table_;
};

inline SelectionFrequencyTable compute_selection_frequencies(const std::vector<GridTask>& tasks,
                                                             const std::vector<GridResponse>& retained) {
  std::map<TaskId, std::vector<const GridResponse*>> by_task;
  const auto by_id = index_tasks(tasks);
  for (const auto& r : retained) {
    if (!by_id.count(r.task_id)) fail("contains response references unknown task '", r.task_id, "'");
    by_task[r.task_id].push_back(&r);
  }
  SelectionFrequencyTable sft;
  for (const auto& task : tasks) {
    auto it = by_task.find(task.task_id);
    if (it == by_task.end() || it->second.empty()) {
      sft.flagged_grids.insert(task.task_id);
      continue;
    }
    const auto& rs = it->second;
    std::map<ImageId, int> affirmed;
    for (const auto* r : rs)
      for (const auto& im : std::set<ImageId>(r->selected.begin(), r->selected.end())) ++affirmed[im];
    for (const auto& im : task.targets())
      sft.add(im, task.query_label, affirmed.count(im) ? affirmed[im] : 0, static_cast<int>(rs.size()));
  }
  return sft;
}

// ---------------------------------------------------------------------------
// Reports

struct RelativeSfReport {
  std::vector<double> thresholds;
  /// per image: for each threshold, number of other labels with sf >= t * sf(dataset label)
  std::map<ImageId, std::vector<int>> counts;
  /// images whose dataset-label sf is zero (see detect_unverified)
  std::vector<ImageId> excluded_sf_zero;
  /// images with no measured dataset-label sf
  std::vector<ImageId> excluded_unmeasured;

  /// per threshold: count value -> number of images
  std::vector<std::map<int, int>> histograms() const {
    std::vector<std::map<int, int>> out(thresholds.size());
    for (const auto& [_, c] : counts)
      for (std::size_t t = 0; t < c.size(); ++t) ++out[t][c[t]];
    return out;
  }

  /// Fraction of reported images with at least one such label at threshold index t.
  double share_with_any(std::size_t t) const {
    if (counts.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& [_, c] : counts) n += c[t] > 0;
    return static_cast<double>(n) / static_cast<double>(counts.size());
  }
};

inline RelativeSfReport relative_sf_report(const SelectionFrequencyTable& sft, const DatasetIndex& index,
                                           std::vector<double> thresholds = {1.0, 0.75, 0.5, 0.25}) {
  RelativeSfReport out;
  out.thresholds = std::move(thresholds);
  for (const auto& image : index.study_images()) {
    const ClassId in = index.label(image);
    auto in_sf = sft.sf(image, in);
    if (!in_sf) {
      out.excluded_unmeasured.push_back(image);
      continue;
    }
    if (*in_sf <= 0.0) {
      out.excluded_sf_zero.push_back(image);
      continue;
    }
    std::vector<int> c(out.thresholds.size(), 0);
    for (const auto& [label, e] : sft.labels_of(image)) {
      if (label == in) continue;
      for (std::size_t t = 0; t < out.thresholds.size(); ++t)
        if (approx_ge(e.sf(), out.thresholds[t] * *in_sf)) ++c[t];
    }
    out.counts.emplace(image, std::move(c));
  }
  return out;
}

struct UnverifiedImage {
  ImageId image;
  ClassId dataset_label = 0;
  /// most-selected other label ("sel"), if any other label was measured
  std::optional<ClassId> selected;
  double selected_sf = 0.0;
};

/// Images whose dataset label no retained annotator affirmed.
inline std::vector<UnverifiedImage> detect_unverified(const SelectionFrequencyTable& sft, const DatasetIndex& index) {
  std::vector<UnverifiedImage> out;
  for (const auto& image : index.study_images()) {
    const ClassId in = index.label(image);
    auto in_sf = sft.sf(image, in);
    if (!in_sf || *in_sf > 0.0) continue;
    UnverifiedImage u{image, in, std::nullopt, 0.0};
    for (const auto& [label, e] : sft.labels_of(image)) {
      if (label == in) continue;
      if (!u.selected || e.sf() > u.selected_sf + kEps) {
        u.selected = label;
        u.selected_sf = e.sf();
      }
    }
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace crowdlabel
