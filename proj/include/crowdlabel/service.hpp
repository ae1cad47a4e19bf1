#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crowdlabel/classify.hpp"
#include "crowdlabel/config.hpp"
#include "crowdlabel/contains.hpp"
#include "crowdlabel/hash.hpp"
#include "crowdlabel/ingest.hpp"
#include "crowdlabel/jsonl.hpp"
#include "crowdlabel/records.hpp"

namespace crowdlabel {

enum class Stage { kContains, kClassify };

inline const char* to_string(Stage s) { return s == Stage::kContains ? "contains" : "classify"; }

inline std::optional<Stage> stage_from_string(const std::string& s) {
  if (s == "contains") return Stage::kContains;
  if (s == "classify") return Stage::kClassify;
  return std::nullopt;
}

/// Failure with an HTTP-style status: 400 schema, 404 unknown, 409 conflict.
class ServiceError : public Error {
 public:
  ServiceError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct ServiceConfig {
  int target = 9;  // responses wanted per task
  std::chrono::seconds lease_timeout{600};
  std::optional<std::filesystem::path> log_path;
  PipelineConfig pipeline;
};

struct ExportResult {
  std::string content;
  std::string sha256;
};

/// Task dispenser and append-only response log for both annotation stages.
/// All public members are safe to call concurrently.
class TaskStore {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  TaskStore(std::vector<GridTask> grids, std::vector<ClassifyTask> classify, ServiceConfig cfg = {},
            Clock clock = [] { return std::chrono::steady_clock::now(); })
      : grids_(std::move(grids)), classify_(std::move(classify)), cfg_(std::move(cfg)), clock_(std::move(clock)) {
    for (std::size_t i = 0; i < grids_.size(); ++i) add_task(Stage::kContains, grids_[i].task_id, i);
    for (std::size_t i = 0; i < classify_.size(); ++i) add_task(Stage::kClassify, classify_[i].task_id, i);
    if (cfg_.log_path && std::filesystem::exists(*cfg_.log_path)) replay(*cfg_.log_path);
  }

  /// Optional metadata used to describe labels in task payloads.
  void set_class_table(const ClassTable* table) {
    std::lock_guard lock(mu_);
    table_ = table;
  }

  /// Annotations for images that never reach the CLASSIFY stage.
  void set_auto_annotations(std::vector<ImageAnnotation> autos) {
    std::lock_guard lock(mu_);
    autos_ = std::move(autos);
  }

  /// Called after aggregation to produce the metrics export.
  void set_metrics_hook(std::function<json(const std::vector<ImageAnnotation>&)> hook) {
    std::lock_guard lock(mu_);
    metrics_hook_ = std::move(hook);
  }

  /// Leases the least-assigned open task (ties to the smallest task id) that
  /// `worker` has never been given. nullopt when none is available.
  std::optional<json> next_task(const WorkerId& worker, const std::string& stage_name) {
    auto stage = stage_from_string(stage_name);
    if (!stage) throw ServiceError(404, "unknown stage '" + stage_name + "'");
    if (worker.empty()) throw ServiceError(400, "missing worker");
    std::lock_guard lock(mu_);
    const auto now = clock_();
    const TaskState* best = nullptr;
    for (const auto& [id, st] : tasks_) {
      if (st.stage != *stage) continue;
      if (st.seen_by.count(worker)) continue;
      const int assigned = assignments(st, now);
      if (assigned >= cfg_.target) continue;
      if (!best || assigned < assignments(*best, now)) best = &st;
    }
    if (!best) return std::nullopt;
    auto& st = tasks_.at(best->task_id);
    st.seen_by.insert(worker);
    st.leases[worker] = now + cfg_.lease_timeout;
    return payload(st);
  }

  struct SubmitAck {
    bool qc_flag = false;
    std::size_t log_size = 0;
  };

  /// Appends a response. Rejects malformed payloads (400), unknown tasks or
  /// missing/expired leases (404), and repeated (task, worker) pairs (409).
  /// CLASSIFY responses failing the sanity checks are stored with qc_flag.
  SubmitAck submit(const json& payload) {
    if (!payload.is_object()) throw ServiceError(400, "response must be a JSON object");
    auto task_it = payload.find("task_id");
    auto worker_it = payload.find("worker");
    if (task_it == payload.end() || !task_it->is_string() || worker_it == payload.end() || !worker_it->is_string())
      throw ServiceError(400, "response needs string fields task_id and worker");
    std::lock_guard lock(mu_);
    auto it = tasks_.find(task_it->get<std::string>());
    if (it == tasks_.end()) throw ServiceError(404, "unknown task '" + task_it->get<std::string>() + "'");
    auto& st = it->second;
    const WorkerId worker = worker_it->get<std::string>();
    if (st.submitted.count(worker)) throw ServiceError(409, "duplicate submission for (" + st.task_id + ", " + worker + ")");
    auto lease = st.leases.find(worker);
    if (lease == st.leases.end()) throw ServiceError(404, "no lease for (" + st.task_id + ", " + worker + ")");
    if (lease->second < clock_()) throw ServiceError(404, "lease expired for (" + st.task_id + ", " + worker + ")");

    json record;
    bool flagged = false;
    try {
      if (st.stage == Stage::kContains) {
        auto r = records::contains_response_from_json(payload);
        const auto& g = grids_[st.index];
        const std::set<ImageId> shown(g.shown.begin(), g.shown.end());
        for (const auto& im : r.selected)
          if (!shown.count(im)) throw ServiceError(400, "selected image '" + im + "' was not shown");
        record = records::to_json(r);
      } else {
        auto r = records::classify_response_from_json(payload);
        const auto& t = classify_[st.index];
        if (!r.image.empty() && r.image != t.image) throw ServiceError(400, "image does not match task");
        r.image = t.image;
        record = records::to_json(r);
        if (classify_response_flag(t, r)) {
          flagged = true;
          record["qc_flag"] = true;
        }
      }
    } catch (const ServiceError&) {
      throw;
    } catch (const Error& e) {
      throw ServiceError(400, e.what());
    }
    record["stage"] = to_string(st.stage);
    st.leases.erase(lease);
    append(record, st, flagged);
    return {flagged, log_.size()};
  }

  /// Runs CLASSIFY QC and aggregation over the current log.
  std::size_t aggregate() {
    std::lock_guard lock(mu_);
    std::vector<ClassifyResponse> responses;
    for (const auto& rec : log_)
      if (rec.at("stage") == "classify") responses.push_back(records::classify_response_from_json(rec));
    auto qc = apply_classify_qc(classify_, responses, cfg_.pipeline.classify_flag_share);
    annotations_ = aggregate_classify(classify_, qc.retained, autos_);
    if (metrics_hook_) metrics_ = metrics_hook_(*annotations_);
    return annotations_->size();
  }

  std::optional<json> annotation(const ImageId& image) const {
    std::lock_guard lock(mu_);
    if (!annotations_) return std::nullopt;
    for (const auto& a : *annotations_)
      if (a.image == image) return records::to_json(a);
    return std::nullopt;
  }

  json progress() const {
    std::lock_guard lock(mu_);
    json out = json::object();
    const auto now = clock_();
    for (Stage s : {Stage::kContains, Stage::kClassify}) {
      std::size_t total = 0, closed = 0, responses = 0, leased = 0;
      for (const auto& [_, st] : tasks_) {
        if (st.stage != s) continue;
        ++total;
        closed += st.clean >= cfg_.target;
        responses += st.submitted.size();
        leased += static_cast<std::size_t>(active_leases(st, now));
      }
      out[to_string(s)] = json{{"tasks", total}, {"closed", closed}, {"responses", responses}, {"active_leases", leased}};
    }
    out["target"] = cfg_.target;
    out["aggregated"] = annotations_.has_value();
    return out;
  }

  /// Snapshot of one export kind: responses, annotations, metrics or qc.
  ExportResult export_kind(const std::string& kind) const {
    std::lock_guard lock(mu_);
    std::string content;
    if (kind == "responses") {
      content = to_jsonl(log_);
    } else if (kind == "annotations") {
      if (!annotations_) throw ServiceError(409, "not yet aggregated");
      content = to_jsonl(records::to_records(*annotations_));
    } else if (kind == "metrics") {
      if (!metrics_) throw ServiceError(409, "metrics not yet computed");
      content = metrics_->dump(2) + "\n";
    } else if (kind == "qc") {
      std::vector<GridResponse> contains;
      std::vector<ClassifyResponse> classify;
      for (const auto& rec : log_) {
        if (rec.at("stage") == "contains")
          contains.push_back(records::contains_response_from_json(rec));
        else
          classify.push_back(records::classify_response_from_json(rec));
      }
      const auto& p = cfg_.pipeline;
      json j{{"contains", records::to_json(apply_contains_qc(grids_, contains, ContainsQcThresholds::from(p)).report)},
             {"classify", records::to_json(apply_classify_qc(classify_, classify, p.classify_flag_share).report)}};
      content = j.dump(2) + "\n";
    } else {
      throw ServiceError(404, "unknown export kind '" + kind + "'");
    }
    return {content, sha256_hex(content)};
  }

  std::size_t log_size() const {
    std::lock_guard lock(mu_);
    return log_.size();
  }

 private:
  struct TaskState {
    TaskId task_id;
    Stage stage = Stage::kContains;
    std::size_t index = 0;
    std::map<WorkerId, std::chrono::steady_clock::time_point> leases;  // outstanding
    std::set<WorkerId> seen_by;                                        // ever leased or submitted
    std::set<WorkerId> submitted;
    int clean = 0;  // submissions without qc_flag
  };

  void add_task(Stage s, const TaskId& id, std::size_t index) {
    TaskState st;
    st.task_id = id;
    st.stage = s;
    st.index = index;
    if (!tasks_.emplace(id, std::move(st)).second) fail("duplicate task id '", id, "'");
  }

  static int active_leases(const TaskState& st, std::chrono::steady_clock::time_point now) {
    int n = 0;
    for (const auto& [_, expiry] : st.leases) n += expiry >= now;
    return n;
  }

  static int assignments(const TaskState& st, std::chrono::steady_clock::time_point now) {
    return st.clean + active_leases(st, now);
  }

  json payload(const TaskState& st) const {
    json task;
    if (st.stage == Stage::kContains) {
      const auto& g = grids_[st.index];
      task = json{{"task_id", g.task_id}, {"query_label", g.query_label}, {"shown", g.shown}};
      if (table_ && table_->valid(g.query_label)) task["query"] = describe(g.query_label);
    } else {
      const auto& t = classify_[st.index];
      task = json{{"task_id", t.task_id}, {"image", t.image}, {"candidates", t.candidates}};
      if (table_) {
        json desc = json::array();
        for (ClassId c : t.candidates)
          if (table_->valid(c)) desc.push_back(describe(c));
        task["labels"] = desc;
      }
    }
    return json{{"stage", to_string(st.stage)}, {"task", task}};
  }

  json describe(ClassId c) const {
    const auto& info = (*table_)[c];
    return json{{"label", c}, {"wnid", info.wnid}, {"names", info.names}, {"wiki_url", info.wiki_url}};
  }

  void append(const json& record, TaskState& st, bool flagged) {
    st.submitted.insert(record.at("worker").get<std::string>());
    st.seen_by.insert(record.at("worker").get<std::string>());
    if (!flagged) ++st.clean;
    log_.push_back(record);
    annotations_.reset();
    metrics_.reset();
    if (cfg_.log_path) {
      std::ofstream out(*cfg_.log_path, std::ios::app | std::ios::binary);
      if (!out) fail("cannot append to ", cfg_.log_path->string());
      out << record.dump() << '\n';
    }
  }

  void replay(const std::filesystem::path& path) {
    for (const auto& rec : read_jsonl(path)) {
      auto it = tasks_.find(rec.at("task_id").get<std::string>());
      if (it == tasks_.end()) fail("response log references unknown task '", rec.at("task_id").get<std::string>(), "'");
      auto& st = it->second;
      const auto worker = rec.at("worker").get<std::string>();
      st.submitted.insert(worker);
      st.seen_by.insert(worker);
      if (!rec.value("qc_flag", false)) ++st.clean;
      log_.push_back(rec);
    }
  }

  mutable std::mutex mu_;
  std::vector<GridTask> grids_;
  std::vector<ClassifyTask> classify_;
  ServiceConfig cfg_;
  Clock clock_;
  const ClassTable* table_ = nullptr;
  std::map<TaskId, TaskState> tasks_;
  std::vector<json> log_;
  std::vector<ImageAnnotation> autos_;
  std::optional<std::vector<ImageAnnotation>> annotations_;
  std::function<json(const std::vector<ImageAnnotation>&)> metrics_hook_;
  std::optional<json> metrics_;
};

}  // namespace crowdlabel
