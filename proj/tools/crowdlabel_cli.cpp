// crowdlabel: command-line driver for every pipeline stage.
//
// All artifacts live under one data directory (--data-dir, or ANNO_DATA_DIR,
// or the working directory). Every subcommand writes its outputs plus a
// manifest under manifests/ recording the resolved config, its hash, and the
// hashes of every input and output file.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crowdlabel/crowdlabel.hpp"
#include "crowdlabel/http_service.hpp"
#include "crowdlabel/service.hpp"

namespace fs = std::filesystem;
using namespace crowdlabel;

namespace {

// ---------------------------------------------------------------------------
// Artifact names

namespace file {
const char* const kClasses = "classes.tsv";
const char* const kSuperclasses = "superclasses.tsv";
const char* const kHierarchy = "hierarchy.tsv";
const char* const kDataset = "dataset.jsonl";
const char* const kPredictions = "predictions.jsonl";
const char* const kPredictionsDir = "predictions";
const char* const kWorld = "world.jsonl";
const char* const kPotential = "potential_labels.jsonl";
const char* const kGrids = "grids.jsonl";
const char* const kContainsResponses = "responses_contains.jsonl";
const char* const kContainsRetained = "contains_retained.jsonl";
const char* const kContainsQc = "contains_qc.json";
const char* const kSf = "sf.jsonl";
const char* const kFig6 = "fig6.csv";
const char* const kUnverified = "unverified.jsonl";
const char* const kCandidates = "candidates.jsonl";
const char* const kEligibility = "eligibility.jsonl";
const char* const kClassifyTasks = "classify_tasks.jsonl";
const char* const kAutoAnnotations = "auto_annotations.jsonl";
const char* const kClassifyResponses = "responses_classify.jsonl";
const char* const kClassifyRetained = "classify_retained.jsonl";
const char* const kClassifyQc = "classify_qc.json";
const char* const kAnnotations = "annotations.jsonl";
const char* const kMetrics = "metrics_report.json";
const char* const kRecovery = "recovery.json";
const char* const kServiceLog = "service_log.jsonl";
}  // namespace file

// ---------------------------------------------------------------------------
// Run context

class Context {
 public:
  Context(fs::path root, PipelineConfig cfg, std::string command)
      : root_(std::move(root)), cfg_(std::move(cfg)), command_(std::move(command)) {}

  const PipelineConfig& cfg() const { return cfg_; }
  fs::path path(const std::string& rel) const { return root_ / rel; }
  bool has(const std::string& rel) const { return fs::exists(path(rel)); }

  /// Registers an input that an earlier stage (or the user) must have produced.
  fs::path need(const std::string& rel, const std::string& producer) {
    const auto p = path(rel);
    if (!fs::exists(p))
      fail("missing ", rel, " in ", root_.string(), ": run `crowdlabel ", producer, "` first");
    inputs_[rel] = sha256_file(p);
    return p;
  }

  void write(const std::string& rel, const std::string& text) {
    write_text(path(rel), text);
    outputs_[rel] = sha256_hex(text);
  }
  void write_records(const std::string& rel, const std::vector<json>& recs) { write(rel, to_jsonl(recs)); }
  void write_json(const std::string& rel, const json& j) { write(rel, j.dump(2) + "\n"); }

  json& params() { return params_; }

  void finish() {
    const json config = cfg_;
    json m{{"command", command_},
           {"config", config},
           {"config_sha256", sha256_hex(config.dump())},
           {"seed", cfg_.seed},
           {"inputs", inputs_},
           {"outputs", outputs_}};
    if (!params_.is_null()) m["parameters"] = params_;
    std::string name = command_;
    for (char& c : name)
      if (c == ' ') c = '_';
    write_text(path("manifests/" + name + ".json"), m.dump(2) + "\n");
  }

  // --- common inputs --------------------------------------------------------

  ClassTable table(const std::string& producer = "simulate world") {
    const auto classes = need(file::kClasses, producer);
    std::optional<fs::path> reg;
    if (has(file::kSuperclasses)) reg = need(file::kSuperclasses, producer);
    return load_class_table(classes, reg);
  }

  Hierarchy hierarchy(const ClassTable& table) {
    auto h = load_hierarchy(need(file::kHierarchy, "simulate world"));
    h.validate(table);
    return h;
  }

  DatasetIndex index(const ClassTable& table) { return load_dataset(need(file::kDataset, "simulate world"), table); }

  std::vector<PredictionSet> predictions(const ClassTable& table) {
    std::vector<fs::path> paths;
    if (has(file::kPredictions)) paths.push_back(need(file::kPredictions, "simulate world"));
    if (fs::is_directory(path(file::kPredictionsDir))) {
      std::vector<std::string> rels;
      for (const auto& e : fs::directory_iterator(path(file::kPredictionsDir)))
        if (e.path().extension() == ".jsonl") rels.push_back(std::string(file::kPredictionsDir) + "/" + e.path().filename().string());
      std::sort(rels.begin(), rels.end());
      for (const auto& r : rels) paths.push_back(need(r, "simulate world"));
    }
    if (paths.empty())
      fail("missing ", file::kPredictions, " or ", file::kPredictionsDir, "/*.jsonl in ", root_.string(),
           ": run `crowdlabel simulate world` or supply model predictions");
    return load_predictions(paths, table);
  }

  std::vector<json> records(const std::string& rel, const std::string& producer) {
    return read_jsonl(need(rel, producer));
  }

 private:
  fs::path root_;
  PipelineConfig cfg_;
  std::string command_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
  json params_;
};

// ---------------------------------------------------------------------------
// Shared loaders

PotentialLabelSet load_pool(Context& ctx) {
  PotentialLabelSet pool;
  for (const auto& r : ctx.records(file::kPotential, "ingest")) {
    const auto image = field<std::string>(r, "image", file::kPotential);
    auto labels = field<std::vector<int>>(r, "labels", file::kPotential);
    pool.pools[image] = std::set<ClassId>(labels.begin(), labels.end());
    if (r.value("flagged", false)) pool.flagged.insert(image);
  }
  return pool;
}

std::vector<GridTask> load_grids(Context& ctx) {
  return records::from_records(ctx.records(file::kGrids, "grids build"),
                               [](const json& j, const std::string& c) { return records::grid_from_json(j, c); },
                               file::kGrids);
}

/// Response records, skipping those of the other stage in a combined service log.
std::vector<json> stage_records(Context& ctx, const std::string& rel, const std::string& producer, const char* stage) {
  std::vector<json> out;
  for (auto& r : ctx.records(rel, producer))
    if (!r.contains("stage") || r.at("stage") == stage) out.push_back(std::move(r));
  return out;
}

std::vector<GridResponse> load_contains_responses(Context& ctx, const std::string& rel, const std::string& producer) {
  return records::from_records(stage_records(ctx, rel, producer, "contains"),
                               [](const json& j, const std::string& c) { return records::contains_response_from_json(j, c); },
                               rel);
}

std::vector<ClassifyResponse> load_classify_responses(Context& ctx, const std::string& rel, const std::string& producer) {
  return records::from_records(stage_records(ctx, rel, producer, "classify"),
                               [](const json& j, const std::string& c) { return records::classify_response_from_json(j, c); },
                               rel);
}

std::vector<ClassifyTask> load_classify_tasks(Context& ctx) {
  return records::from_records(ctx.records(file::kClassifyTasks, "classify build"),
                               [](const json& j, const std::string& c) { return records::classify_task_from_json(j, c); },
                               file::kClassifyTasks);
}

std::vector<ImageAnnotation> load_annotations(Context& ctx, const std::string& rel, const std::string& producer) {
  return records::from_records(ctx.records(rel, producer),
                               [](const json& j, const std::string& c) { return records::annotation_from_json(j, c); },
                               rel);
}

SelectionFrequencyTable load_sf(Context& ctx) { return records::sf_from_records(ctx.records(file::kSf, "sf compute")); }

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Stages

void cmd_ingest(Context& ctx) {
  auto table = ctx.table();
  auto h = ctx.hierarchy(table);
  auto index = ctx.index(table);
  auto preds = ctx.predictions(table);
  auto pool = build_potential_labels(preds, index);
  std::vector<json> recs;
  for (const auto& [image, labels] : pool.pools) {
    json r{{"image", image}, {"labels", labels}};
    if (pool.flagged.count(image)) r["flagged"] = true;
    recs.push_back(std::move(r));
  }
  ctx.write_records(file::kPotential, recs);
  json hist = json::object();
  for (const auto& [size, n] : pool.size_histogram()) hist[std::to_string(size)] = n;
  json gaps = json::object();
  for (const auto& [model, missing] : prediction_coverage_gaps(preds, index)) gaps[model] = missing.size();
  ctx.write_json("ingest_report.json", json{{"classes", table.size()},
                                            {"superclasses", table.superclasses().size()},
                                            {"hierarchy_nodes", h.node_count()},
                                            {"study_images", index.study_images().size()},
                                            {"models", preds.size()},
                                            {"pool_size_histogram", hist},
                                            {"mean_pool_size", pool.mean_size()},
                                            {"flagged_images", pool.flagged.size()},
                                            {"images_missing_per_model", gaps}});
}

void cmd_grids_build(Context& ctx) {
  auto table = ctx.table();
  auto index = ctx.index(table);
  auto pool = load_pool(ctx);
  auto grids = build_grids(pool, index, ctx.cfg());
  ctx.write_records(file::kGrids, records::to_records(grids));
}

void cmd_qc_contains(Context& ctx, const std::string& responses_rel) {
  auto grids = load_grids(ctx);
  auto responses = load_contains_responses(ctx, responses_rel, "simulate contains");
  auto qc = apply_contains_qc(grids, responses, ContainsQcThresholds::from(ctx.cfg()));
  ctx.write_records(file::kContainsRetained, records::to_records(qc.retained));
  ctx.write_json(file::kContainsQc, records::to_json(qc.report));
}

void cmd_sf_compute(Context& ctx) {
  auto table = ctx.table();
  auto index = ctx.index(table);
  auto grids = load_grids(ctx);
  auto retained = load_contains_responses(ctx, file::kContainsRetained, "qc contains");
  auto sft = compute_selection_frequencies(grids, retained);
  ctx.write_records(file::kSf, records::sf_to_records(sft));

  auto rel = relative_sf_report(sft, index);
  std::string csv = "threshold,other_labels,images\n";
  auto hists = rel.histograms();
  for (std::size_t t = 0; t < rel.thresholds.size(); ++t)
    for (const auto& [count, images] : hists[t]) csv += num(rel.thresholds[t]) + "," + std::to_string(count) + "," + std::to_string(images) + "\n";
  ctx.write(file::kFig6, csv);

  std::vector<json> unverified;
  for (const auto& u : detect_unverified(sft, index)) {
    json j{{"image", u.image}, {"dataset_label", u.dataset_label}, {"sel", nullptr}, {"sel_sf", u.selected_sf}};
    if (u.selected) j["sel"] = *u.selected;
    unverified.push_back(std::move(j));
  }
  ctx.write_records(file::kUnverified, unverified);
  json shares = json::object();
  for (std::size_t t = 0; t < rel.thresholds.size(); ++t) shares[num(rel.thresholds[t])] = rel.share_with_any(t);
  ctx.write_json("sf_report.json", json{{"pairs", [&] {
                                           std::size_t n = 0;
                                           for (const auto& [_, l] : sft.entries()) n += l.size();
                                           return n;
                                         }()},
                                        {"images", sft.image_count()},
                                        {"flagged_grids", sft.flagged_grids},
                                        {"share_with_other_label", shares},
                                        {"excluded_sf_zero", rel.excluded_sf_zero.size()},
                                        {"excluded_unmeasured", rel.excluded_unmeasured.size()},
                                        {"unverified", unverified.size()}});
}

void cmd_candidates_select(Context& ctx) {
  auto table = ctx.table();
  auto h = ctx.hierarchy(table);
  auto index = ctx.index(table);
  auto pool = load_pool(ctx);
  auto sft = load_sf(ctx);
  auto stage = run_candidate_stage(sft, pool, index, h, table, ctx.cfg());
  std::vector<json> cands, elig;
  std::map<std::string, std::size_t> reasons;
  for (const auto& [image, cs] : stage.candidates) cands.push_back(records::to_json(cs));
  for (const auto& [image, d] : stage.eligibility) {
    elig.push_back(records::to_json(d));
    ++reasons[to_string(d.reason)];
  }
  ctx.write_records(file::kCandidates, cands);
  ctx.write_records(file::kEligibility, elig);
  std::map<std::size_t, std::size_t> sizes;
  for (const auto& [_, cs] : stage.candidates) ++sizes[cs.labels.size()];
  json size_hist = json::object();
  for (const auto& [s, n] : sizes) size_hist[std::to_string(s)] = n;
  ctx.write_json("candidates_report.json", json{{"images", stage.candidates.size()},
                                                {"eligibility_reasons", reasons},
                                                {"candidate_count_histogram", size_hist}});
}

void cmd_classify_build(Context& ctx) {
  std::map<ImageId, CandidateSet> cands;
  for (const auto& r : ctx.records(file::kCandidates, "candidates select")) {
    auto c = records::candidates_from_json(r, file::kCandidates);
    cands.emplace(c.image, std::move(c));
  }
  std::map<ImageId, EligibilityDecision> elig;
  for (const auto& r : ctx.records(file::kEligibility, "candidates select")) {
    auto d = records::eligibility_from_json(r, file::kEligibility);
    elig.emplace(d.image, d);
  }
  auto build = build_classify_tasks(cands, elig, ctx.cfg().seed, ctx.cfg().annotators);
  ctx.write_records(file::kClassifyTasks, records::to_records(build.tasks));
  ctx.write_records(file::kAutoAnnotations, records::to_records(build.auto_annotations));
}

void cmd_classify_qc(Context& ctx, const std::string& responses_rel) {
  auto tasks = load_classify_tasks(ctx);
  auto responses = load_classify_responses(ctx, responses_rel, "simulate classify");
  auto qc = apply_classify_qc(tasks, responses, ctx.cfg().classify_flag_share);
  ctx.write_records(file::kClassifyRetained, records::to_records(qc.retained));
  ctx.write_json(file::kClassifyQc, records::to_json(qc.report));
}

void cmd_classify_aggregate(Context& ctx) {
  auto tasks = load_classify_tasks(ctx);
  auto retained = load_classify_responses(ctx, file::kClassifyRetained, "classify qc");
  auto autos = load_annotations(ctx, file::kAutoAnnotations, "classify build");
  auto anns = aggregate_classify(tasks, retained, autos);
  ctx.write_records(file::kAnnotations, records::to_records(anns));
}

void cmd_metrics_report(Context& ctx) {
  auto table = ctx.table();
  auto index = ctx.index(table);
  auto preds = ctx.predictions(table);
  auto anns = index_annotations(load_annotations(ctx, file::kAnnotations, "classify aggregate"));
  std::optional<SelectionFrequencyTable> sft;
  if (ctx.has(file::kSf)) sft = load_sf(ctx);
  auto report = metrics_report(preds, index, anns, sft ? &*sft : nullptr, ctx.cfg());
  ctx.write_json(file::kMetrics, report);
  for (const auto& [name, csv] : metrics_csvs(report)) ctx.write(name, csv);
  if (sft) {
    auto pairs = ambiguous_pairs(*sft, index, 50);
    annotate_pairwise(pairs, preds, index);
    ctx.write("fig8b.csv", ambiguous_pairs_csv(pairs));
  }
}

// --- analyses -----------------------------------------------------------------

void write_confusions(Context& ctx, const std::string& source, const Decisions& d, const ClassTable& table,
                      std::string& fig12a) {
  for (auto level : {Level::kClass, Level::kSuperclass})
    for (auto scope : {Scope::kFull, Scope::kIntra, Scope::kInter}) {
      auto m = confusion_matrix(d, table, level, scope, source);
      std::vector<json> coords = m.coordinates();
      ctx.write_records(std::string("analysis/confusion/") + source + "_" + to_string(level) + "_" + to_string(scope) + ".jsonl",
                        coords);
      if (level == Level::kSuperclass && scope == Scope::kFull)
        for (const auto& c : coords)
          fig12a += csv_escape(source) + "," + std::to_string(c["row"].get<int>()) + "," + std::to_string(c["col"].get<int>()) +
                    "," + num(c["value"].get<double>()) + "\n";
    }
}

void cmd_analyze_confusion(Context& ctx, bool sf_argmax) {
  auto table = ctx.table();
  auto index = ctx.index(table);
  auto preds = ctx.predictions(table);
  auto anns = index_annotations(load_annotations(ctx, file::kAnnotations, "classify aggregate"));
  const auto subset = subset_annotated(anns);
  std::string fig12a = "source,row,col,value\n";
  for (const auto& p : preds) write_confusions(ctx, p.model_id, model_decisions(p, index, subset), table, fig12a);
  write_confusions(ctx, "human", human_main_decisions(anns, subset), table, fig12a);
  if (sf_argmax) write_confusions(ctx, "human_sf_argmax", human_sf_argmax_decisions(load_sf(ctx), index, subset), table, fig12a);
  ctx.write("fig12a.csv", fig12a);
}

void cmd_analyze_cooccurrence(Context& ctx, std::size_t top_n) {
  auto table = ctx.table();
  auto anns = index_annotations(load_annotations(ctx, file::kAnnotations, "classify aggregate"));
  auto cls = cooccurrence_matrix(anns, table, Level::kClass);
  auto sup = cooccurrence_matrix(anns, table, Level::kSuperclass);
  ctx.write_records("analysis/cooccurrence_class.jsonl", cls.coordinates());
  ctx.write_records("analysis/cooccurrence_superclass.jsonl", sup.coordinates());
  std::string fig3b = "label,label_name,other_label,other_name,share\n";
  for (const auto& p : top_cooccurring(cls, top_n))
    fig3b += std::to_string(p.label) + "," + csv_escape(table.display_name(p.label)) + "," + std::to_string(p.other) + "," +
             csv_escape(table.display_name(p.other)) + "," + num(p.share) + "\n";
  ctx.write("fig3b.csv", fig3b);
  std::string fig12b = "row,row_name,col,col_name,value\n";
  for (std::size_t r = 0; r < sup.size; ++r)
    for (std::size_t c = 0; c < sup.size; ++c)
      fig12b += std::to_string(r) + "," + csv_escape(table.superclasses()[static_cast<int>(r)].name) + "," + std::to_string(c) +
                "," + csv_escape(table.superclasses()[static_cast<int>(c)].name) + "," + num(sup.value(r, c)) + "\n";
  ctx.write("fig12b.csv", fig12b);
}

void cmd_analyze_ambiguous(Context& ctx, std::size_t top_n) {
  auto table = ctx.table();
  auto index = ctx.index(table);
  auto preds = ctx.predictions(table);
  auto pairs = ambiguous_pairs(load_sf(ctx), index, top_n);
  annotate_pairwise(pairs, preds, index);
  std::string fig8a = "class_a,name_a,class_b,name_b,score\n";
  for (const auto& p : pairs)
    fig8a += std::to_string(p.first) + "," + csv_escape(table.display_name(p.first)) + "," + std::to_string(p.second) + "," +
             csv_escape(table.display_name(p.second)) + "," + num(p.score) + "\n";
  ctx.write("fig8a.csv", fig8a);
  ctx.write("fig8b.csv", ambiguous_pairs_csv(pairs));
}

void cmd_analyze_sfacc(Context& ctx) {
  auto table = ctx.table();
  auto index = ctx.index(table);
  auto preds = ctx.predictions(table);
  auto sft = load_sf(ctx);
  json summary = json::object();
  std::string csv = "model,label,name,images,mean_sf,accuracy\n";
  for (const auto& p : preds) {
    auto rows = sf_accuracy_table(sft, p, index, table);
    for (const auto& r : rows)
      csv += csv_escape(p.model_id) + "," + std::to_string(r.label) + "," + csv_escape(table.display_name(r.label)) + "," +
             std::to_string(r.images) + "," + (r.mean_sf ? num(*r.mean_sf) : "") + "," + (r.accuracy ? num(*r.accuracy) : "") + "\n";
    auto rho = sf_accuracy_correlation(rows);
    summary[p.model_id] = json{{"spearman", rho ? json(*rho) : json(nullptr)}};
  }
  ctx.write("fig19.csv", csv);
  ctx.write_json("analysis/sf_accuracy_correlation.json", summary);
}

void cmd_analyze_mislabeled(Context& ctx) {
  auto table = ctx.table();
  auto index = ctx.index(table);
  auto sft = load_sf(ctx);
  auto responses = load_classify_responses(ctx, file::kClassifyResponses, "simulate classify");
  auto tasks = load_classify_tasks(ctx);
  std::map<TaskId, ImageId> image_of;
  for (const auto& t : tasks) image_of[t.task_id] = t.image;
  for (auto& r : responses)
    if (r.image.empty() && image_of.count(r.task_id)) r.image = image_of[r.task_id];
  auto rep = mislabeled_report(sft, index, responses);
  json sf_zero = json::array(), never = json::array();
  for (const auto& u : rep.sf_zero)
    sf_zero.push_back(json{{"image", u.image}, {"dataset_label", u.dataset_label}, {"sel", u.selected ? json(*u.selected) : json(nullptr)}});
  for (const auto& n : rep.never_selected)
    never.push_back(json{{"image", n.image}, {"dataset_label", n.dataset_label}, {"sel", n.selected ? json(*n.selected) : json(nullptr)}});
  ctx.write_json("analysis/mislabeled.json", json{{"sf_zero", sf_zero},
                                                  {"never_selected_in_classify", never},
                                                  {"counts", {{"sf_zero", sf_zero.size()}, {"never_selected_in_classify", never.size()}}}});
}

// --- simulation -----------------------------------------------------------------

void cmd_simulate_world(Context& ctx, const SyntheticWorldConfig& wc) {
  auto sw = make_synthetic_world(wc);
  std::string classes, supers, edges;
  for (ClassId c = 0; c < static_cast<ClassId>(sw.table.size()); ++c) {
    const auto& info = sw.table[c];
    classes += std::to_string(c) + "\t" + info.wnid + "\t" + join(info.names) + "\t" + info.wiki_url + "\t" +
               sw.table.superclasses()[info.superclass].name + "\n";
  }
  for (const auto& e : sw.table.superclasses().entries()) supers += e.name + "\n";
  for (const auto& [p, c] : sw.edges) edges += p + "\t" + c + "\n";
  ctx.write(file::kClasses, classes);
  ctx.write(file::kSuperclasses, supers);
  ctx.write(file::kHierarchy, edges);
  std::vector<json> dataset;
  for (const auto& [im, label] : sw.index.labels()) {
    json r{{"image", im}, {"dataset_label", label}};
    if (!sw.index.is_study(im)) r["study"] = false;
    dataset.push_back(std::move(r));
  }
  ctx.write_records(file::kDataset, dataset);
  std::vector<json> preds;
  for (const auto& p : sw.predictions)
    for (const auto& [im, ranked] : p.ranked) preds.push_back(json{{"model", p.model_id}, {"image", im}, {"topk", ranked}});
  ctx.write_records(file::kPredictions, preds);
  ctx.write_records(file::kWorld, world_to_records(sw.world));
}

void cmd_simulate_contains(Context& ctx, const AnnotatorModel& model) {
  auto table = ctx.table();
  auto h = ctx.hierarchy(table);
  auto world = world_from_records(ctx.records(file::kWorld, "simulate world"));
  auto grids = load_grids(ctx);
  ClassDistance dist(h, table);
  auto rs = simulate_contains(world, grids, model, ctx.cfg().annotators, dist);
  ctx.write_records(file::kContainsResponses, records::to_records(rs));
}

void cmd_simulate_classify(Context& ctx, const AnnotatorModel& model) {
  auto table = ctx.table();
  auto h = ctx.hierarchy(table);
  auto world = world_from_records(ctx.records(file::kWorld, "simulate world"));
  auto tasks = load_classify_tasks(ctx);
  ClassDistance dist(h, table);
  auto rs = simulate_classify(world, tasks, model, dist);
  ctx.write_records(file::kClassifyResponses, records::to_records(rs));
}

void cmd_simulate_compare(Context& ctx) {
  auto world = world_from_records(ctx.records(file::kWorld, "simulate world"));
  auto anns = load_annotations(ctx, file::kAnnotations, "classify aggregate");
  auto pool = load_pool(ctx);
  auto s = compare_to_world(anns, world, &pool);
  ctx.write_json(file::kRecovery, json{{"compared", s.compared},
                                       {"excluded", s.excluded},
                                       {"objects_exact", s.objects_exact},
                                       {"counts_exact", s.counts_exact},
                                       {"main_exact", s.main_exact},
                                       {"main_accuracy", s.main_accuracy()},
                                       {"mismatches", s.mismatches}});
}

// --- import -------------------------------------------------------------------------

void cmd_import(Context& ctx, const fs::path& released) {
  auto table = ctx.table();
  auto index = ctx.index(table);
  if (!fs::exists(released)) fail("released annotation file not found: ", released.string());
  auto result = import_released_annotations(read_released_file(released), index, table);
  ctx.params() = json{{"released_file_sha256", sha256_file(released)}};
  ctx.write_records("imported_annotations.jsonl", records::to_records(result.annotations));
  json rep{{"images", result.annotations.size()},
           {"unmatched_images", result.unmatched_images.size()},
           {"multi_object", result.multi_object()},
           {"multi_object_main_disagreements", result.multi_object_main_disagreements()}};
  if (result.has_sf_zero_field) rep["sf_zero"] = result.sf_zero_flags;
  if (result.has_never_selected_field) rep["never_selected"] = result.never_selected_flags;
  ctx.write_json("import_report.json", rep);
  std::cout << rep.dump(2) << "\n";
}

// --- service --------------------------------------------------------------------------

void cmd_serve(Context& ctx, const std::string& host, int port, int target, int lease_seconds) {
  auto grids = load_grids(ctx);
  std::vector<ClassifyTask> tasks;
  if (ctx.has(file::kClassifyTasks)) tasks = load_classify_tasks(ctx);
  ServiceConfig sc;
  sc.target = target;
  sc.lease_timeout = std::chrono::seconds(lease_seconds);
  sc.log_path = ctx.path(file::kServiceLog);
  sc.pipeline = ctx.cfg();
  TaskStore store(std::move(grids), std::move(tasks), sc);
  std::optional<ClassTable> table;
  if (ctx.has(file::kClasses)) {
    table = ctx.table();
    store.set_class_table(&*table);
  }
  if (ctx.has(file::kAutoAnnotations)) store.set_auto_annotations(load_annotations(ctx, file::kAutoAnnotations, "classify build"));
  std::optional<DatasetIndex> index;
  std::vector<PredictionSet> preds;
  if (table && ctx.has(file::kDataset) && ctx.has(file::kPredictions)) {
    index = ctx.index(*table);
    preds = ctx.predictions(*table);
    const PipelineConfig cfg = ctx.cfg();
    store.set_metrics_hook([&index, &preds, cfg](const std::vector<ImageAnnotation>& anns) {
      return metrics_report(preds, *index, index_annotations(anns), nullptr, cfg);
    });
  }
  httplib::Server server;
  mount_service(server, store);
  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) fail("cannot bind ", host, ":", port);
  std::cout << "listening on http://" << host << ":" << bound << std::endl;
  server.listen_after_bind();
}

// ---------------------------------------------------------------------------
// Command-line surface

struct ConfigFlags {
  std::string config_file;
  std::optional<int> grid_size, min_controls, annotators, wn_far, min_cands, trunc, seen_floor, bootstrap_replicates,
      sf_histogram_bins;
  std::optional<double> worker_control_rate, worker_bad_share, task_control_rate, sf_high, in_sf_floor, dominance,
      classify_flag_share;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "JSON file with pipeline settings; flags override it");
    app.add_option("--grid-size", grid_size, "images per CONTAINS grid (48)");
    app.add_option("--min-controls", min_controls, "minimum control images per grid (5)");
    app.add_option("--annotators", annotators, "annotators per task (9)");
    app.add_option("--worker-control-rate", worker_control_rate, "per-task control rate below which a task is bad (0.2)");
    app.add_option("--worker-bad-share", worker_bad_share, "share of bad tasks that drops a worker (0.5)");
    app.add_option("--task-control-rate", task_control_rate, "control rate below which a response is dropped (0.4)");
    app.add_option("--sf-high", sf_high, "selection frequency admitting a candidate (0.5)");
    app.add_option("--wn-far", wn_far, "hierarchy distance beyond which a label is far (5)");
    app.add_option("--min-cands", min_cands, "fill candidates up to this many (5)");
    app.add_option("--trunc", trunc, "truncate candidates to this many (6)");
    app.add_option("--in-sf-floor", in_sf_floor, "dataset-label sf at or below which truncation always applies (0.125)");
    app.add_option("--seen-floor", seen_floor, "annotators that must have seen a label for dominance (6)");
    app.add_option("--dominance", dominance, "dominance factor of the dataset label (2.0)");
    app.add_option("--classify-flag-share", classify_flag_share, "flagged share above which a worker is dropped (1/3)");
    app.add_option("--bootstrap-replicates", bootstrap_replicates, "bootstrap replicates for intervals (1000)");
    app.add_option("--sf-histogram-bins", sf_histogram_bins, "bins of the incorrect-prediction sf histogram (10)");
    app.add_option("--seed", seed, "root random seed (0)");
  }

  PipelineConfig resolve() const {
    PipelineConfig c;
    if (!config_file.empty()) c = json::parse(read_text(config_file)).get<PipelineConfig>();
    auto set = [](auto& dst, const auto& src) {
      if (src) dst = *src;
    };
    set(c.grid_size, grid_size);
    set(c.min_controls, min_controls);
    set(c.annotators, annotators);
    set(c.worker_control_rate, worker_control_rate);
    set(c.worker_bad_share, worker_bad_share);
    set(c.task_control_rate, task_control_rate);
    set(c.sf_high, sf_high);
    set(c.wn_far, wn_far);
    set(c.min_cands, min_cands);
    set(c.trunc, trunc);
    set(c.in_sf_floor, in_sf_floor);
    set(c.seen_floor, seen_floor);
    set(c.dominance, dominance);
    set(c.classify_flag_share, classify_flag_share);
    set(c.bootstrap_replicates, bootstrap_replicates);
    set(c.sf_histogram_bins, sf_histogram_bins);
    set(c.seed, seed);
    c.validate();
    return c;
  }
};

void attach_model(CLI::App& app, AnnotatorModel& m) {
  app.add_option("--rho", m.rho, "probability of affirming a true label")->capture_default_str();
  app.add_option("--eta", m.eta, "base probability of affirming a false label")->capture_default_str();
  app.add_option("--kappa", m.kappa, "distance decay of false affirmations")->capture_default_str();
  app.add_option("--spammers", m.spammers, "workers that answer at random")->capture_default_str();
  app.add_option("--spam-rate", m.spam_rate, "affirmation rate of random workers")->capture_default_str();
  app.add_option("--worker-pool", m.worker_pool, "simulated workers (0: three per annotator slot)")->capture_default_str();
}

void attach_world(CLI::App& app, SyntheticWorldConfig& w) {
  app.add_option("--images", w.images, "study images")->capture_default_str();
  app.add_option("--classes-per-superclass", w.classes_per_superclass)->capture_default_str();
  app.add_option("--max-objects", w.max_objects, "objects per image at most")->capture_default_str();
  app.add_option("--multi-object-rate", w.multi_object_rate)->capture_default_str();
  app.add_option("--main-is-dataset-label-rate", w.main_is_dataset_label_rate)->capture_default_str();
  app.add_option("--controls-per-class", w.controls_per_class)->capture_default_str();
  app.add_option("--models", w.models, "synthetic prediction sets")->capture_default_str();
  app.add_option("--pool-miss-rate", w.pool_miss_rate, "chance a model omits a true object")->capture_default_str();
}

json model_json(const AnnotatorModel& m) {
  return json{{"rho", m.rho}, {"eta", m.eta}, {"kappa", m.kappa}, {"spammers", m.spammers},
              {"spam_rate", m.spam_rate}, {"worker_pool", m.worker_pool}, {"seed", m.seed}};
}

json world_json(const SyntheticWorldConfig& w) {
  return json{{"images", w.images},
              {"classes_per_superclass", w.classes_per_superclass},
              {"max_objects", w.max_objects},
              {"multi_object_rate", w.multi_object_rate},
              {"main_is_dataset_label_rate", w.main_is_dataset_label_rate},
              {"controls_per_class", w.controls_per_class},
              {"models", w.models},
              {"pool_miss_rate", w.pool_miss_rate},
              {"seed", w.seed}};
}

fs::path default_root() {
  if (const char* env = std::getenv("ANNO_DATA_DIR"); env && *env) return env;
  return fs::current_path();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crowdlabel: crowd-annotation pipeline and evaluation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string data_dir;
  app.add_option("--data-dir", data_dir, "artifact directory (default: $ANNO_DATA_DIR or the working directory)");
  ConfigFlags flags;
  flags.attach(app);

  // leaf subcommand -> (manifest name, action)
  std::vector<std::tuple<CLI::App*, std::string, std::function<void(Context&)>>> leaves;
  auto leaf = [&](CLI::App* parent, const std::string& name, const std::string& desc, std::string full,
                  std::function<void(Context&)> fn) {
    auto* sub = parent->add_subcommand(name, desc);
    leaves.emplace_back(sub, std::move(full), std::move(fn));
    return sub;
  };

  leaf(&app, "ingest", "validate inputs and build potential-label pools", "ingest", cmd_ingest);

  auto* grids = app.add_subcommand("grids", "CONTAINS grids")->require_subcommand(1);
  leaf(grids, "build", "chunk candidate images into grids with controls", "grids build", cmd_grids_build);

  auto* qc = app.add_subcommand("qc", "quality control")->require_subcommand(1);
  std::string contains_responses = file::kContainsResponses;
  leaf(qc, "contains", "filter CONTAINS responses by control selection", "qc contains",
       [&](Context& c) { cmd_qc_contains(c, contains_responses); })
      ->add_option("--responses", contains_responses, "response file relative to the data dir")->capture_default_str();

  auto* sf = app.add_subcommand("sf", "selection frequencies")->require_subcommand(1);
  leaf(sf, "compute", "selection frequencies, relative sf report and unverified images", "sf compute", cmd_sf_compute);

  auto* cands = app.add_subcommand("candidates", "candidate labels")->require_subcommand(1);
  leaf(cands, "select", "candidate selection and CLASSIFY eligibility", "candidates select", cmd_candidates_select);

  auto* classify = app.add_subcommand("classify", "CLASSIFY stage")->require_subcommand(1);
  leaf(classify, "build", "CLASSIFY tasks and auto-annotations", "classify build", cmd_classify_build);
  std::string classify_responses = file::kClassifyResponses;
  leaf(classify, "qc", "drop flagged CLASSIFY responses and workers", "classify qc",
       [&](Context& c) { cmd_classify_qc(c, classify_responses); })
      ->add_option("--responses", classify_responses, "response file relative to the data dir")->capture_default_str();
  leaf(classify, "aggregate", "vote aggregation and object partitions", "classify aggregate", cmd_classify_aggregate);

  auto* metrics = app.add_subcommand("metrics", "evaluation metrics")->require_subcommand(1);
  leaf(metrics, "report", "per-model metrics report and figure CSVs", "metrics report", cmd_metrics_report);

  auto* analyze = app.add_subcommand("analyze", "dataset analyses")->require_subcommand(1);
  bool sf_argmax = false;
  leaf(analyze, "confusion", "model and human confusion matrices", "analyze confusion",
       [&](Context& c) { cmd_analyze_confusion(c, sf_argmax); })
      ->add_flag("--sf-argmax", sf_argmax, "also emit the selection-frequency arg-max human matrices");
  std::size_t top_n = 50;
  leaf(analyze, "cooccurrence", "class and superclass co-occurrence", "analyze cooccurrence",
       [&](Context& c) { cmd_analyze_cooccurrence(c, top_n); })
      ->add_option("--top", top_n, "pairs to list")->capture_default_str();
  std::size_t ambiguous_n = 50;
  leaf(analyze, "ambiguous", "ambiguous class pairs with pairwise accuracy", "analyze ambiguous",
       [&](Context& c) { cmd_analyze_ambiguous(c, ambiguous_n); })
      ->add_option("--top", ambiguous_n, "pairs to list")->capture_default_str();
  leaf(analyze, "sfacc", "per-class selection frequency vs accuracy", "analyze sfacc", cmd_analyze_sfacc);
  leaf(analyze, "mislabeled", "possibly mislabeled images", "analyze mislabeled", cmd_analyze_mislabeled);

  auto* simulate = app.add_subcommand("simulate", "synthetic world and simulated annotators (default: run)");
  simulate->require_subcommand(0, 1);
  AnnotatorModel model;
  SyntheticWorldConfig world;
  attach_model(*simulate, model);
  attach_world(*simulate, world);
  leaf(simulate, "world", "write a synthetic world and its inputs", "simulate world",
       [&](Context& c) { cmd_simulate_world(c, world); });
  leaf(simulate, "contains", "simulate CONTAINS responses for grids.jsonl", "simulate contains",
       [&](Context& c) { cmd_simulate_contains(c, model); });
  leaf(simulate, "classify", "simulate CLASSIFY responses for classify_tasks.jsonl", "simulate classify",
       [&](Context& c) { cmd_simulate_classify(c, model); });
  auto* sim_run = leaf(simulate, "run", "world plus every stage, then compare to ground truth", "simulate run", nullptr);

  auto* imp = app.add_subcommand("import", "import external annotations")->require_subcommand(1);
  std::string released;
  leaf(imp, "released-annotations", "convert a released multi-label annotation file", "import released-annotations",
       [&](Context& c) { cmd_import(c, released); })
      ->add_option("--file", released, "released annotation file (JSON or JSONL)")->required();

  std::string host = "127.0.0.1";
  int port = 8080, target = 9, lease = 600;
  auto* serve = leaf(&app, "serve", "serve tasks over HTTP", "serve", [&](Context& c) { cmd_serve(c, host, port, target, lease); });
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port, "0 picks a free port")->capture_default_str();
  serve->add_option("--target", target, "responses wanted per task")->capture_default_str();
  serve->add_option("--lease-timeout", lease, "seconds before an unanswered lease expires")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const fs::path root = data_dir.empty() ? default_root() : fs::path(data_dir);
    fs::create_directories(root);
    const PipelineConfig cfg = flags.resolve();
    model.seed = derive_seed(cfg.seed, "annotators");
    world.seed = derive_seed(cfg.seed, "world");

    auto run = [&](const std::string& name, const std::function<void(Context&)>& fn, json params = nullptr) {
      Context ctx(root, cfg, name);
      if (!params.is_null()) ctx.params() = std::move(params);
      fn(ctx);
      ctx.finish();
    };

    const bool simulate_default = simulate->parsed() && simulate->get_subcommands().empty();
    if (sim_run->parsed() || simulate_default) {
      run("simulate world", [&](Context& c) { cmd_simulate_world(c, world); }, json{{"world", world_json(world)}});
      run("ingest", cmd_ingest);
      run("grids build", cmd_grids_build);
      run("simulate contains", [&](Context& c) { cmd_simulate_contains(c, model); }, json{{"model", model_json(model)}});
      run("qc contains", [&](Context& c) { cmd_qc_contains(c, file::kContainsResponses); });
      run("sf compute", cmd_sf_compute);
      run("candidates select", cmd_candidates_select);
      run("classify build", cmd_classify_build);
      run("simulate classify", [&](Context& c) { cmd_simulate_classify(c, model); }, json{{"model", model_json(model)}});
      run("classify qc", [&](Context& c) { cmd_classify_qc(c, file::kClassifyResponses); });
      run("classify aggregate", cmd_classify_aggregate);
      run("metrics report", cmd_metrics_report);
      run("simulate compare", cmd_simulate_compare);
      std::cout << read_text(root / file::kRecovery);
      return 0;
    }

    for (auto& [sub, name, fn] : leaves) {
      if (!sub->parsed() || !fn) continue;
      json params;
      if (name == "simulate world") params = json{{"world", world_json(world)}};
      if (name == "simulate contains" || name == "simulate classify") params = json{{"model", model_json(model)}};
      run(name, fn, params);
      return 0;
    }
    std::cerr << app.help() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "crowdlabel: error: " << e.what() << "\n";
    return 1;
  }
}
