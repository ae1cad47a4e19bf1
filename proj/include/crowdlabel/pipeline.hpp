#pragma once

// Stage composition shared by the command-line tool, the service and the
// acceptance suite.

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crowdlabel/analysis.hpp"
#include "crowdlabel/candidates.hpp"
#include "crowdlabel/classify.hpp"
#include "crowdlabel/config.hpp"
#include "crowdlabel/contains.hpp"
#include "crowdlabel/ingest.hpp"
#include "crowdlabel/metrics.hpp"
#include "crowdlabel/simulate.hpp"

namespace crowdlabel {

struct CandidateStage {
  std::map<ImageId, CandidateSet> candidates;
  std::map<ImageId, EligibilityDecision> eligibility;
};

inline CandidateStage run_candidate_stage(const SelectionFrequencyTable& sft, const PotentialLabelSet& pool,
                                          const DatasetIndex& index, const Hierarchy& hierarchy,
                                          const ClassTable& table, const PipelineConfig& config) {
  ClassDistance distance(hierarchy, table);
  const auto ccfg = CandidateConfig::from(config);
  const auto ecfg = EligibilityConfig::from(config);
  CandidateStage out;
  for (const auto& [image, labels] : pool.pools) {
    auto cs = select_candidates(image, index.label(image), sft, labels, distance, ccfg);
    out.eligibility.emplace(image, classify_eligible(cs, sft, ecfg));
    out.candidates.emplace(image, std::move(cs));
  }
  return out;
}

/// Every intermediate artifact of a simulated end-to-end run.
struct SimulatedRun {
  PotentialLabelSet pool;
  std::vector<GridTask> grids;
  std::vector<GridResponse> contains_responses;
  ContainsQcResult contains_qc;
  SelectionFrequencyTable sft;
  CandidateStage candidates;
  ClassifyBuild classify;
  std::vector<ClassifyResponse> classify_responses;
  ClassifyQcResult classify_qc;
  std::vector<ImageAnnotation> annotations;
};

inline SimulatedRun run_simulated_pipeline(const SyntheticWorld& sw, const AnnotatorModel& model,
                                           const PipelineConfig& config) {
  config.validate();
  SimulatedRun run;
  ClassDistance distance(sw.hierarchy, sw.table);
  run.pool = build_potential_labels(sw.predictions, sw.index);
  run.grids = build_grids(run.pool, sw.index, config);
  run.contains_responses = simulate_contains(sw.world, run.grids, model, config.annotators, distance);
  run.contains_qc = apply_contains_qc(run.grids, run.contains_responses, ContainsQcThresholds::from(config));
  run.sft = compute_selection_frequencies(run.grids, run.contains_qc.retained);
  run.candidates = run_candidate_stage(run.sft, run.pool, sw.index, sw.hierarchy, sw.table, config);
  run.classify = build_classify_tasks(run.candidates.candidates, run.candidates.eligibility, config.seed, config.annotators);
  run.classify_responses = simulate_classify(sw.world, run.classify.tasks, model, distance);
  run.classify_qc = apply_classify_qc(run.classify.tasks, run.classify_responses, config.classify_flag_share);
  run.annotations = aggregate_classify(run.classify.tasks, run.classify_qc.retained, run.classify.auto_annotations);
  return run;
}

// ---------------------------------------------------------------------------
// Metrics report

namespace detail {

inline json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline std::string csv_num(const json& v) {
  if (v.is_null()) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v.get<double>());
  return buf;
}

}  // namespace detail

/// Nested per-model report over the annotated images, with subsets all,
/// multi_object and main_disagreement.
inline json metrics_report(const std::vector<PredictionSet>& preds, const DatasetIndex& index, const AnnotationMap& anns,
                           const SelectionFrequencyTable* sft, const PipelineConfig& config) {
  const std::map<std::string, Subset> subsets{{"all", subset_annotated(anns)},
                                              {"main_disagreement", subset_main_disagreement(anns)},
                                              {"multi_object", subset_multi_object(anns)}};
  json models = json::array();
  for (const auto& p : preds) {
    json m{{"model", p.model_id},
           {"declared_top1", detail::opt(p.declared_top1)},
           {"declared_top5", detail::opt(p.declared_top5)}};
    json per_subset = json::object();
    for (const auto& [name, subset] : subsets) {
      json s{{"n", subset.size()},
             {"top1", detail::opt(top_k_accuracy(p, index, subset, 1))},
             {"top5", detail::opt(top_k_accuracy(p, index, subset, 5))},
             {"multi_label", detail::opt(multi_label_accuracy(p, anns, subset))},
             {"main_label", detail::opt(main_label_accuracy(p, anns, subset))},
             {"random_object_baseline", detail::opt(random_object_baseline(anns, subset))}};
      if (sft) {
        auto ps = prediction_sf(p, *sft, subset);
        s["prediction_sf"] = detail::opt(ps.mean);
        s["prediction_sf_absent"] = ps.absent;
      }
      auto ci = [&](const char* metric, auto score) {
        std::vector<double> v;
        for (const auto& im : subset) v.push_back(score(im));
        auto iv = bootstrap_mean_ci(v, config.bootstrap_replicates,
                                    derive_seed(config.seed, "bootstrap", p.model_id, name, std::string(metric)));
        s[std::string(metric) + "_ci"] = iv ? json{iv->lo, iv->hi} : json(nullptr);
      };
      ci("top1", [&](const ImageId& im) { return top_k_hit(p, index, im, 1); });
      ci("multi_label", [&](const ImageId& im) { return multi_label_hit(p, anns.at(im)); });
      ci("main_label", [&](const ImageId& im) { return main_label_hit(p, anns.at(im)); });
      per_subset[name] = s;
    }
    m["subsets"] = per_subset;
    if (sft) {
      auto h = incorrect_prediction_sf_histogram(p, *sft, index, subsets.at("all"), config.sf_histogram_bins);
      m["incorrect_prediction_sf_histogram"] = json{{"bins", config.sf_histogram_bins}, {"counts", h.counts}, {"absent", h.absent}};
    }
    auto corr = top5_correction_fraction(p, index, anns, subsets.at("multi_object"));
    m["top5_correction"] = json{{"fraction", detail::opt(corr.fraction)},
                                {"corrections", corr.corrections},
                                {"distinct_object", corr.distinct_object}};
    models.push_back(std::move(m));
  }
  return json{{"images", anns.size()}, {"models", models}};
}

/// Figure-oriented CSV tables derived from a metrics report. Keys are file names.
inline std::map<std::string, std::string> metrics_csvs(const json& report) {
  using detail::csv_num;
  std::string fig4a = "model,subset,n,top1,top1_lo,top1_hi,random_object_baseline\n";
  std::string fig4b = "model,subset,n,top1,multi_label,multi_label_lo,multi_label_hi\n";
  std::string fig7 = "model,subset,n,top1,main_label,main_label_lo,main_label_hi,prediction_sf\n";
  std::string fig9 = "model,bin_lo,bin_hi,count\n";
  auto ci = [](const json& s, const char* key, int k) {
    const auto& v = s.at(key);
    return v.is_null() ? std::string() : csv_num(v.at(static_cast<std::size_t>(k)));
  };
  for (const auto& m : report.at("models")) {
    const std::string model = m.at("model");
    for (const char* sub : {"all", "multi_object"}) {
      const auto& s = m.at("subsets").at(sub);
      const std::string head = model + "," + sub + "," + std::to_string(s.at("n").get<int>()) + ",";
      fig4a += head + csv_num(s.at("top1")) + "," + ci(s, "top1_ci", 0) + "," + ci(s, "top1_ci", 1) + "," +
               csv_num(s.at("random_object_baseline")) + "\n";
      fig4b += head + csv_num(s.at("top1")) + "," + csv_num(s.at("multi_label")) + "," + ci(s, "multi_label_ci", 0) +
               "," + ci(s, "multi_label_ci", 1) + "\n";
    }
    for (const char* sub : {"all", "main_disagreement"}) {
      const auto& s = m.at("subsets").at(sub);
      fig7 += model + "," + sub + "," + std::to_string(s.at("n").get<int>()) + "," + csv_num(s.at("top1")) + "," +
              csv_num(s.at("main_label")) + "," + ci(s, "main_label_ci", 0) + "," + ci(s, "main_label_ci", 1) + "," +
              csv_num(s.value("prediction_sf", json(nullptr))) + "\n";
    }
    if (m.contains("incorrect_prediction_sf_histogram")) {
      const auto& h = m.at("incorrect_prediction_sf_histogram");
      const int bins = h.at("bins");
      for (int b = 0; b < bins; ++b)
        fig9 += model + "," + csv_num(json(static_cast<double>(b) / bins)) + "," +
                csv_num(json(static_cast<double>(b + 1) / bins)) + "," +
                std::to_string(h.at("counts").at(static_cast<std::size_t>(b)).get<int>()) + "\n";
    }
  }
  return {{"fig4a.csv", fig4a}, {"fig4b.csv", fig4b}, {"fig7.csv", fig7}, {"fig9.csv", fig9}};
}

/// Ambiguous pairs with per-model pairwise accuracy, as CSV.
inline std::string ambiguous_pairs_csv(const std::vector<AmbiguousPair>& pairs) {
  using detail::csv_num;
  std::string out = "class_a,class_b,score,mean_a_to_b,mean_b_to_a,model,pairwise_accuracy,coverage,chance\n";
  for (const auto& p : pairs) {
    const std::string head = std::to_string(p.first) + "," + std::to_string(p.second) + "," + csv_num(json(p.score)) +
                             "," + csv_num(json(p.mean_first_to_second)) + "," + csv_num(json(p.mean_second_to_first)) + ",";
    if (p.pairwise.empty()) out += head + ",,,0.500000\n";
    for (const auto& [model, r] : p.pairwise)
      out += head + model + "," + csv_num(detail::opt(r.accuracy)) + "," + csv_num(json(r.coverage)) + ",0.500000\n";
  }
  return out;
}

}  // namespace crowdlabel
