#pragma once

#include <cstdint>

#include "crowdlabel/core.hpp"
#include "crowdlabel/jsonl.hpp"

namespace crowdlabel {

/// Every numeric threshold used by the pipeline. Defaults reproduce the
/// original study's protocol.
struct PipelineConfig {
  // CONTAINS grids
  int grid_size = 48;
  int min_controls = 5;
  int annotators = 9;
  // CONTAINS quality control
  double worker_control_rate = 0.20;
  double worker_bad_share = 0.50;
  double task_control_rate = 0.40;
  // candidate selection
  double sf_high = 0.5;
  int wn_far = 5;
  int min_cands = 5;
  int trunc = 6;
  double in_sf_floor = 0.125;
  // CLASSIFY eligibility and quality control
  int seen_floor = 6;
  double dominance = 2.0;
  double classify_flag_share = 1.0 / 3.0;
  // evaluation
  int bootstrap_replicates = 1000;
  int sf_histogram_bins = 10;
  std::uint64_t seed = 0;

  void validate() const {
    auto rate = [](const char* name, double v) {
      if (!(v >= 0.0 && v <= 1.0)) fail("config: ", name, " must be in [0,1], got ", v);
    };
    auto positive = [](const char* name, long long v) {
      if (v <= 0) fail("config: ", name, " must be positive, got ", v);
    };
    positive("grid_size", grid_size);
    positive("min_controls", min_controls);
    positive("annotators", annotators);
    positive("wn_far", wn_far);
    positive("min_cands", min_cands);
    positive("trunc", trunc);
    positive("seen_floor", seen_floor);
    positive("bootstrap_replicates", bootstrap_replicates);
    positive("sf_histogram_bins", sf_histogram_bins);
    rate("worker_control_rate", worker_control_rate);
    rate("worker_bad_share", worker_bad_share);
    rate("task_control_rate", task_control_rate);
    rate("sf_high", sf_high);
    rate("in_sf_floor", in_sf_floor);
    rate("classify_flag_share", classify_flag_share);
    if (!(dominance > 0.0)) fail("config: dominance must be positive, got ", dominance);
    if (min_controls >= grid_size) fail("config: min_controls must be smaller than grid_size");
    if (seen_floor > annotators) fail("config: seen_floor cannot exceed annotators");
  }
};

inline void to_json(json& j, const PipelineConfig& c) {
  j = json{{"grid_size", c.grid_size},
           {"min_controls", c.min_controls},
           {"annotators", c.annotators},
           {"worker_control_rate", c.worker_control_rate},
           {"worker_bad_share", c.worker_bad_share},
           {"task_control_rate", c.task_control_rate},
           {"sf_high", c.sf_high},
           {"wn_far", c.wn_far},
           {"min_cands", c.min_cands},
           {"trunc", c.trunc},
           {"in_sf_floor", c.in_sf_floor},
           {"seen_floor", c.seen_floor},
           {"dominance", c.dominance},
           {"classify_flag_share", c.classify_flag_share},
           {"bootstrap_replicates", c.bootstrap_replicates},
           {"sf_histogram_bins", c.sf_histogram_bins},
           {"seed", c.seed}};
}

inline void from_json(const json& j, PipelineConfig& c) {
  PipelineConfig d;
  c.grid_size = j.value("grid_size", d.grid_size);
  c.min_controls = j.value("min_controls", d.min_controls);
  c.annotators = j.value("annotators", d.annotators);
  c.worker_control_rate = j.value("worker_control_rate", d.worker_control_rate);
  c.worker_bad_share = j.value("worker_bad_share", d.worker_bad_share);
  c.task_control_rate = j.value("task_control_rate", d.task_control_rate);
  c.sf_high = j.value("sf_high", d.sf_high);
  c.wn_far = j.value("wn_far", d.wn_far);
  c.min_cands = j.value("min_cands", d.min_cands);
  c.trunc = j.value("trunc", d.trunc);
  c.in_sf_floor = j.value("in_sf_floor", d.in_sf_floor);
  c.seen_floor = j.value("seen_floor", d.seen_floor);
  c.dominance = j.value("dominance", d.dominance);
  c.classify_flag_share = j.value("classify_flag_share", d.classify_flag_share);
  c.bootstrap_replicates = j.value("bootstrap_replicates", d.bootstrap_replicates);
  c.sf_histogram_bins = j.value("sf_histogram_bins", d.sf_histogram_bins);
  c.seed = j.value("seed", d.seed);
}

}  // namespace crowdlabel
