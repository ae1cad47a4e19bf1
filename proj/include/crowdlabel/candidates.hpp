#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crowdlabel/config.hpp"
#include "crowdlabel/contains.hpp"
#include "crowdlabel/core.hpp"
#include "crowdlabel/ingest.hpp"

namespace crowdlabel {

/// Which selection rule admitted a candidate label.
enum class CandidateRule : int {
  kDatasetLabel = 1,
  kHighSelection = 2,
  kSemanticallyFar = 3,
  kFillToMinimum = 4,
};

/// Candidate labels for one image, in order of admission.
struct CandidateSet {
  ImageId image;
  ClassId dataset_label = 0;
  std::vector<ClassId> labels;
  std::map<ClassId, CandidateRule> provenance;

  bool contains(ClassId c) const { return provenance.count(c) > 0; }
};

struct CandidateConfig {
  double sf_high = 0.5;
  int wn_far = 5;
  int min_cands = 5;
  int trunc = 6;
  double in_sf_floor = 0.125;

  static CandidateConfig from(const PipelineConfig& c) { return {c.sf_high, c.wn_far, c.min_cands, c.trunc, c.in_sf_floor}; }
};

/// Applies the five candidate rules in order:
///  1. the dataset label, unconditionally;
///  2. pool labels with sf >= sf_high;
///  3. pool labels with sf > 0 more than wn_far hierarchy edges from the
///     dataset label (disconnected counts as far);
///  4. while fewer than min_cands, remaining sf > 0 labels by descending sf;
///  5. when more than trunc, each excess label (past the trunc - 1 best
///     others) is dropped if its sf is below the dataset label's, and all
///     excess labels are dropped if the dataset label's sf <= in_sf_floor.
/// sf ties order by smaller class id. Absent sf counts as 0.
inline CandidateSet select_candidates(const ImageId& image, ClassId dataset_label, const SelectionFrequencyTable& sft,
                                      const std::set<ClassId>& pool, ClassDistance& distance,
                                      const CandidateConfig& cfg = {}) {
  CandidateSet out;
  out.image = image;
  out.dataset_label = dataset_label;
  auto admit = [&](ClassId c, CandidateRule rule) {
    if (out.provenance.emplace(c, rule).second) out.labels.push_back(c);
  };
  auto sf = [&](ClassId c) { return sft.sf_or_zero(image, c); };
  auto by_sf_desc = [&](ClassId a, ClassId b) {
    const double sa = sf(a), sb = sf(b);
    if (std::abs(sa - sb) > kEps) return sa > sb;
    return a < b;
  };

  admit(dataset_label, CandidateRule::kDatasetLabel);
  for (ClassId c : pool)
    if (approx_ge(sf(c), cfg.sf_high)) admit(c, CandidateRule::kHighSelection);
  for (ClassId c : pool)
    if (sf(c) > 0.0 && distance.farther_than(c, dataset_label, cfg.wn_far)) admit(c, CandidateRule::kSemanticallyFar);

  if (out.labels.size() < static_cast<std::size_t>(cfg.min_cands)) {
    std::vector<ClassId> rest;
    for (ClassId c : pool)
      if (!out.contains(c) && sf(c) > 0.0) rest.push_back(c);
    std::sort(rest.begin(), rest.end(), by_sf_desc);
    for (ClassId c : rest) {
      if (out.labels.size() >= static_cast<std::size_t>(cfg.min_cands)) break;
      admit(c, CandidateRule::kFillToMinimum);
    }
  }

  if (out.labels.size() > static_cast<std::size_t>(cfg.trunc)) {
    std::vector<ClassId> others;
    for (ClassId c : out.labels)
      if (c != dataset_label) others.push_back(c);
    std::sort(others.begin(), others.end(), by_sf_desc);
    const double in_sf = sf(dataset_label);
    const bool drop_all = in_sf <= cfg.in_sf_floor + kEps;
    std::set<ClassId> removed;
    for (std::size_t i = static_cast<std::size_t>(cfg.trunc) - 1; i < others.size(); ++i)
      if (drop_all || strictly_less(sf(others[i]), in_sf)) removed.insert(others[i]);
    if (!removed.empty()) {
      std::erase_if(out.labels, [&](ClassId c) { return removed.count(c) > 0; });
      for (ClassId c : removed) out.provenance.erase(c);
    }
  }
  return out;
}

enum class EligibilityReason { kSfZero, kDominantDatasetLabel, kNoExtraCandidate, kEligible };

inline const char* to_string(EligibilityReason r) {
  switch (r) {
    case EligibilityReason::kSfZero: return "sf_zero";
    case EligibilityReason::kDominantDatasetLabel: return "dominant_dataset_label";
    case EligibilityReason::kNoExtraCandidate: return "no_extra_candidate";
    case EligibilityReason::kEligible: return "eligible";
  }
  return "?";
}

inline EligibilityReason eligibility_reason_from_string(const std::string& s) {
  if (s == "sf_zero") return EligibilityReason::kSfZero;
  if (s == "dominant_dataset_label") return EligibilityReason::kDominantDatasetLabel;
  if (s == "no_extra_candidate") return EligibilityReason::kNoExtraCandidate;
  if (s == "eligible") return EligibilityReason::kEligible;
  fail("unknown eligibility reason '", s, "'");
}

struct EligibilityDecision {
  ImageId image;
  bool eligible = false;
  EligibilityReason reason = EligibilityReason::kEligible;
};

struct EligibilityConfig {
  int seen_floor = 6;
  double dominance = 2.0;

  static EligibilityConfig from(const PipelineConfig& c) { return {c.seen_floor, c.dominance}; }
};

/// Decides whether an image goes to the CLASSIFY task. Checked in order:
/// the dataset label was never affirmed (or never measured); among labels
/// seen by at least seen_floor annotators the dataset label's sf is more
/// than `dominance` times every other label's; no candidate beyond the
/// dataset label.
inline EligibilityDecision classify_eligible(const CandidateSet& candidates, const SelectionFrequencyTable& sft,
                                             const EligibilityConfig& cfg = {}) {
  const auto& image = candidates.image;
  const ClassId in = candidates.dataset_label;
  auto decide = [&](EligibilityReason r) { return EligibilityDecision{image, r == EligibilityReason::kEligible, r}; };

  const SfEntry* in_entry = sft.find(image, in);
  if (!in_entry || in_entry->affirmed == 0) return decide(EligibilityReason::kSfZero);

  if (in_entry->shown_to >= cfg.seen_floor) {
    bool dominant = true;
    for (const auto& [label, e] : sft.labels_of(image)) {
      if (label == in || e.shown_to < cfg.seen_floor) continue;
      if (!strictly_greater(in_entry->sf(), cfg.dominance * e.sf())) {
        dominant = false;
        break;
      }
    }
    if (dominant) return decide(EligibilityReason::kDominantDatasetLabel);
  }

  if (candidates.labels.size() < 2) return decide(EligibilityReason::kNoExtraCandidate);
  return decide(EligibilityReason::kEligible);
}

}  // namespace crowdlabel
