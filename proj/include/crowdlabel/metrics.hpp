#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crowdlabel/classify.hpp"
#include "crowdlabel/contains.hpp"
#include "crowdlabel/core.hpp"
#include "crowdlabel/ingest.hpp"
#include "crowdlabel/rng.hpp"

namespace crowdlabel {

using AnnotationMap = std::map<ImageId, ImageAnnotation>;
using Subset = std::vector<ImageId>;

inline AnnotationMap index_annotations(const std::vector<ImageAnnotation>& v) {
  AnnotationMap m;
  for (const auto& a : v)
    if (!m.emplace(a.image, a).second) fail("duplicate annotation for image '", a.image, "'");
  return m;
}

// --- subsets ----------------------------------------------------------------

inline Subset subset_annotated(const AnnotationMap& anns) {
  Subset s;
  for (const auto& [im, _] : anns) s.push_back(im);
  return s;
}

inline Subset subset_multi_object(const AnnotationMap& anns) {
  Subset s;
  for (const auto& [im, a] : anns)
    if (a.multi_object) s.push_back(im);
  return s;
}

/// Images whose annotated main label differs from the dataset label.
inline Subset subset_main_disagreement(const AnnotationMap& anns) {
  Subset s;
  for (const auto& [im, a] : anns)
    if (a.main_label != a.dataset_label) s.push_back(im);
  return s;
}

namespace detail {

inline const std::vector<ClassId>& ranked_or_fail(const PredictionSet& p, const ImageId& im) {
  const auto* r = p.find(im);
  if (!r || r->empty()) fail("model '", p.model_id, "' has no prediction for image '", im, "'");
  return *r;
}

inline const ImageAnnotation& annotation_or_fail(const AnnotationMap& anns, const Subset& subset, const ImageId& im) {
  auto it = anns.find(im);
  if (it != anns.end()) return it->second;
  std::vector<ImageId> missing;
  for (const auto& s : subset)
    if (!anns.count(s)) missing.push_back(s);
  fail("images without annotation: ", join(missing));
}

template <typename Hit>
std::optional<double> mean_of(const Subset& subset, Hit&& hit) {
  if (subset.empty()) return std::nullopt;
  double total = 0.0;
  for (const auto& im : subset) total += hit(im);
  return total / static_cast<double>(subset.size());
}

}  // namespace detail

// --- per-image scores -------------------------------------------------------
// Each metric below is the subset mean of one of these.

inline double top_k_hit(const PredictionSet& p, const DatasetIndex& index, const ImageId& im, int k) {
  const auto& r = detail::ranked_or_fail(p, im);
  const auto end = r.begin() + std::min<std::ptrdiff_t>(k, static_cast<std::ptrdiff_t>(r.size()));
  return std::find(r.begin(), end, index.label(im)) != end ? 1.0 : 0.0;
}

inline double multi_label_hit(const PredictionSet& p, const ImageAnnotation& a) {
  return a.has_object(p.top1(a.image)) ? 1.0 : 0.0;
}

inline double main_label_hit(const PredictionSet& p, const ImageAnnotation& a) {
  return p.top1(a.image) == a.main_label ? 1.0 : 0.0;
}

inline double random_object_score(const ImageAnnotation& a) {
  if (!a.has_object(a.dataset_label) || a.num_objects <= 0) return 0.0;
  return 1.0 / static_cast<double>(a.num_objects);
}

// --- metrics ----------------------------------------------------------------

/// Fraction of subset images whose dataset label is among the top k
/// predictions. nullopt for an empty subset.
inline std::optional<double> top_k_accuracy(const PredictionSet& p, const DatasetIndex& index, const Subset& subset, int k) {
  return detail::mean_of(subset, [&](const ImageId& im) { return top_k_hit(p, index, im, k); });
}

/// A prediction is correct when it names any annotated object.
inline std::optional<double> multi_label_accuracy(const PredictionSet& p, const AnnotationMap& anns, const Subset& subset) {
  return detail::mean_of(subset, [&](const ImageId& im) {
    return multi_label_hit(p, detail::annotation_or_fail(anns, subset, im));
  });
}

/// A prediction is correct when it equals the annotated main label.
inline std::optional<double> main_label_accuracy(const PredictionSet& p, const AnnotationMap& anns, const Subset& subset) {
  return detail::mean_of(subset, [&](const ImageId& im) {
    return main_label_hit(p, detail::annotation_or_fail(anns, subset, im));
  });
}

struct PredictionSfResult {
  std::optional<double> mean;
  std::size_t absent = 0;  // predictions never shown to annotators, counted as sf 0
};

inline PredictionSfResult prediction_sf(const PredictionSet& p, const SelectionFrequencyTable& sft, const Subset& subset) {
  PredictionSfResult out;
  out.mean = detail::mean_of(subset, [&](const ImageId& im) {
    auto sf = sft.sf(im, p.top1(im));
    if (!sf) ++out.absent;
    return sf.value_or(0.0);
  });
  return out;
}

/// Expected accuracy (against the dataset label) of picking one annotated
/// object uniformly at random.
inline std::optional<double> random_object_baseline(const AnnotationMap& anns, const Subset& subset) {
  return detail::mean_of(subset, [&](const ImageId& im) {
    return random_object_score(detail::annotation_or_fail(anns, subset, im));
  });
}

struct SfHistogram {
  std::vector<int> counts;  // bins of equal width over [0, 1]
  std::size_t absent = 0;

  int total() const {
    int t = 0;
    for (int c : counts) t += c;
    return t;
  }
};

inline std::size_t sf_bin(double sf, int bins) {
  auto b = static_cast<long>(std::floor(sf * bins + 1e-9));
  return static_cast<std::size_t>(std::clamp<long>(b, 0, bins - 1));
}

/// Distribution of sf(image, top-1) over subset images whose top-1
/// prediction differs from the dataset label.
inline SfHistogram incorrect_prediction_sf_histogram(const PredictionSet& p, const SelectionFrequencyTable& sft,
                                                     const DatasetIndex& index, const Subset& subset, int bins = 10) {
  if (bins <= 0) fail("histogram needs a positive bin count");
  SfHistogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (const auto& im : subset) {
    const ClassId pred = p.top1(im);
    if (pred == index.label(im)) continue;
    auto sf = sft.sf(im, pred);
    if (!sf) ++h.absent;
    ++h.counts[sf_bin(sf.value_or(0.0), bins)];
  }
  return h;
}

struct PairwiseResult {
  std::optional<double> accuracy;
  double coverage = 0.0;   // share of pair images where either class is ranked
  std::size_t images = 0;  // images labeled i or j
};

/// Accuracy of the model restricted to classes {i, j}: the prediction is
/// whichever of the two is ranked first. Images ranking neither are left out
/// of the accuracy and lower the coverage. Pass an empty subset to use every
/// study image.
inline PairwiseResult pairwise_accuracy(const PredictionSet& p, const DatasetIndex& index, ClassId i, ClassId j,
                                        const Subset& subset = {}) {
  if (i == j) fail("pairwise_accuracy: classes must differ");
  PairwiseResult out;
  std::size_t covered = 0, correct = 0;
  auto visit = [&](const ImageId& im) {
    const ClassId label = index.label(im);
    if (label != i && label != j) return;
    ++out.images;
    const auto& r = detail::ranked_or_fail(p, im);
    auto it = std::find_if(r.begin(), r.end(), [&](ClassId c) { return c == i || c == j; });
    if (it == r.end()) return;
    ++covered;
    correct += *it == label;
  };
  if (subset.empty()) {
    for (const auto& im : index.study_images()) visit(im);
  } else {
    for (const auto& im : subset) visit(im);
  }
  if (out.images == 0) fail("pairwise_accuracy: no image labeled ", i, " or ", j);
  out.coverage = static_cast<double>(covered) / static_cast<double>(out.images);
  if (covered) out.accuracy = static_cast<double>(correct) / static_cast<double>(covered);
  return out;
}

struct CorrectionResult {
  std::optional<double> fraction;
  std::size_t corrections = 0;
  std::size_t distinct_object = 0;
};

/// Among top-5 corrections (dataset label in the top 5 but not top 1), the
/// share where the top-1 prediction labels a different annotated object than
/// the dataset label does.
inline CorrectionResult top5_correction_fraction(const PredictionSet& p, const DatasetIndex& index,
                                                 const AnnotationMap& anns, const Subset& subset) {
  CorrectionResult out;
  for (const auto& im : subset) {
    const ClassId in = index.label(im);
    const auto& r = detail::ranked_or_fail(p, im);
    if (r.front() == in) continue;
    const auto end = r.begin() + std::min<std::ptrdiff_t>(5, static_cast<std::ptrdiff_t>(r.size()));
    if (std::find(r.begin(), end, in) == end) continue;
    ++out.corrections;
    const auto& a = detail::annotation_or_fail(anns, subset, im);
    if (a.has_object(in) && a.has_object(r.front())) ++out.distinct_object;
  }
  if (out.corrections)
    out.fraction = static_cast<double>(out.distinct_object) / static_cast<double>(out.corrections);
  return out;
}

// --- bootstrap --------------------------------------------------------------

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Percentile bootstrap interval of the mean of per-image scores, resampling
/// images with replacement.
inline std::optional<Interval> bootstrap_mean_ci(const std::vector<double>& scores, int replicates, std::uint64_t seed,
                                                 double level = 0.95) {
  if (scores.empty() || replicates <= 0) return std::nullopt;
  Rng rng(seed);
  std::vector<double> means(static_cast<std::size_t>(replicates));
  for (auto& m : means) {
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) total += scores[static_cast<std::size_t>(rng.below(scores.size()))];
    m = total / static_cast<double>(scores.size());
  }
  std::sort(means.begin(), means.end());
  auto at = [&](double q) {
    auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(means.size() - 1) + 0.5));
    return means[std::min(idx, means.size() - 1)];
  };
  const double tail = (1.0 - level) / 2.0;
  return Interval{at(tail), at(1.0 - tail)};
}

}  // namespace crowdlabel
