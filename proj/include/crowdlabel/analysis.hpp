#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "crowdlabel/classify.hpp"
#include "crowdlabel/contains.hpp"
#include "crowdlabel/core.hpp"
#include "crowdlabel/ingest.hpp"
#include "crowdlabel/jsonl.hpp"
#include "crowdlabel/metrics.hpp"

namespace crowdlabel {

enum class Level { kClass, kSuperclass };
enum class Scope { kFull, kIntra, kInter };

inline const char* to_string(Level l) { return l == Level::kClass ? "class" : "superclass"; }
inline const char* to_string(Scope s) {
  switch (s) {
    case Scope::kFull: return "full";
    case Scope::kIntra: return "intra";
    case Scope::kInter: return "inter";
  }
  return "?";
}

/// (true label, predicted label) pairs.
using Decisions = std::vector<std::pair<ClassId, ClassId>>;

// ---------------------------------------------------------------------------
// Confusion matrices

/// Square matrix over class or superclass ids. Entries are normalized by the
/// full row total, so the intra and inter matrices of one source add up to
/// the full matrix.
struct ConfusionMatrix {
  Level level = Level::kClass;
  Scope scope = Scope::kFull;
  std::string source;
  std::size_t size = 0;
  std::vector<double> counts;      // size * size, row-major, only in-scope entries
  std::vector<double> row_totals;  // all decisions per row, regardless of scope

  double count(std::size_t r, std::size_t c) const { return counts[r * size + c]; }
  double value(std::size_t r, std::size_t c) const {
    return row_totals[r] > 0 ? counts[r * size + c] / row_totals[r] : 0.0;
  }
  double row_mass(std::size_t r) const {
    double m = 0.0;
    for (std::size_t c = 0; c < size; ++c) m += value(r, c);
    return m;
  }
  std::vector<std::size_t> empty_rows() const {
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < size; ++r)
      if (row_totals[r] == 0) out.push_back(r);
    return out;
  }

  /// Coordinate-format nonzero entries.
  std::vector<json> coordinates() const {
    std::vector<json> out;
    for (std::size_t r = 0; r < size; ++r)
      for (std::size_t c = 0; c < size; ++c)
        if (counts[r * size + c] != 0) out.push_back(json{{"row", r}, {"col", c}, {"value", value(r, c)}});
    return out;
  }
};

inline bool in_scope(Scope scope, bool same_group) {
  return scope == Scope::kFull || (scope == Scope::kIntra) == same_group;
}

/// entry(i, j) = P(predicted j | true i), at class or superclass level.
/// At class level "intra" keeps predictions inside the true class's
/// superclass; at superclass level it keeps the diagonal.
inline ConfusionMatrix confusion_matrix(const Decisions& decisions, const ClassTable& table, Level level,
                                        Scope scope = Scope::kFull, std::string source = "") {
  ConfusionMatrix m;
  m.level = level;
  m.scope = scope;
  m.source = std::move(source);
  m.size = level == Level::kClass ? table.size() : table.superclasses().size();
  m.counts.assign(m.size * m.size, 0.0);
  m.row_totals.assign(m.size, 0.0);
  for (const auto& [truth, pred] : decisions) {
    if (!table.valid(truth) || !table.valid(pred)) fail("confusion_matrix: invalid class id");
    const bool same = table.superclass_of(truth) == table.superclass_of(pred);
    const auto r = static_cast<std::size_t>(level == Level::kClass ? truth : table.superclass_of(truth));
    const auto c = static_cast<std::size_t>(level == Level::kClass ? pred : table.superclass_of(pred));
    m.row_totals[r] += 1;
    if (in_scope(scope, same)) m.counts[r * m.size + c] += 1;
  }
  return m;
}

/// Sums a class-level matrix into superclass blocks.
inline ConfusionMatrix aggregate_to_superclass(const ConfusionMatrix& cls, const ClassTable& table) {
  if (cls.level != Level::kClass) fail("aggregate_to_superclass: input must be class level");
  ConfusionMatrix m;
  m.level = Level::kSuperclass;
  m.scope = cls.scope;
  m.source = cls.source;
  m.size = table.superclasses().size();
  m.counts.assign(m.size * m.size, 0.0);
  m.row_totals.assign(m.size, 0.0);
  for (std::size_t r = 0; r < cls.size; ++r) {
    const auto sr = static_cast<std::size_t>(table.superclass_of(static_cast<ClassId>(r)));
    m.row_totals[sr] += cls.row_totals[r];
    for (std::size_t c = 0; c < cls.size; ++c) {
      const auto sc = static_cast<std::size_t>(table.superclass_of(static_cast<ClassId>(c)));
      m.counts[sr * m.size + sc] += cls.counts[r * cls.size + c];
    }
  }
  return m;
}

inline Decisions model_decisions(const PredictionSet& p, const DatasetIndex& index, const Subset& subset) {
  Decisions d;
  for (const auto& im : subset) d.emplace_back(index.label(im), p.top1(im));
  return d;
}

/// Human "prediction" = annotated main label.
inline Decisions human_main_decisions(const AnnotationMap& anns, const Subset& subset) {
  Decisions d;
  for (const auto& im : subset) {
    auto it = anns.find(im);
    if (it == anns.end()) fail("no annotation for image '", im, "'");
    d.emplace_back(it->second.dataset_label, it->second.main_label);
  }
  return d;
}

/// Human "prediction" = label with the highest selection frequency (ties to
/// the smaller id). Images without any measured label are skipped.
inline Decisions human_sf_argmax_decisions(const SelectionFrequencyTable& sft, const DatasetIndex& index,
                                           const Subset& subset) {
  Decisions d;
  for (const auto& im : subset) {
    std::optional<ClassId> best;
    double best_sf = -1.0;
    for (const auto& [label, e] : sft.labels_of(im))
      if (e.sf() > best_sf + kEps) best = label, best_sf = e.sf();
    if (best) d.emplace_back(index.label(im), *best);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Co-occurrence

/// entry(i, j) = share of annotated images with dataset label i (or
/// superclass i) that contain a distinct object labeled j (or of superclass
/// j) other than the dataset-label object.
struct CooccurrenceMatrix {
  Level level = Level::kClass;
  std::size_t size = 0;
  std::vector<double> hits;
  std::vector<double> row_images;

  double value(std::size_t r, std::size_t c) const { return row_images[r] > 0 ? hits[r * size + c] / row_images[r] : 0.0; }

  std::vector<json> coordinates() const {
    std::vector<json> out;
    for (std::size_t r = 0; r < size; ++r)
      for (std::size_t c = 0; c < size; ++c)
        if (hits[r * size + c] != 0) out.push_back(json{{"row", r}, {"col", c}, {"value", value(r, c)}});
    return out;
  }
};

inline CooccurrenceMatrix cooccurrence_matrix(const AnnotationMap& anns, const ClassTable& table, Level level) {
  CooccurrenceMatrix m;
  m.level = level;
  m.size = level == Level::kClass ? table.size() : table.superclasses().size();
  m.hits.assign(m.size * m.size, 0.0);
  m.row_images.assign(m.size, 0.0);
  auto axis = [&](ClassId c) {
    return static_cast<std::size_t>(level == Level::kClass ? c : table.superclass_of(c));
  };
  for (const auto& [_, a] : anns) {
    const auto r = axis(a.dataset_label);
    m.row_images[r] += 1;
    std::set<std::size_t> cols;
    for (ClassId l : a.object_labels())
      if (l != a.dataset_label) cols.insert(axis(l));
    for (auto c : cols) m.hits[r * m.size + c] += 1;
  }
  return m;
}

struct CooccurringPair {
  ClassId label = 0;
  ClassId other = 0;
  double share = 0.0;
};

/// Classes ranked by their strongest co-occurring other label.
inline std::vector<CooccurringPair> top_cooccurring(const CooccurrenceMatrix& m, std::size_t top_n) {
  if (m.level != Level::kClass) fail("top_cooccurring: needs a class-level matrix");
  std::vector<CooccurringPair> out;
  for (std::size_t r = 0; r < m.size; ++r) {
    CooccurringPair best{static_cast<ClassId>(r), 0, 0.0};
    for (std::size_t c = 0; c < m.size; ++c)
      if (m.value(r, c) > best.share + kEps) best.other = static_cast<ClassId>(c), best.share = m.value(r, c);
    if (best.share > 0) out.push_back(best);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.share > b.share + kEps; });
  if (out.size() > top_n) out.resize(top_n);
  return out;
}

// ---------------------------------------------------------------------------
// Ambiguous class pairs

struct AmbiguousPair {
  ClassId first = 0;   // smaller id
  ClassId second = 0;
  double mean_first_to_second = 0.0;  // mean sf of `second` on images labeled `first`
  double mean_second_to_first = 0.0;
  double score = 0.0;
  std::map<std::string, PairwiseResult> pairwise;
  static constexpr double kChance = 0.5;
};

/// Pairs whose labels annotators affirm on each other's images, scored by
/// the smaller of the two cross means. Means only cover images where the
/// cross label was shown; pairs lacking either direction are excluded.
inline std::vector<AmbiguousPair> ambiguous_pairs(const SelectionFrequencyTable& sft, const DatasetIndex& index,
                                                  std::size_t top_n) {
  std::map<std::pair<ClassId, ClassId>, std::pair<double, int>> cross;
  for (const auto& [image, labels] : sft.entries()) {
    if (!index.contains(image)) continue;
    const ClassId in = index.label(image);
    for (const auto& [label, e] : labels) {
      if (label == in) continue;
      auto& acc = cross[{in, label}];
      acc.first += e.sf();
      acc.second += 1;
    }
  }
  std::vector<AmbiguousPair> out;
  for (const auto& [key, ab] : cross) {
    const auto [i, j] = key;
    if (i > j) continue;
    auto ba = cross.find({j, i});
    if (ba == cross.end()) continue;
    AmbiguousPair p;
    p.first = i;
    p.second = j;
    p.mean_first_to_second = ab.first / ab.second;
    p.mean_second_to_first = ba->second.first / ba->second.second;
    p.score = std::min(p.mean_first_to_second, p.mean_second_to_first);
    out.push_back(std::move(p));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.score > b.score + kEps; });
  if (out.size() > top_n) out.resize(top_n);
  return out;
}

inline void annotate_pairwise(std::vector<AmbiguousPair>& pairs, const std::vector<PredictionSet>& preds,
                              const DatasetIndex& index) {
  for (auto& p : pairs)
    for (const auto& model : preds) p.pairwise[model.model_id] = pairwise_accuracy(model, index, p.first, p.second);
}

// ---------------------------------------------------------------------------
// Per-class selection frequency vs model accuracy

struct SfAccuracyRow {
  ClassId label = 0;
  std::optional<double> mean_sf;   // over images with a measured dataset-label sf
  std::optional<double> accuracy;  // top-1 over the class's images
  std::size_t images = 0;
};

inline std::vector<SfAccuracyRow> sf_accuracy_table(const SelectionFrequencyTable& sft, const PredictionSet& p,
                                                    const DatasetIndex& index, const ClassTable& table) {
  std::vector<SfAccuracyRow> rows(table.size());
  std::vector<double> sf_sum(table.size(), 0.0), hits(table.size(), 0.0);
  std::vector<int> sf_n(table.size(), 0);
  for (std::size_t c = 0; c < rows.size(); ++c) rows[c].label = static_cast<ClassId>(c);
  for (const auto& im : index.study_images()) {
    const auto c = static_cast<std::size_t>(index.label(im));
    if (!p.find(im)) continue;
    ++rows[c].images;
    hits[c] += p.top1(im) == index.label(im);
    if (auto sf = sft.sf(im, index.label(im))) sf_sum[c] += *sf, ++sf_n[c];
  }
  for (std::size_t c = 0; c < rows.size(); ++c) {
    if (rows[c].images) rows[c].accuracy = hits[c] / static_cast<double>(rows[c].images);
    if (sf_n[c]) rows[c].mean_sf = sf_sum[c] / sf_n[c];
  }
  return rows;
}

namespace detail {
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}
}  // namespace detail

inline std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n, my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

/// Spearman rank correlation with average ranks for ties.
inline std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) return std::nullopt;
  return pearson(detail::average_ranks(x), detail::average_ranks(y));
}

inline std::optional<double> sf_accuracy_correlation(const std::vector<SfAccuracyRow>& rows) {
  std::vector<double> x, y;
  for (const auto& r : rows)
    if (r.mean_sf && r.accuracy) x.push_back(*r.mean_sf), y.push_back(*r.accuracy);
  return spearman(x, y);
}

// ---------------------------------------------------------------------------
// Possibly mislabeled images

struct NeverSelectedImage {
  ImageId image;
  ClassId dataset_label = 0;
  std::optional<ClassId> selected;  // most-selected alternative
  int selected_count = 0;
};

struct MislabeledReport {
  std::vector<UnverifiedImage> sf_zero;
  std::vector<NeverSelectedImage> never_selected;
};

/// Images whose dataset label no CONTAINS annotator affirmed, and images
/// where no CLASSIFY response marked the dataset label valid.
inline MislabeledReport mislabeled_report(const SelectionFrequencyTable& sft, const DatasetIndex& index,
                                          const std::vector<ClassifyResponse>& classify_responses) {
  MislabeledReport out;
  out.sf_zero = detect_unverified(sft, index);
  std::map<ImageId, std::vector<ClassifyResponse>> by_image;
  for (const auto& r : classify_responses) by_image[r.image].push_back(r);
  for (const auto& [image, rs] : by_image) {
    const ClassId in = index.label(image);
    const auto counts = selection_counts(rs);
    if (counts.count(in)) continue;
    NeverSelectedImage n{image, in, std::nullopt, 0};
    for (const auto& [label, c] : counts)
      if (c > n.selected_count) n.selected = label, n.selected_count = c;
    out.never_selected.push_back(std::move(n));
  }
  return out;
}

}  // namespace crowdlabel
