#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crowdlabel/classify.hpp"
#include "crowdlabel/contains.hpp"
#include "crowdlabel/core.hpp"
#include "crowdlabel/ingest.hpp"
#include "crowdlabel/jsonl.hpp"
#include "crowdlabel/rng.hpp"

namespace crowdlabel {

struct WorldImage {
  std::vector<ClassId> objects;  // distinct, nonempty
  ClassId main = 0;
};

/// Ground truth for every image that can appear in a grid or task,
/// including control-only images.
struct GroundTruthWorld {
  std::map<ImageId, WorldImage> images;

  const WorldImage& at(const ImageId& im) const {
    auto it = images.find(im);
    if (it == images.end()) fail("world has no ground truth for image '", im, "'");
    return it->second;
  }

  void add(const ImageId& im, WorldImage w) {
    if (w.objects.empty()) fail("world image '", im, "' has no objects");
    if (std::find(w.objects.begin(), w.objects.end(), w.main) == w.objects.end())
      fail("world image '", im, "': main label is not an object");
    if (!images.emplace(im, std::move(w)).second) fail("world: duplicate image '", im, "'");
  }
};

inline std::vector<json> world_to_records(const GroundTruthWorld& w) {
  std::vector<json> out;
  for (const auto& [im, g] : w.images) out.push_back(json{{"image", im}, {"objects", g.objects}, {"main", g.main}});
  return out;
}

inline GroundTruthWorld world_from_records(const std::vector<json>& recs) {
  GroundTruthWorld w;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto ctx = "world.jsonl:" + std::to_string(i + 1);
    w.add(field<std::string>(recs[i], "image", ctx),
          {field<std::vector<int>>(recs[i], "objects", ctx), field<int>(recs[i], "main", ctx)});
  }
  return w;
}

/// Parametric annotator behaviour. A true label is affirmed with probability
/// rho; a false label at hierarchy distance d from the nearest true object
/// with min(1, eta * 2^(-(d-1)/kappa)). The first `spammers` workers of the
/// pool ignore the image and affirm anything with probability spam_rate.
struct AnnotatorModel {
  double rho = 1.0;
  double eta = 0.0;
  double kappa = 2.0;
  std::uint64_t seed = 0;
  int worker_pool = 0;  // 0: three times the annotators per task
  int spammers = 0;
  double spam_rate = 0.5;

  void validate() const {
    if (!(rho >= 0 && rho <= 1)) fail("annotator model: rho must be in [0,1]");
    if (!(eta >= 0 && eta <= 1)) fail("annotator model: eta must be in [0,1]");
    if (!(kappa > 0)) fail("annotator model: kappa must be positive");
    if (!(spam_rate >= 0 && spam_rate <= 1)) fail("annotator model: spam_rate must be in [0,1]");
    if (spammers < 0 || worker_pool < 0) fail("annotator model: negative worker counts");
  }

  double false_affirmation(std::optional<int> distance) const {
    if (!distance || *distance <= 0) return 0.0;
    return std::min(1.0, eta * std::exp2(-(static_cast<double>(*distance) - 1.0) / kappa));
  }
};

inline std::string sim_worker_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sim-w%04d", index);
  return buf;
}

namespace detail {

/// Distinct worker indices for one task, deterministic in (seed, stage, task).
inline std::vector<int> assign_workers(const AnnotatorModel& m, const char* stage, const TaskId& task, int n) {
  const int pool = m.worker_pool > 0 ? m.worker_pool : 3 * n;
  if (pool < n) fail("annotator model: worker pool ", pool, " smaller than annotators per task ", n);
  std::vector<int> all(static_cast<std::size_t>(pool));
  for (int i = 0; i < pool; ++i) all[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(m.seed, "assign", stage, task));
  auto chosen = rng.sample(all, static_cast<std::size_t>(n));
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

inline std::optional<int> nearest_object_distance(ClassDistance& dist, ClassId query, const WorldImage& w) {
  std::optional<int> best;
  for (ClassId o : w.objects) {
    auto d = dist(query, o);
    if (d && (!best || *d < *best)) best = d;
  }
  return best;
}

}  // namespace detail

/// Responses of simulated annotators to CONTAINS grids, ordered by task and
/// worker. Each (worker, task) draws from its own stream.
inline std::vector<GridResponse> simulate_contains(const GroundTruthWorld& world, const std::vector<GridTask>& grids,
                                                   const AnnotatorModel& model, int n_annotators,
                                                   ClassDistance& distance) {
  model.validate();
  std::vector<GridResponse> out;
  for (const auto& g : grids) {
    for (int w : detail::assign_workers(model, "contains", g.task_id, n_annotators)) {
      GridResponse r{g.task_id, sim_worker_id(w), {}};
      Rng rng(derive_seed(model.seed, "contains", static_cast<std::uint64_t>(w), g.task_id));
      const bool spammer = w < model.spammers;
      for (const auto& im : g.shown) {
        const auto& truth = world.at(im);
        double p;
        if (spammer) {
          p = model.spam_rate;
        } else if (std::find(truth.objects.begin(), truth.objects.end(), g.query_label) != truth.objects.end()) {
          p = model.rho;
        } else {
          p = model.false_affirmation(detail::nearest_object_distance(distance, g.query_label, truth));
        }
        if (rng.bernoulli(p)) r.selected.push_back(im);
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

/// Candidates at hierarchy distance <= 2 from an object can be confused with it.
inline constexpr int kConfusableDistance = 2;

/// Responses of simulated annotators to CLASSIFY tasks. For each true object
/// the annotator picks its label when it is a candidate (with probability
/// rho, otherwise the nearest confusable candidate); an object whose label is
/// not a candidate maps to the nearest confusable candidate or is missed.
/// The main label is the true main object's pick with probability rho,
/// otherwise uniform over the selection.
inline std::vector<ClassifyResponse> simulate_classify(const GroundTruthWorld& world,
                                                       const std::vector<ClassifyTask>& tasks,
                                                       const AnnotatorModel& model, ClassDistance& distance) {
  model.validate();
  std::vector<ClassifyResponse> out;
  for (const auto& t : tasks) {
    const auto& truth = world.at(t.image);
    std::vector<ClassId> sorted_cands = t.candidates;
    std::sort(sorted_cands.begin(), sorted_cands.end());
    auto nearest_confusable = [&](ClassId o) -> std::optional<ClassId> {
      std::optional<ClassId> best;
      int best_d = kConfusableDistance + 1;
      for (ClassId c : sorted_cands) {
        if (c == o) continue;
        auto d = distance(o, c);
        if (d && *d < best_d) best = c, best_d = *d;
      }
      return best;
    };

    for (int w : detail::assign_workers(model, "classify", t.task_id, t.annotators)) {
      ClassifyResponse r{t.task_id, sim_worker_id(w), t.image, {}, std::nullopt};
      Rng rng(derive_seed(model.seed, "classify", static_cast<std::uint64_t>(w), t.task_id));
      if (w < model.spammers) {
        for (ClassId c : t.candidates)
          if (rng.bernoulli(model.spam_rate)) r.valid.push_back(c);
        r.main = t.candidates[static_cast<std::size_t>(rng.below(t.candidates.size()))];
        out.push_back(std::move(r));
        continue;
      }
      std::set<ClassId> picked;
      std::optional<ClassId> main_pick;
      for (ClassId o : truth.objects) {
        const bool offered = std::binary_search(sorted_cands.begin(), sorted_cands.end(), o);
        std::optional<ClassId> label;
        if (offered) {
          label = o;
          if (!rng.bernoulli(model.rho))
            if (auto alt = nearest_confusable(o)) label = alt;
        } else {
          label = nearest_confusable(o);
        }
        if (!label) continue;
        picked.insert(*label);
        if (o == truth.main) main_pick = label;
      }
      r.valid.assign(picked.begin(), picked.end());
      if (!r.valid.empty()) {
        if (main_pick && rng.bernoulli(model.rho))
          r.main = *main_pick;
        else
          r.main = r.valid[static_cast<std::size_t>(rng.below(r.valid.size()))];
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic worlds

struct SyntheticWorldConfig {
  int images = 500;
  int classes_per_superclass = 2;
  int max_objects = 3;
  double multi_object_rate = 0.4;
  double main_is_dataset_label_rate = 0.7;
  int controls_per_class = 48;
  int models = 3;
  double pool_miss_rate = 0.0;  // chance a model's top 5 omits a true object
  std::uint64_t seed = 0;
};

/// Everything the pipeline ingests plus the ground truth behind it.
struct SyntheticWorld {
  ClassTable table;
  Hierarchy hierarchy;
  DatasetIndex index;
  std::vector<PredictionSet> predictions;
  GroundTruthWorld world;
  std::vector<std::pair<std::string, std::string>> edges;  // hierarchy edges in emission order
};

inline std::string synthetic_image_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img%05d", i);
  return buf;
}

inline std::string synthetic_control_id(ClassId c, int k) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "ctl%03d-%02d", c, k);
  return buf;
}

/// Builds a world over the eleven superclass names. The hierarchy is
/// root -> {living, artifact} -> superclass -> class, so classes are 2 edges
/// apart inside a superclass, 4 within a group and 6 across groups.
inline SyntheticWorld make_synthetic_world(const SyntheticWorldConfig& cfg) {
  const auto registry = imagenet_superclasses();
  const int n_super = static_cast<int>(registry.size());
  const int n_classes = n_super * cfg.classes_per_superclass;
  if (n_classes < 5) fail("synthetic world needs at least 5 classes");
  if (cfg.max_objects < 1 || cfg.max_objects > 5) fail("synthetic world: max_objects must be in 1..5");

  SyntheticWorld sw;
  std::vector<SuperclassInfo> sc_entries;
  for (const auto& e : registry.entries()) sc_entries.push_back({e.name, std::nullopt});
  std::vector<ClassInfo> classes;
  auto edge = [&](const std::string& p, const std::string& c) {
    sw.hierarchy.add_edge(p, c);
    sw.edges.emplace_back(p, c);
  };
  edge("root", "living");
  edge("root", "artifact");
  for (int s = 0; s < n_super; ++s) {
    char sname[16];
    std::snprintf(sname, sizeof sname, "sc%02d", s);
    edge(s < 6 ? "living" : "artifact", sname);
    for (int k = 0; k < cfg.classes_per_superclass; ++k) {
      char wnid[24];
      std::snprintf(wnid, sizeof wnid, "n%02d%03d", s, k);
      edge(sname, wnid);
      ClassInfo info;
      info.wnid = wnid;
      std::string base = registry[s].name;  // commas separate synonyms in the class table
      base.erase(std::remove(base.begin(), base.end(), ','), base.end());
      info.names = {base + " class " + std::to_string(k)};
      info.wiki_url = std::string("https://en.wikipedia.org/wiki/Special:Search?search=") + wnid;
      info.superclass = s;
      classes.push_back(std::move(info));
    }
  }
  sw.table = ClassTable(std::move(classes), SuperclassRegistry(std::move(sc_entries)));

  Rng rng(derive_seed(cfg.seed, "world"));
  for (int i = 0; i < cfg.images; ++i) {
    const ImageId im = synthetic_image_id(i);
    const ClassId in = i % n_classes;
    WorldImage w{{in}, in};
    int n_obj = 1;
    if (cfg.max_objects > 1 && rng.bernoulli(cfg.multi_object_rate))
      n_obj = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_objects - 1)));
    std::set<int> used_super{sw.table.superclass_of(in)};
    while (static_cast<int>(w.objects.size()) < n_obj && static_cast<int>(used_super.size()) < n_super) {
      const auto c = static_cast<ClassId>(rng.below(static_cast<std::uint64_t>(n_classes)));
      if (used_super.insert(sw.table.superclass_of(c)).second) w.objects.push_back(c);
    }
    if (w.objects.size() > 1 && !rng.bernoulli(cfg.main_is_dataset_label_rate))
      w.main = w.objects[1 + static_cast<std::size_t>(rng.below(w.objects.size() - 1))];
    sw.index.add(im, in, true);
    sw.world.add(im, std::move(w));
  }
  for (ClassId c = 0; c < n_classes; ++c)
    for (int k = 0; k < cfg.controls_per_class; ++k) {
      const ImageId im = synthetic_control_id(c, k);
      sw.index.add(im, c, false);
      sw.world.add(im, {{c}, c});
    }

  for (int m = 0; m < cfg.models; ++m) {
    PredictionSet p;
    char name[32];
    std::snprintf(name, sizeof name, "synth-model-%d", m);
    p.model_id = name;
    const double accuracy = 0.5 + 0.4 * (cfg.models > 1 ? static_cast<double>(m) / (cfg.models - 1) : 1.0);
    Rng prng(derive_seed(cfg.seed, "predictions", static_cast<std::uint64_t>(m)));
    for (const auto& im : sw.index.study_images()) {
      const auto& truth = sw.world.at(im);
      const ClassId in = sw.index.label(im);
      std::vector<ClassId> ranked;
      for (ClassId o : truth.objects)
        if (o == in || !prng.bernoulli(cfg.pool_miss_rate)) ranked.push_back(o);
      // a same-superclass sibling is the typical confusion
      const int s = sw.table.superclass_of(in);
      const auto sib = static_cast<ClassId>(s * cfg.classes_per_superclass +
                                            static_cast<int>(prng.below(static_cast<std::uint64_t>(cfg.classes_per_superclass))));
      if (std::find(ranked.begin(), ranked.end(), sib) == ranked.end()) ranked.push_back(sib);
      while (ranked.size() < 5) {
        const auto c = static_cast<ClassId>(prng.below(static_cast<std::uint64_t>(n_classes)));
        if (std::find(ranked.begin(), ranked.end(), c) == ranked.end()) ranked.push_back(c);
      }
      ranked.resize(5);
      prng.shuffle(ranked);
      if (prng.bernoulli(accuracy)) {
        auto it = std::find(ranked.begin(), ranked.end(), in);
        std::rotate(ranked.begin(), it, it + 1);
      }
      p.ranked.emplace(im, std::move(ranked));
    }
    sw.predictions.push_back(std::move(p));
  }
  return sw;
}

// ---------------------------------------------------------------------------
// Ground-truth comparison

struct RecoveryStats {
  std::size_t compared = 0;
  std::size_t excluded = 0;  // some true label missing from the potential pool
  std::size_t objects_exact = 0;
  std::size_t counts_exact = 0;
  std::size_t main_exact = 0;
  std::vector<ImageId> mismatches;

  double main_accuracy() const { return compared ? static_cast<double>(main_exact) / static_cast<double>(compared) : 0.0; }
};

/// Compares annotations with ground truth on study images. With a pool,
/// images whose true labels are not all potential labels are excluded.
inline RecoveryStats compare_to_world(const std::vector<ImageAnnotation>& annotations, const GroundTruthWorld& world,
                                      const PotentialLabelSet* pool = nullptr) {
  RecoveryStats s;
  for (const auto& a : annotations) {
    const auto& truth = world.at(a.image);
    if (pool) {
      const auto& p = pool->pool(a.image);
      if (!std::all_of(truth.objects.begin(), truth.objects.end(), [&](ClassId c) { return p.count(c) > 0; })) {
        ++s.excluded;
        continue;
      }
    }
    ++s.compared;
    std::vector<ClassId> got = a.object_labels(), want = truth.objects;
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    const bool objects_ok = got == want;
    const bool count_ok = a.num_objects == static_cast<int>(want.size());
    const bool main_ok = a.main_label == truth.main;
    s.objects_exact += objects_ok;
    s.counts_exact += count_ok;
    s.main_exact += main_ok;
    if (!(objects_ok && count_ok && main_ok)) s.mismatches.push_back(a.image);
  }
  return s;
}

}  // namespace crowdlabel
