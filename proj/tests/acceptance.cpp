// Acceptance checks: one PASS/FAIL/SKIP line per criterion.
//
// usage: acceptance [path-to-crowdlabel-cli]
// The released-annotation check runs only when CROWDLABEL_RELEASED_FILE
// (released annotation file) and CROWDLABEL_RELEASED_DIR (directory holding
// classes.tsv and dataset.jsonl for the validation set) are set.

#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "crowdlabel/crowdlabel.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace crowdlabel;

namespace {

enum class Verdict { kPass, kFail, kSkip };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

Outcome pass(std::string d) { return {Verdict::kPass, std::move(d)}; }
Outcome failed(std::string d) { return {Verdict::kFail, std::move(d)}; }
Outcome skip(std::string d) { return {Verdict::kSkip, std::move(d)}; }

template <typename... A>
std::string str(const A&... a) {
  std::ostringstream os;
  (os << ... << a);
  return os.str();
}

// --- partition oracle ---------------------------------------------------------

Outcome partition_oracle() {
  Rng rng(20240611);
  const auto start = std::chrono::steady_clock::now();
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto sets = oracle::random_responses(rng, 6);
    const int k = 1 + static_cast<int>(rng.below(4));
    auto p = partition_objects(oracle::as_responses(sets), k);
    const int want = oracle::brute_force_min_cost(sets, k);
    if (p.violation_cost != want || oracle::partition_cost(sets, p) != want) ++mismatches;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto d = str("1000 instances, ", mismatches, " cost mismatches, ", secs, " s");
  return mismatches == 0 && secs < 10.0 ? pass(d) : failed(d);
}

// --- closed loops ---------------------------------------------------------------

SyntheticWorldConfig world_500(std::uint64_t seed) {
  SyntheticWorldConfig w;
  w.images = 500;
  w.classes_per_superclass = 2;
  w.max_objects = 3;
  w.seed = seed;
  return w;
}

Outcome noiseless_closed_loop() {
  auto sw = make_synthetic_world(world_500(derive_seed(1, "world")));
  AnnotatorModel m;
  m.rho = 1.0;
  m.eta = 0.0;
  m.seed = 11;
  PipelineConfig cfg;
  cfg.seed = 1;
  auto run = run_simulated_pipeline(sw, m, cfg);
  auto s = compare_to_world(run.annotations, sw.world, &run.pool);
  const auto d = str(s.compared, " compared (", s.excluded, " outside pool): objects ", s.objects_exact, ", counts ",
                     s.counts_exact, ", main ", s.main_exact);
  const bool ok = s.compared > 0 && s.objects_exact == s.compared && s.counts_exact == s.compared &&
                  s.main_exact == s.compared && run.annotations.size() == sw.index.study_images().size();
  return ok ? pass(d) : failed(d);
}

Outcome noisy_recovery() {
  double total = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto sw = make_synthetic_world(world_500(derive_seed(seed, "world")));
    AnnotatorModel m;
    m.rho = 0.9;
    m.eta = 0.2;
    m.kappa = 2.0;
    m.seed = derive_seed(seed, "annotators");
    PipelineConfig cfg;
    cfg.seed = seed;
    cfg.annotators = 9;
    auto run = run_simulated_pipeline(sw, m, cfg);
    auto s = compare_to_world(run.annotations, sw.world);
    total += s.main_accuracy();
    per_seed += str(per_seed.empty() ? "" : " ", s.main_accuracy());
  }
  const double mean = total / 5.0;
  const auto d = str("mean main-label accuracy ", mean, " (", per_seed, "), need >= 0.95");
  return approx_ge(mean, 0.95) ? pass(d) : failed(d);
}

// --- QC fixture -------------------------------------------------------------------

GridTask qc_grid(int i) {
  GridTask g;
  g.task_id = str("qc-g", i);
  g.query_label = 0;
  for (int t = 0; t < 3; ++t) g.shown.push_back(str(g.task_id, "-t", t));
  for (int c = 0; c < 10; ++c) {
    g.controls.push_back(str(g.task_id, "-c", c));
    g.shown.push_back(g.controls.back());
  }
  return g;
}

GridResponse qc_answer(const GridTask& g, const std::string& worker, int control_hits) {
  GridResponse r{g.task_id, worker, {}};
  for (int i = 0; i < control_hits; ++i) r.selected.push_back(g.controls[static_cast<std::size_t>(i)]);
  for (const auto& t : g.targets()) r.selected.push_back(t);
  return r;
}

ClassifyResponse qc_classify(const std::string& task, const std::string& worker, std::vector<ClassId> valid,
                             std::optional<ClassId> main) {
  return ClassifyResponse{task, worker, "", std::move(valid), main};
}

Outcome qc_exactness() {
  std::vector<std::string> problems;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };

  // CONTAINS: 20 grids with 10 controls each, one response per grid. Control
  // rates (tenths) per worker:
  //   A 1 1 5 9   bad share exactly half -> worker dropped
  //   B 1 5 6 9   bad share 1/4 -> kept; 0.1 response dropped
  //   C 2 2 2 3 4 0.2 is not < 20% -> kept; rates < 0.4 dropped, 0.4 kept
  //   D 1 5 5     bad share 1/3 -> kept; 0.1 dropped
  //   E 1 1       all bad -> dropped
  //   F 10 4      all kept
  const std::vector<std::pair<std::string, std::vector<int>>> plan{
      {"A", {1, 1, 5, 9}}, {"B", {1, 5, 6, 9}}, {"C", {2, 2, 2, 3, 4}}, {"D", {1, 5, 5}}, {"E", {1, 1}}, {"F", {10, 4}}};
  std::vector<GridTask> grids;
  std::vector<GridResponse> rs;
  for (const auto& [worker, rates] : plan)
    for (int rate : rates) {
      grids.push_back(qc_grid(static_cast<int>(grids.size())));
      rs.push_back(qc_answer(grids.back(), worker, rate));
    }
  expect(grids.size() == 20, "fixture must have 20 grids");
  auto qc = apply_contains_qc(grids, rs);
  expect(qc.report.dropped_workers == std::set<WorkerId>{"A", "E"}, "contains dropped workers != {A,E}");
  std::set<std::string> retained;
  for (const auto& r : qc.retained) retained.insert(r.task_id);
  // indices: A 0-3, B 4-7, C 8-12, D 13-15, E 16-17, F 18-19
  const std::set<std::string> want_retained{"qc-g5", "qc-g6", "qc-g7", "qc-g12", "qc-g14", "qc-g15", "qc-g18", "qc-g19"};
  expect(retained == want_retained, "contains retained set differs");
  auto reasons = qc.report.reason_counts();
  expect(reasons[reason::kWorkerLowControlRate] == 6, "worker drops != 6");
  expect(reasons[reason::kTaskLowControlRate] == 6, "task drops != 6");

  // CLASSIFY: candidates {1,2,3}; a worker is dropped when its flagged share
  // is more than one-third.
  //   A 1/3 flagged -> kept        B 1/2 -> dropped     C 1/4 -> kept
  //   D 2/3 -> dropped             E 1/1 -> dropped     F 0/3 -> kept
  std::vector<ClassifyTask> tasks;
  for (int i = 0; i < 4; ++i) tasks.push_back(ClassifyTask{str("qc-t", i), str("qc-im", i), 1, {1, 2, 3}, 9});
  const auto good = [&](int t, const std::string& w) { return qc_classify(str("qc-t", t), w, {1, 2}, 1); };
  std::vector<ClassifyResponse> cr{
      good(0, "A"), good(1, "A"), qc_classify("qc-t2", "A", {}, std::nullopt),
      good(0, "B"), qc_classify("qc-t1", "B", {1}, 2),
      good(0, "C"), good(1, "C"), good(2, "C"), qc_classify("qc-t3", "C", {1, 7}, 1),
      good(0, "D"), qc_classify("qc-t1", "D", {}, std::nullopt), qc_classify("qc-t2", "D", {4}, 4),
      qc_classify("qc-t0", "E", {2}, 3),
      good(0, "F"), good(1, "F"), good(2, "F")};
  auto cq = apply_classify_qc(tasks, cr, 1.0 / 3.0);
  expect(cq.report.dropped_workers == std::set<WorkerId>{"B", "D", "E"}, "classify dropped workers != {B,D,E}");
  std::multiset<std::string> kept;
  for (const auto& r : cq.retained) kept.insert(r.worker);
  expect(kept == std::multiset<std::string>{"A", "A", "C", "C", "C", "F", "F", "F"}, "classify retained set differs");

  // Boundaries in the candidate and eligibility rules.
  {
    SelectionFrequencyTable sft;
    sft.add("im", 0, 8, 10);  // 0.8
    sft.add("im", 1, 4, 10);  // 0.4: exactly half of IN, i.e. IN exactly double
    CandidateSet cs;
    cs.image = "im";
    cs.dataset_label = 0;
    cs.labels = {0, 1};
    auto d = classify_eligible(cs, sft, EligibilityConfig{});
    expect(d.eligible, "IN exactly double another label must stay eligible");
    sft.add("im2", 0, 9, 10);
    sft.add("im2", 1, 4, 10);
    cs.image = "im2";
    expect(!classify_eligible(cs, sft, EligibilityConfig{}).eligible, "IN more than double must be dominant");
  }
  for (const auto& s : oracle::candidate_scenarios()) {
    const std::string name = s.name;
    if (name.find("exactly one eighth") == std::string::npos && name.find("exactly one half") == std::string::npos)
      continue;
    auto w = oracle::realize(s);
    ClassDistance dist(w.hierarchy, w.table);
    auto got = select_candidates("img", s.in, w.sft, w.pool, dist, CandidateConfig{});
    expect(std::set<ClassId>(got.labels.begin(), got.labels.end()) == s.expected, "boundary scenario: " + name);
  }

  if (problems.empty()) return pass("contains: drop {A,E}, 8 retained; classify: drop {B,D,E}; boundaries resolved");
  std::string d;
  for (const auto& p : problems) d += (d.empty() ? "" : "; ") + p;
  return failed(d);
}

// --- candidate rules ---------------------------------------------------------------

Outcome candidate_rules() {
  const auto scenarios = oracle::candidate_scenarios();
  std::vector<std::string> bad;
  for (const auto& s : scenarios) {
    auto w = oracle::realize(s);
    ClassDistance dist(w.hierarchy, w.table);
    auto got = select_candidates("img", s.in, w.sft, w.pool, dist, CandidateConfig{});
    const std::set<ClassId> g(got.labels.begin(), got.labels.end());
    if (g != s.expected || oracle::reference_candidates(s) != s.expected) bad.push_back(s.name);
  }
  const auto d = str(scenarios.size(), " scenarios, ", bad.size(), " mismatched");
  if (scenarios.size() != 12) return failed(d + " (expected 12 scenarios)");
  if (!bad.empty()) {
    std::string names;
    for (const auto& b : bad) names += " [" + b + "]";
    return failed(d + ":" + names);
  }
  return pass(d);
}

// --- metric invariants --------------------------------------------------------------

Outcome metric_invariants() {
  std::vector<std::string> bad;
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto f = oracle::random_metric_fixture(derive_seed(99, s));
    const double top1 = *top_k_accuracy(f.preds, f.index, f.images, 1);
    if (!approx_ge(*top_k_accuracy(f.preds, f.index, f.images, 5), top1)) bad.push_back(str("top5<top1 @", s));
    if (!approx_ge(*multi_label_accuracy(f.preds, f.anns, f.images), top1)) bad.push_back(str("ml<top1 @", s));
    auto single = oracle::random_metric_fixture(derive_seed(99, s), true);
    if (std::abs(*multi_label_accuracy(single.preds, single.anns, single.images) -
                 *top_k_accuracy(single.preds, single.index, single.images, 1)) > 1e-12)
      bad.push_back(str("single-object ml!=top1 @", s));
    std::set<ClassId> labels;
    for (const auto& im : f.images) labels.insert(f.index.label(im));
    if (labels.size() >= 2) {
      const ClassId i = *labels.begin(), j = *std::next(labels.begin());
      auto a = pairwise_accuracy(f.preds, f.index, i, j), b = pairwise_accuracy(f.preds, f.index, j, i);
      if (a.accuracy != b.accuracy || a.coverage != b.coverage) bad.push_back(str("pairwise asymmetric @", s));
    }
    auto d = model_decisions(f.preds, f.index, f.images);
    for (auto scope : {Scope::kFull, Scope::kIntra, Scope::kInter}) {
      auto agg = aggregate_to_superclass(confusion_matrix(d, f.table, Level::kClass, scope), f.table);
      auto sup = confusion_matrix(d, f.table, Level::kSuperclass, scope);
      for (std::size_t r = 0; r < sup.size; ++r)
        for (std::size_t c = 0; c < sup.size; ++c)
          if (std::abs(sup.value(r, c) - agg.value(r, c)) > 1e-9) bad.push_back(str("superclass matrix @", s));
    }
  }
  if (bad.empty()) return pass("100 fixtures: top5>=top1, ml>=top1, ml=top1 single-object, pairwise symmetric, superclass within 1e-9");
  return failed(str(bad.size(), " violations, first: ", bad.front()));
}

// --- grid structure --------------------------------------------------------------------

Outcome grid_structure() {
  std::size_t total = 0;
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    Rng rng(derive_seed(404, trial));
    DatasetIndex index;
    PotentialLabelSet pool;
    const int classes = 3 + static_cast<int>(rng.below(10));
    for (int c = 0; c < classes; ++c)
      for (int k = 0; k < 5 + static_cast<int>(rng.below(80)); ++k) index.add(str("ctl", c, "-", k), c, false);
    const int images = 1 + static_cast<int>(rng.below(400));
    for (int i = 0; i < images; ++i) {
      const auto id = str("img", i);
      const auto l = static_cast<ClassId>(rng.below(static_cast<std::uint64_t>(classes)));
      index.add(id, l);
      auto& p = pool.pools[id];
      p.insert(l);
      for (int e = 0; e < 5; ++e) p.insert(static_cast<ClassId>(rng.below(static_cast<std::uint64_t>(classes))));
    }
    PipelineConfig cfg;
    cfg.seed = trial;
    for (const auto& g : build_grids(pool, index, cfg)) {
      ++total;
      const std::set<ImageId> uniq(g.shown.begin(), g.shown.end());
      std::size_t own_controls = 0;
      for (const auto& c : g.controls) own_controls += index.label(c) == g.query_label;
      if (g.shown.size() != 48 || uniq.size() != 48 || g.controls.size() < 5 || own_controls != g.controls.size())
        return failed(str("grid ", g.task_id, " of trial ", trial, ": ", g.shown.size(), " slots, ", uniq.size(),
                          " distinct, ", own_controls, " controls"));
    }
  }
  return pass(str(total, " grids over 50 random pools: 48 slots, >=5 controls, no duplicates"));
}

// --- released annotations ----------------------------------------------------------------

Outcome released_import() {
  const char* file = std::getenv("CROWDLABEL_RELEASED_FILE");
  const char* dir = std::getenv("CROWDLABEL_RELEASED_DIR");
  if (!file || !dir || !*file || !*dir)
    return skip("set CROWDLABEL_RELEASED_FILE and CROWDLABEL_RELEASED_DIR to run (network-dependent data)");
  const fs::path root(dir);
  std::optional<fs::path> reg;
  if (fs::exists(root / "superclasses.tsv")) reg = root / "superclasses.tsv";
  auto table = load_class_table(root / "classes.tsv", reg);
  auto index = load_dataset(root / "dataset.jsonl", table);
  auto r = import_released_annotations(read_released_file(file), index, table);
  auto d = str(r.multi_object(), " multi-object (want 2156), ", r.multi_object_main_disagreements(),
               " main disagreements (want 650)");
  bool ok = r.multi_object() == 2156 && r.multi_object_main_disagreements() == 650;
  if (r.has_sf_zero_field && r.has_never_selected_field) {
    d += str(", mislabeled ", r.sf_zero_flags, "/", r.never_selected_flags, " (want 150/119)");
    ok = ok && r.sf_zero_flags == 150 && r.never_selected_flags == 119;
  } else {
    d += ", file carries no mislabeled flags";
    ok = false;
  }
  return ok ? pass(d) : failed(d);
}

// --- determinism ------------------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = read_text(e.path());
  return out;
}

std::string run_dump(std::uint64_t seed) {
  SyntheticWorldConfig w;
  w.images = 120;
  w.seed = derive_seed(seed, "world");
  auto sw = make_synthetic_world(w);
  AnnotatorModel m;
  m.rho = 0.9;
  m.eta = 0.2;
  m.seed = derive_seed(seed, "annotators");
  PipelineConfig cfg;
  cfg.seed = seed;
  auto run = run_simulated_pipeline(sw, m, cfg);
  std::string out = to_jsonl(records::to_records(run.grids)) + to_jsonl(records::to_records(run.contains_responses)) +
                    to_jsonl(records::sf_to_records(run.sft)) + to_jsonl(records::to_records(run.classify.tasks)) +
                    to_jsonl(records::to_records(run.classify_responses)) + to_jsonl(records::to_records(run.annotations));
  return out;
}

Outcome determinism(const char* cli) {
  if (run_dump(3) != run_dump(3)) return failed("in-process pipeline differs between identical runs");
  if (!cli) return failed("no CLI path given; subcommand artifacts not compared");
  const auto base = fs::temp_directory_path() / str("crowdlabel-acceptance-", ::getpid());
  fs::remove_all(base);
  const std::vector<std::string> subcommands{
      "simulate world --images 150", "ingest", "grids build", "simulate contains --rho 0.9 --eta 0.2",
      "qc contains", "sf compute", "candidates select", "classify build", "simulate classify --rho 0.9 --eta 0.2",
      "classify qc", "classify aggregate", "metrics report", "analyze confusion --sf-argmax", "analyze cooccurrence",
      "analyze ambiguous", "analyze sfacc", "analyze mislabeled"};
  std::map<std::string, std::string> snaps[2];
  for (int r = 0; r < 2; ++r) {
    const auto dir = base / str("run", r);
    for (const auto& sub : subcommands) {
      const auto cmd = str("\"", cli, "\" --data-dir \"", dir.string(), "\" --seed 13 ", sub, " > /dev/null");
      if (std::system(cmd.c_str()) != 0) {
        fs::remove_all(base);
        return failed("subcommand failed: " + sub);
      }
    }
    snaps[r] = snapshot(dir);
  }
  fs::remove_all(base);
  if (snaps[0].size() != snaps[1].size()) return failed("runs produced different file sets");
  for (const auto& [rel, content] : snaps[0]) {
    auto it = snaps[1].find(rel);
    if (it == snaps[1].end() || it->second != content) return failed("artifact differs between runs: " + rel);
  }
  std::size_t manifests = 0;
  for (const auto& [rel, _] : snaps[0]) manifests += rel.rfind("manifests/", 0) == 0;
  if (manifests != subcommands.size()) return failed(str(manifests, " manifests for ", subcommands.size(), " subcommands"));
  return pass(str(subcommands.size(), " subcommands run twice: ", snaps[0].size(), " files byte-identical"));
}

}  // namespace

int main(int argc, char** argv) {
  const char* cli = argc > 1 ? argv[1] : nullptr;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"partition-oracle", partition_oracle},
      {"noiseless-closed-loop", noiseless_closed_loop},
      {"noisy-recovery", noisy_recovery},
      {"qc-exactness", qc_exactness},
      {"candidate-rules", candidate_rules},
      {"metric-invariants", metric_invariants},
      {"grid-structure", grid_structure},
      {"released-import", released_import},
      {"determinism", [cli] { return determinism(cli); }},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = failed(str("exception: ", e.what()));
    }
    const char* tag = o.verdict == Verdict::kPass ? "PASS" : o.verdict == Verdict::kFail ? "FAIL" : "SKIP";
    failures += o.verdict == Verdict::kFail;
    std::cout << tag << " " << name << ": " << o.detail << std::endl;
  }
  return failures ? 1 : 0;
}
