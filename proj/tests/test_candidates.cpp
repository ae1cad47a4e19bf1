#include <gtest/gtest.h>

#include "crowdlabel/candidates.hpp"
#include "oracles.hpp"

using namespace crowdlabel;

TEST(Candidates, HandScenariosMatchReferenceAndExpected) {
  for (const auto& s : oracle::candidate_scenarios()) {
    SCOPED_TRACE(s.name);
    ASSERT_EQ(oracle::reference_candidates(s), s.expected);
    auto w = oracle::realize(s);
    ClassDistance dist(w.hierarchy, w.table);
    auto cs = select_candidates("img", s.in, w.sft, w.pool, dist);
    EXPECT_EQ(std::set<ClassId>(cs.labels.begin(), cs.labels.end()), s.expected);
    EXPECT_EQ(cs.labels.front(), s.in);
    EXPECT_EQ(cs.provenance.at(s.in), CandidateRule::kDatasetLabel);
    EXPECT_EQ(cs.labels.size(), cs.provenance.size());
  }
}

TEST(Candidates, ProvenanceOfWorkedExample) {
  auto s = oracle::candidate_scenarios()[1];
  auto w = oracle::realize(s);
  ClassDistance dist(w.hierarchy, w.table);
  auto cs = select_candidates("img", 0, w.sft, w.pool, dist);
  EXPECT_EQ(cs.labels, (std::vector<ClassId>{0, 1, 3, 2}));
  EXPECT_EQ(cs.provenance.at(1), CandidateRule::kHighSelection);
  EXPECT_EQ(cs.provenance.at(3), CandidateRule::kSemanticallyFar);
  EXPECT_EQ(cs.provenance.at(2), CandidateRule::kFillToMinimum);
}

TEST(Candidates, RandomScenariosAgreeWithReferenceAndInvariants) {
  for (std::uint64_t trial = 0; trial < 500; ++trial) {
    Rng rng(derive_seed(11, trial));
    oracle::CandidateScenario s{"random", 0, {}, {}, {}};
    s.dist[0] = 0;
    s.sf[0] = static_cast<double>(rng.below(41)) / 40.0;
    const int n = 1 + static_cast<int>(rng.below(14));
    for (int c = 1; c <= n; ++c) {
      const auto d = rng.below(10);
      s.dist[c] = d == 0 ? std::nullopt : std::optional<int>(static_cast<int>(1 + d));
      if (rng.bernoulli(0.8)) s.sf[c] = static_cast<double>(rng.below(41)) / 40.0;
    }
    auto w = oracle::realize(s);
    ClassDistance dist(w.hierarchy, w.table);
    auto cs = select_candidates("img", 0, w.sft, w.pool, dist);
    std::set<ClassId> got(cs.labels.begin(), cs.labels.end());
    ASSERT_EQ(got, oracle::reference_candidates(s)) << "trial " << trial;
    ASSERT_TRUE(got.count(0));
    if (got.size() > 6) {
      // every label beyond the top five others satisfies the exemption
      std::vector<double> others;
      for (ClassId c : got)
        if (c != 0) others.push_back(w.sft.sf_or_zero("img", c));
      std::sort(others.rbegin(), others.rend());
      ASSERT_GT(s.sf[0], 0.125);
      for (std::size_t i = 5; i < others.size(); ++i) ASSERT_GE(others[i] + 1e-12, s.sf[0]);
    }
    // idempotent
    auto again = select_candidates("img", 0, w.sft, w.pool, dist);
    ASSERT_EQ(again.labels, cs.labels);
  }
}

namespace {

CandidateSet cands(std::vector<ClassId> labels) {
  CandidateSet c;
  c.image = "img";
  c.dataset_label = labels.front();
  c.labels = labels;
  for (ClassId l : labels) c.provenance[l] = CandidateRule::kHighSelection;
  return c;
}

}  // namespace

TEST(Eligibility, DominantDatasetLabel) {
  SelectionFrequencyTable sft;
  sft.add("img", 0, 9, 10);
  sft.add("img", 1, 4, 10);
  auto d = classify_eligible(cands({0, 1}), sft);
  EXPECT_FALSE(d.eligible);
  EXPECT_EQ(d.reason, EligibilityReason::kDominantDatasetLabel);
}

TEST(Eligibility, ExactlyDoubleIsNotDominant) {
  SelectionFrequencyTable sft;
  sft.add("img", 0, 18, 20);
  sft.add("img", 1, 9, 20);
  auto d = classify_eligible(cands({0, 1}), sft);
  EXPECT_TRUE(d.eligible);
  EXPECT_EQ(d.reason, EligibilityReason::kEligible);
}

TEST(Eligibility, SfZeroAndNoExtraCandidate) {
  SelectionFrequencyTable sft;
  sft.add("img", 0, 0, 9);
  sft.add("img", 1, 9, 9);
  EXPECT_EQ(classify_eligible(cands({0, 1}), sft).reason, EligibilityReason::kSfZero);

  SelectionFrequencyTable sft2;
  sft2.add("img", 0, 5, 9);
  sft2.add("img", 1, 5, 9);
  EXPECT_EQ(classify_eligible(cands({0}), sft2).reason, EligibilityReason::kNoExtraCandidate);
  EXPECT_EQ(classify_eligible(cands({0, 1}), sft2).reason, EligibilityReason::kEligible);
}

TEST(Eligibility, OnlyLabelsSeenBySixCount) {
  SelectionFrequencyTable sft;
  sft.add("img", 0, 9, 9);
  sft.add("img", 1, 5, 5);  // seen by only 5 annotators: ignored for dominance
  sft.add("img", 2, 1, 9);
  EXPECT_EQ(classify_eligible(cands({0, 1, 2}), sft).reason, EligibilityReason::kDominantDatasetLabel);
  sft.add("img", 1, 1, 1);  // now 6/6
  EXPECT_EQ(classify_eligible(cands({0, 1, 2}), sft).reason, EligibilityReason::kEligible);
}

TEST(Eligibility, ReasonRoundTrip) {
  for (auto r : {EligibilityReason::kSfZero, EligibilityReason::kDominantDatasetLabel,
                 EligibilityReason::kNoExtraCandidate, EligibilityReason::kEligible})
    EXPECT_EQ(eligibility_reason_from_string(to_string(r)), r);
}
