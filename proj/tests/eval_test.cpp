#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "csst/css.hpp"
#include "csst/eval.hpp"
#include "fixtures.hpp"

using namespace csst;
using csst::testing::model_for;
using csst::testing::small_config;

namespace {

const Benchmark& bench() {
  static const Benchmark b = generate_benchmark(small_config(61, 400, 200));
  return b;
}

// Every weight zero except the classifier bias: predicts `answer` everywhere.
ModelParams constant_model(std::size_t answer) {
  ModelParams p = model_for(bench(), 0);
  for (auto& t : p.tensors()) std::fill(t.values.begin(), t.values.end(), 0.0);
  p[Param::kClassifierB].values[answer] = 5.0;
  return p;
}

Sample labelled(std::size_t qtype, AnswerMap answers) {
  Sample s;
  s.qtype_id = qtype;
  s.answers = std::move(answers);
  return s;
}

std::vector<double> onehot_logits(std::size_t n, std::size_t hot) {
  std::vector<double> v(n, 0.0);
  v[hot] = 1.0;
  return v;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Test samples whose anchor answer is replaced by `answer`.
std::vector<Sample> relabelled(std::size_t n, std::size_t answer) {
  std::vector<Sample> out(bench().test.begin(), bench().test.begin() + static_cast<std::ptrdiff_t>(n));
  for (auto& s : out) s.answers = {{answer, 1.0}};
  return out;
}

}  // namespace

// ---- accuracy -----------------------------------------------------------

TEST(Accuracy, PerfectAndWrong) {
  std::vector<Sample> split{labelled(0, {{1, 1.0}}), labelled(1, {{2, 1.0}})};
  std::vector<std::vector<double>> right{onehot_logits(4, 1), onehot_logits(4, 2)};
  std::vector<std::vector<double>> wrong{onehot_logits(4, 0), onehot_logits(4, 0)};
  EXPECT_EQ(accuracy_from_logits(right, split).overall, 100.0);
  EXPECT_EQ(accuracy_from_logits(wrong, split).overall, 0.0);
}

TEST(Accuracy, HandFixtureWithSoftScores) {
  // qtype 0: 1.0, 0.6, 0, 0.3   qtype 1: 1, 1, 0, 0, 0.6, 0
  std::vector<Sample> split{
      labelled(0, {{0, 1.0}}),           labelled(0, {{0, 1.0}, {1, 0.6}}), labelled(0, {{2, 1.0}}),
      labelled(0, {{3, 0.3}, {2, 1.0}}), labelled(1, {{5, 1.0}}),           labelled(1, {{5, 1.0}}),
      labelled(1, {{6, 1.0}}),           labelled(1, {{7, 1.0}}),           labelled(1, {{4, 1.0}, {5, 0.6}}),
      labelled(1, {{4, 1.0}}),
  };
  const std::vector<std::size_t> pred{0, 1, 0, 3, 5, 5, 5, 5, 5, 5};
  std::vector<std::vector<double>> logits;
  for (auto a : pred) logits.push_back(onehot_logits(8, a));
  const auto r = accuracy_from_logits(logits, split);
  EXPECT_NEAR(r.overall, 100.0 * 4.5 / 10.0, 1e-12);
  EXPECT_NEAR(r.per_qtype.at(0), 100.0 * 1.9 / 4.0, 1e-12);
  EXPECT_NEAR(r.per_qtype.at(1), 100.0 * 2.6 / 6.0, 1e-12);
  EXPECT_EQ(r.counts.at(0), 4u);
  EXPECT_EQ(r.counts.at(1), 6u);
}

TEST(Accuracy, RejectsMismatchedInput) {
  std::vector<Sample> split{labelled(0, {{0, 1.0}})};
  EXPECT_THROW(accuracy_from_logits(std::vector<std::vector<double>>{}, split), std::invalid_argument);
  EXPECT_THROW(accuracy_from_logits(std::vector<std::vector<double>>{}, std::vector<Sample>{}),
               std::invalid_argument);
}

TEST(Accuracy, ModelPathMatchesLogitPath) {
  const auto& b = bench();
  const auto p = model_for(b, 62);
  const auto logits = split_logits(p, b.test, 1);
  EXPECT_EQ(accuracy(p, b.test, 3).overall, accuracy_from_logits(logits, b.test).overall);
}

// ---- head / tail ---------------------------------------------------------

TEST(HeadTail, UniformPriorsPutEverythingInHead) {
  const auto& b = bench();
  TrainPriors priors;
  priors.answers = b.vocab.qtype_answers;
  for (const auto& a : priors.answers) priors.freq.emplace_back(a.size(), 1.0 / a.size());
  const auto logits = split_logits(model_for(b, 63), b.test);
  const auto h = head_tail_from_logits(logits, b.test, priors);
  EXPECT_EQ(h.n_tail, 0u);
  EXPECT_EQ(h.n_head, b.test.size());
  EXPECT_FALSE(h.acc_tail.has_value());
  EXPECT_FALSE(h.delta.has_value());
}

TEST(HeadTail, PerfectPredictionsScoreEverySide) {
  const auto& b = bench();
  std::vector<std::vector<double>> logits;
  for (const auto& s : b.test) logits.push_back(onehot_logits(b.vocab.answers.size(), anchor_answer(s.answers)));
  const auto h = head_tail_from_logits(logits, b.test, TrainPriors::from_split(b.train, b.vocab));
  EXPECT_GT(h.n_tail, 0u);
  EXPECT_GT(h.n_head, 0u);
  EXPECT_EQ(h.n_tail + h.n_head, b.test.size());
  EXPECT_DOUBLE_EQ(*h.delta, (*h.acc_head - *h.acc_tail) / *h.acc_tail);
  EXPECT_DOUBLE_EQ(h.acc_all, accuracy_from_logits(logits, b.test).overall);
}

TEST(HeadTail, TailMatchesBruteForceCounts) {
  const auto& b = bench();
  const auto priors = TrainPriors::from_split(b.train, b.vocab);
  // count anchors per (qtype, answer) over the train split
  std::map<std::pair<std::size_t, std::size_t>, double> count;
  std::map<std::size_t, double> per_type;
  for (const auto& s : b.train) {
    count[{s.qtype_id, anchor_answer(s.answers)}] += 1;
    per_type[s.qtype_id] += 1;
  }
  for (const auto& s : b.test) {
    const double mean = per_type[s.qtype_id] / b.vocab.qtype_answers[s.qtype_id].size();
    const bool tail = count[{s.qtype_id, anchor_answer(s.answers)}] < mean;
    EXPECT_EQ(priors.is_tail(s), tail) << s.sample_id;
  }
}

// ---- AI -----------------------------------------------------------------

TEST(Ai, AlwaysWrongModelScoresZero) {
  const auto split = relabelled(20, 1);
  const auto p = constant_model(0);
  EXPECT_EQ(ai_score(p, split, vocab_sim(bench().vocab), 1), 0.0);
}

TEST(Ai, HandFixture) {
  // Zero weights give zero attribution everywhere, so the stable order picks
  // the first objects. Two of five samples are right and have SIM 1 there.
  auto split = relabelled(5, 3);
  split[2].answers = {{2, 1.0}};
  split[3].answers = {{2, 1.0}};
  split[4].answers = {{2, 1.0}};
  const SimProvider sim = [](const Sample& s) {
    std::vector<double> v(s.objects.size(), 0.25);
    v[0] = 1.0;
    return v;
  };
  const auto p = constant_model(3);
  EXPECT_NEAR(ai_score(p, split, sim, 1), 0.4, 1e-15);
  EXPECT_NEAR(ai_score(p, split, sim, 2), 0.5, 1e-15);
}

TEST(Ai, MatchesRecomputationFromAttributions) {
  const auto& b = bench();
  const auto p = model_for(b, 64);
  const auto sim = vocab_sim(b.vocab);
  const std::vector<std::size_t> ks{1, 2, 3};
  const auto got = ai_scores(p, b.test, sim, ks, 2);
  std::map<std::size_t, double> want;
  std::size_t correct = 0;
  for (const auto& s : b.test) {
    const std::size_t a = anchor_answer(s.answers);
    if (argmax(predict_logits(p, std::vector<ModelInput>{to_input(s)}).front()) != a) continue;
    ++correct;
    const auto c = object_contributions(p, s);
    const auto sv = sim_scores(s, b.vocab).values;
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t u = 0; u < c.units.size(); ++u) ranked.push_back({-std::abs(c.scores[u]), c.units[u]});
    std::sort(ranked.begin(), ranked.end());
    for (auto k : ks)
      for (std::size_t r = 0; r < k; ++r) want[k] += sv[ranked[r].second];
  }
  ASSERT_GT(correct, 0u);
  for (auto k : ks) EXPECT_NEAR(got.at(k), want[k] / b.test.size(), 1e-12) << k;
}

TEST(Ai, NonDecreasingInKForNonNegativeSim) {
  const auto& b = bench();
  const SimProvider sim = [&](const Sample& s) {
    auto v = sim_scores(s, b.vocab).values;
    for (auto& x : v) x = std::abs(x);
    return v;
  };
  const std::vector<std::size_t> ks{1, 2, 3, 4, 5};
  const auto got = ai_scores(model_for(b, 65), b.test, sim, ks);
  for (std::size_t k = 2; k <= 5; ++k) EXPECT_GE(got.at(k), got.at(k - 1));
  EXPECT_THROW(ai_score(model_for(b, 65), b.test, sim, 0), std::invalid_argument);
}

// ---- CI -----------------------------------------------------------------

TEST(Ci, ModelBlindToTheQuestionScoresZero) {
  const auto split = relabelled(30, 2);
  EXPECT_EQ(ci_score(constant_model(2), split), 0.0);
}

TEST(Ci, MatchesRecomputation) {
  const auto& b = bench();
  const auto p = model_for(b, 66);
  std::size_t hits = 0;
  for (const auto& s : b.test) {
    if (!s.meta.critical_word || s.question_tokens.size() < 2) continue;
    const std::size_t a = anchor_answer(s.answers);
    const auto before = predict_logits(p, std::vector<ModelInput>{to_input(s)}).front();
    const auto after =
        predict_logits(p, std::vector<ModelInput>{delete_word(to_input(s), *s.meta.critical_word)}).front();
    if (argmax(before) == a && before[a] > after[a]) ++hits;
  }
  EXPECT_GT(hits, 0u);
  EXPECT_DOUBLE_EQ(ci_score(p, b.test, 2), static_cast<double>(hits) / b.test.size());
}

TEST(Ci, SamplesWithoutACriticalWordOnlyCountInTheDenominator) {
  const auto& b = bench();
  const auto p = model_for(b, 67);
  std::vector<Sample> doubled(b.test.begin(), b.test.end());
  for (const auto& s : b.test) {
    Sample blank = s;
    blank.meta.critical_word.reset();
    doubled.push_back(blank);
  }
  EXPECT_NEAR(ci_score(p, doubled), 0.5 * ci_score(p, b.test), 1e-15);
}

// ---- CS -----------------------------------------------------------------

TEST(Consensus, GroupScoreClosedForms) {
  EXPECT_EQ(consensus_group_score(4, 4, 3), 1.0);
  EXPECT_EQ(consensus_group_score(4, 0, 1), 0.0);
  EXPECT_EQ(consensus_group_score(4, 1, 2), 0.0);
  EXPECT_DOUBLE_EQ(consensus_group_score(4, 3, 1), 0.75);
  EXPECT_THROW(consensus_group_score(3, 1, 4), std::invalid_argument);
  EXPECT_THROW(consensus_group_score(3, 4, 1), std::invalid_argument);
  EXPECT_THROW(consensus_group_score(3, 1, 0), std::invalid_argument);
}

TEST(Consensus, ThreeOfFourPairsByEnumeration) {
  const std::vector<int> correct{1, 1, 1, 0};
  int good = 0, all = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      ++all;
      good += correct[i] && correct[j];
    }
  EXPECT_EQ(good * 2, all);
  EXPECT_DOUBLE_EQ(consensus_group_score(4, 3, 2), static_cast<double>(good) / all);
}

TEST(Consensus, EnumerationAgreesEverywhere) {
  for (std::size_t n = 1; n <= 6; ++n)
    for (std::size_t c = 0; c <= n; ++c)
      for (std::size_t k = 1; k <= n; ++k) {
        std::size_t good = 0, all = 0;
        for (unsigned mask = 0; mask < (1u << n); ++mask) {
          if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
          ++all;
          good += (mask & ((1u << c) - 1)) == mask;  // subset of the first c
        }
        EXPECT_NEAR(consensus_group_score(n, c, k), static_cast<double>(good) / all, 1e-15);
      }
}

TEST(Consensus, AllRightAndAllWrong) {
  const auto& b = bench();
  auto groups = make_rephrasings(std::span(b.test).first(10), b.vocab, 4, 3);
  for (auto& g : groups)
    for (auto& v : g.variants) v.answers = {{1, 1.0}};
  EXPECT_EQ(cs_k(constant_model(1), groups, 2), 100.0);
  EXPECT_EQ(cs_k(constant_model(0), groups, 1), 0.0);
}

TEST(Consensus, NonIncreasingInK) {
  const auto& b = bench();
  const auto groups = make_rephrasings(b.test, b.vocab, 4, 5);
  const std::vector<std::size_t> ks{1, 2, 3, 4};
  for (std::uint64_t seed : {68, 69, 70}) {
    const auto cs = cs_scores(model_for(b, seed), groups, ks, 2);
    for (std::size_t k = 2; k <= 4; ++k) EXPECT_LE(cs.at(k), cs.at(k - 1)) << seed;
  }
}

// ---- report -------------------------------------------------------------

TEST(Evaluate, ThreadCountDoesNotChangeResults) {
  const auto& b = bench();
  const auto p = model_for(b, 71);
  EvalOptions one, three;
  three.threads = 3;
  EXPECT_EQ(evaluate(p, b.train, b.test, b.vocab, one).to_json(),
            evaluate(p, b.train, b.test, b.vocab, three).to_json());
}

TEST(Evaluate, MetricsFilesRoundTrip) {
  const auto& b = bench();
  const auto r = evaluate(model_for(b, 72), b.train, b.test, b.vocab);
  const auto dir = csst::testing::scratch_dir("metrics");
  write_metrics(dir, r);
  const auto j = nlohmann::json::parse(csst::testing::slurp(dir / "metrics.json"));
  EXPECT_EQ(j.at("schema_version"), kMetricsSchemaVersion);
  EXPECT_EQ(j.at("n_samples"), b.test.size());
  EXPECT_DOUBLE_EQ(j.at("accuracy").at("overall").get<double>(), r.accuracy.overall);
  EXPECT_DOUBLE_EQ(j.at("ci").get<double>(), r.ci);
  for (const char* k : {"1", "2", "3"}) EXPECT_TRUE(j.at("ai").contains(k));
  for (const char* k : {"1", "2", "3", "4"}) EXPECT_TRUE(j.at("cs").contains(k));
  const std::string csv = csst::testing::slurp(dir / "metrics.csv");
  EXPECT_EQ(csv.rfind("metric,value\naccuracy,", 0), 0u);
  for (const char* key : {"\nci,", "\nai_1,", "\ncs_4,", "\nacc_tail,", "\nn_samples,"})
    EXPECT_NE(csv.find(key), std::string::npos) << key;
}
