#include <cmath>

#include <gtest/gtest.h>

#include "csst/css.hpp"
#include "css_invariants.hpp"
#include "fixtures.hpp"

using namespace csst;
using csst::testing::model_for;
using csst::testing::small_config;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

const Benchmark& bench() {
  static const Benchmark b = generate_benchmark(small_config(31));
  return b;
}

// sigma(logit_anchor) for one input, straight through the inference path.
double anchor_prob(const ModelParams& p, const ModelInput& in, std::size_t anchor) {
  return sigmoid(predict_logits(p, std::vector<ModelInput>{in}).front()[anchor]);
}

}  // namespace

TEST(IoSel, Examples) {
  EXPECT_EQ(io_sel(std::vector<double>{0.9, 0.1, 0.5}, 2), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(io_sel(std::vector<double>{0.9, 0.1, 0.5}, 7), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(io_sel(std::vector<double>{0.3, 0.3, 0.3, 0.3}, 2), (std::vector<std::size_t>{0, 1}));
}

TEST(DynamicK, SoftmaxArithmetic) {
  // e^2 / (e^2 + e + 1)
  const double share = std::exp(2.0) / (std::exp(2.0) + std::exp(1.0) + 1.0);
  EXPECT_NEAR(share, 0.6652, 1e-4);
  EXPECT_EQ(dynamic_k(std::vector<double>{2.0, 1.0, 0.0}, 0.65), 1u);
  EXPECT_EQ(dynamic_k(std::vector<double>{0.0, 1.0, 2.0}, 0.65), 1u);
  EXPECT_EQ(dynamic_k(std::vector<double>{2.0, 1.0, 0.0}, 0.67), 2u);
}

TEST(DynamicK, EqualScores) {
  EXPECT_EQ(dynamic_k(std::vector<double>{0.4, 0.4, 0.4, 0.4}, 0.65), 3u);
  EXPECT_EQ(dynamic_k(std::vector<double>{0.4, 0.4, 0.4, 0.4}, 0.5), 3u);  // 2/4 is not > 0.5
  EXPECT_EQ(dynamic_k(std::vector<double>{0.4, 0.4, 0.4, 0.4}, 0.49), 2u);
  EXPECT_THROW(dynamic_k(std::vector<double>{}, 0.5), std::invalid_argument);
}

TEST(CoSel, OverlapPullsInALowScoringDuplicate) {
  const std::vector<BBox> boxes{{0.1, 0.1, 0.4, 0.4}, {0.5, 0.5, 0.9, 0.9}, {0.1, 0.1, 0.4, 0.4}, {0, 0.6, 0.3, 0.9}};
  const std::vector<std::size_t> initial{0, 1, 2};
  const ObjectSplit split = co_sel(initial, std::vector<double>{3.0, 0.0, -10.0}, boxes, CssConfig{});
  EXPECT_EQ(split.k, 1u);
  EXPECT_EQ(split.critical, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(split.rest, (std::vector<std::size_t>{1, 3}));
}

TEST(CoSel, ObjectsOutsideTheInitialSetStayInRest) {
  const std::vector<BBox> boxes{{0, 0, 0.2, 0.2}, {0.3, 0.3, 0.5, 0.5}, {0.6, 0.6, 0.8, 0.8}};
  const ObjectSplit split = co_sel(std::vector<std::size_t>{2}, std::vector<double>{0.1}, boxes, CssConfig{});
  EXPECT_EQ(split.critical, (std::vector<std::size_t>{2}));
  EXPECT_EQ(split.rest, (std::vector<std::size_t>{0, 1}));
}

TEST(CoSel, Errors) {
  const std::vector<BBox> boxes{{0, 0, 1, 1}};
  EXPECT_THROW(co_sel(std::vector<std::size_t>{}, std::vector<double>{}, boxes, CssConfig{}), std::invalid_argument);
  EXPECT_THROW(co_sel(std::vector<std::size_t>{0}, std::vector<double>{1, 2}, boxes, CssConfig{}),
               std::invalid_argument);
}

TEST(Contributions, ObjectScoresMatchUniformShiftDifferences) {
  const auto& b = bench();
  Rng rng(32);
  for (int trial = 0; trial < 4; ++trial) {
    const auto p = model_for(b, rng.next());
    const Sample& s = b.train[rng.below(b.train.size())];
    const auto scores = object_contributions(p, s);
    const std::size_t anchor = anchor_answer(s.answers);
    ASSERT_EQ(scores.units.size(), s.objects.size());
    EXPECT_EQ(scores.anchor, anchor);
    const std::size_t F = p.dims().feature_dim;
    constexpr double eps = 1e-5;
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      ModelInput up = to_input(s), down = up;
      for (std::size_t k = 0; k < F; ++k) {
        up.features[i * F + k] += eps;
        down.features[i * F + k] -= eps;
      }
      const double numeric = (anchor_prob(p, up, anchor) - anchor_prob(p, down, anchor)) / (2 * eps);
      const double analytic = scores.score_of(i);
      EXPECT_LE(std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)), 1e-4) << i;
    }
  }
}

TEST(Contributions, MaskedObjectHasNoScore) {
  const auto& b = bench();
  const auto p = model_for(b, 1);
  const Sample& s = b.train[0];
  const ModelInput in = mask_objects(to_input(s), std::vector<std::size_t>{3});
  const std::size_t anchor = anchor_answer(s.answers);
  const auto attr = attribute(p, std::vector<ModelInput>{in}, std::vector<std::size_t>{anchor});
  EXPECT_EQ(attr.objects[0].units.size(), s.objects.size() - 1);
  EXPECT_THROW(attr.objects[0].score_of(3), std::out_of_range);
  EXPECT_NO_THROW(attr.objects[0].score_of(2));
}

TEST(Contributions, WordScoresMatchEmbeddingDifferences) {
  const auto& b = bench();
  Rng rng(33);
  for (int trial = 0; trial < 4; ++trial) {
    auto p = model_for(b, rng.next());
    const Sample& s = b.train[rng.below(b.train.size())];
    const auto scores = word_contributions(p, s);
    const std::size_t anchor = anchor_answer(s.answers);
    ASSERT_EQ(scores.units.size(), s.question_tokens.size());
    const std::size_t E = p.dims().embed_dim;
    constexpr double eps = 1e-5;
    // Shifting a token's embedding row moves every position holding that
    // token, so the oracle is the sum of their scores.
    for (std::size_t j = 0; j < s.question_tokens.size(); ++j) {
      const std::size_t tok = s.question_tokens[j];
      double analytic = 0;
      for (std::size_t u = 0; u < scores.units.size(); ++u)
        if (s.question_tokens[scores.units[u]] == tok) analytic += scores.scores[u];
      auto& table = p[Param::kTokenEmbedding].values;
      const ModelInput in = to_input(s);
      for (std::size_t k = 0; k < E; ++k) table[tok * E + k] += eps;
      const double up = anchor_prob(p, in, anchor);
      for (std::size_t k = 0; k < E; ++k) table[tok * E + k] -= 2 * eps;
      const double down = anchor_prob(p, in, anchor);
      for (std::size_t k = 0; k < E; ++k) table[tok * E + k] += eps;
      const double numeric = (up - down) / (2 * eps);
      EXPECT_LE(std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)), 1e-4) << j;
    }
  }
}

TEST(Contributions, MaskTokenIsExcluded) {
  const auto& b = bench();
  const auto p = model_for(b, 2);
  const Sample& s = b.train[1];
  const ModelInput in = mask_words(to_input(s), std::vector<std::size_t>{3});
  const auto attr = attribute(p, std::vector<ModelInput>{in}, std::vector<std::size_t>{anchor_answer(s.answers)});
  EXPECT_EQ(attr.words[0].units, (std::vector<std::size_t>{0, 1, 2, 4, 5}));
}

TEST(Contributions, BatchedEqualsSingle) {
  const auto& b = bench();
  const auto p = model_for(b, 3);
  std::vector<ModelInput> inputs;
  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < 5; ++i) {
    inputs.push_back(to_input(b.train[i]));
    anchors.push_back(anchor_answer(b.train[i].answers));
  }
  const auto batched = attribute(p, inputs, anchors);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto single = object_contributions(p, b.train[i]);
    for (std::size_t u = 0; u < single.units.size(); ++u)
      EXPECT_NEAR(batched.objects[i].scores[u], single.scores[u], 1e-15);
  }
}

namespace {

// Question "w0 w1 x x x x" with question-type words at 0 and 1.
struct WordCase {
  std::vector<std::size_t> tokens;
  ContributionScores scores;
};

WordCase word_case(const VocabSpec& v, std::vector<double> content_scores) {
  WordCase c;
  c.tokens = {v.qtype_words[0][0], v.qtype_words[0][1]};
  for (std::size_t t = 0; t < v.tokens.size() && c.tokens.size() < 6; ++t)
    if (v.is_content_word(t)) c.tokens.push_back(t);
  c.scores.kind = UnitKind::kWord;
  c.scores.units = {0, 1, 2, 3, 4, 5};
  c.scores.scores = {9.0, 9.0};
  c.scores.scores.insert(c.scores.scores.end(), content_scores.begin(), content_scores.end());
  return c;
}

}  // namespace

TEST(CwSel, PeakAtThree) {
  const auto& v = bench().vocab;
  const auto c = word_case(v, {0.1, 0.7, -0.2, 0.3});
  const WordSplit split = cw_sel(c.tokens, v, c.scores, CssConfig{});
  EXPECT_EQ(split.critical, (std::vector<std::size_t>{3}));
  EXPECT_EQ(split.others, (std::vector<std::size_t>{2, 4, 5}));
}

TEST(CwSel, AllContentWordsCritical) {
  const auto& v = bench().vocab;
  const auto c = word_case(v, {0.1, 0.7, -0.2, 0.3});
  CssConfig cfg;
  cfg.top_k_words = 4;
  const WordSplit split = cw_sel(c.tokens, v, c.scores, cfg);
  EXPECT_EQ(split.critical, (std::vector<std::size_t>{2, 3, 4, 5}));
  EXPECT_TRUE(split.others.empty());
}

TEST(CwSel, TiesGoToTheLowerPosition) {
  const auto& v = bench().vocab;
  const auto c = word_case(v, {0.5, 0.5, 0.5, 0.1});
  CssConfig cfg;
  cfg.top_k_words = 2;
  EXPECT_EQ(cw_sel(c.tokens, v, c.scores, cfg).critical, (std::vector<std::size_t>{2, 3}));
}

TEST(CwSel, QuestionWithoutContentWordsThrows) {
  const auto& v = bench().vocab;
  const std::vector<std::size_t> tokens{v.qtype_words[0][0], v.qtype_words[0][1]};
  ContributionScores s{UnitKind::kWord, 0, {0, 1}, {1.0, 2.0}};
  EXPECT_THROW(cw_sel(tokens, v, s, CssConfig{}), std::invalid_argument);
}

TEST(Dsa, SaturatedKeptSideGivesEmptyTargets) {
  const AnswerMap origin{{1, 1.0}, {3, 0.6}};
  const auto t = dsa_from_logits(std::vector<double>{0, 800, 0, 800}, origin);
  EXPECT_EQ(t.at(1), 0.0);
  EXPECT_EQ(t.at(3), 0.0);
}

TEST(Dsa, ComplementOfKeptProbability) {
  const AnswerMap origin{{0, 1.0}, {2, 0.6}};
  const auto t = dsa_from_logits(std::vector<double>{logit(0.9), -5.0, logit(0.2)}, origin);
  ASSERT_EQ(answer_ids(t), answer_ids(origin));
  EXPECT_NEAR(t.at(0), 0.1, 1e-15);
  EXPECT_NEAR(t.at(2), 0.8, 1e-15);
  EXPECT_THROW(dsa_from_logits(std::vector<double>{0.0}, origin), std::out_of_range);
}

TEST(Dsa, UntrainedModelGivesOpenInterval) {
  const auto& b = bench();
  const auto p = model_for(b, 4);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto t = dsa_ass(p, to_input(b.train[i]), b.train[i].answers);
    for (const auto& [id, v] : t) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Synthesize, DeltaExtremesFixTheKind) {
  const auto& b = bench();
  const auto p = model_for(b, 5);
  Rng rng(34);
  CssConfig always_v, always_q;
  always_v.delta = 0.0;
  always_q.delta = 1.0;
  for (std::size_t i = 0; i < 100; ++i) {
    const auto v = synthesize(p, b.train[i], b.vocab, always_v, rng);
    EXPECT_TRUE(v.kind == CfKind::kVisual || v.fell_back);
    EXPECT_EQ(synthesize(p, b.train[i], b.vocab, always_q, rng).kind, CfKind::kQuestion);
  }
}

TEST(Synthesize, HalfDeltaSplitsEvenly) {
  const auto& b = bench();
  const auto p = model_for(b, 6);
  Rng rng(35);
  std::vector<const Sample*> batch;
  for (const auto& s : b.train) batch.push_back(&s);
  std::size_t visual = 0, total = 0;
  while (total < 10000) {
    for (const auto& cf : synthesize_batch(p, batch, b.vocab, CssConfig{}, rng)) {
      visual += cf.kind == CfKind::kVisual || cf.fell_back;
      if (++total == 10000) break;
    }
  }
  const double frac = static_cast<double>(visual) / 10000.0;
  EXPECT_GE(frac, 0.48);
  EXPECT_LE(frac, 0.52);
}

TEST(Synthesize, AllObjectsCriticalFallsBackToQuestion) {
  const auto& b = bench();
  const auto p = model_for(b, 7);
  Sample s = b.train[2];
  for (auto& o : s.objects) o.bbox = {0.2, 0.2, 0.6, 0.6};
  CssConfig cfg;
  cfg.delta = 0.0;
  Rng rng(36);
  const auto cf = synthesize(p, s, b.vocab, cfg, rng);
  EXPECT_TRUE(cf.fell_back);
  EXPECT_EQ(cf.kind, CfKind::kQuestion);
  EXPECT_EQ(cf.scores.kind, UnitKind::kWord);
}

TEST(Synthesize, CounterfactualInputsMaskTheRightSide) {
  const auto& b = bench();
  const auto p = model_for(b, 8);
  Rng rng(37);
  for (std::size_t i = 0; i < 40; ++i) {
    const Sample& s = b.train[i];
    const auto cf = synthesize(p, s, b.vocab, CssConfig{}, rng);
    const ModelInput minus = counterfactual_input(s, cf), plus = kept_side_input(s, cf);
    if (cf.kind == CfKind::kVisual) {
      for (auto m : cf.masked) EXPECT_EQ(minus.object_keep[m], 0);
      for (auto k : cf.kept) EXPECT_EQ(minus.object_keep[k], 1);
      for (auto k : cf.kept) EXPECT_EQ(plus.object_keep[k], 0);
      for (auto m : cf.masked) EXPECT_EQ(plus.object_keep[m], 1);
    } else {
      for (auto m : cf.masked) EXPECT_EQ(minus.tokens[m], VocabSpec::kMaskId);
      for (auto k : cf.kept) EXPECT_EQ(plus.tokens[k], VocabSpec::kMaskId);
      for (auto m : cf.masked) EXPECT_EQ(plus.tokens[m], s.question_tokens[m]);
      for (std::size_t j = 0; j < s.question_tokens.size(); ++j)
        if (b.vocab.is_qtype_word(s.question_tokens[j])) {
          EXPECT_EQ(plus.tokens[j], s.question_tokens[j]);
          EXPECT_EQ(minus.tokens[j], s.question_tokens[j]);
        }
    }
  }
}

TEST(CssConfig, Validation) {
  CssConfig c;
  EXPECT_NO_THROW(c.validate());
  c.eta = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.iou_threshold = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.top_k_words = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.delta = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Invariants, ThousandRandomCases) {
  const auto tally = csst::testing::run_css_invariants(1000, 38);
  EXPECT_EQ(tally.cases, 1000u);
  for (const auto& [prop, n] : tally.failures) EXPECT_EQ(n, 0u) << prop << ": " << tally.first.at(prop);
}
