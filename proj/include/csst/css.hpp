#pragma once

// Counterfactual sample synthesis: gradient-based contribution scores for
// objects and words, dynamic critical-object selection with an overlap
// extension, critical-word selection, and dynamic soft answer assigning.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "csst/dataset.hpp"
#include "csst/model.hpp"
#include "csst/rng.hpp"

namespace csst {

struct CssConfig {
  double eta = 0.65;
  double iou_threshold = 0.6;
  std::size_t init_set_size = 4;
  double delta = 0.5;  // P(Q-CSS); V-CSS runs when a U[0,1) draw is >= delta
  std::size_t top_k_words = 1;

  void validate() const;
};

enum class UnitKind { kObject, kWord };

/// s(a, unit) = sum over feature coordinates of d sigmoid(logit_a) / d unit,
/// for every unmasked unit.
struct ContributionScores {
  UnitKind kind = UnitKind::kObject;
  std::size_t anchor = 0;
  std::vector<std::size_t> units;  // object slots or token positions
  std::vector<double> scores;      // aligned with units

  /// Throws std::out_of_range if `unit` was masked.
  double score_of(std::size_t unit) const;
};

enum class CfKind { kVisual, kQuestion };

const char* to_string(CfKind kind);

/// `masked`: units removed (objects) or replaced by [MASK] (words) in the
/// counterfactual input, i.e. I+ for V-CSS and the critical words for Q-CSS.
/// `kept`: the remaining candidates, i.e. I- for V-CSS and the non-critical
/// non-question-type words for Q-CSS. The pair partitions the candidate set.
struct CounterfactualSample {
  std::uint64_t origin_id = 0;
  CfKind kind = CfKind::kVisual;
  std::vector<std::size_t> masked;
  std::vector<std::size_t> kept;
  AnswerMap answers;  // a-, same ids as the origin
  ContributionScores scores;
  bool fell_back = false;  // V-CSS requested but every object was critical
};

/// Indices of the `size` largest SIM values (ties -> lower index), ascending.
std::vector<std::size_t> io_sel(std::span<const double> sim, std::size_t size);

struct ObjectSplit {
  std::vector<std::size_t> critical;  // I+, ascending
  std::vector<std::size_t> rest;      // I- = I \ I+, ascending
  std::size_t k = 0;                  // dynamic K before the overlap extension
};

/// Smallest K such that the exp-share of the top-K initial objects exceeds
/// eta. `scores` lists one score per entry of `initial`.
std::size_t dynamic_k(std::span<const double> scores, double eta);

ObjectSplit co_sel(std::span<const std::size_t> initial, std::span<const double> scores,
                   std::span<const BBox> boxes, const CssConfig& config);

struct WordSplit {
  std::vector<std::size_t> critical;  // masked in Q-
  std::vector<std::size_t> others;    // masked in Q+
};

WordSplit cw_sel(std::span<const std::size_t> tokens, const VocabSpec& vocab,
                 const ContributionScores& scores, const CssConfig& config);

/// Batched attribution. `anchors[r]` is the answer whose probability is
/// differentiated for row r.
struct Attribution {
  std::vector<ContributionScores> objects;
  std::vector<ContributionScores> words;
};

Attribution attribute(const ModelParams& params, std::span<const ModelInput> inputs,
                      std::span<const std::size_t> anchors);

ContributionScores object_contributions(const ModelParams& params, const Sample& sample);
ContributionScores word_contributions(const ModelParams& params, const Sample& sample);

/// t- = 1 - sigmoid(logit) for every ground-truth answer id.
AnswerMap dsa_from_logits(std::span<const double> logits, const AnswerMap& origin);
AnswerMap dsa_ass(const ModelParams& params, const ModelInput& kept_input, const AnswerMap& origin);

/// Input the counterfactual describes (I-,Q) or (I,Q-).
ModelInput counterfactual_input(const Sample& origin, const CounterfactualSample& cf);
/// Input handed to DSA_Ass: (I+,Q) or (I,Q+).
ModelInput kept_side_input(const Sample& origin, const CounterfactualSample& cf);

/// One draw per sample decides V-CSS vs Q-CSS.
CounterfactualSample synthesize(const ModelParams& params, const Sample& sample,
                                const VocabSpec& vocab, const CssConfig& config, Rng& rng);
std::vector<CounterfactualSample> synthesize_batch(const ModelParams& params,
                                                   std::span<const Sample* const> samples,
                                                   const VocabSpec& vocab, const CssConfig& config,
                                                   Rng& rng);

/// Fixed kind per sample. With `assign_answers` false the a- map is left
/// empty (used for negatives, whose targets are never read).
std::vector<CounterfactualSample> synthesize_kinds(const ModelParams& params,
                                                   std::span<const Sample* const> samples,
                                                   std::span<const CfKind> kinds,
                                                   const VocabSpec& vocab, const CssConfig& config,
                                                   bool assign_answers = true);

}  // namespace csst
