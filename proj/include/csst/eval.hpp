#pragma once

// Test-time metrics: soft-score accuracy, head/tail split by train answer
// frequency, average importance of top-attributed objects, confidence
// improvement under critical-word removal, and the consensus score over
// rephrasings.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csst/dataset.hpp"
#include "csst/model.hpp"

namespace csst {

inline constexpr int kMetricsSchemaVersion = 1;

/// Inference logits (VQA head) for a split, computed on `threads` workers.
std::vector<std::vector<double>> split_logits(const ModelParams& params, std::span<const Sample> split,
                                              std::size_t threads = 1);

struct AccuracyResult {
  double overall = 0.0;                       // percent
  std::map<std::size_t, double> per_qtype;    // percent
  std::map<std::size_t, std::size_t> counts;  // samples per qtype
};

AccuracyResult accuracy_from_logits(std::span<const std::vector<double>> logits,
                                    std::span<const Sample> split);
AccuracyResult accuracy(const ModelParams& params, std::span<const Sample> split, std::size_t threads = 1);

/// Train answer frequencies per question type, over vocab.qtype_answers.
struct TrainPriors {
  std::vector<std::vector<std::size_t>> answers;  // per qtype, answer ids
  std::vector<std::vector<double>> freq;          // aligned with answers

  static TrainPriors from_split(std::span<const Sample> train, const VocabSpec& vocab);
  /// Tail: the anchor answer's frequency is strictly below its group mean.
  bool is_tail(const Sample& s) const;
};

struct HeadTail {
  double acc_all = 0.0;
  std::optional<double> acc_tail, acc_head, delta;  // absent when a side is empty
  std::size_t n_tail = 0, n_head = 0;
};

HeadTail head_tail_from_logits(std::span<const std::vector<double>> logits, std::span<const Sample> split,
                               const TrainPriors& priors);
HeadTail head_tail_metrics(const ModelParams& params, std::span<const Sample> split,
                           const TrainPriors& priors, std::size_t threads = 1);

using SimProvider = std::function<std::vector<double>(const Sample&)>;

SimProvider vocab_sim(const VocabSpec& vocab);

/// Sum over correctly answered samples of the SIM of the k objects with the
/// largest |s(a, v)|, divided by the number of samples.
double ai_score(const ModelParams& params, std::span<const Sample> split, const SimProvider& sim,
                std::size_t k, std::size_t threads = 1);
/// AI for several k from one attribution pass.
std::map<std::size_t, double> ai_scores(const ModelParams& params, std::span<const Sample> split,
                                        const SimProvider& sim, std::span<const std::size_t> ks,
                                        std::size_t threads = 1);

/// Fraction of samples answered correctly whose anchor-answer probability
/// drops when the critical word is deleted. Samples whose question has a
/// single word, or no recorded critical word, count towards N only.
double ci_score(const ModelParams& params, std::span<const Sample> split, std::size_t threads = 1);

/// C(c, k) / C(n, k): probability that a random k-subset of n rephrasings,
/// c of them correct, is all correct. Throws if k > n or c > n.
double consensus_group_score(std::size_t n, std::size_t c, std::size_t k);

/// Mean group score x 100. A rephrasing counts as correct when its argmax
/// answer is the anchor answer.
double cs_k(const ModelParams& params, std::span<const RephrasingGroup> groups, std::size_t k,
            std::size_t threads = 1);
std::map<std::size_t, double> cs_scores(const ModelParams& params, std::span<const RephrasingGroup> groups,
                                        std::span<const std::size_t> ks, std::size_t threads = 1);

struct MetricsReport {
  std::size_t n_samples = 0;
  AccuracyResult accuracy;
  HeadTail head_tail;
  std::map<std::size_t, double> ai;  // k -> AI(k)
  double ci = 0.0;
  std::map<std::size_t, double> cs;  // k -> CS(k)
  std::size_t n_groups = 0;

  std::string to_json() const;
  std::string to_csv() const;
};

struct EvalOptions {
  std::vector<std::size_t> ai_ks{1, 2, 3};
  std::vector<std::size_t> cs_ks{1, 2, 3, 4};
  std::size_t rephrasings_per_group = 4;
  std::uint64_t rephrasing_seed = 0;
  std::size_t threads = 1;
};

MetricsReport evaluate(const ModelParams& params, std::span<const Sample> train, std::span<const Sample> test,
                       const VocabSpec& vocab, const EvalOptions& options = {});

void write_metrics(const std::filesystem::path& dir, const MetricsReport& report);

}  // namespace csst
