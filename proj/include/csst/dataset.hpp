#pragma once

// VQA samples, the vocabulary/semantic-embedding spec, a synthetic benchmark
// with a controlled train/test answer-prior shift, and the on-disk format.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csst {

/// Normalised image coordinates, x1 < x2 and y1 < y2.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 1, y2 = 1;
  bool valid() const { return x1 < x2 && y1 < y2; }
  double area() const { return (x2 - x1) * (y2 - y1); }
  bool operator==(const BBox&) const = default;
};

double iou(const BBox& a, const BBox& b);

struct ObjectFeature {
  std::vector<double> vector;
  std::size_t category_id = 0;
  BBox bbox;
  bool operator==(const ObjectFeature&) const = default;
};

/// answer id -> soft target score in [0, 1]. Ordered so iteration is stable.
using AnswerMap = std::map<std::size_t, double>;

/// Generator-only causal ground truth.
struct GroundTruthMeta {
  std::vector<std::size_t> critical_objects;
  std::optional<std::size_t> critical_word;  // token position
  bool operator==(const GroundTruthMeta&) const = default;
};

struct Sample {
  std::uint64_t sample_id = 0;
  std::vector<ObjectFeature> objects;
  std::vector<std::size_t> question_tokens;
  std::size_t qtype_id = 0;
  AnswerMap answers;
  GroundTruthMeta meta;
  bool operator==(const Sample&) const = default;
};

/// Ground-truth answer with the highest soft target (ties -> lowest id).
std::size_t anchor_answer(const AnswerMap& answers);
std::vector<std::size_t> answer_ids(const AnswerMap& answers);

/// Throws std::invalid_argument when a sample breaks its invariants.
void validate_sample(const Sample& s, std::size_t feature_dim);

enum class TokenKind { kMask, kQtypeWord, kNoun, kFiller };

struct VocabSpec {
  std::vector<std::string> tokens;
  std::vector<TokenKind> token_kinds;
  std::vector<std::string> answers;
  std::vector<std::string> categories;
  std::size_t embed_dim = 0;
  std::vector<double> category_embeddings;  // |categories| x embed_dim, unit rows
  std::vector<double> token_embeddings;     // |tokens| x embed_dim, unit rows
  std::vector<std::vector<std::size_t>> qtype_words;    // marker token ids per qtype
  std::vector<std::vector<std::size_t>> qtype_answers;  // answer ids per qtype
  std::vector<std::size_t> category_noun;       // category -> noun token id
  std::vector<std::size_t> category_attribute;  // category -> attribute index

  static constexpr std::size_t kMaskId = 0;
  static constexpr const char* kMaskToken = "[MASK]";

  std::size_t mask_id() const { return kMaskId; }
  std::size_t n_qtypes() const { return qtype_words.size(); }
  bool is_qtype_word(std::size_t token) const;
  bool is_content_word(std::size_t token) const;
  std::span<const double> category_embedding(std::size_t c) const;
  std::span<const double> token_embedding(std::size_t t) const;

  bool operator==(const VocabSpec&) const = default;
};

/// The generator's labelling rule: the attribute of the critical object's
/// category, read through the question type's answer list. The critical word
/// must name the critical object's noun.
std::size_t label_answer(const VocabSpec& vocab, std::size_t qtype, std::size_t category,
                         std::size_t critical_token);

struct BenchmarkConfig {
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  std::size_t n_qtypes = 5;
  std::size_t answers_per_qtype = 4;
  std::size_t answer_vocab = 20;  // every answer belongs to some question type
  std::size_t n_nouns = 8;
  std::size_t n_fillers = 24;
  std::size_t d = 32;
  std::size_t n_v = 8;
  std::size_t n_q = 6;
  std::size_t embed_dim = 32;
  double shift_strength = 0.6;
  double noise_rate = 0.1;
  double feature_noise = 1.0;
  double duplicate_rate = 0.5;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct Benchmark {
  std::vector<Sample> train;
  std::vector<Sample> test;
  VocabSpec vocab;
};

Benchmark generate_benchmark(const BenchmarkConfig& config);

/// Empirical distribution of top answers per question type, indexed like
/// vocab.qtype_answers.
std::vector<std::vector<double>> answer_priors(std::span<const Sample> split,
                                               const VocabSpec& vocab);
double total_variation(std::span<const double> p, std::span<const double> q);

struct SimScores {
  std::vector<double> values;  // one per object, in [-1, 1]
  bool has_content_words = false;
};

/// Per object: max cosine between its category embedding and the question's
/// content words (question-type words and [MASK] excluded).
SimScores sim_scores(const Sample& sample, const VocabSpec& vocab);

/// Paraphrase group: the same image/answer with distractor words resampled.
struct RephrasingGroup {
  std::uint64_t origin_id = 0;
  std::vector<Sample> variants;
};

std::vector<RephrasingGroup> make_rephrasings(std::span<const Sample> split,
                                              const VocabSpec& vocab, std::size_t per_group,
                                              std::uint64_t seed);

// ---------------------------------------------------------------------------
// On-disk format: <stem>.jsonl (one sample per line) + <stem>.f32 (features,
// little-endian float32, row-major [sample][object][dim]).

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

void save_split(const std::filesystem::path& stem, std::span<const Sample> samples);
std::vector<Sample> load_split(const std::filesystem::path& stem);

void save_vocab(const std::filesystem::path& path, const VocabSpec& vocab);
VocabSpec load_vocab(const std::filesystem::path& path);

}  // namespace csst
