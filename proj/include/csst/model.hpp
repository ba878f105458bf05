#pragma once

// Toy UpDn-style VQA model, a question-only branch, and the ensemble fusion
// used during training. Inference always goes through the VQA head alone.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "csst/autodiff.hpp"
#include "csst/dataset.hpp"

namespace csst {

enum class FusionMode { kNone, kSigmoidProduct, kLogitSum };

const char* to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& name);

struct ModelDims {
  std::size_t vocab_size = 0;
  std::size_t n_answers = 0;
  std::size_t feature_dim = 32;
  std::size_t hidden = 64;
  std::size_t embed_dim = 32;
  std::size_t max_tokens = 6;
  bool operator==(const ModelDims&) const = default;
};

enum class Param : std::size_t {
  kTokenEmbedding,   // [vocab, embed]
  kPositional,       // [max_tokens, embed]
  kQuestionPool,     // [embed] word pooling scorer
  kQuestionW,        // [embed, hidden]
  kQuestionB,        // [hidden]
  kObjectW,          // [feature, hidden]
  kObjectB,          // [hidden]
  kAttention,        // [hidden]
  kHiddenW,          // [hidden, hidden]
  kHiddenB,          // [hidden]
  kClassifierW,      // [hidden, answers]
  kClassifierB,      // [answers]
  kQOnlyW1,          // [embed, hidden]
  kQOnlyB1,          // [hidden]
  kQOnlyW2,          // [hidden, answers]
  kQOnlyB2,          // [answers]
  kCount,
};

inline constexpr std::size_t kParamCount = static_cast<std::size_t>(Param::kCount);

const char* param_name(Param p);

struct ParamTensor {
  ad::Shape shape;
  std::vector<double> values;
  bool operator==(const ParamTensor&) const = default;
};

class ModelParams {
 public:
  ModelParams() = default;

  /// Seeded init: embeddings and the attention vector U(-1,1), weight
  /// matrices Glorot-uniform, biases zero.
  static ModelParams init(const ModelDims& dims, FusionMode fusion, std::uint64_t seed);

  const ModelDims& dims() const { return dims_; }
  FusionMode fusion_mode() const { return fusion_; }
  void set_fusion_mode(FusionMode m) { fusion_ = m; }

  ParamTensor& operator[](Param p) { return tensors_[static_cast<std::size_t>(p)]; }
  const ParamTensor& operator[](Param p) const { return tensors_[static_cast<std::size_t>(p)]; }
  std::array<ParamTensor, kParamCount>& tensors() { return tensors_; }
  const std::array<ParamTensor, kParamCount>& tensors() const { return tensors_; }

  bool all_finite() const;
  bool operator==(const ModelParams&) const = default;

 private:
  ModelDims dims_;
  FusionMode fusion_ = FusionMode::kSigmoidProduct;
  std::array<ParamTensor, kParamCount> tensors_;
};

ModelDims dims_for(const VocabSpec& vocab, std::size_t feature_dim, std::size_t max_tokens,
                   std::size_t hidden = 64, std::size_t embed_dim = 32);

/// Parameters placed on a graph.
struct BoundParams {
  std::array<ad::Tensor, kParamCount> t;
  const ad::Tensor& operator[](Param p) const { return t[static_cast<std::size_t>(p)]; }
};

BoundParams bind(ad::Graph& graph, const ModelParams& params, bool requires_grad);

/// One model input row. Objects with keep=0 are excluded from attention;
/// tokens with present=0 are padding (deleted words), while [MASK] tokens
/// are present and pooled like any other word.
struct ModelInput {
  std::vector<double> features;          // n_v x feature_dim
  std::vector<std::uint8_t> object_keep; // n_v
  std::vector<std::size_t> tokens;       // <= max_tokens
  std::vector<std::uint8_t> token_present;

  std::size_t n_objects() const { return object_keep.size(); }
};

ModelInput to_input(const Sample& sample);
/// Copy of `in` with the given object slots removed from attention.
ModelInput mask_objects(ModelInput in, std::span<const std::size_t> slots);
/// Copy of `in` with the given token positions replaced by [MASK].
ModelInput mask_words(ModelInput in, std::span<const std::size_t> positions);
/// Copy of `in` with the token at `position` deleted (later words shift left).
ModelInput delete_word(ModelInput in, std::size_t position);

/// Rows packed for a batched forward pass. All rows share n_v; questions are
/// padded to max_tokens.
struct InputBatch {
  std::size_t rows = 0, n_v = 0, feature_dim = 0, max_tokens = 0;
  std::vector<double> features;
  std::vector<std::uint8_t> object_keep;
  std::vector<std::size_t> tokens;
  std::vector<std::uint8_t> token_present;
};

InputBatch pack(std::span<const ModelInput> rows, const ModelDims& dims);

struct AnswerDistribution {
  ad::Tensor logits;  // [rows, answers]
  double logit(std::size_t row, std::size_t answer) const;
  double probability(std::size_t row, std::size_t answer) const;
  std::size_t argmax(std::size_t row) const;
  std::size_t rows() const { return logits.shape()[0]; }
};

struct QuestionEncoding {
  ad::Tensor words;    // [rows, max_tokens, embed] embedding lookups
  ad::Tensor pooling;  // [rows, max_tokens] word weights, zero on absent tokens
  ad::Tensor pooled;   // [rows, embed]
};

struct VqaOutputs {
  AnswerDistribution answers;
  ad::Tensor objects;    // [rows, n_v, feature_dim] leaf
  ad::Tensor words;      // [rows, max_tokens, embed]
  ad::Tensor attention;  // [rows, n_v]
  QuestionEncoding question;
};

QuestionEncoding encode_question(ad::Graph& g, const BoundParams& p, const InputBatch& batch);

/// P_vqa. Throws std::invalid_argument when a row has no kept object or no
/// present token.
VqaOutputs vqa_forward(ad::Graph& g, const BoundParams& p, const InputBatch& batch,
                       bool objects_require_grad = false);

/// P_q: depends on the question tokens only.
AnswerDistribution qonly_forward(ad::Graph& g, const BoundParams& p, const InputBatch& batch);
AnswerDistribution qonly_head(const BoundParams& p, const QuestionEncoding& q);

AnswerDistribution fuse(const AnswerDistribution& pvqa, const AnswerDistribution& pq,
                        FusionMode mode);

/// Training-time output: fused when the ensemble is on, P_vqa otherwise.
struct TrainForward {
  VqaOutputs vqa;
  AnswerDistribution fused;
};

TrainForward train_forward(ad::Graph& g, const BoundParams& p, const InputBatch& batch,
                           FusionMode mode);

/// Convenience: inference logits for a list of inputs (VQA head only),
/// processed in chunks.
std::vector<std::vector<double>> predict_logits(const ModelParams& params,
                                                std::span<const ModelInput> inputs,
                                                std::size_t chunk = 256);

// Checkpoint: "CSSTCKPT", u32 version, u32 fusion, six u64 dims, u32 tensor
// count, then per tensor: u32 name length, name, u32 rank, u64 extents,
// float64 values. All little-endian.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace csst
