#pragma once

// Counterfactual samples training: XE on original and counterfactual
// samples, positive/negative selection, the two contrastive losses, the
// Adamax optimiser and the epoch loop.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "csst/autodiff.hpp"
#include "csst/css.hpp"
#include "csst/dataset.hpp"
#include "csst/model.hpp"
#include "csst/rng.hpp"

namespace csst {

enum class CrMode { kNone, kGlobal, kLocal };

const char* to_string(CrMode mode);      // "none", "g", "l"
CrMode parse_cr_mode(const std::string& name);

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  double learning_rate = 0.03;
  std::string optimizer = "adamax";  // the only supported kind
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double w_xe = 1.0;
  double w_crg = 1.0;
  double w_crl = 8.0;
  double tau = 1.0;
  // Question-only XE on the original rows, used with sigmoid_product fusion;
  // without it the product has a degenerate minimum where P_vqa is a
  // negative constant and the question branch alone ranks the answers.
  double w_qonly = 1.0;
  CrMode cr_mode = CrMode::kNone;
  bool css_enabled = false;
  // Epochs trained on original samples only before counterfactual XE and the
  // contrastive loss switch on. Answers assigned from an untrained model are
  // close to the original targets and teach the prior instead of removing it.
  std::size_t cf_warmup_epochs = 20;
  bool cf_xe_fused = true;  // XE on counterfactuals through the fused head
  FusionMode fusion = FusionMode::kLogitSum;
  std::size_t hidden = 64;
  std::size_t embed_dim = 32;
  // Per question type: 1 = CR loss applied. Empty means every type.
  std::vector<std::uint8_t> cr_qtype_mask;
  std::uint64_t seed = 0;

  void validate() const;
  double cr_weight() const;
  bool cr_applies(std::size_t qtype) const;
};

// ---- losses ---------------------------------------------------------------

/// Dense targets [rows, answers] from soft maps. Throws if an id is out of
/// range or a target lies outside [0,1].
std::vector<double> dense_targets(std::span<const AnswerMap> targets, std::size_t n_answers);

/// Binary cross-entropy summed over answer slots, averaged over rows.
ad::Tensor xe_loss(ad::Graph& g, const ad::Tensor& logits, std::span<const double> dense);
ad::Tensor xe_loss(ad::Graph& g, const AnswerDistribution& out, std::span<const AnswerMap> targets);

/// Row-aligned logits [rows, answers].
struct ContrastiveBatch {
  ad::Tensor anchor;
  ad::Tensor positive;
  std::vector<ad::Tensor> negatives;

  void check() const;
};

/// Per-row losses are averaged with `row_weights` (empty = all ones).
ad::Tensor cr_g_loss(ad::Graph& g, const ContrastiveBatch& batch, double tau,
                     std::span<const double> row_weights = {});
ad::Tensor cr_l_loss(ad::Graph& g, const ContrastiveBatch& batch, std::span<const std::size_t> gt,
                     double tau, std::span<const double> row_weights = {});

// ---- positive / negative selection ----------------------------------------

/// Samples grouped by question type and by (question type, answer-id set).
class DatasetIndex {
 public:
  explicit DatasetIndex(std::span<const Sample> split);

  std::span<const Sample> split() const { return split_; }
  const std::vector<std::size_t>& bucket(std::size_t row) const;  // same qtype and answer set
  const std::vector<std::size_t>& qtype_pool(std::size_t qtype) const;

 private:
  std::span<const Sample> split_;
  std::map<std::pair<std::size_t, std::vector<std::size_t>>, std::vector<std::size_t>> buckets_;
  std::vector<const std::vector<std::size_t>*> row_bucket_;
  std::map<std::size_t, std::vector<std::size_t>> by_qtype_;
};

/// Uniform draw (anchor included) from the anchor's bucket; returns a row.
std::size_t pos_sel(const DatasetIndex& index, std::size_t anchor_row, Rng& rng);

enum class NegativeKind { kVisualCf, kQuestionCf, kOtherAnswer, kImageSwap };

const char* to_string(NegativeKind kind);

struct Negative {
  NegativeKind kind = NegativeKind::kImageSwap;
  ModelInput input;
  std::size_t source_row = 0;      // row of the sample the input derives from
  std::size_t image_row = 0;       // row whose image is used
  bool substituted = false;        // image swap standing in for an empty type-3 pool
  CounterfactualSample cf;         // filled for the two counterfactual kinds
};

using NegativeSet = std::array<Negative, 4>;

/// Negatives for each positive row. `batch_rows` supplies the images for the
/// swap and must hold at least one sample other than the positive.
std::vector<NegativeSet> neg_sel(std::span<const std::size_t> positive_rows,
                                 std::span<const std::size_t> batch_rows, const DatasetIndex& index,
                                 const ModelParams& params, const VocabSpec& vocab,
                                 const CssConfig& css, Rng& rng);

// ---- optimiser ------------------------------------------------------------

class Adamax {
 public:
  Adamax(const ModelParams& params, double lr, double beta1, double beta2, double eps);

  /// grads[i] aligned with params.tensors()[i].
  void step(ModelParams& params, const std::vector<std::vector<double>>& grads);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, u_;
};

// ---- batch plan and loss --------------------------------------------------

/// Everything a batch needs apart from the parameters being differentiated:
/// inputs, targets, counterfactuals, positives and negatives.
struct BatchPlan {
  std::vector<std::size_t> rows;
  std::vector<ModelInput> inputs;
  std::vector<AnswerMap> targets;

  std::vector<CounterfactualSample> cfs;  // empty when CSS is off
  std::vector<ModelInput> cf_inputs;

  std::vector<std::size_t> positive_rows;  // empty when CR is off
  std::vector<ModelInput> positive_inputs;
  std::vector<NegativeSet> negatives;
  std::vector<std::size_t> cr_answer;  // anchor gt answer per row
  std::vector<double> cr_weight;       // 1 when the row's qtype takes CR
};

struct TrainRngs {
  Rng shuffle;
  Rng css;
  Rng cr;
  explicit TrainRngs(std::uint64_t seed);
};

BatchPlan plan_batch(const ModelParams& params, const DatasetIndex& index,
                     std::span<const std::size_t> rows, const VocabSpec& vocab,
                     const TrainConfig& config, const CssConfig& css, TrainRngs& rngs);

struct LossParts {
  double xe_orig = 0, xe_cf = 0, xe_qonly = 0, cr = 0, total = 0;
};

struct BatchLoss {
  ad::Tensor total;
  LossParts parts;
  ad::Tensor vqa_logits;  // P_vqa on the original rows
};

BatchLoss batch_loss(ad::Graph& g, const BoundParams& p, const ModelDims& dims,
                     const BatchPlan& plan, const TrainConfig& config);

// ---- training loop --------------------------------------------------------

struct EpochStats {
  std::size_t epoch = 0;
  double xe_orig = 0, xe_cf = 0, cr = 0, total = 0;
  double train_acc = 0;  // percent, from the pre-update VQA head
};

class Trainer {
 public:
  Trainer(std::span<const Sample> train, const VocabSpec& vocab, TrainConfig config, CssConfig css);
  /// Continue from existing parameters.
  Trainer(ModelParams init, std::span<const Sample> train, const VocabSpec& vocab, TrainConfig config,
          CssConfig css);

  EpochStats run_epoch();
  std::vector<EpochStats> fit();

  const ModelParams& params() const { return params_; }
  const TrainConfig& config() const { return config_; }

 private:
  std::vector<Sample> owned_;
  DatasetIndex index_;
  const VocabSpec& vocab_;
  TrainConfig config_;
  CssConfig css_;
  ModelParams params_;
  Adamax opt_;
  TrainRngs rngs_;
  std::size_t epoch_ = 0;
};

/// Training accuracy contribution of one row: soft score of the argmax.
double soft_score(std::span<const double> logits, const AnswerMap& targets);

void write_training_csv(const std::filesystem::path& path, std::span<const EpochStats> stats);

}  // namespace csst
