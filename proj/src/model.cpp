#include "csst/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csst/rng.hpp"

namespace csst {

using ad::Shape;
using ad::Tensor;

const char* to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kNone: return "none";
    case FusionMode::kSigmoidProduct: return "sigmoid_product";
    case FusionMode::kLogitSum: return "logit_sum";
  }
  return "?";
}

FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "none") return FusionMode::kNone;
  if (name == "sigmoid_product") return FusionMode::kSigmoidProduct;
  if (name == "logit_sum") return FusionMode::kLogitSum;
  throw std::invalid_argument("unknown fusion mode '" + name +
                              "' (expected none, sigmoid_product or logit_sum)");
}

const char* param_name(Param p) {
  switch (p) {
    case Param::kTokenEmbedding: return "token_embedding";
    case Param::kPositional: return "positional";
    case Param::kQuestionPool: return "question_pool";
    case Param::kQuestionW: return "question_w";
    case Param::kQuestionB: return "question_b";
    case Param::kObjectW: return "object_w";
    case Param::kObjectB: return "object_b";
    case Param::kAttention: return "attention";
    case Param::kHiddenW: return "hidden_w";
    case Param::kHiddenB: return "hidden_b";
    case Param::kClassifierW: return "classifier_w";
    case Param::kClassifierB: return "classifier_b";
    case Param::kQOnlyW1: return "qonly_w1";
    case Param::kQOnlyB1: return "qonly_b1";
    case Param::kQOnlyW2: return "qonly_w2";
    case Param::kQOnlyB2: return "qonly_b2";
    case Param::kCount: break;
  }
  return "?";
}

namespace {

std::array<Shape, kParamCount> param_shapes(const ModelDims& d) {
  return {Shape{d.vocab_size, d.embed_dim}, Shape{d.max_tokens, d.embed_dim}, Shape{d.embed_dim},
          Shape{d.embed_dim, d.hidden},     Shape{d.hidden},
          Shape{d.feature_dim, d.hidden},   Shape{d.hidden},
          Shape{d.hidden},                  Shape{d.hidden, d.hidden},
          Shape{d.hidden},                  Shape{d.hidden, d.n_answers},
          Shape{d.n_answers},               Shape{d.embed_dim, d.hidden},
          Shape{d.hidden},                  Shape{d.hidden, d.n_answers},
          Shape{d.n_answers}};
}

}  // namespace

ModelParams ModelParams::init(const ModelDims& dims, FusionMode fusion, std::uint64_t seed) {
  if (dims.vocab_size == 0 || dims.n_answers == 0 || dims.feature_dim == 0 || dims.hidden == 0 ||
      dims.embed_dim == 0 || dims.max_tokens == 0) {
    throw std::invalid_argument("model dimensions must all be positive");
  }
  ModelParams p;
  p.dims_ = dims;
  p.fusion_ = fusion;
  Rng rng(seed, 101);
  const auto shapes = param_shapes(dims);
  for (std::size_t i = 0; i < kParamCount; ++i) {
    p.tensors_[i].shape = shapes[i];
    p.tensors_[i].values.resize(ad::numel(shapes[i]));
    const Shape& s = shapes[i];
    const auto which = static_cast<Param>(i);
    double bound = 0.0;  // biases start at zero
    if (which == Param::kTokenEmbedding || which == Param::kPositional || which == Param::kAttention) {
      bound = 1.0;
    } else if (s.size() == 2) {
      bound = std::sqrt(6.0 / static_cast<double>(s[0] + s[1]));
    }
    for (double& v : p.tensors_[i].values) v = bound > 0 ? rng.uniform(-bound, bound) : 0.0;
  }
  return p;
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors_)
    for (double v : t.values)
      if (!std::isfinite(v)) return false;
  return true;
}

ModelDims dims_for(const VocabSpec& vocab, std::size_t feature_dim, std::size_t max_tokens,
                   std::size_t hidden, std::size_t embed_dim) {
  ModelDims d;
  d.vocab_size = vocab.tokens.size();
  d.n_answers = vocab.answers.size();
  d.feature_dim = feature_dim;
  d.max_tokens = max_tokens;
  d.hidden = hidden;
  d.embed_dim = embed_dim;
  return d;
}

BoundParams bind(ad::Graph& graph, const ModelParams& params, bool requires_grad) {
  BoundParams b;
  for (std::size_t i = 0; i < kParamCount; ++i)
    b.t[i] = graph.leaf(params.tensors()[i].shape, params.tensors()[i].values, requires_grad);
  return b;
}

// ---------------------------------------------------------------------------
// Inputs

ModelInput to_input(const Sample& s) {
  ModelInput in;
  const std::size_t dim = s.objects.empty() ? 0 : s.objects.front().vector.size();
  in.features.reserve(s.objects.size() * dim);
  for (const auto& o : s.objects) in.features.insert(in.features.end(), o.vector.begin(), o.vector.end());
  in.object_keep.assign(s.objects.size(), 1);
  in.tokens = s.question_tokens;
  in.token_present.assign(s.question_tokens.size(), 1);
  return in;
}

ModelInput mask_objects(ModelInput in, std::span<const std::size_t> slots) {
  for (auto i : slots) in.object_keep.at(i) = 0;
  return in;
}

ModelInput mask_words(ModelInput in, std::span<const std::size_t> positions) {
  for (auto p : positions) in.tokens.at(p) = VocabSpec::kMaskId;
  return in;
}

ModelInput delete_word(ModelInput in, std::size_t position) {
  if (position >= in.tokens.size()) throw std::out_of_range("delete_word: position out of range");
  in.tokens.erase(in.tokens.begin() + static_cast<std::ptrdiff_t>(position));
  in.token_present.erase(in.token_present.begin() + static_cast<std::ptrdiff_t>(position));
  return in;
}

InputBatch pack(std::span<const ModelInput> rows, const ModelDims& dims) {
  if (rows.empty()) throw std::invalid_argument("pack: empty batch");
  InputBatch b;
  b.rows = rows.size();
  b.n_v = rows.front().n_objects();
  b.feature_dim = dims.feature_dim;
  b.max_tokens = dims.max_tokens;
  b.features.reserve(b.rows * b.n_v * b.feature_dim);
  b.tokens.assign(b.rows * b.max_tokens, 0);
  b.token_present.assign(b.rows * b.max_tokens, 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& in = rows[r];
    if (in.n_objects() != b.n_v || in.features.size() != b.n_v * b.feature_dim) {
      throw std::invalid_argument("pack: row " + std::to_string(r) + " has inconsistent object extents");
    }
    if (in.tokens.size() > b.max_tokens || in.token_present.size() != in.tokens.size()) {
      throw std::invalid_argument("pack: row " + std::to_string(r) + " question longer than max_tokens");
    }
    b.features.insert(b.features.end(), in.features.begin(), in.features.end());
    b.object_keep.insert(b.object_keep.end(), in.object_keep.begin(), in.object_keep.end());
    for (std::size_t j = 0; j < in.tokens.size(); ++j) {
      if (in.tokens[j] >= dims.vocab_size) throw std::invalid_argument("pack: token id out of range");
      b.tokens[r * b.max_tokens + j] = in.tokens[j];
      b.token_present[r * b.max_tokens + j] = in.token_present[j];
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Forward

double AnswerDistribution::logit(std::size_t row, std::size_t answer) const {
  const std::size_t a = logits.shape()[1];
  return logits.values()[row * a + answer];
}

double AnswerDistribution::probability(std::size_t row, std::size_t answer) const {
  const double x = logit(row, answer);
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

std::size_t AnswerDistribution::argmax(std::size_t row) const {
  const std::size_t a = logits.shape()[1];
  const auto v = logits.values().subspan(row * a, a);
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

QuestionEncoding encode_question(ad::Graph& /*g*/, const BoundParams& p, const InputBatch& b) {
  const std::size_t R = b.rows, T = b.max_tokens;
  QuestionEncoding q;
  q.words = ad::embedding(p[Param::kTokenEmbedding], b.tokens, {R, T});
  const Tensor positioned = ad::add(q.words, p[Param::kPositional]);

  std::vector<std::uint8_t> absent(R * T);
  for (std::size_t r = 0; r < R; ++r) {
    bool any = false;
    for (std::size_t j = 0; j < T; ++j) {
      absent[r * T + j] = b.token_present[r * T + j] ? 0 : 1;
      any = any || b.token_present[r * T + j];
    }
    if (!any) throw std::invalid_argument("question in row " + std::to_string(r) + " has no tokens");
  }
  // Weighted mean: softmax over present tokens of a learned per-word score.
  const Tensor scores = ad::masked_fill(ad::sum(ad::mul(positioned, p[Param::kQuestionPool]), 2), std::move(absent));
  q.pooling = ad::softmax(scores, 1);
  q.pooled = ad::sum(ad::mul(positioned, ad::reshape(q.pooling, {R, T, 1})), 1);
  return q;
}

namespace {

VqaOutputs vqa_from_encoding(ad::Graph& g, const BoundParams& p, const InputBatch& b,
                             QuestionEncoding enc, bool objects_require_grad) {
  const std::size_t R = b.rows, N = b.n_v;
  std::vector<std::uint8_t> masked(R * N);
  for (std::size_t r = 0; r < R; ++r) {
    bool any = false;
    for (std::size_t i = 0; i < N; ++i) {
      masked[r * N + i] = b.object_keep[r * N + i] ? 0 : 1;
      any = any || b.object_keep[r * N + i];
    }
    if (!any) throw std::invalid_argument("image in row " + std::to_string(r) + " has every object masked");
  }

  VqaOutputs out;
  out.question = enc;
  out.words = enc.words;
  out.objects = g.leaf({R, N, b.feature_dim}, b.features, objects_require_grad);

  const Tensor q = ad::tanh(ad::add(ad::matmul(enc.pooled, p[Param::kQuestionW]), p[Param::kQuestionB]));
  const Tensor obj = ad::tanh(ad::add(ad::matmul(out.objects, p[Param::kObjectW]), p[Param::kObjectB]));
  const std::size_t H = q.shape()[1];

  const Tensor query = ad::reshape(ad::mul(q, p[Param::kAttention]), {R, 1, H});
  Tensor scores = ad::sum(ad::mul(obj, query), 2);
  scores = ad::masked_fill(scores, std::move(masked));
  out.attention = ad::softmax(scores, 1);

  const Tensor attended = ad::sum(ad::mul(obj, ad::reshape(out.attention, {R, N, 1})), 1);
  const Tensor joint = ad::mul(attended, q);
  const Tensor hidden = ad::tanh(ad::add(ad::matmul(joint, p[Param::kHiddenW]), p[Param::kHiddenB]));
  out.answers.logits = ad::add(ad::matmul(hidden, p[Param::kClassifierW]), p[Param::kClassifierB]);
  return out;
}

}  // namespace

VqaOutputs vqa_forward(ad::Graph& g, const BoundParams& p, const InputBatch& b,
                       bool objects_require_grad) {
  return vqa_from_encoding(g, p, b, encode_question(g, p, b), objects_require_grad);
}

AnswerDistribution qonly_head(const BoundParams& p, const QuestionEncoding& q) {
  const Tensor h = ad::tanh(ad::add(ad::matmul(q.pooled, p[Param::kQOnlyW1]), p[Param::kQOnlyB1]));
  return {ad::add(ad::matmul(h, p[Param::kQOnlyW2]), p[Param::kQOnlyB2])};
}

AnswerDistribution qonly_forward(ad::Graph& g, const BoundParams& p, const InputBatch& b) {
  return qonly_head(p, encode_question(g, p, b));
}

AnswerDistribution fuse(const AnswerDistribution& pvqa, const AnswerDistribution& pq,
                        FusionMode mode) {
  if (pvqa.logits.shape() != pq.logits.shape()) {
    throw ad::ShapeError("fuse", {pvqa.logits.shape(), pq.logits.shape()},
                         "answer distributions differ in extent");
  }
  switch (mode) {
    case FusionMode::kNone: return pvqa;
    case FusionMode::kSigmoidProduct: return {ad::mul(pvqa.logits, ad::sigmoid(pq.logits))};
    case FusionMode::kLogitSum: return {ad::add(pvqa.logits, pq.logits)};
  }
  return pvqa;
}

TrainForward train_forward(ad::Graph& g, const BoundParams& p, const InputBatch& b, FusionMode mode) {
  const QuestionEncoding enc = encode_question(g, p, b);
  TrainForward out{vqa_from_encoding(g, p, b, enc, false), {}};
  out.fused = mode == FusionMode::kNone ? out.vqa.answers
                                        : fuse(out.vqa.answers, qonly_head(p, enc), mode);
  return out;
}

std::vector<std::vector<double>> predict_logits(const ModelParams& params,
                                                std::span<const ModelInput> inputs,
                                                std::size_t chunk) {
  std::vector<std::vector<double>> out;
  out.reserve(inputs.size());
  const std::size_t A = params.dims().n_answers;
  for (std::size_t start = 0; start < inputs.size(); start += chunk) {
    const auto rows = inputs.subspan(start, std::min(chunk, inputs.size() - start));
    ad::Graph g;
    const BoundParams p = bind(g, params, false);
    const auto fwd = vqa_forward(g, p, pack(rows, params.dims()));
    const auto v = fwd.answers.logits.values();
    for (std::size_t r = 0; r < rows.size(); ++r) out.emplace_back(v.begin() + r * A, v.begin() + (r + 1) * A);
  }
  return out;
}

}  // namespace csst
