#include "csst/cst.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace csst {

using ad::Tensor;

const char* to_string(CrMode mode) {
  switch (mode) {
    case CrMode::kNone: return "none";
    case CrMode::kGlobal: return "g";
    case CrMode::kLocal: return "l";
  }
  return "?";
}

CrMode parse_cr_mode(const std::string& name) {
  if (name == "none") return CrMode::kNone;
  if (name == "g" || name == "G") return CrMode::kGlobal;
  if (name == "l" || name == "L") return CrMode::kLocal;
  throw std::invalid_argument("unknown contrastive mode '" + name + "' (expected none, g or l)");
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* field, const char* rule) {
    if (!ok) throw std::invalid_argument(std::string("train config: ") + field + " " + rule);
  };
  need(epochs >= 1, "epochs", "must be at least 1");
  need(batch_size >= 2, "batch_size", "must be at least 2");
  need(learning_rate > 0 && std::isfinite(learning_rate), "learning_rate", "must be positive");
  need(optimizer == "adamax", "optimizer", "must be adamax");
  need(beta1 >= 0 && beta1 < 1, "beta1", "must lie in [0,1)");
  need(beta2 >= 0 && beta2 < 1, "beta2", "must lie in [0,1)");
  need(epsilon > 0, "epsilon", "must be positive");
  need(w_xe >= 0, "w_xe", "must be non-negative");
  need(w_crg >= 0, "w_crg", "must be non-negative");
  need(w_crl >= 0, "w_crl", "must be non-negative");
  need(tau > 0 && std::isfinite(tau), "tau", "must be positive");
  need(w_qonly >= 0, "w_qonly", "must be non-negative");
  need(hidden >= 1, "hidden", "must be at least 1");
  need(embed_dim >= 1, "embed_dim", "must be at least 1");
  need(!(css_enabled || cr_mode != CrMode::kNone) || cf_warmup_epochs < epochs, "cf_warmup_epochs",
       "must be below epochs when CSS or CR is enabled");
}

double TrainConfig::cr_weight() const {
  switch (cr_mode) {
    case CrMode::kNone: return 0.0;
    case CrMode::kGlobal: return w_crg;
    case CrMode::kLocal: return w_crl;
  }
  return 0.0;
}

bool TrainConfig::cr_applies(std::size_t qtype) const {
  return cr_qtype_mask.empty() || (qtype < cr_qtype_mask.size() && cr_qtype_mask[qtype]);
}

// ---------------------------------------------------------------------------
// Losses

std::vector<double> dense_targets(std::span<const AnswerMap> targets, std::size_t n_answers) {
  std::vector<double> dense(targets.size() * n_answers, 0.0);
  for (std::size_t r = 0; r < targets.size(); ++r) {
    for (const auto& [id, t] : targets[r]) {
      if (id >= n_answers) throw std::out_of_range("target answer id " + std::to_string(id) + " out of range");
      if (!(t >= 0.0 && t <= 1.0)) {
        throw std::invalid_argument("target " + std::to_string(t) + " for answer " + std::to_string(id) +
                                    " lies outside [0,1]");
      }
      dense[r * n_answers + id] = t;
    }
  }
  return dense;
}

Tensor xe_loss(ad::Graph& g, const Tensor& logits, std::span<const double> dense) {
  const ad::Shape shape = logits.shape();  // copy: the graph grows below
  if (shape.size() != 2 || dense.size() != logits.size()) {
    throw ad::ShapeError("xe_loss", {shape, {dense.size()}}, "targets must match logits");
  }
  std::vector<double> pos(dense.begin(), dense.end()), neg(dense.size());
  for (std::size_t i = 0; i < dense.size(); ++i) {
    if (!(dense[i] >= 0.0 && dense[i] <= 1.0)) throw std::invalid_argument("xe_loss: target outside [0,1]");
    neg[i] = 1.0 - dense[i];
  }
  const Tensor t_pos = g.constant(shape, std::move(pos));
  const Tensor t_neg = g.constant(shape, std::move(neg));
  const Tensor ll = ad::add(ad::mul(t_pos, ad::log_sigmoid(logits)),
                            ad::mul(t_neg, ad::log_sigmoid(ad::scale(logits, -1.0))));
  return ad::scale(ad::sum(ll), -1.0 / static_cast<double>(shape[0]));
}

Tensor xe_loss(ad::Graph& g, const AnswerDistribution& out, std::span<const AnswerMap> targets) {
  if (targets.size() != out.rows()) throw std::invalid_argument("xe_loss: one target map per row");
  return xe_loss(g, out.logits, dense_targets(targets, out.logits.shape()[1]));
}

void ContrastiveBatch::check() const {
  if (negatives.empty()) throw std::invalid_argument("contrastive batch needs at least one negative");
  const auto& s = anchor.shape();
  if (s.size() != 2) throw ad::ShapeError("contrastive", {s}, "anchor must be [rows, answers]");
  if (positive.shape() != s) throw ad::ShapeError("contrastive", {s, positive.shape()}, "positive differs");
  for (const auto& n : negatives)
    if (n.shape() != s) throw ad::ShapeError("contrastive", {s, n.shape()}, "negative differs");
}

namespace {

Tensor weighted_row_mean(ad::Graph& g, const Tensor& rows, std::span<const double> weights) {
  const std::size_t R = rows.shape()[0];
  if (weights.empty()) return ad::mean(rows);
  if (weights.size() != R) throw std::invalid_argument("contrastive loss: one weight per row");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0)) throw std::invalid_argument("contrastive loss: row weights sum to zero");
  const Tensor w = g.constant({R}, std::vector<double>(weights.begin(), weights.end()));
  return ad::scale(ad::sum(ad::mul(rows, w)), 1.0 / total);
}

// (x - 1) / tau: every similarity and probability here is at most 1, so the
// shifted exponentials stay <= 1.
Tensor shifted(const Tensor& x, double tau) { return ad::scale(ad::add_scalar(x, -1.0), 1.0 / tau); }

}  // namespace

Tensor cr_g_loss(ad::Graph& g, const ContrastiveBatch& batch, double tau,
                 std::span<const double> row_weights) {
  batch.check();
  if (!(tau > 0)) throw std::invalid_argument("cr_g_loss: tau must be positive");
  const std::size_t R = batch.anchor.shape()[0];
  const Tensor sp = ad::cosine_similarity(batch.anchor, batch.positive);
  std::vector<Tensor> cols{ad::reshape(sp, {R, 1})};
  for (const auto& n : batch.negatives)
    cols.push_back(ad::reshape(ad::cosine_similarity(batch.anchor, n), {R, 1}));
  const Tensor lse = ad::log(ad::sum(ad::exp(shifted(ad::concat(cols, 1), tau)), 1));
  return weighted_row_mean(g, ad::sub(lse, shifted(sp, tau)), row_weights);
}

Tensor cr_l_loss(ad::Graph& g, const ContrastiveBatch& batch, std::span<const std::size_t> gt,
                 double tau, std::span<const double> row_weights) {
  batch.check();
  if (!(tau > 0)) throw std::invalid_argument("cr_l_loss: tau must be positive");
  const std::size_t R = batch.anchor.shape()[0], A = batch.anchor.shape()[1];
  if (gt.size() != R) throw std::invalid_argument("cr_l_loss: one ground-truth answer per row");
  std::vector<double> onehot(R * A, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    if (gt[r] >= A) throw std::out_of_range("cr_l_loss: ground-truth answer out of range");
    onehot[r * A + gt[r]] = 1.0;
  }
  const Tensor pick = g.constant({R, A}, std::move(onehot));
  auto prob = [&](const Tensor& logits) { return ad::sum(ad::mul(ad::sigmoid(logits), pick), 1); };

  const Tensor pa = prob(batch.anchor);
  Tensor denom = ad::exp(shifted(pa, tau));
  for (const auto& n : batch.negatives) {
    const Tensor pn = prob(n);
    denom = ad::add(denom, ad::mul(pn, ad::exp(shifted(pn, tau))));
  }
  return weighted_row_mean(g, ad::sub(ad::log(denom), shifted(pa, tau)), row_weights);
}

// ---------------------------------------------------------------------------
// Selection

DatasetIndex::DatasetIndex(std::span<const Sample> split) : split_(split) {
  for (std::size_t r = 0; r < split.size(); ++r) {
    buckets_[{split[r].qtype_id, answer_ids(split[r].answers)}].push_back(r);
    by_qtype_[split[r].qtype_id].push_back(r);
  }
  row_bucket_.resize(split.size());
  for (std::size_t r = 0; r < split.size(); ++r)
    row_bucket_[r] = &buckets_.at({split[r].qtype_id, answer_ids(split[r].answers)});
}

const std::vector<std::size_t>& DatasetIndex::bucket(std::size_t row) const {
  return *row_bucket_.at(row);
}

const std::vector<std::size_t>& DatasetIndex::qtype_pool(std::size_t qtype) const {
  static const std::vector<std::size_t> kEmpty;
  const auto it = by_qtype_.find(qtype);
  return it == by_qtype_.end() ? kEmpty : it->second;
}

std::size_t pos_sel(const DatasetIndex& index, std::size_t anchor_row, Rng& rng) {
  const auto& b = index.bucket(anchor_row);
  if (b.size() == 1) return anchor_row;
  return b[rng.below(b.size())];
}

const char* to_string(NegativeKind kind) {
  switch (kind) {
    case NegativeKind::kVisualCf: return "visual_cf";
    case NegativeKind::kQuestionCf: return "question_cf";
    case NegativeKind::kOtherAnswer: return "other_answer";
    case NegativeKind::kImageSwap: return "image_swap";
  }
  return "?";
}

namespace {

Negative image_swap(const DatasetIndex& index, std::size_t positive,
                    std::span<const std::size_t> batch_rows, Rng& rng) {
  const auto split = index.split();
  std::vector<std::size_t> others;
  for (auto r : batch_rows)
    if (split[r].sample_id != split[positive].sample_id) others.push_back(r);
  if (others.empty()) throw std::invalid_argument("neg_sel: batch holds no image other than the positive's");
  const std::size_t img = others[rng.below(others.size())];

  Negative n;
  n.kind = NegativeKind::kImageSwap;
  n.source_row = positive;
  n.image_row = img;
  n.input = to_input(split[positive]);
  const ModelInput other = to_input(split[img]);
  n.input.features = other.features;
  n.input.object_keep = other.object_keep;
  return n;
}

}  // namespace

std::vector<NegativeSet> neg_sel(std::span<const std::size_t> positive_rows,
                                 std::span<const std::size_t> batch_rows, const DatasetIndex& index,
                                 const ModelParams& params, const VocabSpec& vocab,
                                 const CssConfig& css, Rng& rng) {
  if (batch_rows.size() < 2) throw std::invalid_argument("neg_sel: batch must hold at least two samples");
  const auto split = index.split();
  const std::size_t P = positive_rows.size();

  // Counterfactuals of the positives: V-CSS for the first P rows, Q-CSS after.
  std::vector<const Sample*> ptrs;
  std::vector<CfKind> kinds;
  for (int pass = 0; pass < 2; ++pass)
    for (auto r : positive_rows) {
      ptrs.push_back(&split[r]);
      kinds.push_back(pass == 0 ? CfKind::kVisual : CfKind::kQuestion);
    }
  const auto cfs = synthesize_kinds(params, ptrs, kinds, vocab, css, false);

  std::vector<NegativeSet> out(P);
  for (std::size_t i = 0; i < P; ++i) {
    const std::size_t pos = positive_rows[i];
    const Sample& ps = split[pos];
    for (int j = 0; j < 2; ++j) {
      Negative& n = out[i][j];
      n.kind = j == 0 ? NegativeKind::kVisualCf : NegativeKind::kQuestionCf;
      n.cf = cfs[j * P + i];
      n.input = counterfactual_input(ps, n.cf);
      n.source_row = n.image_row = pos;
    }

    const auto ids = answer_ids(ps.answers);
    std::vector<std::size_t> pool;
    for (auto r : index.qtype_pool(ps.qtype_id))
      if (answer_ids(split[r].answers) != ids) pool.push_back(r);
    if (pool.empty()) {
      out[i][2] = image_swap(index, pos, batch_rows, rng);
      out[i][2].substituted = true;
    } else {
      const std::size_t r = pool[rng.below(pool.size())];
      Negative& n = out[i][2];
      n.kind = NegativeKind::kOtherAnswer;
      n.input = to_input(split[r]);
      n.source_row = n.image_row = r;
    }
    out[i][3] = image_swap(index, pos, batch_rows, rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimiser

Adamax::Adamax(const ModelParams& params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& t : params.tensors()) {
    m_.emplace_back(t.values.size(), 0.0);
    u_.emplace_back(t.values.size(), 0.0);
  }
}

void Adamax::step(ModelParams& params, const std::vector<std::vector<double>>& grads) {
  if (grads.size() != m_.size()) throw std::invalid_argument("adamax: one gradient per parameter tensor");
  ++t_;
  const double rate = lr_ / (1.0 - std::pow(beta1_, static_cast<double>(t_)));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    auto& values = params.tensors()[i].values;
    if (grads[i].size() != values.size()) throw std::invalid_argument("adamax: gradient extent mismatch");
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grads[i][j];
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
      u_[i][j] = std::max(beta2_ * u_[i][j], std::abs(g) + eps_);
      values[j] -= rate * m_[i][j] / u_[i][j];
    }
  }
}

// ---------------------------------------------------------------------------
// Batches

TrainRngs::TrainRngs(std::uint64_t seed) : shuffle(seed, 201), css(seed, 202), cr(seed, 203) {}

BatchPlan plan_batch(const ModelParams& params, const DatasetIndex& index,
                     std::span<const std::size_t> rows, const VocabSpec& vocab,
                     const TrainConfig& config, const CssConfig& css, TrainRngs& rngs) {
  const auto split = index.split();
  BatchPlan plan;
  plan.rows.assign(rows.begin(), rows.end());
  std::vector<const Sample*> ptrs;
  for (auto r : rows) {
    plan.inputs.push_back(to_input(split[r]));
    plan.targets.push_back(split[r].answers);
    ptrs.push_back(&split[r]);
  }

  if (config.css_enabled) {
    plan.cfs = synthesize_batch(params, ptrs, vocab, css, rngs.css);
    for (std::size_t i = 0; i < rows.size(); ++i)
      plan.cf_inputs.push_back(counterfactual_input(*ptrs[i], plan.cfs[i]));
  }

  if (config.cr_mode != CrMode::kNone) {
    for (auto r : rows) {
      const std::size_t p = pos_sel(index, r, rngs.cr);
      plan.positive_rows.push_back(p);
      plan.positive_inputs.push_back(to_input(split[p]));
      plan.cr_answer.push_back(anchor_answer(split[r].answers));
      plan.cr_weight.push_back(config.cr_applies(split[r].qtype_id) ? 1.0 : 0.0);
    }
    plan.negatives = neg_sel(plan.positive_rows, rows, index, params, vocab, css, rngs.cr);
  }
  return plan;
}

BatchLoss batch_loss(ad::Graph& g, const BoundParams& p, const ModelDims& dims,
                     const BatchPlan& plan, const TrainConfig& config) {
  BatchLoss out;
  const TrainForward orig = train_forward(g, p, pack(plan.inputs, dims), config.fusion);
  out.vqa_logits = orig.vqa.answers.logits;
  const Tensor xe_orig = xe_loss(g, orig.fused, plan.targets);
  out.parts.xe_orig = xe_orig.item();
  Tensor total = ad::scale(xe_orig, config.w_xe);

  if (config.fusion == FusionMode::kSigmoidProduct && config.w_qonly > 0) {
    // The question branch learns from its own loss without moving the shared
    // question encoder.
    const Tensor& pooled = orig.vqa.question.pooled;
    const QuestionEncoding detached{orig.vqa.question.words, orig.vqa.question.pooling,
                                    g.constant(pooled.shape(), {pooled.values().begin(), pooled.values().end()})};
    const Tensor xe_q = xe_loss(g, qonly_head(p, detached), plan.targets);
    out.parts.xe_qonly = xe_q.item();
    total = ad::add(total, ad::scale(xe_q, config.w_qonly));
  }

  if (!plan.cfs.empty()) {
    const FusionMode mode = config.cf_xe_fused ? config.fusion : FusionMode::kNone;
    const TrainForward cf = train_forward(g, p, pack(plan.cf_inputs, dims), mode);
    std::vector<AnswerMap> targets;
    for (const auto& c : plan.cfs) targets.push_back(c.answers);
    const Tensor xe_cf = xe_loss(g, cf.fused, targets);
    out.parts.xe_cf = xe_cf.item();
    total = ad::add(total, ad::scale(xe_cf, config.w_xe));
  }

  const bool any_cr = std::any_of(plan.cr_weight.begin(), plan.cr_weight.end(), [](double w) { return w > 0; });
  if (config.cr_mode != CrMode::kNone && !plan.negatives.empty() && any_cr) {
    ContrastiveBatch cb;
    cb.anchor = orig.vqa.answers.logits;
    cb.positive = vqa_forward(g, p, pack(plan.positive_inputs, dims)).answers.logits;
    for (std::size_t k = 0; k < 4; ++k) {
      std::vector<ModelInput> neg;
      neg.reserve(plan.negatives.size());
      for (const auto& set : plan.negatives) neg.push_back(set[k].input);
      cb.negatives.push_back(vqa_forward(g, p, pack(neg, dims)).answers.logits);
    }
    const Tensor cr = config.cr_mode == CrMode::kGlobal
                          ? cr_g_loss(g, cb, config.tau, plan.cr_weight)
                          : cr_l_loss(g, cb, plan.cr_answer, config.tau, plan.cr_weight);
    out.parts.cr = cr.item();
    total = ad::add(total, ad::scale(cr, config.cr_weight()));
  }
  out.total = total;
  out.parts.total = total.item();
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

double soft_score(std::span<const double> logits, const AnswerMap& targets) {
  const auto best = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  const auto it = targets.find(best);
  return it == targets.end() ? 0.0 : it->second;
}

namespace {

ModelDims dims_from_split(std::span<const Sample> train, const VocabSpec& vocab, const TrainConfig& c) {
  if (train.empty()) throw std::invalid_argument("training split is empty");
  std::size_t max_tokens = 0;
  for (const auto& s : train) max_tokens = std::max(max_tokens, s.question_tokens.size());
  const std::size_t feature_dim = train.front().objects.front().vector.size();
  return dims_for(vocab, feature_dim, max_tokens, c.hidden, c.embed_dim);
}

}  // namespace

Trainer::Trainer(std::span<const Sample> train, const VocabSpec& vocab, TrainConfig config, CssConfig css)
    : Trainer(ModelParams::init(dims_from_split(train, vocab, config), config.fusion, config.seed), train,
              vocab, config, css) {}

Trainer::Trainer(ModelParams init, std::span<const Sample> train, const VocabSpec& vocab,
                 TrainConfig config, CssConfig css)
    : owned_(train.begin(), train.end()),
      index_(owned_),
      vocab_(vocab),
      config_(std::move(config)),
      css_(css),
      params_(std::move(init)),
      opt_(params_, config_.learning_rate, config_.beta1, config_.beta2, config_.epsilon),
      rngs_(config_.seed) {
  config_.validate();
  css_.validate();
  params_.set_fusion_mode(config_.fusion);
}

EpochStats Trainer::run_epoch() {
  const std::size_t n = owned_.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rngs_.shuffle.shuffle(order.begin(), order.end());

  EpochStats stats;
  stats.epoch = ++epoch_;
  std::size_t seen = 0;
  double score = 0.0;
  const std::size_t A = params_.dims().n_answers;

  // Counterfactual and contrastive terms wait until the warm-up is over.
  TrainConfig active = config_;
  if (stats.epoch <= config_.cf_warmup_epochs) {
    active.css_enabled = false;
    active.cr_mode = CrMode::kNone;
  }

  for (std::size_t start = 0; start < n; start += config_.batch_size) {
    const std::size_t len = std::min(config_.batch_size, n - start);
    if (len < 2) break;  // a lone trailing sample has no batch partner for NEG_Sel
    const std::span<const std::size_t> rows(order.data() + start, len);
    const BatchPlan plan = plan_batch(params_, index_, rows, vocab_, active, css_, rngs_);

    ad::Graph g;
    const BoundParams p = bind(g, params_, true);
    const BatchLoss loss = batch_loss(g, p, params_.dims(), plan, active);
    if (!std::isfinite(loss.parts.total)) {
      std::ostringstream msg;
      msg << "non-finite loss at epoch " << stats.epoch << ", batch starting at " << start
          << ": xe_orig=" << loss.parts.xe_orig << " xe_cf=" << loss.parts.xe_cf << " cr=" << loss.parts.cr;
      throw std::runtime_error(msg.str());
    }
    const ad::Gradients grads = g.backward(loss.total);
    std::vector<std::vector<double>> flat;
    flat.reserve(kParamCount);
    for (std::size_t i = 0; i < kParamCount; ++i) {
      const auto gi = grads.of(p.t[i]);
      flat.emplace_back(gi.begin(), gi.end());
    }

    const auto logits = loss.vqa_logits.values();
    for (std::size_t r = 0; r < len; ++r) score += soft_score(logits.subspan(r * A, A), plan.targets[r]);
    const double w = static_cast<double>(len);
    stats.xe_orig += w * loss.parts.xe_orig;
    stats.xe_cf += w * loss.parts.xe_cf;
    stats.cr += w * loss.parts.cr;
    stats.total += w * loss.parts.total;
    seen += len;

    opt_.step(params_, flat);
  }
  const double denom = static_cast<double>(std::max<std::size_t>(seen, 1));
  stats.xe_orig /= denom;
  stats.xe_cf /= denom;
  stats.cr /= denom;
  stats.total /= denom;
  stats.train_acc = 100.0 * score / denom;
  return stats;
}

std::vector<EpochStats> Trainer::fit() {
  std::vector<EpochStats> out;
  while (epoch_ < config_.epochs) out.push_back(run_epoch());
  return out;
}

void write_training_csv(const std::filesystem::path& path, std::span<const EpochStats> stats) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,xe_orig,xe_cf,cr,total,train_acc\n" << std::setprecision(10);
  for (const auto& s : stats)
    out << s.epoch << ',' << s.xe_orig << ',' << s.xe_cf << ',' << s.cr << ',' << s.total << ','
        << s.train_acc << '\n';
}

}  // namespace csst
