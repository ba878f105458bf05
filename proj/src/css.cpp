#include "csst/css.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace csst {

void CssConfig::validate() const {
  auto need = [](bool ok, const char* field, const char* rule) {
    if (!ok) throw std::invalid_argument(std::string("css config: ") + field + " " + rule);
  };
  need(eta > 0.0 && eta < 1.0, "eta", "must lie in (0,1)");
  need(iou_threshold > 0.0 && iou_threshold <= 1.0, "iou_threshold", "must lie in (0,1]");
  need(init_set_size >= 1, "init_set_size", "must be at least 1");
  need(delta >= 0.0 && delta <= 1.0, "delta", "must lie in [0,1]");
  need(top_k_words >= 1, "top_k_words", "must be at least 1");
}

double ContributionScores::score_of(std::size_t unit) const {
  for (std::size_t i = 0; i < units.size(); ++i)
    if (units[i] == unit) return scores[i];
  throw std::out_of_range("no contribution score for unit " + std::to_string(unit));
}

const char* to_string(CfKind kind) { return kind == CfKind::kVisual ? "V" : "Q"; }

std::vector<std::size_t> io_sel(std::span<const double> sim, std::size_t size) {
  std::vector<std::size_t> order(sim.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
  order.resize(std::min(size, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

namespace {

// Positions of `scores` by descending value, ties -> lower position.
std::vector<std::size_t> rank_desc(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

std::size_t dynamic_k(std::span<const double> scores, double eta) {
  if (scores.empty()) throw std::invalid_argument("dynamic_k: empty initial object set");
  const auto order = rank_desc(scores);
  // Shifting by the max leaves every exp-ratio unchanged.
  const double top = scores[order.front()];
  double total = 0.0;
  for (double s : scores) total += std::exp(s - top);
  double mass = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    mass += std::exp(scores[order[k]] - top);
    if (mass / total > eta) return k + 1;
  }
  return order.size();
}

ObjectSplit co_sel(std::span<const std::size_t> initial, std::span<const double> scores,
                   std::span<const BBox> boxes, const CssConfig& config) {
  if (initial.empty()) throw std::invalid_argument("co_sel: empty initial object set");
  if (scores.size() != initial.size()) throw std::invalid_argument("co_sel: scores must cover the initial set");
  for (auto i : initial)
    if (i >= boxes.size()) throw std::out_of_range("co_sel: initial object out of range");

  // Rank by score, ties -> lower object index.
  std::vector<std::size_t> order(initial.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return initial[a] < initial[b];
  });
  std::vector<double> ranked(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) ranked[i] = scores[order[i]];

  ObjectSplit out;
  out.k = dynamic_k(ranked, config.eta);
  std::vector<std::uint8_t> in_plus(boxes.size(), 0);
  std::vector<std::size_t> top;
  for (std::size_t i = 0; i < out.k; ++i) {
    top.push_back(initial[order[i]]);
    in_plus[initial[order[i]]] = 1;
  }
  for (std::size_t j = 0; j < boxes.size(); ++j) {
    if (in_plus[j]) continue;
    for (auto t : top)
      if (iou(boxes[j], boxes[t]) >= config.iou_threshold) {
        in_plus[j] = 1;
        break;
      }
  }
  for (std::size_t j = 0; j < boxes.size(); ++j) (in_plus[j] ? out.critical : out.rest).push_back(j);
  return out;
}

WordSplit cw_sel(std::span<const std::size_t> tokens, const VocabSpec& vocab,
                 const ContributionScores& scores, const CssConfig& config) {
  std::vector<std::size_t> candidates, scored;
  std::vector<double> cand_scores;
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    if (vocab.is_qtype_word(tokens[p])) continue;
    candidates.push_back(p);
    const auto it = std::find(scores.units.begin(), scores.units.end(), p);
    if (it != scores.units.end()) {
      scored.push_back(p);
      cand_scores.push_back(scores.scores[static_cast<std::size_t>(it - scores.units.begin())]);
    }
  }
  if (scored.empty()) throw std::invalid_argument("cw_sel: question has no scorable non-question-type word");

  const auto order = rank_desc(cand_scores);
  std::vector<std::uint8_t> critical(tokens.size(), 0);
  for (std::size_t i = 0; i < std::min(config.top_k_words, order.size()); ++i) critical[scored[order[i]]] = 1;

  WordSplit out;
  for (auto p : candidates) (critical[p] ? out.critical : out.others).push_back(p);
  return out;
}

Attribution attribute(const ModelParams& params, std::span<const ModelInput> inputs,
                      std::span<const std::size_t> anchors) {
  if (anchors.size() != inputs.size()) throw std::invalid_argument("attribute: one anchor per input");
  constexpr std::size_t kChunk = 256;
  const std::size_t A = params.dims().n_answers;
  Attribution out;
  out.objects.reserve(inputs.size());
  out.words.reserve(inputs.size());

  for (std::size_t start = 0; start < inputs.size(); start += kChunk) {
    const std::size_t R = std::min(kChunk, inputs.size() - start);
    const auto rows = inputs.subspan(start, R);
    const InputBatch batch = pack(rows, params.dims());

    ad::Graph g;
    BoundParams p = bind(g, params, false);
    // Word features must carry gradient; the table leaf is the cheapest way.
    const auto& emb = params[Param::kTokenEmbedding];
    p.t[static_cast<std::size_t>(Param::kTokenEmbedding)] = g.leaf(emb.shape, emb.values, true);

    const VqaOutputs fwd = vqa_forward(g, p, batch, true);
    std::vector<double> onehot(R * A, 0.0);
    for (std::size_t r = 0; r < R; ++r) {
      if (anchors[start + r] >= A) throw std::out_of_range("attribute: anchor answer out of range");
      onehot[r * A + anchors[start + r]] = 1.0;
    }
    const ad::Tensor target =
        ad::sum(ad::mul(ad::sigmoid(fwd.answers.logits), g.constant({R, A}, std::move(onehot))));
    const ad::Gradients grads = g.backward(target);
    const auto gv = grads.of(fwd.objects);
    const auto gw = grads.of(fwd.words);
    const std::size_t N = batch.n_v, D = batch.feature_dim, T = batch.max_tokens;
    const std::size_t E = fwd.words.shape()[2];

    for (std::size_t r = 0; r < R; ++r) {
      ContributionScores os{UnitKind::kObject, anchors[start + r], {}, {}};
      for (std::size_t i = 0; i < N; ++i) {
        if (!batch.object_keep[r * N + i]) continue;
        double s = 0.0;
        for (std::size_t k = 0; k < D; ++k) s += gv[(r * N + i) * D + k];
        os.units.push_back(i);
        os.scores.push_back(s);
      }
      ContributionScores ws{UnitKind::kWord, anchors[start + r], {}, {}};
      for (std::size_t j = 0; j < T; ++j) {
        if (!batch.token_present[r * T + j] || batch.tokens[r * T + j] == VocabSpec::kMaskId) continue;
        double s = 0.0;
        for (std::size_t k = 0; k < E; ++k) s += gw[(r * T + j) * E + k];
        ws.units.push_back(j);
        ws.scores.push_back(s);
      }
      out.objects.push_back(std::move(os));
      out.words.push_back(std::move(ws));
    }
  }
  return out;
}

ContributionScores object_contributions(const ModelParams& params, const Sample& sample) {
  const ModelInput in = to_input(sample);
  const std::size_t anchor = anchor_answer(sample.answers);
  return attribute(params, std::span(&in, 1), std::span(&anchor, 1)).objects.front();
}

ContributionScores word_contributions(const ModelParams& params, const Sample& sample) {
  const ModelInput in = to_input(sample);
  const std::size_t anchor = anchor_answer(sample.answers);
  return attribute(params, std::span(&in, 1), std::span(&anchor, 1)).words.front();
}

AnswerMap dsa_from_logits(std::span<const double> logits, const AnswerMap& origin) {
  AnswerMap out;
  for (const auto& [id, t] : origin) {
    if (id >= logits.size()) throw std::out_of_range("dsa: answer id outside the logit vector");
    const double x = logits[id];
    // 1 - sigmoid(x) == sigmoid(-x)
    out[id] = x >= 0 ? std::exp(-x) / (1.0 + std::exp(-x)) : 1.0 / (1.0 + std::exp(x));
  }
  return out;
}

AnswerMap dsa_ass(const ModelParams& params, const ModelInput& kept_input, const AnswerMap& origin) {
  const auto logits = predict_logits(params, std::span(&kept_input, 1));
  return dsa_from_logits(logits.front(), origin);
}

ModelInput counterfactual_input(const Sample& origin, const CounterfactualSample& cf) {
  ModelInput in = to_input(origin);
  return cf.kind == CfKind::kVisual ? mask_objects(std::move(in), cf.masked)
                                    : mask_words(std::move(in), cf.masked);
}

ModelInput kept_side_input(const Sample& origin, const CounterfactualSample& cf) {
  ModelInput in = to_input(origin);
  return cf.kind == CfKind::kVisual ? mask_objects(std::move(in), cf.kept)
                                    : mask_words(std::move(in), cf.kept);
}

std::vector<CounterfactualSample> synthesize_kinds(const ModelParams& params,
                                                   std::span<const Sample* const> samples,
                                                   std::span<const CfKind> kinds,
                                                   const VocabSpec& vocab, const CssConfig& config,
                                                   bool assign_answers) {
  config.validate();
  if (kinds.size() != samples.size()) throw std::invalid_argument("synthesize: one kind per sample");
  std::vector<ModelInput> inputs;
  std::vector<std::size_t> anchors;
  inputs.reserve(samples.size());
  for (const Sample* s : samples) {
    inputs.push_back(to_input(*s));
    anchors.push_back(anchor_answer(s->answers));
  }
  const Attribution attr = attribute(params, inputs, anchors);

  std::vector<CounterfactualSample> out(samples.size());
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const Sample& s = *samples[r];
    CounterfactualSample& cf = out[r];
    cf.origin_id = s.sample_id;
    cf.kind = kinds[r];
    if (cf.kind == CfKind::kVisual) {
      const auto sim = sim_scores(s, vocab);
      const auto initial = io_sel(sim.values, config.init_set_size);
      std::vector<double> init_scores;
      for (auto i : initial) init_scores.push_back(attr.objects[r].score_of(i));
      std::vector<BBox> boxes;
      for (const auto& o : s.objects) boxes.push_back(o.bbox);
      ObjectSplit split = co_sel(initial, init_scores, boxes, config);
      if (split.rest.empty()) {
        cf.kind = CfKind::kQuestion;
        cf.fell_back = true;
      } else {
        cf.masked = std::move(split.critical);
        cf.kept = std::move(split.rest);
        cf.scores = attr.objects[r];
      }
    }
    if (cf.kind == CfKind::kQuestion) {
      WordSplit split = cw_sel(s.question_tokens, vocab, attr.words[r], config);
      cf.masked = std::move(split.critical);
      cf.kept = std::move(split.others);
      cf.scores = attr.words[r];
    }
  }

  if (assign_answers) {
    std::vector<ModelInput> kept;
    kept.reserve(out.size());
    for (std::size_t r = 0; r < out.size(); ++r) kept.push_back(kept_side_input(*samples[r], out[r]));
    const auto logits = predict_logits(params, kept);
    for (std::size_t r = 0; r < out.size(); ++r) out[r].answers = dsa_from_logits(logits[r], samples[r]->answers);
  }
  return out;
}

std::vector<CounterfactualSample> synthesize_batch(const ModelParams& params,
                                                   std::span<const Sample* const> samples,
                                                   const VocabSpec& vocab, const CssConfig& config,
                                                   Rng& rng) {
  std::vector<CfKind> kinds;
  kinds.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    kinds.push_back(rng.uniform() >= config.delta ? CfKind::kVisual : CfKind::kQuestion);
  return synthesize_kinds(params, samples, kinds, vocab, config, true);
}

CounterfactualSample synthesize(const ModelParams& params, const Sample& sample,
                                const VocabSpec& vocab, const CssConfig& config, Rng& rng) {
  const Sample* p = &sample;
  return synthesize_batch(params, std::span(&p, 1), vocab, config, rng).front();
}

}  // namespace csst
