#include "csst/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "csst/rng.hpp"

namespace csst {

double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::size_t anchor_answer(const AnswerMap& answers) {
  if (answers.empty()) throw std::invalid_argument("sample has no ground-truth answer");
  std::size_t best = answers.begin()->first;
  double best_score = answers.begin()->second;
  for (const auto& [id, t] : answers) {
    if (t > best_score) {
      best = id;
      best_score = t;
    }
  }
  return best;
}

std::vector<std::size_t> answer_ids(const AnswerMap& answers) {
  std::vector<std::size_t> ids;
  ids.reserve(answers.size());
  for (const auto& kv : answers) ids.push_back(kv.first);
  return ids;
}

void validate_sample(const Sample& s, std::size_t feature_dim) {
  const std::string who = "sample " + std::to_string(s.sample_id) + ": ";
  bool positive = false;
  for (const auto& [id, t] : s.answers) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument(who + "soft target outside [0,1]");
    positive = positive || t > 0.0;
  }
  if (!positive) throw std::invalid_argument(who + "needs an answer with t > 0");
  for (const auto& o : s.objects) {
    if (!o.bbox.valid()) throw std::invalid_argument(who + "degenerate bbox");
    if (o.vector.size() != feature_dim) throw std::invalid_argument(who + "feature length mismatch");
  }
  for (auto i : s.meta.critical_objects)
    if (i >= s.objects.size()) throw std::invalid_argument(who + "critical object out of range");
  if (s.meta.critical_word && *s.meta.critical_word >= s.question_tokens.size())
    throw std::invalid_argument(who + "critical word out of range");
}

bool VocabSpec::is_qtype_word(std::size_t token) const {
  return token < token_kinds.size() && token_kinds[token] == TokenKind::kQtypeWord;
}

bool VocabSpec::is_content_word(std::size_t token) const {
  return token < token_kinds.size() &&
         (token_kinds[token] == TokenKind::kNoun || token_kinds[token] == TokenKind::kFiller);
}

std::span<const double> VocabSpec::category_embedding(std::size_t c) const {
  return std::span<const double>(category_embeddings).subspan(c * embed_dim, embed_dim);
}

std::span<const double> VocabSpec::token_embedding(std::size_t t) const {
  return std::span<const double>(token_embeddings).subspan(t * embed_dim, embed_dim);
}

std::size_t label_answer(const VocabSpec& vocab, std::size_t qtype, std::size_t category,
                         std::size_t critical_token) {
  if (qtype >= vocab.qtype_answers.size() || category >= vocab.category_noun.size()) {
    throw std::out_of_range("label_answer: qtype or category out of range");
  }
  if (vocab.category_noun[category] != critical_token) {
    throw std::invalid_argument("label_answer: critical word does not name the object");
  }
  return vocab.qtype_answers[qtype].at(vocab.category_attribute[category]);
}

void BenchmarkConfig::validate() const {
  auto need = [](bool ok, const char* field, const char* rule) {
    if (!ok) throw std::invalid_argument(std::string("benchmark config: ") + field + " " + rule);
  };
  need(n_train > 0, "n_train", "must be positive");
  need(n_test > 0, "n_test", "must be positive");
  need(n_qtypes > 0, "n_qtypes", "must be positive");
  need(answers_per_qtype > 0, "answers_per_qtype", "must be positive");
  need(answer_vocab > 0, "answer_vocab", "must be positive");
  need(answers_per_qtype <= answer_vocab, "answers_per_qtype", "exceeds the answer vocabulary");
  need(n_nouns >= 2, "n_nouns", "must be at least 2");
  need(n_fillers > 0, "n_fillers", "must be positive");
  need(d > 0, "d", "must be positive");
  need(n_v >= 2, "n_v", "must be at least 2");
  need(n_q >= 3, "n_q", "must be at least 3 (two question-type words and a noun)");
  need(embed_dim > 0, "embed_dim", "must be positive");
  need(shift_strength >= 0.0 && shift_strength <= 1.0, "shift_strength", "must lie in [0,1]");
  need(noise_rate >= 0.0 && noise_rate <= 1.0, "noise_rate", "must lie in [0,1]");
  need(duplicate_rate >= 0.0 && duplicate_rate <= 1.0, "duplicate_rate", "must lie in [0,1]");
  need(feature_noise >= 0.0, "feature_noise", "must be non-negative");
}

namespace {

std::vector<double> unit_gaussian(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

// Largest-remainder apportionment of `total` items over `weights`.
std::vector<std::size_t> apportion(std::size_t total, std::span<const double> weights) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / wsum;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    used += counts[i];
    rem.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < total; ++k, ++used) counts[rem[k % rem.size()].second] += 1;
  return counts;
}

double quantize(double x) { return static_cast<double>(static_cast<float>(x)); }

BBox random_box(Rng& rng) {
  const double w = rng.uniform(0.15, 0.45);
  const double h = rng.uniform(0.15, 0.45);
  const double x = rng.uniform(0.0, 1.0 - w);
  const double y = rng.uniform(0.0, 1.0 - h);
  return {quantize(x), quantize(y), quantize(x + w), quantize(y + h)};
}

BBox jittered_box(Rng& rng, const BBox& b) {
  for (;;) {
    const double w = b.x2 - b.x1, h = b.y2 - b.y1;
    const double dx = rng.uniform(-0.06, 0.06) * w, dy = rng.uniform(-0.06, 0.06) * h;
    const double sw = rng.uniform(0.9, 1.1), sh = rng.uniform(0.9, 1.1);
    BBox j{std::clamp(b.x1 + dx, 0.0, 1.0), std::clamp(b.y1 + dy, 0.0, 1.0), 0, 0};
    j.x2 = std::min(1.0, j.x1 + w * sw);
    j.y2 = std::min(1.0, j.y1 + h * sh);
    j = {quantize(j.x1), quantize(j.y1), quantize(j.x2), quantize(j.y2)};
    if (j.valid() && iou(j, b) > 0.7) return j;
  }
}

struct World {
  VocabSpec vocab;
  std::vector<std::vector<double>> noun_code;  // feature-space code per noun
  std::vector<std::vector<double>> attr_code;  // feature-space code per attribute
  std::size_t first_noun = 0, first_filler = 0;
};

World build_world(const BenchmarkConfig& c, Rng& rng) {
  World w;
  VocabSpec& v = w.vocab;
  const std::size_t K = c.answers_per_qtype;
  v.embed_dim = c.embed_dim;

  v.tokens.push_back(VocabSpec::kMaskToken);
  v.token_kinds.push_back(TokenKind::kMask);
  v.qtype_words.resize(c.n_qtypes);
  for (std::size_t t = 0; t < c.n_qtypes; ++t)
    for (std::size_t j = 0; j < 2; ++j) {
      v.qtype_words[t].push_back(v.tokens.size());
      v.tokens.push_back("qtype" + std::to_string(t) + "_w" + std::to_string(j));
      v.token_kinds.push_back(TokenKind::kQtypeWord);
    }
  w.first_noun = v.tokens.size();
  for (std::size_t n = 0; n < c.n_nouns; ++n) {
    v.tokens.push_back("noun" + std::to_string(n));
    v.token_kinds.push_back(TokenKind::kNoun);
  }
  w.first_filler = v.tokens.size();
  for (std::size_t f = 0; f < c.n_fillers; ++f) {
    v.tokens.push_back("filler" + std::to_string(f));
    v.token_kinds.push_back(TokenKind::kFiller);
  }

  for (std::size_t a = 0; a < c.answer_vocab; ++a) v.answers.push_back("answer" + std::to_string(a));
  v.qtype_answers.resize(c.n_qtypes);
  for (std::size_t t = 0; t < c.n_qtypes; ++t)
    for (std::size_t j = 0; j < K; ++j) v.qtype_answers[t].push_back((t * K + j) % c.answer_vocab);

  // Semantic space used only for SIM: a noun token and its categories point
  // the same way; fillers and question-type words are independent.
  std::vector<std::vector<double>> noun_sem;
  for (std::size_t i = 0; i < v.tokens.size(); ++i) {
    auto e = unit_gaussian(rng, c.embed_dim);
    if (v.token_kinds[i] == TokenKind::kNoun) noun_sem.push_back(e);
    v.token_embeddings.insert(v.token_embeddings.end(), e.begin(), e.end());
  }
  for (std::size_t n = 0; n < c.n_nouns; ++n)
    for (std::size_t k = 0; k < K; ++k) {
      v.categories.push_back("noun" + std::to_string(n) + "_attr" + std::to_string(k));
      v.category_noun.push_back(w.first_noun + n);
      v.category_attribute.push_back(k);
      auto r = unit_gaussian(rng, c.embed_dim);
      std::vector<double> e(c.embed_dim);
      double norm = 0.0;
      for (std::size_t j = 0; j < c.embed_dim; ++j) {
        e[j] = noun_sem[n][j] + 0.5 * r[j];
        norm += e[j] * e[j];
      }
      for (double& x : e) x /= std::sqrt(norm);
      v.category_embeddings.insert(v.category_embeddings.end(), e.begin(), e.end());
    }

  for (std::size_t n = 0; n < c.n_nouns; ++n) {
    auto code = unit_gaussian(rng, c.d);
    for (double& x : code) x *= std::sqrt(static_cast<double>(c.d));
    w.noun_code.push_back(std::move(code));
  }
  for (std::size_t k = 0; k < K; ++k) {
    auto code = unit_gaussian(rng, c.d);
    for (double& x : code) x *= std::sqrt(static_cast<double>(c.d));
    w.attr_code.push_back(std::move(code));
  }
  return w;
}

std::vector<double> object_vector(const World& w, const BenchmarkConfig& c, std::size_t noun,
                                  std::size_t attr, Rng& rng) {
  std::vector<double> v(c.d);
  for (std::size_t j = 0; j < c.d; ++j)
    v[j] = quantize(std::max(0.0, w.noun_code[noun][j] + w.attr_code[attr][j] + c.feature_noise * rng.normal()));
  return v;
}

std::vector<double> prior(std::size_t K, double shift, std::size_t dominant) {
  std::vector<double> p(K, (1.0 - shift) / static_cast<double>(K));
  p[dominant] += shift;
  return p;
}

Sample make_sample(const World& w, const BenchmarkConfig& c, std::uint64_t id, std::size_t qtype,
                   std::size_t attr, Rng& rng) {
  const VocabSpec& v = w.vocab;
  const std::size_t K = c.answers_per_qtype;
  const std::size_t noun = rng.below(c.n_nouns);
  const std::size_t category = noun * K + attr;

  // Critical object first, optional overlapping duplicate, then distractors;
  // the slot order is shuffled afterwards.
  std::vector<ObjectFeature> objs;
  const BBox crit_box = random_box(rng);
  objs.push_back({object_vector(w, c, noun, attr, rng), category, crit_box});
  std::size_t n_critical = 1;
  if (rng.uniform() < c.duplicate_rate) {
    ObjectFeature dup = objs[0];
    for (double& x : dup.vector) x = quantize(std::max(0.0, x + 0.1 * rng.normal()));
    dup.bbox = jittered_box(rng, crit_box);
    objs.push_back(std::move(dup));
    n_critical = 2;
  }
  while (objs.size() < c.n_v) {
    std::size_t other = rng.below(c.n_nouns - 1);
    if (other >= noun) ++other;
    const std::size_t oattr = rng.below(K);
    BBox box = random_box(rng);
    for (int tries = 0; tries < 100; ++tries) {
      bool clear = true;
      for (std::size_t i = 0; i < n_critical; ++i) clear = clear && iou(box, objs[i].bbox) < 0.5;
      if (clear) break;
      box = random_box(rng);
    }
    objs.push_back({object_vector(w, c, other, oattr, rng), other * K + oattr, box});
  }
  std::vector<std::size_t> order(objs.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());

  Sample s;
  s.sample_id = id;
  s.qtype_id = qtype;
  s.objects.resize(objs.size());
  for (std::size_t slot = 0; slot < order.size(); ++slot) {
    s.objects[slot] = objs[order[slot]];
    if (order[slot] < n_critical) s.meta.critical_objects.push_back(slot);
  }

  s.question_tokens.resize(c.n_q);
  s.question_tokens[0] = v.qtype_words[qtype][0];
  s.question_tokens[1] = v.qtype_words[qtype][1];
  const std::size_t crit_pos = 2 + rng.below(c.n_q - 2);
  for (std::size_t p = 2; p < c.n_q; ++p)
    s.question_tokens[p] = p == crit_pos ? w.first_noun + noun : w.first_filler + rng.below(c.n_fillers);
  s.meta.critical_word = crit_pos;

  const std::size_t answer = label_answer(v, qtype, category, w.first_noun + noun);
  s.answers[answer] = 1.0;
  if (K > 1 && rng.uniform() < c.noise_rate) {
    std::size_t decoy = rng.below(K - 1);
    if (decoy >= attr) ++decoy;
    s.answers[v.qtype_answers[qtype][decoy]] = 0.6;
  }
  return s;
}

std::vector<Sample> make_split(const World& w, const BenchmarkConfig& c, std::size_t n,
                               std::uint64_t first_id, std::span<const std::size_t> dominant,
                               Rng& rng) {
  const std::size_t K = c.answers_per_qtype;
  std::vector<double> uniform_q(c.n_qtypes, 1.0);
  const auto per_qtype = apportion(n, uniform_q);

  // (qtype, attribute) slots with exact prior quotas, then shuffled.
  std::vector<std::pair<std::size_t, std::size_t>> slots;
  slots.reserve(n);
  for (std::size_t t = 0; t < c.n_qtypes; ++t) {
    const auto p = prior(K, c.shift_strength, dominant[t]);
    const auto counts = apportion(per_qtype[t], p);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t i = 0; i < counts[k]; ++i) slots.emplace_back(t, k);
  }
  rng.shuffle(slots.begin(), slots.end());

  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(make_sample(w, c, first_id + i, slots[i].first, slots[i].second, rng));
  return out;
}

}  // namespace

Benchmark generate_benchmark(const BenchmarkConfig& config) {
  config.validate();
  Rng world_rng(config.seed, 1);
  Rng prior_rng(config.seed, 2);
  Rng train_rng(config.seed, 3);
  Rng test_rng(config.seed, 4);

  World w = build_world(config, world_rng);
  const std::size_t K = config.answers_per_qtype;
  std::vector<std::size_t> dom_train(config.n_qtypes), dom_test(config.n_qtypes);
  for (std::size_t t = 0; t < config.n_qtypes; ++t) {
    dom_train[t] = prior_rng.below(K);
    dom_test[t] = K > 1 ? (dom_train[t] + 1 + prior_rng.below(K - 1)) % K : dom_train[t];
  }

  Benchmark b;
  b.train = make_split(w, config, config.n_train, 0, dom_train, train_rng);
  b.test = make_split(w, config, config.n_test, config.n_train, dom_test, test_rng);
  b.vocab = std::move(w.vocab);
  return b;
}

std::vector<std::vector<double>> answer_priors(std::span<const Sample> split,
                                               const VocabSpec& vocab) {
  std::vector<std::vector<double>> p(vocab.n_qtypes());
  std::vector<double> totals(vocab.n_qtypes(), 0.0);
  for (std::size_t t = 0; t < vocab.n_qtypes(); ++t) p[t].assign(vocab.qtype_answers[t].size(), 0.0);
  for (const auto& s : split) {
    const auto& list = vocab.qtype_answers.at(s.qtype_id);
    const auto it = std::find(list.begin(), list.end(), anchor_answer(s.answers));
    if (it == list.end()) continue;
    p[s.qtype_id][static_cast<std::size_t>(it - list.begin())] += 1.0;
    totals[s.qtype_id] += 1.0;
  }
  for (std::size_t t = 0; t < p.size(); ++t)
    if (totals[t] > 0)
      for (double& x : p[t]) x /= totals[t];
  return p;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("total_variation: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

SimScores sim_scores(const Sample& sample, const VocabSpec& vocab) {
  SimScores out;
  out.values.assign(sample.objects.size(), 0.0);
  std::vector<std::size_t> content;
  for (auto tok : sample.question_tokens)
    if (vocab.is_content_word(tok)) content.push_back(tok);
  out.has_content_words = !content.empty();
  if (content.empty()) return out;

  auto cosine = [](std::span<const double> a, std::span<const double> b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    return (na == 0 || nb == 0) ? 0.0 : dot / (std::sqrt(na) * std::sqrt(nb));
  };
  for (std::size_t i = 0; i < sample.objects.size(); ++i) {
    const auto ce = vocab.category_embedding(sample.objects[i].category_id);
    double best = -1.0;
    for (auto tok : content) best = std::max(best, cosine(ce, vocab.token_embedding(tok)));
    out.values[i] = best;
  }
  return out;
}

std::vector<RephrasingGroup> make_rephrasings(std::span<const Sample> split,
                                              const VocabSpec& vocab, std::size_t per_group,
                                              std::uint64_t seed) {
  std::vector<std::size_t> fillers;
  for (std::size_t t = 0; t < vocab.tokens.size(); ++t)
    if (vocab.token_kinds[t] == TokenKind::kFiller) fillers.push_back(t);
  if (fillers.empty()) throw std::invalid_argument("make_rephrasings: vocabulary has no filler words");

  Rng rng(seed, 17);
  std::vector<RephrasingGroup> groups;
  groups.reserve(split.size());
  for (const auto& s : split) {
    RephrasingGroup g;
    g.origin_id = s.sample_id;
    for (std::size_t r = 0; r < per_group; ++r) {
      Sample v = s;
      for (std::size_t p = 0; p < v.question_tokens.size(); ++p) {
        if (vocab.is_qtype_word(v.question_tokens[p])) continue;
        if (s.meta.critical_word && *s.meta.critical_word == p) continue;
        v.question_tokens[p] = fillers[rng.below(fillers.size())];
      }
      g.variants.push_back(std::move(v));
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

}  // namespace csst
