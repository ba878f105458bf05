#include "csst/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "csst/css.hpp"
#include "csst/parallel.hpp"

namespace csst {

namespace {

constexpr std::size_t kChunk = 256;

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double score_of(const AnswerMap& answers, std::size_t id) {
  const auto it = answers.find(id);
  return it == answers.end() ? 0.0 : it->second;
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

std::vector<std::vector<double>> logits_for(const ModelParams& params, std::span<const ModelInput> inputs,
                                            std::size_t threads) {
  std::vector<std::vector<double>> out(inputs.size());
  parallel_chunks(inputs.size(), kChunk, threads, [&](std::size_t b, std::size_t e) {
    auto part = predict_logits(params, inputs.subspan(b, e - b), kChunk);
    std::move(part.begin(), part.end(), out.begin() + static_cast<std::ptrdiff_t>(b));
  });
  return out;
}

}  // namespace

std::vector<std::vector<double>> split_logits(const ModelParams& params, std::span<const Sample> split,
                                              std::size_t threads) {
  std::vector<ModelInput> inputs;
  inputs.reserve(split.size());
  for (const auto& s : split) inputs.push_back(to_input(s));
  return logits_for(params, inputs, threads);
}

AccuracyResult accuracy_from_logits(std::span<const std::vector<double>> logits,
                                    std::span<const Sample> split) {
  if (split.empty()) throw std::invalid_argument("accuracy: empty split");
  if (logits.size() != split.size()) throw std::invalid_argument("accuracy: one logit row per sample");
  AccuracyResult r;
  std::map<std::size_t, double> sums;
  double total = 0.0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const double s = score_of(split[i].answers, argmax(logits[i]));
    total += s;
    sums[split[i].qtype_id] += s;
    r.counts[split[i].qtype_id] += 1;
  }
  r.overall = 100.0 * total / static_cast<double>(split.size());
  for (const auto& [t, s] : sums) r.per_qtype[t] = 100.0 * s / static_cast<double>(r.counts[t]);
  return r;
}

AccuracyResult accuracy(const ModelParams& params, std::span<const Sample> split, std::size_t threads) {
  return accuracy_from_logits(split_logits(params, split, threads), split);
}

// ---------------------------------------------------------------------------
// Head / tail

TrainPriors TrainPriors::from_split(std::span<const Sample> train, const VocabSpec& vocab) {
  TrainPriors p;
  p.answers = vocab.qtype_answers;
  p.freq = answer_priors(train, vocab);
  return p;
}

bool TrainPriors::is_tail(const Sample& s) const {
  const auto& ids = answers.at(s.qtype_id);
  const auto& f = freq.at(s.qtype_id);
  const double mean = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
  const auto it = std::find(ids.begin(), ids.end(), anchor_answer(s.answers));
  const double own = it == ids.end() ? 0.0 : f[static_cast<std::size_t>(it - ids.begin())];
  return own < mean;
}

HeadTail head_tail_from_logits(std::span<const std::vector<double>> logits, std::span<const Sample> split,
                               const TrainPriors& priors) {
  if (split.empty()) throw std::invalid_argument("head_tail_metrics: empty split");
  HeadTail h;
  double all = 0.0, tail = 0.0, head = 0.0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const double s = score_of(split[i].answers, argmax(logits[i]));
    all += s;
    if (priors.is_tail(split[i])) {
      tail += s;
      ++h.n_tail;
    } else {
      head += s;
      ++h.n_head;
    }
  }
  h.acc_all = 100.0 * all / static_cast<double>(split.size());
  if (h.n_tail) h.acc_tail = 100.0 * tail / static_cast<double>(h.n_tail);
  if (h.n_head) h.acc_head = 100.0 * head / static_cast<double>(h.n_head);
  if (h.acc_tail && h.acc_head && *h.acc_tail > 0) h.delta = (*h.acc_head - *h.acc_tail) / *h.acc_tail;
  return h;
}

HeadTail head_tail_metrics(const ModelParams& params, std::span<const Sample> split,
                           const TrainPriors& priors, std::size_t threads) {
  return head_tail_from_logits(split_logits(params, split, threads), split, priors);
}

// ---------------------------------------------------------------------------
// Average importance

SimProvider vocab_sim(const VocabSpec& vocab) {
  return [&vocab](const Sample& s) { return sim_scores(s, vocab).values; };
}

std::map<std::size_t, double> ai_scores(const ModelParams& params, std::span<const Sample> split,
                                        const SimProvider& sim, std::span<const std::size_t> ks,
                                        std::size_t threads) {
  if (split.empty()) throw std::invalid_argument("ai_score: empty split");
  for (auto k : ks)
    if (k == 0) throw std::invalid_argument("ai_score: k must be at least 1");

  // Per sample: SIM sums of the top-k objects, zero when answered wrongly.
  std::vector<std::vector<double>> terms(split.size(), std::vector<double>(ks.size(), 0.0));
  parallel_chunks(split.size(), kChunk, threads, [&](std::size_t b, std::size_t e) {
    std::vector<ModelInput> inputs;
    std::vector<std::size_t> anchors;
    for (std::size_t i = b; i < e; ++i) {
      inputs.push_back(to_input(split[i]));
      anchors.push_back(anchor_answer(split[i].answers));
    }
    const auto logits = predict_logits(params, inputs, kChunk);
    const Attribution attr = attribute(params, inputs, anchors);
    for (std::size_t i = b; i < e; ++i) {
      if (argmax(logits[i - b]) != anchors[i - b]) continue;
      const auto& s = attr.objects[i - b];
      const auto sv = sim(split[i]);
      std::vector<std::size_t> order(s.units.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t x, std::size_t y) { return std::abs(s.scores[x]) > std::abs(s.scores[y]); });
      for (std::size_t j = 0; j < ks.size(); ++j) {
        double sum = 0.0;
        for (std::size_t r = 0; r < std::min(ks[j], order.size()); ++r) sum += sv.at(s.units[order[r]]);
        terms[i][j] = sum;
      }
    }
  });

  std::map<std::size_t, double> out;
  for (std::size_t j = 0; j < ks.size(); ++j) {
    double total = 0.0;
    for (const auto& t : terms) total += t[j];
    out[ks[j]] = total / static_cast<double>(split.size());
  }
  return out;
}

double ai_score(const ModelParams& params, std::span<const Sample> split, const SimProvider& sim,
                std::size_t k, std::size_t threads) {
  return ai_scores(params, split, sim, std::span(&k, 1), threads).at(k);
}

// ---------------------------------------------------------------------------
// Confidence improvement

double ci_score(const ModelParams& params, std::span<const Sample> split, std::size_t threads) {
  if (split.empty()) throw std::invalid_argument("ci_score: empty split");
  std::vector<ModelInput> full, reduced;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto& s = split[i];
    if (!s.meta.critical_word || s.question_tokens.size() < 2) continue;
    full.push_back(to_input(s));
    reduced.push_back(delete_word(to_input(s), *s.meta.critical_word));
    rows.push_back(i);
  }
  const auto before = logits_for(params, full, threads);
  const auto after = logits_for(params, reduced, threads);
  std::size_t hits = 0;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const std::size_t a = anchor_answer(split[rows[j]].answers);
    if (argmax(before[j]) == a && sigmoid(before[j][a]) > sigmoid(after[j][a])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(split.size());
}

// ---------------------------------------------------------------------------
// Consensus score

double consensus_group_score(std::size_t n, std::size_t c, std::size_t k) {
  if (k == 0) throw std::invalid_argument("consensus score: k must be at least 1");
  if (k > n) throw std::invalid_argument("consensus score: k exceeds the group size");
  if (c > n) throw std::invalid_argument("consensus score: more correct answers than rephrasings");
  if (c < k) return 0.0;
  // C(c,k)/C(n,k) = prod_{i<k} (c-i)/(n-i)
  double p = 1.0;
  for (std::size_t i = 0; i < k; ++i) p *= static_cast<double>(c - i) / static_cast<double>(n - i);
  return p;
}

std::map<std::size_t, double> cs_scores(const ModelParams& params, std::span<const RephrasingGroup> groups,
                                        std::span<const std::size_t> ks, std::size_t threads) {
  if (groups.empty()) throw std::invalid_argument("cs_k: no rephrasing groups");
  std::vector<ModelInput> inputs;
  for (const auto& g : groups)
    for (const auto& v : g.variants) inputs.push_back(to_input(v));
  const auto logits = logits_for(params, inputs, threads);

  std::map<std::size_t, double> out;
  for (auto k : ks) out[k] = 0.0;
  std::size_t row = 0;
  for (const auto& g : groups) {
    std::size_t correct = 0;
    for (const auto& v : g.variants) correct += argmax(logits[row++]) == anchor_answer(v.answers) ? 1 : 0;
    for (auto k : ks) out[k] += consensus_group_score(g.variants.size(), correct, k);
  }
  for (auto& [k, v] : out) v = 100.0 * v / static_cast<double>(groups.size());
  return out;
}

double cs_k(const ModelParams& params, std::span<const RephrasingGroup> groups, std::size_t k,
            std::size_t threads) {
  return cs_scores(params, groups, std::span(&k, 1), threads).at(k);
}

// ---------------------------------------------------------------------------
// Report

MetricsReport evaluate(const ModelParams& params, std::span<const Sample> train, std::span<const Sample> test,
                       const VocabSpec& vocab, const EvalOptions& options) {
  MetricsReport r;
  r.n_samples = test.size();
  const auto logits = split_logits(params, test, options.threads);
  r.accuracy = accuracy_from_logits(logits, test);
  r.head_tail = head_tail_from_logits(logits, test, TrainPriors::from_split(train, vocab));
  r.ai = ai_scores(params, test, vocab_sim(vocab), options.ai_ks, options.threads);
  r.ci = ci_score(params, test, options.threads);
  const auto groups = make_rephrasings(test, vocab, options.rephrasings_per_group, options.rephrasing_seed);
  r.n_groups = groups.size();
  r.cs = cs_scores(params, groups, options.cs_ks, options.threads);
  return r;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["schema_version"] = kMetricsSchemaVersion;
  j["n_samples"] = n_samples;
  j["accuracy"]["overall"] = accuracy.overall;
  for (const auto& [t, a] : accuracy.per_qtype) {
    j["accuracy"]["per_qtype"][std::to_string(t)] = a;
    j["accuracy"]["counts"][std::to_string(t)] = accuracy.counts.at(t);
  }
  j["head_tail"]["acc_all"] = head_tail.acc_all;
  j["head_tail"]["acc_tail"] = opt(head_tail.acc_tail);
  j["head_tail"]["acc_head"] = opt(head_tail.acc_head);
  j["head_tail"]["delta"] = opt(head_tail.delta);
  j["head_tail"]["n_tail"] = head_tail.n_tail;
  j["head_tail"]["n_head"] = head_tail.n_head;
  for (const auto& [k, v] : ai) j["ai"][std::to_string(k)] = v;
  j["ci"] = ci;
  for (const auto& [k, v] : cs) j["cs"][std::to_string(k)] = v;
  j["n_groups"] = n_groups;
  return j.dump(2) + "\n";
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << "metric,value\n";
  auto row = [&](const std::string& name, const std::optional<double>& v) {
    out << name << ',' << (v ? num(*v) : std::string()) << '\n';
  };
  row("accuracy", accuracy.overall);
  for (const auto& [t, a] : accuracy.per_qtype) row("accuracy_qtype_" + std::to_string(t), a);
  row("acc_all", head_tail.acc_all);
  row("acc_tail", head_tail.acc_tail);
  row("acc_head", head_tail.acc_head);
  row("delta", head_tail.delta);
  for (const auto& [k, v] : ai) row("ai_" + std::to_string(k), v);
  row("ci", ci);
  for (const auto& [k, v] : cs) row("cs_" + std::to_string(k), v);
  row("n_samples", static_cast<double>(n_samples));
  return out.str();
}

void write_metrics(const std::filesystem::path& dir, const MetricsReport& report) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, body] : {std::pair{"metrics.json", report.to_json()}, std::pair{"metrics.csv", report.to_csv()}}) {
    std::ofstream out(dir / name, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << body;
  }
}

}  // namespace csst
