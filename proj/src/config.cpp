#include "csst/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace csst {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError(key, "cannot parse '" + text + "' as a number");
  }
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  if (!text.empty() && text.front() == '-') throw ConfigError(key, "must be non-negative");
  return parse_number<std::size_t>(key, text);
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "on" || text == "true" || text == "1") return true;
  if (text == "off" || text == "false" || text == "0") return false;
  throw ConfigError(key, "expected on/off, got '" + text + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_size(key, trim(item)));
  if (out.empty()) throw ConfigError(key, "empty list");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Entry {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define CSST_SIZE(NAME, FIELD, HELP)                                                              \
  Entry {                                                                                         \
    {NAME, HELP}, [](RunConfig& c, const std::string& k, const std::string& v) {                  \
      c.FIELD = parse_size(k, v);                                                                 \
    },                                                                                            \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                \
  }
#define CSST_REAL(NAME, FIELD, HELP)                                                              \
  Entry {                                                                                         \
    {NAME, HELP}, [](RunConfig& c, const std::string& k, const std::string& v) {                  \
      c.FIELD = parse_number<double>(k, v);                                                       \
    },                                                                                            \
        [](const RunConfig& c) { return fmt(c.FIELD); }                                           \
  }
#define CSST_BOOL(NAME, FIELD, HELP)                                                              \
  Entry {                                                                                         \
    {NAME, HELP}, [](RunConfig& c, const std::string& k, const std::string& v) {                  \
      c.FIELD = parse_bool(k, v);                                                                 \
    },                                                                                            \
        [](const RunConfig& c) { return std::string(c.FIELD ? "on" : "off"); }                    \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      CSST_SIZE("threads", threads, "worker threads for synthesis and evaluation"),
      CSST_SIZE("data.n_train", data.n_train, "training samples"),
      CSST_SIZE("data.n_test", data.n_test, "test samples"),
      CSST_SIZE("data.n_qtypes", data.n_qtypes, "question types"),
      CSST_SIZE("data.answers_per_qtype", data.answers_per_qtype, "candidate answers per question type"),
      CSST_SIZE("data.answer_vocab", data.answer_vocab, "answer vocabulary size"),
      CSST_SIZE("data.n_nouns", data.n_nouns, "object nouns"),
      CSST_SIZE("data.n_fillers", data.n_fillers, "filler words"),
      CSST_SIZE("data.d", data.d, "object feature dimension"),
      CSST_SIZE("data.n_v", data.n_v, "objects per image"),
      CSST_SIZE("data.n_q", data.n_q, "tokens per question"),
      CSST_SIZE("data.embed_dim", data.embed_dim, "semantic embedding dimension used by SIM"),
      CSST_REAL("data.shift_strength", data.shift_strength, "train/test answer prior shift"),
      CSST_REAL("data.noise_rate", data.noise_rate, "probability of a secondary soft answer"),
      CSST_REAL("data.feature_noise", data.feature_noise, "Gaussian noise on object features"),
      CSST_REAL("data.duplicate_rate", data.duplicate_rate, "probability of an overlapping duplicate object"),
      Entry{{"data.seed", "generator seed"},
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.data.seed = parse_number<std::uint64_t>(k, v);
            },
            [](const RunConfig& c) { return std::to_string(c.data.seed); }},
      CSST_REAL("css.eta", css.eta, "exp-share threshold for dynamic K"),
      CSST_REAL("css.iou_threshold", css.iou_threshold, "overlap that pulls an object into the critical set"),
      CSST_SIZE("css.init_set_size", css.init_set_size, "initial object set size"),
      CSST_REAL("css.delta", css.delta, "probability of Q-CSS per sample"),
      CSST_SIZE("css.top_k_words", css.top_k_words, "critical words per question"),
      CSST_SIZE("train.epochs", train.epochs, "training epochs"),
      CSST_SIZE("train.batch_size", train.batch_size, "batch size"),
      CSST_REAL("train.learning_rate", train.learning_rate, "Adamax step size"),
      Entry{{"train.optimizer", "optimizer kind (adamax)"},
            [](RunConfig& c, const std::string&, const std::string& v) { c.train.optimizer = v; },
            [](const RunConfig& c) { return c.train.optimizer; }},
      CSST_REAL("train.beta1", train.beta1, "Adamax first-moment decay"),
      CSST_REAL("train.beta2", train.beta2, "Adamax infinity-norm decay"),
      CSST_REAL("train.epsilon", train.epsilon, "Adamax epsilon"),
      CSST_REAL("train.w_xe", train.w_xe, "weight of both XE terms"),
      CSST_REAL("train.w_crg", train.w_crg, "weight of CR-G"),
      CSST_REAL("train.w_crl", train.w_crl, "weight of CR-L"),
      CSST_REAL("train.tau", train.tau, "contrastive temperature"),
      CSST_REAL("train.w_qonly", train.w_qonly, "question-only XE weight (sigmoid_product only)"),
      Entry{{"train.cr", "contrastive loss: none, g or l"},
            [](RunConfig& c, const std::string& k, const std::string& v) {
              try {
                c.train.cr_mode = parse_cr_mode(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(k, e.what());
              }
            },
            [](const RunConfig& c) { return std::string(to_string(c.train.cr_mode)); }},
      CSST_BOOL("train.css", train.css_enabled, "counterfactual XE on synthesized samples"),
      CSST_BOOL("train.cf_xe_fused", train.cf_xe_fused, "counterfactual XE through the fused head"),
      Entry{{"train.fusion", "ensemble fusion: none, sigmoid_product or logit_sum"},
            [](RunConfig& c, const std::string& k, const std::string& v) {
              try {
                c.train.fusion = parse_fusion_mode(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(k, e.what());
              }
            },
            [](const RunConfig& c) { return std::string(to_string(c.train.fusion)); }},
      CSST_SIZE("train.hidden", train.hidden, "hidden width"),
      CSST_SIZE("train.embed_dim", train.embed_dim, "word embedding width"),
      CSST_SIZE("train.cf_warmup_epochs", train.cf_warmup_epochs, "epochs before CSS and CR switch on"),
      Entry{{"train.cr_qtypes", "per question type 0/1 list of CR use; empty = all"},
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.train.cr_qtype_mask.clear();
              if (v.empty()) return;
              for (auto x : parse_size_list(k, v)) {
                if (x > 1) throw ConfigError(k, "entries must be 0 or 1");
                c.train.cr_qtype_mask.push_back(static_cast<std::uint8_t>(x));
              }
            },
            [](const RunConfig& c) {
              std::vector<int> v(c.train.cr_qtype_mask.begin(), c.train.cr_qtype_mask.end());
              return fmt_list(v);
            }},
      Entry{{"train.seed", "parameter init and training streams"},
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.train.seed = parse_number<std::uint64_t>(k, v);
            },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      Entry{{"eval.ai_ks", "comma list of k for AI"},
            [](RunConfig& c, const std::string& k, const std::string& v) { c.eval.ai_ks = parse_size_list(k, v); },
            [](const RunConfig& c) { return fmt_list(c.eval.ai_ks); }},
      Entry{{"eval.cs_ks", "comma list of k for CS"},
            [](RunConfig& c, const std::string& k, const std::string& v) { c.eval.cs_ks = parse_size_list(k, v); },
            [](const RunConfig& c) { return fmt_list(c.eval.cs_ks); }},
      CSST_SIZE("eval.rephrasings_per_group", eval.rephrasings_per_group, "rephrasings per consensus group"),
      Entry{{"eval.rephrasing_seed", "seed for rephrasing groups"},
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.eval.rephrasing_seed = parse_number<std::uint64_t>(k, v);
            },
            [](const RunConfig& c) { return std::to_string(c.eval.rephrasing_seed); }},
  };
  return table;
}

#undef CSST_SIZE
#undef CSST_REAL
#undef CSST_BOOL

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k{{"seed", "sets data.seed, train.seed and eval.rephrasing_seed"}};
    for (const auto& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "seed") {
    const auto s = parse_number<std::uint64_t>(key, v);
    data.seed = train.seed = eval.rephrasing_seed = s;
    return;
  }
  for (const auto& e : entries()) {
    if (e.key.name == key) {
      e.set(*this, key, v);
      return;
    }
  }
  throw ConfigError(key, "unknown key");
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config", path.string() + ":" + std::to_string(n) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    try {
      set(key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(e.key(), std::string(e.what()).substr(e.key().size() + 2) + " (" + path.string() +
                                     ":" + std::to_string(n) + ")");
    }
  }
}

void RunConfig::validate() const {
  auto wrap = [](const char* section, auto&& check) {
    try {
      check();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(section, e.what());
    }
  };
  wrap("data", [&] { data.validate(); });
  wrap("css", [&] { css.validate(); });
  wrap("train", [&] { train.validate(); });
  if (threads < 1) throw ConfigError("threads", "must be at least 1");
  if (!train.cr_qtype_mask.empty() && train.cr_qtype_mask.size() != data.n_qtypes) {
    throw ConfigError("train.cr_qtypes", "needs one entry per question type");
  }
  if (eval.rephrasings_per_group < 1) throw ConfigError("eval.rephrasings_per_group", "must be at least 1");
  for (auto k : eval.ai_ks)
    if (k < 1 || k > data.n_v) throw ConfigError("eval.ai_ks", "k must lie in [1, data.n_v]");
  for (auto k : eval.cs_ks)
    if (k < 1 || k > eval.rephrasings_per_group) {
      throw ConfigError("eval.cs_ks", "k must lie in [1, eval.rephrasings_per_group]");
    }
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& e : entries()) out += e.key.name + " = " + e.get(*this) + "\n";
  return out;
}

}  // namespace csst
