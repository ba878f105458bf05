#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "csst/dataset.hpp"

namespace csst {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path with_suffix(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  p += ext;
  return p;
}

void put_f32(std::string& out, double x) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(x));
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
}

double get_f32(const std::string& blob, std::size_t index) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b)
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[index * 4 + b])) << (8 * b);
  return static_cast<double>(std::bit_cast<float>(bits));
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + p.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw FormatError("short write to " + p.string());
}

}  // namespace

void save_split(const fs::path& stem, std::span<const Sample> samples) {
  std::string manifest;
  std::string blob;
  std::size_t offset = 0;
  for (const auto& s : samples) {
    json j;
    j["id"] = s.sample_id;
    j["qtype"] = s.qtype_id;
    j["tokens"] = s.question_tokens;
    json answers = json::array();
    for (const auto& [id, t] : s.answers) answers.push_back({{"id", id}, {"t", t}});
    j["answers"] = std::move(answers);
    json cats = json::array(), boxes = json::array();
    const std::size_t dim = s.objects.empty() ? 0 : s.objects.front().vector.size();
    for (const auto& o : s.objects) {
      if (o.vector.size() != dim) throw FormatError("ragged feature vectors in sample " + std::to_string(s.sample_id));
      cats.push_back(o.category_id);
      boxes.push_back({o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2});
      for (double x : o.vector) put_f32(blob, x);
    }
    j["categories"] = std::move(cats);
    j["bboxes"] = std::move(boxes);
    j["dim"] = dim;
    j["offset"] = offset;
    offset += s.objects.size() * dim;
    j["critical_objects"] = s.meta.critical_objects;
    j["critical_word"] = s.meta.critical_word ? json(*s.meta.critical_word) : json(nullptr);
    manifest += j.dump();
    manifest += '\n';
  }
  write_file(with_suffix(stem, ".jsonl"), manifest);
  write_file(with_suffix(stem, ".f32"), blob);
}

std::vector<Sample> load_split(const fs::path& stem) {
  const std::string manifest = read_file(with_suffix(stem, ".jsonl"));
  const std::string blob = read_file(with_suffix(stem, ".f32"));
  if (blob.size() % 4 != 0) throw FormatError("feature blob length is not a multiple of 4");
  const std::size_t n_floats = blob.size() / 4;

  std::vector<Sample> out;
  std::istringstream lines(manifest);
  std::string line;
  std::size_t lineno = 0;
  std::size_t expected_offset = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Sample s;
      s.sample_id = j.at("id").get<std::uint64_t>();
      s.qtype_id = j.at("qtype").get<std::size_t>();
      s.question_tokens = j.at("tokens").get<std::vector<std::size_t>>();
      for (const auto& a : j.at("answers")) s.answers[a.at("id").get<std::size_t>()] = a.at("t").get<double>();
      const auto cats = j.at("categories").get<std::vector<std::size_t>>();
      const auto& boxes = j.at("bboxes");
      const std::size_t dim = j.at("dim").get<std::size_t>();
      const std::size_t offset = j.at("offset").get<std::size_t>();
      if (boxes.size() != cats.size()) throw FormatError("bbox/category count mismatch", lineno);
      if (offset != expected_offset) throw FormatError("blob offset out of sequence", lineno);
      if (offset + cats.size() * dim > n_floats) throw FormatError("blob shorter than manifest", lineno);
      for (std::size_t i = 0; i < cats.size(); ++i) {
        ObjectFeature o;
        o.category_id = cats[i];
        const auto& b = boxes[i];
        if (b.size() != 4) throw FormatError("bbox needs 4 coordinates", lineno);
        o.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
        if (!o.bbox.valid()) throw FormatError("degenerate bbox", lineno);
        o.vector.resize(dim);
        for (std::size_t k = 0; k < dim; ++k) o.vector[k] = get_f32(blob, offset + i * dim + k);
        s.objects.push_back(std::move(o));
      }
      expected_offset = offset + cats.size() * dim;
      s.meta.critical_objects = j.at("critical_objects").get<std::vector<std::size_t>>();
      if (!j.at("critical_word").is_null()) s.meta.critical_word = j.at("critical_word").get<std::size_t>();
      out.push_back(std::move(s));
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception& e) {
      throw FormatError(std::string("malformed manifest entry: ") + e.what(), lineno);
    }
  }
  if (expected_offset != n_floats) {
    throw FormatError("feature blob holds " + std::to_string(n_floats) + " floats, manifest describes " +
                      std::to_string(expected_offset));
  }
  return out;
}

namespace {

const char* kind_name(TokenKind k) {
  switch (k) {
    case TokenKind::kMask: return "mask";
    case TokenKind::kQtypeWord: return "qtype";
    case TokenKind::kNoun: return "noun";
    case TokenKind::kFiller: return "filler";
  }
  return "?";
}

TokenKind kind_from(const std::string& s) {
  if (s == "mask") return TokenKind::kMask;
  if (s == "qtype") return TokenKind::kQtypeWord;
  if (s == "noun") return TokenKind::kNoun;
  if (s == "filler") return TokenKind::kFiller;
  throw FormatError("unknown token kind '" + s + "'");
}

}  // namespace

void save_vocab(const fs::path& path, const VocabSpec& v) {
  json j;
  j["format"] = "csst-vocab";
  j["version"] = 1;
  j["tokens"] = v.tokens;
  json kinds = json::array();
  for (auto k : v.token_kinds) kinds.push_back(kind_name(k));
  j["token_kinds"] = std::move(kinds);
  j["answers"] = v.answers;
  j["categories"] = v.categories;
  j["embed_dim"] = v.embed_dim;
  j["category_embeddings"] = v.category_embeddings;
  j["token_embeddings"] = v.token_embeddings;
  j["qtype_words"] = v.qtype_words;
  j["qtype_answers"] = v.qtype_answers;
  j["category_noun"] = v.category_noun;
  j["category_attribute"] = v.category_attribute;
  write_file(path, j.dump(1) + "\n");
}

VocabSpec load_vocab(const fs::path& path) {
  try {
    const json j = json::parse(read_file(path));
    if (j.at("format") != "csst-vocab" || j.at("version") != 1) throw FormatError("unsupported vocab format");
    VocabSpec v;
    v.tokens = j.at("tokens").get<std::vector<std::string>>();
    for (const auto& k : j.at("token_kinds")) v.token_kinds.push_back(kind_from(k.get<std::string>()));
    v.answers = j.at("answers").get<std::vector<std::string>>();
    v.categories = j.at("categories").get<std::vector<std::string>>();
    v.embed_dim = j.at("embed_dim").get<std::size_t>();
    v.category_embeddings = j.at("category_embeddings").get<std::vector<double>>();
    v.token_embeddings = j.at("token_embeddings").get<std::vector<double>>();
    v.qtype_words = j.at("qtype_words").get<std::vector<std::vector<std::size_t>>>();
    v.qtype_answers = j.at("qtype_answers").get<std::vector<std::vector<std::size_t>>>();
    v.category_noun = j.at("category_noun").get<std::vector<std::size_t>>();
    v.category_attribute = j.at("category_attribute").get<std::vector<std::size_t>>();
    if (v.token_kinds.size() != v.tokens.size() ||
        v.token_embeddings.size() != v.tokens.size() * v.embed_dim ||
        v.category_embeddings.size() != v.categories.size() * v.embed_dim) {
      throw FormatError("vocab tables have inconsistent sizes");
    }
    if (v.tokens.empty() || v.tokens[VocabSpec::kMaskId] != VocabSpec::kMaskToken) {
      throw FormatError("token 0 must be the reserved [MASK]");
    }
    return v;
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace csst
