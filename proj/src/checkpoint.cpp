#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "csst/model.hpp"

namespace csst {

namespace {

constexpr char kMagic[8] = {'C', 'S', 'S', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  const std::string& str() const { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : buf_(std::move(data)) {}
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw FormatError("checkpoint truncated");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(params.fusion_mode()));
  const ModelDims& d = params.dims();
  for (auto v : {d.vocab_size, d.n_answers, d.feature_dim, d.hidden, d.embed_dim, d.max_tokens})
    w.u64(v);
  w.u32(static_cast<std::uint32_t>(kParamCount));
  for (std::size_t i = 0; i < kParamCount; ++i) {
    const std::string name = param_name(static_cast<Param>(i));
    const auto& t = params.tensors()[i];
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) w.u64(e);
    for (double v : t.values) w.f64(v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
  if (!out) throw FormatError("short write to " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str());

  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError("not a CSST checkpoint");
  if (r.u32() != kVersion) throw FormatError("unsupported checkpoint version");
  const std::uint32_t fusion = r.u32();
  if (fusion > static_cast<std::uint32_t>(FusionMode::kLogitSum)) throw FormatError("bad fusion mode");
  ModelDims d;
  d.vocab_size = r.u64();
  d.n_answers = r.u64();
  d.feature_dim = r.u64();
  d.hidden = r.u64();
  d.embed_dim = r.u64();
  d.max_tokens = r.u64();

  ModelParams p = ModelParams::init(d, static_cast<FusionMode>(fusion), 0);
  if (r.u32() != kParamCount) throw FormatError("unexpected tensor count");
  for (std::size_t i = 0; i < kParamCount; ++i) {
    std::string name(r.u32(), '\0');
    r.bytes(name.data(), name.size());
    if (name != param_name(static_cast<Param>(i))) throw FormatError("unexpected tensor '" + name + "'");
    auto& t = p.tensors()[i];
    ad::Shape shape(r.u32());
    for (auto& e : shape) e = r.u64();
    if (shape != t.shape) throw FormatError("tensor '" + name + "' has shape " + ad::to_string(shape));
    for (double& v : t.values) v = r.f64();
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint payload");
  return p;
}

}  // namespace csst
