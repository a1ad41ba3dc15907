#include "shapewords/shape2clip.hpp"

#include "shapewords/backends.hpp"
#include "shapewords/config.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

namespace shapewords {

TokenStrategy parse_strategy(const std::string& name) {
  if (name == "all_tokens") return TokenStrategy::AllTokens;
  if (name == "object_only") return TokenStrategy::ObjectOnly;
  if (name == "eos_only") return TokenStrategy::EosOnly;
  if (name == "object_and_eos") return TokenStrategy::ObjectAndEos;
  throw ValidationError("unknown strategy '" + name + "' (expected all_tokens, object_only, eos_only, object_and_eos)");
}

std::string to_string(TokenStrategy s) {
  switch (s) {
    case TokenStrategy::AllTokens:
      return "all_tokens";
    case TokenStrategy::ObjectOnly:
      return "object_only";
    case TokenStrategy::EosOnly:
      return "eos_only";
    case TokenStrategy::ObjectAndEos:
      return "object_and_eos";
  }
  return "unknown";
}

Shape2ClipDims dims_from_config(const Config& cfg, int text_dim, int shape_dim) {
  Shape2ClipDims d;
  d.text_dim = text_dim;
  d.shape_dim = shape_dim;
  d.attn_dim = static_cast<int>(cfg.get_int("shape2clip.attn_dim", d.attn_dim));
  d.hidden_dim = static_cast<int>(cfg.get_int("shape2clip.hidden_dim", d.hidden_dim));
  d.blocks = static_cast<int>(cfg.get_int("shape2clip.blocks", d.blocks));
  d.heads = static_cast<int>(cfg.get_int("shape2clip.heads", d.heads));
  d.validate();
  return d;
}

namespace {

constexpr char kMagic[8] = {'S', '2', 'C', 'L', 'I', 'P', 'v', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    out.insert(out.end(), c, c + n);
  }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  std::vector<unsigned char> out;

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
  }
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& data, std::size_t limit) : data_(data), limit_(limit) {}
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > limit_) throw FormatError("corrupt parameter file: truncated");
  }
  const std::vector<unsigned char>& data_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> serialize_params(const Shape2ClipParams<float>& params) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  const auto& d = params.dims;
  std::uint32_t count = 0;
  params.for_each_tensor([&](const std::string&, const Matrix<float>&) { ++count; });
  for (std::uint32_t v : {kParamFormatVersion, static_cast<std::uint32_t>(d.text_dim), static_cast<std::uint32_t>(d.shape_dim),
                          static_cast<std::uint32_t>(d.attn_dim), static_cast<std::uint32_t>(d.hidden_dim),
                          static_cast<std::uint32_t>(d.blocks), static_cast<std::uint32_t>(d.heads), count})
    w.u32(v);
  params.for_each_tensor([&](const std::string& name, const Matrix<float>& m) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) w.f32(m(i, j));
  });
  w.u64(fnv1a(std::string(w.out.begin(), w.out.end())));
  return std::move(w.out);
}

Shape2ClipParams<float> deserialize_params(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw FormatError("corrupt parameter file: bad magic");
  const std::size_t body = bytes.size() - 8;
  Reader r(bytes, body);
  char magic[8];
  r.bytes(magic, 8);
  const std::uint32_t version = r.u32();
  if (version != kParamFormatVersion)
    throw FormatError("parameter file version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kParamFormatVersion) + ")");

  Shape2ClipDims dims;
  dims.text_dim = static_cast<int>(r.u32());
  dims.shape_dim = static_cast<int>(r.u32());
  dims.attn_dim = static_cast<int>(r.u32());
  dims.hidden_dim = static_cast<int>(r.u32());
  dims.blocks = static_cast<int>(r.u32());
  dims.heads = static_cast<int>(r.u32());
  const std::uint32_t count = r.u32();
  try {
    dims.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("corrupt parameter file: ") + e.what());
  }
  if (dims.blocks > 1024) throw FormatError("corrupt parameter file: implausible block count");

  Shape2ClipParams<float> p = init_params<float>(dims, 0);
  std::uint32_t expected = 0;
  p.for_each_tensor([&](const std::string&, const Matrix<float>&) { ++expected; });
  if (count != expected) throw FormatError("corrupt parameter file: tensor count mismatch");

  p.for_each_tensor([&](const std::string& name, Matrix<float>& m) {
    const std::uint16_t len = r.u16();
    std::string got(len, '\0');
    r.bytes(got.data(), len);
    if (got != name) throw FormatError("corrupt parameter file: expected tensor " + name + ", found " + got);
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (rows != m.rows() || cols != m.cols()) throw FormatError("corrupt parameter file: tensor " + name + " has wrong shape");
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f32();
  });
  if (r.position() != body) throw FormatError("corrupt parameter file: trailing bytes");
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[body + i]) << (8 * i);
  if (stored != fnv1a(std::string(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(body))))
    throw FormatError("corrupt parameter file: checksum mismatch");
  return p;
}

void save_params_file(const std::string& path, const Shape2ClipParams<float>& params) {
  const auto bytes = serialize_params(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path);
}

Shape2ClipParams<float> load_params_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open parameter file " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

}  // namespace shapewords
