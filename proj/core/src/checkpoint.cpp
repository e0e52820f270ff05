#include "grlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

#include "grlab/io.hpp"

namespace grlab {

namespace {

constexpr char kMagic[4] = {'G', 'R', 'L', 'B'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
      out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) {
      throw std::runtime_error("checkpoint truncated");
    }
  }
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    }
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::uint64_t u64() { return uint(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  bool magic() {
    need(4);
    const bool ok = std::memcmp(in_.data() + pos_, kMagic, 4) == 0;
    pos_ += 4;
    return ok;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const PolicyParams& params) {
  validate_params(params);
  const ArchDescriptor& a = params.arch;
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointFormatVersion);
  w.u32(a.kind == PolicyKind::kTabular ? 0u : 1u);
  w.i32(a.vocab_size);
  w.i32(a.max_seq_len);
  w.i32(a.embed_dim);
  w.i32(a.num_layers);
  w.i32(a.num_heads);
  w.i32(a.ffn_dim);
  w.u64(params.version);
  w.u64(params.values.size());
  for (double v : params.values) {
    w.f64(v);
  }
  return w.take();
}

PolicyParams decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (!r.magic()) {
    throw std::runtime_error("checkpoint: bad magic (expected GRLB)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointFormatVersion) {
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(version));
  }
  PolicyParams p;
  const std::uint32_t kind = r.u32();
  if (kind > 1) {
    throw std::runtime_error("checkpoint: unknown policy kind");
  }
  p.arch.kind = kind == 0 ? PolicyKind::kTabular : PolicyKind::kTinyTransformer;
  p.arch.vocab_size = r.i32();
  p.arch.max_seq_len = r.i32();
  p.arch.embed_dim = r.i32();
  p.arch.num_layers = r.i32();
  p.arch.num_heads = r.i32();
  p.arch.ffn_dim = r.i32();
  p.version = r.u64();
  const std::uint64_t count = r.u64();
  try {
    p.arch.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  }
  if (count != p.arch.parameter_count()) {
    throw std::runtime_error("checkpoint: parameter count does not match arch");
  }
  r.need(count * 8);
  p.values.resize(count);
  for (auto& v : p.values) {
    v = r.f64();
  }
  if (!r.done()) {
    throw std::runtime_error("checkpoint: trailing bytes");
  }
  return p;
}

void save_checkpoint(const std::filesystem::path& path,
                     const PolicyParams& params) {
  const auto bytes = encode_checkpoint(params);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                           bytes.size()));
}

PolicyParams load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_binary_file(path));
}

}  // namespace grlab
