#include "sslfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "sslfuse/errors.hpp"

namespace sslfuse {

namespace {

constexpr std::uint16_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  template <class T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
  std::vector<unsigned char> take() { return std::move(out_); }

 private:
  std::vector<unsigned char> out_;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& data, std::string origin) : data_(data), origin_(std::move(origin)) {}
  template <class T>
  T le(const char* field) {
    need(sizeof(T), field);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::string text(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n, const char* field) {
    if (data_.size() - pos_ < n) throw FormatError(origin_ + ": truncated at " + field);
  }
  const std::vector<unsigned char>& data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedBlob* Checkpoint::find(const std::string& name) const {
  for (const auto& b : blobs)
    if (b.name == name) return &b;
  return nullptr;
}

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes("SFCK", 4);
  w.le<std::uint16_t>(kVersion);
  w.le<std::uint16_t>(0);
  w.le<std::uint64_t>(ckpt.fingerprint);
  w.le<std::uint32_t>(ckpt.epoch);
  w.le<std::uint32_t>(0);
  w.le<std::uint64_t>(ckpt.step);
  w.le<std::uint64_t>(std::bit_cast<std::uint64_t>(ckpt.best_valid_loss));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.config_text.size()));
  w.bytes(ckpt.config_text.data(), ckpt.config_text.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.blobs.size()));
  for (const auto& b : ckpt.blobs) {
    if (shape_numel(b.shape) != b.values.size()) throw ShapeError("checkpoint blob " + b.name + " has inconsistent shape");
    w.le<std::uint32_t>(static_cast<std::uint32_t>(b.name.size()));
    w.bytes(b.name.data(), b.name.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(b.shape.size()));
    for (auto e : b.shape) w.le<std::uint32_t>(static_cast<std::uint32_t>(e));
    for (float v : b.values) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(v));
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.text(4, "magic") != "SFCK") throw FormatError(origin + ": bad magic");
  const auto version = r.le<std::uint16_t>("version");
  if (version != kVersion) throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(version));
  r.le<std::uint16_t>("reserved");
  Checkpoint ckpt;
  ckpt.fingerprint = r.le<std::uint64_t>("fingerprint");
  ckpt.epoch = r.le<std::uint32_t>("epoch");
  r.le<std::uint32_t>("reserved");
  ckpt.step = r.le<std::uint64_t>("step");
  ckpt.best_valid_loss = std::bit_cast<double>(r.le<std::uint64_t>("best loss"));
  const auto config_len = r.le<std::uint32_t>("config length");
  ckpt.config_text = r.text(config_len, "config text");
  const auto count = r.le<std::uint32_t>("blob count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedBlob b;
    const auto name_len = r.le<std::uint32_t>("blob name length");
    b.name = r.text(name_len, "blob name");
    const auto rank = r.le<std::uint32_t>("blob rank");
    if (rank > 8) throw FormatError(origin + ": implausible rank for blob " + b.name);
    std::uint64_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      b.shape.push_back(r.le<std::uint32_t>("blob extent"));
      numel *= b.shape.back();
      if (numel > bytes.size()) throw FormatError(origin + ": blob " + b.name + " larger than file");
    }
    b.values.resize(numel);
    for (auto& v : b.values) v = std::bit_cast<float>(r.le<std::uint32_t>("blob values"));
    ckpt.blobs.push_back(std::move(b));
  }
  if (!r.done()) throw FormatError(origin + ": trailing bytes after last blob");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw StorageError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw StorageError("cannot rename " + tmp.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

}  // namespace sslfuse
