#include "blockdrop/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace blockdrop {

namespace {

constexpr char kMagic[4] = {'B', 'D', 'C', 'K'};
constexpr uint8_t kVersion = 1;

uint64_t fnv1a64(const std::vector<uint8_t>& buf, size_t len) {
  uint64_t h = 14695981039346656037ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= buf[i];
    h *= 1099511628211ULL;
  }
  return h;
}

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
}

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}

void put_u64(std::vector<uint8_t>& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back((v >> (8 * i)) & 0xff);
}

void put_str(std::vector<uint8_t>& b, const std::string& s) {
  if (s.size() > 0xffff) throw IoError("checkpoint string too long");
  put_u16(b, static_cast<uint16_t>(s.size()));
  b.insert(b.end(), s.begin(), s.end());
}

void put_f32(std::vector<uint8_t>& b, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(b, v);
}

class Reader {
 public:
  Reader(std::vector<uint8_t> buf, std::string path)
      : buf_(std::move(buf)), path_(std::move(path)) {}

  uint8_t u8() { return need(1), buf_[pos_++]; }

  uint16_t u16() {
    need(2);
    uint16_t v = buf_[pos_] | (buf_[pos_ + 1] << 8);
    pos_ += 2;
    return v;
  }

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }

  float f32() {
    uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }

  std::string str() {
    uint16_t n = u16();
    need(n);
    std::string s(buf_.begin() + pos_, buf_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }

  size_t pos() const { return pos_; }
  const std::vector<uint8_t>& buf() const { return buf_; }

 private:
  void need(size_t n) {
    if (pos_ + n > buf_.size())
      throw IoError("checkpoint truncated: " + path_);
  }
  std::vector<uint8_t> buf_;
  std::string path_;
  size_t pos_ = 0;
};

Reader open_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  size_t size = static_cast<size_t>(in.tellg());
  in.seekg(0);
  std::vector<uint8_t> buf(size);
  if (size && !in.read(reinterpret_cast<char*>(buf.data()), size))
    throw IoError("cannot read checkpoint: " + path);
  if (size < 13) throw IoError("checkpoint too small: " + path);
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw IoError("bad checkpoint magic in " + path);
  uint64_t stored = 0;
  for (int i = 0; i < 8; ++i)
    stored |= static_cast<uint64_t>(buf[size - 8 + i]) << (8 * i);
  if (fnv1a64(buf, size - 8) != stored)
    throw IoError("checkpoint checksum mismatch in " + path);
  Reader r(std::move(buf), path);
  r.u32();  // magic
  return r;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::vector<uint8_t> b;
  b.insert(b.end(), kMagic, kMagic + 4);
  b.push_back(kVersion);
  put_str(b, const_cast<Model&>(model).kind());
  put_str(b, model.descriptor());
  auto params = const_cast<Model&>(model).params();
  put_u32(b, static_cast<uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put_str(b, p->name);
    b.push_back(static_cast<uint8_t>(p->value.shape.size()));
    for (int d : p->value.shape) put_u32(b, static_cast<uint32_t>(d));
    for (int64_t i = 0; i < p->value.size(); ++i) put_f32(b, (*p->value.data)[i]);
  }
  put_u64(b, fnv1a64(b, b.size()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(reinterpret_cast<const char*>(b.data()), b.size());
  if (!out) throw IoError("write failed for checkpoint: " + path);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  Reader r = open_checkpoint(path);
  CheckpointInfo info;
  info.version = r.u8();
  if (info.version != kVersion)
    throw IoError("unsupported checkpoint version " +
                  std::to_string(info.version) + " in " + path);
  info.kind = r.str();
  info.descriptor = r.str();
  return info;
}

void load_checkpoint(Model& model, const std::string& path) {
  Reader r = open_checkpoint(path);
  uint8_t version = r.u8();
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) +
                  " in " + path);
  std::string kind = r.str();
  if (kind != model.kind())
    throw IoError("checkpoint kind '" + kind + "' cannot load into a '" +
                  model.kind() + "' model");
  std::string desc = r.str();
  if (desc != model.descriptor())
    throw IoError("architecture mismatch: checkpoint '" + desc +
                  "' vs model '" + model.descriptor() + "'");
  auto params = model.params();
  uint32_t count = r.u32();
  if (count != params.size())
    throw IoError("checkpoint parameter count mismatch in " + path);
  for (Parameter* p : params) {
    std::string name = r.str();
    if (name != p->name)
      throw IoError("checkpoint parameter order mismatch: expected '" +
                    p->name + "', found '" + name + "'");
    uint8_t ndim = r.u8();
    Shape shape(ndim);
    for (int i = 0; i < ndim; ++i) shape[i] = static_cast<int>(r.u32());
    if (shape != p->value.shape)
      throw IoError("shape mismatch for parameter '" + name + "'");
    for (int64_t i = 0; i < p->value.size(); ++i) (*p->value.data)[i] = r.f32();
  }
}

}  // namespace blockdrop
