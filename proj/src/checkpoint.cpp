#include "cxr/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace cxr {

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out += static_cast<char>(v & 0xFF);
  out += static_cast<char>((v >> 8) & 0xFF);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  bool at_end() const { return pos_ == bytes_.size(); }

  std::uint16_t u16(const std::string& record) {
    need(2, record);
    std::uint16_t v = static_cast<std::uint8_t>(bytes_[pos_]) | (static_cast<std::uint8_t>(bytes_[pos_ + 1]) << 8);
    pos_ += 2;
    return v;
  }

  std::uint32_t u32(const std::string& record) {
    need(4, record);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string take(std::size_t n, const std::string& record) {
    need(n, record);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const std::string& record) const {
    if (bytes_.size() - pos_ < n) throw FormatError(record, "truncated checkpoint");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const ParamRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return &p;
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out = "CXRC";
  put_u16(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.config.size()));
  out += ckpt.config;
  for (const auto& p : ckpt.params) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u32(out, static_cast<std::uint32_t>(p.shape.size()));
    for (auto d : p.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : p.values) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put_u32(out, bits);
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(4, "header") != "CXRC") throw FormatError("header", "bad magic (not a CXRC checkpoint)");
  const auto version = in.u16("header");
  if (version != kCheckpointVersion) {
    throw FormatError("header", "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config = in.take(in.u32("header"), "header");
  std::size_t index = 0;
  while (!in.at_end()) {
    const std::string placeholder = "#" + std::to_string(index);
    ParamRecord p;
    const auto name_len = in.u32(placeholder);
    if (name_len == 0 || name_len > 4096) throw FormatError(placeholder, "invalid name length");
    p.name = in.take(name_len, placeholder);
    const auto rank = in.u32(p.name);
    if (rank > 8) throw FormatError(p.name, "invalid rank " + std::to_string(rank));
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = in.u32(p.name);
      if (d == 0) throw FormatError(p.name, "zero dimension");
      p.shape.push_back(d);
      count *= d;
    }
    p.values.resize(count);
    for (auto& v : p.values) {
      const std::uint32_t bits = in.u32(p.name);
      std::memcpy(&v, &bits, sizeof v);
      if (!std::isfinite(v)) throw FormatError(p.name, "non-finite value");
    }
    if (ckpt.find(p.name)) throw FormatError(p.name, "duplicate parameter");
    ckpt.params.push_back(std::move(p));
    ++index;
  }
  return ckpt;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path, "write failed");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open checkpoint");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

template <typename T>
std::vector<ParamRecord> snapshot(const ParamList<T>& params) {
  std::vector<ParamRecord> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    ParamRecord r{p.name, p.tensor->shape(), {}};
    auto data = p.tensor->data();
    r.values.assign(data.begin(), data.end());
    out.push_back(std::move(r));
  }
  return out;
}

template <typename T>
std::size_t load_params(const Checkpoint& ckpt, const ParamList<T>& params, const std::string& prefix) {
  std::size_t loaded = 0;
  for (const auto& p : params) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    const ParamRecord* r = ckpt.find(p.name);
    if (!r) throw FormatError(p.name, "parameter missing from checkpoint");
    if (r->shape != p.tensor->shape()) {
      throw FormatError(p.name, "shape " + to_string(r->shape) + " does not match model " + to_string(p.tensor->shape()));
    }
    auto dst = p.tensor->mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(r->values[i]);
    ++loaded;
  }
  return loaded;
}

template std::vector<ParamRecord> snapshot(const ParamList<float>&);
template std::vector<ParamRecord> snapshot(const ParamList<double>&);
template std::size_t load_params(const Checkpoint&, const ParamList<float>&, const std::string&);
template std::size_t load_params(const Checkpoint&, const ParamList<double>&, const std::string&);

}  // namespace cxr
