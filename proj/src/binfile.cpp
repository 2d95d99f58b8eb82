#include "gic/binfile.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace gic {

namespace {
constexpr char kMagic[] = "GICBIN01";
constexpr size_t kMagicLen = 8;

void need(const std::vector<uint8_t>& in, size_t pos, size_t n) {
  if (pos + n > in.size()) throw DataError("binfile: truncated input");
}
}  // namespace

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_i64(std::vector<uint8_t>& out, int64_t v) { put_u64(out, static_cast<uint64_t>(v)); }

void put_f64(std::vector<uint8_t>& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

void put_string(std::vector<uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

uint32_t get_u32(const std::vector<uint8_t>& in, size_t& pos) {
  need(in, pos, 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

uint64_t get_u64(const std::vector<uint8_t>& in, size_t& pos) {
  need(in, pos, 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(in[pos + i]) << (8 * i);
  pos += 8;
  return v;
}

int64_t get_i64(const std::vector<uint8_t>& in, size_t& pos) {
  return static_cast<int64_t>(get_u64(in, pos));
}

double get_f64(const std::vector<uint8_t>& in, size_t& pos) {
  return std::bit_cast<double>(get_u64(in, pos));
}

std::string get_string(const std::vector<uint8_t>& in, size_t& pos) {
  const uint32_t n = get_u32(in, pos);
  need(in, pos, n);
  std::string s(in.begin() + pos, in.begin() + pos + n);
  pos += n;
  return s;
}

void BinWriter::add(const std::string& name, std::vector<uint8_t> payload) {
  sections_.emplace_back(name, std::move(payload));
}

void BinWriter::add_text(const std::string& name, const std::string& text) {
  add(name, std::vector<uint8_t>(text.begin(), text.end()));
}

std::vector<uint8_t> BinWriter::bytes() const {
  std::vector<uint8_t> out(kMagic, kMagic + kMagicLen);
  put_string(out, type_);
  put_u32(out, static_cast<uint32_t>(sections_.size()));
  for (const auto& [name, payload] : sections_) {
    put_string(out, name);
    put_u64(out, payload.size());
    out.insert(out.end(), payload.begin(), payload.end());
  }
  return out;
}

void BinWriter::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("binfile: cannot open for writing: " + path);
  const auto b = bytes();
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!f) throw DataError("binfile: write failed: " + path);
}

BinReader BinReader::parse(const std::vector<uint8_t>& bytes, const std::string& expect_type) {
  if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw DataError("binfile: bad magic");
  }
  size_t pos = kMagicLen;
  BinReader r;
  r.type_ = get_string(bytes, pos);
  if (!expect_type.empty() && r.type_ != expect_type) {
    throw DataError("binfile: expected type '" + expect_type + "', found '" + r.type_ + "'");
  }
  const uint32_t count = get_u32(bytes, pos);
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(bytes, pos);
    const uint64_t size = get_u64(bytes, pos);
    need(bytes, pos, size);
    r.sections_[name] = std::vector<uint8_t>(bytes.begin() + pos, bytes.begin() + pos + size);
    pos += size;
  }
  return r;
}

BinReader BinReader::load(const std::string& path, const std::string& expect_type) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("binfile: cannot open: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse(bytes, expect_type);
}

const std::vector<uint8_t>& BinReader::section(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end()) throw DataError("binfile: missing section '" + name + "'");
  return it->second;
}

std::string BinReader::text(const std::string& name) const {
  const auto& s = section(name);
  return std::string(s.begin(), s.end());
}

}  // namespace gic
