#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gic/common.hpp"

namespace gic {

// Little-endian primitive serialization helpers.
void put_u32(std::vector<uint8_t>& out, uint32_t v);
void put_u64(std::vector<uint8_t>& out, uint64_t v);
void put_i64(std::vector<uint8_t>& out, int64_t v);
void put_f64(std::vector<uint8_t>& out, double v);
void put_string(std::vector<uint8_t>& out, const std::string& s);  // u32 length + bytes
uint32_t get_u32(const std::vector<uint8_t>& in, size_t& pos);
uint64_t get_u64(const std::vector<uint8_t>& in, size_t& pos);
int64_t get_i64(const std::vector<uint8_t>& in, size_t& pos);
double get_f64(const std::vector<uint8_t>& in, size_t& pos);
std::string get_string(const std::vector<uint8_t>& in, size_t& pos);

// Chunked binary container used for checkpoints and LM files: a magic tag,
// a type string, and named sections written in insertion order.
class BinWriter {
 public:
  explicit BinWriter(std::string type) : type_(std::move(type)) {}
  void add(const std::string& name, std::vector<uint8_t> payload);
  void add_text(const std::string& name, const std::string& text);
  std::vector<uint8_t> bytes() const;
  void save(const std::string& path) const;

 private:
  std::string type_;
  std::vector<std::pair<std::string, std::vector<uint8_t>>> sections_;
};

class BinReader {
 public:
  static BinReader parse(const std::vector<uint8_t>& bytes, const std::string& expect_type = "");
  static BinReader load(const std::string& path, const std::string& expect_type = "");

  const std::string& type() const { return type_; }
  bool has(const std::string& name) const { return sections_.count(name) > 0; }
  const std::vector<uint8_t>& section(const std::string& name) const;
  std::string text(const std::string& name) const;

 private:
  std::string type_;
  std::map<std::string, std::vector<uint8_t>> sections_;
};

}  // namespace gic
