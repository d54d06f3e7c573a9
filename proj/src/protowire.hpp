#pragma once

// Minimal protobuf wire-format codec, enough for ONNX ModelProto.

#include <cstdint>
#include <string>
#include <string_view>

#include "onnxnet/error.hpp"

namespace onnxnet::wire {

enum class WireType : std::uint8_t { Varint = 0, Fixed64 = 1, LengthDelimited = 2, Fixed32 = 5 };

struct Field {
  std::uint32_t number = 0;
  WireType type = WireType::Varint;
  std::uint64_t varint = 0;  // also holds fixed32/fixed64 payloads
  std::string_view bytes;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  // Returns false at end of input; throws MalformedFile on truncation.
  bool next(Field& f) {
    if (pos_ >= data_.size()) return false;
    f.bytes = {};
    f.varint = 0;
    const std::uint64_t key = read_varint();
    f.number = static_cast<std::uint32_t>(key >> 3);
    if (f.number == 0) fail("field number 0");
    switch (key & 7) {
      case 0:
        f.type = WireType::Varint;
        f.varint = read_varint();
        break;
      case 1:
        f.type = WireType::Fixed64;
        f.varint = read_fixed(8);
        break;
      case 2: {
        f.type = WireType::LengthDelimited;
        const std::uint64_t len = read_varint();
        if (len > data_.size() - pos_) fail("length-delimited field overruns buffer");
        f.bytes = data_.substr(pos_, static_cast<std::size_t>(len));
        pos_ += static_cast<std::size_t>(len);
        break;
      }
      case 5:
        f.type = WireType::Fixed32;
        f.varint = read_fixed(4);
        break;
      default:
        fail("unsupported wire type " + std::to_string(key & 7));
    }
    return true;
  }

  bool at_end() const { return pos_ >= data_.size(); }

  std::uint64_t read_varint() {
    std::uint64_t result = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      if (pos_ >= data_.size()) fail("truncated varint");
      const auto byte = static_cast<std::uint8_t>(data_[pos_++]);
      result |= static_cast<std::uint64_t>(byte & 0x7f) << shift;
      if (!(byte & 0x80)) return result;
    }
    fail("varint longer than 10 bytes");
  }

 private:
  std::uint64_t read_fixed(int n) {
    if (data_.size() - pos_ < static_cast<std::size_t>(n)) fail("truncated fixed-width field");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  [[noreturn]] static void fail(const std::string& why) {
    throw Error(ErrorCode::MalformedFile, "protobuf decode error: " + why);
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

class Writer {
 public:
  void varint_field(std::uint32_t number, std::uint64_t v) {
    tag(number, WireType::Varint);
    varint(v);
  }
  void fixed32_field(std::uint32_t number, std::uint32_t v) {
    tag(number, WireType::Fixed32);
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void bytes_field(std::uint32_t number, std::string_view v) {
    tag(number, WireType::LengthDelimited);
    varint(v.size());
    out_.append(v);
  }
  void message_field(std::uint32_t number, const Writer& nested) { bytes_field(number, nested.out_); }

  const std::string& bytes() const { return out_; }
  std::string release() { return std::move(out_); }

 private:
  void tag(std::uint32_t number, WireType type) {
    varint((static_cast<std::uint64_t>(number) << 3) | static_cast<std::uint64_t>(type));
  }
  void varint(std::uint64_t v) {
    while (v >= 0x80) {
      out_.push_back(static_cast<char>((v & 0x7f) | 0x80));
      v >>= 7;
    }
    out_.push_back(static_cast<char>(v));
  }

  std::string out_;
};

}  // namespace onnxnet::wire
