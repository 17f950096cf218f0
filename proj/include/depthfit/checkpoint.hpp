#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "depthfit/tensor.hpp"

namespace depthfit {

// Versioned binary container for named tensors:
//   magic "DFCK" | u32 version | per entry:
//     u32 name length | name bytes | u8 dtype (0 = f64, 1 = u8)
//     | u32 rank | u32 dims... | raw little-endian payload
//   | trailing CRC32 (IEEE) over everything before it.

inline std::uint32_t crc32_ieee(const unsigned char* data, size_t len, std::uint32_t seed = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320U ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = ~seed;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffU] ^ (crc >> 8);
  return ~crc;
}

enum class EntryType : std::uint8_t { f64 = 0, u8 = 1 };

struct CheckpointEntry {
  std::string name;
  EntryType dtype = EntryType::f64;
  Shape dims;
  std::vector<double> f64;        // valid when dtype == f64
  std::vector<unsigned char> u8;  // valid when dtype == u8

  static CheckpointEntry tensor(std::string name, Shape dims, std::vector<double> data) {
    CheckpointEntry e;
    e.name = std::move(name);
    e.dtype = EntryType::f64;
    e.dims = std::move(dims);
    e.f64 = std::move(data);
    return e;
  }
  static CheckpointEntry bytes(std::string name, std::vector<unsigned char> data) {
    CheckpointEntry e;
    e.name = std::move(name);
    e.dtype = EntryType::u8;
    e.dims = {static_cast<int>(data.size())};
    e.u8 = std::move(data);
    return e;
  }
  static CheckpointEntry scalar(std::string name, double v) { return tensor(std::move(name), {1}, {v}); }
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

inline void put_f64(std::vector<unsigned char>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
  const unsigned char* p;
  const unsigned char* end;
  void need(size_t n) const {
    if (static_cast<size_t>(end - p) < n) throw std::runtime_error("checkpoint: truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    p += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return *p++;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

}  // namespace detail

inline void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), {'D', 'F', 'C', 'K'});
  detail::put_u32(buf, 1u);  // format version
  for (const CheckpointEntry& e : entries) {
    detail::put_u32(buf, static_cast<std::uint32_t>(e.name.size()));
    buf.insert(buf.end(), e.name.begin(), e.name.end());
    buf.push_back(static_cast<unsigned char>(e.dtype));
    detail::put_u32(buf, static_cast<std::uint32_t>(e.dims.size()));
    long long n = 1;
    for (int d : e.dims) {
      detail::put_u32(buf, static_cast<std::uint32_t>(d));
      n *= d;
    }
    if (e.dtype == EntryType::f64) {
      if (static_cast<long long>(e.f64.size()) != n) throw std::invalid_argument("checkpoint: payload/dims mismatch");
      for (double v : e.f64) detail::put_f64(buf, v);
    } else {
      if (static_cast<long long>(e.u8.size()) != n) throw std::invalid_argument("checkpoint: payload/dims mismatch");
      buf.insert(buf.end(), e.u8.begin(), e.u8.end());
    }
  }
  detail::put_u32(buf, crc32_ieee(buf.data(), buf.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 12) throw std::runtime_error("checkpoint: truncated");
  if (std::memcmp(buf.data(), "DFCK", 4) != 0) throw std::runtime_error("checkpoint: bad magic");

  std::uint32_t stored_crc = static_cast<std::uint32_t>(buf[buf.size() - 4]) |
                             (static_cast<std::uint32_t>(buf[buf.size() - 3]) << 8) |
                             (static_cast<std::uint32_t>(buf[buf.size() - 2]) << 16) |
                             (static_cast<std::uint32_t>(buf[buf.size() - 1]) << 24);
  if (crc32_ieee(buf.data(), buf.size() - 4) != stored_crc) throw std::runtime_error("checkpoint: CRC mismatch");

  detail::Reader r{buf.data() + 4, buf.data() + buf.size() - 4};
  std::uint32_t version = r.u32();
  if (version != 1u) throw std::runtime_error("checkpoint: unsupported format version");

  std::vector<CheckpointEntry> entries;
  while (r.p < r.end) {
    CheckpointEntry e;
    std::uint32_t name_len = r.u32();
    r.need(name_len);
    e.name.assign(reinterpret_cast<const char*>(r.p), name_len);
    r.p += name_len;
    std::uint8_t dt = r.u8();
    if (dt > 1) throw std::runtime_error("checkpoint: unknown dtype tag");
    e.dtype = static_cast<EntryType>(dt);
    std::uint32_t rank = r.u32();
    long long n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      std::uint32_t d = r.u32();
      e.dims.push_back(static_cast<int>(d));
      n *= d;
    }
    if (e.dtype == EntryType::f64) {
      e.f64.reserve(static_cast<size_t>(n));
      for (long long i = 0; i < n; ++i) e.f64.push_back(r.f64());
    } else {
      r.need(static_cast<size_t>(n));
      e.u8.assign(r.p, r.p + n);
      r.p += n;
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace depthfit
