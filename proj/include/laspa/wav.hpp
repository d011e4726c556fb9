#pragma once

// Minimal RIFF/WAVE reader and writer for mono PCM. Accepts 16-bit integer
// and 32-bit float sample formats; everything else is rejected with a
// diagnostic naming the offending field.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "laspa/features.hpp"

namespace laspa {

namespace detail {

inline std::uint32_t rd_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t rd_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] |
                                    (static_cast<std::uint16_t>(p[1]) << 8));
}

}  // namespace detail

inline Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_wav: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("read_wav: not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::uint32_t data_len = 0;

  std::size_t at = 12;
  while (at + 8 <= bytes.size()) {
    const char* cid = reinterpret_cast<const char*>(bytes.data() + at);
    const std::uint32_t len = detail::rd_u32(bytes.data() + at + 4);
    const unsigned char* body = bytes.data() + at + 8;
    if (at + 8 + len > bytes.size())
      throw std::runtime_error("read_wav: truncated chunk in " + path);
    if (std::memcmp(cid, "fmt ", 4) == 0) {
      if (len < 16) throw std::runtime_error("read_wav: short fmt chunk");
      format = detail::rd_u16(body);
      channels = detail::rd_u16(body + 2);
      rate = detail::rd_u32(body + 4);
      bits = detail::rd_u16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(cid, "data", 4) == 0) {
      data = body;
      data_len = len;
    }
    at += 8 + len + (len & 1);  // chunks are word-aligned
  }
  if (!have_fmt || data == nullptr)
    throw std::runtime_error("read_wav: missing fmt or data chunk in " + path);
  if (channels != 1)
    throw std::runtime_error("read_wav: expected mono, got " +
                             std::to_string(channels) + " channels");

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    const std::size_t n = data_len / 2;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto v = static_cast<std::int16_t>(detail::rd_u16(data + 2 * i));
      w.samples[i] = static_cast<float>(v) / 32768.0f;
    }
  } else if (format == 3 && bits == 32) {
    const std::size_t n = data_len / 4;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t u = detail::rd_u32(data + 4 * i);
      float v;
      std::memcpy(&v, &u, 4);
      w.samples[i] = v;
    }
  } else {
    throw std::runtime_error("read_wav: unsupported format (format=" +
                             std::to_string(format) + ", bits=" +
                             std::to_string(bits) + "); need PCM16 or float32");
  }
  return w;
}

// 32-bit float output; used by tests and the corpus tooling.
inline void write_wav(const std::string& path, const Waveform& wave) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_wav: cannot open " + path);
  auto put_u32 = [&f](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 4);
  };
  auto put_u16 = [&f](std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 2);
  };
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  f.write("RIFF", 4);
  put_u32(36 + 4 * n);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  put_u32(16);
  put_u16(3);  // IEEE float
  put_u16(1);  // mono
  put_u32(static_cast<std::uint32_t>(wave.sample_rate));
  put_u32(static_cast<std::uint32_t>(wave.sample_rate) * 4);
  put_u16(4);
  put_u16(32);
  f.write("data", 4);
  put_u32(4 * n);
  for (float s : wave.samples) {
    std::uint32_t u;
    std::memcpy(&u, &s, 4);
    put_u32(u);
  }
  if (!f) throw std::runtime_error("write_wav: short write to " + path);
}

}  // namespace laspa
