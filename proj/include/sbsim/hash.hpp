// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include <openssl/evp.h>

namespace sbsim {

/// 256-bit digest used for measurements, payload pinning, and channel keys.
using Digest256 = std::array<uint8_t, 32>;

inline Digest256 sha256(std::span<const uint8_t> data) {
  Digest256 out{};
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr);
  return out;
}

inline Digest256 sha256(const std::vector<uint8_t>& data) {
  return sha256(std::span<const uint8_t>(data.data(), data.size()));
}

inline Digest256 sha256_str(std::string_view s) {
  return sha256(std::span<const uint8_t>(
      reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

/// Hash-chain step: new value = H(old || entry).
inline Digest256 extend_digest(const Digest256& old_value, const Digest256& entry) {
  std::array<uint8_t, 64> buf{};
  std::memcpy(buf.data(), old_value.data(), 32);
  std::memcpy(buf.data() + 32, entry.data(), 32);
  return sha256(std::span<const uint8_t>(buf.data(), buf.size()));
}

inline Digest256 hmac_sha256(std::span<const uint8_t> key,
                             std::span<const uint8_t> msg) {
  // RFC 2104 construction over SHA-256 (block size 64).
  std::array<uint8_t, 64> k{};
  if (key.size() > 64) {
    Digest256 kd = sha256(key);
    std::memcpy(k.data(), kd.data(), kd.size());
  } else {
    std::memcpy(k.data(), key.data(), key.size());
  }
  std::vector<uint8_t> inner(64 + msg.size());
  for (size_t i = 0; i < 64; i++) inner[i] = k[i] ^ 0x36;
  std::memcpy(inner.data() + 64, msg.data(), msg.size());
  Digest256 ih = sha256(inner);

  std::array<uint8_t, 96> outer{};
  for (size_t i = 0; i < 64; i++) outer[i] = k[i] ^ 0x5c;
  std::memcpy(outer.data() + 64, ih.data(), 32);
  return sha256(std::span<const uint8_t>(outer.data(), outer.size()));
}

inline std::string to_hex(std::span<const uint8_t> data) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(data.size() * 2);
  for (uint8_t b : data) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xf]);
  }
  return s;
}

inline std::string to_hex(const Digest256& d) {
  return to_hex(std::span<const uint8_t>(d.data(), d.size()));
}

inline bool from_hex(std::string_view s, Digest256& out) {
  if (s.size() != 64) return false;
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  for (size_t i = 0; i < 32; i++) {
    int hi = nib(s[2 * i]), lo = nib(s[2 * i + 1]);
    if (hi < 0 || lo < 0) return false;
    out[i] = static_cast<uint8_t>((hi << 4) | lo);
  }
  return true;
}

}  // namespace sbsim
