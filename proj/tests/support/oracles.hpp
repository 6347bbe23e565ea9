// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

// Test-side oracles, deliberately independent of the simulator's crypto
// paths: a from-scratch SHA-256 (FIPS 180-4), an HMAC built on it, the OTP
// truncation, and the world-vs-PAS access table written out longhand.

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "sbsim/types.hpp"

namespace oracle {

using Digest = std::array<uint8_t, 32>;

inline Digest sha256(std::span<const uint8_t> msg) {
  static constexpr uint32_t k[64] = {
      0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
      0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
      0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
      0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
      0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
      0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
      0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
      0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
      0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
      0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
      0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};
  uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                   0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};

  std::vector<uint8_t> data(msg.begin(), msg.end());
  uint64_t bitlen = static_cast<uint64_t>(data.size()) * 8;
  data.push_back(0x80);
  while (data.size() % 64 != 56) data.push_back(0);
  for (int i = 7; i >= 0; i--)
    data.push_back(static_cast<uint8_t>(bitlen >> (8 * i)));

  auto rotr = [](uint32_t x, int n) { return (x >> n) | (x << (32 - n)); };
  for (size_t off = 0; off < data.size(); off += 64) {
    uint32_t w[64];
    for (int i = 0; i < 16; i++)
      w[i] = (static_cast<uint32_t>(data[off + 4 * i]) << 24) |
             (static_cast<uint32_t>(data[off + 4 * i + 1]) << 16) |
             (static_cast<uint32_t>(data[off + 4 * i + 2]) << 8) |
             static_cast<uint32_t>(data[off + 4 * i + 3]);
    for (int i = 16; i < 64; i++) {
      uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    uint32_t a = h[0], b = h[1], c = h[2], d = h[3];
    uint32_t e = h[4], f = h[5], g = h[6], hh = h[7];
    for (int i = 0; i < 64; i++) {
      uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      uint32_t ch = (e & f) ^ (~e & g);
      uint32_t t1 = hh + s1 + ch + k[i] + w[i];
      uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      uint32_t t2 = s0 + maj;
      hh = g;
      g = f;
      f = e;
      e = d + t1;
      d = c;
      c = b;
      b = a;
      a = t1 + t2;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
    h[5] += f;
    h[6] += g;
    h[7] += hh;
  }
  Digest out{};
  for (int i = 0; i < 8; i++) {
    out[4 * i] = static_cast<uint8_t>(h[i] >> 24);
    out[4 * i + 1] = static_cast<uint8_t>(h[i] >> 16);
    out[4 * i + 2] = static_cast<uint8_t>(h[i] >> 8);
    out[4 * i + 3] = static_cast<uint8_t>(h[i]);
  }
  return out;
}

inline Digest hmac_sha256(std::span<const uint8_t> key,
                          std::span<const uint8_t> msg) {
  std::array<uint8_t, 64> k{};
  if (key.size() > 64) {
    Digest kd = sha256(key);
    std::memcpy(k.data(), kd.data(), kd.size());
  } else {
    std::memcpy(k.data(), key.data(), key.size());
  }
  std::vector<uint8_t> inner(64 + msg.size());
  for (size_t i = 0; i < 64; i++) inner[i] = k[i] ^ 0x36;
  std::memcpy(inner.data() + 64, msg.data(), msg.size());
  Digest ih = sha256(inner);
  std::vector<uint8_t> outer(96);
  for (size_t i = 0; i < 64; i++) outer[i] = k[i] ^ 0x5c;
  std::memcpy(outer.data() + 64, ih.data(), 32);
  return sha256(outer);
}

/// Independent recomputation of the service's one-time password.
inline uint32_t hotp(std::span<const uint8_t> secret, uint64_t counter) {
  std::array<uint8_t, 8> msg{};
  for (int i = 0; i < 8; i++)
    msg[i] = static_cast<uint8_t>(counter >> (8 * (7 - i)));
  Digest mac = hmac_sha256(secret, msg);
  size_t off = mac[31] & 0x0f;
  uint32_t bin = (static_cast<uint32_t>(mac[off] & 0x7f) << 24) |
                 (static_cast<uint32_t>(mac[off + 1]) << 16) |
                 (static_cast<uint32_t>(mac[off + 2]) << 8) |
                 static_cast<uint32_t>(mac[off + 3]);
  return bin % 1000000;
}

/// The world-vs-PAS decision table, spelled out case by case rather than
/// derived, as a second route to the same matrix.
inline bool access_allowed(sbsim::World w, sbsim::Pas p) {
  using sbsim::Pas;
  using sbsim::World;
  switch (w) {
    case World::Root:
      return true;  // root bypasses the protection check entirely
    case World::Normal:
      switch (p) {
        case Pas::Normal: return true;
        case Pas::AllAccessible: return true;
        case Pas::Root: return false;
        case Pas::Realm: return false;
        case Pas::Secure: return false;
        case Pas::NotAccessible: return false;
      }
      return false;
    case World::Realm:
      switch (p) {
        case Pas::Realm: return true;
        case Pas::AllAccessible: return true;
        case Pas::Root: return false;
        case Pas::Normal: return false;
        case Pas::Secure: return false;
        case Pas::NotAccessible: return false;
      }
      return false;
    case World::Secure:
      switch (p) {
        case Pas::Secure: return true;
        case Pas::AllAccessible: return true;
        case Pas::Root: return false;
        case Pas::Normal: return false;
        case Pas::Realm: return false;
        case Pas::NotAccessible: return false;
      }
      return false;
  }
  return false;
}

/// Fold a measurement log the straightforward way: digest each entry from
/// its raw fields, then chain.
inline Digest fold_measurement(
    const std::vector<std::tuple<std::string, uint64_t, Digest>>& entries) {
  Digest value{};
  for (const auto& [kind, ipa, digest] : entries) {
    std::vector<uint8_t> buf;
    buf.insert(buf.end(), kind.begin(), kind.end());
    for (int i = 0; i < 8; i++)
      buf.push_back(static_cast<uint8_t>(ipa >> (8 * i)));
    buf.insert(buf.end(), digest.begin(), digest.end());
    Digest entry = sha256(buf);
    std::vector<uint8_t> chain;
    chain.insert(chain.end(), value.begin(), value.end());
    chain.insert(chain.end(), entry.begin(), entry.end());
    value = sha256(chain);
  }
  return value;
}

}  // namespace oracle
