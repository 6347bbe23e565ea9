// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include <openssl/evp.h>

#include "sbsim/hash.hpp"

namespace sbsim {

// Sealed blob layout: nonce(12) || ciphertext || tag(16).
inline constexpr size_t kAeadNonceLen = 12;
inline constexpr size_t kAeadTagLen = 16;

inline std::vector<uint8_t> aead_seal(const Digest256& key, uint64_t nonce_ctr,
                                      std::span<const uint8_t> plaintext) {
  std::array<uint8_t, kAeadNonceLen> nonce{};
  std::memcpy(nonce.data(), &nonce_ctr, sizeof(nonce_ctr));
  std::vector<uint8_t> out(kAeadNonceLen + plaintext.size() + kAeadTagLen);
  std::memcpy(out.data(), nonce.data(), kAeadNonceLen);

  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  EVP_EncryptInit_ex(ctx, EVP_aes_256_gcm(), nullptr, key.data(), nonce.data());
  int len = 0;
  if (!plaintext.empty())
    EVP_EncryptUpdate(ctx, out.data() + kAeadNonceLen, &len, plaintext.data(),
                      static_cast<int>(plaintext.size()));
  int fin = 0;
  EVP_EncryptFinal_ex(ctx, out.data() + kAeadNonceLen + len, &fin);
  EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_GET_TAG, kAeadTagLen,
                      out.data() + kAeadNonceLen + plaintext.size());
  EVP_CIPHER_CTX_free(ctx);
  return out;
}

inline bool aead_open(const Digest256& key, std::span<const uint8_t> blob,
                      std::vector<uint8_t>& plaintext_out) {
  if (blob.size() < kAeadNonceLen + kAeadTagLen) return false;
  size_t ct_len = blob.size() - kAeadNonceLen - kAeadTagLen;
  plaintext_out.assign(ct_len, 0);

  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  EVP_DecryptInit_ex(ctx, EVP_aes_256_gcm(), nullptr, key.data(), blob.data());
  int len = 0;
  if (ct_len > 0)
    EVP_DecryptUpdate(ctx, plaintext_out.data(), &len,
                      blob.data() + kAeadNonceLen, static_cast<int>(ct_len));
  std::array<uint8_t, kAeadTagLen> tag{};
  std::memcpy(tag.data(), blob.data() + kAeadNonceLen + ct_len, kAeadTagLen);
  EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_SET_TAG, kAeadTagLen, tag.data());
  int fin = 0;
  bool ok = EVP_DecryptFinal_ex(ctx, plaintext_out.data() + len, &fin) == 1;
  EVP_CIPHER_CTX_free(ctx);
  if (!ok) plaintext_out.clear();
  return ok;
}

/// HMAC-based one-time password: 31-bit dynamic truncation of
/// HMAC-SHA256(secret, counter_be), reduced to 6 decimal digits.
inline uint32_t hotp_sha256(std::span<const uint8_t> secret, uint64_t counter) {
  std::array<uint8_t, 8> msg{};
  for (int i = 0; i < 8; i++)
    msg[i] = static_cast<uint8_t>(counter >> (8 * (7 - i)));
  Digest256 mac = hmac_sha256(secret, std::span<const uint8_t>(msg.data(), 8));
  size_t off = mac[31] & 0x0f;
  uint32_t bin = (static_cast<uint32_t>(mac[off] & 0x7f) << 24) |
                 (static_cast<uint32_t>(mac[off + 1]) << 16) |
                 (static_cast<uint32_t>(mac[off + 2]) << 8) |
                 static_cast<uint32_t>(mac[off + 3]);
  return bin % 1000000;
}

}  // namespace sbsim
