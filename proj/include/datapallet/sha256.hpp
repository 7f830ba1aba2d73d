// Copyright (c) 2026 The datapallet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "datapallet/errors.hpp"

namespace datapallet {

using Digest = std::array<uint8_t, 32>;

// Streaming SHA-256 over libcrypto's EVP interface.
class Sha256 {
public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      throw IoError("sha256: failed to initialize digest context");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1)
      throw IoError("sha256: digest update failed");
  }
  void update(std::string_view bytes) { update(bytes.data(), bytes.size()); }

  Digest finish() {
    Digest out{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, out.data(), &len) != 1 || len != out.size())
      throw IoError("sha256: digest finalization failed");
    return out;
  }

  static Digest of(std::string_view bytes) {
    Sha256 h;
    h.update(bytes);
    return h.finish();
  }

private:
  EVP_MD_CTX* ctx_;
};

inline std::string to_hex(const Digest& d) {
  static constexpr char kHexDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(d.size() * 2);
  for (uint8_t b : d) {
    out.push_back(kHexDigits[b >> 4]);
    out.push_back(kHexDigits[b & 0x0f]);
  }
  return out;
}

}  // namespace datapallet
