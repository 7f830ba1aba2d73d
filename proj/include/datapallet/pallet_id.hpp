// Copyright (c) 2026 The datapallet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

#include "datapallet/errors.hpp"
#include "datapallet/sha256.hpp"

namespace datapallet {

// Content address of a sealed pallet image: the SHA-256 of the image bytes
// with the header id field zeroed, rendered as 64 lowercase hex characters.
// Equal ids imply byte-identical images.
class PalletId {
public:
  PalletId() = default;

  static PalletId from_hex(std::string_view hex) {
    if (hex.size() != 64)
      throw ValidationError("pallet id must be exactly 64 hex characters, got " +
                            std::to_string(hex.size()));
    for (char c : hex) {
      bool ok = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
      if (!ok)
        throw ValidationError(
            "pallet id must be lowercase hexadecimal: bad character '" +
            std::string(1, c) + "'");
    }
    PalletId id;
    id.hex_.assign(hex);
    return id;
  }

  static PalletId from_digest(const Digest& d) {
    PalletId id;
    id.hex_ = to_hex(d);
    return id;
  }

  static bool looks_like_id(std::string_view s) {
    if (s.size() != 64) return false;
    for (char c : s)
      if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
    return true;
  }

  const std::string& hex() const { return hex_; }
  bool empty() const { return hex_.empty(); }

  // Leading hex characters, used for graph labels and object fan-out dirs.
  std::string prefix(size_t n) const { return hex_.substr(0, n); }

  Digest digest() const {
    Digest d{};
    for (size_t i = 0; i < d.size(); ++i) {
      auto nib = [](char c) -> uint8_t {
        return c <= '9' ? static_cast<uint8_t>(c - '0')
                        : static_cast<uint8_t>(c - 'a' + 10);
      };
      d[i] = static_cast<uint8_t>(nib(hex_[2 * i]) << 4 | nib(hex_[2 * i + 1]));
    }
    return d;
  }

  friend bool operator==(const PalletId&, const PalletId&) = default;
  friend std::strong_ordering operator<=>(const PalletId& a, const PalletId& b) {
    return a.hex_ <=> b.hex_;
  }

private:
  std::string hex_;
};

}  // namespace datapallet
