// Copyright (c) 2026 The datapallet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "datapallet/errors.hpp"
#include "datapallet/fsutil.hpp"

namespace datapallet {

// One file inside a pallet's data partition. No timestamps, no ownership:
// only what is needed to reproduce the file byte-for-byte, so identical
// content always encodes to identical bytes.
struct ArchiveEntry {
  std::string path;  // relative, '/'-separated, normalized
  uint32_t mode = 0644;
  std::string content;

  friend bool operator==(const ArchiveEntry&, const ArchiveEntry&) = default;
};

// Per-entry framing: u32 LE path length, path bytes, u32 LE mode,
// u64 LE content size, content bytes.
constexpr size_t kArchiveEntryFraming = 4 + 4 + 8;

// Entries must already be strictly sorted by path bytes; duplicates and
// unsafe paths are rejected rather than silently reordered, so the encoded
// bytes are a pure function of the entry list.
inline std::string encode_archive(const std::vector<ArchiveEntry>& entries) {
  std::string out;
  const std::string* prev = nullptr;
  for (const ArchiveEntry& e : entries) {
    require_safe_rel_path(e.path);
    if (prev != nullptr && !(*prev < e.path))
      throw ValidationError("archive entries not strictly sorted by path: \"" +
                            *prev + "\" then \"" + e.path + "\"");
    prev = &e.path;
    put_u32le(out, static_cast<uint32_t>(e.path.size()));
    out.append(e.path);
    put_u32le(out, e.mode);
    put_u64le(out, static_cast<uint64_t>(e.content.size()));
    out.append(e.content);
  }
  return out;
}

inline std::vector<ArchiveEntry> decode_archive(std::string_view bytes) {
  std::vector<ArchiveEntry> entries;
  size_t off = 0;
  while (off < bytes.size()) {
    if (bytes.size() - off < 4)
      throw FormatError("archive truncated in path-length field");
    uint32_t path_len = get_u32le(bytes, off);
    off += 4;
    if (path_len == 0 || path_len > 4096)
      throw FormatError("archive entry has implausible path length " +
                        std::to_string(path_len));
    if (bytes.size() - off < path_len)
      throw FormatError("archive truncated in path bytes");
    std::string path(bytes.substr(off, path_len));
    off += path_len;
    if (!is_safe_rel_path(path))
      throw FormatError("archive entry has unsafe path: \"" + path + "\"");
    if (bytes.size() - off < 4 + 8)
      throw FormatError("archive truncated in mode/size fields");
    uint32_t mode = get_u32le(bytes, off);
    off += 4;
    uint64_t size = get_u64le(bytes, off);
    off += 8;
    if (bytes.size() - off < size)
      throw FormatError("archive truncated in content of \"" + path + "\"");
    ArchiveEntry e;
    e.path = std::move(path);
    e.mode = mode;
    e.content.assign(bytes.substr(off, size));
    off += size;
    if (!entries.empty() && !(entries.back().path < e.path))
      throw FormatError("archive entries not strictly sorted by path: \"" +
                        entries.back().path + "\" then \"" + e.path + "\"");
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace datapallet
