// Copyright (c) 2026 The datapallet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "datapallet/errors.hpp"

namespace datapallet {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Byte-order helpers. The image format is little-endian on disk.
// ---------------------------------------------------------------------------

inline void put_u32le(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u64le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline uint32_t get_u32le(std::string_view in, size_t off) {
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i)
    v = (v << 8) | static_cast<uint8_t>(in[off + static_cast<size_t>(i)]);
  return v;
}

inline uint64_t get_u64le(std::string_view in, size_t off) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i)
    v = (v << 8) | static_cast<uint8_t>(in[off + static_cast<size_t>(i)]);
  return v;
}

// ---------------------------------------------------------------------------
// Relative-path hygiene. Every path stored in an archive or staged into a
// pallet must be relative, normalized, and free of traversal components.
// ---------------------------------------------------------------------------

inline bool is_safe_rel_path(std::string_view path) {
  if (path.empty() || path.size() > 4096) return false;
  if (path.front() == '/' || path.back() == '/') return false;
  if (path.find('\0') != std::string_view::npos) return false;
  size_t start = 0;
  while (start <= path.size()) {
    size_t end = path.find('/', start);
    if (end == std::string_view::npos) end = path.size();
    std::string_view comp = path.substr(start, end - start);
    if (comp.empty() || comp == "." || comp == "..") return false;
    start = end + 1;
    if (end == path.size()) break;
  }
  return true;
}

inline void require_safe_rel_path(std::string_view path) {
  if (!is_safe_rel_path(path))
    throw ValidationError("unsafe relative path: \"" + std::string(path) +
                          "\" (must be normalized, no traversal components)");
}

// ---------------------------------------------------------------------------
// File IO
// ---------------------------------------------------------------------------

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open file for reading: " + p.string());
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + p.string());
  return data;
}

inline std::string read_file_range(const fs::path& p, uint64_t offset,
                                   uint64_t length) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open file for reading: " + p.string());
  in.seekg(static_cast<std::streamoff>(offset));
  std::string data(length, '\0');
  in.read(data.data(), static_cast<std::streamsize>(length));
  if (static_cast<uint64_t>(in.gcount()) != length)
    throw IoError("short read at offset " + std::to_string(offset) + " in " +
                  p.string());
  return data;
}

inline void write_file(const fs::path& p, std::string_view data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + p.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed: " + p.string());
}

inline std::string unique_suffix() {
  static thread_local std::mt19937_64 rng(
      std::random_device{}() ^
      (static_cast<uint64_t>(::getpid()) << 32));
  return std::to_string(rng());
}

// Write to a temp file in the target's directory, fsync, then rename.
// A crash mid-write leaves only a temp file, never a half-formed target.
inline void atomic_write_file(const fs::path& target, std::string_view data) {
  fs::path tmp = target.parent_path() /
                 (".tmp-" + target.filename().string() + "-" + unique_suffix());
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw IoError("cannot create temp file: " + tmp.string());
  size_t written = 0;
  while (written < data.size()) {
    ssize_t n = ::write(fd, data.data() + written, data.size() - written);
    if (n < 0) {
      ::close(fd);
      ::unlink(tmp.c_str());
      throw IoError("write failed: " + tmp.string());
    }
    written += static_cast<size_t>(n);
  }
  if (::fsync(fd) != 0 || ::close(fd) != 0) {
    ::unlink(tmp.c_str());
    throw IoError("fsync/close failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    ::unlink(tmp.c_str());
    throw IoError("rename to " + target.string() + " failed: " + ec.message());
  }
}

// Fresh uniquely named directory under parent.
inline fs::path make_unique_dir(const fs::path& parent,
                                const std::string& prefix) {
  std::error_code ec;
  if (!fs::exists(parent))
    throw IoError("parent directory does not exist: " + parent.string());
  std::string templ = (parent / (prefix + "XXXXXX")).string();
  std::vector<char> buf(templ.begin(), templ.end());
  buf.push_back('\0');
  if (::mkdtemp(buf.data()) == nullptr)
    throw IoError("mkdtemp failed under " + parent.string() + ": " +
                  std::strerror(errno));
  fs::path dir(buf.data());
  // mkdtemp yields 0700; open it up so unprivileged node processes can
  // traverse workspaces created here.
  fs::permissions(dir, fs::perms::owner_all | fs::perms::group_read |
                           fs::perms::group_exec | fs::perms::others_read |
                           fs::perms::others_exec,
                  ec);
  return dir;
}

inline uint32_t file_mode_bits(const fs::path& p) {
  struct stat st{};
  if (::lstat(p.c_str(), &st) != 0)
    throw IoError("lstat failed: " + p.string());
  return static_cast<uint32_t>(st.st_mode & 07777);
}

inline void set_file_mode(const fs::path& p, uint32_t mode) {
  if (::chmod(p.c_str(), mode) != 0)
    throw IoError("chmod failed: " + p.string());
}

// Sorted relative paths of all regular files under root. Throws on symlinks
// or other non-regular entries when strict is set.
inline std::vector<std::string> list_tree(const fs::path& root,
                                          bool strict = false) {
  std::vector<std::string> out;
  if (!fs::exists(root)) return out;
  for (auto it = fs::recursive_directory_iterator(root);
       it != fs::recursive_directory_iterator(); ++it) {
    const fs::path& p = it->path();
    std::string rel = fs::relative(p, root).generic_string();
    if (it->is_symlink()) {
      if (strict)
        throw ValidationError("symlink not allowed in output tree: " + rel);
      continue;
    }
    if (it->is_directory()) continue;
    if (!it->is_regular_file()) {
      if (strict)
        throw ValidationError("non-regular file not allowed in output tree: " +
                              rel);
      continue;
    }
    out.push_back(std::move(rel));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Strip write bits below root (dirs keep traverse bits, files keep read and
// exec bits). Used to lock upstream extracts before a node runs.
inline void make_tree_read_only(const fs::path& root) {
  std::vector<fs::path> dirs;
  for (auto it = fs::recursive_directory_iterator(root);
       it != fs::recursive_directory_iterator(); ++it) {
    if (it->is_directory()) {
      dirs.push_back(it->path());
    } else {
      uint32_t mode = file_mode_bits(it->path());
      uint32_t ro = (mode & ~0222u) | 0444u;
      set_file_mode(it->path(), ro);
    }
  }
  for (const auto& d : dirs) set_file_mode(d, 0555);
  set_file_mode(root, 0555);
}

inline void make_tree_writable(const fs::path& root) {
  if (!fs::exists(root)) return;
  set_file_mode(root, 0755);
  for (auto it = fs::recursive_directory_iterator(root);
       it != fs::recursive_directory_iterator(); ++it) {
    if (it->is_symlink()) continue;
    if (it->is_directory())
      set_file_mode(it->path(), 0755);
    else
      set_file_mode(it->path(), file_mode_bits(it->path()) | 0600);
  }
}

inline void remove_tree(const fs::path& root) {
  if (!fs::exists(root)) return;
  std::error_code ec;
  fs::remove_all(root, ec);
  if (ec) {
    make_tree_writable(root);
    fs::remove_all(root, ec);
    if (ec) throw IoError("cannot remove " + root.string() + ": " + ec.message());
  }
}

// Disk footprint in allocated bytes (st_blocks), directories included.
inline uint64_t tree_disk_usage(const fs::path& root) {
  uint64_t total = 0;
  auto add = [&](const fs::path& p) {
    struct stat st{};
    if (::lstat(p.c_str(), &st) == 0)
      total += static_cast<uint64_t>(st.st_blocks) * 512u;
  };
  add(root);
  for (auto it = fs::recursive_directory_iterator(root);
       it != fs::recursive_directory_iterator(); ++it)
    add(it->path());
  return total;
}

// ---------------------------------------------------------------------------
// Timestamps (RFC 3339, UTC, second granularity)
// ---------------------------------------------------------------------------

inline std::string rfc3339_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline bool is_rfc3339_utc(std::string_view s) {
  // YYYY-MM-DDThh:mm:ss(.frac)?Z
  if (s.size() < 20 || s.back() != 'Z') return false;
  auto digit = [&](size_t i) { return s[i] >= '0' && s[i] <= '9'; };
  for (size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u, 11u, 12u, 14u, 15u, 17u, 18u})
    if (!digit(i)) return false;
  if (s[4] != '-' || s[7] != '-' || s[10] != 'T' || s[13] != ':' || s[16] != ':')
    return false;
  if (s.size() > 20) {
    if (s[19] != '.') return false;
    if (s.size() == 21) return false;
    for (size_t i = 20; i + 1 < s.size(); ++i)
      if (!digit(i)) return false;
  }
  return true;
}

}  // namespace datapallet
