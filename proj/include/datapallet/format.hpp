// Copyright (c) 2026 The datapallet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pallet image file layout (all integers little-endian):
//
//   offset 0   8 bytes   magic "DPALLET\0"
//   offset 8   u32       format_version (1)
//   offset 12  u32       partition_count
//   offset 16  32 bytes  pallet id (zeroed while hashing)
//   offset 48  52 bytes  per partition: u32 kind, u64 offset, u64 length,
//                        32-byte SHA-256 of the partition bytes
//   then the partition payloads at their recorded offsets.
//
// The pallet id is the SHA-256 of the header (id field zeroed) followed by
// every partition's bytes in table order. Payloads are laid out contiguously
// in table order, so the id is equivalently the hash of the whole file with
// the id field zeroed.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "datapallet/annotation.hpp"
#include "datapallet/archive.hpp"
#include "datapallet/errors.hpp"
#include "datapallet/fsutil.hpp"
#include "datapallet/pallet_id.hpp"
#include "datapallet/sha256.hpp"

namespace datapallet {

constexpr char kPalletMagic[8] = {'D', 'P', 'A', 'L', 'L', 'E', 'T', '\0'};
constexpr uint32_t kPalletFormatVersion = 1;
constexpr size_t kHeaderBaseSize = 48;
constexpr size_t kDescriptorSize = 52;
constexpr size_t kIdFieldOffset = 16;

inline constexpr size_t header_size(size_t partition_count) {
  return kHeaderBaseSize + kDescriptorSize * partition_count;
}

enum class PartitionKind : uint32_t {
  data_archive = 1,
  annotations = 2,
  meta = 3,
};

inline std::string to_string(PartitionKind k) {
  switch (k) {
    case PartitionKind::data_archive: return "data_archive";
    case PartitionKind::annotations: return "annotations";
    case PartitionKind::meta: return "meta";
  }
  return "unknown(" + std::to_string(static_cast<uint32_t>(k)) + ")";
}

struct PartitionDescriptor {
  PartitionKind kind = PartitionKind::data_archive;
  uint64_t offset = 0;
  uint64_t length = 0;
  Digest digest{};
};

struct PalletHeader {
  uint32_t format_version = kPalletFormatVersion;
  PalletId id;
  std::vector<PartitionDescriptor> partitions;
};

namespace detail {

inline std::string serialize_header(const PalletHeader& h, bool zero_id) {
  std::string out;
  out.append(kPalletMagic, sizeof(kPalletMagic));
  put_u32le(out, h.format_version);
  put_u32le(out, static_cast<uint32_t>(h.partitions.size()));
  if (zero_id || h.id.empty()) {
    out.append(32, '\0');
  } else {
    Digest d = h.id.digest();
    out.append(reinterpret_cast<const char*>(d.data()), d.size());
  }
  for (const PartitionDescriptor& p : h.partitions) {
    put_u32le(out, static_cast<uint32_t>(p.kind));
    put_u64le(out, p.offset);
    put_u64le(out, p.length);
    out.append(reinterpret_cast<const char*>(p.digest.data()), p.digest.size());
  }
  return out;
}

// Whole-image id: hash of the file bytes with the id field zeroed.
inline PalletId compute_image_id(std::string_view file_bytes) {
  Sha256 h;
  h.update(file_bytes.substr(0, kIdFieldOffset));
  static const char kZeros[32] = {};
  h.update(kZeros, sizeof(kZeros));
  h.update(file_bytes.substr(kIdFieldOffset + 32));
  return PalletId::from_digest(h.finish());
}

}  // namespace detail

class PalletImage;
class StagingPallet;
PalletImage seal(StagingPallet& staging, const ProvenanceAnnotation& annotation,
                 const fs::path& out_path);

// ---------------------------------------------------------------------------
// StagingPallet — the mutable pre-seal workspace. It has no identity; a
// PalletId exists only once the content is frozen by seal().
// ---------------------------------------------------------------------------
class StagingPallet {
public:
  // Fresh, uniquely named staging root under parent_dir.
  static StagingPallet create(const fs::path& parent_dir, bool deterministic) {
    if (!fs::exists(parent_dir) || !fs::is_directory(parent_dir))
      throw IoError("staging parent is not a directory: " +
                    parent_dir.string());
    StagingPallet s;
    s.root_ = make_unique_dir(parent_dir, "staging-");
    s.deterministic_ = deterministic;
    return s;
  }

  // Wrap an existing directory (the runner's output root) without copying.
  // Files must be registered afterwards via register_existing().
  static StagingPallet adopt(const fs::path& existing_dir, bool deterministic) {
    if (!fs::exists(existing_dir) || !fs::is_directory(existing_dir))
      throw IoError("cannot adopt non-directory as staging root: " +
                    existing_dir.string());
    StagingPallet s;
    s.root_ = fs::absolute(existing_dir);
    s.deterministic_ = deterministic;
    return s;
  }

  const fs::path& root() const { return root_; }
  bool deterministic() const { return deterministic_; }
  bool consumed() const { return consumed_; }

  void add_file(std::string_view rel_path, std::string_view content,
                uint32_t mode = 0644) {
    require_open();
    require_safe_rel_path(rel_path);
    std::string key(rel_path);
    if (pending_.count(key) > 0)
      warnings_.push_back("overwrote previously staged path: " + key);
    fs::path target = root_ / fs::path(key);
    fs::create_directories(target.parent_path());
    write_file(target, content);
    set_file_mode(target, mode & 07777u);
    pending_[key] = mode & 07777u;
  }

  // Record a file that already exists under the staging root (capture path).
  void register_existing(std::string_view rel_path) {
    require_open();
    require_safe_rel_path(rel_path);
    std::string key(rel_path);
    fs::path target = root_ / fs::path(key);
    if (!fs::is_regular_file(fs::symlink_status(target)))
      throw IoError("cannot register non-regular or missing file: " + key);
    pending_[key] = file_mode_bits(target);
  }

  // Stage an on-disk file or directory tree. For a directory every regular
  // file below it is staged under its relative path; symlinks are rejected.
  void add_tree(const fs::path& source, const std::string& prefix = "") {
    require_open();
    if (fs::is_regular_file(fs::symlink_status(source))) {
      std::string rel = prefix.empty() ? source.filename().generic_string()
                                       : prefix;
      add_file(rel, read_file(source), file_mode_bits(source));
      return;
    }
    if (!fs::is_directory(source))
      throw IoError("cannot stage non-regular path: " + source.string());
    for (const std::string& rel : list_tree(source, /*strict=*/true)) {
      std::string key = prefix.empty() ? rel : prefix + "/" + rel;
      add_file(key, read_file(source / rel), file_mode_bits(source / rel));
    }
  }

  // Pending relative paths in sorted order.
  std::vector<std::string> pending() const {
    std::vector<std::string> out;
    out.reserve(pending_.size());
    for (const auto& [path, mode] : pending_) out.push_back(path);
    return out;
  }

  size_t pending_count() const { return pending_.size(); }
  const std::vector<std::string>& warnings() const { return warnings_; }

private:
  friend PalletImage seal(StagingPallet&, const ProvenanceAnnotation&,
                          const fs::path&);

  void require_open() const {
    if (consumed_)
      throw ValidationError("staging pallet already sealed; create a new one");
  }

  std::vector<ArchiveEntry> collect_entries() const {
    std::vector<ArchiveEntry> entries;
    entries.reserve(pending_.size());
    for (const auto& [path, mode] : pending_) {  // map iteration is sorted
      ArchiveEntry e;
      e.path = path;
      e.mode = mode;
      e.content = read_file(root_ / fs::path(path));
      entries.push_back(std::move(e));
    }
    return entries;
  }

  fs::path root_;
  std::map<std::string, uint32_t> pending_;  // rel path -> mode bits
  std::vector<std::string> warnings_;
  bool deterministic_ = false;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// PalletImage — a sealed, immutable image on disk. Opening parses the header
// and partition table; payload bytes are read on demand.
// ---------------------------------------------------------------------------
class PalletImage {
public:
  static PalletImage open(const fs::path& path) {
    if (!fs::exists(path))
      throw NotFoundError("no such pallet image: " + path.string());
    uint64_t file_size = fs::file_size(path);
    if (file_size < kHeaderBaseSize)
      throw FormatError("file too small to hold a pallet header: " +
                        path.string());
    std::string head = read_file_range(path, 0, kHeaderBaseSize);
    if (std::string_view(head.data(), 8) !=
        std::string_view(kPalletMagic, 8))
      throw FormatError("bad magic: not a pallet image: " + path.string());
    PalletHeader h;
    h.format_version = get_u32le(head, 8);
    if (h.format_version != kPalletFormatVersion)
      throw FormatError("unsupported format_version " +
                        std::to_string(h.format_version));
    uint32_t count = get_u32le(head, 12);
    if (count == 0)
      throw FormatError("partition_count is zero");
    if (header_size(count) > file_size)
      throw FormatError("partition table truncated: " + std::to_string(count) +
                        " partitions do not fit in " +
                        std::to_string(file_size) + " bytes");
    Digest id{};
    std::copy_n(head.begin() + kIdFieldOffset, 32,
                reinterpret_cast<char*>(id.data()));
    h.id = PalletId::from_digest(id);

    std::string table =
        read_file_range(path, kHeaderBaseSize, kDescriptorSize * count);
    uint64_t prev_end = header_size(count);
    bool seen_archive = false, seen_annotations = false;
    for (uint32_t i = 0; i < count; ++i) {
      size_t base = kDescriptorSize * i;
      PartitionDescriptor p;
      uint32_t kind = get_u32le(table, base);
      if (kind < 1 || kind > 3)
        throw FormatError("unknown partition kind " + std::to_string(kind));
      p.kind = static_cast<PartitionKind>(kind);
      p.offset = get_u64le(table, base + 4);
      p.length = get_u64le(table, base + 12);
      std::copy_n(table.begin() + static_cast<ptrdiff_t>(base + 20), 32,
                  reinterpret_cast<char*>(p.digest.data()));
      if (p.offset < prev_end)
        throw FormatError(
            "partitions overlap or are out of ascending order at index " +
            std::to_string(i));
      if (p.offset > file_size || p.length > file_size - p.offset)
        throw FormatError("partition " + std::to_string(i) +
                          " extends past end of file");
      prev_end = p.offset + p.length;
      if (p.kind == PartitionKind::data_archive) {
        if (seen_archive)
          throw FormatError("image has more than one data_archive partition");
        seen_archive = true;
      }
      if (p.kind == PartitionKind::annotations) {
        if (seen_annotations)
          throw FormatError("image has more than one annotations partition");
        seen_annotations = true;
      }
      h.partitions.push_back(p);
    }
    if (!seen_archive)
      throw FormatError("image has no data_archive partition");
    if (!seen_annotations)
      throw FormatError("image has no annotations partition");

    PalletImage img;
    img.path_ = fs::absolute(path);
    img.header_ = std::move(h);
    img.file_size_ = file_size;
    return img;
  }

  const PalletHeader& header() const { return header_; }
  const PalletId& id() const { return header_.id; }
  const fs::path& path() const { return path_; }
  uint64_t file_size() const { return file_size_; }

  const PartitionDescriptor* find_partition(PartitionKind kind) const {
    for (const PartitionDescriptor& p : header_.partitions)
      if (p.kind == kind) return &p;
    return nullptr;
  }

  std::string read_partition(PartitionKind kind) const {
    const PartitionDescriptor* p = find_partition(kind);
    if (p == nullptr)
      throw NotFoundError("image has no " + to_string(kind) + " partition: " +
                          path_.string());
    return read_file_range(path_, p->offset, p->length);
  }

  ProvenanceAnnotation annotation() const {
    return decode_annotation(read_partition(PartitionKind::annotations));
  }

  std::vector<ArchiveEntry> entries() const {
    return decode_archive(read_partition(PartitionKind::data_archive));
  }

private:
  fs::path path_;
  PalletHeader header_;
  uint64_t file_size_ = 0;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

inline StagingPallet create_staging(const fs::path& parent_dir,
                                    bool deterministic) {
  return StagingPallet::create(parent_dir, deterministic);
}

// Freezes the staged content into an immutable image. The staging pallet is
// consumed. Writes go to a temp file first; a failed seal leaves nothing
// behind at out_path.
inline PalletImage seal(StagingPallet& staging,
                        const ProvenanceAnnotation& annotation,
                        const fs::path& out_path) {
  staging.require_open();
  annotation.validate();
  if (staging.deterministic() && annotation.created_at.has_value())
    throw ValidationError(
        "deterministic staging requires an annotation without created_at");

  std::string archive_bytes = encode_archive(staging.collect_entries());
  std::string annotation_bytes = encode(annotation);

  PalletHeader h;
  h.partitions.resize(2);
  uint64_t payload_base = header_size(2);
  h.partitions[0] = {PartitionKind::data_archive, payload_base,
                     archive_bytes.size(), Sha256::of(archive_bytes)};
  h.partitions[1] = {PartitionKind::annotations,
                     payload_base + archive_bytes.size(),
                     annotation_bytes.size(), Sha256::of(annotation_bytes)};

  std::string image = detail::serialize_header(h, /*zero_id=*/true);
  image += archive_bytes;
  image += annotation_bytes;
  PalletId id = detail::compute_image_id(image);
  Digest d = id.digest();
  std::copy_n(reinterpret_cast<const char*>(d.data()), 32,
              image.begin() + kIdFieldOffset);

  atomic_write_file(out_path, image);
  staging.consumed_ = true;
  return PalletImage::open(out_path);
}

struct VerificationReport {
  bool id_ok = false;
  std::vector<std::pair<PartitionKind, bool>> partitions_ok;

  bool all_ok() const {
    if (!id_ok) return false;
    for (const auto& [kind, ok] : partitions_ok)
      if (!ok) return false;
    return true;
  }
};

// Recomputes every partition digest and the whole-image id. Mismatches are
// reported, never thrown.
inline VerificationReport verify(const PalletImage& image) {
  VerificationReport report;
  std::string bytes = read_file(image.path());
  report.id_ok = bytes.size() >= kHeaderBaseSize &&
                 detail::compute_image_id(bytes) == image.id();
  for (const PartitionDescriptor& p : image.header().partitions) {
    bool ok = p.offset + p.length <= bytes.size() &&
              Sha256::of(std::string_view(bytes).substr(p.offset, p.length)) ==
                  p.digest;
    report.partitions_ok.emplace_back(p.kind, ok);
  }
  return report;
}

// Materializes the archive under dest. Refuses tampered images outright.
// Returns extracted relative paths in sorted order.
inline std::vector<std::string> extract(const PalletImage& image,
                                        const fs::path& dest) {
  if (!fs::exists(dest) || !fs::is_directory(dest))
    throw IoError("extract destination is not a directory: " + dest.string());
  VerificationReport report = verify(image);
  if (!report.id_ok)
    throw IntegrityError("refusing to extract: image fails id verification: " +
                         image.path().string());
  std::vector<std::string> done;
  for (const ArchiveEntry& e : image.entries()) {
    try {
      fs::path target = dest / fs::path(e.path);
      fs::create_directories(target.parent_path());
      write_file(target, e.content);
      set_file_mode(target, e.mode);
    } catch (const std::exception& err) {
      std::string partial;
      for (const std::string& p : done) partial += " " + p;
      throw IoError("partial extract of " + image.path().string() +
                    ": failed at \"" + e.path + "\" (" + err.what() +
                    "); completed:" + (partial.empty() ? " none" : partial));
    }
    done.push_back(e.path);
  }
  return done;
}

}  // namespace datapallet
