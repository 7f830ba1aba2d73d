// Copyright (c) 2026 The datapallet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <sys/file.h>

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "datapallet/annotation.hpp"
#include "datapallet/errors.hpp"
#include "datapallet/format.hpp"
#include "datapallet/fsutil.hpp"
#include "datapallet/pallet_id.hpp"

namespace datapallet {

struct HubEntry {
  PalletId id;
  PalletKind kind = PalletKind::data_pallet;
  std::string node_name;
  uint64_t size = 0;  // object file length
  std::string stored_at;

  json to_json() const {
    json j = json::object();
    j["id"] = id.hex();
    j["kind"] = to_string(kind);
    j["node_name"] = node_name;
    j["size"] = size;
    j["stored_at"] = stored_at;
    return j;
  }
};

// Local content-addressed pallet store.
//
// Layout:  root/objects/xx/<id>.pallet   (xx = first two hex chars)
//          root/index.json               (sorted HubEntry rows)
//          root/.lock                    (advisory flock for index updates)
//          root/tmp/                     (inbound temp files, ignored by scans)
//
// Objects land via temp+rename, so a crashed put leaves at most a temp file
// that the next open sweeps away. The index is a cache: it is rebuilt from
// the objects on open whenever it is missing or stale.
class Hub {
public:
  // Creates a hub at root, or opens the one already there. Refuses a
  // non-empty directory that is not a hub.
  static Hub init(const fs::path& root) {
    Hub hub;
    hub.root_ = fs::absolute(root);
    if (fs::exists(hub.root_)) {
      if (!fs::is_directory(hub.root_))
        throw IoError("hub root is not a directory: " + hub.root_.string());
      bool empty = fs::directory_iterator(hub.root_) ==
                   fs::directory_iterator();
      // The index is a rebuildable cache, so its absence must not make an
      // existing hub unrecognizable; the objects directory is the marker.
      bool is_hub = fs::is_directory(hub.root_ / "objects") ||
                    fs::exists(hub.root_ / "index.json");
      if (!empty && !is_hub)
        throw ValidationError(
            "refusing to initialize hub over non-empty foreign directory: " +
            hub.root_.string());
    }
    fs::create_directories(hub.objects_dir());
    fs::create_directories(hub.tmp_dir());
    if (!fs::exists(hub.index_path()))
      atomic_write_file(hub.index_path(), "[]");
    write_file(hub.lock_path(), "");
    hub.sweep_tmp();
    hub.reconcile_index();
    return hub;
  }

  const fs::path& root() const { return root_; }

  fs::path object_path(const PalletId& id) const {
    return objects_dir() / id.prefix(2) / (id.hex() + ".pallet");
  }

  bool contains(const PalletId& id) const {
    return fs::exists(object_path(id));
  }

  // Stores a verified image at its content address. Idempotent: re-putting
  // identical bytes is a no-op. Same id with different bytes means the store
  // or the image is corrupt, and that is fatal.
  PalletId put(const PalletImage& image) {
    VerificationReport report = verify(image);
    if (!report.all_ok())
      throw IntegrityError("refusing to store image that fails verification: " +
                           image.path().string());
    const PalletId& id = image.id();
    std::string bytes = read_file(image.path());
    fs::path target = object_path(id);
    if (fs::exists(target)) {
      if (read_file(target) != bytes)
        throw IntegrityError(
            "id collision with differing bytes (store corruption) for " +
            id.hex());
    } else {
      fs::create_directories(target.parent_path());
      fs::path tmp = tmp_dir() / ("put-" + id.prefix(12) + "-" + unique_suffix());
      write_file(tmp, bytes);
      std::error_code ec;
      fs::rename(tmp, target, ec);
      if (ec) {
        fs::remove(tmp);
        // Lost a race with a concurrent identical put, or genuine IO failure.
        if (!fs::exists(target))
          throw IoError("failed to store object " + id.hex() + ": " +
                        ec.message());
      }
    }
    ProvenanceAnnotation annotation = image.annotation();
    HubEntry entry;
    entry.id = id;
    entry.kind = annotation.kind;
    entry.node_name = annotation.node_name;
    entry.size = fs::file_size(target);
    entry.stored_at = rfc3339_now();
    upsert_entry(entry);
    return id;
  }

  // Opens and verifies the stored object.
  PalletImage get(const PalletId& id) const {
    fs::path p = object_path(id);
    if (!fs::exists(p))
      throw NotFoundError("pallet not in hub: " + id.hex());
    PalletImage image = PalletImage::open(p);
    if (image.id() != id || !verify(image).all_ok())
      throw IntegrityError("stored object is corrupt: " + id.hex());
    return image;
  }

  std::vector<HubEntry> list(std::optional<PalletKind> kind_filter = {}) const {
    std::vector<HubEntry> entries = load_index();
    if (kind_filter.has_value()) {
      std::erase_if(entries, [&](const HubEntry& e) {
        return e.kind != *kind_filter;
      });
    }
    return entries;  // stored sorted by id
  }

private:
  fs::path objects_dir() const { return root_ / "objects"; }
  fs::path tmp_dir() const { return root_ / "tmp"; }
  fs::path index_path() const { return root_ / "index.json"; }
  fs::path lock_path() const { return root_ / ".lock"; }

  // Advisory exclusive lock held for the duration of an index update.
  class IndexLock {
  public:
    explicit IndexLock(const fs::path& p) {
      fd_ = ::open(p.c_str(), O_CREAT | O_RDWR, 0644);
      if (fd_ < 0 || ::flock(fd_, LOCK_EX) != 0)
        throw IoError("cannot lock hub index: " + p.string());
    }
    ~IndexLock() {
      if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
      }
    }
    IndexLock(const IndexLock&) = delete;
    IndexLock& operator=(const IndexLock&) = delete;

  private:
    int fd_ = -1;
  };

  std::vector<HubEntry> load_index() const {
    if (!fs::exists(index_path())) return {};
    json j;
    try {
      j = json::parse(read_file(index_path()));
    } catch (const json::parse_error&) {
      return {};  // stale or damaged index; open() rebuilds it
    }
    std::vector<HubEntry> entries;
    if (!j.is_array()) return entries;
    for (const json& row : j) {
      try {
        HubEntry e;
        e.id = PalletId::from_hex(row.at("id").get<std::string>());
        e.kind = pallet_kind_from_string(row.at("kind").get<std::string>());
        e.node_name = row.at("node_name").get<std::string>();
        e.size = row.at("size").get<uint64_t>();
        e.stored_at = row.at("stored_at").get<std::string>();
        entries.push_back(std::move(e));
      } catch (const std::exception&) {
        continue;
      }
    }
    return entries;
  }

  void save_index(std::vector<HubEntry> entries) const {
    std::sort(entries.begin(), entries.end(),
              [](const HubEntry& a, const HubEntry& b) { return a.id < b.id; });
    json arr = json::array();
    for (const HubEntry& e : entries) arr.push_back(e.to_json());
    atomic_write_file(index_path(), arr.dump());
  }

  void upsert_entry(const HubEntry& entry) const {
    IndexLock lock(lock_path());
    std::vector<HubEntry> entries = load_index();
    for (const HubEntry& e : entries) {
      if (e.id == entry.id) return;  // idempotent re-put
    }
    entries.push_back(entry);
    save_index(std::move(entries));
  }

  void sweep_tmp() const {
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(tmp_dir(), ec))
      fs::remove(e.path(), ec);
  }

  // Bring index.json in line with the objects actually on disk: drop rows
  // whose object vanished, index objects that verify but have no row.
  void reconcile_index() const {
    IndexLock lock(lock_path());
    std::vector<HubEntry> entries = load_index();
    std::erase_if(entries,
                  [&](const HubEntry& e) { return !contains(e.id); });
    std::vector<PalletId> on_disk;
    for (const auto& shard : fs::directory_iterator(objects_dir())) {
      if (!shard.is_directory()) continue;
      for (const auto& obj : fs::directory_iterator(shard.path())) {
        std::string name = obj.path().filename().string();
        if (name.size() != 64 + 7 || !name.ends_with(".pallet")) continue;
        std::string hex = name.substr(0, 64);
        if (!PalletId::looks_like_id(hex)) continue;
        on_disk.push_back(PalletId::from_hex(hex));
      }
    }
    for (const PalletId& id : on_disk) {
      bool indexed = std::any_of(
          entries.begin(), entries.end(),
          [&](const HubEntry& e) { return e.id == id; });
      if (indexed) continue;
      try {
        PalletImage image = get(id);
        ProvenanceAnnotation annotation = image.annotation();
        HubEntry e;
        e.id = id;
        e.kind = annotation.kind;
        e.node_name = annotation.node_name;
        e.size = image.file_size();
        e.stored_at = rfc3339_now();
        entries.push_back(std::move(e));
      } catch (const Error&) {
        continue;  // corrupt stray object: leave it out of the index
      }
    }
    save_index(std::move(entries));
  }

  fs::path root_;
};

}  // namespace datapallet
