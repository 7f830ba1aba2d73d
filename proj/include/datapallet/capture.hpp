// Copyright (c) 2026 The datapallet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <poll.h>
#include <sys/inotify.h>
#include <unistd.h>

#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "datapallet/errors.hpp"
#include "datapallet/fsutil.hpp"

namespace datapallet {

// A capture backend answers one question after a node exits: which files did
// the command create under its output root? Both backends must yield the
// same answer; the snapshot walk is the required reference behavior.
class CaptureBackend {
public:
  virtual ~CaptureBackend() = default;
  virtual std::string_view name() const = 0;
  // Called before the node process is spawned. output_root exists and is empty.
  virtual void start(const fs::path& output_root) = 0;
  // Called after the node process has exited. Returns sorted relative paths
  // of every regular file under the output root. Symlinks and other
  // non-regular files are a capture error.
  virtual std::vector<std::string> finish() = 0;
};

// Required backend: one recursive walk of the output root after exit.
class SnapshotCapture : public CaptureBackend {
public:
  std::string_view name() const override { return "staging_snapshot"; }
  void start(const fs::path& output_root) override { root_ = output_root; }
  std::vector<std::string> finish() override {
    return list_tree(root_, /*strict=*/true);
  }

private:
  fs::path root_;
};

// Optional backend: records file creations live through inotify while the
// node runs, the desk-scale stand-in for intercepting creation calls in the
// filesystem layer. Watches are attached to new directories as they appear
// and each newly watched directory is scanned once to close the attach race.
class InotifyCapture : public CaptureBackend {
public:
  ~InotifyCapture() override { stop_thread(); }

  std::string_view name() const override { return "passthrough_shim"; }

  void start(const fs::path& output_root) override {
    root_ = fs::absolute(output_root);
    fd_ = inotify_init1(IN_CLOEXEC);
    if (fd_ < 0) throw IoError("inotify_init failed");
    if (::pipe(stop_pipe_) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw IoError("pipe failed");
    }
    add_watch_recursive(root_);
    reader_ = std::thread([this] { event_loop(); });
  }

  std::vector<std::string> finish() override {
    stop_thread();
    if (overflowed_)
      throw IoError(
          "passthrough_shim: inotify event queue overflowed; live capture "
          "record is incomplete");
    std::vector<std::string> out;
    std::lock_guard<std::mutex> g(mu_);
    for (const std::string& rel : created_) {
      fs::path p = root_ / fs::path(rel);
      auto st = fs::symlink_status(p);
      if (fs::is_symlink(st))
        throw ValidationError("symlink not allowed in output tree: " + rel);
      if (!fs::exists(st)) continue;  // created then removed before exit
      if (fs::is_directory(st)) continue;
      if (!fs::is_regular_file(st))
        throw ValidationError("non-regular file not allowed in output tree: " +
                              rel);
      out.push_back(rel);
    }
    return out;  // created_ is an ordered set, already sorted
  }

private:
  void add_watch_recursive(const fs::path& dir) {
    int wd = inotify_add_watch(
        fd_, dir.c_str(),
        IN_CREATE | IN_MOVED_TO | IN_MOVED_FROM | IN_DELETE | IN_CLOSE_WRITE);
    if (wd < 0) return;  // directory vanished between event and watch
    std::string rel =
        dir == root_ ? std::string() : fs::relative(dir, root_).generic_string();
    {
      std::lock_guard<std::mutex> g(mu_);
      watches_[wd] = rel;
    }
    // Entries created between the directory's creation event and this watch
    // would otherwise go unseen.
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(dir, ec)) {
      std::string child_rel =
          rel.empty() ? e.path().filename().generic_string()
                      : rel + "/" + e.path().filename().generic_string();
      record_created(child_rel);
      if (e.is_directory() && !e.is_symlink())
        add_watch_recursive(e.path());
    }
  }

  void record_created(const std::string& rel) {
    std::lock_guard<std::mutex> g(mu_);
    created_.insert(rel);
  }

  void record_removed(const std::string& rel) {
    std::lock_guard<std::mutex> g(mu_);
    created_.erase(rel);
  }

  void event_loop() {
    alignas(inotify_event) char buf[64 * 1024];
    bool stopping = false;
    for (;;) {
      pollfd fds[2] = {{fd_, POLLIN, 0}, {stop_pipe_[0], POLLIN, 0}};
      int timeout_ms = stopping ? 0 : -1;
      int n = ::poll(fds, 2, timeout_ms);
      if (n < 0) {
        if (errno == EINTR) continue;
        return;
      }
      if (!stopping && (fds[1].revents & POLLIN)) stopping = true;
      if (fds[0].revents & POLLIN) {
        ssize_t len = ::read(fd_, buf, sizeof(buf));
        for (ssize_t off = 0; off < len;) {
          auto* ev = reinterpret_cast<inotify_event*>(buf + off);
          handle_event(*ev);
          off += static_cast<ssize_t>(sizeof(inotify_event)) + ev->len;
        }
      } else if (stopping) {
        return;  // queue drained after stop request
      }
    }
  }

  void handle_event(const inotify_event& ev) {
    if (ev.mask & IN_Q_OVERFLOW) {
      overflowed_ = true;
      return;
    }
    if (ev.len == 0) return;
    std::string dir_rel;
    {
      std::lock_guard<std::mutex> g(mu_);
      auto it = watches_.find(ev.wd);
      if (it == watches_.end()) return;
      dir_rel = it->second;
    }
    std::string name(ev.name);
    std::string rel = dir_rel.empty() ? name : dir_rel + "/" + name;
    if (ev.mask & (IN_CREATE | IN_MOVED_TO | IN_CLOSE_WRITE)) {
      record_created(rel);
      if (ev.mask & IN_ISDIR) add_watch_recursive(root_ / fs::path(rel));
    }
    if (ev.mask & (IN_DELETE | IN_MOVED_FROM)) record_removed(rel);
  }

  void stop_thread() {
    if (reader_.joinable()) {
      char b = 'x';
      [[maybe_unused]] ssize_t n = ::write(stop_pipe_[1], &b, 1);
      reader_.join();
    }
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
    for (int& p : stop_pipe_) {
      if (p >= 0) {
        ::close(p);
        p = -1;
      }
    }
  }

  fs::path root_;
  int fd_ = -1;
  int stop_pipe_[2] = {-1, -1};
  std::thread reader_;
  std::mutex mu_;
  std::map<int, std::string> watches_;   // wd -> dir path relative to root
  std::set<std::string> created_;        // rel paths seen created, still live
  bool overflowed_ = false;
};

inline std::unique_ptr<CaptureBackend> make_capture_backend(
    std::string_view name) {
  if (name == "staging_snapshot") return std::make_unique<SnapshotCapture>();
  if (name == "passthrough_shim") return std::make_unique<InotifyCapture>();
  throw ValidationError("unknown capture backend: \"" + std::string(name) +
                        "\" (expected staging_snapshot or passthrough_shim)");
}

}  // namespace datapallet
