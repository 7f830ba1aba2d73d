// Copyright (c) 2026 The datapallet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared test plumbing: temp dirs, an independent directory-walk oracle,
// a seeded random file-set generator, and a subprocess runner for CLI tests.
//
// The oracle deliberately uses raw POSIX dirent/stat rather than the
// library's own filesystem helpers, so tests compare the library against an
// implementation it shares no code with.

#pragma once

#include <dirent.h>
#include <fcntl.h>
#include <poll.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "datapallet/fsutil.hpp"
#include "datapallet/sha256.hpp"

extern char** environ;

namespace testutil {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// TempDir — self-cleaning scratch directory
// ---------------------------------------------------------------------------

class TempDir {
public:
  explicit TempDir(const std::string& tag = "dptest") {
    std::string tmpl =
        (fs::temp_directory_path() / (tag + "-XXXXXX")).string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (::mkdtemp(buf.data()) == nullptr)
      throw std::runtime_error("mkdtemp failed for " + tmpl);
    path_ = fs::path(buf.data());
    // Node processes run unprivileged and must be able to traverse into
    // workspaces rooted here; mkdtemp's 0700 would shut them out.
    ::chmod(path_.c_str(), 0755);
  }

  ~TempDir() {
    std::error_code ec;
    // Tests leave read-only trees behind; make everything writable first.
    for (auto it = fs::recursive_directory_iterator(
             path_, fs::directory_options::skip_permission_denied, ec);
         it != fs::recursive_directory_iterator(); it.increment(ec)) {
      ::chmod(it->path().c_str(), it->is_directory(ec) ? 0755 : 0644);
    }
    fs::remove_all(path_, ec);
  }

  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
  fs::path path_;
};

// ---------------------------------------------------------------------------
// Independent tree walker (the oracle)
// ---------------------------------------------------------------------------

struct OracleEntry {
  std::string content;
  uint32_t mode = 0;  // permission bits only

  friend bool operator==(const OracleEntry&, const OracleEntry&) = default;
};

// rel path -> {content, mode}, regular files only, via raw POSIX calls.
inline std::map<std::string, OracleEntry> walk_tree_oracle(
    const fs::path& root) {
  std::map<std::string, OracleEntry> out;
  std::vector<std::string> stack{""};
  while (!stack.empty()) {
    std::string rel = stack.back();
    stack.pop_back();
    fs::path dir = rel.empty() ? root : root / rel;
    DIR* d = ::opendir(dir.c_str());
    if (d == nullptr)
      throw std::runtime_error("oracle opendir failed: " + dir.string());
    while (struct dirent* ent = ::readdir(d)) {
      std::string name = ent->d_name;
      if (name == "." || name == "..") continue;
      std::string child_rel = rel.empty() ? name : rel + "/" + name;
      fs::path child = root / child_rel;
      struct stat st{};
      if (::lstat(child.c_str(), &st) != 0) {
        ::closedir(d);
        throw std::runtime_error("oracle lstat failed: " + child.string());
      }
      if (S_ISDIR(st.st_mode)) {
        stack.push_back(child_rel);
      } else if (S_ISREG(st.st_mode)) {
        std::string content;
        int fd = ::open(child.c_str(), O_RDONLY);
        if (fd < 0) {
          ::closedir(d);
          throw std::runtime_error("oracle open failed: " + child.string());
        }
        char buf[65536];
        ssize_t n;
        while ((n = ::read(fd, buf, sizeof(buf))) > 0)
          content.append(buf, static_cast<size_t>(n));
        ::close(fd);
        out[child_rel] = {std::move(content),
                          static_cast<uint32_t>(st.st_mode) & 07777u};
      }
      // other types intentionally ignored; tests assert on them separately
    }
    ::closedir(d);
  }
  return out;
}

// SHA-256 over the oracle view of a tree: stable fingerprint for
// before/after comparisons.
inline std::string tree_fingerprint(const fs::path& root) {
  datapallet::Sha256 h;
  for (const auto& [rel, e] : walk_tree_oracle(root)) {
    h.update(rel);
    h.update("\0", 1);
    h.update(std::to_string(e.mode));
    h.update("\0", 1);
    h.update(e.content);
    h.update("\0", 1);
  }
  return datapallet::to_hex(h.finish());
}

// ---------------------------------------------------------------------------
// Random file sets
// ---------------------------------------------------------------------------

using FileSet = std::map<std::string, OracleEntry>;

// Random relative paths up to 3 levels deep, unique by construction, with
// random binary content and a mix of modes.
inline FileSet random_file_set(std::mt19937_64& rng, size_t max_files,
                               size_t max_total_bytes) {
  auto rand_int = [&](size_t lo, size_t hi) {
    return lo + static_cast<size_t>(rng() % (hi - lo + 1));
  };
  auto rand_name = [&](size_t serial) {
    static const char* kStems[] = {"data", "plot", "mesh", "log",
                                   "out",  "run",  "chk",  "field"};
    return std::string(kStems[rng() % 8]) + "_" + std::to_string(serial);
  };

  FileSet files;
  size_t count = rand_int(0, max_files);
  size_t budget = max_total_bytes;
  for (size_t i = 0; i < count; ++i) {
    std::string path = rand_name(i);
    size_t depth = rng() % 3;
    for (size_t d = 0; d < depth; ++d)
      path = rand_name(i * 7 + d + 100) + "/" + path;

    size_t size = rand_int(0, std::min<size_t>(budget, 32 * 1024));
    budget -= size;
    std::string content(size, '\0');
    for (char& c : content) c = static_cast<char>(rng() & 0xff);

    static const uint32_t kModes[] = {0644, 0600, 0755, 0444};
    files[path] = {std::move(content), kModes[rng() % 4]};
    if (budget == 0) break;
  }
  return files;
}

inline void write_file_set(const fs::path& root, const FileSet& files) {
  for (const auto& [rel, e] : files) {
    fs::path target = root / rel;
    fs::create_directories(target.parent_path());
    datapallet::write_file(target, e.content);
    ::chmod(target.c_str(), e.mode);
  }
}

// ---------------------------------------------------------------------------
// CLI subprocess runner
// ---------------------------------------------------------------------------

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs an executable with args and extra environment entries ("K=V"),
// capturing stdout/stderr separately.
inline CliResult run_process(const std::string& exe,
                             const std::vector<std::string>& args,
                             const std::vector<std::string>& extra_env = {},
                             const std::string& cwd = "") {
  int out_pipe[2], err_pipe[2];
  if (::pipe(out_pipe) != 0 || ::pipe(err_pipe) != 0)
    throw std::runtime_error("pipe failed");

  std::vector<std::string> argv_store;
  argv_store.push_back(exe);
  for (const std::string& a : args) argv_store.push_back(a);
  std::vector<char*> argv;
  for (std::string& s : argv_store) argv.push_back(s.data());
  argv.push_back(nullptr);

  std::vector<std::string> env_store;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e)
    env_store.push_back(*e);
  for (const std::string& kv : extra_env) env_store.push_back(kv);
  std::vector<char*> envp;
  for (std::string& s : env_store) envp.push_back(s.data());
  envp.push_back(nullptr);

  pid_t pid = ::fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::dup2(err_pipe[1], STDERR_FILENO);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    ::close(err_pipe[0]);
    ::close(err_pipe[1]);
    if (!cwd.empty() && ::chdir(cwd.c_str()) != 0) _exit(124);
    ::execve(exe.c_str(), argv.data(), envp.data());
    _exit(127);
  }
  ::close(out_pipe[1]);
  ::close(err_pipe[1]);

  CliResult r;
  struct pollfd fds[2] = {{out_pipe[0], POLLIN, 0}, {err_pipe[0], POLLIN, 0}};
  bool open_fds[2] = {true, true};
  std::string* sinks[2] = {&r.out, &r.err};
  while (open_fds[0] || open_fds[1]) {
    for (int i = 0; i < 2; ++i) fds[i].events = open_fds[i] ? POLLIN : 0;
    if (::poll(fds, 2, -1) < 0) break;
    for (int i = 0; i < 2; ++i) {
      if (!open_fds[i] || (fds[i].revents & (POLLIN | POLLHUP)) == 0) continue;
      char buf[65536];
      ssize_t n = ::read(fds[i].fd, buf, sizeof(buf));
      if (n > 0) {
        sinks[i]->append(buf, static_cast<size_t>(n));
      } else {
        ::close(fds[i].fd);
        open_fds[i] = false;
      }
    }
  }

  int status = 0;
  ::waitpid(pid, &status, 0);
  if (WIFEXITED(status))
    r.exit_code = WEXITSTATUS(status);
  else if (WIFSIGNALED(status))
    r.exit_code = 128 + WTERMSIG(status);
  return r;
}

#ifdef DATAPALLET_CLI
inline CliResult run_cli(const std::vector<std::string>& args,
                         const std::vector<std::string>& extra_env = {},
                         const std::string& cwd = "") {
  return run_process(DATAPALLET_CLI, args, extra_env, cwd);
}
#endif

// First line of a string, without the trailing newline.
inline std::string first_line(const std::string& s) {
  size_t nl = s.find('\n');
  return nl == std::string::npos ? s : s.substr(0, nl);
}

}  // namespace testutil
