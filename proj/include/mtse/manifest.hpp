#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mtse {

// FNV-1a 64 over a file's bytes, as a fixed-width hex string.
std::uint64_t fnv1a_file(const std::string& path);
std::string checksum_hex(std::uint64_t v);

std::string iso8601_utc_now();

// Reproducibility record written next to every command's outputs. Timestamps
// live here and only here; all other outputs are byte-stable per seed.
class RunManifest {
 public:
  RunManifest(std::string command, std::string config_json);

  void add_input(const std::string& path);
  void add_output(const std::string& path);
  void set_extra(const std::string& json_text);
  void write(const std::string& path) const;

 private:
  std::string command_;
  std::string config_json_;
  std::string started_at_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
  std::string extra_json_ = "{}";
};

// Exclusive lock file guarding an output directory for the lifetime of a
// command. Creation fails if the lock already exists.
class DirLock {
 public:
  explicit DirLock(const std::string& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
};

}  // namespace mtse
