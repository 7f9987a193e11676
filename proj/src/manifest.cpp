#include "mtse/manifest.hpp"

#include <cstdio>
#include <ctime>
#include <fstream>

#include <json.hpp>

#include "mtse/errors.hpp"

namespace mtse {

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checksum: cannot open: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string checksum_hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

std::string iso8601_utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

RunManifest::RunManifest(std::string command, std::string config_json)
    : command_(std::move(command)),
      config_json_(std::move(config_json)),
      started_at_(iso8601_utc_now()) {}

void RunManifest::add_input(const std::string& path) { inputs_.push_back(path); }
void RunManifest::add_output(const std::string& path) { outputs_.push_back(path); }
void RunManifest::set_extra(const std::string& json_text) { extra_json_ = json_text; }

void RunManifest::write(const std::string& path) const {
  using nlohmann::json;
  json j;
  j["command"] = command_;
  json cfg = json::parse(config_json_, nullptr, false);
  j["config"] = cfg.is_discarded() ? json::object() : cfg;
  auto files = [](const std::vector<std::string>& paths) {
    json arr = json::array();
    for (const std::string& p : paths)
      arr.push_back({{"path", p}, {"checksum", checksum_hex(fnv1a_file(p))}});
    return arr;
  };
  j["inputs"] = files(inputs_);
  j["outputs"] = files(outputs_);
  j["started_at"] = started_at_;
  j["finished_at"] = iso8601_utc_now();
  json extra = json::parse(extra_json_, nullptr, false);
  j["extra"] = extra.is_discarded() ? json::object() : extra;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("manifest: cannot open for writing: " + path);
  out << j.dump(2) << "\n";
}

DirLock::DirLock(const std::string& dir) : path_(dir + "/.mtse.lock") {
  std::ifstream probe(path_);
  if (probe.good())
    throw ConfigError("output directory is locked by another run: " + path_);
  std::ofstream out(path_, std::ios::trunc);
  if (!out) throw DataError("cannot create lock file: " + path_);
  out << "mtse\n";
}

DirLock::~DirLock() { std::remove(path_.c_str()); }

}  // namespace mtse
