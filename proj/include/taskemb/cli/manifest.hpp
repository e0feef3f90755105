#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "taskemb/numcore/error.hpp"
#include "taskemb/numcore/text.hpp"

// manifest.txt in the run directory:
//
//   taskemb-manifest 1
//   config_hash <hex>
//   config <path>
//   stage <name>
//   config_hash <hex>
//   seconds <s>
//   input <path> <hex>
//   output <path> <hex>
//   end
//
// Paths inside the run directory are stored relative to it.
namespace taskemb {

/// Upstream artifact changed or was produced under a different config.
class StaleError : public Error {
 public:
  using Error::Error;
};

struct FileRecord {
  std::string path;
  std::string hash;

  friend bool operator==(const FileRecord&, const FileRecord&) = default;
};

struct StageRecord {
  std::string name;
  std::string config_hash;
  double seconds = 0.0;
  std::vector<FileRecord> inputs;
  std::vector<FileRecord> outputs;
};

struct Manifest {
  std::string config_hash;
  std::string config_path;
  std::vector<StageRecord> stages;

  const StageRecord* find(const std::string& name) const {
    for (const auto& s : stages)
      if (s.name == name) return &s;
    return nullptr;
  }

  void put(StageRecord rec) {
    for (auto& s : stages)
      if (s.name == rec.name) {
        s = std::move(rec);
        return;
      }
    stages.push_back(std::move(rec));
  }

  /// The stage whose outputs include `path`, if any.
  const StageRecord* producer(const std::string& path) const {
    for (const auto& s : stages)
      for (const auto& o : s.outputs)
        if (o.path == path) return &s;
    return nullptr;
  }
};

inline std::string hash_file(const std::string& path) { return hex64(fnv1a64(read_file(path))); }

inline std::string write_manifest(const Manifest& m) {
  std::ostringstream os;
  os << "taskemb-manifest 1\n";
  os << "config_hash " << m.config_hash << '\n';
  os << "config " << m.config_path << '\n';
  for (const auto& s : m.stages) {
    os << "stage " << s.name << '\n';
    os << "config_hash " << s.config_hash << '\n';
    os << "seconds " << format_double(s.seconds) << '\n';
    for (const auto& f : s.inputs) os << "input " << f.path << ' ' << f.hash << '\n';
    for (const auto& f : s.outputs) os << "output " << f.path << ' ' << f.hash << '\n';
    os << "end\n";
  }
  return os.str();
}

inline Manifest read_manifest(std::string_view text) {
  Manifest m;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  StageRecord* cur = nullptr;
  auto fail = [&](const std::string& msg) { throw ParseError("manifest line " + std::to_string(lineno) + ": " + msg); };
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (lineno == 1) {
      if (line != "taskemb-manifest 1") fail("unsupported manifest header '" + line + "'");
      continue;
    }
    const auto sp = line.find(' ');
    const std::string key = line.substr(0, sp);
    const std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
    if (key == "stage") {
      if (cur) fail("nested stage");
      m.stages.push_back({rest, "", 0.0, {}, {}});
      cur = &m.stages.back();
    } else if (key == "end") {
      if (!cur) fail("'end' outside a stage");
      cur = nullptr;
    } else if (key == "config_hash") {
      (cur ? cur->config_hash : m.config_hash) = rest;
    } else if (key == "config" && !cur) {
      m.config_path = rest;
    } else if (key == "seconds" && cur) {
      cur->seconds = parse_double(rest);
    } else if ((key == "input" || key == "output") && cur) {
      const auto last = rest.rfind(' ');
      if (last == std::string::npos) fail("expected '<path> <hash>'");
      (key == "input" ? cur->inputs : cur->outputs).push_back({rest.substr(0, last), rest.substr(last + 1)});
    } else {
      fail("unexpected entry '" + key + "'");
    }
  }
  if (cur) fail("stage '" + cur->name + "' is not terminated");
  return m;
}

/// Files below `dir`, sorted, as paths relative to `root`.
inline std::vector<std::string> list_files(const std::string& root, const std::string& dir) {
  std::vector<std::string> out;
  const std::filesystem::path base = std::filesystem::path(root) / dir;
  if (!std::filesystem::exists(base)) return out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(base))
    if (e.is_regular_file()) out.push_back(std::filesystem::relative(e.path(), root).generic_string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace taskemb
