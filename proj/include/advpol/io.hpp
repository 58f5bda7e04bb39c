#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "advpol/digest.hpp"
#include "advpol/errors.hpp"

#ifndef ADVPOL_VERSION
#define ADVPOL_VERSION "0.1.0"
#endif

namespace advpol::io {

/// Shortest decimal text that round-trips to the same double.
inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string num(std::size_t v) { return std::to_string(v); }

/// Quotes a CSV field when it contains a separator, quote or newline.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string csv() const {
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << csv_field(r[i]);
      os << '\n';
    };
    line(header);
    for (const auto& r : rows) {
      if (r.size() != header.size()) throw ConfigError("CSV row width does not match header");
      line(r);
    }
    return os.str();
  }
};

/// Minimal CSV reader for files written by Table::csv().
inline Table parse_csv(const std::string& text) {
  Table t;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool first = true;
  auto end_row = [&] {
    row.push_back(field);
    field.clear();
    if (first) {
      t.header = row;
      first = false;
    } else {
      t.rows.push_back(row);
    }
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(field);
      field.clear();
    } else if (c == '\n') {
      end_row();
    } else {
      field += c;
    }
  }
  if (!field.empty() || !row.empty()) end_row();
  return t;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct ArtifactRecord {
  std::string path;  // relative to the run directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

/// Provenance record for one CLI run.
struct RunManifest {
  std::string command;
  std::string code_version = ADVPOL_VERSION;
  std::string config_digest;
  nlohmann::json config;
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::map<std::string, std::uint64_t> seed_schedule;
  std::vector<ArtifactRecord> artifacts;

  nlohmann::json to_json() const {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& r : artifacts) a.push_back({{"path", r.path}, {"sha256", r.sha256}, {"bytes", r.bytes}});
    return {{"format", "advpol-manifest"},
            {"version", 1},
            {"command", command},
            {"code_version", code_version},
            {"config_digest", config_digest},
            {"config", config},
            {"seed", seed},
            {"deterministic", deterministic},
            {"seed_schedule", seed_schedule},
            {"artifacts", a}};
  }
};

/// Writes every output of a run below one directory and records it in the
/// manifest, so nothing is produced without a digest.
class ArtifactSink {
 public:
  ArtifactSink(std::filesystem::path root, RunManifest& manifest) : root_(std::move(root)), manifest_(manifest) {
    std::filesystem::create_directories(root_);
  }

  const std::filesystem::path& root() const noexcept { return root_; }

  std::filesystem::path write_text(const std::string& rel, const std::string& content) {
    return write_with(rel, [&](std::ostream& os) { os << content; });
  }

  std::filesystem::path write_json(const std::string& rel, const nlohmann::json& j) {
    return write_text(rel, j.dump(2) + "\n");
  }

  std::filesystem::path write_with(const std::string& rel, const std::function<void(std::ostream&)>& fn) {
    const auto p = root_ / rel;
    std::filesystem::create_directories(p.parent_path());
    {
      std::ofstream f(p, std::ios::binary);
      if (!f) throw ConfigError("cannot write " + p.string());
      fn(f);
      if (!f) throw ConfigError("failed writing " + p.string());
    }
    record(rel);
    return p;
  }

  /// Records a file that some other routine wrote below root.
  void record(const std::string& rel) {
    const auto p = root_ / rel;
    ArtifactRecord r{rel, sha256_file(p), std::filesystem::file_size(p)};
    auto it = std::find_if(manifest_.artifacts.begin(), manifest_.artifacts.end(),
                           [&](const ArtifactRecord& a) { return a.path == rel; });
    if (it != manifest_.artifacts.end())
      *it = r;
    else
      manifest_.artifacts.push_back(r);
  }

  void finish() {
    std::ofstream f(root_ / "manifest.json");
    f << manifest_.to_json().dump(2) << '\n';
  }

 private:
  std::filesystem::path root_;
  RunManifest& manifest_;
};

}  // namespace advpol::io
