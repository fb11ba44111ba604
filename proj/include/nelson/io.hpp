#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"

namespace nelson {

namespace fs = std::filesystem;

/// Shortest decimal text that reads back to the same double.
inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

/// CSV table: '#' comment lines (column units), a header row, data rows.
class CsvTable {
 public:
  struct Column {
    std::string name;
    std::string unit;
  };

  CsvTable(std::string title, std::vector<Column> columns) : title_(std::move(title)), columns_(std::move(columns)) {}

  class Row {
   public:
    Row& num(double x) {
      cells_.push_back(format_number(x));
      return *this;
    }
    Row& integer(long long x) {
      cells_.push_back(std::to_string(x));
      return *this;
    }
    Row& text(std::string s) {
      cells_.push_back(std::move(s));
      return *this;
    }

   private:
    friend class CsvTable;
    std::vector<std::string> cells_;
  };

  Row& add_row() { return rows_.emplace_back(); }

  void note(std::string line) { notes_.push_back(std::move(line)); }

  std::string str() const {
    std::string out = "# " + title_ + "\n";
    for (const auto& n : notes_) out += "# " + n + "\n";
    out += "# units:";
    for (const auto& c : columns_) out += " " + c.name + "[" + (c.unit.empty() ? "1" : c.unit) + "]";
    out += "\n";
    for (std::size_t i = 0; i < columns_.size(); ++i) out += (i ? "," : "") + columns_[i].name;
    out += "\n";
    for (const auto& r : rows_) {
      if (r.cells_.size() != columns_.size()) throw std::logic_error("CsvTable: row width mismatch in " + title_);
      for (std::size_t i = 0; i < r.cells_.size(); ++i) out += (i ? "," : "") + quote(r.cells_[i]);
      out += "\n";
    }
    return out;
  }

 private:
  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  }

  std::string title_;
  std::vector<Column> columns_;
  std::vector<std::string> notes_;
  std::vector<Row> rows_;
};

/// Writes to a sibling temporary file and renames it over `path`.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string sha256_hex(const std::string& data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xf];
  }
  return out;
}

/// Creates `dir` and checks a file can be written there.
inline void ensure_writable_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("output directory not usable: " + dir.string());
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw std::runtime_error("output directory not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

inline std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Run record written next to a subcommand's outputs.
class RunManifest {
 public:
  RunManifest(std::string command, std::string config_text, std::string version)
      : start_(std::chrono::system_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["code_version"] = std::move(version);
    doc_["config"] = std::move(config_text);
    doc_["start"] = utc_timestamp(start_);
    doc_["tasks"] = nlohmann::json::array();
    doc_["outputs"] = nlohmann::json::object();
    doc_["status"] = "running";
  }

  void task(const std::string& name, double seconds) {
    doc_["tasks"].push_back({{"name", name}, {"wall_seconds", seconds}});
  }

  /// Writes `content` atomically under `dir` and records its digest.
  void output(const fs::path& dir, const std::string& name, const std::string& content) {
    write_file_atomic(dir / name, content);
    doc_["outputs"][name] = {{"sha256", sha256_hex(content)}, {"bytes", content.size()}};
  }

  void fail(const std::string& kind, const std::string& message) {
    doc_["status"] = "error";
    doc_["error"] = {{"kind", kind}, {"message", message}};
  }

  void set(const std::string& key, nlohmann::json value) { doc_[key] = std::move(value); }

  void finish(const fs::path& dir, bool ok) {
    const auto end = std::chrono::system_clock::now();
    doc_["end"] = utc_timestamp(end);
    doc_["wall_seconds"] = std::chrono::duration<double>(end - start_).count();
    if (doc_["status"] == "running") doc_["status"] = ok ? "ok" : "failed";
    write_file_atomic(dir / "manifest.json", doc_.dump(2) + "\n");
  }

  const nlohmann::json& json() const { return doc_; }

 private:
  std::chrono::system_clock::time_point start_;
  nlohmann::json doc_;
};

}  // namespace nelson
